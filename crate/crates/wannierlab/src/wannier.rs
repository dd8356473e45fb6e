//! Wannier functions from Bloch frames, decay fits, and the analytic lift.

use crate::error::{Error, Result};
use crate::frame1d::BlochFrame;
use crate::grid::Grid1;
use crate::linalg::{adjoint, cis, eye, op_diff, CMat};
use crate::spectral::{inv_sqrt_psd, ProjectionSampler};
use faer::{c64, Mat};
use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::PI;

/// `w(γ)` for each cell `γ` of a box, stored as `D×N` matrices whose column
/// `j` holds `w_j(ȳ + γ)` over the basis sites `ȳ`.
#[derive(Debug, Clone)]
pub struct WannierSet {
    pub dim: usize,
    pub rank: usize,
    pub grids: Vec<Grid1>,
    pub cells: Vec<Vec<i64>>,
    pub values: Vec<CMat>,
}

/// `e^{−2πi k_j γ}` for the distinct nodes of one axis, computed from the
/// integer phase index so mirrored nodes give exact conjugates.
fn phase_row(g: &Grid1, gamma: i64) -> Vec<c64> {
    let n = g.n as i64;
    let unit: Vec<c64> = (0..n)
        .map(|m| {
            let m2 = m.min(n - m);
            let z = cis(-2.0 * PI * m2 as f64 / n as f64);
            if m2 == m {
                z
            } else {
                z.conj()
            }
        })
        .collect();
    (0..n).map(|j| unit[((j - n / 2) * gamma).rem_euclid(n) as usize]).collect()
}

fn box_cells(d: usize, radius: i64) -> Vec<Vec<i64>> {
    let side: Vec<i64> = (-radius..=radius).collect();
    match d {
        1 => side.iter().map(|&g| vec![g]).collect(),
        _ => side.iter().flat_map(|&a| side.iter().map(move |&b| vec![a, b])).collect(),
    }
}

/// Trapezoid rule on the periodic grid (an exact DFT) for `γ ∈ [−r, r]^d`.
pub fn wannier_transform(frame: &BlochFrame, radius: usize) -> Result<WannierSet> {
    for g in &frame.grids {
        if radius > g.n / 2 {
            return Err(Error::Aliasing { radius, nodes: g.n });
        }
    }
    wannier_transform_cells(frame, box_cells(frame.grids.len(), radius as i64))
}

/// Same quadrature for an explicit list of cells.
pub fn wannier_transform_cells(frame: &BlochFrame, cells: Vec<Vec<i64>>) -> Result<WannierSet> {
    let d = frame.grids.len();
    if cells.iter().any(|c| c.len() != d) {
        return Err(Error::Input(format!("cells must have {d} components")));
    }
    let (dim, rank) = (frame.dim, frame.rank);
    let total: usize = frame.grids.iter().map(|g| g.n).product();
    let norm = 1.0 / total as f64;
    let values = crate::par::map(cells.len(), |c| {
        let rows: Vec<Vec<c64>> = cells[c].iter().zip(&frame.grids).map(|(&g, grid)| phase_row(grid, g)).collect();
        let mut acc = vec![c64::new(0.0, 0.0); dim * rank];
        let mut add = |idx: &[usize], ph: c64| {
            let xi = frame.at(idx);
            for j in 0..rank {
                for i in 0..dim {
                    acc[j * dim + i] += ph * xi[(i, j)];
                }
            }
        };
        if d == 1 {
            for j in 0..frame.grids[0].n {
                add(&[j], rows[0][j]);
            }
        } else {
            for a in 0..frame.grids[0].n {
                for b in 0..frame.grids[1].n {
                    add(&[a, b], rows[0][a] * rows[1][b]);
                }
            }
        }
        Mat::from_fn(dim, rank, |i, j| acc[j * dim + i] * norm)
    });
    Ok(WannierSet { dim, rank, grids: frame.grids.clone(), cells, values })
}

impl WannierSet {
    fn lookup(&self) -> HashMap<&[i64], usize> {
        self.cells.iter().enumerate().map(|(i, c)| (c.as_slice(), i)).collect()
    }

    /// `Σ_γ e^{2πik·γ} w(γ)`: the frame recovered from the box.
    pub fn bloch_sum(&self, k: &[f64]) -> CMat {
        let mut out = Mat::<c64>::zeros(self.dim, self.rank);
        for (c, w) in self.cells.iter().zip(&self.values) {
            let ph = cis(2.0 * PI * c.iter().zip(k).map(|(&g, &x)| g as f64 * x).sum::<f64>());
            out += crate::linalg::scale(w, ph);
        }
        out
    }

    /// `⟨w_i(· − s), w_j⟩` over the box for a cell shift `s`.
    pub fn overlap(&self, shift: &[i64]) -> CMat {
        let at = self.lookup();
        let mut out = Mat::<c64>::zeros(self.rank, self.rank);
        for (c, w) in self.cells.iter().zip(&self.values) {
            let moved: Vec<i64> = c.iter().zip(shift).map(|(a, b)| a + b).collect();
            if let Some(&i) = at.get(moved.as_slice()) {
                out += adjoint(&self.values[i]) * w;
            }
        }
        out
    }

    /// max ‖⟨w_i, w_j⟩ − δ_ij‖ at zero shift.
    pub fn orthonormality(&self) -> f64 {
        op_diff(&self.overlap(&vec![0; self.cells[0].len()]), &eye(self.rank))
    }

    pub fn norm_sq(&self, j: usize) -> f64 {
        self.values.iter().map(|w| (0..self.dim).map(|i| w[(i, j)].norm_sqr()).sum::<f64>()).sum()
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().flat_map(|w| (0..self.rank).flat_map(move |j| (0..w.nrows()).map(move |i| w[(i, j)].im.abs()))).fold(0.0, f64::max)
    }

    pub fn max_abs(&self, j: usize) -> f64 {
        self.values.iter().flat_map(|w| (0..self.dim).map(move |i| w[(i, j)].norm())).fold(0.0, f64::max)
    }

    /// Largest entry over cells with `max_a |γ_a| = r`.
    pub fn amplitude_at(&self, j: usize, r: i64) -> f64 {
        self.cells
            .iter()
            .zip(&self.values)
            .filter(|(c, _)| c.iter().map(|x| x.abs()).max() == Some(r))
            .flat_map(|(_, w)| (0..self.dim).map(move |i| w[(i, j)].norm()))
            .fold(0.0, f64::max)
    }

    /// Center of mass of `|w_j|²` in cell coordinates.
    pub fn center(&self, j: usize) -> Vec<f64> {
        let d = self.cells[0].len();
        let mut c = vec![0.0; d];
        let mut tot = 0.0;
        for (cell, w) in self.cells.iter().zip(&self.values) {
            let m: f64 = (0..self.dim).map(|i| w[(i, j)].norm_sqr()).sum();
            tot += m;
            for a in 0..d {
                c[a] += m * cell[a] as f64;
            }
        }
        c.iter().map(|x| x / tot).collect()
    }

    /// Rows `(j, γ…, site, re, im)` with 1-based `j`.
    pub fn to_csv(&self) -> String {
        let d = self.cells[0].len();
        let mut s = String::from("j,");
        s += &(1..=d).map(|a| format!("gamma{a}")).collect::<Vec<_>>().join(",");
        s += ",site,re,im\n";
        for j in 0..self.rank {
            for (cell, w) in self.cells.iter().zip(&self.values) {
                for i in 0..self.dim {
                    let gs = cell.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(",");
                    s += &format!("{},{gs},{i},{},{}\n", j + 1, crate::output::fmt(w[(i, j)].re), crate::output::fmt(w[(i, j)].im));
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BandDecay {
    pub band: usize,
    pub alpha: f64,
    pub log_c: f64,
    /// Unexplained variance fraction `1 − R²` of the log shell norms.
    pub residual: f64,
    pub shells: usize,
    pub peak: f64,
    pub boundary_amplitude: f64,
    pub exponential: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub bands: Vec<BandDecay>,
    pub residual_threshold: f64,
}

impl DecayReport {
    pub fn min_alpha(&self) -> f64 {
        self.bands.iter().map(|b| b.alpha).fold(f64::INFINITY, f64::min)
    }

    pub fn max_residual(&self) -> f64 {
        self.bands.iter().map(|b| b.residual).fold(0.0, f64::max)
    }
}

pub const DECAY_RESIDUAL: f64 = 0.1;

/// Least squares of `(x, y)`: returns slope, intercept and `1 − R²`.
pub fn line_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum();
    let tss: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    (slope, icpt, if tss > 0.0 { rss / tss } else { 0.0 })
}

/// Shell norms `(‖γ‖, (Σ_{|γ'|=‖γ‖} |w_j(·+γ')|²)^{1/2})` sorted by radius.
pub fn shell_norms(w: &WannierSet, j: usize) -> Vec<(f64, f64)> {
    let mut shells: std::collections::BTreeMap<i64, f64> = Default::default();
    for (c, v) in w.cells.iter().zip(&w.values) {
        let r2: i64 = c.iter().map(|x| x * x).sum();
        *shells.entry(r2).or_default() += (0..w.dim).map(|i| v[(i, j)].norm_sqr()).sum::<f64>();
    }
    shells.into_iter().map(|(r2, s)| ((r2 as f64).sqrt(), s.sqrt())).collect()
}

/// Fits `log ‖w_j‖_shell ≈ log C − α‖γ‖` over complete shells (radius
/// within the box) above the noise floor.
pub fn decay_fit(w: &WannierSet) -> Result<DecayReport> {
    let r_max = w.cells.iter().flat_map(|c| c.iter().map(|x| x.abs())).max().unwrap_or(0);
    let mut bands = Vec::with_capacity(w.rank);
    for j in 0..w.rank {
        let sh = shell_norms(w, j);
        let peak = sh.iter().map(|s| s.1).fold(0.0, f64::max);
        let floor = 10.0 * f64::EPSILON * peak.max(1.0);
        let pts: Vec<(f64, f64)> =
            sh.iter().filter(|s| s.1 > floor && s.0 <= r_max as f64).map(|s| (s.0, s.1.ln())).collect();
        if pts.len() < 4 {
            return Err(Error::InsufficientShells { found: pts.len() });
        }
        let (slope, icpt, residual) = line_fit(&pts);
        bands.push(BandDecay {
            band: j,
            alpha: -slope,
            log_c: icpt,
            residual,
            shells: pts.len(),
            peak: w.max_abs(j),
            boundary_amplitude: w.amplitude_at(j, r_max),
            exponential: -slope > 0.0 && residual < DECAY_RESIDUAL,
        });
    }
    Ok(DecayReport { bands, residual_threshold: DECAY_RESIDUAL })
}

/// Per-axis periodized Poisson weights `sinh 2πδ / (cosh 2πδ − cos 2πx)` on
/// the `n` distinct nodes, normalized, exactly even.
fn poisson_weights(n: usize, delta: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|d| {
            let x = d.min(n - d) as f64 / n as f64;
            (2.0 * PI * delta).sinh() / ((2.0 * PI * delta).cosh() - (2.0 * PI * x).cos())
        })
        .collect();
    let tot: f64 = raw.iter().sum();
    raw.iter().map(|w| w / tot).collect()
}

/// Convolves the frame with `g_δ` along `axis` (distinct nodes, periodic).
fn convolve_axis(frame: &BlochFrame, values: &[CMat], axis: usize, delta: f64) -> Vec<CMat> {
    let n = frame.grids[axis].n;
    let wts = poisson_weights(n, delta);
    crate::par::map(values.len(), |f| {
        let idx = frame.unindex(f);
        let i = idx[axis] % n;
        let mut acc = Mat::<c64>::zeros(frame.dim, frame.rank);
        let mut other = idx.clone();
        for l in 0..n {
            other[axis] = l;
            acc += crate::linalg::scale(&values[frame.index(&other)], c64::new(wts[(i + n - l) % n], 0.0));
        }
        acc
    })
}

/// Mollify, project, and re-orthonormalize: `Φ h^{−1/2}` with
/// `Φ = P(g_δ ∗ Ξ)` and `h = Φ†Φ`.
pub fn smooth_lift(frame: &BlochFrame, p: &ProjectionSampler, delta: f64) -> Result<BlochFrame> {
    if !(delta > 0.0) {
        return Err(Error::Input(format!("delta must be positive, got {delta}")));
    }
    let mut vals = frame.values.clone();
    for axis in 0..frame.grids.len() {
        vals = convolve_axis(frame, &vals, axis, delta);
    }
    let id = eye(frame.rank);
    let out = crate::par::try_map(vals.len(), |f| {
        let k = frame.k(&frame.unindex(f));
        let phi = p.eval(&k)? * &vals[f];
        let h = adjoint(&phi) * &phi;
        let dev = op_diff(&h, &id);
        if dev > 0.5 {
            return Err(Error::DeltaTooLarge { deviation: dev, delta });
        }
        Ok(&phi * inv_sqrt_psd(&h, 1e-12)?)
    })?;
    Ok(BlochFrame { values: out, notes: format!("{}; smooth_lift delta = {delta}", frame.notes), ..frame.clone() })
}

/// [`smooth_lift`] halving δ from 0.1 until the Gram condition holds.
pub fn smooth_lift_auto(frame: &BlochFrame, p: &ProjectionSampler) -> Result<(BlochFrame, f64)> {
    let mut delta = 0.1;
    let mut last = None;
    for _ in 0..20 {
        match smooth_lift(frame, p, delta) {
            Ok(f) => return Ok((f, delta)),
            Err(e @ Error::DeltaTooLarge { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
        delta *= 0.5;
    }
    Err(last.expect("loop ran"))
}

/// Fitted ratio `r` in `‖Ξ̂(m)‖ ≤ C r^{|m|}` from the frame's own Fourier
/// coefficients, with the fit residual.
pub fn fourier_ratio(frame: &BlochFrame) -> Result<(f64, f64)> {
    let r = frame.grids.iter().map(|g| g.n / 2 - 1).min().unwrap_or(0);
    let rep = decay_fit(&wannier_transform(frame, r)?)?;
    Ok(((-rep.min_alpha()).exp(), rep.max_residual()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cr, diff_max};

    fn frame_1(n: usize, dim: usize, rank: usize, f: impl Fn(f64) -> CMat) -> BlochFrame {
        let g = Grid1::new(n).unwrap();
        BlochFrame { grids: vec![g], dim, rank, values: g.ks().iter().map(|&k| f(k)).collect(), cs: false, notes: String::new() }
    }

    fn e1() -> CMat {
        Mat::from_fn(2, 1, |i, _| cr(if i == 0 { 1.0 } else { 0.0 }))
    }

    #[test]
    fn constant_frame_concentrates_at_origin() {
        let f = frame_1(16, 2, 1, |_| e1());
        let w = wannier_transform(&f, 4).unwrap();
        for (c, v) in w.cells.iter().zip(&w.values) {
            let expect = if c[0] == 0 { e1() } else { Mat::zeros(2, 1) };
            assert!(diff_max(v, &expect) < 1e-15);
        }
    }

    #[test]
    fn winding_gauge_shifts_by_one_cell() {
        let f = frame_1(16, 2, 1, |k| crate::linalg::scale(&e1(), cis(2.0 * PI * k)));
        let w = wannier_transform(&f, 4).unwrap();
        for (c, v) in w.cells.iter().zip(&w.values) {
            let expect = if c[0] == 1 { e1() } else { Mat::zeros(2, 1) };
            assert!(diff_max(v, &expect) < 1e-14, "{c:?}");
        }
    }

    #[test]
    fn oversized_box_is_aliasing() {
        let f = frame_1(16, 2, 1, |_| e1());
        assert!(matches!(wannier_transform(&f, 9), Err(Error::Aliasing { .. })));
    }

    fn synthetic(shell: impl Fn(f64) -> f64) -> WannierSet {
        let cells: Vec<Vec<i64>> = (-20..=20).map(|g| vec![g]).collect();
        let values = cells.iter().map(|c| Mat::from_fn(1, 1, |_, _| cr(shell(c[0].abs() as f64) / if c[0] == 0 { 1.0 } else { 2f64.sqrt() }))).collect();
        WannierSet { dim: 1, rank: 1, grids: vec![Grid1::new(64).unwrap()], cells, values }
    }

    #[test]
    fn decay_fit_examples() {
        let r = decay_fit(&synthetic(|x| (-x).exp())).unwrap();
        assert!((r.bands[0].alpha - 1.0).abs() < 1e-6 && r.bands[0].exponential);
        let r = decay_fit(&synthetic(|x| 1.0 / (1.0 + x * x))).unwrap();
        assert!(r.bands[0].residual > DECAY_RESIDUAL && !r.bands[0].exponential, "{r:?}");
        let r = decay_fit(&synthetic(|x| if x == 0.0 { 1.0 } else { 0.0 }));
        assert!(matches!(r, Err(Error::InsufficientShells { found: 1 })));
    }

    #[test]
    fn smooth_lift_of_constant_is_identity() {
        let f = frame_1(32, 2, 1, |_| e1());
        let p0 = &e1() * adjoint(&e1());
        let p = ProjectionSampler::from_fn(2, 1, f.grids.clone(), crate::model::CsFlag::Holds, move |_: &[f64]| Ok(p0.clone()));
        let out = smooth_lift(&f, &p, 0.05).unwrap();
        for (a, b) in out.values.iter().zip(&f.values) {
            assert!(diff_max(a, b) < 1e-15);
        }
    }
}
