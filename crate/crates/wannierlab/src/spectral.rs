//! Spectral projections, the Sz.-Nagy intertwiner and the Zak reduction.

use crate::error::{Error, Result};
use crate::grid::Grid1;
use crate::linalg::{adjoint, commutator, eye, from_eig, herm_eig, max_abs, opnorm, unitary_eig, cr, CMat};
use crate::model::{product_nodes, BlochHamiltonian, CsFlag};
use crate::par;
use faer::Mat;
use std::sync::Arc;

pub type ProjFn = Arc<dyn Fn(&[f64]) -> Result<CMat> + Send + Sync>;

/// Band selection: explicit 0-based band indices, or an energy interval.
#[derive(Debug, Clone, PartialEq)]
pub enum Window {
    Bands(Vec<usize>),
    Interval(f64, f64),
}

impl Window {
    pub fn lowest(n: usize) -> Self {
        Window::Bands((0..n).collect())
    }

    /// Parses `lower`, `upper`, `1,2` (1-based band list), `1-3`, or
    /// `e:<lo>:<hi>`.
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let bad = || Error::Input(format!("cannot parse band spec {spec:?}"));
        match spec {
            "lower" => return Ok(Window::Bands((0..dim / 2).collect())),
            "upper" => return Ok(Window::Bands((dim - dim / 2..dim).collect())),
            _ => {}
        }
        if let Some(rest) = spec.strip_prefix("e:") {
            let (a, b) = rest.split_once(':').ok_or_else(bad)?;
            let lo: f64 = a.parse().map_err(|_| bad())?;
            let hi: f64 = b.parse().map_err(|_| bad())?;
            if !(lo < hi) {
                return Err(bad());
            }
            return Ok(Window::Interval(lo, hi));
        }
        let mut out = Vec::new();
        for part in spec.split(',') {
            if let Some((a, b)) = part.split_once('-') {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a == 0 || b < a {
                    return Err(bad());
                }
                out.extend(a - 1..b);
            } else {
                let a: usize = part.trim().parse().map_err(|_| bad())?;
                if a == 0 {
                    return Err(bad());
                }
                out.push(a - 1);
            }
        }
        out.sort_unstable();
        out.dedup();
        if out.is_empty() || out.iter().any(|&i| i >= dim) {
            return Err(bad());
        }
        Ok(Window::Bands(out))
    }

    fn select(&self, values: &[f64]) -> Vec<bool> {
        match self {
            Window::Bands(idx) => (0..values.len()).map(|i| idx.contains(&i)).collect(),
            Window::Interval(lo, hi) => values.iter().map(|&e| e >= *lo && e <= *hi).collect(),
        }
    }
}

/// Projection onto the selected eigenvectors of one Hermitian matrix, with
/// the selected/unselected gap.
pub fn projection_matrix(h: &CMat, window: &Window) -> (CMat, usize, f64) {
    let e = herm_eig(h);
    let sel = window.select(&e.values);
    let mut gap = f64::INFINITY;
    for (i, &a) in e.values.iter().enumerate() {
        for (j, &b) in e.values.iter().enumerate() {
            if sel[i] && !sel[j] {
                gap = gap.min((a - b).abs());
            }
        }
    }
    if let Window::Interval(lo, hi) = window {
        for &x in &e.values {
            gap = gap.min((x - lo).abs()).min((x - hi).abs());
        }
    }
    let idx: Vec<usize> = (0..sel.len()).filter(|&i| sel[i]).collect();
    let v = Mat::from_fn(h.nrows(), idx.len(), |r, c| e.vectors[(r, idx[c])]);
    (&v * adjoint(&v), idx.len(), gap)
}

/// The family `k ↦ P(k)` of rank-`rank` projections on a symmetric grid.
#[derive(Clone)]
pub struct ProjectionSampler {
    pub dim: usize,
    pub rank: usize,
    pub grids: Vec<Grid1>,
    pub cs_flag: CsFlag,
    pub min_gap: f64,
    eval: ProjFn,
}

impl std::fmt::Debug for ProjectionSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProjectionSampler")
            .field("dim", &self.dim)
            .field("rank", &self.rank)
            .field("grids", &self.grids)
            .field("cs_flag", &self.cs_flag)
            .field("min_gap", &self.min_gap)
            .finish()
    }
}

impl ProjectionSampler {
    /// Wraps an arbitrary projection-valued evaluator.
    pub fn from_fn(
        dim: usize,
        rank: usize,
        grids: Vec<Grid1>,
        cs_flag: CsFlag,
        f: impl Fn(&[f64]) -> Result<CMat> + Send + Sync + 'static,
    ) -> Self {
        ProjectionSampler { dim, rank, grids, cs_flag, min_gap: f64::INFINITY, eval: Arc::new(f) }
    }

    pub fn eval(&self, k: &[f64]) -> Result<CMat> {
        (self.eval)(k)
    }

    pub fn dimension(&self) -> usize {
        self.grids.len()
    }

    /// `x ↦ P` along axis `axis` with the other coordinates fixed.
    pub fn slice(&self, axis: usize, fixed: &[f64]) -> impl Fn(f64) -> Result<CMat> + Sync + '_ {
        let fixed = fixed.to_vec();
        move |x| {
            let mut k = fixed.clone();
            k[axis] = x;
            self.eval(&k)
        }
    }

    /// Worst idempotency, Hermiticity and trace residuals over the grid.
    pub fn residuals(&self) -> Result<(f64, f64, f64)> {
        let nodes = product_nodes(&self.grids);
        let r = par::try_map(nodes.len(), |i| {
            let p = self.eval(&nodes[i])?;
            let idem = max_abs(&(&p * &p - &p));
            let herm = max_abs(&(&p - adjoint(&p)));
            let tr = (crate::linalg::trace(&p) - cr(self.rank as f64)).norm();
            Ok::<_, Error>((idem, herm, tr))
        })?;
        Ok(r.into_iter().fold((0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2))))
    }

    /// max_k ‖ᵗP(k) − P(−k)‖ over the grid.
    pub fn cs_residual(&self) -> Result<f64> {
        let nodes = product_nodes(&self.grids);
        let r = par::try_map(nodes.len(), |i| {
            let k = &nodes[i];
            let mk: Vec<f64> = k.iter().map(|x| -x).collect();
            Ok::<_, Error>(crate::linalg::diff_max(&crate::linalg::transpose(&self.eval(k)?), &self.eval(&mk)?))
        })?;
        Ok(r.into_iter().fold(0.0, f64::max))
    }
}

/// Builds `P(k)` from a full eigendecomposition of `h(k)`; scans the grid for
/// the gap and the selection count.
pub fn spectral_projection(h: &BlochHamiltonian, window: &Window, grids: &[Grid1], tol_gap: f64) -> Result<ProjectionSampler> {
    if grids.len() != h.dimension() {
        return Err(Error::Input(format!("grid has {} axes, model dimension is {}", grids.len(), h.dimension())));
    }
    if let Window::Bands(idx) = window {
        if idx.is_empty() || idx.iter().any(|&i| i >= h.dim()) {
            return Err(Error::Input(format!("band selection {idx:?} out of range for {} bands", h.dim())));
        }
    }
    let nodes = product_nodes(grids);
    let scan = par::map(nodes.len(), |i| {
        let (_, n, gap) = projection_matrix(&h.eval(&nodes[i]), window);
        (n, gap)
    });
    let rank = scan[0].0;
    let mut min_gap = f64::INFINITY;
    for (k, (n, gap)) in nodes.iter().zip(&scan) {
        if *n != rank || *n == 0 {
            return Err(Error::SelectionCount { k: k.clone(), expected: rank, found: *n });
        }
        if *gap < tol_gap {
            return Err(Error::GapClosure { k: k.clone(), gap: *gap });
        }
        min_gap = min_gap.min(*gap);
    }
    let hh = h.clone();
    let w = window.clone();
    let eval = move |k: &[f64]| {
        let (p, n, gap) = projection_matrix(&hh.eval(k), &w);
        if n != rank {
            return Err(Error::SelectionCount { k: k.to_vec(), expected: rank, found: n });
        }
        if gap < tol_gap {
            return Err(Error::GapClosure { k: k.to_vec(), gap });
        }
        Ok(p)
    };
    Ok(ProjectionSampler { dim: h.dim(), rank, grids: grids.to_vec(), cs_flag: h.cs_flag, min_gap, eval: Arc::new(eval) })
}

/// `A^{-1/2}` for Hermitian positive definite `A`.
pub fn inv_sqrt_psd(a: &CMat, tol_pd: f64) -> Result<CMat> {
    let e = herm_eig(a);
    let min = e.values.first().copied().unwrap_or(1.0);
    if min <= tol_pd {
        return Err(Error::NotPositive { min_eig: min });
    }
    Ok(from_eig(&e.vectors, &e.values.iter().map(|&x| cr(1.0 / x.sqrt())).collect::<Vec<_>>()))
}

/// Unitary `U` with `P·U = U·Q`, mapping Ran Q onto Ran P.
pub fn sz_nagy(p: &CMat, q: &CMat) -> Result<CMat> {
    let d = p - q;
    let dist = opnorm(&d);
    if dist >= 1.0 - 1e-12 {
        return Err(Error::ProjectionsTooFar { distance: dist });
    }
    let id = eye(p.nrows());
    let a = p * q + (&id - p) * (&id - q);
    let s = inv_sqrt_psd(&(&id - &d * &d), 0.0)?;
    Ok(a * s)
}

/// Turns a Zak-covariant family `Π(k+λ) = τ_λ Π(k) τ_λ*` into a periodic one
/// `u_k^{-1} Π(k) u_k` with `u_k = e^{i Σ k_j M_j}`, `τ_j = e^{iM_j}`.
pub fn zak_to_periodic(pi: &ProjectionSampler, taus: &[CMat], tol_comm: f64) -> Result<ProjectionSampler> {
    if taus.len() != pi.dimension() {
        return Err(Error::Input(format!("need {} translation unitaries, got {}", pi.dimension(), taus.len())));
    }
    for i in 0..taus.len() {
        for j in i + 1..taus.len() {
            let r = opnorm(&commutator(&taus[i], &taus[j]));
            if r > tol_comm {
                return Err(Error::NonCommuting { residual: r });
            }
        }
    }
    let gens: Vec<CMat> = taus
        .iter()
        .map(|t| {
            let e = unitary_eig(t);
            from_eig(&e.vectors, &e.angles.iter().map(|&a| cr(a)).collect::<Vec<_>>())
        })
        .collect();
    let inner = pi.clone();
    let dim = pi.dim;
    let eval = move |k: &[f64]| {
        let mut g = Mat::<faer::c64>::zeros(dim, dim);
        for (kj, m) in k.iter().zip(&gens) {
            g += crate::linalg::scale(m, cr(*kj));
        }
        let u = crate::linalg::expi(&g, 1.0);
        Ok(adjoint(&u) * inner.eval(k)? * u)
    };
    let mut out = ProjectionSampler::from_fn(pi.dim, pi.rank, pi.grids.clone(), pi.cs_flag, eval);
    out.min_gap = pi.min_gap;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cis, diff_max, zeros};
    use crate::model::build_bloch;
    use crate::presets;

    fn rot(theta: f64) -> CMat {
        Mat::from_fn(2, 2, |i, j| {
            cr(match (i, j) {
                (0, 0) | (1, 1) => theta.cos(),
                (0, 1) => -theta.sin(),
                _ => theta.sin(),
            })
        })
    }

    fn p0() -> CMat {
        Mat::from_fn(2, 2, |i, j| cr(if i == 0 && j == 0 { 1.0 } else { 0.0 }))
    }

    #[test]
    fn ssh_lower_band_gap_is_two() {
        // Oracle: brute-force minimum of |1 + 2e^{2πik}| on a fine grid, doubled.
        let fine = (0..=100_000)
            .map(|j| {
                let k = -0.5 + j as f64 / 100_000.0;
                (cr(1.0) + cis(2.0 * std::f64::consts::PI * k) * 2.0).norm()
            })
            .fold(f64::INFINITY, f64::min);
        let h = build_bloch(presets::ssh(1.0, 2.0));
        let s = spectral_projection(&h, &Window::lowest(1), &[Grid1::new(64).unwrap()], 1e-6).unwrap();
        assert_eq!(s.rank, 1);
        assert!((s.min_gap - 2.0 * fine).abs() < 1e-9);
    }

    #[test]
    fn full_window_is_identity() {
        let h = build_bloch(presets::rice_mele(1.0, 0.5, 0.3));
        let s = spectral_projection(&h, &Window::lowest(2), &[Grid1::new(16).unwrap()], 1e-6).unwrap();
        assert!(diff_max(&s.eval(&[0.3]).unwrap(), &eye(2)) < 1e-13);
    }

    #[test]
    fn window_through_eigenvalue_errors() {
        let h = build_bloch(presets::chain(1.0));
        let r = spectral_projection(&h, &Window::Interval(-3.0, 0.0), &[Grid1::new(16).unwrap()], 1e-6);
        assert!(matches!(r, Err(Error::GapClosure { .. }) | Err(Error::SelectionCount { .. })));
    }

    #[test]
    fn sz_nagy_rotated_pair() {
        let q = rot(0.3) * p0() * adjoint(&rot(0.3));
        let u = sz_nagy(&p0(), &q).unwrap();
        assert!(diff_max(&(adjoint(&u) * &u), &eye(2)) < 1e-12);
        assert!(diff_max(&(p0() * &u), &(&u * &q)) < 1e-12);
        assert!(diff_max(&sz_nagy(&p0(), &p0()).unwrap(), &eye(2)) < 1e-15);
        let q = Mat::from_fn(2, 2, |i, j| cr(if i == 1 && j == 1 { 1.0 } else { 0.0 }));
        assert!(matches!(sz_nagy(&p0(), &q), Err(Error::ProjectionsTooFar { .. })));
    }

    #[test]
    fn inv_sqrt_examples() {
        let a = Mat::from_fn(2, 2, |i, j| cr(if i != j { 0.0 } else if i == 0 { 4.0 } else { 1.0 }));
        let b = inv_sqrt_psd(&a, 1e-12).unwrap();
        assert!((b[(0, 0)].re - 0.5).abs() < 1e-14 && (b[(1, 1)].re - 1.0).abs() < 1e-14);
        let a = Mat::from_fn(2, 2, |i, j| cr(if i != j { 0.0 } else if i == 0 { 1.0 } else { -0.1 }));
        assert!(inv_sqrt_psd(&a, 1e-12).is_err());
        assert!(diff_max(&inv_sqrt_psd(&eye(3), 1e-12).unwrap(), &eye(3)) < 1e-15);
    }

    #[test]
    fn zak_round_trip() {
        let tau = Mat::from_fn(2, 2, |i, j| if i != j { cr(0.0) } else if i == 0 { cr(1.0) } else { cis(std::f64::consts::PI) });
        let m = Mat::from_fn(2, 2, |i, j| cr(if i == 1 && j == 1 { std::f64::consts::PI } else { 0.0 }));
        let pi0 = Mat::from_fn(2, 2, |_, _| cr(0.5));
        let pi0c = pi0.clone();
        let cov = ProjectionSampler::from_fn(2, 1, vec![Grid1::new(16).unwrap()], CsFlag::Unknown, move |k: &[f64]| {
            let u = crate::linalg::expi(&m, k[0]);
            Ok(&u * &pi0c * adjoint(&u))
        });
        let p = zak_to_periodic(&cov, &[tau], 1e-10).unwrap();
        for &k in &[-0.5, -0.2, 0.0, 0.35, 0.5] {
            assert!(diff_max(&p.eval(&[k]).unwrap(), &pi0) < 1e-10);
        }
        let noncomm = [rot(0.2), zeros(2, 2)];
        let two = ProjectionSampler::from_fn(2, 1, vec![Grid1::new(16).unwrap(); 2], CsFlag::Unknown, |_: &[f64]| Ok(eye(2)));
        let mut t2 = noncomm.to_vec();
        t2[1] = Mat::from_fn(2, 2, |i, j| cr(if i == j { if i == 0 { 1.0 } else { -1.0 } } else { 0.0 }));
        assert!(matches!(zak_to_periodic(&two, &t2, 1e-10), Err(Error::NonCommuting { .. })));
    }

    #[test]
    fn window_parsing() {
        assert_eq!(Window::parse("lower", 2).unwrap(), Window::Bands(vec![0]));
        assert_eq!(Window::parse("1-2", 4).unwrap(), Window::Bands(vec![0, 1]));
        assert_eq!(Window::parse("e:-1:0.5", 4).unwrap(), Window::Interval(-1.0, 0.5));
        assert!(Window::parse("0", 4).is_err());
        assert!(Window::parse("5", 4).is_err());
    }
}
