//! Gauge-free topological oracles: lattice Chern number and Berry phases.

use crate::error::{Error, Result};
use crate::grid::Grid1;
use crate::linalg::{adjoint, det, herm_eig, principal_arg, CMat};
use crate::spectral::ProjectionSampler;
use faer::{c64, Mat};
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChernReport {
    pub chern: i64,
    pub raw: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TopologyReport {
    pub chern: Option<ChernReport>,
    /// (k₂, total Berry phase along k₁) per slice; for d = 1 a single entry.
    pub berry_phases: Vec<(f64, f64)>,
    pub det_winding: Option<i64>,
    pub tolerance: f64,
}

/// Columns spanning Ran P (eigenvectors with eigenvalue near 1).
pub fn local_frame(p: &CMat, rank: usize) -> CMat {
    let e = herm_eig(p);
    let d = p.nrows();
    Mat::from_fn(d, rank, |i, j| e.vectors[(i, d - rank + j)])
}

fn link(a: &CMat, b: &CMat) -> c64 {
    let z = det(&(adjoint(a) * b));
    if z.norm() == 0.0 {
        z
    } else {
        z / z.norm()
    }
}

/// Sum over plaquettes of the field strength built from normalized link
/// determinants; an integer up to the returned residual.
pub fn chern_number(p: &ProjectionSampler) -> Result<ChernReport> {
    if p.dimension() != 2 || p.grids.iter().any(|g| g.n < 16) {
        return Err(Error::Precondition("chern_number needs a two-dimensional grid of at least 16x16".into()));
    }
    let (g1, g2) = (p.grids[0], p.grids[1]);
    let (n1, n2) = (g1.n, g2.n);
    let frames = crate::par::try_map(n1 * n2, |f| {
        let (i, j) = (f / n2, f % n2);
        Ok::<_, Error>(local_frame(&p.eval(&[g1.k(i), g2.k(j)])?, p.rank))
    })?;
    chern_from_frames(&frames, n1, n2)
}

/// Plaquette sum over an `n1 × n2` periodic array of frames (row-major in
/// k₁); any k-dependent unitary rotation of the frames leaves it unchanged.
pub fn chern_from_frames(frames: &[CMat], n1: usize, n2: usize) -> Result<ChernReport> {
    let v = |i: usize, j: usize| &frames[(i % n1) * n2 + (j % n2)];
    let flux: Vec<f64> = crate::par::map(n1 * n2, |f| {
        let (i, j) = (f / n2, f % n2);
        let u1 = link(v(i, j), v(i + 1, j));
        let u2 = link(v(i + 1, j), v(i + 1, j + 1));
        let u3 = link(v(i + 1, j + 1), v(i, j + 1));
        let u4 = link(v(i, j + 1), v(i, j));
        principal_arg(u1 * u2 * u3 * u4)
    });
    let raw = flux.iter().sum::<f64>() / (2.0 * PI);
    let chern = raw.round();
    let residual = (raw - chern).abs();
    if residual > 0.1 {
        return Err(Error::ChernUnreliable { residual });
    }
    Ok(ChernReport { chern: chern as i64, raw, residual })
}

/// Total Berry phase `−arg det Π V(k_i)†V(k_{i+1})` around the loop
/// k ∈ [−1/2, 1/2]; Wannier centers sum to `−phase/2π` mod 1.
pub fn berry_phase<F: Fn(f64) -> Result<CMat>>(p: &F, grid: &Grid1, rank: usize) -> Result<f64> {
    let mut frames = Vec::with_capacity(grid.n);
    for j in 0..grid.n {
        frames.push(local_frame(&p(grid.k(j))?, rank));
    }
    wilson_phase(&frames, grid)
}

/// `−arg Π det V_j†V_{j+1}` around the closed loop of frames.
pub fn wilson_phase(frames: &[CMat], grid: &Grid1) -> Result<f64> {
    let n = frames.len();
    let mut w = c64::new(1.0, 0.0);
    for j in 0..n {
        let z = det(&(adjoint(&frames[j]) * &frames[(j + 1) % n]));
        if z.norm() < 1e-8 {
            return Err(Error::SingularOverlap { k: grid.k(j) });
        }
        w *= z / z.norm();
    }
    Ok(-principal_arg(w))
}

/// Berry phases along k₁ for every k₂ node (or the single loop in d = 1).
pub fn berry_phases(p: &ProjectionSampler) -> Result<Vec<(f64, f64)>> {
    match p.dimension() {
        1 => Ok(vec![(0.0, berry_phase(&p.slice(0, &[0.0]), &p.grids[0], p.rank)?)]),
        _ => {
            let g2 = p.grids[1];
            crate::par::try_map(g2.len(), |j| {
                let k2 = g2.k(j);
                Ok((k2, berry_phase(&p.slice(0, &[0.0, k2]), &p.grids[0], p.rank)?))
            })
        }
    }
}

/// Chern number (d = 2), Berry phases per slice, and the winding in k₂ of
/// `det β(k₂) = e^{−i·phase(k₂)}`, the determinant of the k₁ holonomy.
pub fn topology(p: &ProjectionSampler, tol_pd: f64) -> Result<TopologyReport> {
    let berry = berry_phases(p)?;
    let (chern, det_winding) = match p.dimension() {
        2 => {
            let dets: Vec<c64> = berry.iter().map(|&(_, b)| crate::linalg::cis(-b)).collect();
            (Some(chern_number(p)?), Some(crate::unilog::winding(&dets, tol_pd)?))
        }
        _ => (None, None),
    };
    Ok(TopologyReport { chern, berry_phases: berry, det_winding, tolerance: 0.1 })
}
