//! Bloch frames and the one-dimensional construction.

use crate::error::{Error, Result};
use crate::grid::Grid1;
use crate::linalg::{adjoint, conj, cr, diff_max, expi, eye, from_eig, herm_eig, max_abs, pivoted_gram_schmidt, polar, transpose, unitary_eig, CMat};
use crate::model::CsFlag;
use crate::spectral::{inv_sqrt_psd, ProjectionSampler};
use crate::tol::Tolerances;
use crate::transport::{holonomy_log, transport_path, Mode};
use faer::Mat;
use serde::Serialize;

/// `D×N` orthonormal frame per node of a product grid (first axis slowest).
#[derive(Debug, Clone)]
pub struct BlochFrame {
    pub grids: Vec<Grid1>,
    pub dim: usize,
    pub rank: usize,
    pub values: Vec<CMat>,
    pub cs: bool,
    pub notes: String,
}

#[derive(Debug, Clone, Copy, Serialize, Default)]
pub struct FrameResiduals {
    pub orthonormality: f64,
    pub range: f64,
    /// One entry per axis.
    pub periodicity: [f64; 2],
    pub cs: f64,
}

impl FrameResiduals {
    pub fn worst(&self) -> f64 {
        self.orthonormality.max(self.range).max(self.periodicity[0]).max(self.periodicity[1]).max(self.cs)
    }
}

impl BlochFrame {
    pub fn shape(&self) -> Vec<usize> {
        self.grids.iter().map(|g| g.len()).collect()
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.grids.iter()).fold(0, |acc, (i, g)| acc * g.len() + i)
    }

    pub fn unindex(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.grids.len()];
        for (a, g) in self.grids.iter().enumerate().rev() {
            out[a] = flat % g.len();
            flat /= g.len();
        }
        out
    }

    pub fn k(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().zip(&self.grids).map(|(&i, g)| g.k(i)).collect()
    }

    pub fn at(&self, idx: &[usize]) -> &CMat {
        &self.values[self.index(idx)]
    }

    /// Invariant residuals against the sampler the frame was built from.
    pub fn residuals(&self, p: &ProjectionSampler) -> Result<FrameResiduals> {
        let id = eye(self.rank);
        let per = crate::par::try_map(self.values.len(), |f| {
            let idx = self.unindex(f);
            let xi = &self.values[f];
            let pk = p.eval(&self.k(&idx))?;
            let orth = diff_max(&(adjoint(xi) * xi), &id);
            let range = max_abs(&(&pk * xi - xi));
            let mirror: Vec<usize> = idx.iter().zip(&self.grids).map(|(&i, g)| g.mirror(i)).collect();
            let cs = diff_max(&conj(xi), self.at(&mirror));
            let mut perio = [0.0; 2];
            for (a, g) in self.grids.iter().enumerate() {
                if idx[a] == 0 {
                    let mut other = idx.clone();
                    other[a] = g.n;
                    perio[a] = diff_max(xi, self.at(&other));
                }
            }
            Ok::<_, Error>((orth, range, perio, cs))
        })?;
        let mut r = FrameResiduals::default();
        for (o, g, p, c) in per {
            r.orthonormality = r.orthonormality.max(o);
            r.range = r.range.max(g);
            r.periodicity[0] = r.periodicity[0].max(p[0]);
            r.periodicity[1] = r.periodicity[1].max(p[1]);
            r.cs = r.cs.max(c);
        }
        Ok(r)
    }
}

/// Real orthonormal basis of Ran P0 for a real projection.
pub fn real_seed(p0: &CMat, rank: usize, tol_cs: f64) -> Result<CMat> {
    let imag = diff_max(p0, &conj(p0));
    if imag > tol_cs {
        return Err(Error::NotReal { residual: imag });
    }
    let re = Mat::from_fn(p0.nrows(), p0.ncols(), |i, j| cr(p0[(i, j)].re));
    let b = pivoted_gram_schmidt(&re, 1e-6);
    assert_eq!(b.ncols(), rank, "realified projection lost rank");
    Ok(b)
}

/// Any orthonormal basis of Ran P0.
fn eigen_seed(p0: &CMat, rank: usize) -> CMat {
    let e = herm_eig(p0);
    let d = p0.nrows();
    Mat::from_fn(d, rank, |i, j| e.vectors[(i, d - rank + j)])
}

/// `Ξ ← PΞ(Ξ†PΞ)^{-1/2}`: the Sz.-Nagy correction onto the exact range.
pub(crate) fn onto_range(p: &CMat, xi: &CMat) -> Result<CMat> {
    let px = p * xi;
    let g = adjoint(xi) * &px;
    Ok(px * inv_sqrt_psd(&g, 1e-12)?)
}

/// Periodic frame along one line. The transported seed is corrected onto
/// the exact range, the loop unitary `L = Ξ⁰(−1/2)†Ξ⁰(1/2)` is read off the
/// two ends, and `Ξ(k) = Ξ⁰(k) e^{−ik log L}`. Returns one matrix per node.
pub(crate) fn frame_line<F: Fn(f64) -> Result<CMat> + Sync>(
    p: &F,
    grid: &Grid1,
    seed: &CMat,
    tol: &Tolerances,
    mode: Mode,
) -> Result<Vec<CMat>> {
    let z = grid.zero();
    let n = grid.n;
    let fwd = transport_path(p, grid, z, n, mode)?;
    let bwd = transport_path(p, grid, z, 0, mode)?;
    let a_loop = adjoint(&bwd[z]) * &fwd[n - z];
    // The holonomy on Ran P(0) must be a unitary up to the transport error.
    holonomy_log(&a_loop, &p(0.0)?, tol.transport(grid.step()))?;
    let a_at = |j: usize| if j >= z { &fwd[j - z] } else { &bwd[z - j] };
    let xi0 = crate::par::try_map(n + 1, |j| onto_range(&p(grid.k(j))?, &(a_at(j) * seed)))?;
    let l = polar(&(adjoint(&xi0[0]) * &xi0[n]));
    let e = unitary_eig(&l);
    let mut m = from_eig(&e.vectors, &e.angles.iter().map(|&a| cr(a)).collect::<Vec<_>>());
    if max_abs(&(&l - transpose(&l))) < 1e-10 {
        // Symmetric loop (real seed, CS sampler): the principal log is real.
        m = Mat::from_fn(m.nrows(), m.ncols(), |i, j| cr(0.5 * (m[(i, j)].re + m[(j, i)].re)));
    }
    Ok((0..=n).map(|j| &xi0[j] * expi(&m, -grid.k(j))).collect())
}

/// Periodic Bloch frame of a one-dimensional sampler; conjugation symmetric
/// when the sampler is and the seed is real.
pub fn frame_1d(p: &ProjectionSampler, seed: Option<&CMat>, tol: &Tolerances, mode: Mode) -> Result<BlochFrame> {
    if p.dimension() != 1 {
        return Err(Error::Precondition(format!("frame_1d needs a one-dimensional sampler, got d = {}", p.dimension())));
    }
    let grid = p.grids[0];
    let line = p.slice(0, &[0.0]);
    let p0 = line(0.0)?;
    let cs_sampler = p.cs_flag == CsFlag::Holds;
    let seed = match seed {
        Some(s) => {
            if s.nrows() != p.dim || s.ncols() != p.rank {
                return Err(Error::Input(format!("seed must be {}x{}", p.dim, p.rank)));
            }
            let r = max_abs(&(&p0 * s - s));
            if r > tol.frame {
                return Err(Error::SeedNotInRange { residual: r });
            }
            s.clone()
        }
        None if cs_sampler => real_seed(&p0, p.rank, tol.cs.max(1e-10))?,
        None => eigen_seed(&p0, p.rank),
    };
    let real = max_abs(&(&seed - conj(&seed))) == 0.0;
    let values = frame_line(&line, &grid, &seed, tol, mode)?;
    Ok(BlochFrame {
        grids: vec![grid],
        dim: p.dim,
        rank: p.rank,
        values,
        cs: cs_sampler && real,
        notes: format!("frame_1d, {mode:?} transport, {} nodes", grid.n),
    })
}
