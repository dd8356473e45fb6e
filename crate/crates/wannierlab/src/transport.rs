//! Kato parallel transport along one k-direction and the holonomy logarithm.

use crate::error::{Error, Result};
use crate::grid::Grid1;
use crate::linalg::{adjoint, commutator, cr, expi, from_eig, herm_eig, herm_part, max_abs, opnorm, polar, scale, unitary_eig, CMat, I};
use crate::spectral::sz_nagy;
use faer::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// exp(−iΔ·K(midpoint)) steps with polar re-unitarization.
    #[default]
    Midpoint,
    /// Chained Sz.-Nagy intertwiners between adjacent nodes.
    SzNagyChain,
}

#[derive(Debug, Clone)]
pub struct Propagator {
    pub from: f64,
    pub to: f64,
    pub u: CMat,
}

impl Propagator {
    /// ‖P(to)·U − U·P(from)‖.
    pub fn intertwining<F: Fn(f64) -> Result<CMat>>(&self, p: &F) -> Result<f64> {
        Ok(opnorm(&(p(self.to)? * &self.u - &self.u * p(self.from)?)))
    }
}

/// `i[P′(x), P(x)]` with `P′` the central difference of spacing `delta`.
pub fn kato_kernel<F: Fn(f64) -> Result<CMat>>(p: &F, x: f64, delta: f64) -> Result<CMat> {
    let dp = scale(&(p(x + delta / 2.0)? - p(x - delta / 2.0)?), cr(1.0 / delta));
    kernel_from(&dp, &p(x)?)
}

fn kernel_from(dp: &CMat, pm: &CMat) -> Result<CMat> {
    Ok(herm_part(&scale(&commutator(dp, pm), I)))
}

/// One transport step from node value `pa` at `xa` to `pb` at `xb`.
fn step<F: Fn(f64) -> Result<CMat>>(p: &F, xa: f64, xb: f64, pa: &CMat, pb: &CMat, mode: Mode) -> Result<CMat> {
    match mode {
        Mode::Midpoint => {
            let h = xb - xa;
            let dp = scale(&(pb - pa), cr(1.0 / h));
            let k = kernel_from(&dp, &p(0.5 * (xa + xb))?)?;
            Ok(expi(&k, -h))
        }
        Mode::SzNagyChain => sz_nagy(pb, pa),
    }
}

/// `A(x_j, x_from)` for every node `j` on the path from node `from` to node
/// `to` (inclusive, in path order).
pub fn transport_path<F: Fn(f64) -> Result<CMat>>(p: &F, grid: &Grid1, from: usize, to: usize, mode: Mode) -> Result<Vec<CMat>> {
    let mut pa = p(grid.k(from))?;
    let d = pa.nrows();
    let mut a = Mat::identity(d, d);
    let mut out = vec![a.clone()];
    let mut j = from;
    while j != to {
        let nj = if to > from { j + 1 } else { j - 1 };
        let pb = p(grid.k(nj))?;
        let s = step(p, grid.k(j), grid.k(nj), &pa, &pb, mode)?;
        a = polar(&(s * &a));
        out.push(a.clone());
        pa = pb;
        j = nj;
    }
    Ok(out)
}

/// Propagator between two grid nodes; the ordered product of step factors.
pub fn propagate<F: Fn(f64) -> Result<CMat>>(p: &F, grid: &Grid1, from: usize, to: usize, mode: Mode) -> Result<Propagator> {
    let path = transport_path(p, grid, from, to, mode)?;
    Ok(Propagator { from: grid.k(from), to: grid.k(to), u: path.into_iter().last().expect("path is non-empty") })
}

/// Hermitian `M` with `e^{iM} = A_loop`, eigenphases in (−π, π], computed
/// block by block in the `P0` / `Id − P0` split so that `[M, P0] = 0`.
pub fn holonomy_log(a_loop: &CMat, p0: &CMat, tol: f64) -> Result<CMat> {
    let r = opnorm(&(p0 * a_loop - a_loop * p0));
    if r > tol {
        return Err(Error::FiberNotPreserved { residual: r });
    }
    let e = herm_eig(p0);
    let d = p0.nrows();
    let mut m = Mat::zeros(d, d);
    let split = e.values.iter().filter(|&&x| x < 0.5).count();
    for (lo, hi) in [(0, split), (split, d)] {
        if lo == hi {
            continue;
        }
        let v = Mat::from_fn(d, hi - lo, |i, j| e.vectors[(i, lo + j)]);
        let block = polar(&(adjoint(&v) * a_loop * &v));
        let ue = unitary_eig(&block);
        let lb = from_eig(&ue.vectors, &ue.angles.iter().map(|&t| cr(t)).collect::<Vec<_>>());
        m += &v * lb * adjoint(&v);
    }
    Ok(herm_part(&m))
}

/// Unitarity defect ‖U†U − Id‖ (entrywise max).
pub fn unitarity(u: &CMat) -> f64 {
    max_abs(&(adjoint(u) * u - Mat::<faer::c64>::identity(u.ncols(), u.ncols())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cis, diff_max, eye};
    use crate::model::build_bloch;
    use crate::presets;
    use crate::spectral::{spectral_projection, Window};

    fn diag(d: &[faer::c64]) -> CMat {
        Mat::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { cr(0.0) })
    }

    #[test]
    fn constant_family_gives_identity() {
        let p = |_: f64| Ok(diag(&[cr(1.0), cr(0.0)]));
        let g = Grid1::new(16).unwrap();
        assert_eq!(max_abs(&kato_kernel(&p, 0.1, 1.0 / 16.0).unwrap()), 0.0);
        for mode in [Mode::Midpoint, Mode::SzNagyChain] {
            assert!(diff_max(&propagate(&p, &g, 0, 16, mode).unwrap().u, &eye(2)) < 1e-15);
            assert!(diff_max(&propagate(&p, &g, 5, 5, mode).unwrap().u, &eye(2)) < 1e-15);
        }
    }

    #[test]
    fn kernel_matches_symbolic_derivative() {
        // P(x) = R P0 R⁻¹ with R = exp(2πixG): P′ = 2πi[G, P].
        let gm = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => cr(0.3),
            (1, 1) => cr(-0.2),
            (0, 1) => faer::c64::new(0.4, 0.1),
            _ => faer::c64::new(0.4, -0.1),
        });
        let pz = diag(&[cr(1.0), cr(0.0)]);
        let gmc = gm.clone();
        let p = move |x: f64| {
            let r = expi(&gmc, 2.0 * std::f64::consts::PI * x);
            Ok(&r * &pz * adjoint(&r))
        };
        for &x in &[-0.3, 0.05, 0.41] {
            let px = p(x).unwrap();
            let dp = scale(&commutator(&gm, &px), I * (2.0 * std::f64::consts::PI));
            let exact = herm_part(&scale(&commutator(&dp, &px), I));
            let e1 = diff_max(&kato_kernel(&p, x, 1e-2).unwrap(), &exact);
            let e2 = diff_max(&kato_kernel(&p, x, 5e-3).unwrap(), &exact);
            assert!(e1 < 1e-2 && e2 < e1 / 3.5, "{e1} {e2}");
        }
    }

    #[test]
    fn holonomy_log_branches() {
        let id2 = eye(2);
        let m = holonomy_log(&id2, &id2, 1e-10).unwrap();
        assert!(max_abs(&m) < 1e-14);
        let m = holonomy_log(&diag(&[cr(-1.0), cr(-1.0)]), &id2, 1e-10).unwrap();
        assert!(diff_max(&m, &scale(&id2, cr(std::f64::consts::PI))) < 1e-14);
        let a = diag(&[cis(0.4), cis(-2.9)]);
        let p0 = diag(&[cr(1.0), cr(0.0)]);
        let m = holonomy_log(&a, &p0, 1e-10).unwrap();
        assert!(diff_max(&m, &diag(&[cr(0.4), cr(-2.9)])) < 1e-14);
        let mix = Mat::from_fn(2, 2, |_, _| cr(std::f64::consts::FRAC_1_SQRT_2)) - diag(&[cr(0.0), cr(2f64.sqrt())]);
        assert!(matches!(holonomy_log(&mix, &p0, 1e-10), Err(Error::FiberNotPreserved { .. })));
    }

    #[test]
    fn ssh_loop_intertwining_is_second_order() {
        let h = build_bloch(presets::ssh(1.0, 2.0));
        let res = |n: usize| {
            let g = Grid1::new(n).unwrap();
            let s = spectral_projection(&h, &Window::lowest(1), &[g], 1e-6).unwrap();
            let p = s.slice(0, &[0.0]);
            let a = propagate(&p, &g, 0, n, Mode::Midpoint).unwrap();
            assert!(unitarity(&a.u) < 1e-12);
            a.intertwining(&p).unwrap()
        };
        let (r256, r512) = (res(256), res(512));
        assert!(r256 < 1e-3 && r512 < r256 / 3.5, "{r256} {r512}");
    }
}
