//! Doubly periodic, conjugation-symmetric frames in two dimensions.

use crate::diagnostics::chern_number;
use crate::error::{Error, Result};
use crate::frame1d::{frame_line, onto_range, real_seed, BlochFrame};
use crate::linalg::{adjoint, polar, CMat};
use crate::model::CsFlag;
use crate::spectral::ProjectionSampler;
use crate::tol::Tolerances;
use crate::transport::{transport_path, Mode};
use crate::unilog::{straighten, StraighteningField, UnitaryFamily};

/// Matching matrix together with the transported frame it was read from.
pub struct Matching {
    pub beta: UnitaryFamily,
    /// `Ψ(x, k₂)` indexed `[k₂ node][x node]`.
    pub psi: Vec<Vec<CMat>>,
}

/// Transports the column frame `Ξ(0, k₂)` along k₁ outward from 0 in both
/// directions and reads off `β(k₂)` with `Ψ(1/2, k₂) = Ψ(−1/2, k₂) β(k₂)`.
pub fn matching_matrix(p: &ProjectionSampler, column: &[CMat], tol: &Tolerances, mode: Mode) -> Result<Matching> {
    let (g1, g2) = (p.grids[0], p.grids[1]);
    if column.len() != g2.len() {
        return Err(Error::Input(format!("column frame has {} nodes, grid has {}", column.len(), g2.len())));
    }
    let z = g1.zero();
    let psi = crate::par::try_map(g2.len(), |j| {
        let k2 = g2.k(j);
        let line = p.slice(0, &[0.0, k2]);
        let fwd = transport_path(&line, &g1, z, g1.n, mode)?;
        let bwd = transport_path(&line, &g1, z, 0, mode)?;
        let mut row = Vec::with_capacity(g1.len());
        for i in 0..g1.len() {
            let a = if i >= z { &fwd[i - z] } else { &bwd[z - i] };
            row.push(onto_range(&line(g1.k(i))?, &(a * &column[j]))?);
        }
        Ok::<_, Error>(row)
    })?;
    let values: Vec<CMat> = psi.iter().map(|row| polar(&(adjoint(&row[0]) * &row[g1.n]))).collect();
    let beta = UnitaryFamily::from_values(g2, values, tol.cs.max(1e-9));
    Ok(Matching { beta, psi })
}

/// Output of [`frame_2d`] with the intermediate objects kept for reporting.
pub struct Frame2d {
    pub frame: BlochFrame,
    pub beta: UnitaryFamily,
    pub field: StraighteningField,
}

/// Column frame along k₂, transport along k₁, matching matrix, straightening.
pub fn frame_2d(p: &ProjectionSampler, tol: &Tolerances, mode: Mode) -> Result<Frame2d> {
    if p.dimension() != 2 {
        return Err(Error::Precondition(format!("frame_2d needs a two-dimensional sampler, got d = {}", p.dimension())));
    }
    let cs_res = p.cs_residual()?;
    if p.cs_flag != CsFlag::Holds || cs_res > tol.cs.max(1e-8) {
        let chern = chern_number(p).map(|c| c.chern).unwrap_or(i64::MIN);
        return Err(Error::CsGate { chern, residual: cs_res });
    }
    let (g1, g2) = (p.grids[0], p.grids[1]);
    let col_line = p.slice(1, &[0.0, 0.0]);
    let seed = real_seed(&col_line(0.0)?, p.rank, tol.cs.max(1e-10))?;
    let column = frame_line(&col_line, &g2, &seed, tol, mode)?;
    let m = matching_matrix(p, &column, tol, mode)?;
    let field = straighten(&m.beta, &{
        let mut t = tol.clone();
        t.cs = t.cs.max(1e-9);
        t
    })?;
    let mut values = Vec::with_capacity(g1.len() * g2.len());
    for i in 0..g1.len() {
        let x = g1.k(i);
        for j in 0..g2.len() {
            values.push(&m.psi[j][i] * field.eval(x, j));
        }
    }
    let frame = BlochFrame {
        grids: vec![g1, g2],
        dim: p.dim,
        rank: p.rank,
        values,
        cs: true,
        notes: format!("frame_2d, {mode:?} transport, {}x{} nodes, s = {}, nu = {}", g1.n, g2.n, field.s, field.nu),
    };
    Ok(Frame2d { frame, beta: m.beta, field })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1;
    use crate::linalg::{cr, diff_max, eye};
    use crate::model::{build_bloch, check_cs, Hopping, TightBindingModel};
    use crate::spectral::{spectral_projection, Window};
    use faer::Mat;

    #[test]
    fn constant_projection_gives_constant_frame() {
        let g = Grid1::new(16).unwrap();
        let p0 = Mat::from_fn(3, 3, |i, j| cr(if i == j && i < 2 { 1.0 } else { 0.0 }));
        let p = ProjectionSampler::from_fn(3, 2, vec![g, g], CsFlag::Holds, move |_: &[f64]| Ok(p0.clone()));
        let f = frame_2d(&p, &Tolerances::default(), Mode::Midpoint).unwrap();
        for b in &f.beta.values {
            assert!(diff_max(b, &eye(2)) < 1e-14);
        }
        for v in &f.frame.values {
            assert!(diff_max(v, &f.frame.values[0]) < 1e-14);
        }
    }

    #[test]
    fn product_of_chains_has_diagonal_matching() {
        // SSH along k₁ (sites 0,1, w > v) and along k₂ (sites 2,3, w < v).
        let hop = |from, to, cell: [i64; 2], t: f64| Hopping { from, to, cell: cell.to_vec(), amp: cr(t) };
        let m = TightBindingModel::new(
            2,
            vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 0.5], vec![0.5, 0.5]],
            vec![
                hop(1, 0, [0, 0], 1.0),
                hop(1, 0, [-1, 0], 2.0),
                hop(3, 2, [0, 0], 1.0),
                hop(3, 2, [0, -1], 0.5),
            ],
            1e-12,
        )
        .unwrap();
        let g = Grid1::new(64).unwrap();
        let mut h = build_bloch(m);
        check_cs(&mut h, &[g, g], 1e-10);
        let p = spectral_projection(&h, &Window::lowest(2), &[g, g], 1e-6).unwrap();
        let f = frame_2d(&p, &Tolerances::default(), Mode::Midpoint).unwrap();
        for b in &f.beta.values {
            let e: Vec<f64> = crate::linalg::unitary_eig(b).angles;
            assert!((e[0].abs() - 0.0).abs() < 1e-8 && (e[1].abs() - std::f64::consts::PI).abs() < 1e-8, "{e:?}");
            assert!((b[(0, 1)].norm() + b[(1, 0)].norm()) < 1e-8 || (b[(0, 0)].norm() + b[(1, 1)].norm()) < 1e-8);
        }
    }
}
