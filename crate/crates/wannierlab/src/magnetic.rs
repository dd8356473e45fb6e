//! Peierls-dressed Wannier bases on a finite lattice patch in a weak
//! magnetic field: Gram orthonormalization and transfer onto the perturbed
//! spectral subspace.

use crate::error::{Error, Result};
use crate::linalg::{adjoint, cr, eye, from_eig, herm_eig, herm_eigvals, max_abs, scale, CMat, HermEig};
use crate::model::TightBindingModel;
use crate::wannier::line_fit;
use faer::{c64, Mat};
use serde::Serialize;
use std::sync::Arc;

/// Field profile in units where the constant field is `B ≡ 1`.
#[derive(Clone)]
pub enum Field {
    Constant,
    /// A bounded profile with `‖B‖_{C¹} ≤ 1`.
    Variable(Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Field::Constant => write!(f, "Constant"),
            Field::Variable(_) => write!(f, "Variable"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MagneticConfig {
    pub b: f64,
    pub field: Field,
    pub b_max: f64,
}

impl MagneticConfig {
    pub fn constant(b: f64) -> Self {
        MagneticConfig { b, field: Field::Constant, b_max: 0.05 }
    }

    fn check(&self) -> Result<()> {
        if !(self.b.abs() <= self.b_max) {
            return Err(Error::Input(format!("|b| = {} exceeds b_max = {}", self.b.abs(), self.b_max)));
        }
        Ok(())
    }
}

const GAUSS_ORDER: usize = 32;

/// Gauss–Legendre nodes and weights on [0, 1] (Newton on Legendre roots).
fn gauss_01(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((0.5 * (1.0 - x), 1.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn gauss_table() -> &'static [(f64, f64)] {
    static T: std::sync::OnceLock<Vec<(f64, f64)>> = std::sync::OnceLock::new();
    T.get_or_init(|| gauss_01(GAUSS_ORDER))
}

/// Line integral of the transverse-gauge potential from `xp` to `x`.
/// Antisymmetric bit for bit: the pair is evaluated in a canonical order.
pub fn peierls_phase(x: [f64; 2], xp: [f64; 2], field: &Field) -> f64 {
    match field {
        Field::Constant => 0.5 * (xp[0] * x[1] - x[0] * xp[1]),
        Field::Variable(bf) => {
            if (x[0], x[1]) < (xp[0], xp[1]) {
                return -peierls_phase(xp, x, field);
            }
            line_phase(x, xp, bf.as_ref(), gauss_table())
        }
    }
}

fn line_phase(x: [f64; 2], xp: [f64; 2], bf: &dyn Fn([f64; 2]) -> f64, g: &[(f64, f64)]) -> f64 {
    let dx = [x[0] - xp[0], x[1] - xp[1]];
    let mut phi = 0.0;
    for &(t, wt) in g {
        let y = [xp[0] + t * dx[0], xp[1] + t * dx[1]];
        // A(y) = (∫₀¹ s B(sy) ds)·(−y₂, y₁)
        let s_int: f64 = g.iter().map(|&(s, ws)| ws * s * bf([s * y[0], s * y[1]])).sum();
        phi += wt * s_int * (-y[1] * dx[0] + y[0] * dx[1]);
    }
    phi
}

/// Rectangular block of cells `lo ≤ γ < hi` of a two-dimensional model.
#[derive(Debug, Clone)]
pub struct Patch {
    pub model: Arc<TightBindingModel>,
    pub lo: [i64; 2],
    pub hi: [i64; 2],
}

impl Patch {
    /// Cells `−r ≤ γ_a < r`.
    pub fn centered(model: TightBindingModel, r: i64) -> Result<Self> {
        if model.dimension != 2 {
            return Err(Error::Precondition("magnetic patches need a two-dimensional model".into()));
        }
        if r < 1 {
            return Err(Error::Input(format!("patch half-width must be positive, got {r}")));
        }
        Ok(Patch { model: Arc::new(model), lo: [-r, -r], hi: [r, r] })
    }

    pub fn cells(&self) -> Vec<[i64; 2]> {
        (self.lo[0]..self.hi[0]).flat_map(|a| (self.lo[1]..self.hi[1]).map(move |b| [a, b])).collect()
    }

    pub fn num_cells(&self) -> usize {
        ((self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])) as usize
    }

    pub fn dim(&self) -> usize {
        self.num_cells() * self.model.num_sites()
    }

    pub fn cell_index(&self, c: [i64; 2]) -> Option<usize> {
        if (0..2).all(|a| c[a] >= self.lo[a] && c[a] < self.hi[a]) {
            Some(((c[0] - self.lo[0]) * (self.hi[1] - self.lo[1]) + (c[1] - self.lo[1])) as usize)
        } else {
            None
        }
    }

    pub fn site_index(&self, c: [i64; 2], s: usize) -> Option<usize> {
        self.cell_index(c).map(|i| i * self.model.num_sites() + s)
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        let sites = &self.model.sites;
        self.cells()
            .into_iter()
            .flat_map(|c| sites.iter().map(move |y| [c[0] as f64 + y[0], c[1] as f64 + y[1]]))
            .collect()
    }

    /// Cells at least `margin` cells away from every edge of the patch.
    pub fn interior(&self, margin: i64) -> Vec<[i64; 2]> {
        self.cells()
            .into_iter()
            .filter(|c| (0..2).all(|a| c[a] - self.lo[a] >= margin && self.hi[a] - 1 - c[a] >= margin))
            .collect()
    }
}

/// Hermitian operator on the patch in compressed-row form.
#[derive(Debug, Clone)]
pub struct SparseOp {
    pub n: usize,
    rowptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<c64>,
}

impl SparseOp {
    pub fn apply(&self, x: &[c64], y: &mut [c64]) {
        for i in 0..self.n {
            let mut acc = c64::new(0.0, 0.0);
            for p in self.rowptr[i]..self.rowptr[i + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            y[i] = acc;
        }
    }

    /// `Y = A·X` for `W` interleaved columns.
    pub fn apply_block<const W: usize>(&self, x: &[[c64; W]], y: &mut [[c64; W]]) {
        for i in 0..self.n {
            let mut acc = [c64::new(0.0, 0.0); W];
            for p in self.rowptr[i]..self.rowptr[i + 1] {
                let (v, xr) = (self.vals[p], &x[self.cols[p]]);
                for l in 0..W {
                    acc[l] += v * xr[l];
                }
            }
            y[i] = acc;
        }
    }

    /// `A − μ`, with explicit diagonal entries.
    pub fn shifted(&self, mu: f64) -> SparseOp {
        let mut rowptr = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for i in 0..self.n {
            let mut row: Vec<(usize, c64)> = (self.rowptr[i]..self.rowptr[i + 1]).map(|p| (self.cols[p], self.vals[p])).collect();
            match row.iter_mut().find(|e| e.0 == i) {
                Some(e) => e.1 -= mu,
                None => row.push((i, c64::new(-mu, 0.0))),
            }
            row.sort_by_key(|e| e.0);
            for (j, v) in row {
                cols.push(j);
                vals.push(v);
            }
            rowptr.push(cols.len());
        }
        SparseOp { n: self.n, rowptr, cols, vals }
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = Mat::<c64>::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.rowptr[i]..self.rowptr[i + 1] {
                m[(i, self.cols[p])] += self.vals[p];
            }
        }
        m
    }

    /// Gershgorin bound on the spectral radius of `H − μ`.
    pub fn radius_about(&self, mu: f64) -> f64 {
        (0..self.n)
            .map(|i| {
                (self.rowptr[i]..self.rowptr[i + 1])
                    .map(|p| if self.cols[p] == i { (self.vals[p] - mu).norm() } else { self.vals[p].norm() })
                    .sum::<f64>()
                    + if (self.rowptr[i]..self.rowptr[i + 1]).any(|p| self.cols[p] == i) { 0.0 } else { mu.abs() }
            })
            .fold(0.0, f64::max)
    }
}

/// `H_b` on the patch: each hopping `t(x, x′)` picks up `e^{ibφ(x,x′)}`.
/// Open boundary: bonds leaving the patch are dropped.
pub fn peierls_hamiltonian(patch: &Patch, cfg: &MagneticConfig) -> Result<SparseOp> {
    cfg.check()?;
    let pos = patch.positions();
    let n = patch.dim();
    let mut rows: Vec<Vec<(usize, c64)>> = vec![Vec::new(); n];
    for c in patch.cells() {
        for h in &patch.model.hoppings {
            let to_cell = [c[0] + h.cell[0], c[1] + h.cell[1]];
            let (Some(i), Some(j)) = (patch.site_index(to_cell, h.to), patch.site_index(c, h.from)) else { continue };
            let ph = if cfg.b == 0.0 { c64::new(1.0, 0.0) } else { crate::linalg::cis(cfg.b * peierls_phase(pos[i], pos[j], &cfg.field)) };
            rows[i].push((j, h.amp * ph));
        }
    }
    let mut rowptr = vec![0];
    let (mut cols, mut vals) = (Vec::new(), Vec::new());
    for mut r in rows {
        r.sort_by_key(|e| e.0);
        for (j, v) in r {
            cols.push(j);
            vals.push(v);
        }
        rowptr.push(cols.len());
    }
    Ok(SparseOp { n, rowptr, cols, vals })
}

/// Row-sum bound on `‖H_b − H_0‖` from the bond phases alone.
pub fn perturbation_bound(patch: &Patch, cfg: &MagneticConfig) -> f64 {
    let pos = patch.positions();
    let mut rows = vec![0.0f64; patch.dim()];
    for c in patch.cells() {
        for h in &patch.model.hoppings {
            let to_cell = [c[0] + h.cell[0], c[1] + h.cell[1]];
            let (Some(i), Some(j)) = (patch.site_index(to_cell, h.to), patch.site_index(c, h.from)) else { continue };
            rows[i] += h.amp.norm() * (crate::linalg::cis(cfg.b * peierls_phase(pos[i], pos[j], &cfg.field)) - 1.0).norm();
        }
    }
    rows.into_iter().fold(0.0, f64::max)
}

/// `P = ½(1 − sign(H − μ))` applied to blocks of vectors, with
/// `sign(E) = E·g(E²)` and `g ≈ y^{−1/2}` a Chebyshev interpolant on the
/// gapped interval `[a², R²]`.
#[derive(Debug, Clone)]
pub struct ChebProjector {
    pub h: SparseOp,
    pub mu: f64,
    pub inner: f64,
    pub outer: f64,
    pub coeffs: Vec<f64>,
}

impl ChebProjector {
    /// `inner` is a lower bound on `|E − μ|` over the spectrum.
    pub fn new(h: SparseOp, mu: f64, inner: f64) -> Result<Self> {
        let outer = h.radius_about(mu) * 1.01;
        if !(inner > 0.0) || inner >= outer {
            return Err(Error::GapClosure { k: vec![], gap: inner.max(0.0) });
        }
        let (lo, hi) = (inner * inner, outer * outer);
        let g = |t: f64| (0.5 * (hi + lo) + 0.5 * (hi - lo) * t).powf(-0.5);
        // Coefficients decay geometrically, then sit at rounding noise;
        // cut at the first pair below rounding level of c₀.
        let mut m = 64;
        loop {
            let c = cheb_interp(&g, m);
            let floor = 2e-16 * c[0].abs();
            if let Some(k) = (1..m - 1).find(|&k| c[k].abs() < floor && c[k + 1].abs() < floor) {
                return Ok(ChebProjector { h, mu, inner, outer, coeffs: c[..k].to_vec() });
            }
            if m >= 1 << 14 {
                return Err(Error::Precondition(format!("sign filter did not converge, gap ratio {}", outer / inner)));
            }
            m *= 2;
        }
    }

    /// `Y = ((H − μ)² − (R² + a²)/2)·2/(R² − a²)` on a block of `W`
    /// interleaved columns; `tmp` receives `(H − μ)x`.
    fn t_apply<const W: usize>(&self, hs: &SparseOp, x: &[[c64; W]], tmp: &mut [[c64; W]], out: &mut [[c64; W]]) {
        let (lo, hi) = (self.inner * self.inner, self.outer * self.outer);
        let (s, c) = (2.0 / (hi - lo), (hi + lo) / (hi - lo));
        hs.apply_block(x, tmp);
        hs.apply_block(tmp, out);
        for (o, xv) in out.iter_mut().zip(x) {
            for l in 0..W {
                o[l] = o[l] * s - xv[l] * c;
            }
        }
    }

    fn apply_block<const W: usize>(&self, hs: &SparseOp, x: &[[c64; W]]) -> Vec<[c64; W]> {
        let n = x.len();
        let c = &self.coeffs;
        let z = [c64::new(0.0, 0.0); W];
        let (mut b1, mut b2, mut tb, mut tmp) = (vec![z; n], vec![z; n], vec![z; n], vec![z; n]);
        for k in (1..c.len()).rev() {
            self.t_apply(hs, &b1, &mut tmp, &mut tb);
            for i in 0..n {
                for l in 0..W {
                    let b0 = x[i][l] * c[k] + tb[i][l] * 2.0 - b2[i][l];
                    b2[i][l] = b1[i][l];
                    b1[i][l] = b0;
                }
            }
        }
        self.t_apply(hs, &b1, &mut tmp, &mut tb);
        let gx: Vec<[c64; W]> = (0..n).map(|i| std::array::from_fn(|l| x[i][l] * c[0] + tb[i][l] - b2[i][l])).collect();
        hs.apply_block(&gx, &mut tmp);
        (0..n).map(|i| std::array::from_fn(|l| (x[i][l] - tmp[i][l]) * 0.5)).collect()
    }

    /// `P·X`, in blocks of eight columns, parallel over blocks.
    pub fn apply(&self, x: &CMat) -> CMat {
        const W: usize = 8;
        let hs = self.h.shifted(self.mu);
        let (n, m) = (x.nrows(), x.ncols());
        let blocks = crate::par::map(m.div_ceil(W), |blk| {
            let xb: Vec<[c64; W]> =
                (0..n).map(|i| std::array::from_fn(|l| if blk * W + l < m { x[(i, blk * W + l)] } else { c64::new(0.0, 0.0) })).collect();
            self.apply_block(&hs, &xb)
        });
        Mat::from_fn(n, m, |i, j| blocks[j / W][i][j % W])
    }

    /// Sampled idempotency `max_j ‖P(PX) − PX‖` over the given columns; an
    /// eigenvalue inside the assumed gap makes it large.
    pub fn idempotency(&self, px: &CMat, sample: &[usize]) -> f64 {
        let sub = Mat::from_fn(px.nrows(), sample.len(), |i, j| px[(i, sample[j])]);
        max_abs(&(self.apply(&sub) - &sub))
    }
}

/// Coefficients of the degree `m − 1` interpolant at Chebyshev points.
fn cheb_interp(f: &impl Fn(f64) -> f64, m: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let fx: Vec<f64> = (0..m).map(|j| f((PI * (j as f64 + 0.5) / m as f64).cos())).collect();
    (0..m)
        .map(|k| {
            let s: f64 = (0..m).map(|j| fx[j] * (PI * k as f64 * (j as f64 + 0.5) / m as f64).cos()).sum();
            s * if k == 0 { 1.0 } else { 2.0 } / m as f64
        })
        .collect()
}

/// Dense reference: `P = Σ_{E < μ} |v⟩⟨v|` from a full eigendecomposition.
pub fn dense_projector(h: &SparseOp, mu: f64) -> CMat {
    let e = herm_eig(&h.to_dense());
    let d: Vec<c64> = e.values.iter().map(|&x| cr(if x < mu { 1.0 } else { 0.0 })).collect();
    from_eig(&e.vectors, &d)
}

/// Functions `w_{j,γ}` on the patch: column `c·N + j` for cell index `c`.
#[derive(Debug, Clone)]
pub struct LocalizedBasis {
    pub patch: Patch,
    pub rank: usize,
    pub values: CMat,
    /// Fitted decay rate per cell distance, from the function nearest the origin.
    pub alpha: f64,
}

impl LocalizedBasis {
    pub fn column(&self, cell: [i64; 2], j: usize) -> Option<usize> {
        self.patch.cell_index(cell).map(|c| c * self.rank + j)
    }

    pub fn orthonormality(&self) -> f64 {
        max_abs(&(adjoint(&self.values) * &self.values - eye(self.values.ncols())))
    }

    /// CSV rows `(j, γ₁, γ₂, x, y, re, im)` for the functions at `cell`.
    pub fn to_csv(&self, cell: [i64; 2]) -> String {
        let pos = self.patch.positions();
        let mut s = String::from("j,gamma1,gamma2,x,y,re,im\n");
        for j in 0..self.rank {
            let Some(col) = self.column(cell, j) else { continue };
            for (i, p) in pos.iter().enumerate() {
                let v = self.values[(i, col)];
                s += &format!(
                    "{},{},{},{},{},{},{}\n",
                    j + 1,
                    cell[0],
                    cell[1],
                    crate::output::fmt(p[0]),
                    crate::output::fmt(p[1]),
                    crate::output::fmt(v.re),
                    crate::output::fmt(v.im)
                );
            }
        }
        s
    }
}

/// Decay rate of `|w|` against the cell distance from `cell`.
fn fit_alpha(patch: &Patch, w: &CMat, col: usize, cell: [i64; 2]) -> f64 {
    let nsite = patch.model.num_sites();
    let mut shells: std::collections::BTreeMap<i64, f64> = Default::default();
    for (ci, c) in patch.cells().iter().enumerate() {
        let r = (c[0] - cell[0]).abs().max((c[1] - cell[1]).abs());
        let m: f64 = (0..nsite).map(|s| w[(ci * nsite + s, col)].norm_sqr()).sum();
        let e = shells.entry(r).or_default();
        *e = e.max(m.sqrt());
    }
    let peak = shells.values().cloned().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> =
        shells.into_iter().filter(|(_, v)| *v > 1e-13 * peak).map(|(r, v)| (r as f64, v.ln())).collect();
    if pts.len() < 3 {
        return f64::INFINITY;
    }
    -line_fit(&pts).0
}

/// Zero-field basis: Löwdin orthonormalization of `P₀Φ`, where `Φ` places
/// the lowest `N` eigenvectors of the intra-cell block (made real) in every
/// cell and `P₀` projects below `mu`.
pub fn zero_field_basis(patch: &Patch, rank: usize, mu: f64, gap_half: f64) -> Result<LocalizedBasis> {
    let m = &patch.model;
    let d = m.num_sites();
    let mut onsite = Mat::<c64>::zeros(d, d);
    for h in m.hoppings.iter().filter(|h| h.cell.iter().all(|&x| x == 0)) {
        onsite[(h.to, h.from)] += h.amp;
    }
    let e = herm_eig(&onsite);
    let low = Mat::from_fn(d, rank, |i, j| e.vectors[(i, j)]);
    let p_low = &low * adjoint(&low);
    let orb = crate::frame1d::real_seed(&p_low, rank, 1e-10).unwrap_or(low);
    let nc = patch.num_cells();
    let mut phi = Mat::<c64>::zeros(patch.dim(), nc * rank);
    for c in 0..nc {
        for j in 0..rank {
            for s in 0..d {
                phi[(c * d + s, c * rank + j)] = orb[(s, j)];
            }
        }
    }
    let h0 = peierls_hamiltonian(patch, &MagneticConfig::constant(0.0))?;
    let proj = ChebProjector::new(h0, mu, gap_half)?;
    let pphi = proj.apply(&phi);
    // Φ has one D-block per column, so Φ†(P₀Φ) is a gather.
    let g = Mat::from_fn(nc * rank, nc * rank, |r, col| {
        let (c, j) = (r / rank, r % rank);
        (0..d).map(|s| orb[(s, j)].conj() * pphi[(c * d + s, col)]).sum::<c64>()
    });
    let g = scale(&(&g + adjoint(&g)), cr(0.5));
    let ge = herm_eig(&g);
    if ge.values[0] <= 1e-8 {
        return Err(Error::NotPositive { min_eig: ge.values[0] });
    }
    let inv = from_eig(&ge.vectors, &ge.values.iter().map(|&l| cr(l.powf(-0.5))).collect::<Vec<_>>());
    let w = pphi * inv;
    let origin = patch.cell_index([0, 0]).unwrap_or(0) * rank;
    let alpha = fit_alpha(patch, &w, origin, [0, 0]);
    Ok(LocalizedBasis { patch: patch.clone(), rank, values: w, alpha })
}

/// Columns `e^{ibφ(·,γ)}w_{j,γ}`.
pub fn dress(w: &LocalizedBasis, cfg: &MagneticConfig) -> CMat {
    let pos = w.patch.positions();
    let cells = w.patch.cells();
    let mut out = w.values.clone();
    if cfg.b == 0.0 {
        return out;
    }
    for (ci, c) in cells.iter().enumerate() {
        let g = [c[0] as f64, c[1] as f64];
        for j in 0..w.rank {
            let col = ci * w.rank + j;
            for (i, x) in pos.iter().enumerate() {
                out[(i, col)] *= crate::linalg::cis(cfg.b * peierls_phase(*x, g, &cfg.field));
            }
        }
    }
    out
}

/// `M_b = W_b†W_b` over the index set `(γ, j)`; rejects `min σ(M_b) < 1/2`.
pub fn gram_matrix(w: &LocalizedBasis, cfg: &MagneticConfig) -> Result<(CMat, f64)> {
    let (m, e) = gram_eig(w, cfg)?;
    Ok((m, e.values[0]))
}

fn gram_eig(w: &LocalizedBasis, cfg: &MagneticConfig) -> Result<(CMat, HermEig)> {
    cfg.check()?;
    let wb = dress(w, cfg);
    let m = adjoint(&wb) * &wb;
    let m = scale(&(&m + adjoint(&m)), cr(0.5));
    let e = herm_eig(&m);
    if e.values[0] < 0.5 {
        return Err(Error::FieldTooStrong { min_eig: e.values[0] });
    }
    Ok((m, e))
}

fn inv_sqrt_from(e: &HermEig) -> CMat {
    from_eig(&e.vectors, &e.values.iter().map(|&l| cr(l.powf(-0.5))).collect::<Vec<_>>())
}

/// `M^{−1/2}` by eigendecomposition.
pub fn inv_sqrt_eig(m: &CMat) -> CMat {
    inv_sqrt_from(&herm_eig(m))
}

/// `M^{−1/2} = Σ_n binom(−1/2, n)(M − Id)^n`, summed until the term drops
/// below `tol`. Needs `‖M − Id‖ < 1`.
pub fn inv_sqrt_series(m: &CMat, tol: f64) -> Result<CMat> {
    let ev = herm_eigvals(&(m - eye(m.nrows())));
    let r = ev.first().map_or(0.0, |v| v.abs()).max(ev.last().map_or(0.0, |v| v.abs()));
    series_with_radius(m, r, tol)
}

/// The series given `r ≥ ‖M − Id‖`.
fn series_with_radius(m: &CMat, r: f64, tol: f64) -> Result<CMat> {
    if r >= 1.0 {
        return Err(Error::Precondition(format!("power series needs ||M - Id|| < 1, got {r}")));
    }
    let n = m.nrows();
    let x = m - eye(n);
    let mut sum = eye(n);
    let mut term = eye(n);
    let mut coef = 1.0;
    for k in 1..10_000 {
        // |binom(−1/2, k)| ≤ 1, so the tail after k − 1 is at most r^k/(1 − r).
        if r.powi(k as i32) / (1.0 - r) < tol {
            break;
        }
        coef *= (-0.5 - (k - 1) as f64) / k as f64;
        term = &term * &x;
        sum += &scale(&term, cr(coef));
    }
    Ok(sum)
}

/// Output of [`ortho_magnetic_basis`].
#[derive(Debug, Clone)]
pub struct Ortho {
    pub psi: LocalizedBasis,
    pub inv_sqrt: CMat,
    pub min_eig: f64,
    /// `max |M_b − Id|` entrywise.
    pub gram_deviation: f64,
}

/// `Ψ_b = W_b M_b^{−1/2}`.
pub fn ortho_magnetic_basis(w: &LocalizedBasis, cfg: &MagneticConfig) -> Result<Ortho> {
    let (m, e) = gram_eig(w, cfg)?;
    let inv = inv_sqrt_from(&e);
    let psi = dress(w, cfg) * &inv;
    Ok(Ortho {
        psi: LocalizedBasis { values: psi, ..w.clone() },
        inv_sqrt: inv,
        min_eig: e.values[0],
        gram_deviation: max_abs(&(m - eye(e.values.len()))),
    })
}

#[derive(Debug, Clone)]
pub struct Transfer {
    pub xi: LocalizedBasis,
    /// `‖Π_b − P_b‖` from the smallest eigenvalue of `Ψ†P_bΨ`.
    pub pi_minus_p: f64,
    /// Sampled `‖P_b Ξ − Ξ‖`.
    pub range: f64,
}

/// `Ξ = U_bΨ` with `U_b` the Sz.-Nagy intertwiner of `Π_b = ΨΨ†` and `P_b`.
/// On `Ran Π_b` it reduces to `P_bΨ(Ψ†P_bΨ)^{−1/2}`.
pub fn magnetic_transfer(proj: &ChebProjector, psi: &LocalizedBasis) -> Result<Transfer> {
    let ppsi = proj.apply(&psi.values);
    // With Ψ†Ψ = Id, Ψ†P_bΨ = Id − Q†Q for Q = (1 − P_b)Ψ, and Q is small:
    // forming Q†Q keeps ‖Π_b − P_b‖² to relative precision.
    let q = &psi.values - &ppsi;
    let e = adjoint(&q) * &q;
    let e = scale(&(&e + adjoint(&e)), cr(0.5));
    let top = herm_eigvals(&e).last().copied().unwrap_or(0.0).max(0.0);
    let dist = top.sqrt();
    if dist >= 1.0 - 1e-12 {
        return Err(Error::ProjectionsTooFar { distance: dist });
    }
    let g = eye(e.nrows()) - &e;
    let inv = if top < 0.05 { series_with_radius(&g, top, 1e-16)? } else { inv_sqrt_eig(&g) };
    let xi = &ppsi * inv;
    let nc = xi.ncols();
    let sample: Vec<usize> = (0..8).map(|i| (i * nc) / 8 + nc / 16).filter(|&c| c < nc).collect();
    let range = proj.idempotency(&xi, &sample);
    Ok(Transfer { xi: LocalizedBasis { values: xi, ..psi.clone() }, pi_minus_p: dist, range })
}

/// Cells far enough from the patch edge for truncation below `tol`:
/// `max(3/α, ln(1/tol)/α)` cells.
pub fn interior_margin(alpha: f64, tol: f64) -> i64 {
    if !alpha.is_finite() {
        return 1;
    }
    (3.0 / alpha).max((1.0 / tol).ln() / alpha).ceil() as i64
}

/// `max_{j, γ ∈ cells} ‖Ξ_{j,γ} − e^{ibφ(·,γ)}w_{j,γ}‖`.
pub fn closeness(xi: &LocalizedBasis, w: &LocalizedBasis, cfg: &MagneticConfig, cells: &[[i64; 2]]) -> f64 {
    let wb = dress(w, cfg);
    let mut worst = 0.0f64;
    for &c in cells {
        for j in 0..xi.rank {
            let col = xi.column(c, j).expect("cell in patch");
            let d: f64 = (0..wb.nrows()).map(|i| (xi.values[(i, col)] - wb[(i, col)]).norm_sqr()).sum();
            worst = worst.max(d.sqrt());
        }
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceReport {
    pub b: f64,
    pub margin: i64,
    pub interior_cells: usize,
    /// max over interior γ of ‖Ξ_γ − e^{ibφ(·,γ)}Ξ₀(· − γ)‖.
    pub translation: f64,
    /// ‖conj Ξ₀(b) − Ξ₀(−b)‖.
    pub conjugation: f64,
    /// Spread of `M^{−1/2}(γ,γ′)e^{−ibφ(γ,γ′)}` over pairs with equal γ − γ′.
    pub gram_structure: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Magnetic translation covariance and conjugation on interior cells.
/// Only meaningful for a constant field.
pub fn covariance_checks(
    xi_plus: &LocalizedBasis,
    xi_minus: &LocalizedBasis,
    inv_plus: &CMat,
    cfg: &MagneticConfig,
    tol: f64,
) -> Result<CovarianceReport> {
    if !matches!(cfg.field, Field::Constant) {
        return Err(Error::Precondition("covariance identities hold only for a constant field".into()));
    }
    let patch = &xi_plus.patch;
    let nsite = patch.model.num_sites();
    let margin = interior_margin(xi_plus.alpha, tol);
    let interior = patch.interior(margin);
    let pos = patch.positions();
    let cells = patch.cells();
    let mut translation = 0.0f64;
    for &g in &interior {
        let gf = [g[0] as f64, g[1] as f64];
        for j in 0..xi_plus.rank {
            let col = xi_plus.column(g, j).unwrap();
            let col0 = xi_plus.column([0, 0], j).ok_or_else(|| Error::Precondition("origin cell not in patch".into()))?;
            let mut d = 0.0;
            for (ci, c) in cells.iter().enumerate() {
                let shifted = [c[0] - g[0], c[1] - g[1]];
                for s in 0..nsite {
                    let i = ci * nsite + s;
                    let rhs = match patch.site_index(shifted, s) {
                        Some(i0) => xi_plus.values[(i0, col0)] * crate::linalg::cis(cfg.b * peierls_phase(pos[i], gf, &cfg.field)),
                        None => c64::new(0.0, 0.0),
                    };
                    d += (xi_plus.values[(i, col)] - rhs).norm_sqr();
                }
            }
            translation = translation.max(d.sqrt());
        }
    }
    let mut conjugation = 0.0f64;
    for j in 0..xi_plus.rank {
        let col0 = xi_plus.column([0, 0], j).unwrap();
        let d: f64 = (0..pos.len()).map(|i| (xi_plus.values[(i, col0)].conj() - xi_minus.values[(i, col0)]).norm_sqr()).sum();
        conjugation = conjugation.max(d.sqrt());
    }
    // Group interior pairs by γ − γ′ and compare against the pair at the origin.
    let mut reference: std::collections::HashMap<[i64; 2], c64> = Default::default();
    let mut gram_structure = 0.0f64;
    let r = xi_plus.rank;
    for &g in &interior {
        for &gp in &interior {
            let diff = [g[0] - gp[0], g[1] - gp[1]];
            if diff[0].abs() > margin || diff[1].abs() > margin {
                continue;
            }
            let (a, bcol) = (xi_plus.column(g, 0).unwrap(), xi_plus.column(gp, 0).unwrap());
            let ph = crate::linalg::cis(-cfg.b * peierls_phase([g[0] as f64, g[1] as f64], [gp[0] as f64, gp[1] as f64], &cfg.field));
            for j in 0..r {
                for jp in 0..r {
                    let v = inv_plus[(a + j, bcol + jp)] * ph;
                    let key = [diff[0] * 64 + (j * r + jp) as i64, diff[1]];
                    match reference.get(&key) {
                        Some(v0) => gram_structure = gram_structure.max((v - v0).norm()),
                        None => {
                            reference.insert(key, v);
                        }
                    }
                }
            }
        }
    }
    let pass = translation < tol && conjugation < tol && gram_structure < tol;
    Ok(CovarianceReport {
        b: cfg.b,
        margin,
        interior_cells: interior.len(),
        translation,
        conjugation,
        gram_structure,
        tolerance: tol,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub b: f64,
    pub gram_min_eig: f64,
    pub gram_deviation: f64,
    pub psi_closeness: f64,
    pub pi_minus_p: f64,
    pub closeness: f64,
    pub range: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub patch_cells: [i64; 2],
    pub mu: f64,
    pub gap_half: f64,
    pub margin: i64,
    pub interior_cells: usize,
    pub alpha: f64,
    pub points: Vec<SweepPoint>,
    pub slope_gram: f64,
    pub slope_psi_closeness: f64,
    pub slope_pi_minus_p: f64,
    pub slope_closeness: f64,
    pub slope_tolerance: f64,
    pub range_tolerance: f64,
}

/// Gap of the bulk Bloch bands between band `rank` and `rank + 1`, sampled
/// on an `n × n` grid: `(μ, half-width)`.
pub fn bulk_gap(model: &TightBindingModel, rank: usize, n: usize) -> Result<(f64, f64)> {
    let h = crate::model::build_bloch(model.clone());
    if rank == 0 || rank >= h.dim() {
        return Err(Error::Input(format!("rank {rank} must be between 1 and {}", h.dim() - 1)));
    }
    let g = crate::grid::Grid1::new(n)?;
    let e = crate::par::map(n * n, |f| {
        let ev = crate::linalg::herm_eigvals(&h.eval(&[g.k(f / n), g.k(f % n)]));
        (ev[rank - 1], ev[rank])
    });
    let top = e.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let bottom = e.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if bottom <= top {
        return Err(Error::GapClosure { k: vec![], gap: bottom - top });
    }
    Ok((0.5 * (top + bottom), 0.5 * (bottom - top)))
}

/// Everything a b-sweep shares: patch, band count, gap, field and the
/// truncation tolerance that sets the interior margin.
#[derive(Debug, Clone)]
pub struct Setup {
    pub patch: Patch,
    pub rank: usize,
    pub mu: f64,
    /// Half-width of the zero-field gap around `mu`, with a safety factor.
    pub gap_half: f64,
    pub field: Field,
    pub tol: f64,
}

impl Setup {
    /// Patch of `2·radius` cells per side; gap read off the bulk bands.
    pub fn new(model: TightBindingModel, rank: usize, radius: i64, field: Field, tol: f64) -> Result<Self> {
        let (mu, half) = bulk_gap(&model, rank, 64)?;
        Ok(Setup { patch: Patch::centered(model, radius)?, rank, mu, gap_half: 0.9 * half, field, tol })
    }

    pub fn config(&self, b: f64) -> MagneticConfig {
        MagneticConfig { b, field: self.field.clone(), b_max: 0.05 }
    }

    pub fn zero_field(&self) -> Result<LocalizedBasis> {
        zero_field_basis(&self.patch, self.rank, self.mu, self.gap_half)
    }

    /// `P_b` as a sign filter; the gap is shrunk by the bond-phase bound.
    pub fn projector(&self, cfg: &MagneticConfig) -> Result<ChebProjector> {
        let inner = self.gap_half - perturbation_bound(&self.patch, cfg);
        ChebProjector::new(peierls_hamiltonian(&self.patch, cfg)?, self.mu, inner)
    }

    /// Gram step and transfer at one coupling.
    pub fn run(&self, w: &LocalizedBasis, b: f64) -> Result<(Ortho, Transfer)> {
        let cfg = self.config(b);
        let o = ortho_magnetic_basis(w, &cfg)?;
        let proj = self.projector(&cfg)?;
        let t = magnetic_transfer(&proj, &o.psi)?;
        if t.range > RANGE_TOL {
            return Err(Error::GapClosure { k: vec![], gap: proj.inner });
        }
        Ok((o, t))
    }
}

const RANGE_TOL: f64 = 1e-9;

/// Zero-field basis, then for each `b` the Gram step and transfer, with
/// distances measured on the interior and log–log slopes against `|b|`.
pub fn sweep(setup: &Setup, bs: &[f64]) -> Result<(SweepReport, LocalizedBasis, Vec<Transfer>)> {
    let w = setup.zero_field()?;
    let margin = interior_margin(w.alpha, setup.tol);
    let interior = setup.patch.interior(margin);
    let runs = crate::par::try_map(bs.len(), |i| {
        let b = bs[i];
        let cfg = setup.config(b);
        let (o, t) = setup.run(&w, b)?;
        let point = SweepPoint {
            b,
            gram_min_eig: o.min_eig,
            gram_deviation: o.gram_deviation,
            psi_closeness: closeness(&o.psi, &w, &cfg, &interior),
            pi_minus_p: t.pi_minus_p,
            closeness: closeness(&t.xi, &w, &cfg, &interior),
            range: t.range,
        };
        Ok::<_, Error>((point, t))
    })?;
    let (points, transfers): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let slope = |f: &dyn Fn(&SweepPoint) -> f64| {
        let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.b != 0.0).map(|p| (p.b.abs().ln(), f(p).ln())).collect();
        if pts.len() >= 2 {
            line_fit(&pts).0
        } else {
            f64::NAN
        }
    };
    let report = SweepReport {
        patch_cells: [setup.patch.hi[0] - setup.patch.lo[0], setup.patch.hi[1] - setup.patch.lo[1]],
        mu: setup.mu,
        gap_half: setup.gap_half,
        margin,
        interior_cells: interior.len(),
        alpha: w.alpha,
        slope_gram: slope(&|p| p.gram_deviation),
        slope_psi_closeness: slope(&|p| p.psi_closeness),
        slope_pi_minus_p: slope(&|p| p.pi_minus_p),
        slope_closeness: slope(&|p| p.closeness),
        slope_tolerance: 0.15,
        range_tolerance: RANGE_TOL,
        points,
    };
    Ok((report, w, transfers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::diff_max;
    use crate::presets;

    #[test]
    fn phase_examples() {
        assert_eq!(peierls_phase([1.0, 0.0], [0.0, 1.0], &Field::Constant), -0.5);
        assert_eq!(peierls_phase([0.3, 0.7], [0.3, 0.7], &Field::Constant), 0.0);
        let unit = Field::Variable(Arc::new(|_| 1.0));
        let (x, y) = ([0.7, -1.2], [2.5, 0.4]);
        assert!((peierls_phase(x, y, &unit) - peierls_phase(x, y, &Field::Constant)).abs() < 1e-12);
        assert_eq!(peierls_phase(x, y, &unit), -peierls_phase(y, x, &unit));
    }

    #[test]
    fn variable_quadrature_is_converged() {
        let bf = |x: [f64; 2]| 0.5 * x[0].sin() * (0.7 * x[1]).cos();
        let fine = gauss_01(64);
        for (x, y) in [([3.2, -1.5], [-2.0, 4.1]), ([19.75, 0.5], [-19.25, -18.5])] {
            let d = line_phase(x, y, &bf, gauss_table()) - line_phase(x, y, &bf, &fine);
            assert!(d.abs() < 1e-10, "{d}");
        }
    }

    #[test]
    fn gauss_rule_is_exact_for_polynomials() {
        let g = gauss_01(GAUSS_ORDER);
        let s: f64 = g.iter().map(|&(x, w)| w * x.powi(21)).sum();
        assert!((s - 1.0 / 22.0).abs() < 1e-14);
    }

    #[test]
    fn zero_field_leaves_hamiltonian_unchanged() {
        let p = Patch::centered(presets::ssh_stack(1.0, 0.1, 0.1, 0.1, 0.3), 3).unwrap();
        let h0 = peierls_hamiltonian(&p, &MagneticConfig::constant(0.0)).unwrap().to_dense();
        for c in p.cells() {
            for s in 0..2 {
                let i = p.site_index(c, s).unwrap();
                for (cc, ss, t) in [([c[0], c[1] + 1], s, 0.1)] {
                    if let Some(j) = p.site_index(cc, ss) {
                        assert_eq!(h0[(j, i)], cr(t));
                    }
                }
            }
        }
        assert!(diff_max(&h0, &adjoint(&h0)) == 0.0);
    }

    #[test]
    fn plaquette_spectrum_depends_on_flux_only() {
        // Square loop of four sites, constant field, two placements.
        let m = TightBindingModel::new(2, vec![vec![0.0, 0.0]], vec![crate::model::Hopping { from: 0, to: 0, cell: vec![1, 0], amp: cr(1.0) }, crate::model::Hopping { from: 0, to: 0, cell: vec![0, 1], amp: cr(1.0) }], 1e-12).unwrap();
        let spec = |lo: [i64; 2]| {
            let p = Patch { model: Arc::new(m.clone()), lo, hi: [lo[0] + 2, lo[1] + 2] };
            herm_eig(&peierls_hamiltonian(&p, &MagneticConfig::constant(0.03)).unwrap().to_dense()).values
        };
        let (a, b) = (spec([0, 0]), spec([5, -7]));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // Flux 0.03 through the unit square: eigenvalues 2cos((0.03 + 2πm)/4).
        let mut exact: Vec<f64> = (0..4).map(|m| 2.0 * ((0.03 + 2.0 * std::f64::consts::PI * m as f64) / 4.0).cos()).collect();
        exact.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (x, y) in a.iter().zip(&exact) {
            assert!((x - y).abs() < 1e-12, "{a:?} {exact:?}");
        }
    }

    #[test]
    fn chebyshev_projector_matches_dense() {
        let p = Patch::centered(presets::ssh_stack(1.0, 0.1, 0.1, 0.1, 0.3), 3).unwrap();
        let cfg = MagneticConfig::constant(0.02);
        let h = peierls_hamiltonian(&p, &cfg).unwrap();
        let dense = dense_projector(&h, 0.0);
        let proj = ChebProjector::new(h, 0.0, 0.5).unwrap();
        let x = Mat::from_fn(p.dim(), 5, |i, j| c64::new(((i * 3 + j) % 7) as f64 - 3.0, ((i + 2 * j) % 5) as f64) * 0.25);
        let d = diff_max(&proj.apply(&x), &(&dense * &x));
        assert!(d < 1e-12, "{d} {}", proj.coeffs.len());
    }

    #[test]
    fn zero_field_basis_is_orthonormal_and_real() {
        let p = Patch::centered(presets::ssh_stack(1.0, 0.1, 0.1, 0.1, 0.3), 4).unwrap();
        let w = zero_field_basis(&p, 1, 0.0, 0.5).unwrap();
        assert!(w.orthonormality() < 1e-12);
        assert!(w.values.col_iter().all(|c| c.iter().all(|z| z.im == 0.0)));
        assert!(w.alpha > 1.0, "{}", w.alpha);
        let (m, min_eig) = gram_matrix(&w, &MagneticConfig::constant(0.0)).unwrap();
        assert!(diff_max(&m, &eye(m.nrows())) < 1e-13 && min_eig > 0.99);
        let o = ortho_magnetic_basis(&w, &MagneticConfig::constant(0.0)).unwrap();
        assert!(diff_max(&o.psi.values, &w.values) < 1e-13);
    }

    #[test]
    fn series_agrees_with_eigendecomposition() {
        let p = Patch::centered(presets::ssh_stack(1.0, 0.1, 0.1, 0.1, 0.3), 4).unwrap();
        let w = zero_field_basis(&p, 1, 0.0, 0.5).unwrap();
        let (m, _) = gram_matrix(&w, &MagneticConfig::constant(0.01)).unwrap();
        assert!(diff_max(&inv_sqrt_eig(&m), &inv_sqrt_series(&m, 1e-15).unwrap()) < 1e-12);
    }

    #[test]
    fn small_sweep_scales_linearly() {
        let setup = Setup::new(presets::ssh_stack(1.0, 0.1, 0.1, 0.1, 0.3), 1, 6, Field::Constant, 1e-3).unwrap();
        let (r, w, t) = sweep(&setup, &[1e-3, 4e-3, 1e-2]).unwrap();
        assert!(r.interior_cells > 0);
        for s in [r.slope_gram, r.slope_psi_closeness, r.slope_pi_minus_p, r.slope_closeness] {
            assert!((s - 1.0).abs() < 0.1, "{r:?}");
        }
        let o = ortho_magnetic_basis(&w, &setup.config(1e-2)).unwrap();
        assert!(o.psi.orthonormality() < 1e-10);
        assert!(t[2].xi.orthonormality() < 1e-10);
        assert!(r.points.iter().all(|p| p.range < 1e-9 && p.gram_min_eig > 0.5));
    }

    #[test]
    fn strong_field_is_rejected() {
        let p = Patch::centered(presets::ssh_stack(1.0, 0.1, 0.1, 0.1, 0.3), 2).unwrap();
        let cfg = MagneticConfig { b: 0.1, field: Field::Constant, b_max: 0.05 };
        assert!(matches!(peierls_hamiltonian(&p, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn variable_field_refuses_covariance() {
        let p = Patch::centered(presets::ssh_stack(1.0, 0.1, 0.1, 0.1, 0.3), 2).unwrap();
        let w = zero_field_basis(&p, 1, 0.0, 0.5).unwrap();
        let cfg = MagneticConfig { b: 0.01, field: Field::Variable(Arc::new(|x| (0.1 * x[0]).sin())), b_max: 0.05 };
        assert!(matches!(covariance_checks(&w, &w, &eye(w.values.ncols()), &cfg, 1e-6), Err(Error::Precondition(_))));
    }
}
