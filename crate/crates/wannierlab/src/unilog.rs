//! Logarithms of periodic unitary families with the transposition symmetry
//! ᵗβ(k) = β(−k), regularization, and the two-step straightening.

use crate::error::{Error, Result};
use crate::grid::Grid1;
use crate::linalg::{
    adjoint, arc_dist, cayley, cis, conj, cr, diff_max, expi, eye, from_eig, herm_eig, herm_fn, herm_part, opnorm,
    pivoted_gram_schmidt, polar, principal_arg, scale, transpose, unitary_eig, wrap_angle, CMat, UnitaryEig,
};
use crate::spectral::inv_sqrt_psd;
use crate::tol::Tolerances;
use faer::{c64, Mat};
use std::f64::consts::PI;

/// Periodic family of N×N unitaries on the nodes of a symmetric grid.
/// Node `n` is a copy of node `0`.
#[derive(Debug, Clone)]
pub struct UnitaryFamily {
    pub grid: Grid1,
    pub values: Vec<CMat>,
    pub cs_prime: bool,
}

#[derive(Debug, Clone)]
pub struct HermitianFamily {
    pub grid: Grid1,
    pub values: Vec<CMat>,
}

impl UnitaryFamily {
    /// Samples `f` on nodes `0..n` and identifies node `n` with node `0`.
    pub fn from_fn(grid: Grid1, f: impl Fn(f64) -> CMat, tol_cs: f64) -> Self {
        let mut values: Vec<CMat> = (0..grid.n).map(|j| f(grid.k(j))).collect();
        values.push(values[0].clone());
        Self::from_values(grid, values, tol_cs)
    }

    pub fn from_values(grid: Grid1, mut values: Vec<CMat>, tol_cs: f64) -> Self {
        assert_eq!(values.len(), grid.len(), "one value per grid node");
        values[grid.n] = values[0].clone();
        let mut out = UnitaryFamily { grid, values, cs_prime: false };
        out.cs_prime = out.cs_residual() <= tol_cs;
        out
    }

    pub fn size(&self) -> usize {
        self.values[0].nrows()
    }

    /// max_k ‖ᵗβ(k) − β(−k)‖.
    pub fn cs_residual(&self) -> f64 {
        (0..self.grid.len())
            .map(|j| diff_max(&transpose(&self.values[j]), &self.values[self.grid.mirror(j)]))
            .fold(0.0, f64::max)
    }

    pub fn unitarity(&self) -> f64 {
        let id = eye(self.size());
        self.values.iter().map(|b| diff_max(&(adjoint(b) * b), &id)).fold(0.0, f64::max)
    }
}

impl HermitianFamily {
    /// max_k ‖e^{ih(k)} − β(k)‖.
    pub fn exp_residual(&self, beta: &UnitaryFamily) -> f64 {
        self.values.iter().zip(&beta.values).map(|(h, b)| diff_max(&expi(h, 1.0), b)).fold(0.0, f64::max)
    }

    /// max_k ‖ᵗh(k) − h(−k)‖.
    pub fn cs_residual(&self) -> f64 {
        (0..self.grid.len())
            .map(|j| diff_max(&transpose(&self.values[j]), &self.values[self.grid.mirror(j)]))
            .fold(0.0, f64::max)
    }

    pub fn periodicity(&self) -> f64 {
        diff_max(&self.values[0], &self.values[self.grid.n])
    }
}

/// The 2×2 rotation by angle 2πk, a family with degenerate spectrum at the
/// integers and half-integers and no continuous periodic logarithm.
pub fn rotation_family(k: f64) -> CMat {
    let (s, c) = (2.0 * PI * k).sin_cos();
    Mat::from_fn(2, 2, |i, j| {
        cr(match (i, j) {
            (0, 0) | (1, 1) => c,
            (0, 1) => s,
            _ => -s,
        })
    })
}

/// Winding number of a nonvanishing scalar family sampled on the grid.
pub fn winding(f: &[c64], tol_pd: f64) -> Result<i64> {
    let n = f.len() - 1;
    for (j, z) in f.iter().enumerate() {
        if z.norm() <= tol_pd {
            return Err(Error::ZeroCrossing { k: -0.5 + j as f64 / n as f64 });
        }
    }
    let total: f64 = (0..n).map(|j| principal_arg(f[j + 1] / f[j])).sum::<f64>() / (2.0 * PI);
    let w = total.round();
    if (total - w).abs() > 0.1 {
        return Err(Error::CoarseGrid { residual: (total - w).abs() });
    }
    Ok(w as i64)
}

/// Real even periodic `φ` with `β(k) = β(0)e^{iφ(k)}` and `φ(0) = 0`.
pub fn lift_phase(grid: &Grid1, beta: &[c64], tol_cs: f64) -> Result<Vec<f64>> {
    let n = grid.n;
    let even = (0..=n).map(|j| (beta[j] - beta[grid.mirror(j)]).norm()).fold(0.0, f64::max);
    if even > tol_cs {
        return Err(Error::NotEven { residual: even });
    }
    let w = winding(beta, 1e-12)?;
    if w != 0 {
        return Err(Error::Winding { winding: w });
    }
    let z = grid.zero();
    let mut phi = vec![0.0; n + 1];
    for j in z..n {
        phi[j + 1] = phi[j] + principal_arg(beta[j + 1] / beta[j]);
    }
    for j in (1..=z).rev() {
        phi[j - 1] = phi[j] + principal_arg(beta[j - 1] / beta[j]);
    }
    let sym: Vec<f64> = (0..=n).map(|j| 0.5 * (phi[j] + phi[grid.mirror(j)])).collect();
    Ok(sym)
}

/// Smallest arc distance between distinct eigenvalues.
fn circle_spacing(angles: &[f64]) -> f64 {
    if angles.len() < 2 {
        return 2.0 * PI;
    }
    let mut a = angles.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut g = a[0] + 2.0 * PI - a[a.len() - 1];
    for w in a.windows(2) {
        g = g.min(w[1] - w[0]);
    }
    g
}

/// Groups eigenvalue angles into clusters of arc-distance chains below `tol`.
fn clusters(angles: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let n = angles.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(l: &mut Vec<usize>, i: usize) -> usize {
        if l[i] != i {
            let r = find(l, l[i]);
            l[i] = r;
        }
        l[i]
    }
    for i in 0..n {
        for j in i + 1..n {
            if arc_dist(angles[i], angles[j]) < tol {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut label, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by(|a, b| angles[a[0]].partial_cmp(&angles[b[0]]).unwrap());
    out
}

fn proj_of(e: &UnitaryEig, idx: &[usize]) -> CMat {
    let v = crate::linalg::cols(&e.vectors, idx);
    &v * adjoint(&v)
}

/// Best and second-best total overlap over assignments prev → new.
fn assign(overlap: &[Vec<f64>]) -> (Vec<usize>, f64, f64) {
    let n = overlap.len();
    let score = |p: &[usize]| (0..n).map(|a| overlap[a][p[a]]).sum::<f64>();
    let mut best = (vec![], f64::NEG_INFINITY);
    let mut second = f64::NEG_INFINITY;
    if n <= 7 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut visit = |p: &[usize]| {
            let s = score(p);
            if s > best.1 {
                second = best.1;
                best = (p.to_vec(), s);
            } else if s > second {
                second = s;
            }
        };
        heap_permute(&mut perm, n, &mut visit);
    } else {
        let mut used = vec![false; n];
        let mut p = vec![0; n];
        for a in 0..n {
            let b = (0..n).filter(|&b| !used[b]).max_by(|&x, &y| overlap[a][x].partial_cmp(&overlap[a][y]).unwrap()).unwrap();
            used[b] = true;
            p[a] = b;
        }
        let s = score(&p);
        for a in 0..n {
            for b in a + 1..n {
                let mut q = p.clone();
                q.swap(a, b);
                second = second.max(score(&q));
            }
        }
        best = (p, s);
    }
    if n == 1 {
        second = f64::NEG_INFINITY;
    }
    (best.0, best.1, second)
}

fn heap_permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        visit(p);
        return;
    }
    for i in 0..k - 1 {
        heap_permute(p, k - 1, visit);
        if k % 2 == 0 {
            p.swap(i, k - 1);
        } else {
            p.swap(0, k - 1);
        }
    }
    heap_permute(p, k - 1, visit);
}

/// Branch data on the half grid k ∈ [0, 1/2]: eigenvalue angle per branch,
/// and either per-branch projections or, at an interior degenerate node,
/// the cluster projections with their member branches.
enum NodeData {
    Simple(Vec<CMat>),
    Clustered(Vec<(CMat, Vec<usize>)>),
}

struct Branches {
    angles: Vec<Vec<f64>>,
    data: Vec<NodeData>,
}

fn overlaps(prev: &UnitaryEig, new: &UnitaryEig) -> Vec<Vec<f64>> {
    let o = adjoint(&prev.vectors) * &new.vectors;
    (0..o.nrows()).map(|a| (0..o.ncols()).map(|b| o[(a, b)].norm_sqr()).collect()).collect()
}

/// Continues eigenvalue branches from k = 0 to k = 1/2 by overlap matching.
/// `allow_interior` lets the scan step over isolated degenerate nodes.
fn track(beta: &UnitaryFamily, tol: &Tolerances, allow_interior: bool) -> Result<Branches> {
    let g = beta.grid;
    let z = g.zero();
    let eigs: Vec<UnitaryEig> = crate::par::map(g.n - z + 1, |i| unitary_eig(&beta.values[z + i]));
    let degenerate: Vec<bool> = eigs.iter().map(|e| circle_spacing(&e.angles) < tol.degen).collect();
    let kz = |i: usize| g.k(z + i);
    for &end in &[0, eigs.len() - 1] {
        if degenerate[end] {
            return Err(Error::Degenerate { nodes: vec![kz(end)], gap: circle_spacing(&eigs[end].angles) });
        }
    }
    let n = beta.size();
    let m = eigs.len();
    let mut order: Vec<Vec<usize>> = vec![vec![]; m];
    order[0] = (0..n).collect();
    let mut i = 0;
    while i + 1 < m {
        let mut j = i + 1;
        if degenerate[j] {
            if !allow_interior {
                return Err(Error::Degenerate { nodes: vec![kz(j)], gap: circle_spacing(&eigs[j].angles) });
            }
            while degenerate[j] {
                j += 1;
            }
            if j > i + 2 {
                return Err(Error::Degenerate { nodes: (i + 1..j).map(kz).collect(), gap: 0.0 });
            }
        }
        let ov = overlaps(&eigs[i], &eigs[j]);
        let ov: Vec<Vec<f64>> = order[i].iter().map(|&c| ov[c].clone()).collect();
        let (perm, best, second) = assign(&ov);
        if best - second < tol.matching {
            return Err(Error::BranchAmbiguity { k: kz(j), separation: best - second });
        }
        order[j] = perm;
        i = j;
    }
    let mut angles = vec![vec![0.0; n]; m];
    let mut data = Vec::with_capacity(m);
    for i in 0..m {
        if degenerate[i] {
            let e = &eigs[i];
            let cl = clusters(&e.angles, tol.degen);
            let mut members: Vec<(CMat, Vec<usize>)> = cl.iter().map(|c| (proj_of(e, c), vec![])).collect();
            for b in 0..n {
                let (a0, a1) = (eigs[i - 1].angles[order[i - 1][b]], eigs[i + 1].angles[order[i + 1][b]]);
                let mid = a0 + 0.5 * wrap_angle(a1 - a0);
                let c = (0..cl.len())
                    .min_by(|&x, &y| {
                        arc_dist(e.angles[cl[x][0]], mid).partial_cmp(&arc_dist(e.angles[cl[y][0]], mid)).unwrap()
                    })
                    .unwrap();
                angles[i][b] = e.angles[cl[c][0]];
                members[c].1.push(b);
            }
            if members.iter().any(|(p, b)| (crate::linalg::trace(p).re - b.len() as f64).abs() > 0.5) {
                return Err(Error::BranchAmbiguity { k: kz(i), separation: 0.0 });
            }
            data.push(NodeData::Clustered(members));
        } else {
            for b in 0..n {
                angles[i][b] = eigs[i].angles[order[i][b]];
            }
            let mut ps: Vec<CMat> = (0..n).map(|b| proj_of(&eigs[i], &[order[i][b]])).collect();
            if i == 0 || i == m - 1 {
                for p in ps.iter_mut() {
                    *p = herm_part(&scale(&(&*p + conj(p)), cr(0.5)));
                }
            }
            data.push(NodeData::Simple(ps));
        }
    }
    Ok(Branches { angles, data })
}

/// Assembles h from tracked branches, lifting each branch phase and
/// mirroring to k < 0 by transposition.
fn assemble(beta: &UnitaryFamily, br: Branches, tol: &Tolerances) -> Result<HermitianFamily> {
    let g = beta.grid;
    let z = g.zero();
    let n = beta.size();
    let mut phases = Vec::with_capacity(n);
    for b in 0..n {
        let mut fam = vec![c64::new(0.0, 0.0); g.len()];
        for (i, a) in br.angles.iter().enumerate() {
            fam[z + i] = cis(a[b]);
            fam[z - i] = cis(a[b]);
        }
        let phi = lift_phase(&g, &fam, tol.cs)?;
        let a0 = br.angles[0][b];
        phases.push(phi.iter().map(|p| a0 + p).collect::<Vec<f64>>());
    }
    let mut values = vec![Mat::zeros(n, n); g.len()];
    for (i, d) in br.data.iter().enumerate() {
        let mut h: CMat = Mat::zeros(n, n);
        match d {
            NodeData::Simple(ps) => {
                for (b, p) in ps.iter().enumerate() {
                    h += scale(p, cr(phases[b][z + i]));
                }
            }
            NodeData::Clustered(members) => {
                for (p, bs) in members {
                    let f = phases[bs[0]][z + i];
                    if bs.iter().any(|&b| (phases[b][z + i] - f).abs() > 1e-6) {
                        return Err(Error::BranchAmbiguity { k: g.k(z + i), separation: 0.0 });
                    }
                    h += scale(p, cr(f));
                }
            }
        }
        let h = herm_part(&h);
        values[z - i] = transpose(&h);
        values[z + i] = h;
    }
    values[0] = values[g.n].clone();
    Ok(HermitianFamily { grid: g, values })
}

fn require_cs(beta: &UnitaryFamily, tol_cs: f64) -> Result<()> {
    let r = beta.cs_residual();
    if r > tol_cs {
        let j = (0..beta.grid.len())
            .max_by(|&a, &b| {
                let ra = diff_max(&transpose(&beta.values[a]), &beta.values[beta.grid.mirror(a)]);
                let rb = diff_max(&transpose(&beta.values[b]), &beta.values[beta.grid.mirror(b)]);
                ra.partial_cmp(&rb).unwrap()
            })
            .unwrap();
        return Err(Error::CsViolated { k: vec![beta.grid.k(j)], residual: r });
    }
    Ok(())
}

/// Logarithm of a family whose spectrum is nondegenerate at every node.
pub fn log_noncrossing(beta: &UnitaryFamily, tol: &Tolerances) -> Result<HermitianFamily> {
    let g = beta.grid;
    let spacings = crate::par::map(g.len(), |j| circle_spacing(&unitary_eig(&beta.values[j]).angles));
    let bad: Vec<f64> = (0..g.len()).filter(|&j| spacings[j] < tol.degen).map(|j| g.k(j)).collect();
    if !bad.is_empty() {
        let gap = spacings.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::Degenerate { nodes: bad, gap });
    }
    require_cs(beta, tol.cs)?;
    let br = track(beta, tol, false)?;
    assemble(beta, br, tol)
}

/// Logarithm of a family nondegenerate at k = 0 and k = 1/2, following
/// eigenvalue branches through interior crossings.
pub fn log_analytic_endpoints(beta: &UnitaryFamily, tol: &Tolerances) -> Result<HermitianFamily> {
    require_cs(beta, tol.cs)?;
    let br = track(beta, tol, true)?;
    assemble(beta, br, tol)
}

/// Center of the widest empty arc in the spectrum of the whole family, or
/// `None` when no empty bin survives.
pub fn circle_gap(beta: &UnitaryFamily, tol_degen: f64, bins: usize) -> Option<f64> {
    let w = 2.0 * PI / bins as f64;
    let mut full = vec![false; bins];
    let bin_of = |a: f64| (((a + PI) / w).floor() as i64).rem_euclid(bins as i64) as usize;
    for b in &beta.values {
        for &a in &unitary_eig(b).angles {
            let (lo, hi) = (bin_of(a - tol_degen), bin_of(a + tol_degen));
            let mut i = lo;
            loop {
                full[i] = true;
                if i == hi {
                    break;
                }
                i = (i + 1) % bins;
            }
        }
    }
    if full.iter().all(|&f| f) {
        return None;
    }
    if full.iter().all(|&f| !f) {
        return Some(PI);
    }
    // Runs of empty bins, scanning from just after an occupied bin.
    let start = (0..bins).find(|&i| full[i]).unwrap();
    let mut best: Option<(usize, f64)> = None;
    let mut i = 0;
    while i < bins {
        let b = (start + i) % bins;
        if full[b] {
            i += 1;
            continue;
        }
        let mut len = 0;
        while i + len < bins && !full[(start + i + len) % bins] {
            len += 1;
        }
        let center = wrap_angle(-PI + w * (b as f64 + len as f64 / 2.0));
        let center = if (center + PI).abs() < 1e-12 { PI } else { center };
        best = match best {
            Some((l, c)) if l > len || (l == len && c >= center) => Some((l, c)),
            _ => Some((len, center)),
        };
        i += len;
    }
    best.map(|b| b.1)
}

/// `h = (φ₀ − π)·Id + 2·arctan(s)` with `s` the Cayley transform of
/// `e^{i(π−φ₀)}β`.
pub fn log_cayley(beta: &UnitaryFamily, phi0: f64, tol: &Tolerances) -> Result<HermitianFamily> {
    let g = beta.grid;
    let rot = cis(PI - phi0);
    let n = beta.size();
    let vals = crate::par::try_map(g.n, |j| cayley_log_one(&beta.values[j], rot, phi0, tol.degen, g.k(j)))?;
    let mut values = vals;
    values.push(values[0].clone());
    if beta.cs_prime {
        let sym: Vec<CMat> = (0..g.len()).map(|j| herm_part(&scale(&(&values[j] + transpose(&values[g.mirror(j)])), cr(0.5)))).collect();
        values = sym;
        values[g.n] = values[0].clone();
    }
    let _ = n;
    Ok(HermitianFamily { grid: g, values })
}

fn cayley_log_one(b: &CMat, rot: c64, phi0: f64, tol_degen: f64, k: f64) -> Result<CMat> {
    let e = unitary_eig(b);
    let dist = e.angles.iter().map(|&a| arc_dist(a, phi0)).fold(f64::INFINITY, f64::min);
    if dist < tol_degen {
        return Err(Error::CayleySingular { k, distance: dist });
    }
    let s = cayley(&scale(b, rot));
    let h = herm_fn(&s, |mu| cr(2.0 * mu.atan()));
    Ok(&h + scale(&eye(b.nrows()), cr(phi0 - PI)))
}

/// Regularized family with its sup-norm distance to the input.
#[derive(Debug, Clone)]
pub struct Regularized {
    pub family: UnitaryFamily,
    pub s: f64,
    pub nu: f64,
    pub deviation: f64,
}

fn nearest(centers: &[f64], a: f64) -> usize {
    (0..centers.len()).min_by(|&x, &y| arc_dist(centers[x], a).partial_cmp(&arc_dist(centers[y], a)).unwrap()).unwrap()
}

/// Tent bump supported on [−s/2, s/2] with value 1 at 0.
fn tent(x: f64, s: f64) -> f64 {
    (1.0 - 2.0 * x.abs() / s).max(0.0)
}

/// Splits degenerate clusters at k = 0 and k = 1/2 (local logarithm plus
/// a bump generator), then smooths by Poisson-kernel convolution and
/// re-unitarizes.
pub fn regularize(beta: &UnitaryFamily, s: f64, nu: f64, tol: &Tolerances) -> Result<Regularized> {
    require_cs(beta, tol.cs)?;
    let g = beta.grid;
    let n = beta.size();
    let mut stepped: Vec<CMat> = beta.values[..g.n].to_vec();
    if s > 0.0 {
        for &(k0, node) in &[(0.0, g.zero()), (0.5, 0usize)] {
            let e0 = unitary_eig(&beta.values[node]);
            let cl = clusters(&e0.angles, tol.degen);
            let centers: Vec<f64> = cl.iter().map(|c| e0.angles[c[0]]).collect();
            let mut a = Mat::<c64>::zeros(n, n);
            for c in &cl {
                let p = proj_of(&e0, c);
                let imag = diff_max(&p, &conj(&p));
                if imag > tol.cs.max(1e-8) {
                    return Err(Error::CsViolated { k: vec![k0], residual: imag });
                }
                let real = Mat::from_fn(n, n, |i, j| cr(p[(i, j)].re));
                let basis = pivoted_gram_schmidt(&real, 1e-8);
                for l in 0..basis.ncols() {
                    let v = crate::linalg::col(&basis, l);
                    a += scale(&(&v * adjoint(&v)), cr(l as f64));
                }
            }
            if crate::linalg::max_abs(&a) == 0.0 {
                continue;
            }
            for j in 0..g.n {
                let x = g.k(j) - k0;
                let x = x - x.round();
                let bump = tent(x, s);
                if bump == 0.0 {
                    continue;
                }
                let b = &beta.values[j];
                let e = unitary_eig(b);
                let mut tilde = Mat::<c64>::zeros(n, n);
                let mut base = Mat::<c64>::zeros(n, n);
                for (ci, c) in centers.iter().enumerate() {
                    let idx: Vec<usize> = (0..n).filter(|&i| nearest(&centers, e.angles[i]) == ci).collect();
                    let p = proj_of(&e, &idx);
                    tilde += scale(&p, cis(*c));
                    base += scale(&p, cr(*c));
                }
                let gamma = adjoint(&tilde) * b;
                let ht = herm_fn(&cayley(&gamma), |mu| cr(2.0 * mu.atan()));
                let h = base + ht + scale(&a, cr(s * bump));
                stepped[j] = expi(&herm_part(&h), 1.0);
            }
        }
    }
    // Periodized Cauchy kernel sinh(2πν)/(cosh 2πν − cos 2πx), normalized on the grid.
    let m = g.n;
    let weights: Vec<f64> = if nu > 0.0 {
        let raw: Vec<f64> = (0..m)
            .map(|d| {
                let x = d as f64 / m as f64;
                (2.0 * PI * nu).sinh() / ((2.0 * PI * nu).cosh() - (2.0 * PI * x).cos())
            })
            .collect();
        let tot: f64 = raw.iter().sum();
        raw.iter().map(|w| w / tot).collect()
    } else {
        (0..m).map(|d| if d == 0 { 1.0 } else { 0.0 }).collect()
    };
    let half = crate::par::try_map(m / 2 + 1, |i| {
        let j = g.zero() + i;
        let mut mu = Mat::<c64>::zeros(n, n);
        for (l, b) in stepped.iter().enumerate() {
            let w = weights[(j + m - l) % m];
            if w > 0.0 {
                mu += scale(b, cr(w));
            }
        }
        let g2 = &mu * adjoint(&mu);
        let r = inv_sqrt_psd(&g2, 1e-12)?;
        let out = r * mu;
        Ok::<_, Error>(if i == 0 || i == m / 2 { polar(&scale(&(&out + transpose(&out)), cr(0.5))) } else { out })
    })?;
    let mut values = vec![Mat::<c64>::zeros(n, n); g.len()];
    for (i, v) in half.into_iter().enumerate() {
        let z = g.zero();
        values[z - i] = transpose(&v);
        values[z + i] = v;
    }
    values[0] = values[g.n].clone();
    let deviation = values.iter().zip(&beta.values).map(|(a, b)| opnorm(&(a - b))).fold(0.0, f64::max);
    let family = UnitaryFamily::from_values(g, values, tol.cs);
    Ok(Regularized { family, s, nu, deviation })
}

/// `u(x, k₂) = e^{−ix·h₁(k₂)} e^{−ix·h₂(k₂)}`.
#[derive(Debug, Clone)]
pub struct StraighteningField {
    pub h1: HermitianFamily,
    pub h2: HermitianFamily,
    pub s: f64,
    pub nu: f64,
    /// sup_k ‖β̃(k) − Id‖ reached at the accepted (s, ν).
    pub deviation: f64,
    e1: Vec<crate::linalg::HermEig>,
    e2: Vec<crate::linalg::HermEig>,
}

impl StraighteningField {
    pub fn grid(&self) -> Grid1 {
        self.h1.grid
    }

    pub fn eval(&self, x: f64, node: usize) -> CMat {
        let f = |e: &crate::linalg::HermEig| from_eig(&e.vectors, &e.values.iter().map(|&l| cis(-x * l)).collect::<Vec<_>>());
        f(&self.e1[node]) * f(&self.e2[node])
    }

    /// max over nodes of ‖u(−1/2)†βu(1/2) − Id‖.
    pub fn boundary_residual(&self, beta: &UnitaryFamily) -> f64 {
        let id = eye(beta.size());
        (0..beta.grid.len())
            .map(|j| diff_max(&(adjoint(&self.eval(-0.5, j)) * &beta.values[j] * self.eval(0.5, j)), &id))
            .fold(0.0, f64::max)
    }

    /// max over nodes and sample points of ‖conj u(x,k) − u(−x,−k)‖.
    pub fn symmetry_residual(&self, xs: &[f64]) -> f64 {
        let g = self.grid();
        let mut r = 0.0f64;
        for j in 0..g.len() {
            for &x in xs {
                r = r.max(diff_max(&conj(&self.eval(x, j)), &self.eval(-x, g.mirror(j))));
            }
        }
        r
    }
}

/// Two-step straightening of a CS′ family, shrinking (s, ν) from (0.1, 0.01)
/// by halves until ‖e^{−ih₁/2}βe^{−ih₁/2} − Id‖ ≤ 1/2.
pub fn straighten(beta: &UnitaryFamily, tol: &Tolerances) -> Result<StraighteningField> {
    require_cs(beta, tol.cs)?;
    let g = beta.grid;
    let finish = |h1: HermitianFamily, s: f64, nu: f64| -> Result<StraighteningField> {
        let tl: Vec<CMat> = (0..g.len()).map(|j| tilde(&h1.values[j], &beta.values[j])).collect();
        let dev = tl.iter().map(|t| opnorm(&(t - eye(beta.size())))).fold(0.0, f64::max);
        let bt = UnitaryFamily::from_values(g, tl, tol.cs);
        let h2 = log_cayley(&bt, PI, tol)?;
        let e1 = h1.values.iter().map(herm_eig).collect();
        let e2 = h2.values.iter().map(herm_eig).collect();
        Ok(StraighteningField { h1, h2, s, nu, deviation: dev, e1, e2 })
    };
    // A spectral gap common to all nodes gives a single global logarithm.
    if let Some(phi0) = circle_gap(beta, tol.degen, tol.circle_bins as usize) {
        if let Ok(h1) = log_cayley(beta, phi0, tol) {
            return finish(recentre(h1), 0.0, 0.0);
        }
    }
    let (mut s, mut nu) = (0.1, 0.01);
    let max_iters = 8;
    let mut last = f64::INFINITY;
    for _ in 0..max_iters {
        let attempt = (|| -> Result<(HermitianFamily, f64)> {
            let reg = regularize(beta, s, nu, tol)?;
            let h1 = log_analytic_endpoints(&reg.family, tol)?;
            let dev = (0..beta.grid.len())
                .map(|j| opnorm(&(tilde(&h1.values[j], &beta.values[j]) - eye(beta.size()))))
                .fold(0.0, f64::max);
            Ok((h1, dev))
        })();
        match attempt {
            Ok((h1, dev)) if dev <= 0.5 => return finish(h1, s, nu),
            Ok((_, dev)) => last = dev,
            Err(_) => {}
        }
        s *= 0.5;
        nu *= 0.5;
    }
    Err(Error::ShrinkFailed { iterations: max_iters, deviation: last })
}

/// Shifts a logarithm by the multiple of 2π·Id that best centres its
/// spectrum on 0; still a logarithm, still periodic and CS.
fn recentre(mut h: HermitianFamily) -> HermitianFamily {
    let (lo, hi) = h.values.iter().flat_map(|v| herm_eig(v).values).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let m = (-(lo + hi) / 2.0 / (2.0 * PI)).round();
    if m != 0.0 {
        for v in &mut h.values {
            *v += scale(&eye(v.nrows()), cr(2.0 * PI * m));
        }
    }
    h
}

/// `e^{−ih/2} β e^{−ih/2}`.
fn tilde(h: &CMat, b: &CMat) -> CMat {
    let e = expi(h, -0.5);
    &e * b * &e
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn diag_family(f: impl Fn(f64) -> Vec<f64>) -> impl Fn(f64) -> CMat {
        move |k| {
            let d = f(k);
            Mat::from_fn(d.len(), d.len(), |i, j| if i == j { cis(d[i]) } else { cr(0.0) })
        }
    }

    #[test]
    fn winding_examples() {
        let g = Grid1::new(64).unwrap();
        let fam = |f: &dyn Fn(f64) -> c64| g.ks().iter().map(|&k| f(k)).collect::<Vec<_>>();
        assert_eq!(winding(&fam(&|k| cis(2.0 * PI * k)), 1e-12).unwrap(), 1);
        assert_eq!(winding(&fam(&|_| c64::new(0.3, -2.0)), 1e-12).unwrap(), 0);
        assert_eq!(winding(&fam(&|k| cis(-4.0 * PI * k)), 1e-12).unwrap(), -2);
        assert!(matches!(winding(&fam(&|k| cr(k)), 1e-12), Err(Error::ZeroCrossing { .. })));
    }

    #[test]
    fn lift_phase_examples() {
        let g = Grid1::new(64).unwrap();
        let ks = g.ks();
        let phi = lift_phase(&g, &vec![cr(1.0); g.len()], 1e-10).unwrap();
        assert!(phi.iter().all(|&p| p == 0.0));
        let f = |k: f64| (2.0 * PI * k).sin().powi(2);
        let phi = lift_phase(&g, &ks.iter().map(|&k| cis(f(k))).collect::<Vec<_>>(), 1e-10).unwrap();
        for (p, &k) in phi.iter().zip(&ks) {
            assert!((p - f(k)).abs() < 1e-12);
        }
        let r = lift_phase(&g, &ks.iter().map(|&k| cis(2.0 * PI * k)).collect::<Vec<_>>(), 1e-10);
        assert!(matches!(r, Err(Error::NotEven { .. })));
    }

    #[test]
    fn noncrossing_examples() {
        let g = Grid1::new(64).unwrap();
        let b = UnitaryFamily::from_fn(g, diag_family(|_| vec![0.5, -1.1]), 1e-10);
        let h = log_noncrossing(&b, &tol()).unwrap();
        for v in &h.values {
            assert!((v[(0, 0)].re - 0.5).abs() < 1e-12 && (v[(1, 1)].re + 1.1).abs() < 1e-12);
        }
        let c = |k: f64| 0.1 * (2.0 * PI * k).cos();
        let b = UnitaryFamily::from_fn(g, diag_family(move |k| vec![0.3 + c(k), 2.0 + c(k)]), 1e-10);
        let h = log_noncrossing(&b, &tol()).unwrap();
        assert!(h.exp_residual(&b) < 1e-10);
        for (v, &k) in h.values.iter().zip(&g.ks()) {
            assert!((v[(0, 0)].re - 0.3 - c(k)).abs() < 1e-10 && (v[(1, 1)].re - 2.0 - c(k)).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_family_has_no_noncrossing_log() {
        let g = Grid1::new(64).unwrap();
        let b = UnitaryFamily::from_fn(g, rotation_family, 1e-10);
        assert!(b.cs_prime);
        match log_noncrossing(&b, &tol()) {
            Err(Error::Degenerate { nodes, .. }) => assert_eq!(nodes, vec![-0.5, 0.0, 0.5]),
            other => panic!("expected degeneracy, got {other:?}"),
        }
        assert_eq!(circle_gap(&b, 1e-6, 64), None);
    }

    #[test]
    fn circle_gap_examples() {
        let g = Grid1::new(16).unwrap();
        let id = UnitaryFamily::from_fn(g, |_| eye(2), 1e-10);
        assert!((circle_gap(&id, 1e-6, 64).unwrap() - PI).abs() < 1e-12);
        let d = UnitaryFamily::from_fn(g, diag_family(|_| vec![0.0, PI]), 1e-10);
        assert!((circle_gap(&d, 1e-6, 64).unwrap() - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cayley_examples() {
        let g = Grid1::new(64).unwrap();
        let id = UnitaryFamily::from_fn(g, |_| eye(2), 1e-10);
        let h = log_cayley(&id, PI, &tol()).unwrap();
        assert!(h.values.iter().all(|v| crate::linalg::max_abs(v) < 1e-15));
        let f = |k: f64| 0.5 * (2.0 * PI * k).cos();
        let sc = UnitaryFamily::from_fn(g, move |k| Mat::from_fn(1, 1, |_, _| cis(f(k))), 1e-10);
        let h = log_cayley(&sc, PI, &tol()).unwrap();
        let phi = lift_phase(&g, &sc.values.iter().map(|v| v[(0, 0)]).collect::<Vec<_>>(), 1e-10).unwrap();
        for (v, p) in h.values.iter().zip(&phi) {
            assert!((v[(0, 0)].re - (0.5 + p)).abs() < 1e-10);
        }
        let bad = UnitaryFamily::from_fn(g, diag_family(|_| vec![0.2, 1.0]), 1e-10);
        assert!(matches!(log_cayley(&bad, 1.0, &tol()), Err(Error::CayleySingular { .. })));
    }

    #[test]
    fn regularize_identity_splits_endpoints() {
        let g = Grid1::new(64).unwrap();
        let id = UnitaryFamily::from_fn(g, |_| eye(3), 1e-10);
        let r = regularize(&id, 0.2, 0.0, &tol()).unwrap();
        for node in [0, g.zero()] {
            let mut a = unitary_eig(&r.family.values[node]).angles;
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for (l, x) in a.iter().enumerate() {
                assert!((x - 0.2 * l as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn straighten_identity_is_trivial() {
        let g = Grid1::new(32).unwrap();
        let id = UnitaryFamily::from_fn(g, |_| eye(2), 1e-10);
        let u = straighten(&id, &tol()).unwrap();
        for j in 0..g.len() {
            assert!(diff_max(&u.eval(0.3, j), &eye(2)) < 1e-12);
        }
    }
}
