//! Small dense helpers on top of faer.
//!
//! Everything here works on `Mat<c64>`; the matrices in the k-space code are
//! tiny (D, N ≤ a handful) so clarity wins over blocking tricks.

use faer::{c64, Mat, Side};

pub type CMat = Mat<c64>;

pub const I: c64 = c64 { re: 0.0, im: 1.0 };

#[inline]
pub fn cr(re: f64) -> c64 {
    c64::new(re, 0.0)
}

#[inline]
pub fn cis(theta: f64) -> c64 {
    c64::new(theta.cos(), theta.sin())
}

pub fn eye(n: usize) -> CMat {
    Mat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    Mat::zeros(r, c)
}

pub fn adjoint(a: &CMat) -> CMat {
    Mat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)].conj())
}

pub fn transpose(a: &CMat) -> CMat {
    Mat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)])
}

pub fn conj(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].conj())
}

pub fn scale(a: &CMat, s: c64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

/// `(a + a†)/2`.
pub fn herm_part(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// Largest entry modulus.
pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn diff_max(a: &CMat, b: &CMat) -> f64 {
    max_abs(&(a - b))
}

/// Spectral norm through the eigenvalues of `a†a`.
pub fn opnorm(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let g = if a.nrows() >= a.ncols() { adjoint(a) * a } else { a * adjoint(a) };
    let e = herm_eig(&g);
    e.values.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

pub fn op_diff(a: &CMat, b: &CMat) -> f64 {
    opnorm(&(a - b))
}

pub fn trace(a: &CMat) -> c64 {
    let mut t = c64::new(0.0, 0.0);
    for i in 0..a.nrows().min(a.ncols()) {
        t += a[(i, i)];
    }
    t
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermEig {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

pub fn herm_eig(a: &CMat) -> HermEig {
    let n = a.nrows();
    if n == 0 {
        return HermEig { values: vec![], vectors: zeros(0, 0) };
    }
    let h = herm_part(a);
    let e = h
        .self_adjoint_eigen(Side::Lower)
        .expect("self-adjoint eigensolver failed to converge");
    let s = e.S().column_vector();
    let values: Vec<f64> = (0..n).map(|i| s[i].re).collect();
    HermEig { values, vectors: e.U().to_owned() }
}

/// Eigenvalues only, ascending.
pub fn herm_eigvals(a: &CMat) -> Vec<f64> {
    if a.nrows() == 0 {
        return vec![];
    }
    let mut v: Vec<f64> = herm_part(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .expect("self-adjoint eigensolver failed to converge")
        .into_iter()
        .collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// `V f(Λ) V†` for a Hermitian input.
pub fn herm_fn(a: &CMat, f: impl Fn(f64) -> c64) -> CMat {
    let e = herm_eig(a);
    from_eig(&e.vectors, &e.values.iter().map(|&x| f(x)).collect::<Vec<_>>())
}

/// `V diag(d) V†`.
pub fn from_eig(v: &CMat, d: &[c64]) -> CMat {
    let n = v.nrows();
    let m = d.len();
    let vd = Mat::from_fn(n, m, |i, j| v[(i, j)] * d[j]);
    vd * adjoint(v)
}

/// `e^{i t h}` for Hermitian `h`.
pub fn expi(h: &CMat, t: f64) -> CMat {
    herm_fn(h, |x| cis(t * x))
}

/// Unitary factor of the polar decomposition, `a (a†a)^{-1/2}`.
pub fn polar(a: &CMat) -> CMat {
    let g = adjoint(a) * a;
    let s = herm_fn(&g, |x| cr(1.0 / x.max(f64::MIN_POSITIVE).sqrt()));
    a * s
}

/// Principal argument in (−π, π]; −π is folded onto π.
#[inline]
pub fn principal_arg(z: c64) -> f64 {
    let a = z.im.atan2(z.re);
    if a <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

/// Wrap an angle into (−π, π].
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

/// Arc distance between two points on the unit circle given by angle.
pub fn arc_dist(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// Eigendecomposition of a unitary matrix with orthonormal eigenvectors.
///
/// Rotates the spectrum so that −1 sits in the widest angular gap, then
/// diagonalizes the Hermitian Cayley transform. Angles come back in
/// (−π, π], sorted ascending.
#[derive(Debug, Clone)]
pub struct UnitaryEig {
    pub angles: Vec<f64>,
    pub vectors: CMat,
}

pub fn unitary_eig(u: &CMat) -> UnitaryEig {
    let n = u.nrows();
    if n == 0 {
        return UnitaryEig { angles: vec![], vectors: zeros(0, 0) };
    }
    let rough: Vec<f64> = u
        .eigenvalues()
        .map(|v| v.iter().map(|z| principal_arg(*z)).collect())
        .unwrap_or_else(|_| vec![0.0; n]);
    let phi0 = widest_gap_center(&rough);
    let gamma = scale(u, cis(std::f64::consts::PI - phi0));
    let s = cayley(&gamma);
    let e = herm_eig(&s);
    let mut pairs: Vec<(f64, usize)> = e
        .values
        .iter()
        .enumerate()
        .map(|(i, &mu)| (wrap_angle(phi0 - std::f64::consts::PI + 2.0 * mu.atan()), i))
        .collect();
    for p in pairs.iter_mut() {
        if (p.0 + std::f64::consts::PI).abs() < 1e-15 {
            p.0 = std::f64::consts::PI;
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let vectors = Mat::from_fn(n, n, |i, j| e.vectors[(i, pairs[j].1)]);
    UnitaryEig { angles: pairs.iter().map(|p| p.0).collect(), vectors }
}

/// `i (I − γ)(I + γ)^{-1}`, Hermitian part taken to scrub roundoff.
pub fn cayley(gamma: &CMat) -> CMat {
    use faer::linalg::solvers::DenseSolveCore;
    let n = gamma.nrows();
    let id = eye(n);
    let plus = &id + gamma;
    let minus = &id - gamma;
    let inv = plus.partial_piv_lu().inverse();
    herm_part(&scale(&(minus * inv), I))
}

/// Center of the widest empty arc among the given angles.
pub fn widest_gap_center(angles: &[f64]) -> f64 {
    use std::f64::consts::PI;
    if angles.is_empty() {
        return PI;
    }
    let mut a: Vec<f64> = angles.iter().map(|&x| wrap_angle(x)).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut best = (a[0] + 2.0 * PI) - a[a.len() - 1];
    let mut center = a[a.len() - 1] + best / 2.0;
    for w in a.windows(2) {
        let g = w[1] - w[0];
        if g > best {
            best = g;
            center = w[0] + g / 2.0;
        }
    }
    wrap_angle(center)
}

/// Orthonormalize the columns of `a` (modified Gram–Schmidt with column
/// pivoting), dropping columns whose residual norm falls below `tol`.
pub fn pivoted_gram_schmidt(a: &CMat, tol: f64) -> CMat {
    let n = a.nrows();
    let mut cols: Vec<Vec<c64>> = (0..a.ncols()).map(|j| (0..n).map(|i| a[(i, j)]).collect()).collect();
    let mut out: Vec<Vec<c64>> = Vec::new();
    while !cols.is_empty() {
        let (idx, nrm) = cols
            .iter()
            .enumerate()
            .map(|(j, c)| (j, c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if nrm < tol {
            break;
        }
        let q: Vec<c64> = cols.swap_remove(idx).iter().map(|z| z / nrm).collect();
        for c in cols.iter_mut() {
            let d: c64 = q.iter().zip(c.iter()).map(|(x, y)| x.conj() * y).sum();
            for (ci, qi) in c.iter_mut().zip(q.iter()) {
                *ci -= d * qi;
            }
        }
        out.push(q);
    }
    Mat::from_fn(n, out.len(), |i, j| out[j][i])
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(a: &CMat) -> c64 {
    let n = a.nrows();
    let mut m: Vec<Vec<c64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    let mut d = c64::new(1.0, 0.0);
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].norm().partial_cmp(&m[y][c].norm()).unwrap()).unwrap();
        if m[p][c].norm() == 0.0 {
            return c64::new(0.0, 0.0);
        }
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for j in c..n {
                let t = m[c][j];
                m[r][j] -= f * t;
            }
        }
    }
    d
}

pub fn col(a: &CMat, j: usize) -> CMat {
    Mat::from_fn(a.nrows(), 1, |i, _| a[(i, j)])
}

pub fn cols(a: &CMat, idx: &[usize]) -> CMat {
    Mat::from_fn(a.nrows(), idx.len(), |i, j| a[(i, idx[j])])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unitary_eig_handles_degenerate_and_antipodal() {
        let u = Mat::from_fn(3, 3, |i, j| if i == j { if i < 2 { cr(-1.0) } else { cis(0.3) } } else { cr(0.0) });
        let e = unitary_eig(&u);
        assert!((e.angles[0] - 0.3).abs() < 1e-14);
        assert!((e.angles[1] - std::f64::consts::PI).abs() < 1e-14);
        assert!((e.angles[2] - std::f64::consts::PI).abs() < 1e-14);
        let back = from_eig(&e.vectors, &e.angles.iter().map(|&t| cis(t)).collect::<Vec<_>>());
        assert!(diff_max(&back, &u) < 1e-14);
    }

    #[test]
    fn det_of_small_matrices() {
        let a = Mat::from_fn(2, 2, |i, j| c64::new((i * 2 + j) as f64 + 1.0, 0.0));
        assert!((det(&a) - cr(-2.0)).norm() < 1e-14);
        let p = Mat::from_fn(3, 3, |i, j| cr(if (i + 1) % 3 == j { 1.0 } else { 0.0 }));
        assert!((det(&p) - cr(1.0)).norm() < 1e-14);
    }

    #[test]
    fn polar_returns_unitary() {
        let a = Mat::from_fn(3, 3, |i, j| c64::new(1.0 + i as f64 * 0.3, j as f64 - 0.2 * i as f64) + if i == j { cr(3.0) } else { cr(0.0) });
        let u = polar(&a);
        assert!(diff_max(&(adjoint(&u) * &u), &eye(3)) < 1e-13);
    }

    #[test]
    fn widest_gap_of_single_point_is_antipode() {
        let c = widest_gap_center(&[0.0]);
        assert!((c.abs() - std::f64::consts::PI).abs() < 1e-15);
    }
}
