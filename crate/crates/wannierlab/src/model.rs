//! Tight-binding models and their Bloch Hamiltonians.
//!
//! A hopping `(from = a, to = b, cell = γ, t)` is the matrix element of H₀
//! between site `a` in cell 0 and site `b` in cell γ, so that
//! `h(k)[b][a] += t·e^{2πik·γ}`.

use crate::error::{Error, Result};
use crate::grid::Grid1;
use crate::linalg::{cis, diff_max, transpose, zeros, CMat};
use faer::c64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct Hopping {
    pub from: usize,
    pub to: usize,
    pub cell: Vec<i64>,
    pub amp: c64,
}

#[derive(Debug, Clone)]
pub struct TightBindingModel {
    pub dimension: usize,
    pub sites: Vec<Vec<f64>>,
    /// Closed hopping list: every conjugate partner is present.
    pub hoppings: Vec<Hopping>,
    pub decay_radius: f64,
}

#[derive(Serialize, Deserialize)]
struct HoppingFile {
    from: usize,
    to: usize,
    cell: Vec<i64>,
    re: f64,
    #[serde(default)]
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    dimension: usize,
    sites: Vec<Vec<f64>>,
    hoppings: Vec<HoppingFile>,
}

type Key = (usize, usize, Vec<i64>);

impl TightBindingModel {
    /// Validates the geometry and completes the Hermitian closure.
    pub fn new(dimension: usize, sites: Vec<Vec<f64>>, hoppings: Vec<Hopping>, tol_herm: f64) -> Result<Self> {
        if !(1..=2).contains(&dimension) {
            return Err(Error::Input(format!("dimension must be 1 or 2, got {dimension}")));
        }
        if sites.is_empty() {
            return Err(Error::Input("model needs at least one site".into()));
        }
        for (i, s) in sites.iter().enumerate() {
            if s.len() != dimension || s.iter().any(|x| !(0.0..1.0).contains(x)) {
                return Err(Error::Input(format!("site {i} must have {dimension} fractional coordinates in [0,1)")));
            }
        }
        let mut explicit: BTreeMap<Key, c64> = BTreeMap::new();
        for h in &hoppings {
            if h.from >= sites.len() || h.to >= sites.len() || h.cell.len() != dimension {
                return Err(Error::Input(format!("malformed hopping {h:?}")));
            }
            if !(h.amp.re.is_finite() && h.amp.im.is_finite()) {
                return Err(Error::Input(format!("non-finite amplitude in {h:?}")));
            }
            let key = (h.from, h.to, h.cell.clone());
            if explicit.insert(key, h.amp).is_some() {
                return Err(Error::Input(format!("duplicate hopping {h:?}")));
            }
        }
        let mut closed = explicit.clone();
        for ((a, b, g), t) in &explicit {
            let partner: Key = (*b, *a, g.iter().map(|x| -x).collect());
            match explicit.get(&partner) {
                Some(tp) => {
                    if (*tp - t.conj()).norm() > tol_herm {
                        return Err(Error::NonHermitian {
                            entry: format!("from {a} to {b} cell {g:?}: {t} vs conjugate entry {tp}"),
                        });
                    }
                }
                None => {
                    closed.insert(partner, t.conj());
                }
            }
        }
        let hoppings: Vec<Hopping> =
            closed.into_iter().map(|((from, to, cell), amp)| Hopping { from, to, cell, amp }).collect();
        let decay_radius = hoppings
            .iter()
            .map(|h| h.cell.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(TightBindingModel { dimension, sites, hoppings, decay_radius })
    }

    pub fn from_json(text: &str, tol_herm: f64) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text).map_err(|e| Error::Input(e.to_string()))?;
        let hop = f
            .hoppings
            .into_iter()
            .map(|h| Hopping { from: h.from, to: h.to, cell: h.cell, amp: c64::new(h.re, h.im) })
            .collect();
        Self::new(f.dimension, f.sites, hop, tol_herm)
    }

    pub fn to_json(&self) -> String {
        let f = ModelFile {
            dimension: self.dimension,
            sites: self.sites.clone(),
            hoppings: self
                .hoppings
                .iter()
                .map(|h| HoppingFile { from: h.from, to: h.to, cell: h.cell.clone(), re: h.amp.re, im: h.amp.im })
                .collect(),
        };
        serde_json::to_string_pretty(&f).expect("model serializes")
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn all_real(&self) -> bool {
        self.hoppings.iter().all(|h| h.amp.im == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsFlag {
    Holds,
    Fails,
    Unknown,
}

/// Evaluator `k ↦ h(k)`, exactly periodic.
#[derive(Debug, Clone)]
pub struct BlochHamiltonian {
    pub model: Arc<TightBindingModel>,
    pub cs_flag: CsFlag,
}

pub fn build_bloch(model: TightBindingModel) -> BlochHamiltonian {
    BlochHamiltonian { model: Arc::new(model), cs_flag: CsFlag::Unknown }
}

/// `2π·k·γ` reduced to (−π, π] before exponentiation, so that `k` and
/// `k + e_j` give bit-identical phases and `−k` gives the exact conjugate.
#[inline]
pub fn bloch_phase(k: &[f64], cell: &[i64]) -> c64 {
    let x: f64 = k.iter().zip(cell).map(|(a, &g)| a * g as f64).sum();
    let r = x - x.round();
    cis(2.0 * std::f64::consts::PI * r)
}

impl BlochHamiltonian {
    pub fn dim(&self) -> usize {
        self.model.num_sites()
    }

    pub fn dimension(&self) -> usize {
        self.model.dimension
    }

    pub fn eval(&self, k: &[f64]) -> CMat {
        let d = self.dim();
        let mut h = zeros(d, d);
        for hop in &self.model.hoppings {
            h[(hop.to, hop.from)] += hop.amp * bloch_phase(k, &hop.cell);
        }
        h
    }
}

/// Tests ᵗh(k) = h(−k) over the product grid and records the verdict.
pub fn check_cs(h: &mut BlochHamiltonian, grid: &[Grid1], tol_cs: f64) -> CsFlag {
    let worst = cs_residual(h, grid);
    h.cs_flag = if worst <= tol_cs { CsFlag::Holds } else { CsFlag::Fails };
    h.cs_flag
}

pub fn cs_residual(h: &BlochHamiltonian, grid: &[Grid1]) -> f64 {
    let mut worst = 0.0f64;
    for k in product_nodes(grid) {
        let mk: Vec<f64> = k.iter().map(|x| -x).collect();
        worst = worst.max(diff_max(&transpose(&h.eval(&k)), &h.eval(&mk)));
    }
    worst
}

/// All nodes of the product grid, first axis slowest.
pub fn product_nodes(grid: &[Grid1]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for g in grid {
        let mut next = Vec::with_capacity(out.len() * g.len());
        for p in &out {
            for j in 0..g.len() {
                let mut q = p.clone();
                q.push(g.k(j));
                next.push(q);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{adjoint, cr};

    fn hop(from: usize, to: usize, cell: &[i64], re: f64, im: f64) -> Hopping {
        Hopping { from, to, cell: cell.to_vec(), amp: c64::new(re, im) }
    }

    #[test]
    fn chain_gives_cosine() {
        let m = TightBindingModel::new(1, vec![vec![0.0]], vec![hop(0, 0, &[1], 1.0, 0.0)], 1e-10).unwrap();
        let h = build_bloch(m);
        for &k in &[0.0, 0.1, 0.25, -0.37] {
            let v = h.eval(&[k]);
            assert!((v[(0, 0)] - cr(2.0 * (2.0 * std::f64::consts::PI * k).cos())).norm() < 1e-14);
        }
    }

    #[test]
    fn closure_conflict_is_rejected() {
        let r = TightBindingModel::new(
            1,
            vec![vec![0.0], vec![0.5]],
            vec![hop(0, 1, &[0], 1.0, 0.0), hop(1, 0, &[0], 2.0, 0.0)],
            1e-10,
        );
        assert!(matches!(r, Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn onsite_must_be_real() {
        let r = TightBindingModel::new(1, vec![vec![0.0]], vec![hop(0, 0, &[0], 1.0, 0.5)], 1e-10);
        assert!(matches!(r, Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn empty_hopping_list_gives_zero() {
        let m = TightBindingModel::new(2, vec![vec![0.0, 0.0], vec![0.5, 0.5]], vec![], 1e-10).unwrap();
        let h = build_bloch(m);
        assert_eq!(crate::linalg::max_abs(&h.eval(&[0.3, -0.1])), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let m = TightBindingModel::new(1, vec![vec![0.0], vec![0.5]], vec![hop(0, 1, &[0], 1.0, 0.0), hop(1, 0, &[-1], 2.0, 0.0)], 1e-10)
            .unwrap();
        let back = TightBindingModel::from_json(&m.to_json(), 1e-10).unwrap();
        let (a, b) = (build_bloch(m), build_bloch(back));
        assert!(diff_max(&a.eval(&[0.2]), &b.eval(&[0.2])) < 1e-15);
        let v = a.eval(&[0.2]);
        assert!(diff_max(&v, &adjoint(&v)) < 1e-15);
    }
}
