//! Named fixture models.

use crate::error::{Error, Result};
use crate::model::{Hopping, TightBindingModel};
use faer::c64;
use std::collections::BTreeMap;

fn hop(from: usize, to: usize, cell: &[i64], amp: c64) -> Hopping {
    Hopping { from, to, cell: cell.to_vec(), amp }
}

fn real(x: f64) -> c64 {
    c64::new(x, 0.0)
}

fn build(dimension: usize, sites: Vec<Vec<f64>>, hops: Vec<Hopping>) -> TightBindingModel {
    TightBindingModel::new(dimension, sites, hops, 1e-12).expect("preset is well formed")
}

/// One site per cell, nearest-neighbour hopping `t`: h(k) = 2t·cos 2πk.
pub fn chain(t: f64) -> TightBindingModel {
    build(1, vec![vec![0.0]], vec![hop(0, 0, &[1], real(t))])
}

/// SSH chain: h(k) = [[0, v + w e^{−2πik}], [v + w e^{2πik}, 0]].
pub fn ssh(v: f64, w: f64) -> TightBindingModel {
    rice_mele(v, w, 0.0)
}

/// SSH chain with staggered on-site energies ±m.
pub fn rice_mele(v: f64, w: f64, m: f64) -> TightBindingModel {
    let mut hops = vec![hop(1, 0, &[0], real(v)), hop(1, 0, &[-1], real(w))];
    if m != 0.0 {
        hops.push(hop(0, 0, &[0], real(m)));
        hops.push(hop(1, 1, &[0], real(-m)));
    }
    build(1, vec![vec![0.0], vec![0.5]], hops)
}

/// Two-band model on the square lattice with real hoppings:
/// h₀₁(k) = v + w₁e^{−2πik₁} + w₂e^{−2πik₂}, staggered mass ±m.
pub fn trs2d(v: f64, w1: f64, w2: f64, m: f64) -> TightBindingModel {
    let hops = vec![
        hop(1, 0, &[0, 0], real(v)),
        hop(1, 0, &[-1, 0], real(w1)),
        hop(1, 0, &[0, -1], real(w2)),
        hop(0, 0, &[0, 0], real(m)),
        hop(1, 1, &[0, 0], real(-m)),
    ];
    build(2, vec![vec![0.25, 0.5], vec![0.75, 0.5]], hops)
}

/// Four orbitals, real hoppings, lower two bands form an isolated composite
/// group: two coupled copies of [`trs2d`] with different couplings.
pub fn trs4(c: f64) -> TightBindingModel {
    let sites = vec![vec![0.2, 0.3], vec![0.7, 0.3], vec![0.2, 0.8], vec![0.7, 0.8]];
    let hops = vec![
        hop(1, 0, &[0, 0], real(1.0)),
        hop(1, 0, &[-1, 0], real(0.5)),
        hop(1, 0, &[0, -1], real(0.5)),
        hop(0, 0, &[0, 0], real(1.5)),
        hop(1, 1, &[0, 0], real(-1.5)),
        hop(3, 2, &[0, 0], real(1.0)),
        hop(3, 2, &[-1, 0], real(0.4)),
        hop(3, 2, &[0, -1], real(0.6)),
        hop(2, 2, &[0, 0], real(1.2)),
        hop(3, 3, &[0, 0], real(-1.2)),
        hop(0, 2, &[0, 0], real(c)),
        hop(1, 3, &[1, 0], real(c)),
        hop(0, 3, &[0, 1], real(0.5 * c)),
    ];
    build(2, sites, hops)
}

/// Haldane model on the honeycomb lattice; complex next-neighbour hopping
/// t₂e^{±iφ}, sublattice mass ±m.
pub fn haldane(t1: f64, t2: f64, phi: f64, m: f64) -> TightBindingModel {
    let p = c64::new(phi.cos(), phi.sin()) * t2;
    let mut hops = vec![hop(0, 1, &[0, 0], real(t1)), hop(0, 1, &[-1, 0], real(t1)), hop(0, 1, &[0, -1], real(t1))];
    for cell in [[1, 0], [-1, 1], [0, -1]] {
        hops.push(hop(0, 0, &cell, p));
        hops.push(hop(1, 1, &cell, p.conj()));
    }
    if m != 0.0 {
        hops.push(hop(0, 0, &[0, 0], real(m)));
        hops.push(hop(1, 1, &[0, 0], real(-m)));
    }
    build(2, vec![vec![1.0 / 3.0, 1.0 / 3.0], vec![2.0 / 3.0, 2.0 / 3.0]], hops)
}

/// Strongly dimerized square-lattice stack used by the magnetic fixtures:
/// intra-cell bond v along x, weak inter-cell bond wx along x, weak
/// vertical hopping ty on both sublattices, diagonal bond td from A to the
/// B site one row up, onsite ±m on A/B. Without td the Wannier functions
/// stay on one row; without m the patch is inversion symmetric and the
/// first-order Gram correction vanishes on the interior.
pub fn ssh_stack(v: f64, wx: f64, ty: f64, td: f64, m: f64) -> TightBindingModel {
    let hops = vec![
        hop(0, 0, &[0, 0], real(m)),
        hop(1, 1, &[0, 0], real(-m)),
        hop(0, 1, &[0, 0], real(v)),
        hop(1, 0, &[1, 0], real(wx)),
        hop(0, 0, &[0, 1], real(ty)),
        hop(1, 1, &[0, 1], real(ty)),
        hop(0, 1, &[0, 1], real(td)),
    ];
    build(2, vec![vec![0.25, 0.5], vec![0.75, 0.5]], hops)
}

/// Default band selection (lowest `n` bands) for each preset.
pub fn default_bands(name: &str) -> usize {
    match name {
        "chain" => 1,
        "trs4" => 2,
        _ => 1,
    }
}

pub const NAMES: &[&str] =
    &["chain", "ssh", "rice-mele", "trs2d", "trs4", "haldane", "haldane-topological", "haldane-trivial", "ssh-stack"];

/// Looks up a preset by name; `params` overrides its default parameters.
pub fn by_name(name: &str, params: &BTreeMap<String, f64>) -> Result<TightBindingModel> {
    let g = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
    let model = match name {
        "chain" => chain(g("t", 1.0)),
        "ssh" => ssh(g("v", 1.0), g("w", 2.0)),
        "rice-mele" => rice_mele(g("v", 1.0), g("w", 2.0), g("m", 0.7)),
        "trs2d" => trs2d(g("v", 1.0), g("w1", 0.6), g("w2", 0.4), g("m", 0.5)),
        "trs4" => trs4(g("c", 0.5)),
        "haldane" | "haldane-topological" => {
            haldane(g("t1", 1.0), g("t2", 0.2), g("phi", std::f64::consts::FRAC_PI_2), g("m", 0.0))
        }
        "haldane-trivial" => haldane(g("t1", 1.0), g("t2", 0.2), g("phi", std::f64::consts::FRAC_PI_2), g("m", 2.5)),
        "ssh-stack" => ssh_stack(g("v", 1.0), g("wx", 0.1), g("ty", 0.1), g("td", 0.1), g("m", 0.3)),
        _ => return Err(Error::Input(format!("unknown preset {name}; known: {}", NAMES.join(", ")))),
    };
    Ok(model)
}
