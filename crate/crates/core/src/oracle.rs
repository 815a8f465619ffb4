//! Ground truth for small trees.
//!
//! [`exact_tree`] enumerates every leaf vector of a depth-`h` tree and decodes
//! the root by MAP. [`exact_de`] runs unquantized BP layers on Δ-measures. The
//! two must agree; both serve as references for the quantized pipelines.

use crate::bms::{bsc, DeltaMeasure, TreeParams};
use crate::bp::layer;
use crate::error::{Error, Result};

/// Largest leaf count [`exact_tree`] enumerates.
pub const MAX_LEAVES: usize = 16;

/// Default atom budget of [`exact_de`].
pub const DE_ATOM_CAP: usize = 1_000_000;

/// Exact functionals of the root-to-leaves channel of a finite tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactResult {
    pub p_e: f64,
    /// Bits.
    pub mutual_info: f64,
    pub chi2_info: f64,
    pub leaf_count: usize,
}

/// `P(leaves = y | root = x)` for every leaf vector `y`, listed in
/// depth-first leaf order with the first leaf in the lowest bit.
fn leaf_likelihoods(params: &TreeParams, h: usize, root: usize) -> Vec<f64> {
    let delta = params.delta();
    // Subtree of height k: likelihoods given the subtree root is 0 and 1.
    let mut given = [vec![1.0, 0.0], vec![0.0, 1.0]];
    let mut leaves = 1usize;
    for _ in 0..h {
        let through_edge = |x: usize| -> Vec<f64> {
            given[x]
                .iter()
                .zip(&given[1 - x])
                .map(|(same, flipped)| (1.0 - delta) * same + delta * flipped)
                .collect()
        };
        let edge = [through_edge(0), through_edge(1)];
        let child_outcomes = 1usize << leaves;
        let mut next = [Vec::new(), Vec::new()];
        for x in 0..2 {
            let mut acc = vec![1.0];
            for _ in 0..params.d() {
                let mut grown = Vec::with_capacity(acc.len() * child_outcomes);
                for &p_child in &edge[x] {
                    grown.extend(acc.iter().map(|&p| p * p_child));
                }
                acc = grown;
            }
            next[x] = acc;
        }
        given = next;
        leaves *= params.d();
    }
    let [zero, one] = given;
    if root == 0 {
        zero
    } else {
        one
    }
}

fn leaf_count(params: &TreeParams, h: usize) -> Option<usize> {
    let mut n = 1usize;
    for _ in 0..h {
        n = n.checked_mul(params.d())?;
        if n > MAX_LEAVES {
            return None;
        }
    }
    Some(n)
}

/// MAP error, mutual information and χ²-information of the depth-`h` tree by
/// enumerating all `2^(d^h)` leaf vectors.
pub fn exact_tree(params: &TreeParams, h: usize) -> Result<ExactResult> {
    let leaves = leaf_count(params, h).ok_or_else(|| {
        Error::Resource(format!(
            "d^h must be at most {MAX_LEAVES} leaves for enumeration (d = {}, h = {h})",
            params.d()
        ))
    })?;
    let p0 = leaf_likelihoods(params, h, 0);
    let p1 = leaf_likelihoods(params, h, 1);
    let mut p_e = 0.0;
    let mut info = 0.0;
    let mut chi2 = 0.0;
    for (&a, &b) in p0.iter().zip(&p1) {
        let total = a + b;
        if total <= 0.0 {
            continue;
        }
        p_e += 0.5 * a.min(b);
        let diff = a - b;
        chi2 += diff * diff / (2.0 * total);
        for p in [a, b] {
            if p > 0.0 {
                info += 0.5 * p * (2.0 * p / total).log2();
            }
        }
    }
    Ok(ExactResult {
        p_e,
        mutual_info: info.clamp(0.0, 1.0),
        chi2_info: chi2.clamp(0.0, 1.0),
        leaf_count: leaves,
    })
}

/// Largest `|P(y | 0) − P(ȳ | 1)|` over leaf vectors, with the two sides
/// computed independently. Zero up to rounding for any valid tree.
pub fn relabeling_gap(params: &TreeParams, h: usize) -> Result<f64> {
    let leaves = leaf_count(params, h)
        .ok_or_else(|| Error::Resource(format!("d^h exceeds {MAX_LEAVES} leaves")))?;
    let p0 = leaf_likelihoods(params, h, 0);
    let p1 = leaf_likelihoods(params, h, 1);
    let mask = (1usize << leaves) - 1;
    Ok(p0
        .iter()
        .enumerate()
        .map(|(y, &a)| (a - p1[y ^ mask]).abs())
        .fold(0.0, f64::max))
}

/// Exact root-to-leaves channel of the depth-`h` tree: `h` unquantized BP
/// layers from the perfect channel.
pub fn exact_de(params: &TreeParams, h: usize) -> Result<DeltaMeasure> {
    exact_de_capped(params, h, DE_ATOM_CAP)
}

/// [`exact_de`] with an explicit atom budget.
pub fn exact_de_capped(params: &TreeParams, h: usize, cap: usize) -> Result<DeltaMeasure> {
    let mut w = bsc(0.0)?;
    for level in 0..h {
        // A layer produces at most 2^(d−1) n^d atoms before merging.
        let bound = (w.len() as f64).powi(params.d() as i32) * 2f64.powi(params.d() as i32 - 1);
        if bound > cap as f64 {
            return Err(Error::Resource(format!(
                "level {} could produce {bound:.3e} atoms, over the cap of {cap}",
                level + 1
            )));
        }
        w = layer(params, &w);
    }
    Ok(w)
}
