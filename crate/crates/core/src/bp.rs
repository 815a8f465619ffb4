//! One layer of belief propagation on a d-ary broadcast tree.
//!
//! A layer takes the channel `W` from each child value `X_i` to its
//! observation `Y_i` and returns the channel `X_0 ↦ (Y_1, …, Y_d)`. On Δ-measures
//! this is a serial composition with the edge `BSC_δ` followed by a d-fold
//! Bayes combination ([`star_combine`]).
//!
//! The scalar layer functions evaluate the same channel in closed form when the
//! leaves are a BSC or a BEC, as finite sums over outcome classes. They are
//! what the scalar dynamics iterate.

use crate::bms::{Atom, DeltaMeasure, TreeParams};
use crate::error::{domain, Result};

/// Edge noise followed by the leaf channel: every atom moves to `δ * Δ`.
pub fn serial_compose(delta: f64, w: &DeltaMeasure) -> Result<DeltaMeasure> {
    if !(0.0..=0.5).contains(&delta) {
        return Err(domain(format!("edge noise must lie in [0, 1/2], got {delta}")));
    }
    Ok(compose_unchecked(delta, w))
}

pub(crate) fn compose_unchecked(delta: f64, w: &DeltaMeasure) -> DeltaMeasure {
    let atoms = w
        .atoms()
        .iter()
        .map(|a| Atom::new(bsc_convolve(delta, a.delta), a.weight))
        .collect();
    DeltaMeasure::from_atoms(atoms)
}

/// `a * b = a + b − 2ab`, the crossover of two BSCs in series.
pub fn bsc_convolve(a: f64, b: f64) -> f64 {
    (a + b - 2.0 * a * b).clamp(0.0, 0.5)
}

/// The two outcomes of observing one bit through `BSC_a` and `BSC_b`:
/// `(probability, posterior error)` for agreement and for disagreement.
#[inline]
pub(crate) fn star_pair(da: f64, db: f64) -> [(f64, f64); 2] {
    let agree = da * db + (1.0 - da) * (1.0 - db);
    let agree_err = if agree > 0.0 { da * db / agree } else { 0.0 };
    let x = da * (1.0 - db);
    let y = (1.0 - da) * db;
    let disagree = x + y;
    let disagree_err = if disagree > 0.0 { x.min(y) / disagree } else { 0.0 };
    [(agree, agree_err), (disagree, disagree_err)]
}

/// Bayes combination of two conditionally independent observations of the
/// same uniform bit.
pub fn star_combine(a: &DeltaMeasure, b: &DeltaMeasure) -> DeltaMeasure {
    let mut atoms = Vec::with_capacity(2 * a.len() * b.len());
    for x in a.atoms() {
        for y in b.atoms() {
            let w = x.weight * y.weight;
            for (p, err) in star_pair(x.delta, y.delta) {
                let mass = w * p;
                if mass > 0.0 {
                    atoms.push(Atom::new(err, mass));
                }
            }
        }
    }
    DeltaMeasure::from_atoms(atoms)
}

/// One tree layer: root `X_0`, children seen through `BSC_δ`, each child
/// observed through `leaf_channel`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub params: TreeParams,
    pub leaf_channel: DeltaMeasure,
}

/// Exact channel from the root to all `d` observations of the layer.
pub fn layer_bp(spec: &LayerSpec) -> DeltaMeasure {
    layer(&spec.params, &spec.leaf_channel)
}

pub(crate) fn layer(params: &TreeParams, leaf: &DeltaMeasure) -> DeltaMeasure {
    let child = compose_unchecked(params.delta(), leaf);
    let mut acc = child.clone();
    for _ in 1..params.d() {
        acc = star_combine(&acc, &child);
    }
    acc
}

/// Distinct observation patterns of a layer: `(multiplicity, P(y|0), P(y|1))`.
type Class = (f64, f64, f64);

fn binomial_row(n: usize) -> Vec<f64> {
    let mut row = vec![1.0; n + 1];
    for k in 1..n {
        row[k] = row[k - 1] * (n - k + 1) as f64 / k as f64;
    }
    row
}

/// Patterns with `BSC_q` leaves, grouped by the number `i` of ones.
fn bsc_leaf_classes(params: &TreeParams, q: f64) -> Vec<Class> {
    let d = params.d();
    let k = bsc_convolve(params.delta(), q);
    let binom = binomial_row(d);
    (0..=d)
        .map(|i| {
            let p0 = k.powi(i as i32) * (1.0 - k).powi((d - i) as i32);
            let p1 = k.powi((d - i) as i32) * (1.0 - k).powi(i as i32);
            (binom[i], p0, p1)
        })
        .collect()
}

/// Patterns with `BEC_q` leaves, grouped by the number `i` of unerased
/// observations and the number `j` of those that read 0.
fn bec_leaf_classes(params: &TreeParams, q: f64) -> Vec<Class> {
    let d = params.d();
    let delta = params.delta();
    let eps = 1.0 - q;
    let outer = binomial_row(d);
    let mut out = Vec::with_capacity((d + 1) * (d + 2) / 2);
    for i in 0..=d {
        let reach = outer[i] * eps.powi(i as i32) * q.powi((d - i) as i32);
        if reach == 0.0 {
            continue;
        }
        let inner = binomial_row(i);
        for j in 0..=i {
            let p0 = (1.0 - delta).powi(j as i32) * delta.powi((i - j) as i32);
            let p1 = delta.powi(j as i32) * (1.0 - delta).powi((i - j) as i32);
            out.push((reach * inner[j], p0, p1));
        }
    }
    out
}

/// MAP error `½ Σ min(P(y|0), P(y|1))`.
fn map_error(classes: &[Class]) -> f64 {
    0.5 * classes.iter().map(|&(m, p0, p1)| m * p0.min(p1)).sum::<f64>()
}

/// `E[P(X_0 = 1 | Y) | X_0 = 0]`.
fn mean_wrong_posterior(classes: &[Class]) -> f64 {
    classes
        .iter()
        .filter(|&&(_, p0, p1)| p0 + p1 > 0.0)
        .map(|&(m, p0, p1)| m * p0 * p1 / (p0 + p1))
        .sum()
}

/// `I_χ²(X_0; Y) = Σ (P(y|0) − P(y|1))² / (2 (P(y|0) + P(y|1)))`.
///
/// Same value as `Σ (P0² + P1²)/(P0 + P1) − 1` without the cancellation near
/// zero information.
fn chi2_information(classes: &[Class]) -> f64 {
    classes
        .iter()
        .filter(|&&(_, p0, p1)| p0 + p1 > 0.0)
        .map(|&(m, p0, p1)| {
            let diff = p0 - p1;
            m * diff * diff / (2.0 * (p0 + p1))
        })
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

fn check_bsc_leaf(q: f64) -> Result<()> {
    if (0.0..=0.5).contains(&q) {
        Ok(())
    } else {
        Err(domain(format!("BSC leaf crossover must lie in [0, 1/2], got {q}")))
    }
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(domain(format!("{name} must lie in [0, 1], got {x}")))
    }
}

/// Error function `E^BSC(q)`: MAP error probability of the layer with
/// `BSC_q` leaves.
pub fn error_function_bsc(params: &TreeParams, q: f64) -> Result<f64> {
    check_bsc_leaf(q)?;
    Ok(error_bsc(params, q))
}

pub(crate) fn error_bsc(params: &TreeParams, q: f64) -> f64 {
    map_error(&bsc_leaf_classes(params, q))
}

/// Erasure function `E^BEC(q)`: MAP error probability of the layer with
/// `BEC_q` leaves.
pub fn erasure_function_bec(params: &TreeParams, q: f64) -> Result<f64> {
    check_unit("erasure probability", q)?;
    Ok(error_bec(params, q))
}

pub(crate) fn error_bec(params: &TreeParams, q: f64) -> f64 {
    map_error(&bec_leaf_classes(params, q))
}

/// Average posterior of the wrong root value with `BSC_q` leaves.
///
/// This is the conditional-expectation reading of the error function; the
/// dynamics use the MAP error of [`error_function_bsc`] instead.
pub fn error_function_bsc_posterior(params: &TreeParams, q: f64) -> Result<f64> {
    check_bsc_leaf(q)?;
    Ok(mean_wrong_posterior(&bsc_leaf_classes(params, q)))
}

/// Average posterior of the wrong root value with `BEC_q` leaves.
pub fn erasure_function_bec_posterior(params: &TreeParams, q: f64) -> Result<f64> {
    check_unit("erasure probability", q)?;
    Ok(mean_wrong_posterior(&bec_leaf_classes(params, q)))
}

/// χ²-information between the root and the layer observations with `BSC_q`
/// leaves.
pub fn chi2_layer_bsc(params: &TreeParams, q: f64) -> Result<f64> {
    check_bsc_leaf(q)?;
    Ok(chi2_bsc(params, q))
}

pub(crate) fn chi2_bsc(params: &TreeParams, q: f64) -> f64 {
    chi2_information(&bsc_leaf_classes(params, q))
}

/// `g(ε)`: χ²-information of the layer when each leaf is seen through an
/// erasure channel that keeps the value with probability `eps`.
pub fn chi2_layer_bec(params: &TreeParams, eps: f64) -> Result<f64> {
    check_unit("unerased fraction", eps)?;
    Ok(chi2_bec(params, eps))
}

pub(crate) fn chi2_bec(params: &TreeParams, eps: f64) -> f64 {
    chi2_information(&bec_leaf_classes(params, 1.0 - eps))
}

/// Error χ²-entropy `H^BSC(q) = 1 − I_χ²` with `BSC_q` leaves.
pub fn chi2_entropy_bsc(params: &TreeParams, q: f64) -> Result<f64> {
    Ok(1.0 - chi2_layer_bsc(params, q)?)
}

/// Erasure χ²-entropy `H^BEC(q) = 1 − g(1 − q)`.
pub fn chi2_entropy_bec(params: &TreeParams, q: f64) -> Result<f64> {
    check_unit("erasure probability", q)?;
    Ok(1.0 - chi2_bec(params, 1.0 - q))
}

/// `f(ε) = 1 − (1 − (1−2δ)² ε)^d`: χ²-information of `d` independent
/// erasure looks, each surviving with probability `(1−2δ)² ε`.
pub fn f_percolation(params: &TreeParams, eps: f64) -> Result<f64> {
    check_unit("unerased fraction", eps)?;
    Ok(percolation(params, eps))
}

pub(crate) fn percolation(params: &TreeParams, eps: f64) -> f64 {
    let t = params.theta();
    let survive = t * t * eps;
    if survive >= 1.0 {
        return 1.0;
    }
    -(params.d() as f64 * (-survive).ln_1p()).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bms::{bec, bsc};

    fn p(d: usize, delta: f64) -> TreeParams {
        TreeParams::new(d, delta).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Brute-force layer: enumerate all 2^d child values and all leaf
    /// outcomes of a BSC or BEC leaf; returns (P(y|0), P(y|1)) per outcome.
    fn enumerate_layer(d: usize, delta: f64, leaf: &[(f64, [f64; 2])]) -> Vec<(f64, f64)> {
        // leaf: list of (prob of symbol | x=0, prob | x=1) keyed by symbol
        let symbols = leaf.len();
        let n_out = symbols.pow(d as u32);
        let mut out = vec![(0.0, 0.0); n_out];
        for root in 0..2usize {
            for children in 0..(1usize << d) {
                let mut p_children = 1.0;
                for c in 0..d {
                    let xc = (children >> c) & 1;
                    p_children *= if xc == root { 1.0 - delta } else { delta };
                }
                for (y, slot) in out.iter_mut().enumerate() {
                    let mut py = p_children;
                    let mut rest = y;
                    for c in 0..d {
                        let s = rest % symbols;
                        rest /= symbols;
                        py *= leaf[s].1[(children >> c) & 1];
                    }
                    if root == 0 {
                        slot.0 += py;
                    } else {
                        slot.1 += py;
                    }
                }
            }
        }
        out
    }

    fn bsc_leaf(q: f64) -> Vec<(f64, [f64; 2])> {
        vec![(0.0, [1.0 - q, q]), (1.0, [q, 1.0 - q])]
    }

    fn bec_leaf(q: f64) -> Vec<(f64, [f64; 2])> {
        vec![
            (0.0, [1.0 - q, 0.0]),
            (1.0, [0.0, 1.0 - q]),
            (2.0, [q, q]),
        ]
    }

    fn brute_pe(outcomes: &[(f64, f64)]) -> f64 {
        0.5 * outcomes.iter().map(|&(a, b)| a.min(b)).sum::<f64>()
    }

    fn brute_chi2(outcomes: &[(f64, f64)]) -> f64 {
        outcomes
            .iter()
            .filter(|&&(a, b)| a + b > 0.0)
            .map(|&(a, b)| (a * a + b * b) / (a + b))
            .sum::<f64>()
            - 1.0
    }

    #[test]
    fn serial_compose_examples() {
        let w = DeltaMeasure::new([(0.1, 0.3), (0.4, 0.7)]).unwrap();
        assert_eq!(serial_compose(0.0, &w).unwrap(), w);
        let c = serial_compose(0.1, &bsc(0.2).unwrap()).unwrap();
        // [[.9,.1],[.1,.9]] x [[.8,.2],[.2,.8]] has off-diagonal .1*.8 + .9*.2
        assert!(close(c.as_bsc().unwrap(), 0.1 * 0.8 + 0.9 * 0.2, 1e-15));
        assert!(close(c.as_bsc().unwrap(), 0.26, 1e-15));
        let useless = serial_compose(0.5, &w).unwrap();
        assert_eq!(useless.as_bsc(), Some(0.5));
        assert!(serial_compose(0.7, &w).is_err());
    }

    #[test]
    fn star_combine_examples() {
        let w = DeltaMeasure::new([(0.1, 0.3), (0.4, 0.7)]).unwrap();
        assert_eq!(star_combine(&bsc(0.0).unwrap(), &w).as_bsc(), Some(0.0));
        let same = star_combine(&bsc(0.5).unwrap(), &w);
        assert_eq!(same.len(), 2);
        for (a, b) in same.atoms().iter().zip(w.atoms()) {
            assert!(close(a.delta, b.delta, 1e-15) && close(a.weight, b.weight, 1e-15));
        }
        let m = star_combine(&bsc(0.1).unwrap(), &bsc(0.2).unwrap());
        let a = m.atoms();
        assert_eq!(a.len(), 2);
        assert!(close(a[0].delta, 0.02 / 0.74, 1e-15) && close(a[0].weight, 0.74, 1e-15));
        assert!(close(a[1].delta, 0.08 / 0.26, 1e-15) && close(a[1].weight, 0.26, 1e-15));
        assert!(close(a[0].delta, 0.027027, 1e-6) && close(a[1].delta, 0.307692, 1e-6));
    }

    #[test]
    fn layer_examples() {
        let spec = |d, delta, leaf| LayerSpec {
            params: p(d, delta),
            leaf_channel: leaf,
        };
        assert_eq!(layer_bp(&spec(3, 0.1, bsc(0.5).unwrap())).as_bsc(), Some(0.5));
        let m = layer_bp(&spec(2, 0.1, bsc(0.0).unwrap()));
        let a = m.atoms();
        assert_eq!(a.len(), 2);
        assert!(close(a[0].delta, 0.01 / 0.82, 1e-15) && close(a[0].weight, 0.82, 1e-15));
        assert!(close(a[0].delta, 0.012195, 1e-6));
        assert_eq!(a[1].delta, 0.5);
        assert!(close(a[1].weight, 0.18, 1e-15));
        assert_eq!(layer_bp(&spec(2, 0.1, bec(1.0).unwrap())).as_bsc(), Some(0.5));
    }

    #[test]
    fn error_function_examples() {
        assert!(close(error_function_bsc(&p(3, 0.2), 0.5).unwrap(), 0.5, 1e-15));
        assert!(close(error_function_bsc(&p(2, 0.1), 0.0).unwrap(), 0.10, 1e-15));
        // two looks at one bit through BSC(0.2): ties at disagreement cost 1/2
        let pe = error_function_bsc(&p(2, 0.0), 0.2).unwrap();
        let agree = 0.04 + 0.64;
        let direct = agree * (0.04 / agree) + 0.5 * 0.32;
        assert!(close(pe, direct, 1e-15) && close(pe, 0.2, 1e-15));
        assert!(error_function_bsc(&p(2, 0.0), 0.6).is_err());
    }

    #[test]
    fn erasure_function_examples() {
        assert!(close(erasure_function_bec(&p(3, 0.2), 1.0).unwrap(), 0.5, 1e-15));
        assert!(close(erasure_function_bec(&p(2, 0.1), 0.0).unwrap(), 0.10, 1e-15));
        for &q in &[0.0, 0.3, 0.77, 1.0] {
            let v = erasure_function_bec(&p(1, 0.0), q).unwrap();
            assert!(close(v, q / 2.0, 1e-15));
        }
        assert!(erasure_function_bec(&p(2, 0.0), 1.1).is_err());
    }

    #[test]
    fn posterior_variants_differ_from_map() {
        let params = p(2, 0.1);
        let map = error_function_bsc(&params, 0.05).unwrap();
        let post = error_function_bsc_posterior(&params, 0.05).unwrap();
        assert!(post >= map - 1e-15);
        let brute = enumerate_layer(2, 0.1, &bsc_leaf(0.05));
        let direct: f64 = brute.iter().map(|&(a, b)| a * b / (a + b)).sum();
        assert!(close(post, direct, 1e-14));
        let post = erasure_function_bec_posterior(&params, 0.3).unwrap();
        let brute = enumerate_layer(2, 0.1, &bec_leaf(0.3));
        let direct: f64 = brute
            .iter()
            .filter(|&&(a, b)| a + b > 0.0)
            .map(|&(a, b)| a * b / (a + b))
            .sum();
        assert!(close(post, direct, 1e-14));
    }

    #[test]
    fn chi2_entropy_examples() {
        assert!(close(chi2_entropy_bsc(&p(2, 0.3), 0.5).unwrap(), 1.0, 1e-15));
        // binomial sum at κ = 0.1, terms i = 0, 1, 2
        let k = 0.1f64;
        let direct = 2.0
            * ((1.0 - k).powi(4) / ((1.0 - k).powi(2) + k * k)
                + 2.0 * (k * (1.0 - k)).powi(2) / (2.0 * k * (1.0 - k))
                + k.powi(4) / (k * k + (1.0 - k).powi(2)))
            - 1.0;
        let v = chi2_entropy_bsc(&p(2, 0.0), 0.1).unwrap();
        assert!(close(v, 1.0 - direct, 1e-14));
        assert!(close(1.0 - v, 0.780488, 1e-6));
        let brute = enumerate_layer(2, 0.0, &bsc_leaf(0.1));
        assert!(close(1.0 - v, brute_chi2(&brute), 1e-14));
        // δ and q swap roles when one of them is zero
        let v2 = chi2_entropy_bsc(&p(2, 0.1), 0.0).unwrap();
        let m = layer_bp(&LayerSpec {
            params: p(2, 0.1),
            leaf_channel: bsc(0.0).unwrap(),
        });
        assert!(close(1.0 - v2, m.chi2(), 1e-14));
        assert!(close(v2, v, 1e-14));
    }

    #[test]
    fn chi2_entropy_bec_examples() {
        assert!(close(chi2_entropy_bec(&p(2, 0.1), 1.0).unwrap(), 1.0, 1e-15));
        let v = chi2_entropy_bec(&p(2, 0.1), 0.0).unwrap();
        assert!(close(1.0 - v, 0.780488, 1e-6));
        assert!(close(v, chi2_entropy_bsc(&p(2, 0.1), 0.0).unwrap(), 1e-14));
        for &q in &[0.0, 0.25, 0.9, 1.0] {
            assert!(close(chi2_entropy_bec(&p(1, 0.0), q).unwrap(), q, 1e-15));
        }
    }

    #[test]
    fn g_matches_printed_double_sum() {
        // 2 Σ_{j≤i} C(d,i) ε^i (1-ε)^{d-i} C(i,j) (1-δ)^{2j} δ^{2(i-j)} / (...) − 1
        for &(d, delta, eps) in &[(2usize, 0.1f64, 0.3f64), (3, 0.05, 0.8), (4, 0.2, 0.5)] {
            let mut s = 0.0;
            let c = |n: usize, k: usize| -> f64 {
                (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
            };
            for i in 0..=d {
                for j in 0..=i {
                    let a = (1.0 - delta).powi(j as i32) * delta.powi((i - j) as i32);
                    let b = (1.0 - delta).powi((i - j) as i32) * delta.powi(j as i32);
                    s += c(d, i)
                        * eps.powi(i as i32)
                        * (1.0 - eps).powi((d - i) as i32)
                        * c(i, j)
                        * a
                        * a
                        / (a + b);
                }
            }
            let g = chi2_layer_bec(&p(d, delta), eps).unwrap();
            assert!(close(g, 2.0 * s - 1.0, 1e-13), "d={d}: {g} vs {}", 2.0 * s - 1.0);
        }
    }

    #[test]
    fn closed_forms_match_brute_force() {
        for d in 1..=4 {
            for &delta in &[0.0, 0.07, 0.2, 0.5] {
                for &q in &[0.0, 0.13, 0.31, 0.5] {
                    let params = p(d, delta);
                    let brute = enumerate_layer(d, delta, &bsc_leaf(q));
                    assert!(close(error_bsc(&params, q), brute_pe(&brute), 1e-14));
                    assert!(close(chi2_bsc(&params, q), brute_chi2(&brute), 1e-13));
                    let brute = enumerate_layer(d, delta, &bec_leaf(2.0 * q));
                    assert!(close(error_bec(&params, 2.0 * q), brute_pe(&brute), 1e-14));
                    assert!(close(chi2_bec(&params, 1.0 - 2.0 * q), brute_chi2(&brute), 1e-13));
                }
            }
        }
    }

    #[test]
    fn closed_forms_match_measure_pipeline() {
        for d in 1..=5 {
            for &delta in &[0.0, 0.03, 0.11, 0.25, 0.5] {
                for &q in &[0.0, 0.02, 0.19, 0.37, 0.5] {
                    let params = p(d, delta);
                    let bsc_out = layer(&params, &bsc(q).unwrap()).functionals();
                    assert!(close(error_bsc(&params, q), bsc_out.p_e, 1e-12));
                    assert!(close(chi2_bsc(&params, q), bsc_out.chi2, 1e-12));
                    let e = 2.0 * q;
                    let bec_out = layer(&params, &bec(e).unwrap()).functionals();
                    assert!(close(error_bec(&params, e), bec_out.p_e, 1e-12));
                    assert!(close(chi2_bec(&params, 1.0 - e), bec_out.chi2, 1e-12));
                }
            }
        }
    }

    #[test]
    fn percolation_examples() {
        assert_eq!(f_percolation(&p(2, 0.1), 0.0).unwrap(), 0.0);
        assert!(close(f_percolation(&p(2, 0.0), 1.0).unwrap(), 1.0, 1e-15));
        assert!(close(f_percolation(&p(2, 0.1), 0.5).unwrap(), 0.5376, 1e-15));
        assert!(f_percolation(&p(2, 0.1), 1.5).is_err());
    }

    #[test]
    fn near_critical_expansion() {
        let params = TreeParams::new(2, crate::bms::delta_c(2).unwrap()).unwrap();
        for &eps in &[1e-3, 1e-4] {
            let chi2 = chi2_layer_bsc(&params, 0.5 - eps).unwrap();
            let ratio = chi2 / (4.0 * eps * eps);
            assert!((ratio - 1.0).abs() < 0.01, "eps={eps}: ratio {ratio}");
        }
    }
}
