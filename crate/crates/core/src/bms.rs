//! Binary memoryless symmetric (BMS) channels as atomic measures over the
//! crossover parameter Δ ∈ [0, 1/2].
//!
//! Every BMS channel is a mixture of binary symmetric channels: the output
//! reveals which component was used, and that component flips the input with
//! probability Δ. A [`DeltaMeasure`] stores the mixing law. `BSC_δ` is the
//! one-atom measure at δ and `BEC_q` is the two-atom measure
//! `{0 w.p. 1-q, 1/2 w.p. q}`.
//!
//! The three functionals used throughout the crate are mixture averages of the
//! per-atom values:
//!
//! | functional      | BSC_Δ atom          |
//! |-----------------|---------------------|
//! | error prob.     | Δ                   |
//! | capacity (bits) | 1 − h(Δ)            |
//! | χ²-capacity     | (1 − 2Δ)²           |

use std::f64::consts::LN_2;

use crate::error::{domain, Result};

/// Atoms closer than this are fused when a measure is built.
pub const MERGE_TOL: f64 = 1e-12;

/// Allowed deviation of the total weight from one before normalisation.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Slack tolerated on Δ values produced by floating point arithmetic.
const RANGE_SLACK: f64 = 1e-12;

/// Binary entropy in bits, with `0·log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("binary entropy needs p in [0, 1], got {p}")));
    }
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

/// Capacity `1 - h((1-b)/2)` of a BSC with bias `b = 1 - 2Δ`.
///
/// Evaluated through its even power series for small biases, where the
/// closed form cancels catastrophically.
pub fn capacity_from_bias(b: f64) -> f64 {
    let b = b.abs().min(1.0);
    if b < 0.05 {
        // sum_k b^(2k) / (2k (2k-1)) / ln 2
        let b2 = b * b;
        let mut term = b2;
        let mut acc: f64 = 0.0;
        let mut k = 1.0;
        while term > 1e-20 * acc.max(f64::MIN_POSITIVE) {
            acc += term / (2.0 * k * (2.0 * k - 1.0));
            term *= b2;
            k += 1.0;
        }
        acc / LN_2
    } else if b >= 1.0 {
        1.0
    } else {
        ((1.0 + b) * b.ln_1p() + (1.0 - b) * (-b).ln_1p()) / (2.0 * LN_2)
    }
}

/// Reconstruction threshold `(1 - 1/√d) / 2` of the d-ary tree.
pub fn delta_c(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(domain(format!("threshold needs arity d >= 2, got {d}")));
    }
    Ok(threshold_unchecked(d))
}

fn threshold_unchecked(d: usize) -> f64 {
    0.5 * (1.0 - 1.0 / (d as f64).sqrt())
}

/// Arity and edge flip probability of the broadcast tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    d: usize,
    delta: f64,
}

impl TreeParams {
    /// Builds parameters for a tree of arity `d >= 1` with edge noise
    /// `delta ∈ [0, 1/2]`.
    ///
    /// Arity one is accepted so that single-edge layers can be evaluated;
    /// its threshold is 0.
    pub fn new(d: usize, delta: f64) -> Result<Self> {
        if d == 0 {
            return Err(domain("tree arity must be at least 1"));
        }
        if !(0.0..=0.5).contains(&delta) {
            return Err(domain(format!("edge noise must lie in [0, 1/2], got {delta}")));
        }
        Ok(Self { d, delta })
    }

    /// Parameters at distance `tau` below the threshold, `δ = δ_c − τ`.
    pub fn near_critical(d: usize, tau: f64) -> Result<Self> {
        let dc = delta_c(d)?;
        if !(tau > 0.0 && tau <= dc) {
            return Err(domain(format!("tau must lie in (0, {dc}], got {tau}")));
        }
        Self::new(d, (dc - tau).max(0.0))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Edge bias `1 − 2δ`.
    pub fn theta(&self) -> f64 {
        1.0 - 2.0 * self.delta
    }

    pub fn delta_c(&self) -> f64 {
        threshold_unchecked(self.d)
    }

    /// `δ_c − δ`; negative above the threshold.
    pub fn tau(&self) -> f64 {
        self.delta_c() - self.delta
    }

    /// Kesten–Stigum ratio `d (1 − 2δ)²`.
    pub fn ks_ratio(&self) -> f64 {
        let t = self.theta();
        self.d as f64 * t * t
    }

    /// True when `d (1 − 2δ)² > 1`.
    pub fn is_reconstructible(&self) -> bool {
        self.ks_ratio() > 1.0
    }
}

/// Error probability, capacity and χ²-capacity of a BMS channel under a
/// uniform input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelFunctionals {
    pub p_e: f64,
    /// Capacity in bits.
    pub capacity: f64,
    pub chi2: f64,
}

impl ChannelFunctionals {
    pub fn of_bsc(delta: f64) -> Self {
        let b = 1.0 - 2.0 * delta;
        Self {
            p_e: delta,
            capacity: capacity_from_bias(b),
            chi2: b * b,
        }
    }

    pub fn of_bec(q: f64) -> Self {
        Self {
            p_e: 0.5 * q,
            capacity: 1.0 - q,
            chi2: 1.0 - q,
        }
    }
}

/// One mixture component: a BSC with crossover `delta` used with
/// probability `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub delta: f64,
    pub weight: f64,
}

impl Atom {
    pub fn new(delta: f64, weight: f64) -> Self {
        Self { delta, weight }
    }

    pub fn bias(&self) -> f64 {
        1.0 - 2.0 * self.delta
    }
}

/// A BMS channel as a finite atomic probability measure over Δ ∈ [0, 1/2].
///
/// Atoms are kept sorted by Δ with strictly increasing values; atoms within
/// [`MERGE_TOL`] of each other are fused on construction and the weights are
/// renormalised to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMeasure {
    atoms: Vec<Atom>,
}

impl DeltaMeasure {
    /// Builds a measure from `(delta, weight)` pairs.
    ///
    /// Zero weights are dropped. The weights must sum to one up to `1e-9`;
    /// the residual is normalised away.
    pub fn new<I>(atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut out = Vec::new();
        for (delta, weight) in atoms {
            if !delta.is_finite() || !(-RANGE_SLACK..=0.5 + RANGE_SLACK).contains(&delta) {
                return Err(domain(format!("atom location {delta} outside [0, 1/2]")));
            }
            if !weight.is_finite() || weight < 0.0 {
                return Err(domain(format!("atom weight {weight} is not a probability")));
            }
            if weight > 0.0 {
                out.push(Atom::new(delta.clamp(0.0, 0.5), weight));
            }
        }
        let total: f64 = out.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(domain(format!("atom weights sum to {total}, expected 1")));
        }
        Ok(Self::from_atoms(out))
    }

    /// Sorts, merges and normalises atoms that are already known to be in
    /// range with nonnegative weights.
    pub(crate) fn from_atoms(mut atoms: Vec<Atom>) -> Self {
        atoms.retain(|a| a.weight > 0.0);
        atoms.sort_by(|a, b| a.delta.total_cmp(&b.delta));
        let mut merged = merge_sorted(&atoms, MERGE_TOL);
        let total: f64 = merged.iter().map(|a| a.weight).sum();
        if total > 0.0 && total != 1.0 {
            for a in &mut merged {
                a.weight /= total;
            }
        }
        Self { atoms: merged }
    }

    /// Measure whose atoms are already sorted, distinct and normalised.
    pub(crate) fn from_sorted_unchecked(atoms: Vec<Atom>) -> Self {
        debug_assert!(atoms.windows(2).all(|w| w[0].delta < w[1].delta));
        Self { atoms }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn p_e(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight * a.delta).sum()
    }

    pub fn capacity(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * capacity_from_bias(a.bias()))
            .sum()
    }

    pub fn chi2(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                let b = a.bias();
                a.weight * b * b
            })
            .sum()
    }

    pub fn functionals(&self) -> ChannelFunctionals {
        ChannelFunctionals {
            p_e: self.p_e(),
            capacity: self.capacity(),
            chi2: self.chi2(),
        }
    }

    /// Fuses atoms whose locations differ by at most `tol`.
    ///
    /// A cluster starts at its leftmost atom and absorbs every following atom
    /// within `tol` of that anchor; the fused atom sits at the weighted mean,
    /// so the error probability is unchanged.
    pub fn merge_atoms(&self, tol: f64) -> Self {
        Self {
            atoms: merge_sorted(&self.atoms, tol.max(0.0)),
        }
    }

    /// The single crossover value when the measure is a BSC.
    pub fn as_bsc(&self) -> Option<f64> {
        match self.atoms.as_slice() {
            [a] => Some(a.delta),
            _ => None,
        }
    }
}

fn merge_sorted(atoms: &[Atom], tol: f64) -> Vec<Atom> {
    let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
    let mut anchor = f64::NAN;
    let mut mass = 0.0;
    let mut moment = 0.0;
    for a in atoms {
        if !out.is_empty() && a.delta - anchor <= tol {
            mass += a.weight;
            moment += a.weight * a.delta;
            let last = out.last_mut().expect("nonempty");
            last.weight = mass;
            last.delta = (moment / mass).clamp(anchor, a.delta);
        } else {
            anchor = a.delta;
            mass = a.weight;
            moment = a.weight * a.delta;
            out.push(*a);
        }
    }
    out
}

/// `BSC_δ` as a one-atom measure.
pub fn bsc(delta: f64) -> Result<DeltaMeasure> {
    if !(0.0..=0.5).contains(&delta) {
        return Err(domain(format!("BSC crossover must lie in [0, 1/2], got {delta}")));
    }
    Ok(DeltaMeasure::from_sorted_unchecked(vec![Atom::new(delta, 1.0)]))
}

/// `BEC_q` as the measure `{0 w.p. 1-q, 1/2 w.p. q}`.
pub fn bec(q: f64) -> Result<DeltaMeasure> {
    if !(0.0..=1.0).contains(&q) {
        return Err(domain(format!("erasure probability must lie in [0, 1], got {q}")));
    }
    let atoms = [Atom::new(0.0, 1.0 - q), Atom::new(0.5, q)]
        .into_iter()
        .filter(|a| a.weight > 0.0)
        .collect();
    Ok(DeltaMeasure::from_sorted_unchecked(atoms))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        let h = -0.1 * 0.1f64.log2() - 0.9 * 0.9f64.log2();
        assert!(close(binary_entropy(0.1).unwrap(), h, 1e-15));
        assert!(close(binary_entropy(0.1).unwrap(), 0.468996, 1e-6));
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.5).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn capacity_series_matches_closed_form() {
        for &b in &[1e-6, 1e-3, 0.01, 0.049, 0.05, 0.2, 0.7, 0.999] {
            let direct = 1.0 - entropy_unchecked(0.5 * (1.0 - b));
            let rel = ((capacity_from_bias(b) - direct) / direct).abs();
            let tol = if b < 1e-3 { 1e-3 } else { 1e-9 };
            assert!(rel < tol, "b={b}: {} vs {direct}", capacity_from_bias(b));
        }
        assert_eq!(capacity_from_bias(0.0), 0.0);
        assert_eq!(capacity_from_bias(1.0), 1.0);
        // leading term 2x²/ln 2 at Δ = 1/2 − x
        let x = 1e-7;
        assert!(close(capacity_from_bias(2.0 * x) / (2.0 * x * x / LN_2), 1.0, 1e-12));
    }

    #[test]
    fn threshold_values() {
        assert!(close(delta_c(2).unwrap(), 0.14644660940672624, 1e-15));
        assert_eq!(delta_c(4).unwrap(), 0.25);
        assert!(close(delta_c(9).unwrap(), 1.0 / 3.0, 1e-15));
        assert!(delta_c(1).is_err());
        assert!(delta_c(0).is_err());
        for d in 2..=100 {
            let t = 1.0 - 2.0 * delta_c(d).unwrap();
            assert!((d as f64 * t * t - 1.0).abs() < 1e-14, "d={d}");
        }
    }

    #[test]
    fn tree_params() {
        let p = TreeParams::near_critical(2, 1e-3).unwrap();
        assert!(close(p.tau(), 1e-3, 1e-15));
        assert!(p.is_reconstructible());
        assert!(!TreeParams::new(2, 0.2).unwrap().is_reconstructible());
        assert!(TreeParams::new(0, 0.1).is_err());
        assert!(TreeParams::new(2, 0.6).is_err());
        assert!(TreeParams::near_critical(2, 0.0).is_err());
    }

    #[test]
    fn constructors() {
        assert_eq!(bsc(0.1).unwrap().atoms(), &[Atom::new(0.1, 1.0)]);
        assert_eq!(bsc(0.0).unwrap().atoms(), &[Atom::new(0.0, 1.0)]);
        assert_eq!(bsc(0.5).unwrap().atoms(), &[Atom::new(0.5, 1.0)]);
        assert!(bsc(0.51).is_err());
        assert_eq!(bec(0.0).unwrap().atoms(), &[Atom::new(0.0, 1.0)]);
        assert_eq!(bec(1.0).unwrap().atoms(), &[Atom::new(0.5, 1.0)]);
        let b = bec(0.3).unwrap();
        assert_eq!(b.len(), 2);
        assert!(close(b.atoms()[0].weight, 0.7, 1e-15));
        assert_eq!(b.atoms()[1], Atom::new(0.5, 0.3));
        assert!(bec(1.2).is_err());
    }

    #[test]
    fn functionals_examples() {
        let f = bsc(0.5).unwrap().functionals();
        assert_eq!((f.p_e, f.capacity, f.chi2), (0.5, 0.0, 0.0));
        let f = bec(0.3).unwrap().functionals();
        assert!(close(f.p_e, 0.15, 1e-15));
        assert!(close(f.capacity, 0.7, 1e-15));
        assert!(close(f.chi2, 0.7, 1e-15));
        let f = bsc(0.25).unwrap().functionals();
        assert_eq!(f.p_e, 0.25);
        assert!(close(f.capacity, 0.188722, 1e-6));
        assert!(close(f.capacity, 1.0 - binary_entropy(0.25).unwrap(), 1e-15));
        assert_eq!(f.chi2, 0.25);
    }

    #[test]
    fn construction_validates_and_normalises() {
        assert!(DeltaMeasure::new([(0.6, 1.0)]).is_err());
        assert!(DeltaMeasure::new([(0.1, -0.5), (0.2, 1.5)]).is_err());
        assert!(DeltaMeasure::new([(0.1, 0.5)]).is_err());
        let m = DeltaMeasure::new([(0.3, 0.5), (0.1, 0.5 + 1e-11), (0.2, 0.0)]).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.atoms()[0].delta < m.atoms()[1].delta);
        assert!(close(m.total_weight(), 1.0, 1e-15));
    }

    #[test]
    fn merge_examples() {
        let m = DeltaMeasure::new([(0.1, 0.5), (0.1, 0.5)]).unwrap().merge_atoms(0.0);
        assert_eq!(m.atoms(), &[Atom::new(0.1, 1.0)]);
        let m = DeltaMeasure::new([(0.1, 0.5), (0.2, 0.5)]).unwrap();
        assert_eq!(m.merge_atoms(0.0), m);
        let m = DeltaMeasure::new([(0.1, 0.5), (0.1 + 1e-15, 0.5)])
            .unwrap()
            .merge_atoms(1e-12);
        assert_eq!(m.len(), 1);
        assert!(close(m.atoms()[0].delta, 0.1, 1e-15));
        assert!(close(m.atoms()[0].weight, 1.0, 1e-15));
        // a coarse merge keeps the mean
        let m = DeltaMeasure::new([(0.1, 0.25), (0.15, 0.25), (0.4, 0.5)]).unwrap();
        let coarse = m.merge_atoms(0.1);
        assert_eq!(coarse.len(), 2);
        assert!(close(coarse.p_e(), m.p_e(), 1e-15));
    }
}
