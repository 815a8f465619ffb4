//! Dynamical systems whose iterates bound the broadcast channel at each depth.
//!
//! Every run starts from the perfect channel at depth 0 and applies one layer
//! per level. BEC-side runs upgrade after each layer and BSC-side runs
//! degrade, so at every depth `t` the two tracked channels sandwich the true
//! depth-`t` channel `T_t`:
//!
//! * scalar error: `q^BEC_t / 2 ≤ P_e(T_t) ≤ q^BSC_t`;
//! * scalar information: `1 − h(q^BSC_t) ≤ I(T_t) ≤ 1 − q^BEC_t`;
//! * measure-valued runs: the same, with the quantizers of [`crate::quantize`]
//!   in place of the BSC/BEC replacements.
//!
//! Iterates are monotone in `t`, so the limits bound the infinite tree.

use crate::bms::{
    capacity_from_bias, entropy_unchecked, ChannelFunctionals, DeltaMeasure, TreeParams,
};
use crate::bp::{chi2_bec, chi2_bsc, error_bec, error_bsc};
use crate::error::{domain, Error, Result};
use crate::quantize::{bp_quantize_pruned, QOp, QuantGrid};

/// Number of consecutive small changes that count as convergence.
pub const STABLE_LEVELS: usize = 3;

/// Longest limit cycle the convergence check looks for.
pub const MAX_PERIOD: usize = 8;

/// Window of the drift rule: a run whose tracked value moved less than
/// `tol` per level on average over this many levels has settled.
pub const DRIFT_WINDOW: usize = 256;

/// Child pairs lighter than this are lumped to the safe extreme channel by
/// the measure-valued runs.
pub const PAIR_FLOOR: f64 = 1e-24;

/// Stopping rule for iterations run to convergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    tol: f64,
    max_iters: usize,
    damping: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 100_000,
            damping: 0.0,
        }
    }
}

impl FixedPointConfig {
    pub fn new(tol: f64, max_iters: usize, damping: f64) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(domain(format!("tolerance must be positive, got {tol}")));
        }
        if max_iters == 0 {
            return Err(domain("max_iters must be positive"));
        }
        if !(0.0..1.0).contains(&damping) {
            return Err(domain(format!("damping must lie in [0, 1), got {damping}")));
        }
        Ok(Self {
            tol,
            max_iters,
            damping,
        })
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn with_max_iters(self, max_iters: usize) -> Result<Self> {
        Self::new(self.tol, max_iters, self.damping)
    }
}

/// Damped iteration `x ← (1−λ) map(x) + λ x` until `|Δx| < tol`.
///
/// Returns the last iterate and whether the tolerance was met.
pub fn fixed_point<F: FnMut(f64) -> f64>(
    mut map: F,
    init: f64,
    cfg: &FixedPointConfig,
) -> (f64, bool) {
    let mut x = init;
    for _ in 0..cfg.max_iters {
        let next = (1.0 - cfg.damping) * map(x) + cfg.damping * x;
        let step = (next - x).abs();
        x = next;
        if step < cfg.tol {
            return (x, true);
        }
    }
    (x, false)
}

/// How many levels to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Depth {
    /// Exactly this many levels.
    Levels(usize),
    /// Until the tracked functional moves less than `tol` for
    /// [`STABLE_LEVELS`] consecutive levels, or `max_iters` levels.
    Converge(FixedPointConfig),
}

impl Depth {
    pub fn auto() -> Self {
        Depth::Converge(FixedPointConfig::default())
    }

    fn limit(&self) -> usize {
        match self {
            Depth::Levels(n) => *n,
            Depth::Converge(cfg) => cfg.max_iters,
        }
    }

    fn tol(&self) -> f64 {
        match self {
            Depth::Levels(_) => FixedPointConfig::default().tol,
            Depth::Converge(cfg) => cfg.tol,
        }
    }

    fn stops_early(&self) -> bool {
        matches!(self, Depth::Converge(_))
    }
}

/// Which way the per-level replacement goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Upgrade: lower bounds on the error, upper bounds on the information.
    Bec,
    /// Degrade: upper bounds on the error, lower bounds on the information.
    Bsc,
}

/// Which functional a run preserves and tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Error,
    Info,
}

impl Target {
    pub fn tracked(self, f: &ChannelFunctionals) -> f64 {
        match self {
            Target::Error => f.p_e,
            Target::Info => f.capacity,
        }
    }
}

/// Quantizer applied after each layer for a side and target.
pub fn quantizer(side: Side, target: Target) -> QOp {
    match (side, target) {
        (Side::Bsc, Target::Error) => QOp::Bsc,
        (Side::Bec, Target::Error) => QOp::Bec,
        (Side::Bsc, Target::Info) => QOp::BscChi2,
        (Side::Bec, Target::Info) => QOp::BecChi2,
    }
}

/// Per-level record of a run.
///
/// Scalar and two-atom runs keep every state; measure-valued runs keep only
/// the final measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTrace<S> {
    pub states: Vec<S>,
    /// Functionals of the tracked channel at levels `1..=iterations`.
    pub functional_track: Vec<ChannelFunctionals>,
    pub converged: bool,
    /// When the run stopped without reaching a fixed point: length of the
    /// final window in which the tracked value stopped drifting (a cycle
    /// period, or [`DRIFT_WINDOW`]). Collapsing quantizers move atoms between
    /// cells and can cycle or jitter at the rounding level of the grid.
    pub plateau: Option<usize>,
    pub iterations: usize,
}

impl<S> DynamicsTrace<S> {
    /// Reached a fixed point or a plateau.
    pub fn settled(&self) -> bool {
        self.converged || self.plateau.is_some()
    }

    /// Tightest bound over the final plateau (the last level for a fixed
    /// point).
    ///
    /// Upgraded iterates bound the infinite tree at every level, and
    /// degraded ones bound it along the tail, so the best value over the
    /// plateau is as valid as any single level.
    pub fn settled_bound(&self, side: Side, target: Target) -> f64 {
        let span = self.plateau.unwrap_or(1).min(self.functional_track.len());
        if span == 0 {
            return self.final_bound(target);
        }
        let tail = self.functional_track[self.functional_track.len() - span..]
            .iter()
            .map(|f| target.tracked(f));
        let larger_is_tighter = matches!(
            (side, target),
            (Side::Bec, Target::Error) | (Side::Bsc, Target::Info)
        );
        if larger_is_tighter {
            tail.fold(f64::NEG_INFINITY, f64::max)
        } else {
            tail.fold(f64::INFINITY, f64::min)
        }
    }

    pub fn final_state(&self) -> Option<&S> {
        self.states.last()
    }

    pub fn final_functionals(&self) -> Option<&ChannelFunctionals> {
        self.functional_track.last()
    }

    /// Tracked bound at every level.
    pub fn bounds(&self, target: Target) -> Vec<f64> {
        self.functional_track
            .iter()
            .map(|f| target.tracked(f))
            .collect()
    }

    /// Tracked bound at the last level, or at depth 0 (the perfect channel)
    /// for an empty run.
    pub fn final_bound(&self, target: Target) -> f64 {
        match self.functional_track.last() {
            Some(f) => target.tracked(f),
            None => target.tracked(&ChannelFunctionals::of_bsc(0.0)),
        }
    }
}

struct Run<S> {
    states: Vec<S>,
    track: Vec<ChannelFunctionals>,
    converged: bool,
    plateau: Option<usize>,
}

/// Drives `step` level by level. `keep_all` keeps every state; otherwise
/// only the last one.
fn drive<S, F>(init: S, depth: Depth, target: Target, keep_all: bool, mut step: F) -> Result<Run<S>>
where
    S: Clone,
    F: FnMut(&S) -> Result<(S, ChannelFunctionals)>,
{
    let tol = depth.tol();
    let mut prev = target.tracked(&ChannelFunctionals::of_bsc(0.0));
    let mut state = init;
    let mut states = Vec::new();
    let mut track = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    // quiet[p]: consecutive levels with |v_t − v_{t−p}| < tol.
    let mut quiet = [0usize; MAX_PERIOD + 1];
    let mut plateau = None;
    for _ in 0..depth.limit() {
        let (next, f) = step(&state)?;
        let value = target.tracked(&f);
        if !value.is_finite() {
            return Err(Error::Internal(format!("tracked functional became {value}")));
        }
        quiet[1] = if (value - prev).abs() < tol { quiet[1] + 1 } else { 0 };
        for p in 2..=MAX_PERIOD {
            let back = values.len().checked_sub(p).map(|i| values[i]);
            quiet[p] = match back {
                Some(old) if (value - old).abs() < tol => quiet[p] + 1,
                _ => 0,
            };
        }
        prev = value;
        values.push(value);
        track.push(f);
        if keep_all {
            states.push(next.clone());
        }
        state = next;
        plateau = if quiet[1] >= STABLE_LEVELS {
            None
        } else {
            let n = values.len();
            (2..=MAX_PERIOD)
                .find(|&p| quiet[p] >= STABLE_LEVELS * p)
                .or_else(|| {
                    let drift = n
                        .checked_sub(DRIFT_WINDOW + 1)
                        .map(|i| (value - values[i]).abs());
                    drift
                        .filter(|&d| d < tol * DRIFT_WINDOW as f64)
                        .map(|_| DRIFT_WINDOW)
                })
        };
        if (quiet[1] >= STABLE_LEVELS || plateau.is_some()) && depth.stops_early() {
            break;
        }
    }
    if !keep_all {
        states.push(state);
    }
    Ok(Run {
        states,
        track,
        converged: quiet[1] >= STABLE_LEVELS,
        plateau,
    })
}

fn finish_trace<S, T>(run: Run<S>, map: impl Fn(S) -> T) -> DynamicsTrace<T> {
    let iterations = run.track.len();
    DynamicsTrace {
        states: run.states.into_iter().map(map).collect(),
        functional_track: run.track,
        converged: run.converged,
        plateau: run.plateau,
        iterations,
    }
}

fn bec_functionals_from_kept(eps: f64) -> ChannelFunctionals {
    ChannelFunctionals {
        p_e: 0.5 * (1.0 - eps),
        capacity: eps,
        chi2: eps,
    }
}

fn bsc_functionals_from_bias(b: f64) -> ChannelFunctionals {
    ChannelFunctionals {
        p_e: 0.5 * (1.0 - b),
        capacity: capacity_from_bias(b),
        chi2: b * b,
    }
}

/// Error-probability recursions from perfect leaves.
///
/// BEC side: `q ← 2 E^BEC(q)`, tracked channel `BEC_q` with error `q/2`.
/// BSC side: `q ← E^BSC(q)`, tracked channel `BSC_q` with error `q`.
/// States are the `q_t`.
pub fn scalar_pe_dynamics(params: &TreeParams, side: Side, depth: Depth) -> Result<DynamicsTrace<f64>> {
    let p = *params;
    let run = match side {
        Side::Bec => drive(0.0, depth, Target::Error, true, |&q| {
            let next = (2.0 * error_bec(&p, q)).clamp(0.0, 1.0);
            Ok((next, ChannelFunctionals::of_bec(next)))
        })?,
        Side::Bsc => drive(0.0, depth, Target::Error, true, |&q| {
            let next = error_bsc(&p, q).clamp(0.0, 0.5);
            Ok((next, ChannelFunctionals::of_bsc(next)))
        })?,
    };
    Ok(finish_trace(run, |q| q))
}

/// Information recursions from perfect leaves.
///
/// BEC side: `q ← H^BEC(q) = 1 − g(1 − q)`, bound `1 − q`.
/// BSC side: `q ← 1/2 − √(1 − H^BSC(q))/2`, bound `1 − h(q)`.
/// States are the `q_t`; the iteration itself runs on the unerased fraction
/// and on the bias to keep small informations accurate.
pub fn scalar_info_dynamics(
    params: &TreeParams,
    side: Side,
    depth: Depth,
) -> Result<DynamicsTrace<f64>> {
    let p = *params;
    let trace = match side {
        Side::Bec => {
            let run = drive(1.0, depth, Target::Info, true, |&eps| {
                let next = chi2_bec(&p, eps);
                Ok((next, bec_functionals_from_kept(next)))
            })?;
            finish_trace(run, |eps| 1.0 - eps)
        }
        Side::Bsc => {
            let run = drive(1.0, depth, Target::Info, true, |&b| {
                let q = 0.5 * (1.0 - b);
                let next = chi2_bsc(&p, q).sqrt();
                Ok((next, bsc_functionals_from_bias(next)))
            })?;
            finish_trace(run, |b| 0.5 * (1.0 - b))
        }
    };
    Ok(trace)
}

/// Quantized density evolution `μ_t = Q(BP(μ_{t−1}))`.
///
/// `init` must be a single BSC. From `BSC_0` (the depth-0 channel) every
/// level bounds the depth-`t` tree; the BEC side requires that start. A
/// BSC-side start `BSC_δ₀` with `δ₀ > 0` bounds the infinite tree only when
/// `δ₀` is at least the limiting error probability.
pub fn local_comparison(
    params: &TreeParams,
    side: Side,
    target: Target,
    grid: &QuantGrid,
    init: &DeltaMeasure,
    depth: Depth,
) -> Result<DynamicsTrace<DeltaMeasure>> {
    match (side, init.as_bsc()) {
        (Side::Bec, Some(d)) if d == 0.0 => {}
        (Side::Bec, _) => {
            return Err(Error::Precondition(
                "the upgrading side must start from the perfect channel BSC_0".into(),
            ))
        }
        (Side::Bsc, Some(_)) => {}
        (Side::Bsc, None) => {
            return Err(Error::Precondition(
                "the degrading side must start from a single BSC".into(),
            ))
        }
    }
    local_comparison_from(params, side, target, grid, init.clone(), depth)
}

/// [`local_comparison`] without the start check. Used for warm starts from
/// the fixed point at a nearby noise level.
pub(crate) fn local_comparison_from(
    params: &TreeParams,
    side: Side,
    target: Target,
    grid: &QuantGrid,
    init: DeltaMeasure,
    depth: Depth,
) -> Result<DynamicsTrace<DeltaMeasure>> {
    let op = quantizer(side, target);
    let run = drive(init, depth, target, false, |mu| {
        let next = bp_quantize_pruned(params, mu, grid, op, PAIR_FLOOR)?;
        let f = next.functionals();
        Ok((next, f))
    })?;
    Ok(finish_trace(run, |m| m))
}

/// Fixed point of the two-atom upper-bound family on the binary tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoAtomResult {
    /// The informative atom sits at `1/2 − alpha`.
    pub alpha: f64,
    /// Weight of the useless atom at 1/2.
    pub eps_weight: f64,
    /// `(1 − ε)(1 − h(1/2 − α))` bits.
    pub info_bound: f64,
    /// States `(α_t, ε_t)`.
    pub trace: DynamicsTrace<(f64, f64)>,
}

/// `α* = √(1 − 4δ) / (2 (1 − 2δ))`, the stationary point of the α update.
pub fn two_atom_alpha_star(delta: f64) -> Result<f64> {
    if !(0.0..0.25).contains(&delta) {
        return Err(domain(format!("α* needs δ in [0, 1/4), got {delta}")));
    }
    Ok((1.0 - 4.0 * delta).sqrt() / (2.0 * (1.0 - 2.0 * delta)))
}

/// Runs the family `{1/2 − α: 1 − ε, 1/2: ε}` from the perfect channel.
///
/// Each level composes with the edge, combines two children, and replaces
/// the single-child outcome `BSC_δ̄` by the χ²-preserving mixture of `BSC_β`
/// and `BSC_{1/2}`, where `β = δ̄² / (δ̄² + (1−δ̄)²)` is the agreement
/// posterior. This upgrades every level, so the information is an upper
/// bound throughout.
pub fn two_atom_upper(params: &TreeParams, depth: Depth) -> Result<TwoAtomResult> {
    if params.d() != 2 {
        return Err(Error::Unsupported(format!(
            "the two-atom family is defined for d = 2, got d = {}",
            params.d()
        )));
    }
    if params.delta() >= 0.25 {
        return Err(Error::Precondition(format!(
            "the two-atom family needs δ < 1/4, got {}",
            params.delta()
        )));
    }
    let theta = params.theta();
    // Iterates (α, 1 − ε) to keep small unerased weights accurate.
    let run = drive((0.5, 1.0), depth, Target::Info, true, |&(alpha, kept)| {
        let a = alpha * theta;
        let dbar = 0.5 - a;
        let s = dbar * dbar + (1.0 - dbar) * (1.0 - dbar);
        let beta = dbar * dbar / s;
        let next_alpha = 0.5 - beta;
        let ratio = if next_alpha > 0.0 {
            (a / next_alpha).powi(2)
        } else {
            0.0
        };
        let next_kept = (kept * kept * s + 2.0 * kept * (1.0 - kept) * ratio).clamp(0.0, 1.0);
        let f = two_atom_functionals(next_alpha, next_kept);
        Ok(((next_alpha, next_kept), f))
    })?;
    let trace = finish_trace(run, |(alpha, kept)| (alpha, 1.0 - kept));
    let (alpha, eps) = trace.final_state().copied().unwrap_or((0.5, 0.0));
    let info_bound = trace.final_bound(Target::Info);
    Ok(TwoAtomResult {
        alpha,
        eps_weight: eps,
        info_bound,
        trace,
    })
}

fn two_atom_functionals(alpha: f64, kept: f64) -> ChannelFunctionals {
    let b = 2.0 * alpha;
    ChannelFunctionals {
        p_e: kept * (0.5 - alpha) + 0.5 * (1.0 - kept),
        capacity: kept * capacity_from_bias(b),
        chi2: kept * b * b,
    }
}

/// Information bound `(1 − ε)(1 − h(1/2 − α))` of a two-atom state.
pub fn two_atom_info(alpha: f64, eps: f64) -> f64 {
    (1.0 - eps) * (1.0 - entropy_unchecked(0.5 - alpha))
}
