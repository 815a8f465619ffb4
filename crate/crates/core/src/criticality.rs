//! Experiments near the reconstruction threshold `δ_c = (1 − 1/√d)/2`.
//!
//! At `δ = δ_c − τ` the limiting information is linear in `τ` and
//! `1 − 2 P_e` scales like `√τ`. [`tau_sweep`] collects matched bounds over
//! a range of `τ`, [`fit_slope`] fits lines to them, and
//! [`conjecture_report`] packages both for the binary tree.

use rayon::prelude::*;

use crate::bms::{bsc, delta_c, TreeParams};
use crate::bp::chi2_bsc;
use crate::dynamics::{
    local_comparison, scalar_info_dynamics, scalar_pe_dynamics, two_atom_upper, Depth,
    DynamicsTrace, FixedPointConfig, Side, Target,
};
use crate::error::{domain, Error, Result};
use crate::quantize::QuantGrid;

/// Starting bias of the threshold predicate: `q = 1/2 − 10⁻⁴`.
const PROBE_BIAS: f64 = 2e-4;
const PROBE_ITERS: usize = 10_000;
const PROBE_FLOOR: f64 = 1e-8;

/// Slack allowed when checking `lower ≤ upper`.
pub const SANDWICH_SLACK: f64 = 1e-12;

/// True when the BSC-side χ² dynamics started from a tiny bias expand.
///
/// The tracked χ²-information `b²` either grows past its starting value
/// (the tree keeps information) or falls below 10⁻⁸ (it loses it). Runs that
/// do neither within the budget count as not expanding.
pub fn expands_from_small_bias(params: &TreeParams) -> bool {
    let start = PROBE_BIAS * PROBE_BIAS;
    let mut b = PROBE_BIAS;
    for _ in 0..PROBE_ITERS {
        let chi2 = chi2_bsc(params, 0.5 * (1.0 - b));
        if chi2 > start {
            return true;
        }
        if chi2 < PROBE_FLOOR {
            return false;
        }
        b = chi2.sqrt();
    }
    false
}

/// Reconstruction threshold found by bisection on [`expands_from_small_bias`].
pub fn find_threshold(d: usize, tol: f64) -> Result<f64> {
    if d < 2 {
        return Err(domain(format!("threshold needs d ≥ 2, got {d}")));
    }
    if !(tol > 0.0) {
        return Err(domain(format!("tolerance must be positive, got {tol}")));
    }
    let (mut lo, mut hi) = (0.0, 0.5);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if expands_from_small_bias(&TreeParams::new(d, mid)?) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bound pipelines a sweep runs at each `τ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// The four scalar BSC/BEC recursions.
    Scalar,
    /// The four quantized density evolutions on a grid, from `BSC_0`.
    Local(QuantGrid),
    /// Two-atom family for the upper information bound, scalar recursions
    /// for the other three.
    TwoAtom,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Scalar => "scalar",
            Method::Local(_) => "local",
            Method::TwoAtom => "two_atom",
        }
    }

    pub fn grid_cells(&self) -> Option<usize> {
        match self {
            Method::Local(g) => Some(g.n_cells()),
            _ => None,
        }
    }
}

/// Level budget at `τ`: `max(10⁴, 50/τ)`.
pub fn default_depth_cap(tau: f64) -> usize {
    (50.0 / tau).ceil().max(1e4).min(1e9) as usize
}

/// Matched bounds at one `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub tau: f64,
    pub delta: f64,
    pub lower_i: f64,
    pub upper_i: f64,
    pub lower_pe: f64,
    pub upper_pe: f64,
    /// All four pipelines reached a fixed point or a plateau.
    pub converged: bool,
    pub depth_cap: usize,
    /// Levels run by the slowest pipeline.
    pub levels: usize,
}

impl SweepPoint {
    pub fn gap_i(&self) -> f64 {
        self.upper_i - self.lower_i
    }

    pub fn gap_pe(&self) -> f64 {
        self.upper_pe - self.lower_pe
    }
}

/// Bounds over a list of `τ`, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub d: usize,
    pub method: &'static str,
    pub grid_cells: Option<usize>,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn taus(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tau).collect()
    }

    pub fn lower_i(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lower_i).collect()
    }

    pub fn upper_i(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.upper_i).collect()
    }

    pub fn lower_pe(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lower_pe).collect()
    }

    pub fn upper_pe(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.upper_pe).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.converged)
    }

    /// Errors on the first point where a lower bound exceeds its upper bound.
    pub fn check_sandwich(&self) -> Result<()> {
        for p in &self.points {
            if p.lower_i > p.upper_i + SANDWICH_SLACK || p.lower_pe > p.upper_pe + SANDWICH_SLACK
            {
                return Err(Error::Internal(format!(
                    "sandwich violated at τ = {}: I in [{}, {}], P_e in [{}, {}]",
                    p.tau, p.lower_i, p.upper_i, p.lower_pe, p.upper_pe
                )));
            }
        }
        Ok(())
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || n == 0 {
        return Err(domain(format!("bad log range [{lo}, {hi}] with {n} points")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut out: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    out[0] = lo;
    out[n - 1] = hi;
    Ok(out)
}

fn depth_for(cap: usize, tol: f64) -> Result<Depth> {
    Ok(Depth::Converge(FixedPointConfig::new(tol, cap, 0.0)?))
}

fn summarize<S>(trace: &DynamicsTrace<S>, side: Side, target: Target) -> (f64, bool, usize) {
    (trace.settled_bound(side, target), trace.settled(), trace.iterations)
}

fn sweep_point(params: &TreeParams, method: &Method, cap: usize, tol: f64) -> Result<SweepPoint> {
    let depth = depth_for(cap, tol)?;
    let scalar_i =
        |side| scalar_info_dynamics(params, side, depth).map(|t| summarize(&t, side, Target::Info));
    let scalar_pe =
        |side| scalar_pe_dynamics(params, side, depth).map(|t| summarize(&t, side, Target::Error));
    let [lo_pe, hi_pe, lo_i, hi_i] = match method {
        Method::Scalar => [
            scalar_pe(Side::Bec)?,
            scalar_pe(Side::Bsc)?,
            scalar_i(Side::Bsc)?,
            scalar_i(Side::Bec)?,
        ],
        Method::TwoAtom => {
            let two = two_atom_upper(params, depth)?;
            [
                scalar_pe(Side::Bec)?,
                scalar_pe(Side::Bsc)?,
                scalar_i(Side::Bsc)?,
                summarize(&two.trace, Side::Bec, Target::Info),
            ]
        }
        Method::Local(grid) => {
            let perfect = bsc(0.0)?;
            let run = |side, target| {
                local_comparison(params, side, target, grid, &perfect, depth)
                    .map(|t| summarize(&t, side, target))
            };
            [
                run(Side::Bec, Target::Error)?,
                run(Side::Bsc, Target::Error)?,
                run(Side::Bsc, Target::Info)?,
                run(Side::Bec, Target::Info)?,
            ]
        }
    };
    let all = [lo_pe, hi_pe, lo_i, hi_i];
    Ok(SweepPoint {
        tau: params.tau(),
        delta: params.delta(),
        lower_i: lo_i.0,
        upper_i: hi_i.0,
        lower_pe: lo_pe.0,
        upper_pe: hi_pe.0,
        converged: all.iter().all(|r| r.1),
        depth_cap: cap,
        levels: all.iter().map(|r| r.2).max().unwrap_or(0),
    })
}

/// Runs `method` at `δ = δ_c − τ` for every `τ`, in parallel over `τ`.
///
/// Each pipeline runs to convergence or to `depth_cap` levels (default
/// [`default_depth_cap`]); capped points are flagged, not dropped.
pub fn tau_sweep(
    d: usize,
    taus: &[f64],
    method: &Method,
    depth_cap: Option<usize>,
) -> Result<SweepResult> {
    tau_sweep_tol(d, taus, method, depth_cap, FixedPointConfig::default().tol())
}

/// [`tau_sweep`] with an explicit per-level convergence tolerance.
pub fn tau_sweep_tol(
    d: usize,
    taus: &[f64],
    method: &Method,
    depth_cap: Option<usize>,
    tol: f64,
) -> Result<SweepResult> {
    let dc = delta_c(d)?;
    for &tau in taus {
        if !(tau > 0.0 && tau <= dc) {
            return Err(domain(format!("τ must lie in (0, {dc}], got {tau}")));
        }
    }
    if depth_cap == Some(0) {
        return Err(domain("depth cap must be positive"));
    }
    let points = taus
        .par_iter()
        .map(|&tau| {
            let params = TreeParams::near_critical(d, tau)?;
            let cap = depth_cap.unwrap_or_else(|| default_depth_cap(tau));
            sweep_point(&params, method, cap, tol)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        d,
        method: method.name(),
        grid_cells: method.grid_cells(),
        points,
    })
}

/// Coordinates a line is fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    Linear,
    LogLog,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Linear => "linear",
            Transform::LogLog => "log-log",
        }
    }
}

/// Least-squares line `y = slope · x + intercept` in the chosen coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub transform: Transform,
}

/// Ordinary least squares on `(x, y)` or `(ln x, ln y)`.
pub fn fit_slope(xs: &[f64], ys: &[f64], transform: Transform) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(domain(format!("{} x values but {} y values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(domain(format!("a fit needs at least 3 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(domain("fit data must be finite"));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = match transform {
        Transform::Linear => (xs.to_vec(), ys.to_vec()),
        Transform::LogLog => {
            if xs.iter().chain(ys).any(|&v| v <= 0.0) {
                return Err(domain("log-log fit needs strictly positive values"));
            }
            (xs.iter().map(|v| v.ln()).collect(), ys.iter().map(|v| v.ln()).collect())
        }
    };
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if sxx <= (1e-12 * scale).powi(2) * n {
        return Err(domain("x values have no spread"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        transform,
    })
}

/// Estimate of `c = lim I/τ` from a fit of `I/τ` against `τ`: the intercept
/// is the limit, the slope the quadratic correction.
pub fn limit_ratio(taus: &[f64], values: &[f64]) -> Result<SlopeFit> {
    if taus.len() != values.len() {
        return Err(domain("taus and values differ in length"));
    }
    let ratios: Vec<f64> = taus.iter().zip(values).map(|(t, v)| v / t).collect();
    fit_slope(taus, &ratios, Transform::Linear)
}

/// Slopes and exponents behind the two near-critical conjectures.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjectureReport {
    pub sweep: SweepResult,
    /// `I/τ` against `τ` for the lower (BSC-side) curve; the intercept is
    /// the headline slope `c`.
    pub i_ratio_lower: SlopeFit,
    pub i_ratio_upper: SlopeFit,
    /// Plain least squares of `I` against `τ`.
    pub i_fit_lower: SlopeFit,
    pub i_fit_upper: SlopeFit,
    /// `ln(1 − 2 P_e^upper)` against `ln τ`.
    pub pe_fit: SlopeFit,
}

impl ConjectureReport {
    pub fn i_slope(&self) -> f64 {
        self.i_ratio_lower.intercept
    }

    pub fn i_slope_upper(&self) -> f64 {
        self.i_ratio_upper.intercept
    }

    pub fn pe_exponent(&self) -> f64 {
        self.pe_fit.slope
    }
}

/// Default `τ` grid: 15 log-spaced points in `[10⁻⁴, 10⁻²]`.
pub fn default_taus() -> Vec<f64> {
    log_spaced(1e-4, 1e-2, 15).expect("static range")
}

/// Local-comparison sweep on a uniform grid plus the fits of both
/// conjectures.
pub fn conjecture_report(
    d: usize,
    grid: &QuantGrid,
    taus: &[f64],
    depth_cap: Option<usize>,
) -> Result<ConjectureReport> {
    let sweep = tau_sweep(d, taus, &Method::Local(grid.clone()), depth_cap)?;
    let t = sweep.taus();
    let (lo, hi) = (sweep.lower_i(), sweep.upper_i());
    let advantage: Vec<f64> = sweep.upper_pe().iter().map(|p| 1.0 - 2.0 * p).collect();
    Ok(ConjectureReport {
        i_ratio_lower: limit_ratio(&t, &lo)?,
        i_ratio_upper: limit_ratio(&t, &hi)?,
        i_fit_lower: fit_slope(&t, &lo, Transform::Linear)?,
        i_fit_upper: fit_slope(&t, &hi, Transform::Linear)?,
        pe_fit: fit_slope(&t, &advantage, Transform::LogLog)?,
        sweep,
    })
}
