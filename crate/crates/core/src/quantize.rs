//! Interval quantizers on Δ-measures.
//!
//! A [`QuantGrid`] partitions [0, 1/2] into cells. Each operator rewrites the
//! mass inside every cell while matching one functional of that cell exactly:
//!
//! * [`q_bsc`] collapses the cell to one atom at its mean Δ (a degradation,
//!   error probability preserved);
//! * [`q_bec`] spreads the cell onto its two endpoints with the same mean Δ
//!   (an upgrade, error probability preserved);
//! * [`q_bsc_chi2`] collapses to the atom with the same mean `(1−2Δ)²`
//!   (less-noisy dominated, χ²-capacity preserved);
//! * [`q_bec_chi2`] spreads onto the endpoints with the same mean `(1−2Δ)²`
//!   (less-noisy dominating, χ²-capacity preserved).
//!
//! Cells are left-closed and right-open, except the last one which also
//! contains 1/2.
//!
//! [`bp_quantize`] applies one BP layer and a quantizer in a single pass
//! without materialising the unquantized layer output.

use crate::bms::{Atom, DeltaMeasure, TreeParams};
use crate::bp::{compose_unchecked, star_combine, star_pair};
use crate::error::{domain, Error, Result};

/// Partition of [0, 1/2] into quantization cells.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrid {
    boundaries: Vec<f64>,
    uniform: bool,
}

impl QuantGrid {
    /// Grid from explicit boundaries; the first must be 0 and the last 1/2.
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(domain("a grid needs at least two boundaries"));
        }
        if boundaries[0] != 0.0 || *boundaries.last().expect("nonempty") != 0.5 {
            return Err(domain("grid boundaries must start at 0 and end at 1/2"));
        }
        if !boundaries.windows(2).all(|w| w[0] < w[1]) {
            return Err(domain("grid boundaries must be strictly increasing"));
        }
        Ok(Self {
            boundaries,
            uniform: false,
        })
    }

    /// `n_cells` equal cells with boundaries `i / (2 n_cells)`.
    pub fn uniform(n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(domain("a grid needs at least one cell"));
        }
        let denom = 2.0 * n_cells as f64;
        let boundaries = (0..=n_cells).map(|i| i as f64 / denom).collect();
        Ok(Self {
            boundaries,
            uniform: true,
        })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn n_cells(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Endpoints `(a, b)` of cell `k`.
    pub fn cell(&self, k: usize) -> (f64, f64) {
        (self.boundaries[k], self.boundaries[k + 1])
    }

    /// Index of the cell containing `delta`.
    #[inline]
    pub fn cell_of(&self, delta: f64) -> usize {
        let n = self.n_cells();
        let b = &self.boundaries;
        if self.uniform {
            let mut k = ((delta * 2.0 * n as f64) as usize).min(n - 1);
            while k > 0 && delta < b[k] {
                k -= 1;
            }
            while k + 1 < n && delta >= b[k + 1] {
                k += 1;
            }
            k
        } else {
            b.partition_point(|&x| x <= delta).saturating_sub(1).min(n - 1)
        }
    }
}

/// `n_cells` equal cells on [0, 1/2].
pub fn uniform_grid(n_cells: usize) -> Result<QuantGrid> {
    QuantGrid::uniform(n_cells)
}

/// Which quantizer to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QOp {
    /// Collapse, matching error probability.
    Bsc,
    /// Spread, matching error probability.
    Bec,
    /// Collapse, matching χ²-capacity.
    BscChi2,
    /// Spread, matching χ²-capacity.
    BecChi2,
}

impl QOp {
    fn matches_chi2(self) -> bool {
        matches!(self, QOp::BscChi2 | QOp::BecChi2)
    }

    fn is_upgrade(self) -> bool {
        matches!(self, QOp::Bec | QOp::BecChi2)
    }
}

/// Per-cell mass and matched moment (`Σ w b` or `Σ w b²` with `b = 1 − 2Δ`).
///
/// `lone` is filled only when gathering an existing measure: it holds the
/// location of a cell's atom while the cell has exactly one.
struct CellStats {
    mass: Vec<f64>,
    moment: Vec<f64>,
    lone: Vec<Option<f64>>,
}

impl CellStats {
    fn new(n: usize) -> Self {
        Self {
            mass: vec![0.0; n],
            moment: vec![0.0; n],
            lone: Vec::new(),
        }
    }

    /// Location of the only atom in cell `k`, if known.
    fn lone_atom(&self, k: usize) -> Option<f64> {
        self.lone.get(k).copied().flatten()
    }

    #[inline]
    fn add(&mut self, k: usize, w: f64, m: f64) {
        self.mass[k] += w;
        self.moment[k] += m;
    }
}

fn gather(w: &DeltaMeasure, grid: &QuantGrid, chi2: bool) -> CellStats {
    let mut stats = CellStats::new(grid.n_cells());
    stats.lone = vec![None; grid.n_cells()];
    for a in w.atoms() {
        let b = a.bias();
        let m = if chi2 { a.weight * b * b } else { a.weight * b };
        let k = grid.cell_of(a.delta);
        stats.lone[k] = if stats.mass[k] == 0.0 { Some(a.delta) } else { None };
        stats.add(k, a.weight, m);
    }
    stats
}

/// Keeps a collapsed atom inside its own cell despite rounding.
fn inside_cell(x: f64, a: f64, b: f64, last: bool) -> f64 {
    let x = x.clamp(a, b);
    if !last && x >= b {
        b.next_down().max(a)
    } else {
        x
    }
}

fn finish(stats: CellStats, grid: &QuantGrid, op: QOp) -> Result<DeltaMeasure> {
    let n = grid.n_cells();
    let total: f64 = stats.mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Internal("quantizer received no mass".into()));
    }
    let atoms = match op {
        QOp::Bsc | QOp::BscChi2 => {
            let mut atoms = Vec::with_capacity(n);
            for k in 0..n {
                let mass = stats.mass[k];
                if mass <= 0.0 {
                    continue;
                }
                let (a, b) = grid.cell(k);
                let delta = match stats.lone_atom(k) {
                    Some(x) => x,
                    None => {
                        let mean = stats.moment[k] / mass;
                        let bias = if op == QOp::Bsc {
                            mean
                        } else {
                            mean.max(0.0).sqrt()
                        };
                        inside_cell(0.5 * (1.0 - bias), a, b, k + 1 == n)
                    }
                };
                atoms.push(Atom::new(delta, mass / total));
            }
            atoms
        }
        QOp::Bec | QOp::BecChi2 => {
            let mut at_boundary = vec![0.0; n + 1];
            for k in 0..n {
                let mass = stats.mass[k];
                if mass <= 0.0 {
                    continue;
                }
                let (a, b) = grid.cell(k);
                let mean = stats.moment[k] / mass;
                let left_share = if stats.lone_atom(k) == Some(a) {
                    1.0
                } else if stats.lone_atom(k) == Some(b) {
                    0.0
                } else if op == QOp::Bec {
                    // mean bias = α b_a + (1 − α) b_b with b_x = 1 − 2x
                    let mean_delta = 0.5 * (1.0 - mean);
                    (b - mean_delta) / (b - a)
                } else {
                    let ba = 1.0 - 2.0 * a;
                    let bb = 1.0 - 2.0 * b;
                    let (sa, sb) = (ba * ba, bb * bb);
                    if sa <= sb {
                        return Err(Error::Internal(format!(
                            "degenerate χ² cell [{a}, {b}]"
                        )));
                    }
                    (mean - sb) / (sa - sb)
                };
                let left_share = left_share.clamp(0.0, 1.0);
                at_boundary[k] += left_share * mass;
                at_boundary[k + 1] += (1.0 - left_share) * mass;
            }
            at_boundary
                .into_iter()
                .enumerate()
                .filter(|&(_, w)| w > 0.0)
                .map(|(i, w)| Atom::new(grid.boundaries()[i], w / total))
                .collect()
        }
    };
    Ok(DeltaMeasure::from_sorted_unchecked(atoms))
}

/// Applies `op` to `w` on `grid`.
pub fn quantize(w: &DeltaMeasure, grid: &QuantGrid, op: QOp) -> Result<DeltaMeasure> {
    finish(gather(w, grid, op.matches_chi2()), grid, op)
}

/// Collapse each cell to its mean Δ; preserves error probability and
/// degrades the channel.
pub fn q_bsc(w: &DeltaMeasure, grid: &QuantGrid) -> Result<DeltaMeasure> {
    quantize(w, grid, QOp::Bsc)
}

/// Spread each cell onto its endpoints with weights `α = (b − m)/(b − a)`
/// and `1 − α` for cell mean `m`; preserves error probability and upgrades
/// the channel.
pub fn q_bec(w: &DeltaMeasure, grid: &QuantGrid) -> Result<DeltaMeasure> {
    quantize(w, grid, QOp::Bec)
}

/// Collapse each cell to the Δ with `(1−2Δ)²` equal to the cell mean;
/// preserves χ²-capacity.
pub fn q_bsc_chi2(w: &DeltaMeasure, grid: &QuantGrid) -> Result<DeltaMeasure> {
    quantize(w, grid, QOp::BscChi2)
}

/// Spread each cell onto its endpoints preserving mass and mean `(1−2Δ)²`.
pub fn q_bec_chi2(w: &DeltaMeasure, grid: &QuantGrid) -> Result<DeltaMeasure> {
    quantize(w, grid, QOp::BecChi2)
}

/// `op(layer_bp(params, leaf))`, computed without building the layer output.
///
/// The last pairwise combination of the layer is streamed straight into the
/// cell statistics. For `d = 2` both factors are the same composed measure and
/// only unordered pairs are visited.
pub fn bp_quantize(
    params: &TreeParams,
    leaf: &DeltaMeasure,
    grid: &QuantGrid,
    op: QOp,
) -> Result<DeltaMeasure> {
    bp_quantize_pruned(params, leaf, grid, op, 0.0)
}

/// [`bp_quantize`] that skips child pairs whose joint weight is below
/// `floor`. Skipped mass is moved to Δ = 1/2 for degrading operators and to
/// Δ = 0 for upgrading ones, so the output stays a valid bound.
pub fn bp_quantize_pruned(
    params: &TreeParams,
    leaf: &DeltaMeasure,
    grid: &QuantGrid,
    op: QOp,
    floor: f64,
) -> Result<DeltaMeasure> {
    if !(floor >= 0.0 && floor < 1.0) {
        return Err(domain(format!("pair floor {floor} outside [0, 1)")));
    }
    let child = compose_unchecked(params.delta(), leaf);
    if params.d() == 1 {
        return finish(gather(&child, grid, op.matches_chi2()), grid, op);
    }
    let stats = if params.d() == 2 {
        stream_self_pairs(&child, grid, op, floor)
    } else {
        let mut partial = child.clone();
        for _ in 2..params.d() {
            partial = star_combine(&partial, &child);
        }
        stream_pairs(&partial, &child, grid, op, floor)
    };
    finish(stats, grid, op)
}

/// Cell lookup specialised for the hot loop.
#[derive(Clone, Copy)]
enum Locator<'a> {
    /// Uniform grid with a power-of-two cell count: the boundaries `i / 2n`
    /// are exact, so `⌊Δ · 2n⌋` is the exact cell.
    Dyadic { scale: f64, last: usize },
    General(&'a QuantGrid),
}

impl<'a> Locator<'a> {
    fn new(grid: &'a QuantGrid) -> Self {
        let n = grid.n_cells();
        if grid.is_uniform() && n.is_power_of_two() {
            Locator::Dyadic {
                scale: 2.0 * n as f64,
                last: n - 1,
            }
        } else {
            Locator::General(grid)
        }
    }

    #[inline(always)]
    fn cell(self, delta: f64) -> usize {
        match self {
            Locator::Dyadic { scale, last } => ((delta * scale) as usize).min(last),
            Locator::General(g) => g.cell_of(delta),
        }
    }
}

#[inline(always)]
fn push_events<const CHI2: bool>(
    stats: &mut CellStats,
    loc: Locator<'_>,
    w: f64,
    da: f64,
    db: f64,
) {
    for (p, err) in star_pair(da, db) {
        let mass = w * p;
        if mass > 0.0 {
            let b = 1.0 - 2.0 * err;
            let m = if CHI2 { b * b } else { b };
            let k = loc.cell(err);
            stats.mass[k] += mass;
            stats.moment[k] += mass * m;
        }
    }
}

/// Where pruned pair mass goes: the useless channel when degrading, the
/// perfect channel when upgrading. Either choice keeps the result on the
/// correct side of the exact layer output.
fn lump(stats: &mut CellStats, op: QOp, mass: f64) {
    if mass <= 0.0 {
        return;
    }
    if op.is_upgrade() {
        stats.mass[0] += mass;
        stats.moment[0] += mass;
    } else {
        let last = stats.mass.len() - 1;
        stats.mass[last] += mass;
    }
}

/// Atoms sorted by decreasing weight, split into parallel arrays.
fn by_weight(x: &DeltaMeasure) -> (Vec<f64>, Vec<f64>) {
    let mut atoms: Vec<(f64, f64)> = x.atoms().iter().map(|a| (a.weight, a.delta)).collect();
    atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
    atoms.into_iter().map(|(w, d)| (d, w)).unzip()
}

fn suffix_sums(w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.len() + 1];
    for i in (0..w.len()).rev() {
        out[i] = out[i + 1] + w[i];
    }
    out
}

fn stream_pairs(
    x: &DeltaMeasure,
    y: &DeltaMeasure,
    grid: &QuantGrid,
    op: QOp,
    floor: f64,
) -> CellStats {
    if op.matches_chi2() {
        stream_pairs_impl::<true>(x, y, grid, op, floor)
    } else {
        stream_pairs_impl::<false>(x, y, grid, op, floor)
    }
}

fn stream_pairs_impl<const CHI2: bool>(
    x: &DeltaMeasure,
    y: &DeltaMeasure,
    grid: &QuantGrid,
    op: QOp,
    floor: f64,
) -> CellStats {
    let mut stats = CellStats::new(grid.n_cells());
    let loc = Locator::new(grid);
    let (xd, xw) = by_weight(x);
    let (yd, yw) = by_weight(y);
    let tail = suffix_sums(&yw);
    let mut dropped = 0.0;
    for (&di, &wi) in xd.iter().zip(&xw) {
        let cut = yw.partition_point(|&wj| wi * wj >= floor);
        for (&dj, &wj) in yd[..cut].iter().zip(&yw[..cut]) {
            push_events::<CHI2>(&mut stats, loc, wi * wj, di, dj);
        }
        dropped += wi * tail[cut];
    }
    lump(&mut stats, op, dropped);
    stats
}

fn stream_self_pairs(x: &DeltaMeasure, grid: &QuantGrid, op: QOp, floor: f64) -> CellStats {
    if op.matches_chi2() {
        stream_self_pairs_impl::<true>(x, grid, op, floor)
    } else {
        stream_self_pairs_impl::<false>(x, grid, op, floor)
    }
}

fn stream_self_pairs_impl<const CHI2: bool>(
    x: &DeltaMeasure,
    grid: &QuantGrid,
    op: QOp,
    floor: f64,
) -> CellStats {
    let mut stats = CellStats::new(grid.n_cells());
    let loc = Locator::new(grid);
    let (deltas, weights) = by_weight(x);
    let tail = suffix_sums(&weights);
    let mut dropped = 0.0;
    for i in 0..deltas.len() {
        let (di, wi) = (deltas[i], weights[i]);
        if wi * wi < floor {
            dropped += tail[i] * tail[i];
            break;
        }
        push_events::<CHI2>(&mut stats, loc, wi * wi, di, di);
        let rest = &weights[i + 1..];
        let cut = rest.partition_point(|&wj| wi * wj >= floor);
        let twice = 2.0 * wi;
        for (&dj, &wj) in deltas[i + 1..i + 1 + cut].iter().zip(&rest[..cut]) {
            push_events::<CHI2>(&mut stats, loc, twice * wj, di, dj);
        }
        dropped += twice * tail[i + 1 + cut];
    }
    lump(&mut stats, op, dropped);
    stats
}
