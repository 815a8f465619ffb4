//! `treebound`: reproducible near-critical experiments from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 invariant violation, 3 resource
//! limit.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use treebound::criticality::{
    default_taus, find_threshold, fit_slope, limit_ratio, tau_sweep_tol, Method,
    SlopeFit, SweepResult, Transform,
};
use treebound::dynamics::{
    local_comparison, Depth, DynamicsTrace, FixedPointConfig, Side, Target,
};
use treebound::oracle::{exact_de, exact_tree};
use treebound::quantize::uniform_grid;
use treebound::{bsc, delta_c, DeltaMeasure, Error, TreeParams};

use output::{num, Cell, Document, Format, Table};

/// Absolute slack for `lower ≤ upper` checks on emitted rows.
const ROW_SLACK: f64 = 1e-12;

/// Largest allowed gap between the two exact evaluations.
const ORACLE_TOL: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "treebound", version, about = "Bounds on root reconstruction for broadcasting on trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Locate the reconstruction threshold by bisection.
    Threshold(ThresholdArgs),
    /// Per-level error and information bounds at one noise level.
    Bounds(BoundsArgs),
    /// Matched bounds over a list of distances to the threshold.
    Sweep(SweepArgs),
    /// Sweep plus the slope and exponent fits.
    Exponent(ExponentArgs),
    /// Compare exact enumeration, exact density evolution and the bounds.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[group(id = "noise", required = true, multiple = false, args = ["delta", "tau"])]
struct Noise {
    /// Edge crossover probability.
    #[arg(long)]
    delta: Option<f64>,
    /// Distance below the threshold: δ = δ_c − τ.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum DepthArg {
    Levels(usize),
    Auto,
}

fn parse_depth(s: &str) -> Result<DepthArg, String> {
    if s == "auto" {
        return Ok(DepthArg::Auto);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(DepthArg::Levels(n)),
        _ => Err(format!("expected a positive level count or `auto`, got `{s}`")),
    }
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    d: usize,
    #[command(flatten)]
    noise: Noise,
    #[arg(long, default_value_t = 1024)]
    cells: usize,
    /// Level count, or `auto` to iterate to convergence.
    #[arg(long, default_value = "auto", value_parser = parse_depth)]
    depth: DepthArg,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Local,
    Scalar,
    TwoAtom,
}

#[derive(Args)]
struct SweepSpec {
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Comma-separated τ values; default 15 log-spaced points in [1e-4, 1e-2].
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1024)]
    cells: usize,
    /// Level cap per point, or `auto` for max(10⁴, 50/τ).
    #[arg(long, default_value = "auto", value_parser = parse_depth)]
    depth: DepthArg,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Worker threads; default: all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    spec: SweepSpec,
    #[arg(long, value_enum, default_value_t = MethodArg::Local)]
    method: MethodArg,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct ExponentArgs {
    #[command(flatten)]
    spec: SweepSpec,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    delta: f64,
    /// Tree depth.
    #[arg(long)]
    h: usize,
    /// Grid for the quantized bounds.
    #[arg(long, default_value_t = 64)]
    cells: usize,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Invariant(String),
    Resource(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Invariant(_) => 2,
            Failure::Resource(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Invariant(m) | Failure::Resource(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Precondition(_) | Error::Unsupported(_) => {
                Failure::Usage(e.to_string())
            }
            Error::Internal(_) => Failure::Invariant(e.to_string()),
            Error::Resource(_) => Failure::Resource(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Threshold(a) => threshold(a),
        Command::Bounds(a) => bounds(a),
        Command::Sweep(a) => sweep(a),
        Command::Exponent(a) => exponent(a),
        Command::OracleCheck(a) => oracle_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("treebound: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn check_tol(tol: f64) -> Outcome {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--tol must be positive, got {tol}")))
    }
}

fn check_cells(cells: usize) -> Outcome {
    if cells == 0 {
        Err(usage("--cells must be at least 1"))
    } else {
        Ok(())
    }
}

fn threshold(a: ThresholdArgs) -> Outcome {
    if a.d < 2 {
        return Err(usage(format!("--d must be at least 2 for a threshold, got {}", a.d)));
    }
    check_tol(a.tol)?;
    let found = find_threshold(a.d, a.tol)?;
    let exact = delta_c(a.d)?;
    let mut doc = Document::new(json!({"command": "threshold", "d": a.d, "tol": num(a.tol)}));
    doc.table = Table::new(&["d", "threshold", "delta_c", "abs_error"]);
    doc.table.push(vec![
        Cell::Int(a.d),
        Cell::Num(found),
        Cell::Num(exact),
        Cell::Num((found - exact).abs()),
    ]);
    doc.emit(a.out.format.unwrap_or(Format::Csv), a.out.output.as_deref())
}

fn noise_params(d: usize, noise: &Noise) -> Result<TreeParams, Failure> {
    match (noise.delta, noise.tau) {
        (Some(delta), None) => Ok(TreeParams::new(d, delta)?),
        (None, Some(tau)) => {
            if d < 2 {
                return Err(usage("--tau needs --d of at least 2"));
            }
            if !(tau > 0.0) {
                return Err(usage(format!("--tau must be positive, got {tau}")));
            }
            Ok(TreeParams::near_critical(d, tau)?)
        }
        _ => Err(usage("give exactly one of --delta and --tau")),
    }
}

fn bounds(a: BoundsArgs) -> Outcome {
    check_tol(a.tol)?;
    check_cells(a.cells)?;
    let params = noise_params(a.d, &a.noise)?;
    let grid = uniform_grid(a.cells)?;
    let depth = match a.depth {
        DepthArg::Levels(n) => Depth::Levels(n),
        DepthArg::Auto => Depth::Converge(FixedPointConfig::new(a.tol, 100_000, 0.0)?),
    };
    let perfect = bsc(0.0)?;
    let pipelines = [
        (Side::Bec, Target::Error),
        (Side::Bsc, Target::Error),
        (Side::Bsc, Target::Info),
        (Side::Bec, Target::Info),
    ];
    let traces = pipelines
        .iter()
        .map(|&(side, target)| local_comparison(&params, side, target, &grid, &perfect, depth))
        .collect::<Result<Vec<DynamicsTrace<DeltaMeasure>>, _>>()?;
    let series: Vec<Vec<f64>> = traces
        .iter()
        .zip(&pipelines)
        .map(|(t, &(_, target))| t.bounds(target))
        .collect();
    let levels = series.iter().map(Vec::len).max().unwrap_or(0);

    let mut doc = Document::new(json!({
        "command": "bounds",
        "d": params.d(),
        "delta": num(params.delta()),
        "cells": a.cells,
        "depth": depth_label(a.depth),
        "tol": num(a.tol),
    }));
    doc.table = Table::new(&["level", "lower_Pe", "upper_Pe", "lower_I", "upper_I"]);
    for t in 0..levels {
        // A pipeline that stopped early keeps its last value.
        let v: Vec<f64> = series.iter().map(|s| s[t.min(s.len() - 1)]).collect();
        check_row(&format!("level {}", t + 1), v[0], v[1], v[2], v[3])?;
        doc.table.push(vec![
            Cell::Int(t + 1),
            Cell::Num(v[0]),
            Cell::Num(v[1]),
            Cell::Num(v[2]),
            Cell::Num(v[3]),
        ]);
    }
    for ((trace, &(side, target)), name) in traces
        .iter()
        .zip(&pipelines)
        .zip(["lower_Pe", "upper_Pe", "lower_I", "upper_I"])
    {
        if matches!(a.depth, DepthArg::Auto) && !trace.settled() {
            doc.warn(format!("{name}: level cap reached before convergence"));
        }
        doc.fits.insert(
            format!("final_{name}"),
            num(trace.settled_bound(side, target)),
        );
    }
    if let (Some(lo), Some(hi)) = (doc.fits.get("final_lower_I"), doc.fits.get("final_upper_I")) {
        let gap = hi.as_f64().unwrap_or(f64::NAN) - lo.as_f64().unwrap_or(f64::NAN);
        doc.fits.insert("final_gap_I".into(), num(gap));
    }
    doc.emit(a.out.format.unwrap_or(Format::Csv), a.out.output.as_deref())
}

fn check_row(label: &str, lo_pe: f64, hi_pe: f64, lo_i: f64, hi_i: f64) -> Outcome {
    if lo_pe > hi_pe + ROW_SLACK || lo_i > hi_i + ROW_SLACK {
        return Err(Failure::Invariant(format!(
            "sandwich violated at {label}: P_e in [{lo_pe}, {hi_pe}], I in [{lo_i}, {hi_i}]"
        )));
    }
    Ok(())
}

fn depth_label(d: DepthArg) -> Value {
    match d {
        DepthArg::Levels(n) => json!(n),
        DepthArg::Auto => json!("auto"),
    }
}

struct SweepRun {
    result: SweepResult,
    config: Value,
}

fn run_sweep(spec: &SweepSpec, method: MethodArg) -> Result<SweepRun, Failure> {
    check_tol(spec.tol)?;
    check_cells(spec.cells)?;
    if spec.d < 2 {
        return Err(usage(format!("--d must be at least 2, got {}", spec.d)));
    }
    let taus = spec.taus.clone().unwrap_or_else(default_taus);
    if taus.is_empty() {
        return Err(usage("--taus needs at least one value"));
    }
    let method = match method {
        MethodArg::Local => Method::Local(uniform_grid(spec.cells)?),
        MethodArg::Scalar => Method::Scalar,
        MethodArg::TwoAtom => Method::TwoAtom,
    };
    let cap = match spec.depth {
        DepthArg::Levels(n) => Some(n),
        DepthArg::Auto => None,
    };
    let jobs = match spec.jobs {
        Some(0) => return Err(usage("--jobs must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Resource(format!("cannot start worker pool: {e}")))?;
    let result = pool.install(|| tau_sweep_tol(spec.d, &taus, &method, cap, spec.tol))?;
    result.check_sandwich()?;
    let config = json!({
        "d": spec.d,
        "method": result.method,
        "cells": result.grid_cells,
        "taus": taus.iter().map(|&t| num(t)).collect::<Vec<_>>(),
        "depth": depth_label(spec.depth),
        "tol": num(spec.tol),
    });
    Ok(SweepRun { result, config })
}

fn sweep_table(r: &SweepResult) -> Table {
    let mut table = Table::new(&[
        "tau", "lower_Pe", "upper_Pe", "lower_I", "upper_I", "converged", "gap_I",
    ]);
    for p in &r.points {
        table.push(vec![
            Cell::Num(p.tau),
            Cell::Num(p.lower_pe),
            Cell::Num(p.upper_pe),
            Cell::Num(p.lower_i),
            Cell::Num(p.upper_i),
            Cell::Bool(p.converged),
            Cell::Num(p.gap_i()),
        ]);
    }
    table
}

fn sweep_warnings(doc: &mut Document, r: &SweepResult) {
    for p in r.points.iter().filter(|p| !p.converged) {
        doc.warn(format!(
            "tau = {}: level cap {} reached before convergence",
            num(p.tau),
            p.depth_cap
        ));
    }
}

fn fit_json(f: &SlopeFit) -> Value {
    json!({
        "slope": num(f.slope),
        "intercept": num(f.intercept),
        "r_squared": num(f.r_squared),
        "transform": f.transform.name(),
    })
}

/// Fits of both conjectures; empty with a warning below three points.
fn fits(doc: &mut Document, r: &SweepResult) -> Result<(), Failure> {
    if r.points.len() < 3 {
        doc.warn("fewer than 3 points: no fits".to_string());
        return Ok(());
    }
    let t = r.taus();
    let ratio_lo = limit_ratio(&t, &r.lower_i())?;
    let ratio_hi = limit_ratio(&t, &r.upper_i())?;
    let advantage: Vec<f64> = r.upper_pe().iter().map(|p| 1.0 - 2.0 * p).collect();
    if advantage.iter().any(|&v| v <= 0.0) {
        doc.warn("1 - 2 upper_Pe is not positive at every point: no exponent fit".to_string());
    } else {
        let pe = fit_slope(&t, &advantage, Transform::LogLog)?;
        doc.fits.insert("pe_exponent".into(), num(pe.slope));
        doc.fits.insert("pe_fit".into(), fit_json(&pe));
    }
    doc.fits.insert("i_slope".into(), num(ratio_lo.intercept));
    doc.fits.insert("i_slope_upper".into(), num(ratio_hi.intercept));
    doc.fits.insert("i_ratio_lower".into(), fit_json(&ratio_lo));
    doc.fits.insert("i_ratio_upper".into(), fit_json(&ratio_hi));
    doc.fits.insert(
        "i_ols_lower".into(),
        fit_json(&fit_slope(&t, &r.lower_i(), Transform::Linear)?),
    );
    doc.fits.insert(
        "i_ols_upper".into(),
        fit_json(&fit_slope(&t, &r.upper_i(), Transform::Linear)?),
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Outcome {
    let run = run_sweep(&a.spec, a.method)?;
    let mut config = run.config;
    config["command"] = json!("sweep");
    let mut doc = Document::new(config);
    doc.table = sweep_table(&run.result);
    sweep_warnings(&mut doc, &run.result);
    if run.result.points.len() >= 3 {
        fits(&mut doc, &run.result)?;
    }
    doc.emit(a.out.format.unwrap_or(Format::Csv), a.out.output.as_deref())
}

fn exponent(a: ExponentArgs) -> Outcome {
    let run = run_sweep(&a.spec, MethodArg::Local)?;
    let mut config = run.config;
    config["command"] = json!("exponent");
    let mut doc = Document::new(config);
    doc.table = sweep_table(&run.result);
    sweep_warnings(&mut doc, &run.result);
    fits(&mut doc, &run.result)?;
    doc.emit(a.out.format.unwrap_or(Format::Json), a.out.output.as_deref())
}

fn oracle_check(a: OracleArgs) -> Outcome {
    check_cells(a.cells)?;
    let params = TreeParams::new(a.d, a.delta)?;
    let exact = exact_tree(&params, a.h)?;
    let de = exact_de(&params, a.h)?;
    let exact_gap = (exact.p_e - de.p_e())
        .abs()
        .max((exact.mutual_info - de.capacity()).abs())
        .max((exact.chi2_info - de.chi2()).abs());

    let grid = uniform_grid(a.cells)?;
    let perfect = bsc(0.0)?;
    let depth = Depth::Levels(a.h);
    let run = |side, target| -> Result<f64, Failure> {
        Ok(local_comparison(&params, side, target, &grid, &perfect, depth)?.final_bound(target))
    };
    let lo_pe = run(Side::Bec, Target::Error)?;
    let hi_pe = run(Side::Bsc, Target::Error)?;
    let lo_i = run(Side::Bsc, Target::Info)?;
    let hi_i = run(Side::Bec, Target::Info)?;
    let sandwiched = lo_pe <= exact.p_e + ROW_SLACK
        && exact.p_e <= hi_pe + ROW_SLACK
        && lo_i <= exact.mutual_info + ROW_SLACK
        && exact.mutual_info <= hi_i + ROW_SLACK;
    let pass = exact_gap <= ORACLE_TOL && sandwiched;

    let mut doc = Document::new(json!({
        "command": "oracle-check",
        "d": a.d,
        "delta": num(a.delta),
        "h": a.h,
        "cells": a.cells,
    }));
    doc.table = Table::new(&[
        "p_e", "mutual_info", "chi2_info", "leaf_count", "max_discrepancy", "lower_Pe", "upper_Pe",
        "lower_I", "upper_I", "pass",
    ]);
    doc.table.push(vec![
        Cell::Num(exact.p_e),
        Cell::Num(exact.mutual_info),
        Cell::Num(exact.chi2_info),
        Cell::Int(exact.leaf_count),
        Cell::Num(exact_gap),
        Cell::Num(lo_pe),
        Cell::Num(hi_pe),
        Cell::Num(lo_i),
        Cell::Num(hi_i),
        Cell::Bool(pass),
    ]);
    doc.emit(a.out.format.unwrap_or(Format::Csv), a.out.output.as_deref())?;
    eprintln!(
        "{}: exact_tree vs exact_de max discrepancy {}, quantized bounds {}",
        if pass { "PASS" } else { "FAIL" },
        num(exact_gap),
        if sandwiched { "bracket the exact values" } else { "do NOT bracket the exact values" },
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::Invariant("oracle check failed".into()))
    }
}

