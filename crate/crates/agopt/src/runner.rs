//! Executes the cells of an [`Experiment`] and writes their artifacts.
//!
//! Replication `r` of every cell draws from substream `(seed, r)`, so cells
//! of a sweep share common random numbers and results do not depend on
//! thread scheduling. Replications and cells run on the rayon pool; results
//! are collected in index order before anything is aggregated or written.

use std::path::{Path, PathBuf};

use agopt_core::algorithms::{
    run_ag, run_ag_composite, run_projected_gradient, run_rsag, run_rsag_composite,
    AlgorithmConfig, RunTrace,
};
use agopt_core::linalg;
use agopt_core::oracle::StochasticOracle;
use agopt_core::schedules::StepSchedule;
use agopt_core::verify::{
    aggregate_monte_carlo, bound_composite, bound_deterministic, bound_stochastic,
    markov_tail_check, stochastic_rhs, BoundContext, BoundId, BoundKind, BoundReport, McSummary,
    MetricKind, MetricSelector, StochasticBoundParams, TailReport,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Algorithm, Cell, EmitSection, Experiment, ExperimentConfig};
use crate::error::{io_err, Error, Result};
use crate::io::{self, float_or_string, fmt_f64};

/// Tail levels reported next to `cor4a`.
pub const TAIL_LEVELS: [f64; 3] = [2.0, 4.0, 10.0];

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    /// Replication 0 keeps its full trace; the others keep only the terminal record.
    pub traces: Vec<RunTrace>,
    pub metrics: CellMetrics,
    pub bounds: Vec<BoundReport>,
    pub tails: Vec<TailReport>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub problem_name: String,
    pub dim: usize,
    pub l_psi: f64,
    pub l_f: f64,
    pub cells: Vec<CellOutcome>,
}

impl ExperimentOutcome {
    pub fn all_pass(&self) -> bool {
        self.cells.iter().all(|c| c.bounds.iter().all(|b| b.pass))
    }

    pub fn bound_reports(&self) -> impl Iterator<Item = (&Cell, &BoundReport)> {
        self.cells
            .iter()
            .flat_map(|c| c.bounds.iter().map(move |b| (&c.cell, b)))
    }
}

/// Mean and standard error of terminal metrics over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    #[serde(serialize_with = "float_or_string")]
    pub mean: f64,
    #[serde(serialize_with = "float_or_string")]
    pub stderr: f64,
}

impl From<McSummary> for Stat {
    fn from(s: McSummary) -> Self {
        Self {
            mean: s.mean,
            stderr: s.stderr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    pub replications: usize,
    pub psi_ag: Stat,
    pub grad_norm_sq: Stat,
    pub gradmap_norm_sq: Option<Stat>,
    pub phi_ag: Option<Stat>,
    pub oracle_calls: Stat,
}

fn stat(values: impl Iterator<Item = f64>) -> Result<Stat> {
    let v: Vec<f64> = values.collect();
    Ok(McSummary::from_samples(&v, false)?.into())
}

fn optional_stat(values: Vec<Option<f64>>) -> Result<Option<Stat>> {
    if values.iter().any(Option::is_none) {
        return Ok(None);
    }
    stat(values.into_iter().flatten()).map(Some)
}

fn cell_metrics(traces: &[RunTrace]) -> Result<CellMetrics> {
    let last: Vec<_> = traces
        .iter()
        .map(|t| t.last().expect("traces are non-empty"))
        .collect();
    Ok(CellMetrics {
        replications: traces.len(),
        psi_ag: stat(last.iter().map(|r| r.psi_ag))?,
        grad_norm_sq: stat(last.iter().map(|r| r.grad_norm_md * r.grad_norm_md))?,
        gradmap_norm_sq: optional_stat(
            last.iter().map(|r| r.gradmap_norm.map(|g| g * g)).collect(),
        )?,
        phi_ag: optional_stat(last.iter().map(|r| r.phi_ag).collect())?,
        oracle_calls: stat(traces.iter().map(|t| t.oracle_calls as f64))?,
    })
}

fn schedule_for(exp: &Experiment, cell: &Cell) -> Option<StepSchedule> {
    let policy = cell.policy?;
    let mut s = StepSchedule::from_policy(policy, exp.problem.l_psi())
        .with_lambda_choice(cell.lambda_choice);
    if let Some(d) = cell.d_tilde {
        s = s.with_d_tilde(d);
    }
    Some(s)
}

fn keep_terminal(mut trace: RunTrace) -> RunTrace {
    let n = trace.records.len();
    if n > 1 {
        trace.records.drain(..n - 1);
    }
    trace
}

fn run_replications(exp: &Experiment, cell: &Cell) -> agopt_core::Result<Vec<RunTrace>> {
    let n = cell.horizon;
    let problem = &exp.problem;
    let x0 = &exp.x0;
    let alg = exp.config.algorithm;
    let schedule = schedule_for(exp, cell);
    let config = |s: StepSchedule| AlgorithmConfig::new(s, n).with_record_iterates(false);
    match alg {
        Algorithm::Ag => Ok(vec![run_ag(
            problem,
            x0,
            &config(schedule.expect("policy")),
        )?]),
        Algorithm::AgComposite => {
            let term = exp.term.as_ref().expect("term");
            Ok(vec![run_ag_composite(
                problem,
                term,
                x0,
                &config(schedule.expect("policy")),
            )?])
        }
        Algorithm::ProjectedGradient => {
            let term = exp.term.as_ref().expect("term");
            Ok(vec![run_projected_gradient(
                problem,
                term,
                x0,
                cell.stepsize.expect("stepsize"),
                n,
            )?])
        }
        Algorithm::Rsag | Algorithm::RsagComposite => {
            let oracle =
                StochasticOracle::new(problem.clone(), cell.sigma, exp.config.noise.model)?;
            let base = config(schedule.expect("policy")).with_seed(exp.config.seed);
            let termination = cell.termination_rule();
            (0..exp.config.replications())
                .into_par_iter()
                .map(|rep| {
                    let cfg = base.clone().with_stream(rep as u64);
                    let trace = match alg {
                        Algorithm::Rsag => {
                            run_rsag(&oracle, x0, &cfg, cell.mode.expect("mode"), termination)?
                        }
                        _ => run_rsag_composite(
                            &oracle,
                            exp.term.as_ref().expect("term"),
                            x0,
                            &cfg,
                            cell.batch_rule().expect("batch"),
                            termination,
                        )?,
                    };
                    Ok(if rep == 0 {
                        trace
                    } else {
                        keep_terminal(trace)
                    })
                })
                .collect()
        }
    }
}

fn context(exp: &Experiment, cell: &Cell) -> BoundContext {
    BoundContext {
        problem: exp.problem.name().to_string(),
        algorithm: exp.config.algorithm.name().to_string(),
        policy: cell.policy.map(|p| p.name().to_string()),
        horizon: cell.horizon,
        replications: exp.config.replications(),
    }
}

fn stochastic_params(exp: &Experiment, cell: &Cell) -> agopt_core::Result<StochasticBoundParams> {
    let problem = &exp.problem;
    let opt = exp.optimum.as_ref();
    let batch_sizes = match cell.batch_rule() {
        Some(rule) => Some(
            (1..=cell.horizon)
                .map(|k| rule.size(k, cell.horizon, problem, cell.sigma, cell.d_tilde))
                .collect::<agopt_core::Result<Vec<u64>>>()?,
        ),
        None => None,
    };
    Ok(StochasticBoundParams {
        l_psi: problem.l_psi(),
        l_f: problem.l_f(),
        sigma: cell.sigma,
        horizon: cell.horizon,
        psi_gap0: match (opt, &exp.term) {
            (Some(o), None) => Some(problem.value(&exp.x0)? - o.value),
            _ => None,
        },
        dist0: opt.map(|o| linalg::dist(&exp.x0, &o.x_star)),
        d_tilde: cell.d_tilde,
        x_star_norm_sq: opt.map(|o| linalg::norm_sq(&o.x_star)),
        bound_m: exp.term.as_ref().and_then(|t| t.bound_m()),
        batch_sizes,
        context: context(exp, cell),
    })
}

fn selector(exp: &Experiment, id: BoundId) -> agopt_core::Result<MetricSelector> {
    let star = || {
        exp.optimum.as_ref().map(|o| o.value).ok_or_else(|| {
            agopt_core::Error::InvalidArgument(format!("{id} needs a known optimal value"))
        })
    };
    Ok(match id.metric() {
        MetricKind::GradNormSq => MetricSelector::GradNormSq,
        MetricKind::GradmapNormSq => MetricSelector::GradmapNormSq,
        MetricKind::PsiGap => MetricSelector::PsiGap { psi_star: star()? },
        MetricKind::PhiGap => MetricSelector::PhiGap { phi_star: star()? },
    })
}

fn evaluate_bounds(
    exp: &Experiment,
    cell: &Cell,
    traces: &[RunTrace],
) -> agopt_core::Result<(Vec<BoundReport>, Vec<TailReport>)> {
    let mut reports = Vec::new();
    let mut tails = Vec::new();
    for &id in &exp.config.bounds {
        let mut report = match id.kind() {
            BoundKind::Deterministic => bound_deterministic(&traces[0], &exp.problem, id)?,
            BoundKind::Composite => bound_composite(
                &traces[0],
                &exp.problem,
                exp.term.as_ref().expect("term"),
                id,
            )?,
            BoundKind::Stochastic | BoundKind::StochasticComposite => {
                let summary = aggregate_monte_carlo(traces, selector(exp, id)?)?;
                let params = stochastic_params(exp, cell)?;
                if id == BoundId::Cor4a {
                    let u_n = stochastic_rhs(&params, id)?;
                    let samples = summary.samples.as_deref().unwrap_or_default();
                    tails = markov_tail_check(samples, u_n, &TAIL_LEVELS)?;
                }
                bound_stochastic(&summary, &params, id)?
            }
        };
        report.context = context(exp, cell);
        reports.push(report);
    }
    Ok((reports, tails))
}

fn run_cell(exp: &Experiment, cell: &Cell) -> Result<CellOutcome> {
    let wrap = |source: agopt_core::Error| Error::Cell {
        cell: cell.index,
        horizon: cell.horizon,
        sigma: cell.sigma,
        policy: cell.policy_name().to_string(),
        source,
    };
    let traces = run_replications(exp, cell).map_err(wrap)?;
    let (bounds, tails) = evaluate_bounds(exp, cell, &traces).map_err(wrap)?;
    Ok(CellOutcome {
        cell: cell.clone(),
        metrics: cell_metrics(&traces)?,
        traces,
        bounds,
        tails,
    })
}

/// Runs every cell; the outcome lists cells in their configured order.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentOutcome> {
    let cells = exp
        .cells
        .par_iter()
        .map(|cell| run_cell(exp, cell))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutcome {
        config: exp.config.clone(),
        problem_name: exp.problem.name().to_string(),
        dim: exp.problem.dim(),
        l_psi: exp.problem.l_psi(),
        l_f: exp.problem.l_f(),
        cells,
    })
}

#[derive(Serialize)]
struct BoundEntry<'a> {
    bound_id: BoundId,
    #[serde(serialize_with = "float_or_string")]
    lhs: f64,
    #[serde(serialize_with = "float_or_string")]
    rhs: f64,
    #[serde(serialize_with = "float_or_string")]
    margin: f64,
    pass: bool,
    surrogate: bool,
    context: &'a BoundContext,
}

#[derive(Serialize)]
struct TailEntry {
    lambda: f64,
    frequency: f64,
    stderr: f64,
    limit: f64,
    pass: bool,
}

#[derive(Serialize)]
struct CellEntry<'a> {
    resolved: &'a Cell,
    metrics: &'a CellMetrics,
    bounds: Vec<BoundEntry<'a>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    markov_tail: Vec<TailEntry>,
}

#[derive(Serialize)]
struct ProblemEntry<'a> {
    name: &'a str,
    dim: usize,
    l_psi: f64,
    l_f: f64,
}

#[derive(Serialize)]
struct Report<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    problem: ProblemEntry<'a>,
    cells: Vec<CellEntry<'a>>,
    all_pass: bool,
}

fn report(outcome: &ExperimentOutcome) -> Report<'_> {
    Report {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: outcome.config.seed,
        config: &outcome.config,
        problem: ProblemEntry {
            name: &outcome.problem_name,
            dim: outcome.dim,
            l_psi: outcome.l_psi,
            l_f: outcome.l_f,
        },
        cells: outcome
            .cells
            .iter()
            .map(|c| CellEntry {
                resolved: &c.cell,
                metrics: &c.metrics,
                bounds: c
                    .bounds
                    .iter()
                    .map(|b| BoundEntry {
                        bound_id: b.bound_id,
                        lhs: b.lhs,
                        rhs: b.rhs,
                        margin: b.margin,
                        pass: b.pass,
                        surrogate: b.surrogate,
                        context: &b.context,
                    })
                    .collect(),
                markov_tail: c
                    .tails
                    .iter()
                    .map(|t| TailEntry {
                        lambda: t.lambda,
                        frequency: t.frequency,
                        stderr: t.stderr,
                        limit: t.limit,
                        pass: t.pass,
                    })
                    .collect(),
            })
            .collect(),
        all_pass: outcome.all_pass(),
    }
}

const SUMMARY_HEADER: [&str; 17] = [
    "cell",
    "horizon",
    "sigma",
    "policy",
    "replications",
    "psi_ag_mean",
    "psi_ag_stderr",
    "grad_norm_sq_mean",
    "grad_norm_sq_stderr",
    "gradmap_norm_sq_mean",
    "gradmap_norm_sq_stderr",
    "phi_ag_mean",
    "phi_ag_stderr",
    "oracle_calls_mean",
    "oracle_calls_stderr",
    "bounds_checked",
    "bounds_passed",
];

const BOUNDS_HEADER: [&str; 9] = [
    "cell", "horizon", "sigma", "policy", "bound_id", "lhs", "rhs", "margin", "pass",
];

const REPLICATIONS_HEADER: [&str; 8] = [
    "replication",
    "r",
    "oracle_calls",
    "psi_ag",
    "phi_ag",
    "grad_norm_md",
    "gradmap_norm",
    "iterations",
];

fn stat_fields(s: Option<&Stat>) -> [String; 2] {
    match s {
        Some(s) => [fmt_f64(s.mean), fmt_f64(s.stderr)],
        None => [String::new(), String::new()],
    }
}

fn summary_rows(outcome: &ExperimentOutcome) -> Vec<Vec<String>> {
    outcome
        .cells
        .iter()
        .map(|c| {
            let m = &c.metrics;
            let mut row = vec![
                c.cell.index.to_string(),
                c.cell.horizon.to_string(),
                fmt_f64(c.cell.sigma),
                c.cell.policy_name().to_string(),
                m.replications.to_string(),
            ];
            row.extend(stat_fields(Some(&m.psi_ag)));
            row.extend(stat_fields(Some(&m.grad_norm_sq)));
            row.extend(stat_fields(m.gradmap_norm_sq.as_ref()));
            row.extend(stat_fields(m.phi_ag.as_ref()));
            row.extend(stat_fields(Some(&m.oracle_calls)));
            row.push(c.bounds.len().to_string());
            row.push(c.bounds.iter().filter(|b| b.pass).count().to_string());
            row
        })
        .collect()
}

fn bounds_rows(outcome: &ExperimentOutcome) -> Vec<Vec<String>> {
    outcome
        .bound_reports()
        .map(|(cell, b)| {
            vec![
                cell.index.to_string(),
                cell.horizon.to_string(),
                fmt_f64(cell.sigma),
                cell.policy_name().to_string(),
                b.bound_id.name().to_string(),
                fmt_f64(b.lhs),
                fmt_f64(b.rhs),
                fmt_f64(b.margin),
                b.pass.to_string(),
            ]
        })
        .collect()
}

fn opt_field(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn replication_rows(traces: &[RunTrace]) -> Vec<Vec<String>> {
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let last = t.last().expect("traces are non-empty");
            vec![
                i.to_string(),
                t.r.map(|r| r.to_string()).unwrap_or_default(),
                t.oracle_calls.to_string(),
                fmt_f64(last.psi_ag),
                opt_field(last.phi_ag),
                fmt_f64(last.grad_norm_md),
                opt_field(last.gradmap_norm),
                last.k.to_string(),
            ]
        })
        .collect()
}

/// Writes `report.json` and, as enabled, `summary.csv`, `bounds.csv` and the
/// per-cell trace files. `traces` disables trace files regardless of `emit`.
pub fn write_artifacts(
    outcome: &ExperimentOutcome,
    out_dir: &Path,
    emit: &EmitSection,
    traces: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    let path = out_dir.join("report.json");
    io::write_json(&report(outcome), &path)?;
    written.push(path);
    if emit.summary {
        let path = out_dir.join("summary.csv");
        io::write_table_file(&path, &SUMMARY_HEADER, &summary_rows(outcome))?;
        written.push(path);
    }
    if emit.bounds && !outcome.config.bounds.is_empty() {
        let path = out_dir.join("bounds.csv");
        io::write_table_file(&path, &BOUNDS_HEADER, &bounds_rows(outcome))?;
        written.push(path);
    }
    if emit.trace && traces {
        for c in &outcome.cells {
            let path = out_dir.join(format!("trace_cell{:03}.csv", c.cell.index));
            io::emit_trace_csv(&c.traces[0], &path)?;
            written.push(path);
            if c.traces.len() > 1 {
                let path = out_dir.join(format!("replications_cell{:03}.csv", c.cell.index));
                io::write_table_file(&path, &REPLICATIONS_HEADER, &replication_rows(&c.traces))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// One line per bound check, prefixed with its cell.
pub fn bound_lines(outcome: &ExperimentOutcome) -> Vec<String> {
    outcome
        .bound_reports()
        .map(|(cell, b)| {
            format!(
                "cell {} (N = {}, sigma = {}, policy = {}): {b}",
                cell.index,
                cell.horizon,
                cell.sigma,
                cell.policy_name()
            )
        })
        .collect()
}
