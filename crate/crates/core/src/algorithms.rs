//! The AG method, its composite variant, the randomized stochastic variants
//! (RSAG, with and without mini-batches) and a projected-gradient baseline.
//!
//! Every optimizer returns a [`RunTrace`] with one [`IterRecord`] per executed
//! iteration. The exact diagnostics (`grad_norm_md`, `gradmap_norm`, `psi_*`)
//! are always computed from the noiseless problem; the norms of the stochastic
//! estimates that actually drove the iteration are kept separately.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, precondition, Error, Result};
use crate::linalg::{self, all_finite};
use crate::oracle::StochasticOracle;
use crate::problem::SmoothProblem;
use crate::prox::CompositeTerm;
use crate::rng::Rng;
use crate::schedules::{
    minibatch_size, BatchVariant, GammaTable, PmfMode, Policy, ScheduleMode, StepSchedule,
    StepTriple,
};

/// Iterates whose Euclidean norm exceeds this are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmConfig {
    pub schedule: StepSchedule,
    pub horizon: usize,
    pub seed: Option<u64>,
    /// Substream index under `seed`; replication `i` uses stream `i`.
    pub stream: u64,
    /// Store full iterate vectors in each record, not only norms and values.
    pub record_iterates: bool,
}

impl AlgorithmConfig {
    pub fn new(schedule: StepSchedule, horizon: usize) -> Self {
        Self {
            schedule,
            horizon,
            seed: None,
            stream: 0,
            record_iterates: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_record_iterates(mut self, record: bool) -> Self {
        self.record_iterates = record;
        self
    }

    fn rng(&self) -> Result<Rng> {
        let seed = self
            .seed
            .ok_or_else(|| invalid("stochastic runs require a seed"))?;
        Ok(Rng::substream(seed, self.stream))
    }
}

/// Diagnostics of iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// `Γ_k`; absent for the projected-gradient baseline.
    pub gamma: Option<f64>,
    /// Mini-batch size, mini-batch runs only.
    pub m_k: Option<u64>,
    pub psi_md: f64,
    pub psi_ag: f64,
    /// `Φ(x^ag_k) = Ψ(x^ag_k) + X(x^ag_k)`, composite runs only.
    pub phi_ag: Option<f64>,
    /// `‖∇Ψ(x^md_k)‖`.
    pub grad_norm_md: f64,
    /// `‖G(x^md_k, ∇Ψ(x^md_k), β_k)‖`, composite runs only.
    pub gradmap_norm: Option<f64>,
    /// Norm of the (averaged) stochastic gradient used at `x^md_k`.
    pub stoch_grad_norm: Option<f64>,
    /// `‖G(x^md_k, Ḡ_k, β_k)‖` with the stochastic gradient, composite stochastic runs only.
    pub stoch_gradmap_norm: Option<f64>,
    pub x: Option<Vec<f64>>,
    pub x_md: Option<Vec<f64>>,
    pub x_ag: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub algorithm: &'static str,
    pub x0: Vec<f64>,
    /// Configured horizon `N`.
    pub horizon: usize,
    pub records: Vec<IterRecord>,
    /// Sampled termination index, randomized runs only.
    pub r: Option<usize>,
    pub seed: Option<u64>,
    pub stream: u64,
    /// Total number of gradient (oracle) evaluations that drove the iteration.
    pub oracle_calls: u64,
    /// Final `x_k`, `x^md_k`, `x^ag_k`.
    pub x_last: Vec<f64>,
    pub x_md_last: Vec<f64>,
    pub x_ag_last: Vec<f64>,
    /// Filled in by callers that can read a clock.
    pub wall_time: Option<f64>,
}

impl RunTrace {
    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(k, min_k ‖∇Ψ(x^md_k)‖²)`, first attaining index on ties.
    pub fn best_grad_norm_sq(&self) -> Option<(usize, f64)> {
        first_min(
            self.records
                .iter()
                .map(|r| (r.k, r.grad_norm_md * r.grad_norm_md)),
        )
    }

    /// `(k, min_k ‖G(x^md_k, ∇Ψ(x^md_k), β_k)‖²)`, first attaining index on ties.
    pub fn best_gradmap_norm_sq(&self) -> Option<(usize, f64)> {
        first_min(
            self.records
                .iter()
                .filter_map(|r| r.gradmap_norm.map(|g| (r.k, g * g))),
        )
    }
}

fn first_min(it: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    it.fold(None, |best, (k, v)| match best {
        Some((_, b)) if b <= v => best,
        _ => Some((k, v)),
    })
}

/// Termination rule of the randomized methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Termination {
    /// Draw `R` from the termination pmf.
    #[default]
    Sampled,
    /// Run exactly this many iterations (must not exceed `N`).
    Fixed(usize),
}

/// Problem class assumed by RSAG; selects the validity conditions and the pmf.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RsagMode {
    Nonconvex,
    Convex,
}

/// Mini-batch rule for the composite RSAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchRule {
    HorizonDependent,
    HorizonFree,
    Fixed(u64),
}

impl BatchRule {
    pub fn name(self) -> &'static str {
        match self {
            BatchRule::HorizonDependent => "horizon_dependent",
            BatchRule::HorizonFree => "horizon_free",
            BatchRule::Fixed(_) => "fixed",
        }
    }

    /// `m_k` for iteration `k` of a run with horizon `n`.
    pub fn size(
        self,
        k: usize,
        n: usize,
        problem: &SmoothProblem,
        sigma: f64,
        d_tilde: Option<f64>,
    ) -> Result<u64> {
        let variant = match self {
            BatchRule::Fixed(0) => return Err(invalid("fixed mini-batch size must be positive")),
            BatchRule::Fixed(m) => return Ok(m),
            BatchRule::HorizonDependent => BatchVariant::HorizonDependent,
            BatchRule::HorizonFree => BatchVariant::HorizonFree,
        };
        let d = d_tilde.ok_or_else(|| invalid("mini-batch formulas require D_tilde"))?;
        minibatch_size(k, n, problem.l_psi(), problem.l_f(), sigma, d, variant)
    }

    /// `Σ_{k=1}^n m_k`.
    pub fn total(
        self,
        n: usize,
        problem: &SmoothProblem,
        sigma: f64,
        d_tilde: Option<f64>,
    ) -> Result<u64> {
        (1..=n)
            .map(|k| self.size(k, n, problem, sigma, d_tilde))
            .sum()
    }
}

fn check_x0(problem: &SmoothProblem, x0: &[f64]) -> Result<()> {
    problem.check_point(x0)
}

fn check_horizon(n: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("horizon N must be at least 1"));
    }
    Ok(())
}

/// Validates the schedule for `mode`; explicit tables are only checked structurally.
fn validated_steps(
    schedule: &StepSchedule,
    n: usize,
    mode: ScheduleMode,
) -> Result<(Vec<StepTriple>, GammaTable)> {
    let schedule = schedule.resolved_for(n);
    schedule.check()?;
    if schedule.policy().is_some() {
        let report = schedule.validate(n, mode)?;
        if !report.is_valid() {
            return Err(precondition(format!("invalid schedule: {report}")));
        }
    }
    let steps = schedule.triples(n)?;
    let gamma = GammaTable::from_alphas(steps.iter().map(|t| t.alpha));
    Ok((steps, gamma))
}

fn smooth_mode(schedule: &StepSchedule) -> ScheduleMode {
    schedule
        .effective_policy()
        .map_or(ScheduleMode::Nonconvex, Policy::validation_mode)
}

/// How the gradient that drives iteration `k` is produced.
enum Drive<'a> {
    Exact,
    Noisy {
        oracle: &'a StochasticOracle,
        rng: Rng,
        batch: Option<(BatchRule, Option<f64>)>,
    },
}

struct Setup<'a> {
    problem: &'a SmoothProblem,
    term: Option<&'a CompositeTerm>,
    steps: Vec<StepTriple>,
    gamma: GammaTable,
    iterations: usize,
    horizon: usize,
    record_iterates: bool,
}

fn diverged(v: &[f64]) -> bool {
    !all_finite(v) || linalg::norm(v) > DIVERGENCE_NORM
}

fn iterate(
    setup: Setup<'_>,
    x0: &[f64],
    mut drive: Drive<'_>,
) -> Result<(Vec<IterRecord>, u64, [Vec<f64>; 3])> {
    let Setup {
        problem,
        term,
        steps,
        gamma,
        iterations,
        horizon,
        record_iterates,
    } = setup;
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut x_ag = x0.to_vec();
    let mut x_md = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut est = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    let mut records = Vec::with_capacity(iterations);
    let mut calls = 0u64;

    for k in 1..=iterations {
        let StepTriple {
            alpha,
            beta,
            lambda,
        } = steps[k - 1];
        for i in 0..dim {
            x_md[i] = x_ag[i] + alpha * (x[i] - x_ag[i]);
        }
        if diverged(&x_md) {
            return Err(Error::Diverged { k });
        }
        let psi_md = problem.eval_into(&x_md, &mut grad);
        let grad_norm_md = linalg::norm(&grad);

        let mut m_k = None;
        let noisy = match &mut drive {
            Drive::Exact => {
                calls += 1;
                false
            }
            Drive::Noisy { oracle, rng, batch } => {
                let m = match batch {
                    Some((rule, d_tilde)) => {
                        let m = rule.size(k, horizon, problem, oracle.sigma(), *d_tilde)?;
                        m_k = Some(m);
                        m
                    }
                    None => 1,
                };
                oracle.batch_mean_into(&grad, m, rng, &mut est);
                calls += m;
                true
            }
        };
        let g: &[f64] = if noisy { &est } else { &grad };

        match term {
            None => {
                for i in 0..dim {
                    x[i] -= lambda * g[i];
                    x_ag[i] = x_md[i] - beta * g[i];
                }
            }
            Some(t) => {
                scratch.copy_from_slice(&x);
                t.prox_into(&scratch, g, lambda, &mut x);
                t.prox_into(&x_md, g, beta, &mut x_ag);
            }
        }
        if diverged(&x) || diverged(&x_ag) {
            return Err(Error::Diverged { k });
        }

        let psi_ag = problem.eval_into(&x_ag, &mut scratch);
        let (phi_ag, gradmap_norm, stoch_gradmap_norm) = match term {
            None => (None, None, None),
            Some(t) => {
                let phi = (t.value(&x_ag) + psi_ag).finite();
                let from_ag = libm::sqrt(linalg::dist_sq(&x_md, &x_ag)) / beta;
                if noisy {
                    t.prox_into(&x_md, &grad, beta, &mut scratch);
                    let exact = linalg::dist(&x_md, &scratch) / beta;
                    (phi, Some(exact), Some(from_ag))
                } else {
                    (phi, Some(from_ag), None)
                }
            }
        };

        records.push(IterRecord {
            k,
            alpha,
            beta,
            lambda,
            gamma: Some(gamma.gamma(k)),
            m_k,
            psi_md,
            psi_ag,
            phi_ag,
            grad_norm_md,
            gradmap_norm,
            stoch_grad_norm: noisy.then(|| linalg::norm(&est)),
            stoch_gradmap_norm,
            x: record_iterates.then(|| x.clone()),
            x_md: record_iterates.then(|| x_md.clone()),
            x_ag: record_iterates.then(|| x_ag.clone()),
        });
    }
    Ok((records, calls, [x, x_md, x_ag]))
}

fn finish(
    algorithm: &'static str,
    x0: &[f64],
    horizon: usize,
    r: Option<usize>,
    config: &AlgorithmConfig,
    seeded: bool,
    out: (Vec<IterRecord>, u64, [Vec<f64>; 3]),
) -> RunTrace {
    let (records, oracle_calls, [x_last, x_md_last, x_ag_last]) = out;
    RunTrace {
        algorithm,
        x0: x0.to_vec(),
        horizon,
        records,
        r,
        seed: if seeded { config.seed } else { None },
        stream: if seeded { config.stream } else { 0 },
        oracle_calls,
        x_last,
        x_md_last,
        x_ag_last,
        wall_time: None,
    }
}

/// Accelerated gradient method for smooth `Ψ`:
///
/// ```text
/// x^md_k = (1 − α_k) x^ag_{k−1} + α_k x_{k−1}
/// x_k    = x_{k−1} − λ_k ∇Ψ(x^md_k)
/// x^ag_k = x^md_k − β_k ∇Ψ(x^md_k)
/// ```
pub fn run_ag(problem: &SmoothProblem, x0: &[f64], config: &AlgorithmConfig) -> Result<RunTrace> {
    check_horizon(config.horizon)?;
    check_x0(problem, x0)?;
    let n = config.horizon;
    let (steps, gamma) = validated_steps(&config.schedule, n, smooth_mode(&config.schedule))?;
    let setup = Setup {
        problem,
        term: None,
        steps,
        gamma,
        iterations: n,
        horizon: n,
        record_iterates: config.record_iterates,
    };
    let out = iterate(setup, x0, Drive::Exact)?;
    Ok(finish("ag", x0, n, None, config, false, out))
}

/// AG for `Ψ + X`: both gradient steps are replaced by prox steps,
/// `x_k = P(x_{k−1}, ∇Ψ(x^md_k), λ_k)` and `x^ag_k = P(x^md_k, ∇Ψ(x^md_k), β_k)`.
pub fn run_ag_composite(
    problem: &SmoothProblem,
    term: &CompositeTerm,
    x0: &[f64],
    config: &AlgorithmConfig,
) -> Result<RunTrace> {
    check_horizon(config.horizon)?;
    check_x0(problem, x0)?;
    check_term(problem, term)?;
    let n = config.horizon;
    let (steps, gamma) = validated_steps(&config.schedule, n, ScheduleMode::ConvexDet)?;
    let setup = Setup {
        problem,
        term: Some(term),
        steps,
        gamma,
        iterations: n,
        horizon: n,
        record_iterates: config.record_iterates,
    };
    let out = iterate(setup, x0, Drive::Exact)?;
    Ok(finish("ag_composite", x0, n, None, config, false, out))
}

fn check_term(problem: &SmoothProblem, term: &CompositeTerm) -> Result<()> {
    if let Some(b) = term.bounds() {
        if b.dim() != problem.dim() {
            return Err(invalid(format!(
                "composite term has dimension {}, problem has dimension {}",
                b.dim(),
                problem.dim()
            )));
        }
    }
    Ok(())
}

/// Draws `R` by inverse CDF from one uniform.
pub fn sample_termination(pmf: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    pmf.len()
}

fn resolve_termination(
    termination: Termination,
    schedule: &StepSchedule,
    n: usize,
    pmf_mode: PmfMode,
    rng: &mut Rng,
) -> Result<usize> {
    match termination {
        Termination::Sampled => {
            let pmf = schedule.resolved_for(n).termination_pmf(n, pmf_mode)?;
            Ok(sample_termination(&pmf, rng))
        }
        Termination::Fixed(r) if (1..=n).contains(&r) => Ok(r),
        Termination::Fixed(r) => Err(invalid(format!(
            "fixed termination index {r} must lie in 1..={n}"
        ))),
    }
}

/// Randomized stochastic AG. `R` is drawn once before iterating and exactly
/// `R` iterations are executed; the outputs are `x^md_R` and `x^ag_R`. One
/// stochastic gradient per iteration drives both updates.
pub fn run_rsag(
    oracle: &StochasticOracle,
    x0: &[f64],
    config: &AlgorithmConfig,
    mode: RsagMode,
    termination: Termination,
) -> Result<RunTrace> {
    check_horizon(config.horizon)?;
    let problem = oracle.base();
    check_x0(problem, x0)?;
    let n = config.horizon;
    let schedule = config.schedule.resolved_for(n).with_sigma(oracle.sigma());
    let (schedule_mode, pmf_mode) = match mode {
        RsagMode::Nonconvex => (ScheduleMode::Nonconvex, PmfMode::Nonconvex),
        RsagMode::Convex => {
            let m = match schedule.effective_policy() {
                Some(Policy::DetConvex) => ScheduleMode::ConvexDet,
                _ => ScheduleMode::ConvexSto,
            };
            (m, PmfMode::Convex)
        }
    };
    let (steps, gamma) = validated_steps(&schedule, n, schedule_mode)?;
    let mut rng = config.rng()?;
    let r = resolve_termination(termination, &schedule, n, pmf_mode, &mut rng)?;
    let setup = Setup {
        problem,
        term: None,
        steps,
        gamma,
        iterations: r,
        horizon: n,
        record_iterates: config.record_iterates,
    };
    let out = iterate(
        setup,
        x0,
        Drive::Noisy {
            oracle,
            rng,
            batch: None,
        },
    )?;
    Ok(finish("rsag", x0, n, Some(r), config, true, out))
}

/// Mini-batch RSAG for `Ψ + X`. At iteration `k` the oracle is called `m_k`
/// times and the average `Ḡ_k` drives both prox steps. `R` follows the convex
/// termination pmf.
pub fn run_rsag_composite(
    oracle: &StochasticOracle,
    term: &CompositeTerm,
    x0: &[f64],
    config: &AlgorithmConfig,
    batch: BatchRule,
    termination: Termination,
) -> Result<RunTrace> {
    check_horizon(config.horizon)?;
    let problem = oracle.base();
    check_x0(problem, x0)?;
    check_term(problem, term)?;
    let n = config.horizon;
    let schedule = config.schedule.resolved_for(n).with_sigma(oracle.sigma());
    let (steps, gamma) = validated_steps(&schedule, n, ScheduleMode::ConvexDet)?;
    let d_tilde = schedule.d_tilde();
    // Fail before iterating if the batch rule cannot be resolved.
    batch.size(1, n, problem, oracle.sigma(), d_tilde)?;
    let mut rng = config.rng()?;
    let r = resolve_termination(termination, &schedule, n, PmfMode::Convex, &mut rng)?;
    let setup = Setup {
        problem,
        term: Some(term),
        steps,
        gamma,
        iterations: r,
        horizon: n,
        record_iterates: config.record_iterates,
    };
    let out = iterate(
        setup,
        x0,
        Drive::Noisy {
            oracle,
            rng,
            batch: Some((batch, d_tilde)),
        },
    )?;
    Ok(finish("rsag_composite", x0, n, Some(r), config, true, out))
}

/// Projected (proximal) gradient baseline `p_k = P(p_{k−1}, ∇Ψ(p_{k−1}), ν)`.
///
/// Recorded as an AG run with `α_k = 1`, `β_k = λ_k = ν`, so `x^md_k = p_{k−1}`
/// and `x_k = x^ag_k = p_k`.
pub fn run_projected_gradient(
    problem: &SmoothProblem,
    term: &CompositeTerm,
    x0: &[f64],
    stepsize: f64,
    n: usize,
) -> Result<RunTrace> {
    check_horizon(n)?;
    check_x0(problem, x0)?;
    check_term(problem, term)?;
    let l = problem.l_psi();
    if !(stepsize > 0.0 && stepsize.is_finite()) || (l > 0.0 && stepsize * l > 1.0 + 1e-12) {
        return Err(invalid(format!(
            "stepsize must lie in (0, 1/L_Psi], got {stepsize}"
        )));
    }
    if !term.contains(x0) {
        return Err(invalid("x0 must lie in the domain of the composite term"));
    }
    let dim = x0.len();
    let mut p = x0.to_vec();
    let mut prev = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    let mut records = Vec::with_capacity(n);
    for k in 1..=n {
        prev.copy_from_slice(&p);
        let psi_md = problem.eval_into(&prev, &mut grad);
        term.prox_into(&prev, &grad, stepsize, &mut p);
        if diverged(&p) {
            return Err(Error::Diverged { k });
        }
        let psi_ag = problem.eval_into(&p, &mut scratch);
        records.push(IterRecord {
            k,
            alpha: 1.0,
            beta: stepsize,
            lambda: stepsize,
            gamma: None,
            m_k: None,
            psi_md,
            psi_ag,
            phi_ag: (term.value(&p) + psi_ag).finite(),
            grad_norm_md: linalg::norm(&grad),
            gradmap_norm: Some(linalg::dist(&prev, &p) / stepsize),
            stoch_grad_norm: None,
            stoch_gradmap_norm: None,
            x: Some(p.clone()),
            x_md: Some(prev.clone()),
            x_ag: Some(p.clone()),
        });
    }
    Ok(RunTrace {
        algorithm: "projected_gradient",
        x0: x0.to_vec(),
        horizon: n,
        records,
        r: None,
        seed: None,
        stream: 0,
        oracle_calls: n as u64,
        x_last: p.clone(),
        x_md_last: prev,
        x_ag_last: p,
        wall_time: None,
    })
}
