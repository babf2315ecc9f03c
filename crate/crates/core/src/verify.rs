//! Checks of the convergence guarantees and independent oracles for the
//! building blocks: finite-difference gradients, brute-force prox, bound
//! evaluation for deterministic, composite and stochastic runs, Monte-Carlo
//! aggregation, Markov tail checks and rate fitting.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::algorithms::RunTrace;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::problem::SmoothProblem;
use crate::prox::{separable_quadratic_optimum, CompositeTerm};

/// Identifier of a verified bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundId {
    /// `min ‖∇Ψ(x^md_k)‖² ≤ (Ψ(x₀) − Ψ*)/Σ λ_k C_k`.
    Thm1a,
    /// `min ‖∇Ψ(x^md_k)‖² ≤ 6L_Ψ(Ψ(x₀) − Ψ*)/N`.
    Cor2a,
    /// `Ψ(x^ag_N) − Ψ* ≤ 4L_Ψ‖x₀ − x*‖²/(N(N+1))`.
    Cor2bFun,
    /// `min ‖∇Ψ(x^md_k)‖² ≤ 96L_Ψ²‖x₀ − x*‖²/(N²(N+1))`.
    Cor2bGrad,
    /// `min ‖G(x^md_k, ∇Ψ(x^md_k), β_k)‖² ≤ 24L_Ψ[4L_Ψ‖x₀ − x*‖²/(N²(N+1)) + (L_f/N)(‖x*‖² + 2M²)]`.
    Cor3Gradmap,
    /// `Φ(x^ag_N) − Φ* ≤ 4L_Ψ‖x₀ − x*‖²/(N(N+1))`, requires `L_f = 0`.
    Cor3Fun,
    /// `E‖∇Ψ(x^md_R)‖² ≤ U_N`.
    Cor4a,
    /// `E‖∇Ψ(x^md_R)‖²`, convex stochastic policy.
    Cor4bGrad,
    /// `E[Ψ(x^ag_R) − Ψ*]`, convex stochastic policy.
    Cor4bFun,
    /// `E‖G(x^md_R, ∇Ψ(x^md_R), β_R)‖²` for arbitrary mini-batch sizes.
    Cor5Gradmap,
    /// `E[Φ(x^ag_R) − Φ*]` for arbitrary mini-batch sizes, requires `L_f = 0`.
    Cor5Fun,
    /// Gradient-mapping bound with horizon-dependent mini-batches.
    Cor6,
    /// `Φ`-gap bound with horizon-dependent mini-batches, requires `L_f = 0`.
    Cor6Fun,
    /// Gradient-mapping bound with horizon-free mini-batches.
    Cor7,
}

impl BoundId {
    pub const ALL: [BoundId; 14] = [
        BoundId::Thm1a,
        BoundId::Cor2a,
        BoundId::Cor2bFun,
        BoundId::Cor2bGrad,
        BoundId::Cor3Gradmap,
        BoundId::Cor3Fun,
        BoundId::Cor4a,
        BoundId::Cor4bGrad,
        BoundId::Cor4bFun,
        BoundId::Cor5Gradmap,
        BoundId::Cor5Fun,
        BoundId::Cor6,
        BoundId::Cor6Fun,
        BoundId::Cor7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundId::Thm1a => "thm1a",
            BoundId::Cor2a => "cor2a",
            BoundId::Cor2bFun => "cor2b_fun",
            BoundId::Cor2bGrad => "cor2b_grad",
            BoundId::Cor3Gradmap => "cor3_gradmap",
            BoundId::Cor3Fun => "cor3_fun",
            BoundId::Cor4a => "cor4a",
            BoundId::Cor4bGrad => "cor4b_grad",
            BoundId::Cor4bFun => "cor4b_fun",
            BoundId::Cor5Gradmap => "cor5_gradmap",
            BoundId::Cor5Fun => "cor5_fun",
            BoundId::Cor6 => "cor6",
            BoundId::Cor6Fun => "cor6_fun",
            BoundId::Cor7 => "cor7",
        }
    }

    pub fn kind(self) -> BoundKind {
        match self {
            BoundId::Thm1a | BoundId::Cor2a | BoundId::Cor2bFun | BoundId::Cor2bGrad => {
                BoundKind::Deterministic
            }
            BoundId::Cor3Gradmap | BoundId::Cor3Fun => BoundKind::Composite,
            BoundId::Cor4a | BoundId::Cor4bGrad | BoundId::Cor4bFun => BoundKind::Stochastic,
            _ => BoundKind::StochasticComposite,
        }
    }

    /// Terminal metric whose expectation the bound controls (stochastic bounds).
    pub fn metric(self) -> MetricKind {
        match self {
            BoundId::Thm1a
            | BoundId::Cor2a
            | BoundId::Cor2bGrad
            | BoundId::Cor4a
            | BoundId::Cor4bGrad => MetricKind::GradNormSq,
            BoundId::Cor2bFun | BoundId::Cor4bFun => MetricKind::PsiGap,
            BoundId::Cor3Gradmap | BoundId::Cor5Gradmap | BoundId::Cor6 | BoundId::Cor7 => {
                MetricKind::GradmapNormSq
            }
            BoundId::Cor3Fun | BoundId::Cor5Fun | BoundId::Cor6Fun => MetricKind::PhiGap,
        }
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| invalid(format!("unknown bound id '{s}'")))
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for BoundId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for BoundId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Deterministic,
    Composite,
    Stochastic,
    StochasticComposite,
}

/// Quantity measured on the terminal (or best) iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    GradNormSq,
    GradmapNormSq,
    PsiGap,
    PhiGap,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundContext {
    pub problem: String,
    pub algorithm: String,
    pub policy: Option<String>,
    pub horizon: usize,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub bound_id: BoundId,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// `rhs/lhs`; `+∞` when `lhs ≤ 0`.
    pub margin: f64,
    /// True when `Ψ*` was replaced by the best value observed.
    pub surrogate: bool,
    pub context: BoundContext,
}

impl BoundReport {
    pub fn new(bound_id: BoundId, lhs: f64, rhs: f64, context: BoundContext) -> Self {
        let margin = if lhs <= 0.0 { f64::INFINITY } else { rhs / lhs };
        Self {
            bound_id,
            lhs,
            rhs,
            pass: lhs <= rhs,
            margin,
            surrogate: false,
            context,
        }
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: lhs = {:e}, rhs = {:e}, margin = {:e}{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.bound_id,
            self.lhs,
            self.rhs,
            self.margin,
            if self.surrogate {
                " (surrogate optimum)"
            } else {
                ""
            }
        )
    }
}

/// Largest coordinatewise relative error between `grad` and the central
/// difference of `value` with step `h`. The relative error of coordinate `i` is
/// `|fd_i − g_i| / max(1, |g_i|)`.
pub fn check_gradient_fd_with(
    mut value: impl FnMut(&[f64]) -> f64,
    grad: &[f64],
    x: &[f64],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h < 1e-2) {
        return Err(invalid(format!(
            "finite-difference step must lie in (0, 1e-2), got {h}"
        )));
    }
    if grad.len() != x.len() {
        return Err(invalid("gradient and point differ in dimension"));
    }
    let mut p = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let fp = value(&p);
        p[i] = x[i] - h;
        let fm = value(&p);
        p[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / f64::max(1.0, grad[i].abs()));
    }
    Ok(worst)
}

/// [`check_gradient_fd_with`] applied to a problem's own gradient.
pub fn check_gradient_fd(problem: &SmoothProblem, x: &[f64], h: f64) -> Result<f64> {
    let (_, g) = problem.eval(x)?;
    let mut scratch = vec![0.0; x.len()];
    let value = |p: &[f64]| problem.eval_into(p, &mut scratch);
    check_gradient_fd_with(value, &g, x, h)
}

/// Exhaustive grid minimizer of `⟨y,u⟩ + ‖u − x‖²/(2c) + X(u)` over the box of
/// `term`, for dimension 1 or 2.
pub fn prox_bruteforce(
    term: &CompositeTerm,
    x: &[f64],
    y: &[f64],
    c: f64,
    grid_step: f64,
) -> Result<Vec<f64>> {
    let bounds = term
        .bounds()
        .ok_or_else(|| invalid("brute-force prox needs a bounded term; use the closed form"))?;
    if !(c > 0.0) || !(grid_step > 0.0) {
        return Err(invalid("brute-force prox needs c > 0 and grid_step > 0"));
    }
    let dim = x.len();
    if !(1..=2).contains(&dim) || y.len() != dim || bounds.dim() != dim {
        return Err(invalid("brute-force prox supports dimensions 1 and 2 only"));
    }
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let (lo, hi) = (bounds.lo()[i], bounds.hi()[i]);
            let steps = libm::floor((hi - lo) / grid_step) as usize;
            let mut pts: Vec<f64> = (0..=steps).map(|j| lo + j as f64 * grid_step).collect();
            if pts.last().is_some_and(|&p| p < hi) {
                pts.push(hi);
            }
            pts
        })
        .collect();
    let objective = |u: &[f64]| -> f64 {
        let x_val = term.value(u).finite().unwrap_or(f64::INFINITY);
        linalg::dot(y, u) + linalg::dist_sq(u, x) / (2.0 * c) + x_val
    };
    let mut best = vec![0.0; dim];
    let mut best_val = f64::INFINITY;
    let mut u = vec![0.0; dim];
    let second = if dim == 2 { axes[1].len() } else { 1 };
    for &a in &axes[0] {
        u[0] = a;
        for j in 0..second {
            if dim == 2 {
                u[1] = axes[1][j];
            }
            let v = objective(&u);
            if v < best_val {
                best_val = v;
                best.copy_from_slice(&u);
            }
        }
    }
    Ok(best)
}

fn optimum(problem: &SmoothProblem) -> Result<f64> {
    problem.psi_star().ok_or_else(|| {
        invalid(format!(
            "problem '{}' has no known optimal value",
            problem.name()
        ))
    })
}

fn minimizer(problem: &SmoothProblem) -> Result<&[f64]> {
    problem.x_star().ok_or_else(|| {
        invalid(format!(
            "problem '{}' has no known minimizer",
            problem.name()
        ))
    })
}

fn context_of(trace: &RunTrace, problem: &SmoothProblem) -> BoundContext {
    BoundContext {
        problem: problem.name().to_string(),
        algorithm: trace.algorithm.to_string(),
        policy: None,
        horizon: trace.horizon,
        replications: 1,
    }
}

fn require_full(trace: &RunTrace) -> Result<usize> {
    if trace.records.len() != trace.horizon || trace.horizon == 0 {
        return Err(invalid(
            "deterministic bounds need a complete trace of N iterations",
        ));
    }
    Ok(trace.horizon)
}

/// `Σ_k λ_k C_k` from the steps recorded in a trace.
pub fn sum_lambda_c(trace: &RunTrace, l_psi: f64) -> Result<f64> {
    let n = require_full(trace)?;
    let gamma: Vec<f64> = trace
        .records
        .iter()
        .map(|r| {
            r.gamma
                .ok_or_else(|| invalid("trace does not carry Gamma_k"))
        })
        .collect::<Result<_>>()?;
    let mut suffix = 0.0;
    let mut total = 0.0;
    for i in (0..n).rev() {
        suffix += gamma[i];
        let r = &trace.records[i];
        let d = r.lambda - r.beta;
        let c =
            1.0 - l_psi * r.lambda - l_psi * d * d / (2.0 * r.alpha * gamma[i] * r.lambda) * suffix;
        total += r.lambda * c;
    }
    Ok(total)
}

/// Checks a deterministic smooth AG run against `bound_id`, using the
/// problem's known `Ψ*` and `x*`.
pub fn bound_deterministic(
    trace: &RunTrace,
    problem: &SmoothProblem,
    bound_id: BoundId,
) -> Result<BoundReport> {
    bound_deterministic_inner(trace, problem, bound_id, None)
}

/// As [`bound_deterministic`] with `Ψ*` replaced by a surrogate (the best value
/// observed); the report is flagged. Bounds needing `x*` still need the true one.
pub fn bound_deterministic_surrogate(
    trace: &RunTrace,
    problem: &SmoothProblem,
    bound_id: BoundId,
    psi_star_surrogate: f64,
) -> Result<BoundReport> {
    bound_deterministic_inner(trace, problem, bound_id, Some(psi_star_surrogate))
}

fn bound_deterministic_inner(
    trace: &RunTrace,
    problem: &SmoothProblem,
    bound_id: BoundId,
    surrogate: Option<f64>,
) -> Result<BoundReport> {
    let n = require_full(trace)? as f64;
    let l = problem.l_psi();
    let psi_star = match surrogate {
        Some(s) => s,
        None => optimum(problem)?,
    };
    let best_grad = trace.best_grad_norm_sq().map_or(f64::INFINITY, |(_, v)| v);
    let (lhs, rhs) = match bound_id {
        BoundId::Thm1a => {
            let gap = problem.value(&trace.x0)? - psi_star;
            let s = sum_lambda_c(trace, l)?;
            if s <= 0.0 {
                return Err(invalid("sum of lambda_k C_k is not positive"));
            }
            (best_grad, gap / s)
        }
        BoundId::Cor2a => {
            let gap = problem.value(&trace.x0)? - psi_star;
            (best_grad, 6.0 * l * gap / n)
        }
        BoundId::Cor2bGrad => {
            let d2 = linalg::dist_sq(&trace.x0, minimizer(problem)?);
            (best_grad, 96.0 * l * l * d2 / (n * n * (n + 1.0)))
        }
        BoundId::Cor2bFun => {
            let d2 = linalg::dist_sq(&trace.x0, minimizer(problem)?);
            let last = trace.last().expect("non-empty trace");
            (last.psi_ag - psi_star, 4.0 * l * d2 / (n * (n + 1.0)))
        }
        other => {
            return Err(invalid(format!(
                "{other} is not a deterministic smooth bound"
            )))
        }
    };
    let mut report = BoundReport::new(bound_id, lhs, rhs, context_of(trace, problem));
    report.surrogate = surrogate.is_some();
    Ok(report)
}

/// Minimizer and optimal value of `Φ = Ψ + X` when they are available in
/// closed form: separable quadratics (coordinatewise clip of soft-thresholding),
/// or a known minimizer of `Ψ` that also minimizes `X`.
pub fn composite_optimum(problem: &SmoothProblem, term: &CompositeTerm) -> Option<(Vec<f64>, f64)> {
    if let Some((diag, b)) = problem.separable_quadratic() {
        return separable_quadratic_optimum(diag, b, term);
    }
    let x = problem.x_star()?;
    let psi = problem.psi_star()?;
    let minimizes_x = match term {
        CompositeTerm::Zero => true,
        CompositeTerm::BoxIndicator(b) => b.contains(x),
        CompositeTerm::BoxPlusL1 { bounds, weight } => {
            bounds.contains(x) && (*weight == 0.0 || x.iter().all(|v| *v == 0.0))
        }
    };
    if !minimizes_x {
        return None;
    }
    Some((x.to_vec(), psi + term.value(x).finite()?))
}

fn composite_m(problem_l_f: f64, term: &CompositeTerm) -> Result<f64> {
    match term.bound_m() {
        Some(m) => Ok(m),
        None if problem_l_f == 0.0 => Ok(0.0),
        None => Err(invalid("bound needs M but the composite term is unbounded")),
    }
}

/// Checks a deterministic composite AG run against `bound_id`.
pub fn bound_composite(
    trace: &RunTrace,
    problem: &SmoothProblem,
    term: &CompositeTerm,
    bound_id: BoundId,
) -> Result<BoundReport> {
    let n = require_full(trace)? as f64;
    let l = problem.l_psi();
    let l_f = problem.l_f();
    let (x_star, phi_star) = composite_optimum(problem, term)
        .ok_or_else(|| invalid("composite optimum is not known for this problem and term"))?;
    let d2 = linalg::dist_sq(&trace.x0, &x_star);
    let (lhs, rhs) = match bound_id {
        BoundId::Cor3Gradmap => {
            let m = composite_m(l_f, term)?;
            let lhs = trace
                .best_gradmap_norm_sq()
                .ok_or_else(|| invalid("trace has no gradient-mapping norms"))?
                .1;
            let rhs = 24.0
                * l
                * (4.0 * l * d2 / (n * n * (n + 1.0))
                    + l_f / n * (linalg::norm_sq(&x_star) + 2.0 * m * m));
            (lhs, rhs)
        }
        BoundId::Cor3Fun => {
            if l_f != 0.0 {
                return Err(invalid("cor3_fun requires L_f = 0"));
            }
            let last = trace.last().expect("non-empty trace");
            let phi = last
                .phi_ag
                .ok_or_else(|| invalid("trace has no composite values"))?;
            (phi - phi_star, 4.0 * l * d2 / (n * (n + 1.0)))
        }
        other => {
            return Err(invalid(format!(
                "{other} is not a deterministic composite bound"
            )))
        }
    };
    Ok(BoundReport::new(
        bound_id,
        lhs,
        rhs,
        context_of(trace, problem),
    ))
}

/// Mean and standard error of a per-replication metric.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub replications: usize,
    pub mean: f64,
    /// Sample standard deviation over `√replications`; `0` for one sample.
    pub stderr: f64,
    pub samples: Option<Vec<f64>>,
}

impl McSummary {
    /// Summary of `samples`. The samples are sorted before summation, so the
    /// result does not depend on their order.
    pub fn from_samples(samples: &[f64], retain: bool) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("Monte-Carlo summary needs at least one sample"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let stderr = if sorted.len() < 2 {
            0.0
        } else {
            let mut dev: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
            dev.sort_by(f64::total_cmp);
            libm::sqrt(dev.iter().sum::<f64>() / (n - 1.0)) / libm::sqrt(n)
        };
        Ok(Self {
            replications: sorted.len(),
            mean,
            stderr,
            samples: retain.then(|| samples.to_vec()),
        })
    }

    /// `mean + 2·stderr`, the conservative estimate compared against bounds.
    pub fn upper(&self) -> f64 {
        self.mean + 2.0 * self.stderr
    }
}

/// Terminal metric extracted from each replication by [`aggregate_monte_carlo`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricSelector {
    /// `‖∇Ψ(x^md_R)‖²`.
    GradNormSq,
    /// `‖G(x^md_R, ∇Ψ(x^md_R), β_R)‖²`.
    GradmapNormSq,
    /// `Ψ(x^ag_R) − Ψ*`.
    PsiGap { psi_star: f64 },
    /// `Φ(x^ag_R) − Φ*`.
    PhiGap { phi_star: f64 },
    /// Number of oracle calls of the run.
    OracleCalls,
}

impl MetricSelector {
    pub fn extract(&self, trace: &RunTrace) -> Result<f64> {
        let last = trace.last().ok_or_else(|| invalid("empty trace"))?;
        let missing = |what: &str| invalid(format!("trace is missing the metric {what}"));
        Ok(match *self {
            MetricSelector::GradNormSq => last.grad_norm_md * last.grad_norm_md,
            MetricSelector::GradmapNormSq => {
                let g = last.gradmap_norm.ok_or_else(|| missing("gradmap_norm"))?;
                g * g
            }
            MetricSelector::PsiGap { psi_star } => last.psi_ag - psi_star,
            MetricSelector::PhiGap { phi_star } => {
                last.phi_ag.ok_or_else(|| missing("phi_ag"))? - phi_star
            }
            MetricSelector::OracleCalls => trace.oracle_calls as f64,
        })
    }
}

/// Summary of the terminal metric over a set of replications.
pub fn aggregate_monte_carlo(traces: &[RunTrace], metric: MetricSelector) -> Result<McSummary> {
    let samples: Vec<f64> = traces
        .iter()
        .map(|t| metric.extract(t))
        .collect::<Result<_>>()?;
    McSummary::from_samples(&samples, true)
}

/// Run parameters entering the stochastic bounds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StochasticBoundParams {
    pub l_psi: f64,
    pub l_f: f64,
    pub sigma: f64,
    pub horizon: usize,
    /// `Ψ(x₀) − Ψ*`.
    pub psi_gap0: Option<f64>,
    /// `‖x₀ − x*‖`.
    pub dist0: Option<f64>,
    pub d_tilde: Option<f64>,
    /// `‖x*‖²` (composite bounds).
    pub x_star_norm_sq: Option<f64>,
    /// `M` (composite bounds).
    pub bound_m: Option<f64>,
    /// `m_1..m_N` (arbitrary mini-batch bounds).
    pub batch_sizes: Option<Vec<u64>>,
    pub context: BoundContext,
}

fn need(v: Option<f64>, what: &str, id: BoundId) -> Result<f64> {
    v.ok_or_else(|| invalid(format!("{id} needs {what}")))
}

/// Right-hand side of a stochastic bound.
pub fn stochastic_rhs(params: &StochasticBoundParams, bound_id: BoundId) -> Result<f64> {
    let p = params;
    if p.horizon == 0 {
        return Err(invalid("horizon N must be at least 1"));
    }
    let n = p.horizon as f64;
    let l = p.l_psi;
    let sigma = p.sigma;
    let id = bound_id;
    let composite_lf = |id: BoundId| -> Result<()> {
        if p.l_f != 0.0 {
            return Err(invalid(format!("{id} requires L_f = 0")));
        }
        Ok(())
    };
    let d_tilde = || -> Result<f64> {
        let d = need(p.d_tilde, "D_tilde", id)?;
        if d > 0.0 {
            Ok(d)
        } else {
            Err(invalid(format!("{id} needs D_tilde > 0")))
        }
    };
    let nonconvex_extra = || -> Result<f64> {
        if p.l_f == 0.0 {
            return Ok(0.0);
        }
        let m = need(p.bound_m, "M", id)?;
        Ok(need(p.x_star_norm_sq, "|x*|^2", id)? + 2.0 * m * m)
    };
    let batches = || -> Result<&[u64]> {
        let b = p
            .batch_sizes
            .as_deref()
            .ok_or_else(|| invalid(format!("{id} needs m_k")))?;
        if b.len() != p.horizon || b.contains(&0) {
            return Err(invalid(format!("{id} needs N positive batch sizes")));
        }
        Ok(b)
    };
    Ok(match bound_id {
        BoundId::Cor4a => {
            let gap = need(p.psi_gap0, "Psi(x0) - Psi*", id)?;
            let d = d_tilde()?;
            21.0 * l * gap / (4.0 * n) + 2.0 * sigma / libm::sqrt(n) * (gap / d + l * d)
        }
        BoundId::Cor4bGrad => {
            let d2 = libm::pow(need(p.dist0, "|x0 - x*|", id)?, 2.0);
            let d = d_tilde()?;
            96.0 * l * l * d2 / (n * n * n)
                + libm::sqrt(l) * libm::pow(sigma, 1.5) / libm::pow(n, 0.75)
                    * (12.0 * d2 / libm::pow(d, 1.5) + 2.0 * libm::sqrt(d))
        }
        BoundId::Cor4bFun => {
            let d2 = libm::pow(need(p.dist0, "|x0 - x*|", id)?, 2.0);
            let d = d_tilde()?;
            48.0 * l * d2 / (n * n) + 12.0 * sigma / libm::sqrt(n) * (d2 / d + d)
        }
        BoundId::Cor5Gradmap => {
            let d2 = libm::pow(need(p.dist0, "|x0 - x*|", id)?, 2.0);
            let b = batches()?;
            let s: f64 = b
                .iter()
                .enumerate()
                .map(|(i, &m)| libm::pow((i + 1) as f64, 2.0) / m as f64)
                .sum();
            96.0 * l
                * (4.0 * l * d2 / (n * n * (n + 1.0))
                    + p.l_f / n * nonconvex_extra()?
                    + 3.0 * sigma * sigma / (l * n * n * n) * s)
        }
        BoundId::Cor5Fun => {
            composite_lf(id)?;
            let d2 = libm::pow(need(p.dist0, "|x0 - x*|", id)?, 2.0);
            let b = batches()?;
            let mut inner = 0.0;
            let mut outer = 0.0;
            for (i, &m) in b.iter().enumerate() {
                inner += libm::pow((i + 1) as f64, 2.0) / m as f64;
                outer += inner;
            }
            12.0 * l * d2 / (n * (n + 1.0)) + 7.0 * sigma * sigma / (l * n * n * n) * outer
        }
        BoundId::Cor6 => {
            let d2 = libm::pow(need(p.dist0, "|x0 - x*|", id)?, 2.0);
            let dt = d_tilde()?;
            let extra = if p.l_f == 0.0 {
                0.0
            } else {
                nonconvex_extra()? + 3.0 * dt * dt
            };
            96.0 * l * (4.0 * l * (d2 + dt * dt) / (n * n * n) + p.l_f * extra / n)
        }
        BoundId::Cor6Fun => {
            composite_lf(id)?;
            let d2 = libm::pow(need(p.dist0, "|x0 - x*|", id)?, 2.0);
            let dt = d_tilde()?;
            l / (n * n) * (12.0 * d2 + 7.0 * dt * dt)
        }
        BoundId::Cor7 => {
            let d2 = libm::pow(need(p.dist0, "|x0 - x*|", id)?, 2.0);
            let dt = d_tilde()?;
            96.0 * l
                * (4.0 * l * d2 / (n * n * n) + (p.l_f * nonconvex_extra()? + 3.0 * dt * dt) / n)
        }
        other => return Err(invalid(format!("{other} is not a stochastic bound"))),
    })
}

/// Minimum number of replications accepted by [`bound_stochastic`].
pub const MIN_REPLICATIONS: usize = 200;

/// Compares `mean + 2·stderr` of `summary` against the bound.
pub fn bound_stochastic(
    summary: &McSummary,
    params: &StochasticBoundParams,
    bound_id: BoundId,
) -> Result<BoundReport> {
    if summary.replications < MIN_REPLICATIONS {
        return Err(invalid(format!(
            "stochastic bounds need at least {MIN_REPLICATIONS} replications, got {}",
            summary.replications
        )));
    }
    let rhs = stochastic_rhs(params, bound_id)?;
    let mut context = params.context.clone();
    context.replications = summary.replications;
    context.horizon = params.horizon;
    Ok(BoundReport::new(bound_id, summary.upper(), rhs, context))
}

/// Budget check `Σ_{k=1}^N m_k ≤ N + σ²N²/(L_f L_Ψ D̃²)` for
/// horizon-dependent mini-batches. Returns `(total, budget)`.
pub fn oracle_budget(
    total_calls: u64,
    n: usize,
    l_psi: f64,
    l_f: f64,
    sigma: f64,
    d_tilde: f64,
) -> Result<(u64, f64)> {
    if !(l_f > 0.0) {
        return Err(invalid("the oracle budget needs L_f > 0"));
    }
    let nf = n as f64;
    Ok((
        total_calls,
        nf + sigma * sigma * nf * nf / (l_f * l_psi * d_tilde * d_tilde),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailReport {
    pub lambda: f64,
    pub frequency: f64,
    /// Binomial standard error `√(f(1 − f)/n)`.
    pub stderr: f64,
    /// `1/λ`.
    pub limit: f64,
    pub pass: bool,
}

/// Empirical `Prob{sample ≥ λU}` for each `λ`, passing when
/// `frequency − 2·stderr ≤ 1/λ`.
pub fn markov_tail_check(samples: &[f64], u_n: f64, lambdas: &[f64]) -> Result<Vec<TailReport>> {
    if samples.is_empty() {
        return Err(invalid("Markov tail check needs samples"));
    }
    if !(u_n > 0.0) {
        return Err(invalid("Markov tail check needs a positive scale U_N"));
    }
    let n = samples.len() as f64;
    lambdas
        .iter()
        .map(|&lambda| {
            if !(lambda > 1.0) {
                return Err(invalid(format!("tail levels must exceed 1, got {lambda}")));
            }
            let hits = samples.iter().filter(|&&s| s >= lambda * u_n).count() as f64;
            let frequency = hits / n;
            let stderr = libm::sqrt(frequency * (1.0 - frequency) / n);
            let limit = 1.0 / lambda;
            Ok(TailReport {
                lambda,
                frequency,
                stderr,
                limit,
                pass: frequency - 2.0 * stderr <= limit,
            })
        })
        .collect()
}

/// Least-squares slope of `log(metric)` against `log(N)`.
pub fn rate_slope(series: &[(f64, f64)]) -> Result<f64> {
    if series.len() < 4 {
        return Err(invalid("rate fit needs at least 4 points"));
    }
    if series.iter().any(|&(n, m)| !(n > 0.0) || !(m > 0.0)) {
        return Err(invalid("rate fit needs positive N and metric values"));
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .map(|&(n, m)| (libm::log(n), libm::log(m)))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(invalid("rate fit needs at least two distinct N"));
    }
    Ok(sxy / sxx)
}
