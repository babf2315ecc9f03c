//! Stepsize policies `(α_k, β_k, λ_k)` and the quantities derived from them:
//! `Γ_k`, the descent coefficients `C_k`, validity checks, the termination pmf
//! of the randomized methods and mini-batch sizes.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{invalid, precondition, Result};

/// Relative slack used when comparing stepsize quantities (`≤` and monotonicity).
const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Policy {
    DetNonconvex,
    DetConvex,
    StoNonconvex,
    StoConvex,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::DetNonconvex,
        Policy::DetConvex,
        Policy::StoNonconvex,
        Policy::StoConvex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::DetNonconvex => "det_nonconvex",
            Policy::DetConvex => "det_convex",
            Policy::StoNonconvex => "sto_nonconvex",
            Policy::StoConvex => "sto_convex",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| invalid(format!("unknown policy '{name}'")))
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Policy::StoNonconvex | Policy::StoConvex)
    }

    pub fn is_convex(self) -> bool {
        matches!(self, Policy::DetConvex | Policy::StoConvex)
    }

    /// Deterministic policy with the same convexity class.
    pub fn deterministic_counterpart(self) -> Self {
        match self {
            Policy::StoNonconvex => Policy::DetNonconvex,
            Policy::StoConvex => Policy::DetConvex,
            p => p,
        }
    }

    pub fn validation_mode(self) -> ScheduleMode {
        match self {
            Policy::DetNonconvex | Policy::StoNonconvex => ScheduleMode::Nonconvex,
            Policy::DetConvex => ScheduleMode::ConvexDet,
            Policy::StoConvex => ScheduleMode::ConvexSto,
        }
    }

    pub fn pmf_mode(self) -> PmfMode {
        if self.is_convex() {
            PmfMode::Convex
        } else {
            PmfMode::Nonconvex
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Condition set checked by [`StepSchedule::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScheduleMode {
    /// `C_k > 0` for all `k ≤ N`.
    Nonconvex,
    /// `α_kλ_k ≤ β_k < 1/L_Ψ` and `α_k/(λ_kΓ_k)` nonincreasing.
    ConvexDet,
    /// `α_kλ_k ≤ L_Ψβ_k²`, `β_k < 1/L_Ψ` and `α_k/(λ_kΓ_k)` nonincreasing.
    ConvexSto,
}

/// Weighting used by [`StepSchedule::termination_pmf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PmfMode {
    /// `p_k ∝ λ_k C_k`.
    Nonconvex,
    /// `p_k ∝ Γ_k⁻¹ β_k (1 − L_Ψβ_k)`.
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTriple {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Policy(Policy),
    Explicit(Vec<StepTriple>),
}

/// Generator of the stepsizes `(α_k, β_k, λ_k)`.
///
/// Either one of the four standard policies (all with `α_k = 2/(k+1)`) or an
/// explicit table, which allows arbitrary `α`, `β`, `λ` sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    kind: Kind,
    l_psi: f64,
    sigma: f64,
    d_tilde: Option<f64>,
    horizon: Option<usize>,
    lambda_choice: f64,
}

impl StepSchedule {
    pub fn from_policy(policy: Policy, l_psi: f64) -> Self {
        Self {
            kind: Kind::Policy(policy),
            l_psi,
            sigma: 0.0,
            d_tilde: None,
            horizon: None,
            lambda_choice: 1.0,
        }
    }

    /// Explicit table of triples; entry `k − 1` holds iteration `k`.
    pub fn explicit(l_psi: f64, steps: Vec<StepTriple>) -> Result<Self> {
        if steps.is_empty() {
            return Err(invalid("explicit schedule must contain at least one step"));
        }
        let n = steps.len();
        let s = Self {
            kind: Kind::Explicit(steps),
            l_psi,
            sigma: 0.0,
            d_tilde: None,
            horizon: Some(n),
            lambda_choice: 1.0,
        };
        s.check()?;
        Ok(s)
    }

    /// Explicit schedule of length `n` with `steps(k)` for iteration `k`.
    pub fn tabulate(l_psi: f64, n: usize, steps: impl Fn(usize) -> StepTriple) -> Result<Self> {
        Self::explicit(l_psi, (1..=n).map(steps).collect())
    }

    /// Noise level and distance estimate `D̃` consumed by the stochastic policies.
    pub fn with_noise(mut self, sigma: f64, d_tilde: f64) -> Self {
        self.sigma = sigma;
        self.d_tilde = Some(d_tilde);
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_d_tilde(mut self, d_tilde: f64) -> Self {
        self.d_tilde = Some(d_tilde);
        self
    }

    pub fn with_horizon(mut self, n: usize) -> Self {
        self.horizon = Some(n);
        self
    }

    /// Position of `λ_k` inside `[β_k, (1 + α_k/4)β_k]` for the nonconvex policies.
    pub fn with_lambda_choice(mut self, choice: f64) -> Self {
        self.lambda_choice = choice;
        self
    }

    /// Copy with the horizon set to `n` unless one was given explicitly.
    pub fn resolved_for(&self, n: usize) -> Self {
        let mut s = self.clone();
        if s.horizon.is_none() {
            s.horizon = Some(n);
        }
        s
    }

    /// Policy as configured, `None` for explicit tables.
    pub fn policy(&self) -> Option<Policy> {
        match self.kind {
            Kind::Policy(p) => Some(p),
            Kind::Explicit(_) => None,
        }
    }

    /// Policy actually used to produce steps. A stochastic policy with `σ = 0`
    /// falls back to its deterministic counterpart.
    pub fn effective_policy(&self) -> Option<Policy> {
        self.policy().map(|p| {
            if p.is_stochastic() && self.sigma == 0.0 {
                p.deterministic_counterpart()
            } else {
                p
            }
        })
    }

    pub fn l_psi(&self) -> f64 {
        self.l_psi
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn d_tilde(&self) -> Option<f64> {
        self.d_tilde
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    pub fn lambda_choice(&self) -> f64 {
        self.lambda_choice
    }

    /// Checks the parameters without generating any step.
    pub fn check(&self) -> Result<()> {
        if !(self.l_psi.is_finite() && self.l_psi > 0.0) {
            return Err(invalid(format!(
                "L_Psi must be positive and finite, got {}",
                self.l_psi
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid(format!(
                "sigma must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_choice) {
            return Err(invalid(format!(
                "lambda_choice must lie in [0, 1], got {}",
                self.lambda_choice
            )));
        }
        if self.horizon == Some(0) {
            return Err(invalid("horizon N must be at least 1"));
        }
        match &self.kind {
            Kind::Policy(_) => {
                if self.effective_policy().is_some_and(Policy::is_stochastic) {
                    match self.d_tilde {
                        Some(d) if d.is_finite() && d > 0.0 => {}
                        Some(d) => {
                            return Err(invalid(format!("D_tilde must be positive, got {d}")))
                        }
                        None => return Err(invalid("stochastic policy requires D_tilde")),
                    }
                    if self.horizon.is_none() {
                        return Err(invalid("stochastic policy requires the horizon N"));
                    }
                }
            }
            Kind::Explicit(steps) => {
                for (i, s) in steps.iter().enumerate() {
                    let k = i + 1;
                    let alpha_ok = if k == 1 {
                        s.alpha == 1.0
                    } else {
                        s.alpha > 0.0 && s.alpha < 1.0
                    };
                    if !alpha_ok {
                        return Err(invalid(format!(
                            "alpha_{k} = {} violates alpha_1 = 1, alpha_k in (0, 1)",
                            s.alpha
                        )));
                    }
                    if !(s.beta > 0.0
                        && s.beta.is_finite()
                        && s.lambda > 0.0
                        && s.lambda.is_finite())
                    {
                        return Err(invalid(format!("beta_{k} and lambda_{k} must be positive")));
                    }
                }
            }
        }
        Ok(())
    }

    /// `(α_k, β_k, λ_k)`.
    pub fn step_triple(&self, k: usize) -> Result<StepTriple> {
        if k < 1 {
            return Err(invalid("iteration index k must be at least 1"));
        }
        self.check()?;
        self.triple_unchecked(k)
    }

    fn triple_unchecked(&self, k: usize) -> Result<StepTriple> {
        let policy = match &self.kind {
            Kind::Explicit(steps) => {
                return steps.get(k - 1).copied().ok_or_else(|| {
                    invalid(format!(
                        "explicit schedule has {} steps, asked for k = {k}",
                        steps.len()
                    ))
                })
            }
            Kind::Policy(_) => self.effective_policy().expect("policy schedule"),
        };
        let l = self.l_psi;
        let kf = k as f64;
        let alpha = 2.0 / (kf + 1.0);
        let interval = |beta: f64| beta * (1.0 + self.lambda_choice * alpha / 4.0);
        let (beta, lambda) = match policy {
            Policy::DetNonconvex => {
                let beta = 1.0 / (2.0 * l);
                (beta, interval(beta))
            }
            Policy::DetConvex => {
                let beta = 1.0 / (2.0 * l);
                (beta, kf * beta / 2.0)
            }
            Policy::StoNonconvex => {
                let (d, n) = self.noise_params();
                let beta = f64::min(8.0 / (21.0 * l), d / (self.sigma * libm::sqrt(n)));
                (beta, interval(beta))
            }
            Policy::StoConvex => {
                let (d, n) = self.noise_params();
                let beta = f64::min(
                    1.0 / (2.0 * l),
                    libm::pow(d * d / (l * l * self.sigma * self.sigma * n * n * n), 0.25),
                );
                (beta, kf * l * beta * beta / 2.0)
            }
        };
        Ok(StepTriple {
            alpha,
            beta,
            lambda,
        })
    }

    fn noise_params(&self) -> (f64, f64) {
        (
            self.d_tilde.unwrap_or(f64::NAN),
            self.horizon.unwrap_or(0) as f64,
        )
    }

    /// Triples for `k = 1..=n`.
    pub fn triples(&self, n: usize) -> Result<Vec<StepTriple>> {
        self.check()?;
        (1..=n).map(|k| self.triple_unchecked(k)).collect()
    }

    pub fn gamma_table(&self, n: usize) -> Result<GammaTable> {
        Ok(GammaTable::from_alphas(
            self.triples(n)?.iter().map(|t| t.alpha),
        ))
    }

    /// `C_k = 1 − L_Ψλ_k − L_Ψ(λ_k − β_k)²/(2α_kΓ_kλ_k) · Σ_{τ=k}^N Γ_τ`.
    pub fn c_coeff(&self, k: usize, n: usize) -> Result<f64> {
        if k < 1 || k > n {
            return Err(invalid(format!(
                "C_k needs 1 <= k <= N, got k = {k}, N = {n}"
            )));
        }
        Ok(self.c_coefficients(n)?[k - 1])
    }

    pub fn c_coefficients(&self, n: usize) -> Result<Vec<f64>> {
        let steps = self.triples(n)?;
        let gamma = GammaTable::from_alphas(steps.iter().map(|t| t.alpha));
        Ok(c_from(&steps, &gamma, self.l_psi))
    }

    /// Checks the conditions of `mode` for `k = 1..=n`. Violations are
    /// reported, never returned as errors.
    pub fn validate(&self, n: usize, mode: ScheduleMode) -> Result<ValidityReport> {
        let steps = self.triples(n)?;
        let gamma = GammaTable::from_alphas(steps.iter().map(|t| t.alpha));
        let l = self.l_psi;
        let mut checks = Vec::new();
        let first = |pred: &dyn Fn(usize) -> bool| (1..=n).find(|&k| !pred(k));
        let s = |k: usize| steps[k - 1];

        match mode {
            ScheduleMode::Nonconvex => {
                let c = c_from(&steps, &gamma, l);
                checks.push(ConditionCheck::new("C_k > 0", first(&|k| c[k - 1] > 0.0)));
            }
            ScheduleMode::ConvexDet | ScheduleMode::ConvexSto => {
                let (name, cap): (&'static str, &dyn Fn(usize) -> f64) =
                    if mode == ScheduleMode::ConvexDet {
                        ("alpha_k*lambda_k <= beta_k", &|k| s(k).beta)
                    } else {
                        ("alpha_k*lambda_k <= L_Psi*beta_k^2", &|k| {
                            l * s(k).beta * s(k).beta
                        })
                    };
                checks.push(ConditionCheck::new(
                    name,
                    first(&|k| leq(s(k).alpha * s(k).lambda, cap(k))),
                ));
                checks.push(ConditionCheck::new(
                    "beta_k < 1/L_Psi",
                    first(&|k| s(k).beta * l < 1.0),
                ));
                let ratio = |k: usize| s(k).alpha / (s(k).lambda * gamma.gamma(k));
                checks.push(ConditionCheck::new(
                    "alpha_k/(lambda_k*Gamma_k) nonincreasing",
                    first(&|k| k == 1 || leq(ratio(k), ratio(k - 1))),
                ));
            }
        }
        Ok(ValidityReport {
            mode,
            horizon: n,
            checks,
        })
    }

    /// Probability of stopping at iteration `k = 1..=n`.
    pub fn termination_pmf(&self, n: usize, mode: PmfMode) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(invalid("horizon N must be at least 1"));
        }
        let steps = self.triples(n)?;
        let gamma = GammaTable::from_alphas(steps.iter().map(|t| t.alpha));
        let l = self.l_psi;
        let weights: Vec<f64> = match mode {
            PmfMode::Nonconvex => {
                let c = c_from(&steps, &gamma, l);
                if let Some(k) = (1..=n).find(|&k| c[k - 1] <= 0.0) {
                    return Err(precondition(format!(
                        "C_{k} = {} is not positive; nonconvex termination pmf undefined",
                        c[k - 1]
                    )));
                }
                steps.iter().zip(&c).map(|(s, c)| s.lambda * c).collect()
            }
            PmfMode::Convex => {
                let w: Vec<f64> = steps
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s.beta * (1.0 - l * s.beta) / gamma.gamma(i + 1))
                    .collect();
                if let Some(i) = w.iter().position(|&w| w <= 0.0) {
                    return Err(precondition(format!(
                        "beta_{} = {} gives a nonpositive weight (needs beta_k < 1/L_Psi)",
                        i + 1,
                        steps[i].beta
                    )));
                }
                w
            }
        };
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }
}

fn leq(a: f64, b: f64) -> bool {
    a <= b + REL_TOL * f64::max(a.abs(), b.abs())
}

fn c_from(steps: &[StepTriple], gamma: &GammaTable, l: f64) -> Vec<f64> {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let k = i + 1;
            let d = s.lambda - s.beta;
            1.0 - l * s.lambda
                - l * d * d / (2.0 * s.alpha * gamma.gamma(k) * s.lambda) * gamma.suffix_sum(k)
        })
        .collect()
}

/// `Γ_1 = 1`, `Γ_k = (1 − α_k)Γ_{k−1}` and the suffix sums `Σ_{τ=k}^N Γ_τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTable {
    pub values: Vec<f64>,
    pub suffix_sums: Vec<f64>,
}

impl GammaTable {
    /// Builds the table from `α_1..α_N`. `α_1` does not enter the recursion.
    pub fn from_alphas(alphas: impl IntoIterator<Item = f64>) -> Self {
        let mut values = Vec::new();
        for (i, a) in alphas.into_iter().enumerate() {
            let g = if i == 0 {
                1.0
            } else {
                (1.0 - a) * values[i - 1]
            };
            values.push(g);
        }
        let mut suffix_sums = values.clone();
        for i in (0..suffix_sums.len().saturating_sub(1)).rev() {
            suffix_sums[i] += suffix_sums[i + 1];
        }
        Self {
            values,
            suffix_sums,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Γ_k`, 1-based.
    pub fn gamma(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    /// `Σ_{τ=k}^N Γ_τ`, 1-based.
    pub fn suffix_sum(&self, k: usize) -> f64 {
        self.suffix_sums[k - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub holds: bool,
    pub first_violation: Option<usize>,
}

impl ConditionCheck {
    fn new(name: &'static str, first_violation: Option<usize>) -> Self {
        Self {
            name,
            holds: first_violation.is_none(),
            first_violation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityReport {
    pub mode: ScheduleMode,
    pub horizon: usize,
    pub checks: Vec<ConditionCheck>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn first_failure(&self) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| !c.holds)
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.first_failure() {
            None => write!(f, "schedule valid for N = {}", self.horizon),
            Some(c) => write!(
                f,
                "condition '{}' fails at k = {}",
                c.name,
                c.first_violation.unwrap_or(0)
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BatchVariant {
    /// `m_k = ⌈σ²/(L_Ψ D̃²) · min{k/L_f, k²N/L_Ψ}⌉`.
    HorizonDependent,
    /// `m_k = ⌈σ²k/(L_Ψ D̃²)⌉`.
    HorizonFree,
}

/// Mini-batch size for iteration `k`. `L_f = 0` selects the `k²N/L_Ψ` branch.
pub fn minibatch_size(
    k: usize,
    n: usize,
    l_psi: f64,
    l_f: f64,
    sigma: f64,
    d_tilde: f64,
    variant: BatchVariant,
) -> Result<u64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!(
            "mini-batch size needs sigma > 0, got {sigma}"
        )));
    }
    if !(d_tilde > 0.0 && d_tilde.is_finite()) {
        return Err(invalid(format!(
            "mini-batch size needs D_tilde > 0, got {d_tilde}"
        )));
    }
    if !(l_psi > 0.0 && l_psi.is_finite()) || !(l_f >= 0.0 && l_f.is_finite()) {
        return Err(invalid("mini-batch size needs L_Psi > 0 and L_f >= 0"));
    }
    if k < 1 {
        return Err(invalid("iteration index k must be at least 1"));
    }
    let kf = k as f64;
    let scale = sigma * sigma / (l_psi * d_tilde * d_tilde);
    let raw = match variant {
        BatchVariant::HorizonDependent => {
            if n < 1 {
                return Err(invalid("horizon-dependent mini-batch needs N >= 1"));
            }
            let second = kf * kf * n as f64 / l_psi;
            let inner = if l_f > 0.0 {
                f64::min(kf / l_f, second)
            } else {
                second
            };
            scale * inner
        }
        BatchVariant::HorizonFree => scale * kf,
    };
    let m = libm::ceil(raw);
    if m >= u64::MAX as f64 {
        return Err(invalid(format!("mini-batch size {raw} overflows")));
    }
    Ok((m as u64).max(1))
}

/// `D̃` that minimizes the stochastic bounds: `√((Ψ(x₀) − Ψ*)/L_Ψ)` for
/// `sto_nonconvex` and `‖x₀ − x*‖` for `sto_convex`. `None` for the
/// deterministic policies or when the needed optimum data is missing.
pub fn default_d_tilde(
    policy: Policy,
    l_psi: f64,
    psi_gap0: Option<f64>,
    dist0: Option<f64>,
) -> Option<f64> {
    match policy {
        Policy::StoNonconvex => psi_gap0.map(|g| libm::sqrt(g.max(0.0) / l_psi)),
        Policy::StoConvex => dist0,
        _ => None,
    }
}
