//! Experiment configuration: a versioned TOML schema and its validation into
//! a list of runnable cells.
//!
//! ```toml
//! schema_version = 1
//! algorithm = "rsag"          # ag | ag_composite | rsag | rsag_composite | projected_gradient
//! x0 = 2.0                    # scalar (broadcast) or vector
//! horizon = 100               # or [sweep] horizons = [...]
//! seed = 7
//! replications = 1000
//! bounds = ["cor4a"]
//!
//! [problem]
//! family = "quadratic"
//! a = [[1.0]]
//! b = [0.0]
//!
//! [policy]
//! name = "sto_nonconvex"
//!
//! [noise]
//! sigma = 1.0
//! ```
//!
//! Sweeps take the product of `sweep.horizons`, `sweep.sigmas` and
//! `sweep.policies`; each list replaces the corresponding single value.

use std::path::{Path, PathBuf};

use agopt_core::algorithms::{BatchRule, RsagMode, Termination};
use agopt_core::linalg;
use agopt_core::oracle::NoiseModel;
use agopt_core::problem::{make_problem, ProblemSpec, SmoothProblem};
use agopt_core::prox::CompositeTerm;
use agopt_core::schedules::{default_d_tilde, Policy};
use agopt_core::verify::{composite_optimum, BoundId, BoundKind, MIN_REPLICATIONS};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, io_err, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ag,
    AgComposite,
    Rsag,
    RsagComposite,
    ProjectedGradient,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ag => "ag",
            Algorithm::AgComposite => "ag_composite",
            Algorithm::Rsag => "rsag",
            Algorithm::RsagComposite => "rsag_composite",
            Algorithm::ProjectedGradient => "projected_gradient",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Algorithm::Rsag | Algorithm::RsagComposite)
    }

    pub fn is_composite(self) -> bool {
        matches!(
            self,
            Algorithm::AgComposite | Algorithm::RsagComposite | Algorithm::ProjectedGradient
        )
    }
}

/// A scalar broadcast to the problem dimension, or an explicit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Numbers {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Numbers {
    pub fn expand(&self, dim: usize, field: &str) -> Result<Vec<f64>> {
        let v = match self {
            Numbers::Scalar(s) => vec![*s; dim],
            Numbers::Vector(v) if v.len() == dim => v.clone(),
            Numbers::Vector(v) => {
                return Err(config_err(
                    field,
                    format!("expected {dim} entries, got {}", v.len()),
                ))
            }
        };
        if v.iter().any(|x| x.is_nan()) {
            return Err(config_err(field, "contains NaN"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermSpec {
    Zero,
    Box {
        lo: Numbers,
        hi: Numbers,
    },
    BoxPlusL1 {
        lo: Numbers,
        hi: Numbers,
        weight: f64,
    },
}

impl TermSpec {
    pub fn build(&self, dim: usize) -> Result<CompositeTerm> {
        let wrap = |e: agopt_core::Error| config_err("term", e.to_string());
        match self {
            TermSpec::Zero => Ok(CompositeTerm::Zero),
            TermSpec::Box { lo, hi } => {
                CompositeTerm::box_indicator(lo.expand(dim, "term.lo")?, hi.expand(dim, "term.hi")?)
                    .map_err(wrap)
            }
            TermSpec::BoxPlusL1 { lo, hi, weight } => CompositeTerm::box_plus_l1(
                lo.expand(dim, "term.lo")?,
                hi.expand(dim, "term.hi")?,
                *weight,
            )
            .map_err(wrap),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub name: Option<Policy>,
    /// Position of `λ_k` in its admissible interval for the nonconvex policies.
    pub lambda_choice: Option<f64>,
    /// Overrides the default `D̃`.
    pub d_tilde: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma: Option<f64>,
    #[serde(default)]
    pub model: NoiseModel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationKind {
    #[default]
    Sampled,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    HorizonDependent,
    HorizonFree,
    Fixed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsagSection {
    /// Defaults to the convexity of the policy.
    pub mode: Option<RsagMode>,
    #[serde(default)]
    pub termination: TerminationKind,
    /// Iterations for `termination = "fixed"`; defaults to `N`.
    pub fixed_iterations: Option<usize>,
    /// Mini-batch rule of `rsag_composite`; defaults to `horizon_dependent`.
    pub batch: Option<BatchKind>,
    pub batch_size: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectedGradientSection {
    /// Defaults to `1/L_Ψ`.
    pub stepsize: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub sigmas: Vec<f64>,
    #[serde(default)]
    pub policies: Vec<Policy>,
}

impl SweepSection {
    pub fn is_empty(&self) -> bool {
        self.horizons.is_empty() && self.sigmas.is_empty() && self.policies.is_empty()
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitSection {
    #[serde(default = "yes")]
    pub trace: bool,
    #[serde(default = "yes")]
    pub bounds: bool,
    #[serde(default = "yes")]
    pub summary: bool,
}

impl Default for EmitSection {
    fn default() -> Self {
        Self {
            trace: true,
            bounds: true,
            summary: true,
        }
    }
}

/// Replications when the config gives none: one for deterministic
/// algorithms, 1000 for stochastic ones.
pub const DEFAULT_STOCHASTIC_REPLICATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub problem: ProblemSpec,
    pub term: Option<TermSpec>,
    pub x0: Numbers,
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Filled in by [`ExperimentConfig::from_toml_str`] when absent.
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub bounds: Vec<BoundId>,
    /// Not echoed in reports, so identical runs into different directories
    /// produce identical files.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub rsag: Option<RsagSection>,
    pub projected_gradient: Option<ProjectedGradientSection>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub emit: EmitSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut config: Self = toml::from_str(text)?;
        if config.replications.is_none() {
            let default = if config.algorithm.is_stochastic() {
                DEFAULT_STOCHASTIC_REPLICATIONS
            } else {
                1
            };
            config.replications = Some(default);
        }
        if config.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    config.schema_version
                ),
            ));
        }
        Ok(config)
    }

    pub fn replications(&self) -> usize {
        self.replications.unwrap_or(1)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
    }

    /// Validates the configuration and expands it into cells.
    pub fn resolve(&self) -> Result<Experiment> {
        resolve(self)
    }
}

/// Optimum data used for defaults and bound evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimumInfo {
    /// `Ψ*` (smooth) or `Φ*` (composite).
    pub value: f64,
    pub x_star: Vec<f64>,
}

/// One `(N, σ, policy)` combination, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub horizon: usize,
    pub sigma: f64,
    pub policy: Option<Policy>,
    pub lambda_choice: f64,
    pub d_tilde: Option<f64>,
    pub mode: Option<RsagMode>,
    pub termination: Option<String>,
    pub fixed_iterations: Option<usize>,
    pub batch: Option<String>,
    pub batch_size: Option<u64>,
    pub stepsize: Option<f64>,
}

impl Cell {
    pub fn policy_name(&self) -> &'static str {
        self.policy.map_or("none", Policy::name)
    }

    pub fn termination_rule(&self) -> Termination {
        match self.fixed_iterations {
            Some(r) => Termination::Fixed(r),
            None => Termination::Sampled,
        }
    }

    pub fn batch_rule(&self) -> Option<BatchRule> {
        match self.batch.as_deref()? {
            "horizon_dependent" => Some(BatchRule::HorizonDependent),
            "horizon_free" => Some(BatchRule::HorizonFree),
            _ => Some(BatchRule::Fixed(self.batch_size.unwrap_or(1))),
        }
    }
}

/// A validated experiment ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: SmoothProblem,
    pub term: Option<CompositeTerm>,
    pub x0: Vec<f64>,
    pub optimum: Option<OptimumInfo>,
    pub cells: Vec<Cell>,
}

fn check_bounds_compatible(
    config: &ExperimentConfig,
    policy: Option<Policy>,
    mode: Option<RsagMode>,
    batch: Option<BatchKind>,
) -> Result<()> {
    let alg = config.algorithm;
    for &id in &config.bounds {
        let field = "bounds";
        let needs = |what: &str| config_err(field, format!("{id} requires {what}"));
        let expected_alg = match id.kind() {
            BoundKind::Deterministic => Algorithm::Ag,
            BoundKind::Composite => Algorithm::AgComposite,
            BoundKind::Stochastic => Algorithm::Rsag,
            BoundKind::StochasticComposite => Algorithm::RsagComposite,
        };
        if alg != expected_alg {
            return Err(needs(&format!("algorithm = \"{}\"", expected_alg.name())));
        }
        let expected_policy = match id {
            BoundId::Thm1a | BoundId::Cor2a => Some(Policy::DetNonconvex),
            BoundId::Cor2bGrad | BoundId::Cor2bFun => Some(Policy::DetConvex),
            BoundId::Cor4a => Some(Policy::StoNonconvex),
            BoundId::Cor4bGrad | BoundId::Cor4bFun => Some(Policy::StoConvex),
            _ => None,
        };
        if let Some(p) = expected_policy {
            if policy != Some(p) {
                return Err(needs(&format!("policy \"{}\"", p.name())));
            }
        }
        match id {
            BoundId::Cor4a if mode != Some(RsagMode::Nonconvex) => {
                return Err(needs("rsag.mode = \"nonconvex\""))
            }
            BoundId::Cor4bGrad | BoundId::Cor4bFun if mode != Some(RsagMode::Convex) => {
                return Err(needs("rsag.mode = \"convex\""))
            }
            BoundId::Cor6 | BoundId::Cor6Fun if batch != Some(BatchKind::HorizonDependent) => {
                return Err(needs("rsag.batch = \"horizon_dependent\""))
            }
            BoundId::Cor7 if batch != Some(BatchKind::HorizonFree) => {
                return Err(needs("rsag.batch = \"horizon_free\""))
            }
            _ => {}
        }
        if matches!(
            id.kind(),
            BoundKind::Stochastic | BoundKind::StochasticComposite
        ) && config.replications() < MIN_REPLICATIONS
        {
            return Err(config_err(
                "replications",
                format!("{id} needs at least {MIN_REPLICATIONS} replications"),
            ));
        }
    }
    Ok(())
}

fn resolve(config: &ExperimentConfig) -> Result<Experiment> {
    let alg = config.algorithm;
    let problem =
        make_problem(&config.problem).map_err(|e| config_err("problem", e.to_string()))?;
    let dim = problem.dim();
    let x0 = config.x0.expand(dim, "x0")?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(config_err("x0", "must be finite"));
    }

    let term = match (&config.term, alg) {
        (Some(_), Algorithm::Ag | Algorithm::Rsag) => {
            return Err(config_err(
                "term",
                format!("algorithm \"{}\" takes no composite term", alg.name()),
            ))
        }
        (None, Algorithm::AgComposite | Algorithm::RsagComposite) => {
            return Err(config_err(
                "term",
                format!("algorithm \"{}\" requires a composite term", alg.name()),
            ))
        }
        (Some(spec), _) => Some(spec.build(dim)?),
        (None, Algorithm::ProjectedGradient) => Some(CompositeTerm::Zero),
        (None, _) => None,
    };
    if let Some(t) = &term {
        if !t.contains(&x0) {
            return Err(config_err(
                "x0",
                "must lie in the domain of the composite term",
            ));
        }
    }

    let horizons = match (config.horizon, config.sweep.horizons.is_empty()) {
        (Some(_), false) => {
            return Err(config_err(
                "horizon",
                "give either horizon or sweep.horizons, not both",
            ))
        }
        (Some(n), true) => vec![n],
        (None, false) => config.sweep.horizons.clone(),
        (None, true) => return Err(config_err("horizon", "missing (or give sweep.horizons)")),
    };
    if horizons.contains(&0) {
        return Err(config_err("horizon", "must be at least 1"));
    }

    if config.replications() == 0 {
        return Err(config_err("replications", "must be at least 1"));
    }
    if !alg.is_stochastic() && config.replications() != 1 {
        return Err(config_err(
            "replications",
            format!("deterministic algorithm \"{}\" runs once", alg.name()),
        ));
    }

    let sigmas = match (config.noise.sigma, config.sweep.sigmas.is_empty()) {
        (Some(_), false) => {
            return Err(config_err(
                "noise.sigma",
                "give either noise.sigma or sweep.sigmas, not both",
            ))
        }
        (Some(s), true) => vec![s],
        (None, false) => config.sweep.sigmas.clone(),
        (None, true) => vec![0.0],
    };
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(config_err("noise.sigma", "must be finite and nonnegative"));
    }
    if !alg.is_stochastic() && (config.noise.sigma.is_some() || !config.sweep.sigmas.is_empty()) {
        return Err(config_err(
            "noise.sigma",
            format!("deterministic algorithm \"{}\" takes no noise", alg.name()),
        ));
    }

    let policies: Vec<Option<Policy>> = if alg == Algorithm::ProjectedGradient {
        if config.policy.name.is_some() || !config.sweep.policies.is_empty() {
            return Err(config_err(
                "policy.name",
                "projected_gradient uses a constant stepsize, not a policy",
            ));
        }
        vec![None]
    } else {
        match (config.policy.name, config.sweep.policies.is_empty()) {
            (Some(_), false) => {
                return Err(config_err(
                    "policy.name",
                    "give either policy.name or sweep.policies, not both",
                ))
            }
            (Some(p), true) => vec![Some(p)],
            (None, false) => config.sweep.policies.iter().copied().map(Some).collect(),
            (None, true) => return Err(config_err("policy.name", "missing")),
        }
    };
    for p in policies.iter().flatten() {
        let ok = match alg {
            Algorithm::Ag => !p.is_stochastic(),
            Algorithm::AgComposite | Algorithm::RsagComposite => *p == Policy::DetConvex,
            _ => true,
        };
        if !ok {
            return Err(config_err(
                "policy.name",
                format!(
                    "policy \"{}\" is not supported by algorithm \"{}\"",
                    p.name(),
                    alg.name()
                ),
            ));
        }
    }

    let lambda_choice = config.policy.lambda_choice.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&lambda_choice) {
        return Err(config_err("policy.lambda_choice", "must lie in [0, 1]"));
    }
    if let Some(d) = config.policy.d_tilde {
        if !(d > 0.0 && d.is_finite()) {
            return Err(config_err("policy.d_tilde", "must be positive and finite"));
        }
    }

    let rsag = config.rsag.clone().unwrap_or_default();
    if config.rsag.is_some() && !alg.is_stochastic() {
        return Err(config_err(
            "rsag",
            format!("only used by stochastic algorithms, not \"{}\"", alg.name()),
        ));
    }
    if alg == Algorithm::RsagComposite && rsag.mode.is_some() {
        return Err(config_err(
            "rsag.mode",
            "rsag_composite always uses the convex-mode schedule",
        ));
    }
    if alg != Algorithm::RsagComposite && (rsag.batch.is_some() || rsag.batch_size.is_some()) {
        return Err(config_err(
            "rsag.batch",
            "mini-batches are only used by rsag_composite",
        ));
    }
    let batch = (alg == Algorithm::RsagComposite)
        .then(|| rsag.batch.unwrap_or(BatchKind::HorizonDependent));
    match (batch, rsag.batch_size) {
        (Some(BatchKind::Fixed), None | Some(0)) => {
            return Err(config_err(
                "rsag.batch_size",
                "fixed mini-batches need batch_size >= 1",
            ))
        }
        (Some(BatchKind::HorizonDependent | BatchKind::HorizonFree), Some(_)) => {
            return Err(config_err(
                "rsag.batch_size",
                "only used with batch = \"fixed\"",
            ))
        }
        _ => {}
    }
    if batch.is_some_and(|b| b != BatchKind::Fixed) && sigmas.contains(&0.0) {
        return Err(config_err(
            "noise.sigma",
            "rsag_composite needs sigma > 0 unless batch = \"fixed\"",
        ));
    }
    if rsag.termination == TerminationKind::Sampled && rsag.fixed_iterations.is_some() {
        return Err(config_err(
            "rsag.fixed_iterations",
            "only used with termination = \"fixed\"",
        ));
    }

    let pg = config.projected_gradient.clone().unwrap_or_default();
    if config.projected_gradient.is_some() && alg != Algorithm::ProjectedGradient {
        return Err(config_err(
            "projected_gradient",
            "only used by algorithm \"projected_gradient\"",
        ));
    }
    let l = problem.l_psi();
    let stepsize = (alg == Algorithm::ProjectedGradient).then(|| pg.stepsize.unwrap_or(1.0 / l));
    if let Some(s) = stepsize {
        if !(s > 0.0 && s * l <= 1.0 + 1e-12) {
            return Err(config_err(
                "projected_gradient.stepsize",
                format!("must lie in (0, 1/L_Psi = {}]", 1.0 / l),
            ));
        }
    }

    let optimum = match &term {
        Some(t) => {
            composite_optimum(&problem, t).map(|(x_star, value)| OptimumInfo { value, x_star })
        }
        None => problem
            .x_star()
            .zip(problem.psi_star())
            .map(|(x, v)| OptimumInfo {
                value: v,
                x_star: x.to_vec(),
            }),
    };

    let mut cells = Vec::new();
    for &policy in &policies {
        let mode = match (alg, policy) {
            (Algorithm::Rsag, Some(p)) => Some(rsag.mode.unwrap_or(if p.is_convex() {
                RsagMode::Convex
            } else {
                RsagMode::Nonconvex
            })),
            _ => None,
        };
        check_bounds_compatible(config, policy, mode, batch)?;
        for &sigma in &sigmas {
            for &horizon in &horizons {
                let fixed_iterations = match (alg.is_stochastic(), rsag.termination) {
                    (true, TerminationKind::Fixed) => {
                        let r = rsag.fixed_iterations.unwrap_or(horizon);
                        if r == 0 || r > horizon {
                            return Err(config_err(
                                "rsag.fixed_iterations",
                                format!("must lie in 1..={horizon}"),
                            ));
                        }
                        Some(r)
                    }
                    _ => None,
                };
                let d_tilde = resolve_d_tilde(
                    config,
                    &problem,
                    &x0,
                    &term,
                    optimum.as_ref(),
                    alg,
                    policy,
                    sigma,
                    batch,
                )?;
                cells.push(Cell {
                    index: cells.len(),
                    horizon,
                    sigma,
                    policy,
                    lambda_choice,
                    d_tilde,
                    mode,
                    termination: alg.is_stochastic().then(|| {
                        if fixed_iterations.is_some() {
                            "fixed"
                        } else {
                            "sampled"
                        }
                        .to_string()
                    }),
                    fixed_iterations,
                    batch: batch.map(|b| {
                        match b {
                            BatchKind::HorizonDependent => "horizon_dependent",
                            BatchKind::HorizonFree => "horizon_free",
                            BatchKind::Fixed => "fixed",
                        }
                        .to_string()
                    }),
                    batch_size: rsag.batch_size,
                    stepsize,
                });
            }
        }
    }

    Ok(Experiment {
        config: config.clone(),
        problem,
        term,
        x0,
        optimum,
        cells,
    })
}

#[allow(clippy::too_many_arguments)]
fn resolve_d_tilde(
    config: &ExperimentConfig,
    problem: &SmoothProblem,
    x0: &[f64],
    term: &Option<CompositeTerm>,
    optimum: Option<&OptimumInfo>,
    alg: Algorithm,
    policy: Option<Policy>,
    sigma: f64,
    batch: Option<BatchKind>,
) -> Result<Option<f64>> {
    if let Some(d) = config.policy.d_tilde {
        return Ok(Some(d));
    }
    let missing = |why: &str| config_err("policy.d_tilde", format!("required: {why}"));
    match (alg, policy) {
        (Algorithm::Rsag, Some(p)) if p.is_stochastic() && sigma > 0.0 => {
            let gap0 = optimum
                .map(|o| problem.value(x0).map(|v| v - o.value))
                .transpose()?;
            let dist0 = optimum.map(|o| linalg::dist(x0, &o.x_star));
            default_d_tilde(p, problem.l_psi(), gap0, dist0)
                .filter(|d| *d > 0.0)
                .map(Some)
                .ok_or_else(|| missing("the optimum is unknown or x0 is optimal"))
        }
        (Algorithm::RsagComposite, _) if batch != Some(BatchKind::Fixed) => {
            let m = term
                .as_ref()
                .and_then(CompositeTerm::bound_m)
                .unwrap_or(0.0);
            let x_star = optimum.ok_or_else(|| missing("the composite optimum is unknown"))?;
            let d = (linalg::norm_sq(&x_star.x_star) + m * m).sqrt();
            if d > 0.0 {
                Ok(Some(d))
            } else {
                Err(missing("the default sqrt(|x*|^2 + M^2) is zero"))
            }
        }
        _ => Ok(None),
    }
}
