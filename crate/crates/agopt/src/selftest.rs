//! Fast property suites runnable from the command line.

use std::fmt;

use agopt_core::algorithms::{run_rsag, AlgorithmConfig, RsagMode, Termination};
use agopt_core::linalg;
use agopt_core::oracle::StochasticOracle;
use agopt_core::problem::{make_problem, ProblemSpec};
use agopt_core::prox::{prox_map, CompositeTerm};
use agopt_core::rng::Rng;
use agopt_core::schedules::{PmfMode, Policy, StepSchedule};
use agopt_core::verify::{check_gradient_fd, prox_bruteforce};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn check(name: &'static str, result: agopt_core::Result<(bool, String)>) -> Check {
    match result {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check {
            name,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn policies(l: f64, n: usize) -> Vec<StepSchedule> {
    Policy::ALL
        .iter()
        .map(|&p| {
            StepSchedule::from_policy(p, l)
                .with_noise(1.0, 1.0)
                .with_horizon(n)
        })
        .collect()
}

/// `Σ_{τ≤k} α_τ/Γ_τ = 1/Γ_k` for every policy, relative error at most `1e-12`.
pub fn gamma_telescoping() -> Check {
    check(
        "gamma telescoping",
        (|| {
            let n = 1000;
            let mut worst = 0.0f64;
            for s in policies(1.0, n) {
                let steps = s.triples(n)?;
                let g = s.gamma_table(n)?;
                let mut sum = 0.0;
                for k in 1..=n {
                    sum += steps[k - 1].alpha / g.gamma(k);
                    worst = worst.max((sum * g.gamma(k) - 1.0).abs());
                }
            }
            Ok((worst <= 1e-12, format!("max relative error {worst:e}")))
        })(),
    )
}

/// `Γ_k = 2/(k(k+1))` for `α_k = 2/(k+1)`.
pub fn gamma_closed_form() -> Check {
    check(
        "gamma closed form",
        (|| {
            let n = 2000;
            let g = StepSchedule::from_policy(Policy::DetConvex, 1.0).gamma_table(n)?;
            let worst = (1..=n)
                .map(|k| {
                    let exact = 2.0 / (k as f64 * (k as f64 + 1.0));
                    (g.gamma(k) / exact - 1.0).abs()
                })
                .fold(0.0, f64::max);
            Ok((
                worst <= 1e-12,
                format!("max relative error {worst:e} over k <= {n}"),
            ))
        })(),
    )
}

/// `C_k ≥ 11/32` and `λ_k C_k ≥ 1/(6L)` under the deterministic nonconvex policy.
pub fn c_coefficients() -> Check {
    check(
        "C_k lower bounds",
        (|| {
            let mut min_c = f64::INFINITY;
            let mut min_ratio = f64::INFINITY;
            for l in [0.5, 1.0, 4.0] {
                for choice in [0.0, 0.5, 1.0] {
                    let n = 1000;
                    let s = StepSchedule::from_policy(Policy::DetNonconvex, l)
                        .with_lambda_choice(choice);
                    let steps = s.triples(n)?;
                    let c = s.c_coefficients(n)?;
                    for k in 0..n {
                        min_c = min_c.min(c[k]);
                        min_ratio = min_ratio.min(steps[k].lambda * c[k] * 6.0 * l);
                    }
                }
            }
            let tol = 1.0 - 1e-12;
            Ok((
                min_c >= 11.0 / 32.0 * tol && min_ratio >= tol,
                format!("min C_k = {min_c:.6}, min 6L lambda_k C_k = {min_ratio:.6}"),
            ))
        })(),
    )
}

/// The termination pmf of every policy is a probability vector.
pub fn pmf_sums_to_one() -> Check {
    check(
        "termination pmf",
        (|| {
            let mut worst = 0.0f64;
            for n in [1, 10, 500] {
                for s in policies(2.0, n) {
                    let mode = s.effective_policy().expect("policy schedule").pmf_mode();
                    let p = s.termination_pmf(n, mode)?;
                    if p.iter().any(|&v| v < 0.0) {
                        return Ok((false, "negative probability".to_string()));
                    }
                    worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
                }
            }
            Ok((worst <= 1e-12, format!("max |sum - 1| = {worst:e}")))
        })(),
    )
}

fn sample_vec(rng: &mut Rng, dim: usize, radius: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| radius * (2.0 * rng.uniform() - 1.0))
        .collect()
}

/// `‖G(x, y₁, c) − G(x, y₂, c)‖ ≤ ‖y₁ − y₂‖` on `10⁴` random triples.
pub fn gradient_mapping_lipschitz() -> Check {
    check(
        "gradient mapping 1-Lipschitz",
        (|| {
            let term = CompositeTerm::box_plus_l1(vec![-1.0, -0.5, 0.2], vec![1.0, 2.0, 3.0], 0.4)?;
            let mut rng = Rng::new(1);
            let mut worst = 0.0f64;
            for _ in 0..10_000 {
                let x = sample_vec(&mut rng, 3, 4.0);
                let y1 = sample_vec(&mut rng, 3, 10.0);
                let y2 = sample_vec(&mut rng, 3, 10.0);
                let c = (rng.uniform() * 12.0 - 6.0).exp();
                let g1 = term.gradient_mapping(&x, &y1, c)?;
                let g2 = term.gradient_mapping(&x, &y2, c)?;
                worst = worst.max(linalg::dist(&g1.vector, &g2.vector) / linalg::dist(&y1, &y2));
            }
            Ok((worst <= 1.0 + 1e-9, format!("max ratio {worst:.12}")))
        })(),
    )
}

/// Closed-form prox agrees with grid minimization to within two grid steps.
pub fn prox_bruteforce_agreement() -> Check {
    check(
        "prox vs brute force",
        (|| {
            let step = 1e-4;
            let terms = [
                CompositeTerm::box_indicator(vec![-1.0], vec![1.0])?,
                CompositeTerm::box_plus_l1(vec![-1.0], vec![1.0], 1.0)?,
                CompositeTerm::box_plus_l1(vec![-0.3], vec![2.0], 0.4)?,
            ];
            let mut rng = Rng::new(2);
            let mut worst = 0.0f64;
            for term in &terms {
                for _ in 0..20 {
                    let x = sample_vec(&mut rng, 1, 3.0);
                    let y = sample_vec(&mut rng, 1, 3.0);
                    let c = 0.1 + 2.0 * rng.uniform();
                    let closed = prox_map(term, &x, &y, c)?;
                    let brute = prox_bruteforce(term, &x, &y, c, step)?;
                    worst = worst.max((closed[0] - brute[0]).abs());
                }
            }
            Ok((
                worst <= 2.0 * step,
                format!("max deviation {worst:e} (grid step {step:e})"),
            ))
        })(),
    )
}

/// Central differences match analytic gradients to relative error `1e-5`.
pub fn finite_differences() -> Check {
    check(
        "finite-difference gradients",
        (|| {
            let specs = [
                ProblemSpec::Quadratic {
                    a: vec![vec![2.0, 0.5], vec![0.5, 1.0]],
                    b: vec![1.0, -1.0],
                },
                ProblemSpec::IllConditionedQuadratic { cond: 1e4, dim: 20 },
                ProblemSpec::SigmoidalSum { scale: 1.0, dim: 4 },
                ProblemSpec::QuadraticPlusSigmoidal {
                    q: vec![vec![1.0, 0.0], vec![0.0, 4.0]],
                    a: 2.0,
                },
            ];
            let mut rng = Rng::new(3);
            let mut worst = 0.0f64;
            for spec in &specs {
                let p = make_problem(spec)?;
                for _ in 0..100 {
                    let x = sample_vec(&mut rng, p.dim(), 3.0);
                    worst = worst.max(check_gradient_fd(&p, &x, 1e-5)?);
                }
            }
            Ok((worst <= 1e-5, format!("max relative error {worst:e}")))
        })(),
    )
}

/// Chi-square goodness of fit of the RSAG termination index against its pmf
/// over `draws` independent runs.
pub fn termination_frequencies(draws: u64) -> Check {
    check(
        "termination index frequencies",
        (|| {
            let n = 10;
            let oracle = StochasticOracle::gaussian(
                make_problem(&ProblemSpec::identity_quadratic(1))?,
                1.0,
            )?;
            let mut worst_p = 1.0f64;
            for (policy, mode, pmf_mode) in [
                (
                    Policy::StoNonconvex,
                    RsagMode::Nonconvex,
                    PmfMode::Nonconvex,
                ),
                (Policy::StoConvex, RsagMode::Convex, PmfMode::Convex),
            ] {
                let s = StepSchedule::from_policy(policy, 1.0).with_d_tilde(2.0);
                let pmf = s
                    .clone()
                    .with_noise(1.0, 2.0)
                    .with_horizon(n)
                    .termination_pmf(n, pmf_mode)?;
                let mut counts = vec![0u64; n];
                for stream in 0..draws {
                    let cfg = AlgorithmConfig::new(s.clone(), n)
                        .with_seed(0x5eed)
                        .with_stream(stream)
                        .with_record_iterates(false);
                    let t = run_rsag(&oracle, &[2.0], &cfg, mode, Termination::Sampled)?;
                    counts[t.r.expect("sampled termination") - 1] += 1;
                }
                let stat: f64 = counts
                    .iter()
                    .zip(&pmf)
                    .map(|(&c, &p)| {
                        let e = p * draws as f64;
                        (c as f64 - e).powi(2) / e
                    })
                    .sum();
                let chi = ChiSquared::new((n - 1) as f64).expect("positive degrees of freedom");
                worst_p = worst_p.min(1.0 - chi.cdf(stat));
            }
            Ok((
                worst_p > 1e-3,
                format!("min p-value {worst_p:.4} over {draws} draws per policy"),
            ))
        })(),
    )
}

pub fn run_all() -> Vec<Check> {
    vec![
        gamma_telescoping(),
        gamma_closed_form(),
        c_coefficients(),
        pmf_sums_to_one(),
        gradient_mapping_lipschitz(),
        prox_bruteforce_agreement(),
        finite_differences(),
        termination_frequencies(100_000),
    ]
}
