use agopt_core::algorithms::{
    run_ag, run_ag_composite, run_projected_gradient, run_rsag, run_rsag_composite,
    AlgorithmConfig, BatchRule, RsagMode, RunTrace, Termination,
};
use agopt_core::linalg;
use agopt_core::oracle::StochasticOracle;
use agopt_core::problem::{make_problem, ProblemSpec, SmoothProblem};
use agopt_core::prox::CompositeTerm;
use agopt_core::rng::Rng;
use agopt_core::schedules::{PmfMode, Policy, StepSchedule, StepTriple};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn half_square(dim: usize) -> SmoothProblem {
    make_problem(&ProblemSpec::identity_quadratic(dim)).unwrap()
}

fn mixed() -> SmoothProblem {
    make_problem(&ProblemSpec::QuadraticPlusSigmoidal {
        q: vec![vec![1.0, 0.3], vec![0.3, 2.0]],
        a: 1.5,
    })
    .unwrap()
}

fn iterates(r: &agopt_core::algorithms::IterRecord) -> (&[f64], &[f64], &[f64]) {
    (
        r.x.as_deref().unwrap(),
        r.x_md.as_deref().unwrap(),
        r.x_ag.as_deref().unwrap(),
    )
}

fn assert_three_point(trace: &RunTrace) {
    let mut x_prev = trace.x0.clone();
    let mut ag_prev = trace.x0.clone();
    for r in &trace.records {
        let (x, md, ag) = iterates(r);
        for i in 0..x.len() {
            let expected = (1.0 - r.alpha) * ag_prev[i] + r.alpha * x_prev[i];
            let scale = 1.0 + ag_prev[i].abs() + x_prev[i].abs();
            assert!((md[i] - expected).abs() <= 1e-12 * scale, "k = {}", r.k);
        }
        x_prev = x.to_vec();
        ag_prev = ag.to_vec();
    }
}

fn assert_traces_close(a: &RunTrace, b: &RunTrace, tol: f64) {
    assert_eq!(a.records.len(), b.records.len());
    for (ra, rb) in a.records.iter().zip(&b.records) {
        let (xa, mda, aga) = iterates(ra);
        let (xb, mdb, agb) = iterates(rb);
        for (u, v) in [(xa, xb), (mda, mdb), (aga, agb)] {
            assert!(
                linalg::dist(u, v) <= tol * (1.0 + linalg::norm(v)),
                "k = {}",
                ra.k
            );
        }
    }
}

#[test]
fn three_point_identity_holds_for_every_algorithm() {
    let problem = mixed();
    let x0 = [2.0, -1.5];
    let det = StepSchedule::from_policy(Policy::DetConvex, problem.l_psi());
    let box_term = CompositeTerm::box_indicator(vec![-2.0; 2], vec![2.0; 2]).unwrap();
    assert_three_point(&run_ag(&problem, &x0, &AlgorithmConfig::new(det.clone(), 50)).unwrap());
    assert_three_point(
        &run_ag(
            &problem,
            &x0,
            &AlgorithmConfig::new(
                StepSchedule::from_policy(Policy::DetNonconvex, problem.l_psi()),
                50,
            ),
        )
        .unwrap(),
    );
    assert_three_point(
        &run_ag_composite(
            &problem,
            &box_term,
            &x0,
            &AlgorithmConfig::new(det.clone(), 50),
        )
        .unwrap(),
    );
    let oracle = StochasticOracle::gaussian(problem.clone(), 0.5).unwrap();
    let sto = StepSchedule::from_policy(Policy::StoNonconvex, problem.l_psi()).with_d_tilde(1.0);
    let cfg = AlgorithmConfig::new(sto, 50).with_seed(1);
    assert_three_point(
        &run_rsag(
            &oracle,
            &x0,
            &cfg,
            RsagMode::Nonconvex,
            Termination::Fixed(50),
        )
        .unwrap(),
    );
    let cfg = AlgorithmConfig::new(det.clone().with_d_tilde(1.0), 20).with_seed(2);
    assert_three_point(
        &run_rsag_composite(
            &oracle,
            &box_term,
            &x0,
            &cfg,
            BatchRule::HorizonFree,
            Termination::Fixed(20),
        )
        .unwrap(),
    );
    assert_three_point(&run_projected_gradient(&problem, &box_term, &x0, 0.1, 30).unwrap());
}

#[test]
fn gradient_descent_reduction_is_bit_exact() {
    let problem = mixed();
    let s = StepSchedule::tabulate(problem.l_psi(), 40, |k| StepTriple {
        alpha: 2.0 / (k as f64 + 1.0),
        beta: 0.3,
        lambda: 0.3,
    })
    .unwrap();
    let trace = run_ag(&problem, &[1.7, -2.2], &AlgorithmConfig::new(s, 40)).unwrap();
    let mut x_prev = trace.x0.clone();
    for r in &trace.records {
        let (x, md, ag) = iterates(r);
        assert_eq!(md, x_prev.as_slice());
        assert_eq!(ag, x);
        x_prev = x.to_vec();
    }
}

#[test]
fn nesterov_reduction() {
    let problem = mixed();
    let s = StepSchedule::tabulate(problem.l_psi(), 60, |k| {
        let alpha = 2.0 / (k as f64 + 1.0);
        let lambda = 0.2 * k as f64;
        StepTriple {
            alpha,
            beta: alpha * lambda,
            lambda,
        }
    })
    .unwrap();
    let trace = run_ag(&problem, &[1.0, 3.0], &AlgorithmConfig::new(s, 60)).unwrap();
    let mut ag_prev = trace.x0.clone();
    for r in &trace.records {
        let (x, _, ag) = iterates(r);
        for i in 0..2 {
            let expected = r.alpha * x[i] + (1.0 - r.alpha) * ag_prev[i];
            assert!(
                (ag[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()),
                "k = {}",
                r.k
            );
        }
        ag_prev = ag.to_vec();
    }
}

#[test]
fn noiseless_rsag_matches_ag() {
    let problem = mixed();
    let x0 = [1.0, -2.0];
    for (policy, mode) in [
        (Policy::DetNonconvex, RsagMode::Nonconvex),
        (Policy::DetConvex, RsagMode::Convex),
    ] {
        let s = StepSchedule::from_policy(policy, problem.l_psi());
        let ag = run_ag(&problem, &x0, &AlgorithmConfig::new(s.clone(), 80)).unwrap();
        let oracle = StochasticOracle::gaussian(problem.clone(), 0.0).unwrap();
        let cfg = AlgorithmConfig::new(s, 80).with_seed(9);
        let rsag = run_rsag(&oracle, &x0, &cfg, mode, Termination::Fixed(80)).unwrap();
        assert_traces_close(&rsag, &ag, 1e-9);
        assert_eq!(rsag.oracle_calls, 80);
    }
}

#[test]
fn zero_term_composite_matches_smooth_ag() {
    let problem = mixed();
    let s = StepSchedule::from_policy(Policy::DetConvex, problem.l_psi());
    let cfg = AlgorithmConfig::new(s, 100);
    let smooth = run_ag(&problem, &[3.0, 1.0], &cfg).unwrap();
    let comp = run_ag_composite(&problem, &CompositeTerm::Zero, &[3.0, 1.0], &cfg).unwrap();
    assert_traces_close(&comp, &smooth, 1e-12);
    for (a, b) in comp.records.iter().zip(&smooth.records) {
        assert_eq!(a.psi_ag, b.psi_ag);
        assert!((a.gradmap_norm.unwrap() - b.grad_norm_md).abs() <= 1e-12 * (1.0 + b.grad_norm_md));
    }
}

#[test]
fn noiseless_minibatch_of_one_matches_composite_ag() {
    let problem = mixed();
    let term = CompositeTerm::box_plus_l1(vec![-1.0, -0.5], vec![2.0, 1.0], 0.3).unwrap();
    let s = StepSchedule::from_policy(Policy::DetConvex, problem.l_psi());
    let ag = run_ag_composite(
        &problem,
        &term,
        &[2.0, 1.0],
        &AlgorithmConfig::new(s.clone(), 40),
    )
    .unwrap();
    let oracle = StochasticOracle::gaussian(problem, 0.0).unwrap();
    let cfg = AlgorithmConfig::new(s, 40).with_seed(4);
    let rs = run_rsag_composite(
        &oracle,
        &term,
        &[2.0, 1.0],
        &cfg,
        BatchRule::Fixed(1),
        Termination::Fixed(40),
    )
    .unwrap();
    assert_traces_close(&rs, &ag, 1e-9);
    assert!(rs.records.iter().all(|r| r.m_k == Some(1)));
}

#[test]
fn composite_iterates_stay_in_the_box() {
    let problem = make_problem(&ProblemSpec::SigmoidalSum { scale: 2.0, dim: 3 }).unwrap();
    let term = CompositeTerm::box_indicator(vec![-1.0, 0.5, -3.0], vec![1.0, 2.0, -1.0]).unwrap();
    let s = StepSchedule::from_policy(Policy::DetConvex, problem.l_psi());
    let trace = run_ag_composite(
        &problem,
        &term,
        &[0.0, 1.0, -2.0],
        &AlgorithmConfig::new(s.clone(), 200),
    )
    .unwrap();
    let bounds = term.bounds().unwrap();
    for r in &trace.records {
        let (x, _, ag) = iterates(r);
        assert!(bounds.contains(x) && bounds.contains(ag));
        assert!(r.phi_ag.is_some());
    }
    let oracle = StochasticOracle::gaussian(problem, 3.0).unwrap();
    let cfg = AlgorithmConfig::new(s.with_d_tilde(1.0), 50).with_seed(8);
    let rs = run_rsag_composite(
        &oracle,
        &term,
        &[0.0, 1.0, -2.0],
        &cfg,
        BatchRule::Fixed(2),
        Termination::Fixed(50),
    )
    .unwrap();
    for r in &rs.records {
        let (x, _, ag) = iterates(r);
        assert!(bounds.contains(x) && bounds.contains(ag));
    }
}

/// The same det_convex schedule runs unchanged on a nonconvex smooth part.
#[test]
fn uniform_policy_runs_on_nonconvex_composite() {
    let problem = make_problem(&ProblemSpec::SigmoidalSum { scale: 1.0, dim: 2 }).unwrap();
    assert!(!problem.is_convex());
    let term = CompositeTerm::box_indicator(vec![-3.0; 2], vec![3.0; 2]).unwrap();
    let s = StepSchedule::from_policy(Policy::DetConvex, problem.l_psi());
    let trace =
        run_ag_composite(&problem, &term, &[2.5, -2.0], &AlgorithmConfig::new(s, 300)).unwrap();
    let (_, best) = trace.best_gradmap_norm_sq().unwrap();
    assert!(best < 1e-3, "best squared gradient mapping {best}");
}

#[test]
fn identical_seeds_give_identical_traces() {
    let problem = mixed();
    let oracle = StochasticOracle::gaussian(problem, 1.0).unwrap();
    let s =
        StepSchedule::from_policy(Policy::StoNonconvex, oracle.base().l_psi()).with_d_tilde(1.0);
    let cfg = AlgorithmConfig::new(s, 100).with_seed(77).with_stream(3);
    let a = run_rsag(
        &oracle,
        &[1.0, 1.0],
        &cfg,
        RsagMode::Nonconvex,
        Termination::Sampled,
    )
    .unwrap();
    let b = run_rsag(
        &oracle,
        &[1.0, 1.0],
        &cfg,
        RsagMode::Nonconvex,
        Termination::Sampled,
    )
    .unwrap();
    assert_eq!(a, b);
    let c = run_rsag(
        &oracle,
        &[1.0, 1.0],
        &cfg.clone().with_stream(4),
        RsagMode::Nonconvex,
        Termination::Sampled,
    )
    .unwrap();
    assert_ne!(a, c);
}

#[test]
fn rsag_executes_exactly_r_iterations() {
    let oracle = StochasticOracle::gaussian(half_square(2), 1.0).unwrap();
    let s = StepSchedule::from_policy(Policy::StoConvex, 1.0).with_d_tilde(2.0);
    for seed in 0..50 {
        let cfg = AlgorithmConfig::new(s.clone(), 30).with_seed(seed);
        let t = run_rsag(
            &oracle,
            &[2.0, 0.0],
            &cfg,
            RsagMode::Convex,
            Termination::Sampled,
        )
        .unwrap();
        let r = t.r.unwrap();
        assert!((1..=30).contains(&r));
        assert_eq!(t.records.len(), r);
        assert_eq!(t.oracle_calls, r as u64);
        assert_eq!(t.last().unwrap().k, r);
    }
}

#[test]
fn termination_index_follows_the_pmf() {
    let n = 10;
    let draws = 100_000u64;
    let oracle = StochasticOracle::gaussian(half_square(1), 1.0).unwrap();
    for (policy, mode, pmf_mode) in [
        (
            Policy::StoNonconvex,
            RsagMode::Nonconvex,
            PmfMode::Nonconvex,
        ),
        (Policy::StoConvex, RsagMode::Convex, PmfMode::Convex),
    ] {
        let s = StepSchedule::from_policy(policy, 1.0)
            .with_d_tilde(2.0)
            .with_noise(1.0, 2.0)
            .with_horizon(n);
        let pmf = s.termination_pmf(n, pmf_mode).unwrap();
        let mut counts = vec![0u64; n];
        for seed in 0..draws {
            let cfg = AlgorithmConfig::new(s.clone(), n)
                .with_seed(seed)
                .with_record_iterates(false);
            let t = run_rsag(&oracle, &[2.0], &cfg, mode, Termination::Sampled).unwrap();
            counts[t.r.unwrap() - 1] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(&pmf)
            .map(|(&c, &p)| {
                let e = p * draws as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let p_value = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
        assert!(p_value > 1e-3, "{policy}: chi-square {stat}, p = {p_value}");
    }
}

#[test]
fn single_step_horizon() {
    let oracle = StochasticOracle::gaussian(half_square(1), 1.0).unwrap();
    let s = StepSchedule::from_policy(Policy::StoNonconvex, 1.0).with_d_tilde(1.0);
    for seed in 0..20 {
        let cfg = AlgorithmConfig::new(s.clone(), 1).with_seed(seed);
        let t = run_rsag(
            &oracle,
            &[2.0],
            &cfg,
            RsagMode::Nonconvex,
            Termination::Sampled,
        )
        .unwrap();
        assert_eq!((t.r, t.oracle_calls), (Some(1), 1));
    }
}

#[test]
fn minibatch_average_has_reduced_variance() {
    let problem = half_square(2);
    let oracle = StochasticOracle::gaussian(problem.clone(), 2.0).unwrap();
    let x = [0.4, -1.0];
    let (_, g) = problem.eval(&x).unwrap();
    let mut rng = Rng::new(21);
    for m in [1u64, 4, 16] {
        let draws = 40_000;
        let mut out = vec![0.0; 2];
        let mut acc = 0.0;
        for _ in 0..draws {
            oracle.batch_mean_into(&g, m, &mut rng, &mut out);
            acc += linalg::dist_sq(&out, &g);
        }
        let mse = acc / draws as f64;
        let target = 4.0 / m as f64;
        assert!(
            (mse - target).abs() <= 0.05 * target,
            "m = {m}: {mse} vs {target}"
        );
    }
}

#[test]
fn horizon_dependent_oracle_calls_respect_budget() {
    let problem = make_problem(&ProblemSpec::QuadraticPlusSigmoidal {
        q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        a: 0.5,
    })
    .unwrap();
    let (l, l_f) = (problem.l_psi(), problem.l_f());
    let sigma = 1.0;
    let d_tilde = 1.0;
    let term = CompositeTerm::box_indicator(vec![-2.0; 2], vec![2.0; 2]).unwrap();
    let oracle = StochasticOracle::gaussian(problem.clone(), sigma).unwrap();
    for n in [10usize, 50, 200] {
        let s = StepSchedule::from_policy(Policy::DetConvex, l).with_d_tilde(d_tilde);
        let cfg = AlgorithmConfig::new(s, n)
            .with_seed(3)
            .with_record_iterates(false);
        let t = run_rsag_composite(
            &oracle,
            &term,
            &[1.0, 1.0],
            &cfg,
            BatchRule::HorizonDependent,
            Termination::Fixed(n),
        )
        .unwrap();
        let nf = n as f64;
        let budget = nf + sigma * sigma * nf * nf / (l_f * l * d_tilde * d_tilde);
        assert!(
            (t.oracle_calls as f64) <= budget,
            "N = {n}: {} > {budget}",
            t.oracle_calls
        );
        let total: u64 = t.records.iter().map(|r| r.m_k.unwrap()).sum();
        assert_eq!(total, t.oracle_calls);
    }
}

#[test]
fn worked_examples() {
    let p = half_square(1);
    let det_convex = StepSchedule::from_policy(Policy::DetConvex, 1.0);
    let t = run_ag(&p, &[2.0], &AlgorithmConfig::new(det_convex.clone(), 2)).unwrap();
    assert_eq!(iterates(&t.records[0]).2, [1.0]);
    assert!((iterates(&t.records[1]).1[0] - 4.0 / 3.0).abs() < 1e-15);
    assert!((iterates(&t.records[1]).2[0] - 2.0 / 3.0).abs() < 1e-15);

    let unit_box = CompositeTerm::box_indicator(vec![-1.0], vec![1.0]).unwrap();
    let t = run_ag_composite(&p, &unit_box, &[1.0], &AlgorithmConfig::new(det_convex, 1)).unwrap();
    assert_eq!(iterates(&t.records[0]).0, [0.75]);
    assert_eq!(iterates(&t.records[0]).2, [0.5]);

    let pg = run_projected_gradient(&p, &CompositeTerm::Zero, &[2.0], 0.5, 4).unwrap();
    let xs: Vec<f64> = pg.records.iter().map(|r| iterates(r).2[0]).collect();
    assert_eq!(xs, [1.0, 0.5, 0.25, 0.125]);

    // Stationary start: the projection of the unconstrained minimizer.
    let shifted = make_problem(&ProblemSpec::Quadratic {
        a: vec![vec![1.0]],
        b: vec![3.0],
    })
    .unwrap();
    let pg = run_projected_gradient(&shifted, &unit_box, &[1.0], 1.0, 3).unwrap();
    assert_eq!(pg.records[0].gradmap_norm, Some(0.0));
}

#[test]
fn projected_gradient_rejects_bad_inputs() {
    let p = half_square(1);
    let unit_box = CompositeTerm::box_indicator(vec![-1.0], vec![1.0]).unwrap();
    assert!(run_projected_gradient(&p, &unit_box, &[0.0], 2.0, 3).is_err());
    assert!(run_projected_gradient(&p, &unit_box, &[0.0], 0.0, 3).is_err());
    assert!(run_projected_gradient(&p, &unit_box, &[5.0], 0.5, 3).is_err());
}
