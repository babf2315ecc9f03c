use agopt::config::ExperimentConfig;
use agopt::io::{read_trace_rows, write_trace, write_trace_rows, TraceRow, TRACE_HEADER};
use agopt::runner::{run_experiment, write_artifacts};
use agopt_core::algorithms::{run_ag, run_ag_composite, AlgorithmConfig};
use agopt_core::problem::{make_problem, ProblemSpec};
use agopt_core::prox::CompositeTerm;
use agopt_core::schedules::{Policy, StepSchedule};
use agopt_core::verify::McSummary;
use proptest::prelude::*;

fn trace_text(composite: bool, n: usize) -> String {
    let p = make_problem(&ProblemSpec::identity_quadratic(2)).unwrap();
    let cfg = AlgorithmConfig::new(StepSchedule::from_policy(Policy::DetConvex, 1.0), n);
    let trace = if composite {
        let term = CompositeTerm::box_indicator(vec![-1.0; 2], vec![1.0; 2]).unwrap();
        run_ag_composite(&p, &term, &[1.0, -0.5], &cfg).unwrap()
    } else {
        run_ag(&p, &[1.0, -0.5], &cfg).unwrap()
    };
    let mut buf = Vec::new();
    write_trace(&trace, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn trace_has_header_and_one_row_per_iteration() {
    let text = trace_text(false, 2);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], TRACE_HEADER.join(","));
    assert_eq!(
        lines[0],
        "k,alpha,beta,lambda,gamma,m_k,psi_md,psi_ag,phi_ag,grad_norm_md,gradmap_norm"
    );
}

#[test]
fn composite_trace_fills_gradmap_and_leaves_batch_empty() {
    let text = trace_text(true, 3);
    for row in read_trace_rows(text.as_bytes()).unwrap() {
        assert!(row.gradmap_norm.is_some() && row.phi_ag.is_some());
        assert_eq!(row.m_k, None);
    }
    let line = text.lines().nth(1).unwrap();
    assert_eq!(line.split(',').nth(5), Some(""));
}

#[test]
fn trace_round_trip_is_byte_exact() {
    for composite in [false, true] {
        let text = trace_text(composite, 50);
        let rows = read_trace_rows(text.as_bytes()).unwrap();
        let mut again = Vec::new();
        write_trace_rows(&rows, &mut again).unwrap();
        assert_eq!(String::from_utf8(again).unwrap(), text);
    }
}

#[test]
fn malformed_trace_is_rejected() {
    assert!(read_trace_rows("k,alpha\n1,2\n".as_bytes()).is_err());
    let text = trace_text(false, 1).replace("1,1.0000000000000000e0", "1,abc");
    assert!(read_trace_rows(text.as_bytes()).is_err());
}

fn opt_f64() -> impl Strategy<Value = Option<f64>> {
    prop::option::of(prop::num::f64::ANY)
}

prop_compose! {
    fn any_row()(
        k in 1usize..1_000_000,
        alpha in prop::num::f64::ANY,
        beta in prop::num::f64::ANY,
        lambda in prop::num::f64::ANY,
        gamma in opt_f64(),
        m_k in prop::option::of(any::<u64>()),
        psi_md in prop::num::f64::ANY,
        psi_ag in prop::num::f64::ANY,
        phi_ag in opt_f64(),
        grad_norm_md in prop::num::f64::ANY,
        gradmap_norm in opt_f64(),
    ) -> TraceRow {
        TraceRow { k, alpha, beta, lambda, gamma, m_k, psi_md, psi_ag, phi_ag, grad_norm_md, gradmap_norm }
    }
}

proptest! {
    #[test]
    fn arbitrary_rows_round_trip(rows in prop::collection::vec(any_row(), 0..20)) {
        let mut first = Vec::new();
        write_trace_rows(&rows, &mut first).unwrap();
        let parsed = read_trace_rows(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_trace_rows(&parsed, &mut second).unwrap();
        prop_assert_eq!(first, second);
        for (a, b) in rows.iter().zip(&parsed) {
            if a.alpha.is_nan() {
                prop_assert!(b.alpha.is_nan());
            } else {
                prop_assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
            }
        }
    }

    #[test]
    fn summary_is_order_invariant(mut v in prop::collection::vec(-1e6f64..1e6, 1..200), seed in any::<u64>()) {
        let a = McSummary::from_samples(&v, false).unwrap();
        let n = v.len();
        let shift = (seed as usize) % n;
        v.rotate_left(shift);
        v.reverse();
        let b = McSummary::from_samples(&v, false).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }
}

#[test]
fn summary_examples() {
    let s = McSummary::from_samples(&[3.0; 10], false).unwrap();
    assert_eq!((s.mean, s.stderr), (3.0, 0.0));
    let s = McSummary::from_samples(&[1.0, 2.0, 3.0, 4.0], false).unwrap();
    assert_eq!(s.mean, 2.5);
    // Sample standard deviation sqrt(5/3), halved.
    assert!((s.stderr - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    assert!((s.stderr - 0.6455).abs() < 1e-4);
}

const AG_CONFIG: &str = r#"
schema_version = 1
algorithm = "ag"
x0 = [3.0, -1.0]
horizon = 100
bounds = ["cor2b_fun", "cor2b_grad"]

[problem]
family = "quadratic"
a = [[1.0, 0.0], [0.0, 3.0]]
b = [0.0, 0.0]

[policy]
name = "det_convex"
"#;

#[test]
fn ag_run_reports_passing_bounds() {
    let exp = ExperimentConfig::from_toml_str(AG_CONFIG)
        .unwrap()
        .resolve()
        .unwrap();
    let out = run_experiment(&exp).unwrap();
    assert!(out.all_pass());
    let reports: Vec<_> = out.bound_reports().collect();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|(_, r)| r.margin > 1.0));
}

#[test]
fn stochastic_run_aggregates_replications() {
    let text = r#"
schema_version = 1
algorithm = "rsag"
x0 = 2.0
horizon = 100
seed = 3
replications = 1000
bounds = ["cor4a"]
[problem]
family = "quadratic"
a = [[1.0]]
b = [0.0]
[policy]
name = "sto_nonconvex"
[noise]
sigma = 1.0
"#;
    let exp = ExperimentConfig::from_toml_str(text)
        .unwrap()
        .resolve()
        .unwrap();
    let out = run_experiment(&exp).unwrap();
    assert_eq!(out.cells.len(), 1);
    let cell = &out.cells[0];
    assert_eq!(cell.bounds.len(), 1);
    assert_eq!(cell.bounds[0].context.replications, 1000);
    assert_eq!(cell.traces.len(), 1000);
    assert_eq!(cell.tails.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    write_artifacts(&out, dir.path(), &exp.config.emit, true).unwrap();
    let reps = std::fs::read_to_string(dir.path().join("replications_cell000.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1001);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["seed"], 3);
    assert_eq!(report["config"]["replications"], 1000);
    let bound = &report["cells"][0]["bounds"][0];
    for key in ["bound_id", "lhs", "rhs", "margin", "pass"] {
        assert!(!bound[key].is_null(), "missing {key}");
    }
    assert_eq!(report["cells"][0]["resolved"]["d_tilde"], 2f64.sqrt());
}

#[test]
fn reruns_are_byte_identical_and_independent_of_threads() {
    let text = r#"
schema_version = 1
algorithm = "rsag"
x0 = [1.0, -1.0]
seed = 9
replications = 64
[problem]
family = "sigmoidal_sum"
scale = 1.0
dim = 2
[policy]
name = "sto_nonconvex"
d_tilde = 1.0
[noise]
sigma = 0.5
[sweep]
horizons = [5, 50]
"#;
    let exp = ExperimentConfig::from_toml_str(text)
        .unwrap()
        .resolve()
        .unwrap();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let a = run_experiment(&exp).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b = pool.install(|| run_experiment(&exp).unwrap());
    let files_a = write_artifacts(&a, dirs[0].path(), &exp.config.emit, true).unwrap();
    let files_b = write_artifacts(&b, dirs[1].path(), &exp.config.emit, true).unwrap();
    assert_eq!(files_a.len(), files_b.len());
    for (fa, fb) in files_a.iter().zip(&files_b) {
        assert_eq!(fa.file_name(), fb.file_name());
        assert_eq!(
            std::fs::read(fa).unwrap(),
            std::fs::read(fb).unwrap(),
            "{}",
            fa.display()
        );
    }
}

#[test]
fn verify_mode_writes_no_traces() {
    let exp = ExperimentConfig::from_toml_str(AG_CONFIG)
        .unwrap()
        .resolve()
        .unwrap();
    let out = run_experiment(&exp).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_artifacts(&out, dir.path(), &exp.config.emit, false).unwrap();
    let names: Vec<_> = files
        .iter()
        .map(|f| f.file_name().unwrap().to_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["report.json", "summary.csv", "bounds.csv"]);
}

#[test]
fn divergence_names_the_cell() {
    // An explicit stepsize far beyond 1/L is rejected before running, so force
    // growth through a huge start instead.
    let text = AG_CONFIG
        .replace("x0 = [3.0, -1.0]", "x0 = [1e13, 0.0]")
        .replace("bounds = [\"cor2b_fun\", \"cor2b_grad\"]", "");
    let exp = ExperimentConfig::from_toml_str(&text)
        .unwrap()
        .resolve()
        .unwrap();
    let err = run_experiment(&exp).unwrap_err();
    assert!(
        matches!(
            err,
            agopt::Error::Cell {
                cell: 0,
                horizon: 100,
                ..
            }
        ),
        "{err}"
    );
}
