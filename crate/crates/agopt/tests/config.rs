use agopt::config::{Algorithm, ExperimentConfig};
use agopt::Error;
use agopt_core::algorithms::RsagMode;
use agopt_core::schedules::Policy;

const BASE: &str = r#"
schema_version = 1
algorithm = "rsag"
x0 = 2.0
horizon = 100
seed = 5
replications = 200
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

fn parse(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).unwrap()
}

fn field_of(text: &str) -> String {
    let err = ExperimentConfig::from_toml_str(text).and_then(|c| c.resolve().map(|_| ()));
    match err {
        Err(Error::Config { field, .. }) => field,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn base_config_resolves_with_defaults() {
    let c = parse(BASE);
    assert_eq!(c.algorithm, Algorithm::Rsag);
    let exp = c.resolve().unwrap();
    assert_eq!(exp.cells.len(), 1);
    let cell = &exp.cells[0];
    assert_eq!(cell.policy, Some(Policy::StoNonconvex));
    assert_eq!(cell.mode, Some(RsagMode::Nonconvex));
    assert_eq!(cell.lambda_choice, 1.0);
    // sqrt((Psi(x0) - Psi*)/L) = sqrt(2).
    assert!((cell.d_tilde.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(exp.x0, vec![2.0]);
}

#[test]
fn replications_default_by_algorithm() {
    let c = parse(&BASE.replace("replications = 200\n", ""));
    assert_eq!(c.replications(), 1000);
    let ag = BASE
        .replace("replications = 200\n", "")
        .replace("algorithm = \"rsag\"", "algorithm = \"ag\"")
        .replace("bounds = [\"cor4a\"]", "")
        .replace("sto_nonconvex", "det_nonconvex")
        .replace("[noise]\nsigma = 1.0\n", "");
    let c = parse(&ag);
    assert_eq!(c.replications(), 1);
    c.resolve().unwrap();
}

#[test]
fn unknown_fields_are_rejected() {
    let text = BASE.replace("seed = 5", "seed = 5\nsed = 6");
    assert!(matches!(
        ExperimentConfig::from_toml_str(&text),
        Err(Error::Parse(_))
    ));
    let text = BASE.replace(
        "name = \"sto_nonconvex\"",
        "name = \"sto_nonconvex\"\nlamda = 1.0",
    );
    assert!(matches!(
        ExperimentConfig::from_toml_str(&text),
        Err(Error::Parse(_))
    ));
    let text = BASE.replace("family = \"quadratic\"", "family = \"rosenbrock\"");
    assert!(matches!(
        ExperimentConfig::from_toml_str(&text),
        Err(Error::Parse(_))
    ));
}

#[test]
fn schema_version_is_checked() {
    let text = BASE.replace("schema_version = 1", "schema_version = 2");
    assert_eq!(field_of(&text), "schema_version");
    let text = BASE.replace("schema_version = 1", "");
    assert!(matches!(
        ExperimentConfig::from_toml_str(&text),
        Err(Error::Parse(_))
    ));
}

#[test]
fn invalid_combinations_name_their_field() {
    let cases = [
        (BASE.replace("x0 = 2.0", "x0 = [2.0, 1.0]"), "x0"),
        (BASE.replace("horizon = 100", "horizon = 0"), "horizon"),
        (BASE.replace("horizon = 100", ""), "horizon"),
        (
            BASE.replace("replications = 200", "replications = 50"),
            "replications",
        ),
        (
            BASE.replace("\"sto_nonconvex\"", "\"sto_convex\""),
            "bounds",
        ),
        (
            BASE.replace("algorithm = \"rsag\"", "algorithm = \"ag\""),
            "replications",
        ),
        (
            BASE.replace("algorithm = \"rsag\"", "algorithm = \"rsag_composite\""),
            "term",
        ),
        (
            BASE.replace("[noise]\nsigma = 1.0", "[noise]\nsigma = -1.0"),
            "noise.sigma",
        ),
        (
            BASE.replace(
                "name = \"sto_nonconvex\"",
                "name = \"sto_nonconvex\"\nlambda_choice = 2.0",
            ),
            "policy.lambda_choice",
        ),
        (
            BASE.replace(
                "name = \"sto_nonconvex\"",
                "name = \"sto_nonconvex\"\nd_tilde = 0.0",
            ),
            "policy.d_tilde",
        ),
        (
            format!("{BASE}\n[rsag]\nbatch = \"horizon_free\"\n"),
            "rsag.batch",
        ),
        (
            format!("{BASE}\n[rsag]\nfixed_iterations = 5\n"),
            "rsag.fixed_iterations",
        ),
        (format!("{BASE}\n[sweep]\nhorizons = [10, 20]\n"), "horizon"),
    ];
    for (text, field) in cases {
        assert_eq!(field_of(&text), field, "config:\n{text}");
    }
}

#[test]
fn composite_stochastic_needs_noise_or_fixed_batch() {
    let text = r#"
schema_version = 1
algorithm = "rsag_composite"
x0 = 1.0
horizon = 10
[problem]
family = "quadratic"
a = [[1.0]]
b = [0.0]
[term]
kind = "box"
lo = -2.0
hi = 2.0
[policy]
name = "det_convex"
"#;
    assert_eq!(field_of(text), "noise.sigma");
    let fixed = format!("{text}[rsag]\nbatch = \"fixed\"\nbatch_size = 3\n");
    let exp = parse(&fixed).resolve().unwrap();
    assert_eq!(exp.cells[0].batch.as_deref(), Some("fixed"));
    assert_eq!(exp.cells[0].d_tilde, None);
    let noisy = text.replace("[policy]", "[noise]\nsigma = 1.0\n[policy]");
    let exp = parse(&noisy).resolve().unwrap();
    // sqrt(|x*|^2 + M^2) with x* = 0 and M = 2.
    assert_eq!(exp.cells[0].d_tilde, Some(2.0));
    assert_eq!(exp.cells[0].batch.as_deref(), Some("horizon_dependent"));
    let outside = noisy.replace("x0 = 1.0", "x0 = 3.0");
    assert_eq!(field_of(&outside), "x0");
}

#[test]
fn composite_ag_rejects_nonconvex_policy() {
    let text = r#"
schema_version = 1
algorithm = "ag_composite"
x0 = 1.0
horizon = 10
[problem]
family = "quadratic"
a = [[1.0]]
b = [0.0]
[term]
kind = "box_plus_l1"
lo = -2.0
hi = 2.0
weight = 0.5
[policy]
name = "det_nonconvex"
"#;
    assert_eq!(field_of(text), "policy.name");
    assert!(parse(&text.replace("det_nonconvex", "det_convex"))
        .resolve()
        .is_ok());
}

#[test]
fn sweep_expands_to_product() {
    let text = BASE
        .replace("horizon = 100\n", "")
        .replace("bounds = [\"cor4a\"]", "")
        .replace("[noise]\nsigma = 1.0", "")
        .replace("[policy]\nname = \"sto_nonconvex\"", "[policy]")
        + "\n[sweep]\nhorizons = [10, 20, 40]\nsigmas = [0.5, 1.0]\npolicies = [\"sto_nonconvex\", \"sto_convex\"]\n";
    let exp = parse(&text).resolve().unwrap();
    assert_eq!(exp.cells.len(), 12);
    for (i, cell) in exp.cells.iter().enumerate() {
        assert_eq!(cell.index, i);
    }
    assert_eq!(exp.cells[0].horizon, 10);
    assert_eq!(exp.cells[1].horizon, 20);
    assert_eq!(exp.cells[3].sigma, 1.0);
    assert_eq!(exp.cells[6].policy, Some(Policy::StoConvex));
    assert_eq!(exp.cells[6].mode, Some(RsagMode::Convex));
}

#[test]
fn projected_gradient_defaults_to_inverse_l() {
    let text = r#"
schema_version = 1
algorithm = "projected_gradient"
x0 = [1.0, 1.0]
horizon = 5
[problem]
family = "ill_conditioned_quadratic"
cond = 100.0
dim = 2
"#;
    let exp = parse(text).resolve().unwrap();
    assert!((exp.cells[0].stepsize.unwrap() - 0.01).abs() < 1e-15);
    let bad = format!("{text}[projected_gradient]\nstepsize = 0.1\n");
    assert_eq!(field_of(&bad), "projected_gradient.stepsize");
    let with_policy = format!("{text}[policy]\nname = \"det_convex\"\n");
    assert_eq!(field_of(&with_policy), "policy.name");
}

#[test]
fn bundled_configs_resolve() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap().resolve().unwrap();
            count += 1;
        }
    }
    assert!(count >= 4);
}
