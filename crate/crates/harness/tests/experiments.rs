use std::fs;

use fahmc_harness::config::ReferenceSpec;
use fahmc_harness::experiments::{cmd_dim_vs_comm, cmd_run, cmd_sweep_local, cmd_sweep_stepsize};
use fahmc_harness::{ExperimentConfig, HarnessError};
use tempfile::TempDir;

fn config(body: &str, dir: &TempDir) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(body, "test.toml".as_ref()).unwrap();
    cfg.output.dir = dir.path().to_path_buf();
    cfg
}

const TWO_NODES: &str = r#"
[model]
kind = "quadratic"
dim = 2
nodes = [{ center = 2.0, precision = 1.0 }, { center = -1.0, precision = 0.5 }]

[federation]
local_period = 1
leapfrog_steps = 3
seed = 21

[schedule]
kind = "constant"
eta = 0.2

[stopping]
rule = "fixed-iterations"
iterations = 400

[output]
burn_in = 0.5

[reference]
source = "exact"
samples = 200
seed = 1

[sweep]
etas = [0.2, 0.5]
k_grid = [1]
heuristic_eta_max = 0.01
local_periods = [1, 5]
"#;

#[test]
fn stepsize_sweep_k1_row_equals_langevin_row() {
    let dir = TempDir::new().unwrap();
    let rows = cmd_sweep_stepsize(&config(TWO_NODES, &dir)).unwrap();
    assert_eq!(rows.len(), 4);
    for pair in rows.chunks(2) {
        assert_eq!((pair[0].algorithm, pair[0].k), ("fa-hmc", 1));
        assert_eq!(pair[1].algorithm, "fa-ld");
        assert_eq!(pair[0].eta, pair[1].eta);
        assert_eq!(pair[0].me, pair[1].me);
    }
    let csv = fs::read_to_string(dir.path().join("sweep_stepsize.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "algorithm,eta,K,T,me,n_samples"
    );
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn stepsize_sweep_error_shrinks_with_stepsize_down_to_the_floor() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(TWO_NODES, &dir);
    cfg.sweep.etas = vec![0.8, 0.4, 0.2];
    cfg.sweep.k_grid = vec![5];
    cfg.sweep.repeats = 3;
    cfg.stopping = toml::from_str("rule = \"fixed-iterations\"\niterations = 4000").unwrap();
    cfg.reference = Some(ReferenceSpec::Exact {
        samples: 2000,
        seed: 2,
    });
    let me: Vec<f64> = cmd_sweep_stepsize(&cfg)
        .unwrap()
        .into_iter()
        .filter(|r| r.algorithm == "fa-hmc")
        .map(|r| r.me)
        .collect();
    let reference = |seed: u64| {
        let mut c = cfg.clone();
        c.reference = Some(ReferenceSpec::Exact {
            samples: 2000,
            seed,
        });
        let fleet = c.build_fleet().unwrap();
        fahmc_harness::experiments::reference_samples(&c, &fleet, "test").unwrap()
    };
    let floor = fahmc_core::marginal_error(&reference(2), &reference(3)).unwrap();
    for w in me.windows(2) {
        assert!(w[1] <= w[0] + floor, "{me:?} (floor {floor})");
    }
    assert!(me[0] > me[2], "{me:?}");
}

#[test]
fn missing_reference_file_names_the_producing_command() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(TWO_NODES, &dir);
    cfg.reference = Some(ReferenceSpec::File {
        path: dir.path().join("absent/samples.bin"),
    });
    let err = cmd_sweep_stepsize(&cfg).unwrap_err();
    assert!(matches!(err, HarnessError::MissingReference { .. }));
    assert!(err.to_string().contains("fahmc run"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn local_sweep_reports_rounds_per_period() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(TWO_NODES, &dir);
    cfg.federation.replicates = 50;
    cfg.federation.theta0 = 8.0;
    cfg.stopping =
        toml::from_str("rule = \"me-threshold\"\nepsilon = 0.5\nmax_iterations = 2000").unwrap();
    let rows = cmd_sweep_local(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    let t1 = &rows[0];
    assert_eq!(t1.local_period, 1);
    assert_eq!(t1.rounds, t1.iterations);
    let t5 = &rows[1];
    let (r1, r5) = (t1.rounds.unwrap(), t5.rounds.unwrap());
    assert_eq!(t5.iterations, Some(5 * r5));
    assert!(r5 < r1, "T=1 needs {r1} rounds, T=5 needs {r5}");
    let csv = fs::read_to_string(dir.path().join("sweep_local.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "T,rounds,iterations,converged");

    let again = cmd_sweep_local(&cfg).unwrap();
    assert_eq!(rows, again);
}

const DIM_SWEEP: &str = r#"
[model]
kind = "quadratic"
dim = 2
nodes = [{ center = 3.0, precision = 1.0 }, { center = 1.0, precision = 0.5 }]

[federation]
local_period = 5
leapfrog_steps = 5
seed = 8
replicates = 20

[schedule]
kind = "constant"
eta = 0.1

[stopping]
rule = "w2-threshold"
epsilon = 0.5
max_iterations = 20000
moments = "pooled"

[sweep]
dims = [2]
eta_scale = 0.2
repeats = 2
"#;

#[test]
fn single_dimension_sweep_has_no_fit() {
    let dir = TempDir::new().unwrap();
    let report = cmd_dim_vs_comm(&config(DIM_SWEEP, &dir)).unwrap();
    assert_eq!(report.points.len(), 1);
    assert!(report.fit.is_none());
    assert_eq!(report.points[0].converged, 2);
    let fit = fs::read_to_string(dir.path().join("dim_vs_comm_fit.csv")).unwrap();
    assert_eq!(fit.lines().count(), 1);
    let rows = fs::read_to_string(dir.path().join("dim_vs_comm.csv")).unwrap();
    assert_eq!(
        rows.lines().next().unwrap(),
        "d,eta,rounds,rounds_se,repeats,converged"
    );
}

#[test]
fn rounds_standard_error_shrinks_with_replicates() {
    let dir = TempDir::new().unwrap();
    let se = |replicates: usize, seed: u64| {
        let mut cfg = config(DIM_SWEEP, &dir);
        cfg.federation.replicates = replicates;
        cfg.federation.seed = seed;
        cfg.sweep.repeats = 12;
        cmd_dim_vs_comm(&cfg).unwrap().points[0].rounds_se.unwrap()
    };
    let (small, large): (f64, f64) = (0..3)
        .map(|s| (se(8, s), se(32, s)))
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    assert!(large < small, "R=32 se {large}, R=8 se {small}");
}

#[test]
fn stochastic_gradient_accounting() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(TWO_NODES, &dir);
    cfg.federation.noise = toml::from_str("kind = \"additive-gaussian\"\nvariance = 1.0").unwrap();
    cfg.stopping = toml::from_str("rule = \"fixed-iterations\"\niterations = 25").unwrap();
    let summary = cmd_run(&cfg).unwrap();
    assert_eq!(summary.gradient_evals, 2 * 25 * 2 * 3);

    cfg.federation.noise = Default::default();
    let summary = cmd_run(&cfg).unwrap();
    assert_eq!(summary.gradient_evals, 2 * 25 * (3 + 1));
}
