use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fahmc_core::metrics::marginal_error_with;
use fahmc_core::{
    marginal_error, Ensemble, Execution, Federation, FederationConfig, GradientNoise,
    QuadraticNode, SampleMatrix, TargetModel,
};
use std::hint::black_box;

fn fleet(nodes: usize, dim: usize) -> Vec<TargetModel> {
    (0..nodes)
        .map(|c| {
            QuadraticNode::isotropic(dim, c as f64, 1.0 + 0.1 * c as f64)
                .unwrap()
                .into()
        })
        .collect()
}

fn config(nodes: usize, exec: Execution) -> FederationConfig {
    let mut cfg = FederationConfig::uniform(nodes, 10, 20, 0.05, 7);
    cfg.rho = 0.5;
    cfg.noise = GradientNoise::AdditiveGaussian { variance: 1.0 };
    cfg.execution = exec;
    cfg
}

const POLICIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn nodes(c: &mut Criterion) {
    let models = fleet(16, 256);
    let mut group = c.benchmark_group("federation_step");
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut fed = Federation::new(config(16, exec), &models, &[0.0; 256], false).unwrap();
            b.iter(|| black_box(fed.step().unwrap()));
        });
    }
    group.finish();
}

fn replicates(c: &mut Criterion) {
    let models = fleet(2, 16);
    let mut group = c.benchmark_group("ensemble_advance");
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut ens = Ensemble::new(&config(2, exec), &models, &[0.0; 16], 64, false).unwrap();
            b.iter(|| ens.advance(black_box(5)).unwrap());
        });
    }
    group.finish();
}

fn columns(c: &mut Criterion) {
    let (n, d) = (2000, 200);
    let a = SampleMatrix::new(
        n,
        d,
        (0..n * d).map(|i| ((i * 7919) % 1013) as f64).collect(),
    )
    .unwrap();
    let b = SampleMatrix::new(
        n,
        d,
        (0..n * d).map(|i| ((i * 104_729) % 997) as f64).collect(),
    )
    .unwrap();
    black_box(marginal_error(&a, &b).unwrap());
    let mut group = c.benchmark_group("marginal_error");
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| black_box(marginal_error_with(exec, &a, &b).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, nodes, replicates, columns);
criterion_main!(benches);
