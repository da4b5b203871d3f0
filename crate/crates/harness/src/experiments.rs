//! Experiment recipes behind the CLI verbs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fahmc_core::metrics::{self, PredictiveMetrics};
use fahmc_core::models::LogisticDataset;
use fahmc_core::parallel::{self, Execution};
use fahmc_core::rng::{self, StreamRole};
use fahmc_core::schedules::heuristic_k;
use fahmc_core::{
    ChainTrace, DiagGaussian, Ensemble, Federation, FederationConfig, SampleMatrix, TargetModel,
};
use serde::Serialize;

use crate::config::{
    Algorithm, ExperimentConfig, Fleet, MomentEstimator, ReferenceSpec, StoppingRule,
};
use crate::error::{HarnessError, Result};
use crate::io;

/// Models and core configuration for one algorithm run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub models: Vec<TargetModel>,
    pub federation: FederationConfig,
    pub debias: bool,
}

pub fn prepare(cfg: &ExperimentConfig, fleet: &Fleet, seed: u64) -> Result<Prepared> {
    let mut federation = cfg.federation_config(fleet, seed)?;
    let mut models = fleet.models.clone();
    let mut debias = false;
    match cfg.federation.algorithm {
        Algorithm::FaHmc => {}
        Algorithm::FaLd => federation.leapfrog_steps = 1,
        Algorithm::DebiasFaHmc => debias = true,
        Algorithm::SingleHmc => {
            models = vec![fleet.pooled_model()?];
            federation.weights = vec![1.0];
        }
    }
    Ok(Prepared {
        models,
        federation,
        debias,
    })
}

/// One chain for `iterations`, recording every `record_every`.
pub fn run_chain(
    prep: &Prepared,
    theta0: &[f64],
    iterations: usize,
    record_every: usize,
) -> Result<ChainTrace> {
    prep.federation.validate(iterations)?;
    let mut fed = Federation::new(prep.federation.clone(), &prep.models, theta0, prep.debias)?;
    let mut trace = ChainTrace::new(theta0.len());
    fed.advance(iterations, record_every, &mut trace)?;
    trace.add_gradient_evals(fed.gradient_evals() + fed.anchor_gradient_evals());
    Ok(trace)
}

/// Recorded samples after discarding the leading `burn_in` fraction.
pub fn post_burn_in(trace: &ChainTrace, burn_in: f64) -> Result<SampleMatrix> {
    let skip = (trace.len() as f64 * burn_in).floor() as usize;
    let kept = trace.len() - skip.min(trace.len().saturating_sub(1));
    let start = trace.len() - kept;
    Ok(SampleMatrix::new(
        kept,
        trace.dim(),
        trace.params_flat()[start * trace.dim()..].to_vec(),
    )?)
}

/// `W2²` between the sample moments and `target`.
pub fn moment_w2_sq(
    samples: &SampleMatrix,
    target: &DiagGaussian,
    estimator: MomentEstimator,
) -> Result<f64> {
    let w2 = match estimator {
        MomentEstimator::PerCoordinate => {
            metrics::w2_gaussian(&metrics::empirical_moments(samples)?, target)?
        }
        MomentEstimator::Pooled => {
            let d = target.dim();
            let isotropic = target.mean.iter().all(|m| *m == target.mean[0])
                && target.var.iter().all(|v| *v == target.var[0]);
            if !isotropic {
                return Err(HarnessError::config(
                    "stopping.moments",
                    "pooled moments need an isotropic target",
                ));
            }
            let pooled = metrics::empirical_moments(&samples.pooled())?;
            let est = DiagGaussian::isotropic(d, pooled.mean[0], pooled.var[0])?;
            metrics::w2_gaussian(&est, target)?
        }
    };
    Ok(w2 * w2)
}

/// Marginal error after thinning the larger set to the smaller size.
pub fn marginal_error_matched(a: &SampleMatrix, b: &SampleMatrix) -> Result<f64> {
    let n = a.rows().min(b.rows());
    let a = if a.rows() > n {
        a.strided_subsample(n)?
    } else {
        a.clone()
    };
    let b = if b.rows() > n {
        b.strided_subsample(n)?
    } else {
        b.clone()
    };
    Ok(metrics::marginal_error(&a, &b)?)
}

/// `samples` i.i.d. draws from a diagonal Gaussian.
pub fn gaussian_draws(target: &DiagGaussian, samples: usize, seed: u64) -> Result<SampleMatrix> {
    let mut stream = rng::stream(seed, StreamRole::Initialization, 0, 0);
    let d = target.dim();
    let mut data = rng::standard_normal_vec(&mut stream, samples * d);
    for (i, x) in data.iter_mut().enumerate() {
        let j = i % d;
        *x = target.mean[j] + target.var[j].sqrt() * *x;
    }
    Ok(SampleMatrix::new(samples, d, data)?)
}

pub fn reference_samples(
    cfg: &ExperimentConfig,
    fleet: &Fleet,
    command: &str,
) -> Result<SampleMatrix> {
    match &cfg.reference {
        None => Err(HarnessError::config(
            "reference",
            format!("`{command}` needs a [reference] section (source = \"exact\" for quadratic fleets, or source = \"file\" with samples written by `fahmc run`)"),
        )),
        Some(ReferenceSpec::Exact { samples, seed }) => {
            let target = fleet
                .target
                .as_ref()
                .ok_or_else(|| HarnessError::config("reference.source", "exact references need a quadratic model"))?;
            gaussian_draws(target, *samples, *seed)
        }
        Some(ReferenceSpec::File { path }) => {
            let samples = io::read_samples(path)?;
            if samples.cols() != fleet.dim() {
                return Err(HarnessError::Data {
                    path: path.clone(),
                    message: format!("reference has {} columns, model has {}", samples.cols(), fleet.dim()),
                });
            }
            Ok(samples)
        }
    }
}

/// Posterior-predictive probabilities averaged over (at most 200) samples.
pub fn predictive_scores(
    data: &LogisticDataset,
    samples: &SampleMatrix,
) -> Result<PredictiveMetrics> {
    let thin = if samples.rows() > 200 {
        samples.strided_subsample(200)?
    } else {
        samples.clone()
    };
    let d = data.dim;
    let probs: Vec<f64> = (0..data.len())
        .map(|i| {
            let x = &data.features[i * d..(i + 1) * d];
            let total: f64 = (0..thin.rows())
                .map(|s| {
                    let z = fahmc_core::vector::dot(x, thin.row(s));
                    1.0 / (1.0 + (-z).exp())
                })
                .sum();
            total / thin.rows() as f64
        })
        .collect();
    let labels: Vec<u8> = data.labels.iter().map(|y| *y as u8).collect();
    Ok(metrics::predictive_metrics(&probs, &labels)?)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FinalMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w2_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub me: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_hat_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictive: Option<PredictiveMetrics>,
    pub theta_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: &'static str,
    pub iterations: usize,
    pub replicates: usize,
    pub leapfrog_steps: usize,
    pub local_period: usize,
    pub gradient_evals: u64,
    pub wall_time_s: f64,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds_to_w2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds_to_me: Option<f64>,
    pub converged: bool,
    pub outputs: Vec<PathBuf>,
}

/// Outcome of advancing replicates until a metric crosses a threshold.
#[derive(Debug, Clone)]
pub struct ThresholdRun {
    /// Iteration of the first crossing.
    pub crossed_at: Option<usize>,
    pub trace: ChainTrace,
    pub last_thetas: SampleMatrix,
    pub gradient_evals: u64,
}

/// Advances `replicates` lockstep federations, evaluating `metric` on the
/// replicate parameters after every `T` iterations until it drops below
/// `epsilon` or `max_iterations` is reached.
pub fn run_to_threshold<M>(
    prep: &Prepared,
    theta0: &[f64],
    replicates: usize,
    epsilon: f64,
    max_iterations: usize,
    metric_name: &str,
    metric: M,
) -> Result<ThresholdRun>
where
    M: Fn(&SampleMatrix) -> Result<f64>,
{
    let fed = &prep.federation;
    fed.validate(max_iterations)?;
    let period = fed.local_period;
    let mut ens = Ensemble::new(fed, &prep.models, theta0, replicates, prep.debias)?;
    let mut trace = ChainTrace::new(theta0.len());
    let mut values = Vec::new();
    let mut crossed_at = None;
    let mut thetas = ens.global_thetas()?;
    while ens.iteration() < max_iterations {
        let start = ens.iteration();
        let step = period.min(max_iterations - start);
        ens.advance(step)?;
        for t in start..start + step {
            trace.push_iteration(fed.schedule.eta(t), t % period == 0);
        }
        thetas = ens.global_thetas()?;
        let value = metric(&thetas)?;
        trace.record(ens.iteration(), thetas.row(0));
        values.push(value);
        if value < epsilon {
            crossed_at = Some(ens.iteration());
            break;
        }
    }
    trace.add_metric(metric_name, values);
    trace.add_gradient_evals(ens.gradient_evals());
    Ok(ThresholdRun {
        crossed_at,
        trace,
        last_thetas: thetas,
        gradient_evals: ens.gradient_evals(),
    })
}

fn write_trace(path: &Path, trace: &ChainTrace) -> Result<()> {
    io::write_atomic(path, |w| trace.write_csv(w))
}

/// `run`: executes the configured algorithm and writes `trace.csv`,
/// `samples.csv`, `samples.bin` and `summary.json` under the output directory.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let started = Instant::now();
    let fleet = cfg.build_fleet()?;
    let seed = cfg.federation.seed;
    let prep = prepare(cfg, &fleet, seed)?;
    let theta0 = cfg.theta0();
    let out = &cfg.output.dir;
    let replicates = cfg.federation.replicates;
    let trace_path = out.join("trace.csv");
    let mut outputs = vec![trace_path.clone()];
    let mut summary = RunSummary {
        algorithm: cfg.federation.algorithm.name(),
        iterations: 0,
        replicates,
        leapfrog_steps: prep.federation.leapfrog_steps,
        local_period: prep.federation.local_period,
        gradient_evals: 0,
        wall_time_s: 0.0,
        final_metrics: FinalMetrics::default(),
        rounds_to_w2: None,
        rounds_to_me: None,
        converged: true,
        outputs: Vec::new(),
    };

    match &cfg.stopping {
        StoppingRule::FixedIterations { iterations } => {
            let exec = if replicates > 1 {
                Execution::Parallel
            } else {
                Execution::Sequential
            };
            let traces = parallel::map_indexed(exec, replicates, |r| {
                let mut p = prep.clone();
                p.federation.master_seed = rng::replicate_seed(seed, r as u64);
                if replicates > 1 {
                    p.federation.execution = Execution::Sequential;
                }
                run_chain(&p, &theta0, *iterations, cfg.output.record_every)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let mut trace = traces[0].clone();
            if let (Some(target), true) = (&fleet.target, replicates > 1) {
                let values = (0..trace.len())
                    .map(|k| {
                        let rows: Vec<&[f64]> = traces.iter().map(|t| t.param(k)).collect();
                        moment_w2_sq(
                            &SampleMatrix::from_rows(&rows)?,
                            target,
                            MomentEstimator::PerCoordinate,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                trace.add_metric("w2_sq", values);
            }
            let chains = traces
                .iter()
                .map(|t| post_burn_in(t, cfg.output.burn_in))
                .collect::<Result<Vec<_>>>()?;
            let mut pooled = Vec::new();
            for c in &chains {
                pooled.extend_from_slice(c.data());
            }
            let samples = SampleMatrix::new(pooled.len() / fleet.dim(), fleet.dim(), pooled)?;
            let fm = &mut summary.final_metrics;
            if let (Some(target), true) = (&fleet.target, samples.rows() >= 2) {
                fm.w2_sq = Some(moment_w2_sq(
                    &samples,
                    target,
                    MomentEstimator::PerCoordinate,
                )?);
            }
            if cfg.reference.is_some() {
                let reference = reference_samples(cfg, &fleet, "run")?;
                fm.me = Some(marginal_error_matched(&samples, &reference)?);
            }
            if chains[0].rows() >= 4 {
                let r = metrics::split_r_hat(&chains)?;
                fm.r_hat_max = r.into_iter().reduce(f64::max);
            }
            if let Some(data) = &fleet.data {
                fm.predictive = Some(predictive_scores(data, &samples)?);
            }
            fm.theta_norm = fahmc_core::vector::norm(trace.last().unwrap_or(&theta0));
            summary.iterations = *iterations;
            summary.gradient_evals = traces.iter().map(|t| t.gradient_evals()).sum();
            write_trace(&trace_path, &trace)?;
            for name in ["samples.csv", "samples.bin"] {
                let p = out.join(name);
                io::write_samples(&p, &samples)?;
                outputs.push(p);
            }
        }
        StoppingRule::W2Threshold {
            epsilon,
            max_iterations,
            moments,
        } => {
            let target = fleet.target.clone().ok_or_else(|| {
                HarnessError::config("stopping.rule", "w2-threshold needs a quadratic model")
            })?;
            let run = run_to_threshold(
                &prep,
                &theta0,
                replicates,
                *epsilon,
                *max_iterations,
                "w2_sq",
                |s| moment_w2_sq(s, &target, *moments),
            )?;
            finish_threshold(&mut summary, &run, out, &trace_path, &mut outputs)?;
            summary.rounds_to_w2 = run
                .crossed_at
                .map(|t| t as f64 / prep.federation.local_period as f64);
            summary.final_metrics.w2_sq = run.trace.metrics()[0].1.last().copied();
        }
        StoppingRule::MeThreshold {
            epsilon,
            max_iterations,
        } => {
            let reference = reference_samples(cfg, &fleet, "run")?;
            let run = run_to_threshold(
                &prep,
                &theta0,
                replicates,
                *epsilon,
                *max_iterations,
                "me",
                |s| marginal_error_matched(s, &reference),
            )?;
            finish_threshold(&mut summary, &run, out, &trace_path, &mut outputs)?;
            summary.rounds_to_me = run
                .crossed_at
                .map(|t| t as f64 / prep.federation.local_period as f64);
            summary.final_metrics.me = run.trace.metrics()[0].1.last().copied();
        }
    }
    summary.wall_time_s = started.elapsed().as_secs_f64();
    let summary_path = out.join("summary.json");
    outputs.push(summary_path.clone());
    summary.outputs = outputs;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    io::write_atomic(&summary_path, |w| w.write_all(json.as_bytes()))?;
    Ok(summary)
}

fn finish_threshold(
    summary: &mut RunSummary,
    run: &ThresholdRun,
    out: &Path,
    trace_path: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<()> {
    write_trace(trace_path, &run.trace)?;
    let p = out.join("samples.bin");
    io::write_samples(&p, &run.last_thetas)?;
    outputs.push(p);
    summary.iterations = run.trace.iterations();
    summary.gradient_evals = run.gradient_evals;
    summary.converged = run.crossed_at.is_some();
    summary.final_metrics.theta_norm = fahmc_core::vector::norm(run.last_thetas.row(0));
    Ok(())
}

/// Least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
        points: xs.len(),
    })
}

/// Seed of repeat `k` of a sweep point; disjoint from the replicate ladder.
pub fn repeat_seed(base: u64, k: usize) -> u64 {
    rng::replicate_seed(base ^ 0xD1B5_4A32_D192_ED03, k as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimPoint {
    pub dim: usize,
    pub eta: f64,
    /// Mean rounds `t_ε/T` over converged repeats.
    pub rounds: Option<f64>,
    pub rounds_se: Option<f64>,
    pub repeats: usize,
    pub converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimReport {
    pub points: Vec<DimPoint>,
    pub fit: Option<LinearFit>,
}

fn mean_and_se(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    match xs.len() {
        0 => (None, None),
        1 => (Some(xs[0]), None),
        n => {
            let m = fahmc_core::vector::mean(xs);
            (
                Some(m),
                Some((fahmc_core::vector::variance(xs) / n as f64).sqrt()),
            )
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// `dim-vs-comm`: rounds until `W2² < ε` for each dimension with
/// `η = eta_scale / d^{1/4}`, and a least-squares fit of rounds² against `d`.
pub fn cmd_dim_vs_comm(cfg: &ExperimentConfig) -> Result<DimReport> {
    let (epsilon, max_iterations, moments) = match &cfg.stopping {
        StoppingRule::W2Threshold {
            epsilon,
            max_iterations,
            moments,
        } => (*epsilon, *max_iterations, *moments),
        _ => {
            return Err(HarnessError::config(
                "stopping.rule",
                "dim-vs-comm needs rule = \"w2-threshold\"",
            ))
        }
    };
    if cfg.sweep.dims.is_empty() {
        return Err(HarnessError::config(
            "sweep.dims",
            "dim-vs-comm needs at least one dimension",
        ));
    }
    let mut points = Vec::new();
    for &dim in &cfg.sweep.dims {
        let mut c = cfg.with_dim(dim);
        let eta = cfg.sweep.eta_scale / (dim as f64).powf(0.25);
        c.schedule = crate::config::ScheduleSpec::Constant { eta };
        let fleet = c.build_fleet()?;
        let target = fleet.target.clone().ok_or_else(|| {
            HarnessError::config("model.kind", "dim-vs-comm needs a quadratic fleet")
        })?;
        let mut rounds = Vec::new();
        for k in 0..cfg.sweep.repeats {
            let prep = prepare(&c, &fleet, repeat_seed(cfg.federation.seed, k))?;
            let run = run_to_threshold(
                &prep,
                &c.theta0(),
                c.federation.replicates,
                epsilon,
                max_iterations,
                "w2_sq",
                |s| moment_w2_sq(s, &target, moments),
            )?;
            if let Some(t) = run.crossed_at {
                rounds.push(t as f64 / c.federation.local_period as f64);
            }
        }
        let (mean, se) = mean_and_se(&rounds);
        points.push(DimPoint {
            dim,
            eta,
            rounds: mean,
            rounds_se: se,
            repeats: cfg.sweep.repeats,
            converged: rounds.len(),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|p| p.rounds.map(|r| (p.dim as f64, r * r)))
        .unzip();
    let fit = linear_fit(&xs, &ys);
    let out = &cfg.output.dir;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.dim.to_string(),
                p.eta.to_string(),
                fmt_opt(p.rounds),
                fmt_opt(p.rounds_se),
                p.repeats.to_string(),
                p.converged.to_string(),
            ]
        })
        .collect();
    io::write_table(
        &out.join("dim_vs_comm.csv"),
        &["d", "eta", "rounds", "rounds_se", "repeats", "converged"],
        &rows,
    )?;
    let fit_rows: Vec<Vec<String>> = fit
        .iter()
        .map(|f| {
            vec![
                f.slope.to_string(),
                f.intercept.to_string(),
                f.r_squared.to_string(),
                f.points.to_string(),
            ]
        })
        .collect();
    io::write_table(
        &out.join("dim_vs_comm_fit.csv"),
        &["slope", "intercept", "r_squared", "points"],
        &fit_rows,
    )?;
    if points.iter().all(|p| p.rounds.is_none()) {
        return Err(HarnessError::NonConvergence(format!(
            "no dimension reached W2^2 < {epsilon} within {max_iterations} iterations"
        )));
    }
    Ok(DimReport { points, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepsizeRow {
    pub algorithm: &'static str,
    pub eta: f64,
    pub k: usize,
    pub local_period: usize,
    pub me: f64,
    pub n_samples: usize,
}

/// `sweep-stepsize`: post-burn-in marginal error against the reference for
/// FA-HMC and FA-LD at every stepsize, averaged over `sweep.repeats` seeds.
pub fn cmd_sweep_stepsize(cfg: &ExperimentConfig) -> Result<Vec<StepsizeRow>> {
    let iterations = match &cfg.stopping {
        StoppingRule::FixedIterations { iterations } => *iterations,
        _ => {
            return Err(HarnessError::config(
                "stopping.rule",
                "sweep-stepsize runs a fixed budget; use rule = \"fixed-iterations\"",
            ))
        }
    };
    if cfg.sweep.etas.is_empty() {
        return Err(HarnessError::config(
            "sweep.etas",
            "needs at least one stepsize",
        ));
    }
    let fleet = cfg.build_fleet()?;
    let reference = reference_samples(cfg, &fleet, "sweep-stepsize")?;
    let theta0 = cfg.theta0();

    let mut points: Vec<(Algorithm, f64, usize)> = Vec::new();
    for &eta in &cfg.sweep.etas {
        let ks = if eta <= cfg.sweep.heuristic_eta_max || cfg.sweep.k_grid.is_empty() {
            vec![heuristic_k(eta)]
        } else {
            cfg.sweep.k_grid.clone()
        };
        for k in ks {
            points.push((Algorithm::FaHmc, eta, k));
        }
        points.push((Algorithm::FaLd, eta, 1));
    }
    let repeats = cfg.sweep.repeats;
    let jobs = points.len() * repeats;
    let results = parallel::map_indexed(Execution::Parallel, jobs, |job| -> Result<(f64, usize)> {
        let (alg, eta, k) = points[job / repeats];
        let mut c = cfg.clone();
        c.schedule = crate::config::ScheduleSpec::Constant { eta };
        c.federation.algorithm = alg;
        c.federation.leapfrog_steps = Some(k);
        let mut prep = prepare(&c, &fleet, repeat_seed(cfg.federation.seed, job % repeats))?;
        prep.federation.execution = Execution::Sequential;
        let trace = run_chain(&prep, &theta0, iterations, cfg.output.record_every)?;
        let samples = post_burn_in(&trace, cfg.output.burn_in)?;
        let me = marginal_error_matched(&samples, &reference)?;
        Ok((me, samples.rows().min(reference.rows())))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let rows: Vec<StepsizeRow> = points
        .iter()
        .enumerate()
        .map(|(i, &(alg, eta, k))| {
            let chunk = &results[i * repeats..(i + 1) * repeats];
            StepsizeRow {
                algorithm: alg.name(),
                eta,
                k,
                local_period: cfg.federation.local_period,
                me: chunk.iter().map(|r| r.0).sum::<f64>() / repeats as f64,
                n_samples: chunk[0].1,
            }
        })
        .collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.algorithm.to_string(),
                r.eta.to_string(),
                r.k.to_string(),
                r.local_period.to_string(),
                r.me.to_string(),
                r.n_samples.to_string(),
            ]
        })
        .collect();
    io::write_table(
        &cfg.output.dir.join("sweep_stepsize.csv"),
        &["algorithm", "eta", "K", "T", "me", "n_samples"],
        &table,
    )?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalRow {
    pub local_period: usize,
    pub rounds: Option<usize>,
    pub iterations: Option<usize>,
}

/// `sweep-local`: for each sync period `T`, the first round at which the
/// marginal error of the replicates against the reference drops below `ε`.
pub fn cmd_sweep_local(cfg: &ExperimentConfig) -> Result<Vec<LocalRow>> {
    let (epsilon, max_iterations) = match &cfg.stopping {
        StoppingRule::MeThreshold {
            epsilon,
            max_iterations,
        } => (*epsilon, *max_iterations),
        _ => {
            return Err(HarnessError::config(
                "stopping.rule",
                "sweep-local needs rule = \"me-threshold\"",
            ))
        }
    };
    if cfg.sweep.local_periods.is_empty() {
        return Err(HarnessError::config(
            "sweep.local_periods",
            "needs at least one period",
        ));
    }
    let fleet = cfg.build_fleet()?;
    let reference = reference_samples(cfg, &fleet, "sweep-local")?;
    let replicates = cfg.federation.replicates;
    if reference.rows() < replicates {
        return Err(HarnessError::config(
            "reference.samples",
            format!(
                "reference has {} rows, fewer than {replicates} replicates",
                reference.rows()
            ),
        ));
    }
    let matched = reference.strided_subsample(replicates)?;
    let mut rows = Vec::new();
    for &period in &cfg.sweep.local_periods {
        let mut c = cfg.clone();
        c.federation.local_period = period;
        let prep = prepare(&c, &fleet, cfg.federation.seed)?;
        let run = run_to_threshold(
            &prep,
            &c.theta0(),
            replicates,
            epsilon,
            max_iterations,
            "me",
            |s| Ok(metrics::marginal_error(s, &matched)?),
        )?;
        rows.push(LocalRow {
            local_period: period,
            rounds: run.crossed_at.map(|t| t / period),
            iterations: run.crossed_at,
        });
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.local_period.to_string(),
                r.rounds.map_or_else(String::new, |v| v.to_string()),
                r.iterations.map_or_else(String::new, |v| v.to_string()),
                u8::from(r.rounds.is_some()).to_string(),
            ]
        })
        .collect();
    io::write_table(
        &cfg.output.dir.join("sweep_local.csv"),
        &["T", "rounds", "iterations", "converged"],
        &table,
    )?;
    if rows.iter().all(|r| r.rounds.is_none()) {
        return Err(HarnessError::NonConvergence(format!(
            "no sync period reached ME < {epsilon} within {max_iterations} iterations"
        )));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub me: f64,
    pub rows_a: usize,
    pub rows_b: usize,
    pub rows_used: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_w2: Option<f64>,
}

/// `compare`: marginal error (and moment `W2`) between two sample files.
pub fn cmd_compare(a: &Path, b: &Path) -> Result<CompareReport> {
    let sa = io::read_samples(a)?;
    let sb = io::read_samples(b)?;
    if sa.cols() != sb.cols() {
        return Err(HarnessError::Data {
            path: b.to_path_buf(),
            message: format!("{} columns, expected {}", sb.cols(), sa.cols()),
        });
    }
    let moment_w2 = if sa.rows() >= 2 && sb.rows() >= 2 {
        Some(metrics::w2_gaussian(
            &metrics::empirical_moments(&sa)?,
            &metrics::empirical_moments(&sb)?,
        )?)
    } else {
        None
    };
    Ok(CompareReport {
        me: marginal_error_matched(&sa, &sb)?,
        rows_a: sa.rows(),
        rows_b: sb.rows(),
        rows_used: sa.rows().min(sb.rows()),
        moment_w2,
    })
}

/// `gen-logistic-data`: writes the synthetic logistic dataset to `data.csv`.
pub fn cmd_gen_logistic_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let (dim, samples, feature_scale, data_seed) = match &cfg.model {
        crate::config::ModelSpec::Logistic {
            dim,
            samples,
            feature_scale,
            data_seed,
            ..
        } => (*dim, *samples, *feature_scale, *data_seed),
        _ => {
            return Err(HarnessError::config(
                "model.kind",
                "gen-logistic-data needs kind = \"logistic\"",
            ))
        }
    };
    let data = LogisticDataset::generate(samples, dim, data_seed, feature_scale)?;
    let path = cfg.output.dir.join("data.csv");
    io::write_logistic_csv(&path, &data)?;
    Ok(path)
}
