//! Experiment configuration (TOML).
//!
//! ```toml
//! [model]
//! kind = "quadratic"
//! dim = 10
//! nodes = [{ center = 20.0, precision = 1.0 }, { center = 1.0, precision = 0.5 }]
//!
//! [federation]
//! algorithm = "fa-hmc"
//! local_period = 10
//! leapfrog_steps = 5
//!
//! [schedule]
//! kind = "constant"
//! eta = 0.01
//!
//! [stopping]
//! rule = "fixed-iterations"
//! iterations = 1000
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use fahmc_core::models::LogisticDataset;
use fahmc_core::schedules::{self, TheoremInputs};
use fahmc_core::{
    DebiasAnchor, DiagGaussian, FederationConfig, FirstEpochAnchor, GradientNoise, QuadraticNode,
    StepsizeSchedule, TargetModel,
};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::io;

/// Default iteration cap for threshold stopping rules.
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub federation: FederationSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub stopping: StoppingRule,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
    #[serde(default)]
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// One isotropic quadratic `(λ/2)‖θ − m·1‖²` per node.
    Quadratic {
        dim: usize,
        nodes: Vec<QuadraticNodeSpec>,
    },
    /// Synthetic (or file-backed) logistic regression split across nodes.
    Logistic {
        dim: usize,
        nodes: usize,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "one")]
        feature_scale: f64,
        #[serde(default = "one")]
        prior_precision: f64,
        #[serde(default)]
        data_seed: u64,
        /// CSV written by `gen-logistic-data`; overrides the synthetic law.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticNodeSpec {
    pub center: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    FaHmc,
    FaLd,
    DebiasFaHmc,
    /// Plain HMC on the pooled target `Σ w_c f^(c)`.
    SingleHmc,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FaHmc => "fa-hmc",
            Algorithm::FaLd => "fa-ld",
            Algorithm::DebiasFaHmc => "debias-fa-hmc",
            Algorithm::SingleHmc => "single-hmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSpec {
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Defaults to equal weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "one_usize")]
    pub local_period: usize,
    /// Defaults to `⌊π/(3η_0)⌋`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leapfrog_steps: Option<usize>,
    #[serde(default = "one")]
    pub rho: f64,
    #[serde(default)]
    pub noise: GradientNoise,
    #[serde(default)]
    pub debias_anchor: DebiasAnchor,
    #[serde(default)]
    pub debias_first_epoch: FirstEpochAnchor,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub replicates: usize,
    /// Every coordinate of `θ_0`.
    #[serde(default)]
    pub theta0: f64,
}

impl Default for FederationSpec {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::default(),
            weights: None,
            local_period: 1,
            leapfrog_steps: None,
            rho: 1.0,
            noise: GradientNoise::default(),
            debias_anchor: DebiasAnchor::default(),
            debias_first_epoch: FirstEpochAnchor::default(),
            seed: 0,
            replicates: 1,
            theta0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant {
        eta: f64,
    },
    EpochDoubling {
        eta_init: f64,
        t1: usize,
        decay: f64,
    },
    Piecewise {
        breakpoints: Vec<(usize, f64)>,
    },
    /// Constant stepsize from the convergence theorem for target accuracy `epsilon`.
    Theorem {
        epsilon: f64,
        #[serde(default = "one")]
        c: f64,
        #[serde(default)]
        sigma_g: f64,
    },
    /// Epoch-doubling schedule from initial distance `initial_distance`.
    Dynamic {
        initial_distance: f64,
        gamma: f64,
        #[serde(default)]
        sigma_g: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_d: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentEstimator {
    /// Mean and variance of every coordinate separately.
    #[default]
    PerCoordinate,
    /// One mean and variance from all coordinates (isotropic targets only).
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StoppingRule {
    FixedIterations {
        iterations: usize,
    },
    /// Stop at the first sync where `W2²` between the replicate moments and the
    /// closed-form target drops below `epsilon`.
    W2Threshold {
        epsilon: f64,
        #[serde(default = "default_max_iterations")]
        max_iterations: usize,
        #[serde(default)]
        moments: MomentEstimator,
    },
    /// Stop at the first sync where the marginal error between the replicates
    /// and the reference drops below `epsilon`.
    MeThreshold {
        epsilon: f64,
        #[serde(default = "default_max_iterations")]
        max_iterations: usize,
    },
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule::FixedIterations { iterations: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "one_usize")]
    pub record_every: usize,
    /// Fraction of recorded samples discarded as burn-in.
    #[serde(default = "half")]
    pub burn_in: f64,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            record_every: 1,
            burn_in: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// I.i.d. draws from the closed-form posterior of a quadratic fleet.
    Exact {
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Samples written by `run` (`samples.bin` or `samples.csv`).
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dims: Vec<usize>,
    /// `η = eta_scale / d^{1/4}` in `dim-vs-comm`.
    #[serde(default = "default_eta_scale")]
    pub eta_scale: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub etas: Vec<f64>,
    /// Leapfrog counts tried above `heuristic_eta_max`; empty means the heuristic everywhere.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k_grid: Vec<usize>,
    #[serde(default = "default_heuristic_eta_max")]
    pub heuristic_eta_max: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub local_periods: Vec<usize>,
    /// Independent seeds per sweep point.
    #[serde(default = "one_usize")]
    pub repeats: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            dims: Vec::new(),
            eta_scale: default_eta_scale(),
            etas: Vec::new(),
            k_grid: Vec::new(),
            heuristic_eta_max: default_heuristic_eta_max(),
            local_periods: Vec::new(),
            repeats: 1,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn one_usize() -> usize {
    1
}
fn default_samples() -> usize {
    1000
}
fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_eta_scale() -> f64 {
    0.02
}
fn default_heuristic_eta_max() -> f64 {
    0.01
}

/// A materialized fleet.
#[derive(Debug, Clone)]
pub struct Fleet {
    pub models: Vec<TargetModel>,
    pub weights: Vec<f64>,
    /// Closed-form target, when the fleet is quadratic.
    pub target: Option<DiagGaussian>,
    /// Pooled data `(features, labels)` for logistic fleets.
    pub data: Option<LogisticDataset>,
}

impl Fleet {
    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn pooled_model(&self) -> Result<TargetModel> {
        Ok(TargetModel::weighted_sum(&self.weights, &self.models)?)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|source| HarnessError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelSpec::Quadratic { dim, nodes } => {
                if *dim == 0 {
                    return Err(HarnessError::config("model.dim", "must be >= 1"));
                }
                if nodes.is_empty() {
                    return Err(HarnessError::config(
                        "model.nodes",
                        "needs at least one node",
                    ));
                }
                for (i, n) in nodes.iter().enumerate() {
                    if !(n.precision > 0.0 && n.precision.is_finite()) {
                        return Err(HarnessError::config(
                            format!("model.nodes[{i}].precision"),
                            "must be positive",
                        ));
                    }
                }
            }
            ModelSpec::Logistic {
                dim,
                nodes,
                samples,
                feature_scale,
                prior_precision,
                data,
                ..
            } => {
                if *dim == 0 {
                    return Err(HarnessError::config("model.dim", "must be >= 1"));
                }
                if *nodes == 0 {
                    return Err(HarnessError::config("model.nodes", "must be >= 1"));
                }
                if data.is_none() && *samples < *nodes {
                    return Err(HarnessError::config(
                        "model.samples",
                        "must be at least the node count",
                    ));
                }
                if !(*feature_scale > 0.0) {
                    return Err(HarnessError::config(
                        "model.feature_scale",
                        "must be positive",
                    ));
                }
                if !(*prior_precision >= 0.0) {
                    return Err(HarnessError::config(
                        "model.prior_precision",
                        "must be non-negative",
                    ));
                }
            }
        }
        let fed = &self.federation;
        if let Some(w) = &fed.weights {
            if w.len() != self.node_count() {
                return Err(HarnessError::config(
                    "federation.weights",
                    format!("has {} entries for {} nodes", w.len(), self.node_count()),
                ));
            }
            let total: f64 = w.iter().sum();
            if w.iter().any(|x| !(*x > 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(HarnessError::config(
                    "federation.weights",
                    "must be positive and sum to 1",
                ));
            }
        }
        if fed.local_period == 0 {
            return Err(HarnessError::config(
                "federation.local_period",
                "must be >= 1",
            ));
        }
        if fed.leapfrog_steps == Some(0) {
            return Err(HarnessError::config(
                "federation.leapfrog_steps",
                "must be >= 1",
            ));
        }
        if !(0.0..=1.0).contains(&fed.rho) {
            return Err(HarnessError::config("federation.rho", "must lie in [0, 1]"));
        }
        if fed.replicates == 0 {
            return Err(HarnessError::config(
                "federation.replicates",
                "must be >= 1",
            ));
        }
        match fed.noise {
            GradientNoise::AdditiveGaussian { variance } if !(variance >= 0.0) => {
                return Err(HarnessError::config(
                    "federation.noise.variance",
                    "must be non-negative",
                ));
            }
            GradientNoise::Minibatch { batch_size } => {
                if batch_size == 0 {
                    return Err(HarnessError::config(
                        "federation.noise.batch_size",
                        "must be >= 1",
                    ));
                }
                if matches!(self.model, ModelSpec::Quadratic { .. }) {
                    return Err(HarnessError::config(
                        "federation.noise",
                        "minibatch noise needs a data-backed model",
                    ));
                }
            }
            _ => {}
        }
        if matches!(
            self.schedule,
            ScheduleSpec::Theorem { .. } | ScheduleSpec::Dynamic { .. }
        ) && fed.leapfrog_steps.is_none()
        {
            return Err(HarnessError::config(
                "federation.leapfrog_steps",
                "required with the theorem and dynamic schedules",
            ));
        }
        match &self.stopping {
            StoppingRule::FixedIterations { iterations } if *iterations == 0 => {
                return Err(HarnessError::config("stopping.iterations", "must be >= 1"));
            }
            StoppingRule::W2Threshold {
                epsilon,
                max_iterations,
                ..
            }
            | StoppingRule::MeThreshold {
                epsilon,
                max_iterations,
            } => {
                if !(*epsilon > 0.0) {
                    return Err(HarnessError::config("stopping.epsilon", "must be positive"));
                }
                if *max_iterations == 0 {
                    return Err(HarnessError::config(
                        "stopping.max_iterations",
                        "must be >= 1",
                    ));
                }
                if self.federation.replicates < 2 {
                    return Err(HarnessError::config(
                        "federation.replicates",
                        "threshold rules estimate the law from replicates; need >= 2",
                    ));
                }
            }
            _ => {}
        }
        if self.output.record_every == 0 {
            return Err(HarnessError::config("output.record_every", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.output.burn_in) {
            return Err(HarnessError::config("output.burn_in", "must lie in [0, 1)"));
        }
        if self.sweep.repeats == 0 {
            return Err(HarnessError::config("sweep.repeats", "must be >= 1"));
        }
        if self.sweep.etas.iter().any(|e| !(*e > 0.0)) {
            return Err(HarnessError::config("sweep.etas", "must be positive"));
        }
        if self.sweep.local_periods.contains(&0) {
            return Err(HarnessError::config("sweep.local_periods", "must be >= 1"));
        }
        if self.sweep.dims.contains(&0) {
            return Err(HarnessError::config("sweep.dims", "must be >= 1"));
        }
        if self.sweep.k_grid.contains(&0) {
            return Err(HarnessError::config("sweep.k_grid", "must be >= 1"));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        match &self.model {
            ModelSpec::Quadratic { nodes, .. } => nodes.len(),
            ModelSpec::Logistic { nodes, .. } => *nodes,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            ModelSpec::Quadratic { dim, .. } | ModelSpec::Logistic { dim, .. } => *dim,
        }
    }

    /// Same experiment at dimension `dim`.
    pub fn with_dim(&self, dim: usize) -> Self {
        let mut cfg = self.clone();
        match &mut cfg.model {
            ModelSpec::Quadratic { dim: d, .. } | ModelSpec::Logistic { dim: d, .. } => *d = dim,
        }
        cfg
    }

    pub fn weights(&self) -> Vec<f64> {
        let n = self.node_count();
        self.federation
            .weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / n as f64; n])
    }

    /// Builds the node models, weights and (for quadratic fleets) the target.
    pub fn build_fleet(&self) -> Result<Fleet> {
        match &self.model {
            ModelSpec::Quadratic { dim, nodes } => {
                let weights = self.weights();
                let quads = nodes
                    .iter()
                    .map(|n| QuadraticNode::isotropic(*dim, n.center, n.precision))
                    .collect::<fahmc_core::Result<Vec<_>>>()?;
                let target = fahmc_core::gaussian_product_posterior(&quads, &weights)?;
                Ok(Fleet {
                    models: quads.into_iter().map(TargetModel::from).collect(),
                    weights,
                    target: Some(target),
                    data: None,
                })
            }
            ModelSpec::Logistic {
                dim,
                nodes,
                samples,
                feature_scale,
                prior_precision,
                data_seed,
                data,
            } => {
                let dataset = match data {
                    Some(path) => io::read_logistic_csv(path, *dim)?,
                    None => LogisticDataset::generate(*samples, *dim, *data_seed, *feature_scale)?,
                };
                let (models, shard_weights) = dataset.split_nodes(*nodes, *prior_precision)?;
                let weights = self.federation.weights.clone().unwrap_or(shard_weights);
                Ok(Fleet {
                    models,
                    weights,
                    target: None,
                    data: Some(dataset),
                })
            }
        }
    }

    /// Resolves the configured schedule against the fleet's constants.
    pub fn build_schedule(&self, fleet: &Fleet) -> Result<StepsizeSchedule> {
        let fed = &self.federation;
        let pooled = fleet.pooled_model()?;
        let (mu, smoothness) = pooled.declared_constants();
        let schedule = match &self.schedule {
            ScheduleSpec::Constant { eta } => StepsizeSchedule::Constant { eta: *eta },
            ScheduleSpec::EpochDoubling {
                eta_init,
                t1,
                decay,
            } => StepsizeSchedule::EpochDoubling {
                eta_init: *eta_init,
                t1: *t1,
                decay: *decay,
            },
            ScheduleSpec::Piecewise { breakpoints } => StepsizeSchedule::Piecewise {
                breakpoints: breakpoints.clone(),
            },
            ScheduleSpec::Theorem {
                epsilon,
                c,
                sigma_g,
            } => {
                let eta = schedules::theorem_stepsize(&TheoremInputs {
                    epsilon: *epsilon,
                    dim: fleet.dim(),
                    local_period: fed.local_period,
                    leapfrog_steps: fed.leapfrog_steps.unwrap_or(1),
                    smoothness,
                    rho: fed.rho,
                    nodes: fleet.models.len(),
                    sigma_g: *sigma_g,
                    weights: &fleet.weights,
                    c: *c,
                })?;
                StepsizeSchedule::Constant { eta }
            }
            ScheduleSpec::Dynamic {
                initial_distance,
                gamma,
                sigma_g,
                c_d,
            } => {
                let k = fed.leapfrog_steps.unwrap_or(1);
                let dt = schedules::delta_tilde(
                    fleet.dim(),
                    fed.local_period,
                    *gamma,
                    fed.rho,
                    fleet.models.len(),
                    &fleet.weights,
                    *sigma_g,
                    k,
                );
                schedules::dynamic_schedule(
                    *initial_distance,
                    dt,
                    smoothness,
                    mu,
                    k,
                    fed.local_period,
                    c_d.unwrap_or_else(|| schedules::default_cd(fleet.dim())),
                )?
            }
        };
        schedule
            .validate(1)
            .map_err(|e| HarnessError::config("schedule", e.to_string()))?;
        schedule
            .check_aligned(fed.local_period)
            .map_err(|e| HarnessError::config("schedule", e.to_string()))?;
        Ok(schedule)
    }

    /// Core configuration for the given seed.
    pub fn federation_config(&self, fleet: &Fleet, seed: u64) -> Result<FederationConfig> {
        let fed = &self.federation;
        let schedule = self.build_schedule(fleet)?;
        let leapfrog_steps = fed
            .leapfrog_steps
            .unwrap_or_else(|| schedules::heuristic_k(schedule.eta(0)));
        Ok(FederationConfig {
            weights: fleet.weights.clone(),
            local_period: fed.local_period,
            leapfrog_steps,
            rho: fed.rho,
            schedule,
            noise: fed.noise,
            master_seed: seed,
            debias_anchor: fed.debias_anchor,
            debias_first_epoch: fed.debias_first_epoch,
            execution: Default::default(),
        })
    }

    pub fn theta0(&self) -> Vec<f64> {
        vec![self.federation.theta0; self.dim()]
    }
}
