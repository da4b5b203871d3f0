//! Federated averaging HMC.
//!
//! `N` nodes run local unadjusted HMC on their own loss `f^(c)` with
//! correlated momenta, and every `T` iterations the weighted average
//! `θ_t = Σ w_c θ^(c)_t` is broadcast back to all nodes. The de-bias variant
//! shifts every local gradient by `∇f(a) − ∇f^(c)(a)` for an anchor `a`
//! refreshed at each sync.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::integrator::{gradient_evals_per_call, leapfrog_shifted, LeapfrogResult};
use crate::models::{GradientNoise, TargetModel};
use crate::parallel::{self, Execution};
use crate::rng::{self, StreamRole};
use crate::schedules::StepsizeSchedule;
use crate::trace::ChainTrace;
use crate::vector;

/// Below this many flops-ish per iteration (`N·K·d`) nodes run sequentially.
const NODE_PARALLEL_THRESHOLD: usize = 1 << 15;

/// Which sync point the de-bias correction is anchored at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DebiasAnchor {
    /// The previous sync point `θ_{t−T}` (one epoch stale).
    #[default]
    Lagged,
    /// The sync point just broadcast.
    Current,
}

/// How the lagged anchor behaves before the first refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstEpochAnchor {
    /// Both anchor gradients are zero: no correction in the first epoch.
    #[default]
    Skip,
    /// Anchor position 0 with zero global gradient: each node is shifted by `−∇f^(c)(0)`.
    LiteralZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub weights: Vec<f64>,
    /// Sync period `T`.
    pub local_period: usize,
    /// Leapfrog steps `K`.
    pub leapfrog_steps: usize,
    /// Momentum correlation `ρ`.
    pub rho: f64,
    pub schedule: StepsizeSchedule,
    pub noise: GradientNoise,
    pub master_seed: u64,
    pub debias_anchor: DebiasAnchor,
    pub debias_first_epoch: FirstEpochAnchor,
    pub execution: Execution,
}

impl FederationConfig {
    /// Equal weights over `nodes`, exact gradients, `ρ = 1`.
    pub fn uniform(
        nodes: usize,
        local_period: usize,
        leapfrog_steps: usize,
        eta: f64,
        seed: u64,
    ) -> Self {
        Self {
            weights: vec![1.0 / nodes as f64; nodes],
            local_period,
            leapfrog_steps,
            rho: 1.0,
            schedule: StepsizeSchedule::constant(eta),
            noise: GradientNoise::Exact,
            master_seed: seed,
            debias_anchor: DebiasAnchor::default(),
            debias_first_epoch: FirstEpochAnchor::default(),
            execution: Execution::default(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.weights.len()
    }

    /// Checks the structural invariants and the schedule over `0..horizon`.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::InvalidConfig(
                "federation needs at least one node".into(),
            ));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "node weights must be positive, got {w}"
            )));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "node weights sum to {total}, expected 1"
            )));
        }
        if self.local_period == 0 {
            return Err(Error::InvalidConfig("sync period T must be >= 1".into()));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::InvalidConfig("leapfrog steps K must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        self.schedule.validate(horizon.max(1))?;
        self.schedule.check_aligned(self.local_period)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub theta: Vec<f64>,
    /// `(E‖p^(c)‖²)^{1/2} = ((ρ + (1−ρ)/w_c) d)^{1/2}`; constant over time.
    pub momentum_scale: f64,
}

/// Draws `p^(c) = √ρ ξ + √(1−ρ) ξ^(c) / √w_c` for every node, with `ξ` from
/// `shared` and `ξ^(c)` from `private[c]`.
///
/// A single node has nothing to correlate with and receives `ξ` unchanged.
pub fn sample_correlated_momentum<R: Rng>(
    rho: f64,
    weights: &[f64],
    dim: usize,
    shared: &mut R,
    private: &mut [R],
) -> Vec<Vec<f64>> {
    assert_eq!(weights.len(), private.len(), "one private stream per node");
    let xi = rng::standard_normal_vec(shared, dim);
    if weights.len() == 1 || rho == 1.0 {
        return vec![xi; weights.len()];
    }
    let a = rho.sqrt();
    weights
        .iter()
        .zip(private.iter_mut())
        .map(|(w, stream)| {
            let own = rng::standard_normal_vec(stream, dim);
            let b = ((1.0 - rho) / w).sqrt();
            if rho == 0.0 {
                own.iter().map(|z| b * z).collect()
            } else {
                xi.iter().zip(&own).map(|(x, z)| a * x + b * z).collect()
            }
        })
        .collect()
}

/// Momenta of iteration `t` read from the keyed streams of `seed`.
pub fn momenta_for_iteration(
    seed: u64,
    t: usize,
    rho: f64,
    weights: &[f64],
    dim: usize,
) -> Vec<Vec<f64>> {
    let mut shared = rng::stream(seed, StreamRole::SharedMomentum, 0, t as u64);
    let needs_private = weights.len() > 1 && rho < 1.0;
    let mut private: Vec<rng::Stream> = (0..weights.len())
        .map(|c| {
            // Private streams are only opened when they are read.
            let c = if needs_private { c as u64 } else { 0 };
            rng::stream(seed, StreamRole::PrivateMomentum, c, t as u64)
        })
        .collect();
    sample_correlated_momentum(rho, weights, dim, &mut shared, &mut private)
}

#[derive(Debug, Clone, PartialEq)]
struct Anchor {
    theta: Vec<f64>,
    global_grad: Vec<f64>,
    local_grads: Vec<Vec<f64>>,
}

impl Anchor {
    fn shift(&self, node: usize) -> Vec<f64> {
        self.global_grad
            .iter()
            .zip(&self.local_grads[node])
            .map(|(g, l)| g - l)
            .collect()
    }
}

/// What one call to [`Federation::step`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub iteration: usize,
    pub eta: f64,
    pub synced: bool,
}

/// Stateful FA-HMC driver. Owns every node's state; advancing is a pure
/// function of the configuration and master seed.
#[derive(Debug, Clone)]
pub struct Federation<'m> {
    config: FederationConfig,
    models: &'m [TargetModel],
    nodes: Vec<NodeState>,
    dim: usize,
    t: usize,
    debias: bool,
    anchor: Option<Anchor>,
    pending_anchor: Option<Anchor>,
    shifts: Vec<Option<Vec<f64>>>,
    last_momenta: Vec<Vec<f64>>,
    gradient_evals: u64,
    anchor_gradient_evals: u64,
}

impl<'m> Federation<'m> {
    pub fn new(
        config: FederationConfig,
        models: &'m [TargetModel],
        theta0: &[f64],
        debias: bool,
    ) -> Result<Self> {
        config.validate(1)?;
        if models.len() != config.nodes() {
            return Err(Error::InvalidConfig(format!(
                "{} models supplied for {} weights",
                models.len(),
                config.nodes()
            )));
        }
        let dim = theta0.len();
        for m in models {
            check_dim(dim, m.dim())?;
            config.noise.validate_for(m)?;
        }
        let rho = config.rho;
        let nodes = config
            .weights
            .iter()
            .map(|w| NodeState {
                theta: theta0.to_vec(),
                momentum_scale: ((rho + (1.0 - rho) / w) * dim as f64).sqrt(),
            })
            .collect();
        let n = models.len();
        Ok(Self {
            config,
            models,
            nodes,
            dim,
            t: 0,
            debias,
            anchor: None,
            pending_anchor: None,
            shifts: vec![None; n],
            last_momenta: Vec::new(),
            gradient_evals: 0,
            anchor_gradient_evals: 0,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// Momenta drawn in the last completed iteration.
    pub fn last_momenta(&self) -> &[Vec<f64>] {
        &self.last_momenta
    }

    /// Leapfrog gradient evaluations so far (excludes anchor evaluations).
    pub fn gradient_evals(&self) -> u64 {
        self.gradient_evals
    }

    /// Exact gradient evaluations spent on de-bias anchors.
    pub fn anchor_gradient_evals(&self) -> u64 {
        self.anchor_gradient_evals
    }

    /// `θ_t = Σ w_c θ^(c)_t`, compensated and in fixed node order.
    pub fn global_theta(&self) -> Vec<f64> {
        vector::weighted_average(
            &self.config.weights,
            self.nodes.iter().map(|n| n.theta.as_slice()),
            self.dim,
        )
    }

    /// `Σ w_c ‖θ^(c) − θ_t‖²`.
    pub fn dispersion(&self) -> f64 {
        let g = self.global_theta();
        self.config
            .weights
            .iter()
            .zip(&self.nodes)
            .map(|(w, n)| w * vector::dist_sq(&n.theta, &g))
            .sum()
    }

    fn anchor_at(&mut self, theta: Vec<f64>) -> Result<Anchor> {
        let local_grads = self
            .models
            .iter()
            .map(|m| m.grad(&theta))
            .collect::<Result<Vec<_>>>()?;
        self.anchor_gradient_evals += self.models.len() as u64;
        let global_grad = vector::weighted_average(
            &self.config.weights,
            local_grads.iter().map(|g| g.as_slice()),
            self.dim,
        );
        Ok(Anchor {
            theta,
            global_grad,
            local_grads,
        })
    }

    fn refresh_anchor(&mut self, theta: &[f64]) -> Result<()> {
        let fresh = self.anchor_at(theta.to_vec())?;
        match self.config.debias_anchor {
            DebiasAnchor::Current => self.anchor = Some(fresh),
            DebiasAnchor::Lagged => {
                self.anchor = self.pending_anchor.replace(fresh);
                if self.anchor.is_none()
                    && self.config.debias_first_epoch == FirstEpochAnchor::LiteralZero
                {
                    let mut zero = self.anchor_at(vec![0.0; self.dim])?;
                    zero.global_grad.iter_mut().for_each(|g| *g = 0.0);
                    self.anchor = Some(zero);
                }
            }
        }
        self.shifts = (0..self.nodes.len())
            .map(|c| self.anchor.as_ref().map(|a| a.shift(c)))
            .collect();
        Ok(())
    }

    /// Runs iteration `t`: draw momenta, broadcast if `t ≡ 0 (mod T)`, then
    /// one leapfrog trajectory per node.
    pub fn step(&mut self) -> Result<StepInfo> {
        let t = self.t;
        let cfg = &self.config;
        let eta = cfg.schedule.eta(t);
        let momenta = momenta_for_iteration(cfg.master_seed, t, cfg.rho, &cfg.weights, self.dim);
        let synced = t.is_multiple_of(cfg.local_period);
        if synced {
            // θ^(c)_0 = θ0 for every node, so the first broadcast changes nothing.
            if t > 0 {
                let avg = self.global_theta();
                for node in &mut self.nodes {
                    node.theta.clone_from(&avg);
                }
            }
            if self.debias {
                let at = self.nodes[0].theta.clone();
                self.refresh_anchor(&at)?;
            }
        }

        let cfg = &self.config;
        let steps = cfg.leapfrog_steps;
        let work = self.nodes.len() * steps * self.dim;
        let exec = if work >= NODE_PARALLEL_THRESHOLD {
            cfg.execution
        } else {
            Execution::Sequential
        };
        let results: Vec<Result<LeapfrogResult>> =
            parallel::map_indexed(exec, self.nodes.len(), |c| {
                let mut noise_rng = rng::stream(
                    cfg.master_seed,
                    StreamRole::GradientNoise,
                    c as u64,
                    t as u64,
                );
                leapfrog_shifted(
                    &self.models[c],
                    &self.nodes[c].theta,
                    &momenta[c],
                    eta,
                    steps,
                    &cfg.noise,
                    &mut noise_rng,
                    self.shifts[c].as_deref(),
                )
            });
        let mut evals = 0u64;
        for (c, res) in results.into_iter().enumerate() {
            let out = res.map_err(|e| e.at_node(c).at_iteration(t))?;
            evals += out.gradient_evals as u64;
            self.nodes[c].theta = out.position;
        }
        debug_assert_eq!(
            evals,
            (self.nodes.len() * gradient_evals_per_call(steps, &cfg.noise)) as u64
        );
        self.gradient_evals += evals;
        self.last_momenta = momenta;
        self.t += 1;
        Ok(StepInfo {
            iteration: t,
            eta,
            synced,
        })
    }

    /// Advances `iterations` steps, logging into `trace` every `record_every` iterations.
    pub fn advance(
        &mut self,
        iterations: usize,
        record_every: usize,
        trace: &mut ChainTrace,
    ) -> Result<()> {
        for _ in 0..iterations {
            let info = self.step()?;
            trace.push_iteration(info.eta, info.synced);
            if self.t.is_multiple_of(record_every) {
                trace.record(self.t, &self.global_theta());
            }
        }
        Ok(())
    }
}

fn run(
    config: &FederationConfig,
    models: &[TargetModel],
    theta0: &[f64],
    iterations: usize,
    record_every: usize,
    debias: bool,
) -> Result<ChainTrace> {
    if iterations == 0 {
        return Err(Error::Contract("a run needs iterations >= 1".into()));
    }
    if record_every == 0 {
        return Err(Error::Contract("record_every must be >= 1".into()));
    }
    config.validate(iterations)?;
    let mut fed = Federation::new(config.clone(), models, theta0, debias)?;
    let mut trace = ChainTrace::new(fed.dim());
    fed.advance(iterations, record_every, &mut trace)?;
    trace.add_gradient_evals(fed.gradient_evals() + fed.anchor_gradient_evals());
    Ok(trace)
}

/// FA-HMC.
pub fn run_fa_hmc(
    config: &FederationConfig,
    models: &[TargetModel],
    theta0: &[f64],
    iterations: usize,
    record_every: usize,
) -> Result<ChainTrace> {
    run(config, models, theta0, iterations, record_every, false)
}

/// FA-LD: FA-HMC with a single leapfrog step, i.e. federated unadjusted
/// Langevin with stepsize `η²/2`.
pub fn run_fa_ld(
    config: &FederationConfig,
    models: &[TargetModel],
    theta0: &[f64],
    iterations: usize,
    record_every: usize,
) -> Result<ChainTrace> {
    let config = FederationConfig {
        leapfrog_steps: 1,
        ..config.clone()
    };
    run_fa_hmc(&config, models, theta0, iterations, record_every)
}

/// FA-HMC with de-bias leapfrog updates.
pub fn run_debias_fa_hmc(
    config: &FederationConfig,
    models: &[TargetModel],
    theta0: &[f64],
    iterations: usize,
    record_every: usize,
) -> Result<ChainTrace> {
    run(config, models, theta0, iterations, record_every, true)
}

/// Langevin stepsize induced by FA-LD at leapfrog stepsize `η`.
pub fn langevin_stepsize(eta: f64) -> f64 {
    0.5 * eta * eta
}

/// Leapfrog on `f^(c)` with every gradient `g(θ)` replaced by
/// `g(θ) − ∇f^(c)(anchor) + anchor_global_grad`.
#[allow(clippy::too_many_arguments)]
pub fn debias_leapfrog<R: Rng + ?Sized>(
    model: &TargetModel,
    theta0: &[f64],
    p0: &[f64],
    eta: f64,
    steps: usize,
    anchor_theta: &[f64],
    anchor_global_grad: &[f64],
    noise: &GradientNoise,
    rng: &mut R,
) -> Result<LeapfrogResult> {
    check_dim(model.dim(), anchor_global_grad.len())?;
    let local = model.grad(anchor_theta)?;
    let shift: Vec<f64> = anchor_global_grad
        .iter()
        .zip(&local)
        .map(|(g, l)| g - l)
        .collect();
    leapfrog_shifted(model, theta0, p0, eta, steps, noise, rng, Some(&shift))
}

/// Per-coordinate moments of the two-group quadratic fleet under exact
/// Hamiltonian flow with shared momentum, at communication round `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBoundMoments {
    pub mean: f64,
    pub var: f64,
    /// Per-round contraction `γ = ½(cos^T(√L η̃) + cos^T(√μ η̃))`.
    pub gamma: f64,
    /// Biased fixed point `θ*_η̃`.
    pub fixed_point: f64,
    /// Per-round noise scale `s`.
    pub noise_scale: f64,
}

/// Closed-form recursion for the lower-bound construction: half the nodes
/// carry `(L/2)‖θ − θ*_L 1‖²`, half `(μ/2)‖θ − θ*_μ 1‖²`, integration time
/// `η̃ = Kη` per iteration, `T` iterations per round and `θ_0 ~ N(θ0, σ0²)`.
#[allow(clippy::too_many_arguments)]
pub fn lower_bound_trajectory(
    theta_l: f64,
    theta_mu: f64,
    l: f64,
    mu: f64,
    k_eta: f64,
    local_period: usize,
    rounds: usize,
    theta0: f64,
    sigma0_sq: f64,
) -> Result<LowerBoundMoments> {
    if !(l >= mu && mu > 0.0) {
        return Err(Error::Contract(format!(
            "need L >= mu > 0, got L = {l}, mu = {mu}"
        )));
    }
    let tp = local_period as i32;
    let cl = (l.sqrt() * k_eta).cos().powi(tp);
    let cm = (mu.sqrt() * k_eta).cos().powi(tp);
    let gamma = 0.5 * (cl + cm);
    if gamma == 1.0 {
        return Err(Error::DegenerateSchedule);
    }
    if gamma.abs() >= 1.0 {
        return Err(Error::Contract(format!(
            "|gamma| = {} must be < 1",
            gamma.abs()
        )));
    }
    let fixed_point = (theta_l * (1.0 - cl) + theta_mu * (1.0 - cm)) / (2.0 * (1.0 - gamma));
    let noise_scale =
        0.5 * ((1.0 - cl * cl).sqrt() / l.sqrt() + (1.0 - cm * cm).sqrt() / mu.sqrt());
    let gt = gamma.powi(rounds as i32);
    let mean = theta0 * gt + fixed_point * (1.0 - gt);
    let var =
        sigma0_sq * gt * gt + noise_scale * noise_scale * (1.0 - gt * gt) / (1.0 - gamma * gamma);
    Ok(LowerBoundMoments {
        mean,
        var,
        gamma,
        fixed_point,
        noise_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{hmc_chain, leapfrog};
    use crate::models::{LogisticDataset, QuadraticNode};
    use crate::rng::stream;

    fn quad(d: usize, m: f64, lam: f64) -> TargetModel {
        QuadraticNode::isotropic(d, m, lam).unwrap().into()
    }

    fn two_node_fleet(d: usize) -> Vec<TargetModel> {
        vec![quad(d, 2.0, 1.0), quad(d, 1.0, 0.25)]
    }

    #[test]
    fn config_validation() {
        let mut c = FederationConfig::uniform(2, 5, 3, 0.1, 1);
        assert!(c.validate(10).is_ok());
        c.weights = vec![0.5, 0.6];
        assert!(c.validate(10).is_err());
        c.weights = vec![1.0, 0.0];
        assert!(c.validate(10).is_err());
        let mut c = FederationConfig::uniform(2, 0, 3, 0.1, 1);
        assert!(c.validate(10).is_err());
        c.local_period = 2;
        c.rho = 1.5;
        assert!(c.validate(10).is_err());
        c.rho = 0.5;
        c.schedule = StepsizeSchedule::Piecewise {
            breakpoints: vec![(0, 0.1), (4, 0.3)],
        };
        assert!(c.validate(10).is_err());
    }

    #[test]
    fn rho_one_gives_identical_momenta() {
        let m = momenta_for_iteration(3, 7, 1.0, &[0.25; 4], 5);
        assert!(m.iter().all(|p| p == &m[0]));
    }

    #[test]
    fn sync_broadcasts_the_weighted_average() {
        let models = two_node_fleet(3);
        let mut cfg = FederationConfig::uniform(2, 4, 3, 0.1, 5);
        cfg.rho = 0.3;
        let mut fed = Federation::new(cfg, &models, &[0.0; 3], false).unwrap();
        for _ in 0..8 {
            fed.step().unwrap();
        }
        let avg = fed.global_theta();
        assert!(fed.dispersion() > 0.0);
        let info = fed.step().unwrap();
        assert!(info.synced);
        for (c, model) in models.iter().enumerate() {
            let mut r = stream(5, StreamRole::GradientNoise, c as u64, 8);
            let want = leapfrog(
                model,
                &avg,
                &fed.last_momenta()[c],
                0.1,
                3,
                &GradientNoise::Exact,
                &mut r,
            )
            .unwrap();
            assert_eq!(fed.nodes()[c].theta, want.position);
        }
    }

    #[test]
    fn single_node_matches_hmc_chain() {
        let model = vec![quad(3, 1.0, 2.0)];
        for rho in [0.0, 0.4, 1.0] {
            let mut cfg = FederationConfig::uniform(1, 3, 4, 0.2, 11);
            cfg.rho = rho;
            cfg.noise = GradientNoise::AdditiveGaussian { variance: 0.3 };
            let fed = run_fa_hmc(&cfg, &model, &[0.5; 3], 30, 1).unwrap();
            let single = hmc_chain(
                &model[0],
                &[0.5; 3],
                &cfg.schedule,
                4,
                &cfg.noise,
                30,
                1,
                11,
            )
            .unwrap();
            assert_eq!(fed.params_flat(), single.params_flat());
        }
    }

    #[test]
    fn k1_is_a_langevin_step() {
        let models = two_node_fleet(2);
        let mut cfg = FederationConfig::uniform(2, 3, 1, 0.3, 21);
        cfg.rho = 0.5;
        cfg.noise = GradientNoise::AdditiveGaussian { variance: 0.5 };
        let trace = run_fa_hmc(&cfg, &models, &[1.0, -1.0], 12, 1).unwrap();

        // Direct Langevin recursion on the same streams.
        let mut thetas = vec![vec![1.0, -1.0]; 2];
        for t in 0..12 {
            let p = momenta_for_iteration(21, t, 0.5, &cfg.weights, 2);
            if t % 3 == 0 && t > 0 {
                let avg =
                    vector::weighted_average(&cfg.weights, thetas.iter().map(|v| v.as_slice()), 2);
                thetas = vec![avg; 2];
            }
            for c in 0..2 {
                let mut rng = stream(21, StreamRole::GradientNoise, c as u64, t as u64);
                let g =
                    crate::models::stochastic_grad(&models[c], &thetas[c], &cfg.noise, &mut rng)
                        .unwrap();
                for i in 0..2 {
                    thetas[c][i] = thetas[c][i] + 0.3 * p[c][i] - langevin_stepsize(0.3) * g[i];
                }
            }
            let global =
                vector::weighted_average(&cfg.weights, thetas.iter().map(|v| v.as_slice()), 2);
            assert_eq!(trace.param(t), global.as_slice());
        }
        let ld = run_fa_ld(
            &FederationConfig {
                leapfrog_steps: 9,
                ..cfg.clone()
            },
            &models,
            &[1.0, -1.0],
            12,
            1,
        )
        .unwrap();
        assert_eq!(ld, trace);
    }

    #[test]
    fn trace_bookkeeping() {
        let models = two_node_fleet(2);
        let cfg = FederationConfig::uniform(2, 4, 3, 0.1, 1);
        let tr = run_fa_hmc(&cfg, &models, &[0.0; 2], 10, 3).unwrap();
        assert_eq!(tr.sync_events(), &[0, 4, 8]);
        assert_eq!(tr.record_iterations(), &[3, 6, 9]);
        assert_eq!(tr.eta_used().len(), 10);
        assert_eq!(tr.gradient_evals(), 2 * 10 * 4);
        let mut noisy = cfg.clone();
        noisy.noise = GradientNoise::AdditiveGaussian { variance: 1.0 };
        let tr = run_fa_hmc(&noisy, &models, &[0.0; 2], 10, 3).unwrap();
        assert_eq!(tr.gradient_evals(), 2 * 10 * 6);
    }

    #[test]
    fn execution_policy_does_not_change_results() {
        let models: Vec<TargetModel> = (0..8)
            .map(|c| quad(64, c as f64, 1.0 + c as f64 * 0.1))
            .collect();
        let mut cfg = FederationConfig::uniform(8, 5, 80, 0.02, 3);
        cfg.rho = 0.2;
        cfg.noise = GradientNoise::AdditiveGaussian { variance: 1.0 };
        cfg.execution = Execution::Sequential;
        let a = run_fa_hmc(&cfg, &models, &[0.0; 64], 12, 1).unwrap();
        cfg.execution = Execution::Parallel;
        let b = run_fa_hmc(&cfg, &models, &[0.0; 64], 12, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weighted_average_conservation() {
        let models = vec![quad(4, 1.0, 1.0), quad(4, -2.0, 0.5), quad(4, 3.0, 2.0)];
        let mut cfg = FederationConfig::uniform(3, 7, 2, 0.2, 4);
        cfg.weights = vec![0.2, 0.3, 0.5];
        cfg.rho = 0.0;
        let mut fed = Federation::new(cfg, &models, &[0.0; 4], false).unwrap();
        for _ in 0..9 {
            fed.step().unwrap();
        }
        let g = fed.global_theta();
        for (j, gj) in g.iter().enumerate() {
            let naive: f64 = [0.2, 0.3, 0.5]
                .iter()
                .zip(fed.nodes())
                .map(|(w, n)| w * n.theta[j])
                .sum();
            assert!((gj - naive).abs() <= 1e-12 * naive.abs().max(1.0));
        }
    }

    #[test]
    fn divergence_names_node_and_iteration() {
        let models = vec![quad(1, 0.0, 1.0), quad(1, 0.0, 1e6)];
        let cfg = FederationConfig::uniform(2, 1, 50, 0.1, 4);
        let err = run_fa_hmc(&cfg, &models, &[1.0], 50, 1).unwrap_err();
        match err {
            Error::Diverged {
                node, iteration, ..
            } => {
                assert_eq!(node, Some(1));
                assert!(iteration.is_some());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_inputs() {
        let models = two_node_fleet(2);
        let cfg = FederationConfig::uniform(3, 1, 1, 0.1, 4);
        assert!(run_fa_hmc(&cfg, &models, &[0.0; 2], 5, 1).is_err());
        let cfg = FederationConfig::uniform(2, 1, 1, 0.1, 4);
        assert!(matches!(
            run_fa_hmc(&cfg, &models, &[0.0; 3], 5, 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(run_fa_hmc(&cfg, &models, &[0.0; 2], 0, 1).is_err());
    }

    #[test]
    fn debias_leapfrog_self_anchor_is_plain_leapfrog() {
        let data = LogisticDataset::generate(20, 2, 1, 1.0).unwrap();
        let (models, _) = data.split_nodes(2, 0.5).unwrap();
        let m = &models[0];
        let anchor = [0.3, -0.2];
        let own = m.grad(&anchor).unwrap();
        let mut r1 = stream(0, StreamRole::Auxiliary, 0, 0);
        let mut r2 = stream(0, StreamRole::Auxiliary, 0, 0);
        let a = debias_leapfrog(
            m,
            &[0.1, 0.1],
            &[1.0, -1.0],
            0.05,
            10,
            &anchor,
            &own,
            &GradientNoise::Exact,
            &mut r1,
        )
        .unwrap();
        let b = leapfrog(
            m,
            &[0.1, 0.1],
            &[1.0, -1.0],
            0.05,
            10,
            &GradientNoise::Exact,
            &mut r2,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn debias_single_step_expansion() {
        let models = two_node_fleet(1);
        let global = TargetModel::weighted_sum(&[0.5, 0.5], &models).unwrap();
        let (theta, p, eta, a) = (0.7, -0.4, 0.2, 1.3);
        let ga = global.grad(&[a]).unwrap();
        let mut r = stream(0, StreamRole::Auxiliary, 0, 0);
        let out = debias_leapfrog(
            &models[0],
            &[theta],
            &[p],
            eta,
            1,
            &[a],
            &ga,
            &GradientNoise::Exact,
            &mut r,
        )
        .unwrap();
        // Quadratic node: ∇f^(1)(θ) = θ − 2, ∇f(a) = ½(a − 2) + ⅛(a − 1).
        let drift = (theta - 2.0) - (a - 2.0) + (0.5 * (a - 2.0) + 0.125 * (a - 1.0));
        let expected = theta + eta * p - 0.5 * eta * eta * drift;
        assert!((out.position[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn debias_homogeneous_matches_fa_hmc() {
        let models = vec![quad(3, 1.5, 0.8), quad(3, 1.5, 0.8)];
        for anchor in [DebiasAnchor::Lagged, DebiasAnchor::Current] {
            let mut cfg = FederationConfig::uniform(2, 5, 4, 0.1, 8);
            cfg.rho = 0.5;
            cfg.debias_anchor = anchor;
            let a = run_fa_hmc(&cfg, &models, &[0.0; 3], 40, 1).unwrap();
            let b = run_debias_fa_hmc(&cfg, &models, &[0.0; 3], 40, 1).unwrap();
            assert_eq!(a.params_flat(), b.params_flat());
        }
    }

    #[test]
    fn literal_zero_first_epoch_shifts_then_recovers_structure() {
        let models = two_node_fleet(2);
        let mut cfg = FederationConfig::uniform(2, 5, 4, 0.1, 8);
        cfg.debias_first_epoch = FirstEpochAnchor::LiteralZero;
        let a = run_fa_hmc(&cfg, &models, &[0.0; 2], 5, 1).unwrap();
        let b = run_debias_fa_hmc(&cfg, &models, &[0.0; 2], 5, 1).unwrap();
        // ∇f^(c)(0) ≠ 0 here, so the literal anchor perturbs the first epoch.
        assert_ne!(a.params_flat(), b.params_flat());
        cfg.debias_first_epoch = FirstEpochAnchor::Skip;
        let c = run_debias_fa_hmc(&cfg, &models, &[0.0; 2], 5, 1).unwrap();
        assert_eq!(a.params_flat(), c.params_flat());
    }

    #[test]
    fn lower_bound_examples() {
        let lb = lower_bound_trajectory(2.0, 1.0, 0.5, 0.5, 0.3, 3, 0, 5.0, 0.0).unwrap();
        assert_eq!((lb.mean, lb.var), (5.0, 0.0));
        assert!((lb.fixed_point - 1.5).abs() < 1e-12);
        assert!((lb.gamma - (0.5f64.sqrt() * 0.3).cos().powi(3)).abs() < 1e-15);
        let far = lower_bound_trajectory(2.0, 1.0, 1.0, 0.25, 0.1, 5, 100_000, 0.0, 0.0).unwrap();
        assert!((far.mean - far.fixed_point).abs() < 1e-12);
        let stationary = far.noise_scale.powi(2) / (1.0 - far.gamma.powi(2));
        assert!((far.var - stationary).abs() < 1e-12);
        assert!(matches!(
            lower_bound_trajectory(2.0, 1.0, 1.0, 0.25, 0.0, 5, 1, 0.0, 0.0),
            Err(Error::DegenerateSchedule)
        ));
    }

    #[test]
    fn momentum_scale_is_constant() {
        let models = two_node_fleet(4);
        let mut cfg = FederationConfig::uniform(2, 2, 1, 0.1, 1);
        cfg.rho = 0.5;
        let fed = Federation::new(cfg, &models, &[0.0; 4], false).unwrap();
        let want = ((0.5 + 0.5 / 0.5) * 4.0f64).sqrt();
        assert!(fed
            .nodes()
            .iter()
            .all(|n| (n.momentum_scale - want).abs() < 1e-15));
    }
}
