//! Leapfrog integration of `dθ/dt = p`, `dp/dt = −∇f(θ)` with optional
//! stochastic gradients, the closed-form flow for isotropic quadratics, and
//! the unadjusted single-chain HMC sampler.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::models::{stochastic_grad_into, GradientNoise, TargetModel};
use crate::rng::{self, StreamRole};
use crate::schedules::StepsizeSchedule;
use crate::trace::ChainTrace;
use crate::vector;

#[derive(Debug, Clone, PartialEq)]
pub struct LeapfrogResult {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub gradient_evals: usize,
}

/// Gradient evaluations one leapfrog call performs: `K + 1` with exact
/// gradients (the new-position gradient is reused), `2K` otherwise.
pub fn gradient_evals_per_call(leapfrog_steps: usize, noise: &GradientNoise) -> usize {
    if noise.is_exact() {
        leapfrog_steps + 1
    } else {
        2 * leapfrog_steps
    }
}

/// Runs `K` leapfrog steps from `(θ0, p0)`:
///
/// ```text
/// θ_{k+1} = θ_k + η p_k − (η²/2) g_k
/// p_{k+1} = p_k − (η/2)(g_k + g'_{k+1})
/// ```
///
/// `g_k` and `g'_{k+1}` are independent draws of the stochastic gradient.
/// With exact gradients `g'_{k+1}` is reused as `g_{k+1}`.
#[allow(clippy::too_many_arguments)]
pub fn leapfrog<R: Rng + ?Sized>(
    model: &TargetModel,
    theta0: &[f64],
    p0: &[f64],
    eta: f64,
    steps: usize,
    noise: &GradientNoise,
    rng: &mut R,
) -> Result<LeapfrogResult> {
    leapfrog_shifted(model, theta0, p0, eta, steps, noise, rng, None)
}

/// [`leapfrog`] with every gradient replaced by `g(θ) + shift`.
#[allow(clippy::too_many_arguments)]
pub fn leapfrog_shifted<R: Rng + ?Sized>(
    model: &TargetModel,
    theta0: &[f64],
    p0: &[f64],
    eta: f64,
    steps: usize,
    noise: &GradientNoise,
    rng: &mut R,
    shift: Option<&[f64]>,
) -> Result<LeapfrogResult> {
    let d = model.dim();
    check_dim(d, theta0.len())?;
    check_dim(d, p0.len())?;
    if let Some(s) = shift {
        check_dim(d, s.len())?;
    }
    if steps == 0 {
        return Err(Error::Contract("leapfrog needs K >= 1".into()));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Contract(format!(
            "leapfrog stepsize must be positive, got {eta}"
        )));
    }

    let mut evals = 0usize;
    let mut gradient = |theta: &[f64], out: &mut [f64]| -> Result<()> {
        stochastic_grad_into(model, theta, noise, rng, out)?;
        evals += 1;
        if let Some(s) = shift {
            // Adding an exact zero could flip a -0.0; skip it so a null shift is bit-transparent.
            for (o, si) in out.iter_mut().zip(s) {
                if *si != 0.0 {
                    *o += si;
                }
            }
        }
        Ok(())
    };

    let half_eta = 0.5 * eta;
    let half_eta_sq = 0.5 * eta * eta;
    let mut theta = theta0.to_vec();
    let mut p = p0.to_vec();
    let mut g = vec![0.0; d];
    let mut g_next = vec![0.0; d];
    gradient(&theta, &mut g)?;
    for k in 0..steps {
        for ((t, pk), gk) in theta.iter_mut().zip(&p).zip(&g) {
            *t = *t + eta * pk - half_eta_sq * gk;
        }
        if !vector::all_finite(&theta) {
            return Err(Error::Diverged {
                step: k,
                iteration: None,
                node: None,
            });
        }
        gradient(&theta, &mut g_next)?;
        for ((pk, gk), gn) in p.iter_mut().zip(&g).zip(&g_next) {
            *pk -= half_eta * (gk + gn);
        }
        if !vector::all_finite(&p) || !vector::all_finite(&g_next) {
            return Err(Error::Diverged {
                step: k,
                iteration: None,
                node: None,
            });
        }
        if k + 1 < steps {
            if noise.is_exact() {
                std::mem::swap(&mut g, &mut g_next);
            } else {
                gradient(&theta, &mut g)?;
            }
        }
    }
    Ok(LeapfrogResult {
        position: theta,
        momentum: p,
        gradient_evals: evals,
    })
}

/// Exact Hamiltonian flow for `f(θ) = (λ/2)‖θ − m‖²` after time `t`.
pub fn closed_form_quadratic(
    theta0: &[f64],
    p0: &[f64],
    precision: f64,
    mean: &[f64],
    t: f64,
) -> (Vec<f64>, Vec<f64>) {
    let omega = precision.sqrt();
    let (s, c) = (omega * t).sin_cos();
    let theta = theta0
        .iter()
        .zip(p0)
        .zip(mean)
        .map(|((q, p), m)| q * c + m * (1.0 - c) + p / omega * s)
        .collect();
    let p = theta0
        .iter()
        .zip(p0)
        .zip(mean)
        .map(|((q, p), m)| -omega * (q - m) * s + p * c)
        .collect();
    (theta, p)
}

/// Unadjusted HMC: each iteration draws `p_t ~ N(0, I)` and moves to the
/// leapfrog endpoint, with no accept/reject step.
///
/// Momentum is read from the shared-momentum stream and gradient noise from
/// node 0's noise stream, so a one-node federation reproduces this chain.
#[allow(clippy::too_many_arguments)]
pub fn hmc_chain(
    model: &TargetModel,
    theta0: &[f64],
    schedule: &StepsizeSchedule,
    steps: usize,
    noise: &GradientNoise,
    iterations: usize,
    record_every: usize,
    seed: u64,
) -> Result<ChainTrace> {
    if iterations == 0 {
        return Err(Error::Contract("hmc_chain needs iterations >= 1".into()));
    }
    if record_every == 0 {
        return Err(Error::Contract("record_every must be >= 1".into()));
    }
    schedule.validate(iterations)?;
    noise.validate_for(model)?;
    check_dim(model.dim(), theta0.len())?;
    let d = model.dim();
    let mut trace = ChainTrace::new(d);
    let mut theta = theta0.to_vec();
    for t in 0..iterations {
        let eta = schedule.eta(t);
        let mut mom_rng = rng::stream(seed, StreamRole::SharedMomentum, 0, t as u64);
        let p = rng::standard_normal_vec(&mut mom_rng, d);
        let mut noise_rng = rng::stream(seed, StreamRole::GradientNoise, 0, t as u64);
        let out = leapfrog(model, &theta, &p, eta, steps, noise, &mut noise_rng)
            .map_err(|e| e.at_iteration(t))?;
        theta = out.position;
        trace.push_iteration(eta, false);
        trace.add_gradient_evals(out.gradient_evals as u64);
        if (t + 1) % record_every == 0 {
            trace.record(t + 1, &theta);
        }
    }
    Ok(trace)
}
