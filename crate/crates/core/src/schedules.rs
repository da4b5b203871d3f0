//! Stepsize schedules `t ↦ η_t`: constants from the convergence theorem, the
//! epoch-doubling dynamic schedule, and the leapfrog-count heuristic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A stepsize schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepsizeSchedule {
    Constant {
        eta: f64,
    },
    /// `η_init` on `[0, t1)`, then epochs of length `2t1, 4t1, …`, each
    /// multiplying the stepsize by `decay`.
    EpochDoubling {
        eta_init: f64,
        t1: usize,
        decay: f64,
    },
    /// User-supplied `(start_iteration, eta)` breakpoints; the first must start at 0.
    Piecewise {
        breakpoints: Vec<(usize, f64)>,
    },
}

impl StepsizeSchedule {
    pub fn constant(eta: f64) -> Self {
        StepsizeSchedule::Constant { eta }
    }

    /// `η_t`.
    pub fn eta(&self, t: usize) -> f64 {
        match self {
            StepsizeSchedule::Constant { eta } => *eta,
            StepsizeSchedule::EpochDoubling {
                eta_init,
                t1,
                decay,
            } => eta_init * decay.powi(epoch_index(*t1, t) as i32),
            StepsizeSchedule::Piecewise { breakpoints } => breakpoints
                .iter()
                .take_while(|(start, _)| *start <= t)
                .last()
                .map_or(f64::NAN, |(_, eta)| *eta),
        }
    }

    /// Checks positivity, and monotonicity over `0..horizon` (`η_{t''} ≤ η_{t'}` for `t' ≤ t''`).
    pub fn validate(&self, horizon: usize) -> Result<()> {
        match self {
            StepsizeSchedule::Constant { eta } => check_positive(*eta),
            StepsizeSchedule::EpochDoubling {
                eta_init,
                t1,
                decay,
            } => {
                check_positive(*eta_init)?;
                if *t1 == 0 {
                    return Err(Error::InvalidSchedule("t1 must be >= 1".into()));
                }
                if !(*decay > 0.0 && *decay <= 1.0) {
                    return Err(Error::InvalidSchedule(format!(
                        "decay must lie in (0, 1], got {decay}"
                    )));
                }
                // Underflow to zero is the only way positivity can fail.
                if self.eta(horizon.saturating_sub(1)) <= 0.0 {
                    return Err(Error::InvalidSchedule("stepsize underflows to zero".into()));
                }
                Ok(())
            }
            StepsizeSchedule::Piecewise { breakpoints } => {
                match breakpoints.first() {
                    Some((0, _)) => {}
                    _ => {
                        return Err(Error::InvalidSchedule(
                            "piecewise schedule must start at iteration 0".into(),
                        ))
                    }
                }
                for w in breakpoints.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::InvalidSchedule(
                            "piecewise breakpoints must be strictly increasing".into(),
                        ));
                    }
                    if w[1].1 > w[0].1 {
                        return Err(Error::InvalidSchedule(format!(
                            "stepsize increases from {} to {} at iteration {}",
                            w[0].1, w[1].1, w[1].0
                        )));
                    }
                }
                breakpoints
                    .iter()
                    .try_for_each(|(_, eta)| check_positive(*eta))?;
                Ok(())
            }
        }
    }

    /// Epoch boundaries must be multiples of the sync period so that η is
    /// constant within every local epoch.
    pub fn check_aligned(&self, local_period: usize) -> Result<()> {
        let misaligned = match self {
            StepsizeSchedule::Constant { .. } => None,
            StepsizeSchedule::EpochDoubling { t1, .. } => {
                Some(*t1).filter(|t1| t1 % local_period != 0)
            }
            StepsizeSchedule::Piecewise { breakpoints } => breakpoints
                .iter()
                .map(|(s, _)| *s)
                .find(|s| s % local_period != 0),
        };
        match misaligned {
            Some(b) => Err(Error::InvalidSchedule(format!(
                "epoch boundary {b} is not a multiple of the sync period {local_period}"
            ))),
            None => Ok(()),
        }
    }
}

fn check_positive(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSchedule(format!(
            "stepsize must be positive and finite, got {eta}"
        )))
    }
}

/// Zero-based epoch of iteration `t`: the largest `s` with `t1(2^s − 1) ≤ t`.
pub fn epoch_index(t1: usize, t: usize) -> u32 {
    ((t / t1) as u64 + 1).ilog2()
}

/// First iteration of epoch `s`, `t1(2^s − 1)`.
pub fn epoch_start(t1: usize, s: u32) -> usize {
    t1 * ((1usize << s) - 1)
}

/// Inputs of the constant-stepsize rule of the convergence theorem.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremInputs<'a> {
    pub epsilon: f64,
    pub dim: usize,
    pub local_period: usize,
    pub leapfrog_steps: usize,
    pub smoothness: f64,
    pub rho: f64,
    pub nodes: usize,
    pub sigma_g: f64,
    pub weights: &'a [f64],
    /// Problem constant `C` (not numerically available; defaults to 1).
    pub c: f64,
}

/// `η = √(C · min{1/(K²L), ε/(K²√d T), ε²/(K² d T² (1−ρ) N), ε²/(K d Σw_c² σ_g²)})`.
/// Terms whose denominators vanish (ρ = 1, σ_g = 0) are dropped.
pub fn theorem_stepsize(inp: &TheoremInputs<'_>) -> Result<f64> {
    let k = inp.leapfrog_steps as f64;
    let d = inp.dim as f64;
    let t = inp.local_period as f64;
    let n = inp.nodes as f64;
    if !(inp.epsilon > 0.0 && inp.smoothness > 0.0 && inp.c > 0.0)
        || inp.dim == 0
        || inp.local_period == 0
        || inp.leapfrog_steps == 0
        || !(0.0..=1.0).contains(&inp.rho)
        || inp.sigma_g < 0.0
    {
        return Err(Error::InvalidConfig(
            "theorem stepsize inputs out of range".into(),
        ));
    }
    let eps = inp.epsilon;
    let w2: f64 = inp.weights.iter().map(|w| w * w).sum();
    let mut terms = vec![1.0 / (k * k * inp.smoothness), eps / (k * k * d.sqrt() * t)];
    let corr = 1.0 - inp.rho;
    if corr > 0.0 {
        terms.push(eps * eps / (k * k * d * t * t * corr * n));
    }
    let grad_noise = w2 * inp.sigma_g * inp.sigma_g;
    if grad_noise > 0.0 {
        terms.push(eps * eps / (k * d * grad_noise));
    }
    let min = terms.into_iter().fold(f64::INFINITY, f64::min);
    Ok((inp.c * min).sqrt())
}

/// `c_d = 128 + 32 ln²(2d)`.
pub fn default_cd(dim: usize) -> f64 {
    let l = (2.0 * dim as f64).ln();
    128.0 + 32.0 * l * l
}

/// `Δ̃ = d (T²(γ + (1−ρ)N) + Σ w_c² σ_g² / K)`.
#[allow(clippy::too_many_arguments)]
pub fn delta_tilde(
    dim: usize,
    local_period: usize,
    gamma: f64,
    rho: f64,
    nodes: usize,
    weights: &[f64],
    sigma_g: f64,
    leapfrog_steps: usize,
) -> f64 {
    let t = local_period as f64;
    let w2: f64 = weights.iter().map(|w| w * w).sum();
    dim as f64
        * (t * t * (gamma + (1.0 - rho) * nodes as f64)
            + w2 * sigma_g * sigma_g / leapfrog_steps as f64)
}

/// The dynamic schedule: `(Kη)² = D / (8 c_d Δ̃ L)`,
/// `t1 = ⌈−ln 8 / (T ln(1 − μ(Kη)²/4))⌉ · T`, then epoch doubling with decay `1/√2`.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_schedule(
    d_init: f64,
    delta_tilde: f64,
    smoothness: f64,
    mu: f64,
    leapfrog_steps: usize,
    local_period: usize,
    c_d: f64,
) -> Result<StepsizeSchedule> {
    if !(d_init > 0.0 && delta_tilde > 0.0 && smoothness > 0.0 && mu > 0.0 && c_d > 0.0)
        || leapfrog_steps == 0
        || local_period == 0
    {
        return Err(Error::InvalidConfig(
            "dynamic schedule inputs must be positive".into(),
        ));
    }
    let k_eta_sq = d_init / (8.0 * c_d * delta_tilde * smoothness);
    let contraction = mu * k_eta_sq;
    if contraction >= 4.0 {
        return Err(Error::InvalidContraction(contraction));
    }
    let eta = k_eta_sq.sqrt() / leapfrog_steps as f64;
    let tp = local_period as f64;
    let rounds = (-(8f64.ln()) / (tp * (1.0 - contraction / 4.0).ln())).ceil();
    if !rounds.is_finite() || rounds < 1.0 {
        return Err(Error::DegenerateSchedule);
    }
    Ok(StepsizeSchedule::EpochDoubling {
        eta_init: eta,
        t1: rounds as usize * local_period,
        decay: std::f64::consts::FRAC_1_SQRT_2,
    })
}

/// `K = max(1, ⌊π/(3η)⌋)`.
pub fn heuristic_k(eta: f64) -> usize {
    ((std::f64::consts::PI / (3.0 * eta)).floor() as usize).max(1)
}
