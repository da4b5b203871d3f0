//! Federated averaging Hamiltonian Monte Carlo.
//!
//! Local unadjusted HMC with periodic weighted averaging across nodes,
//! correlated momenta, a de-bias variant, stepsize schedules and the
//! metrics used to evaluate the resulting samples.

pub mod ensemble;
pub mod error;
pub mod federation;
pub mod integrator;
pub mod metrics;
pub mod models;
pub mod parallel;
pub mod rng;
pub mod schedules;
pub mod trace;
pub mod vector;

pub use ensemble::Ensemble;
pub use error::{Error, Result};
pub use federation::{
    debias_leapfrog, lower_bound_trajectory, run_debias_fa_hmc, run_fa_hmc, run_fa_ld,
    sample_correlated_momentum, DebiasAnchor, Federation, FederationConfig, FirstEpochAnchor,
};
pub use integrator::{closed_form_quadratic, hmc_chain, leapfrog, LeapfrogResult};
pub use metrics::{
    empirical_moments, gaussian_product_posterior, marginal_error, predictive_metrics, split_r_hat,
    w2_gaussian, DiagGaussian, PredictiveMetrics, SampleMatrix,
};
pub use models::{GradientNoise, LogisticDataset, LogisticNode, QuadraticNode, TargetModel};
pub use parallel::Execution;
pub use schedules::StepsizeSchedule;
pub use trace::ChainTrace;
