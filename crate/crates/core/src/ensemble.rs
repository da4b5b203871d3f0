//! Independent replicate federations advanced in lockstep.

use crate::error::{Error, Result};
use crate::federation::{Federation, FederationConfig};
use crate::metrics::SampleMatrix;
use crate::models::TargetModel;
use crate::parallel::{self, Execution};
use crate::rng::replicate_seed;

/// `R` federations sharing models and configuration, replicate `r` seeded
/// with `replicate_seed(master_seed, r)`.
#[derive(Debug, Clone)]
pub struct Ensemble<'m> {
    members: Vec<Federation<'m>>,
    execution: Execution,
}

impl<'m> Ensemble<'m> {
    pub fn new(
        config: &FederationConfig,
        models: &'m [TargetModel],
        theta0: &[f64],
        replicates: usize,
        debias: bool,
    ) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::Contract(
                "an ensemble needs at least one replicate".into(),
            ));
        }
        let execution = config.execution.effective(replicates);
        let members = (0..replicates)
            .map(|r| {
                let mut cfg = config.clone();
                cfg.master_seed = replicate_seed(config.master_seed, r as u64);
                if execution == Execution::Parallel {
                    cfg.execution = Execution::Sequential;
                }
                Federation::new(cfg, models, theta0, debias)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members, execution })
    }

    pub fn replicates(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Federation<'m>] {
        &self.members
    }

    /// Completed iterations (identical across members).
    pub fn iteration(&self) -> usize {
        self.members[0].iteration()
    }

    /// Advances every member by `iterations`. On failure reports the lowest
    /// failing replicate.
    pub fn advance(&mut self, iterations: usize) -> Result<()> {
        let mut outcomes: Vec<Result<()>> = (0..self.members.len()).map(|_| Ok(())).collect();
        let mut paired: Vec<(&mut Federation<'m>, &mut Result<()>)> =
            self.members.iter_mut().zip(outcomes.iter_mut()).collect();
        parallel::for_each_mut(self.execution, &mut paired, |_, (fed, out)| {
            **out = (0..iterations).try_for_each(|_| fed.step().map(|_| ()));
        });
        outcomes.into_iter().collect()
    }

    /// Current global parameter of every member, one row per replicate.
    pub fn global_thetas(&self) -> Result<SampleMatrix> {
        let rows: Vec<Vec<f64>> = self.members.iter().map(|f| f.global_theta()).collect();
        SampleMatrix::from_rows(&rows)
    }

    pub fn gradient_evals(&self) -> u64 {
        self.members
            .iter()
            .map(|f| f.gradient_evals() + f.anchor_gradient_evals())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::run_fa_hmc;
    use crate::models::QuadraticNode;

    #[test]
    fn members_match_standalone_runs() {
        let models: Vec<TargetModel> = vec![
            QuadraticNode::isotropic(2, 1.0, 1.0).unwrap().into(),
            QuadraticNode::isotropic(2, -1.0, 2.0).unwrap().into(),
        ];
        let mut cfg = FederationConfig::uniform(2, 3, 2, 0.2, 99);
        cfg.rho = 0.5;
        let mut ens = Ensemble::new(&cfg, &models, &[0.0; 2], 4, false).unwrap();
        ens.advance(10).unwrap();
        let rows = ens.global_thetas().unwrap();
        for r in 0..4 {
            let mut c = cfg.clone();
            c.master_seed = replicate_seed(99, r as u64);
            let tr = run_fa_hmc(&c, &models, &[0.0; 2], 10, 10).unwrap();
            assert_eq!(tr.last().unwrap(), rows.row(r));
        }
        assert_eq!(ens.iteration(), 10);
    }
}
