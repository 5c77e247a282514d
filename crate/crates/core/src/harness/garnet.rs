//! Garnet random instances: each `(s, a)` row of the nominal kernel reaches
//! exactly `branching` distinct next states with uniform-Dirichlet weights.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ambiguity::AmbiguityDescriptor;
use crate::error::{Error, Result};
use crate::mdp::{AgentPolicy, Kernel, RobustMdp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarnetSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub branching: usize,
    pub gamma: f64,
    pub zeta: f64,
    pub seed: u64,
}

impl GarnetSpec {
    pub fn new(n_states: usize, n_actions: usize, branching: usize, gamma: f64, zeta: f64, seed: u64) -> Self {
        GarnetSpec {
            n_states,
            n_actions,
            branching,
            gamma,
            zeta,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::param("garnet", "n_states and n_actions must be positive"));
        }
        if !(1..=self.n_states).contains(&self.branching) {
            return Err(Error::param(
                "garnet.branching",
                format!("must lie in [1, {}], got {}", self.n_states, self.branching),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::param("garnet.gamma", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::param("garnet.zeta", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Random model with costs uniform in `[0, 1)` and a uniform agent policy.
///
/// # Panics
///
/// If `spec` fails [`GarnetSpec::validate`].
pub fn generate_garnet(spec: &GarnetSpec) -> (RobustMdp, AgentPolicy) {
    spec.validate().expect("invalid garnet spec");
    let (ns, na) = (spec.n_states, spec.n_actions);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cost: Vec<Vec<f64>> = (0..ns)
        .map(|_| (0..na).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut kernel = Kernel::zeros(ns, na);
    for s in 0..ns {
        for a in 0..na {
            let support = sample(&mut rng, ns, spec.branching);
            // Exp(1) draws normalized to a uniform point of the simplex
            let weights: Vec<f64> = (0..spec.branching)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let total: f64 = weights.iter().sum();
            let row = kernel.row_mut(s, a);
            for (t, w) in support.iter().zip(&weights) {
                row[t] = w / total;
            }
        }
    }
    let model = RobustMdp::new(&cost, kernel, spec.gamma, spec.zeta, AmbiguityDescriptor::FullSimplex)
        .expect("garnet generator produced an invalid model");
    (model, AgentPolicy::uniform(ns, na))
}
