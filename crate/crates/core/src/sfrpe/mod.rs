//! Stochastic first-order robust policy evaluation: dual averaging driven by
//! a sampled evaluation operator, returning a weighted average of the
//! per-iteration estimates.

pub mod se;
pub mod sim;
pub mod slpe;

use std::time::Instant;

use crate::ambiguity::{prox_step, ProxAccumulator};
use crate::error::{Error, Result};
use crate::mdp::{AgentPolicy, Kernel, NaturePolicy, RobustMdp, ValueVector};
use crate::rng::{Streams, SE, SLPE};

pub use se::{se_evaluate, SeContext};
pub use sim::Simulator;
pub use slpe::{slpe_deterministic_f, slpe_evaluate, slpe_gradient, FeatureMap, SlpeConfig, SlpeSample, SlpeSystem};

/// `β_t = √t` and `λ_t = (t+1)λ` with `λ = γζM/(2√(μ_w w̄))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SfrpeSchedule {
    /// Bound on `‖𝒱̂‖_∞` used to scale `λ`.
    pub m: f64,
    pub lambda: f64,
}

impl SfrpeSchedule {
    pub fn new(m: f64, mu_w: f64, w_bar: f64, gamma: f64, zeta: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::param("M", format!("must be positive, got {m}")));
        }
        if !(mu_w > 0.0) {
            return Err(Error::param("mu_w", "must be positive"));
        }
        if !(w_bar >= 0.0) {
            return Err(Error::param("w_bar", "must be nonnegative"));
        }
        let lambda = if w_bar > 0.0 {
            gamma * zeta * m / (2.0 * (mu_w * w_bar).sqrt())
        } else {
            0.0
        };
        Ok(SfrpeSchedule { m, lambda })
    }

    /// Schedule for a model, with `μ_w = 1` and `w̄ = log|S|`.
    pub fn for_model(model: &RobustMdp, m: f64) -> Result<Self> {
        Self::new(m, 1.0, model.w_bar(), model.gamma, model.zeta)
    }

    pub fn beta(&self, t: usize) -> f64 {
        (t as f64).sqrt()
    }

    /// `(t+1)λ`. When `λ = 0` (no mixing or a single state) the dual stays
    /// at zero and any positive weight gives the same prox, so `t + 1` is
    /// used.
    pub fn lambda_k(&self, t: usize) -> f64 {
        let scale = if self.lambda > 0.0 { self.lambda } else { 1.0 };
        (t as f64 + 1.0) * scale
    }
}

/// Running `Σ_t β_t 𝒱̂_t` and `Σ_t β_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputAverage {
    pub weighted_sum: Vec<f64>,
    pub total_weight: f64,
}

impl OutputAverage {
    pub fn new(n_states: usize) -> Self {
        OutputAverage {
            weighted_sum: vec![0.0; n_states],
            total_weight: 0.0,
        }
    }

    pub fn push(&mut self, beta: f64, v: &[f64]) {
        self.total_weight += beta;
        self.weighted_sum.iter_mut().zip(v).for_each(|(a, x)| *a += beta * x);
    }

    /// `Σ_t θ_t 𝒱̂_t` with `θ_t = β_t / Σβ`.
    pub fn estimate(&self) -> ValueVector {
        if self.total_weight == 0.0 {
            return ValueVector::zeros(self.weighted_sum.len());
        }
        ValueVector(self.weighted_sum.iter().map(|x| x / self.total_weight).collect())
    }
}

#[derive(Clone, Debug)]
pub enum StochasticOperator {
    /// Simulator rollouts with `l` series terms.
    Se { l: usize },
    /// Linear-feature SGD.
    Slpe { features: FeatureMap, cfg: SlpeConfig },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SfrpeRecord {
    pub t: usize,
    pub beta_t: f64,
    pub lambda_t: f64,
    pub vhat_inf_norm: f64,
    /// Running output estimate at state 0.
    pub est_s0: f64,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct SfrpeResult {
    pub output: OutputAverage,
    pub records: Vec<SfrpeRecord>,
    /// `π_{k+1}`.
    pub final_policy: NaturePolicy,
}

impl SfrpeResult {
    pub fn estimate(&self) -> ValueVector {
        self.output.estimate()
    }
}

/// Runs `iterations` SFRPE steps `t = 1..=k` from the uniform `π_1`.
///
/// Iteration `t` draws from `streams.child(SE|SLPE).child(t)`; SE further
/// splits by state.
pub fn sfrpe_run(
    model: &RobustMdp,
    sim: &Simulator,
    theta: &AgentPolicy,
    operator: &StochasticOperator,
    schedule: &SfrpeSchedule,
    iterations: usize,
    streams: Streams,
) -> Result<SfrpeResult> {
    if iterations == 0 {
        return Err(Error::param("iterations", "must be at least 1"));
    }
    if sim.n_states() != model.n_states || sim.n_actions() != model.n_actions {
        return Err(Error::input("simulator", "shape differs from the model"));
    }
    match operator {
        StochasticOperator::Se { l } if *l == 0 => return Err(Error::param("l", "must be at least 1")),
        StochasticOperator::Slpe { features, cfg } => cfg.validate(features)?,
        _ => {}
    }
    let start = Instant::now();
    let log_coef = (model.gamma * model.zeta).ln();
    let mut acc = ProxAccumulator::new(model.n_states);
    let mut output = OutputAverage::new(model.n_states);
    let mut records = Vec::with_capacity(iterations);
    let mut pi = NaturePolicy::uniform(model.n_states, model.n_actions);
    for t in 1..=iterations {
        let vhat = match operator {
            StochasticOperator::Se { l } => {
                se::se_evaluate(sim, model, theta, &pi, *l, streams.child(SE).child(t as u64))?
            }
            StochasticOperator::Slpe { features, cfg } => {
                slpe::slpe_evaluate(sim, model, theta, &pi, features, cfg, streams.child(SLPE).child(t as u64))?.1
            }
        };
        let beta = schedule.beta(t);
        let lambda = schedule.lambda_k(t);
        output.push(beta, &vhat);
        acc.fold(beta.ln() + log_coef, &vhat);
        acc.set_lambda(lambda);
        let mut choice = Kernel::zeros(model.n_states, model.n_actions);
        for s in 0..model.n_states {
            choice.set_slice(s, &prox_step(&acc, &model.ambiguity, s, theta.row(s))?);
        }
        pi = NaturePolicy { choice };
        records.push(SfrpeRecord {
            t,
            beta_t: beta,
            lambda_t: lambda,
            vhat_inf_norm: vhat.inf_norm(),
            est_s0: output.weighted_sum[0] / output.total_weight,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(SfrpeResult {
        output,
        records,
        final_policy: pi,
    })
}

/// `(−ε, 4γζM√w̄/((1−γ)√(μ_w k)) + 3ε/(1−γ))`: the band containing
/// `E[output] − 𝒱*` for an operator with bias at most `ε`.
#[allow(clippy::too_many_arguments)]
pub fn theoretical_expectation_bound(
    m: f64,
    mu_w: f64,
    w_bar: f64,
    gamma: f64,
    zeta: f64,
    eps_bias: f64,
    k: usize,
) -> (f64, f64) {
    let main = 4.0 * gamma * zeta * m * w_bar.sqrt() / ((1.0 - gamma) * (mu_w * k as f64).sqrt());
    (-eps_bias, main + 3.0 * eps_bias / (1.0 - gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::garnet::{generate_garnet, GarnetSpec};
    use crate::mdp::fixtures::canonical;
    use crate::mdp::{agent_value, Distribution};
    use approx::assert_abs_diff_eq;

    #[test]
    fn expectation_bound_formula() {
        let (lo, hi) = theoretical_expectation_bound(2.0, 1.0, 2f64.ln(), 0.5, 1.0, 0.0, 10_000);
        assert_eq!(lo, 0.0);
        assert_abs_diff_eq!(hi, 4.0 * 0.5 * 2.0 * 2f64.ln().sqrt() / (0.5 * 100.0), epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 0.0666, epsilon = 1e-4);
        assert_eq!(theoretical_expectation_bound(2.0, 1.0, 1.0, 0.5, 0.0, 0.0, 10), (0.0, 0.0));
        let (_, a) = theoretical_expectation_bound(3.0, 0.5, 1.2, 0.9, 0.4, 0.0, 100);
        let (_, b) = theoretical_expectation_bound(3.0, 0.5, 1.2, 0.9, 0.4, 0.0, 400);
        assert_abs_diff_eq!(b, a / 2.0, epsilon = 1e-15);
        let (lo, hi) = theoretical_expectation_bound(3.0, 0.5, 1.2, 0.9, 0.4, 0.01, 400);
        assert_eq!(lo, -0.01);
        assert_abs_diff_eq!(hi, b + 0.3, epsilon = 1e-12);
    }

    #[test]
    fn schedule_shape() {
        let sched = SfrpeSchedule::new(2.0, 1.0, 2f64.ln(), 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(sched.lambda, 0.5 / 2f64.ln().sqrt(), epsilon = 1e-15);
        assert_eq!(sched.beta(0), 0.0);
        assert_eq!(sched.beta(4), 2.0);
        for t in 0..10 {
            assert!(sched.lambda_k(t + 1) > sched.lambda_k(t));
        }
        assert!(SfrpeSchedule::new(0.0, 1.0, 1.0, 0.5, 1.0).is_err());
        let flat = SfrpeSchedule::new(2.0, 1.0, 1.0, 0.5, 0.0).unwrap();
        assert_eq!(flat.lambda_k(2), 3.0);
    }

    #[test]
    fn output_weights() {
        let mut out = OutputAverage::new(2);
        out.push(1.0, &[1.0, 0.0]);
        out.push(3.0, &[-1.0, 4.0]);
        assert_eq!(out.estimate().0, vec![-0.5, 3.0]);
    }

    #[test]
    fn single_iteration_returns_first_estimate() {
        let (model, theta) = generate_garnet(&GarnetSpec::new(4, 2, 2, 0.8, 0.5, 1));
        let sim = Simulator::new(&model.nominal_kernel);
        let sched = SfrpeSchedule::for_model(&model, 5.0).unwrap();
        let streams = Streams::new(3);
        let res = sfrpe_run(&model, &sim, &theta, &StochasticOperator::Se { l: 10 }, &sched, 1, streams).unwrap();
        let direct = se_evaluate(&sim, &model, &theta, &NaturePolicy::uniform(4, 2), 10, streams.child(SE).child(1)).unwrap();
        assert_eq!(res.estimate(), direct);
        assert_eq!(res.records.len(), 1);
        assert!(sfrpe_run(&model, &sim, &theta, &StochasticOperator::Se { l: 10 }, &sched, 0, streams).is_err());
    }

    #[test]
    fn output_is_convex_combination_and_reproducible() {
        let (model, theta) = generate_garnet(&GarnetSpec::new(5, 3, 2, 0.9, 0.6, 2));
        let sim = Simulator::new(&model.nominal_kernel);
        let sched = SfrpeSchedule::for_model(&model, 10.0).unwrap();
        let op = StochasticOperator::Se { l: 20 };
        let a = sfrpe_run(&model, &sim, &theta, &op, &sched, 50, Streams::new(7)).unwrap();
        let b = sfrpe_run(&model, &sim, &theta, &op, &sched, 50, Streams::new(7)).unwrap();
        assert_eq!(a.estimate(), b.estimate());
        let max_norm = a.records.iter().map(|r| r.vhat_inf_norm).fold(0.0, f64::max);
        assert!(a.estimate().inf_norm() <= max_norm + 1e-12);
        assert!(max_norm <= 10.0);
    }

    #[test]
    fn zero_mixing_matches_standard_value() {
        let (model, theta) = generate_garnet(&GarnetSpec::new(4, 2, 2, 0.5, 0.0, 5));
        let sim = Simulator::new(&model.nominal_kernel);
        let sched = SfrpeSchedule::for_model(&model, 2.0).unwrap();
        let standard = agent_value(&model, &theta, &model.nominal_kernel).unwrap();
        let l = 20;
        let seeds = 100;
        let mut mean = [0.0; 4];
        for seed in 0..seeds {
            let res = sfrpe_run(&model, &sim, &theta, &StochasticOperator::Se { l }, &sched, 20, Streams::new(seed)).unwrap();
            assert_eq!(res.final_policy, NaturePolicy::uniform(4, 2));
            for (m, x) in mean.iter_mut().zip(res.estimate().iter()) {
                *m += x / seeds as f64;
            }
        }
        for s in 0..4 {
            assert!((mean[s] + standard[s]).abs() <= 0.5f64.powi(l as i32) / 0.5 + 0.05);
        }
    }

    #[test]
    fn canonical_approaches_oracle() {
        let (model, theta) = canonical(1.0);
        let sim = Simulator::new(&model.nominal_kernel);
        let sched = SfrpeSchedule::for_model(&model, 2.0).unwrap();
        let res = sfrpe_run(&model, &sim, &theta, &StochasticOperator::Se { l: 30 }, &sched, 1000, Streams::new(0)).unwrap();
        let est = res.estimate();
        let (_, hi) = theoretical_expectation_bound(2.0, 1.0, model.w_bar(), 0.5, 1.0, 0.5f64.powi(30) / 0.5, 1000);
        assert!(est[0] + 1.0 <= hi && est[0] + 1.0 >= -1e-8);
        assert!(est[1] + 2.0 <= hi && est[1] + 2.0 >= -1e-8);
    }

    #[test]
    fn slpe_operator_runs() {
        let (model, theta) = canonical(1.0);
        let sim = Simulator::new(&model.nominal_kernel);
        let sched = SfrpeSchedule::for_model(&model, 2.0).unwrap();
        let op = StochasticOperator::Slpe {
            features: FeatureMap::identity(2),
            cfg: SlpeConfig::new(Distribution::uniform(2), 0.2, 200, 2),
        };
        let res = sfrpe_run(&model, &sim, &theta, &op, &sched, 100, Streams::new(1)).unwrap();
        let est = res.estimate();
        assert!((est[0] + 1.0).abs() < 0.2 && (est[1] + 2.0).abs() < 0.2, "{est:?}");
    }
}
