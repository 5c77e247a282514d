//! Deterministic first-order robust policy evaluation: dual averaging over
//! nature's policy driven by an exact or bounded-error evaluation oracle.

use std::time::Instant;

use rand::Rng;

use crate::ambiguity::{prox_step, ProxAccumulator};
use crate::error::{Error, Result};
use crate::mdp::{nature_value, AgentPolicy, Distribution, Kernel, NaturePolicy, RobustMdp, ValueVector};
use crate::rng::{Streams, NOISE};

/// Step weights `β_k` and regularization `λ_k` for FRPE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FrpeSchedule {
    /// `β_k = r^{-k}` with `r = 1 − (1−γ)/κ`, and constant `λ_k = λζ`.
    Geometric { kappa: f64, lambda_scaled: f64 },
}

impl FrpeSchedule {
    pub fn geometric(kappa: f64, lambda_scaled: f64) -> Result<Self> {
        if !(kappa >= 1.0) || !kappa.is_finite() {
            return Err(Error::param("kappa", format!("must be a finite value >= 1, got {kappa}")));
        }
        if !(lambda_scaled > 0.0) || !lambda_scaled.is_finite() {
            return Err(Error::param("lambda", format!("must be positive, got {lambda_scaled}")));
        }
        Ok(FrpeSchedule::Geometric { kappa, lambda_scaled })
    }

    /// Default schedule for initial distribution `rho`: `κ = 1/min_s ρ(s)`,
    /// which bounds `‖d_ρ^{π*}/ρ‖_∞` from above, and `λ = 1`.
    pub fn default_for(rho: &Distribution) -> Result<Self> {
        Self::geometric(1.0 / rho.min(), 1.0)
    }

    pub fn kappa(&self) -> f64 {
        match *self {
            FrpeSchedule::Geometric { kappa, .. } => kappa,
        }
    }

    pub fn lambda_scaled(&self) -> f64 {
        match *self {
            FrpeSchedule::Geometric { lambda_scaled, .. } => lambda_scaled,
        }
    }

    /// Contraction factor `r = 1 − (1−γ)/κ`.
    pub fn ratio(&self, gamma: f64) -> f64 {
        1.0 - (1.0 - gamma) / self.kappa()
    }

    pub fn log_beta(&self, k: usize, gamma: f64) -> f64 {
        -(k as f64) * self.ratio(gamma).ln()
    }

    pub fn lambda_k(&self, zeta: f64) -> f64 {
        self.lambda_scaled() * zeta
    }

    fn check(&self, gamma: f64) -> Result<()> {
        let r = self.ratio(gamma);
        if r > 0.0 && r < 1.0 {
            Ok(())
        } else {
            Err(Error::param("kappa", format!("ratio r = {r} must lie in (0, 1)")))
        }
    }
}

/// Source of (possibly approximate) nature values `𝒱^π`.
pub trait Evaluator {
    fn evaluate(&mut self, model: &RobustMdp, theta: &AgentPolicy, pi: &NaturePolicy) -> Result<ValueVector>;

    fn is_exact(&self) -> bool;

    /// Declared bound on `‖𝒱̃ − 𝒱‖_∞`; zero for exact evaluators.
    fn error_bound(&self) -> f64;
}

pub type EvaluatorHandle = Box<dyn Evaluator + Send>;

/// Dense linear solve of the nature MDP.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactEvaluator;

impl Evaluator for ExactEvaluator {
    fn evaluate(&mut self, model: &RobustMdp, theta: &AgentPolicy, pi: &NaturePolicy) -> Result<ValueVector> {
        nature_value(model, theta, pi)
    }

    fn is_exact(&self) -> bool {
        true
    }

    fn error_bound(&self) -> f64 {
        0.0
    }
}

/// Wraps an evaluator and perturbs each output by independent uniform noise
/// in `[−ε, ε]`, drawn from a per-call stream of `seed`.
#[derive(Clone, Debug)]
pub struct NoisyEvaluator<E> {
    inner: E,
    epsilon: f64,
    streams: Streams,
    calls: u64,
}

pub fn make_noisy_evaluator<E: Evaluator>(exact: E, epsilon: f64, rng_seed: u64) -> Result<NoisyEvaluator<E>> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::param("epsilon", format!("must be finite and >= 0, got {epsilon}")));
    }
    Ok(NoisyEvaluator {
        inner: exact,
        epsilon,
        streams: Streams::new(rng_seed).child(NOISE),
        calls: 0,
    })
}

impl<E: Evaluator> Evaluator for NoisyEvaluator<E> {
    fn evaluate(&mut self, model: &RobustMdp, theta: &AgentPolicy, pi: &NaturePolicy) -> Result<ValueVector> {
        let mut v = self.inner.evaluate(model, theta, pi)?;
        let mut rng = self.streams.child(self.calls).rng();
        self.calls += 1;
        if self.epsilon > 0.0 {
            for x in v.iter_mut() {
                *x += rng.random_range(-self.epsilon..=self.epsilon);
            }
        }
        Ok(v)
    }

    fn is_exact(&self) -> bool {
        self.epsilon == 0.0 && self.inner.is_exact()
    }

    fn error_bound(&self) -> f64 {
        self.epsilon + self.inner.error_bound()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrpeRecord {
    pub k: usize,
    /// `f(π_k) = Σ_s ρ(s)𝒱^{π_k}(s)`, always from the exact evaluator.
    pub f_pi: f64,
    /// `f(π_k) − f(π*)` when the optimum was supplied.
    pub gap: Option<f64>,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct FrpeTrace {
    /// One record per iterate `π_0, …, π_K`.
    pub records: Vec<FrpeRecord>,
    pub final_policy: NaturePolicy,
    pub final_value: ValueVector,
}

impl FrpeTrace {
    pub fn final_gap(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.gap)
    }
}

fn prox_all(model: &RobustMdp, theta: &AgentPolicy, acc: &ProxAccumulator) -> Result<NaturePolicy> {
    let mut choice = Kernel::zeros(model.n_states, model.n_actions);
    for s in 0..model.n_states {
        choice.set_slice(s, &prox_step(acc, &model.ambiguity, s, theta.row(s))?);
    }
    Ok(NaturePolicy { choice })
}

/// Runs `iterations` FRPE updates from the uniform nature policy.
///
/// Each step folds `β_k γζ 𝒱̃^{π_k}` into the shared dual accumulator and
/// takes the entropic prox at every state. `f_star`, when given, is
/// `f(π*)` and turns on gap logging.
pub fn frpe_run(
    model: &RobustMdp,
    theta: &AgentPolicy,
    evaluator: &mut dyn Evaluator,
    schedule: &FrpeSchedule,
    iterations: usize,
    rho: &Distribution,
    f_star: Option<f64>,
) -> Result<FrpeTrace> {
    if iterations == 0 {
        return Err(Error::param("iterations", "must be at least 1"));
    }
    if rho.len() != model.n_states || !rho.has_full_support() {
        return Err(Error::param("rho", "initial distribution needs full support over the states"));
    }
    schedule.check(model.gamma)?;
    let start = Instant::now();
    let (gamma, zeta) = (model.gamma, model.zeta);
    let log_coef = (gamma * zeta).ln();
    let mut acc = ProxAccumulator::new(model.n_states);
    // with ζ = 0 the dual never moves and any positive weight gives the
    // uniform minimizer
    acc.set_lambda(if zeta > 0.0 { schedule.lambda_k(zeta) } else { schedule.lambda_scaled() });

    let objective = |v: &ValueVector| v.iter().zip(rho.iter()).map(|(x, p)| x * p).sum::<f64>();
    let mut records = Vec::with_capacity(iterations + 1);
    let mut pi = NaturePolicy::uniform(model.n_states, model.n_actions);
    for k in 0..=iterations {
        let exact = nature_value(model, theta, &pi)?;
        let f_pi = objective(&exact);
        records.push(FrpeRecord {
            k,
            f_pi,
            gap: f_star.map(|f| f_pi - f),
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if k == iterations {
            return Ok(FrpeTrace {
                records,
                final_policy: pi,
                final_value: exact,
            });
        }
        let estimate = if evaluator.is_exact() {
            exact
        } else {
            evaluator
                .evaluate(model, theta, &pi)
                .map_err(|e| Error::Evaluator {
                    iteration: k,
                    source: Box::new(e),
                })?
        };
        acc.fold(schedule.log_beta(k, gamma) + log_coef, &estimate);
        pi = prox_all(model, theta, &acc)?;
    }
    unreachable!()
}

/// `r^k (gap0 + 2λζw̄/(1−γ))`.
pub fn theoretical_gap_bound(schedule: &FrpeSchedule, gap0: f64, w_bar: f64, gamma: f64, zeta: f64, k: usize) -> f64 {
    let r = schedule.ratio(gamma);
    r.powf(k as f64) * (gap0 + 2.0 * schedule.lambda_scaled() * zeta * w_bar / (1.0 - gamma))
}

/// Additive floor `2(1+κ)γζε/(1−γ)²` left by an evaluator with sup-norm
/// error `ε`.
pub fn approx_floor(schedule: &FrpeSchedule, gamma: f64, zeta: f64, epsilon: f64) -> f64 {
    2.0 * (1.0 + schedule.kappa()) * gamma * zeta * epsilon / (1.0 - gamma).powi(2)
}

/// [`theoretical_gap_bound`] plus [`approx_floor`].
#[allow(clippy::too_many_arguments)]
pub fn approx_frpe_gap_bound(
    schedule: &FrpeSchedule,
    gap0: f64,
    w_bar: f64,
    gamma: f64,
    zeta: f64,
    epsilon: f64,
    k: usize,
) -> f64 {
    theoretical_gap_bound(schedule, gap0, w_bar, gamma, zeta, k) + approx_floor(schedule, gamma, zeta, epsilon)
}
