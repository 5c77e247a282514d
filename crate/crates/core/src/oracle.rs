//! Robust value of a fixed agent policy by robust Bellman fixed-point
//! iteration. Every first-order run is checked against this baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ambiguity::linear_max;
use crate::error::{check_dim, Error, Result};
use crate::mdp::{dot, stopping_threshold, AgentPolicy, Kernel, NaturePolicy, RobustMdp, ValueVector};

#[derive(Clone, Debug)]
pub struct RobustBellmanResult {
    /// Agent-side robust value `V^ϑ_r`.
    pub v_r: ValueVector,
    /// Inner maximizers at the final iterate.
    pub worst_policy: NaturePolicy,
    pub iterations: usize,
    /// `‖𝒯v − v‖_∞` at the last step.
    pub residual: f64,
}

fn check_inputs(model: &RobustMdp, theta: &AgentPolicy, v: &[f64]) -> Result<()> {
    check_dim("agent policy states", model.n_states, theta.n_states())?;
    check_dim("agent policy actions", model.n_actions, theta.n_actions())?;
    check_dim("value vector", model.n_states, v.len())
}

fn apply(model: &RobustMdp, theta: &AgentPolicy, v: &[f64], worst: Option<&mut Kernel>) -> ValueVector {
    let (gamma, zeta) = (model.gamma, model.zeta);
    let mut out = Vec::with_capacity(model.n_states);
    let mut worst = worst;
    for s in 0..model.n_states {
        let theta_row = theta.row(s);
        let mut cost = 0.0;
        let mut nominal = 0.0;
        for (a, &w) in theta_row.iter().enumerate() {
            cost += w * model.cost(s, a);
            nominal += w * dot(model.nominal_kernel.row(s, a), v);
        }
        let (d_star, adversarial) = linear_max(&model.ambiguity, s, theta_row, v);
        if let Some(k) = worst.as_deref_mut() {
            k.set_slice(s, &d_star);
        }
        out.push(cost + gamma * ((1.0 - zeta) * nominal + zeta * adversarial));
    }
    ValueVector(out)
}

/// `(𝒯v)(s) = Σ_a ϑ(a|s)c(s,a) + γ[(1−ζ)Σ_a ϑ(a|s)⟨P̄_{s,a}, v⟩ + ζ max_{D∈𝒟_s}⟨D, ϑ(·|s)⊗v⟩]`.
pub fn robust_bellman_apply(model: &RobustMdp, theta: &AgentPolicy, v: &ValueVector) -> Result<ValueVector> {
    check_inputs(model, theta, v)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("value vector", "entries must be finite"));
    }
    Ok(apply(model, theta, v, None))
}

/// Iterates `v ← 𝒯v` from zero until `‖𝒯v − v‖_∞ ≤ tol(1−γ)/γ`, so the
/// returned value is within `tol` of `V^ϑ_r`.
pub fn robust_value(model: &RobustMdp, theta: &AgentPolicy, tol: f64) -> Result<RobustBellmanResult> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let mut v = ValueVector::zeros(model.n_states);
    check_inputs(model, theta, &v)?;
    let threshold = stopping_threshold(tol, model.gamma);
    let mut iterations = 0;
    loop {
        let next = apply(model, theta, &v, None);
        iterations += 1;
        let residual = next.dist_inf(&v);
        v = next;
        if residual <= threshold {
            let mut worst = Kernel::zeros(model.n_states, model.n_actions);
            apply(model, theta, &v, Some(&mut worst));
            return Ok(RobustBellmanResult {
                v_r: v,
                worst_policy: NaturePolicy { choice: worst },
                iterations,
                residual,
            });
        }
    }
}

/// Largest observed `‖𝒯v − 𝒯v'‖_∞ / ‖v − v'‖_∞` over random pairs drawn
/// uniformly from `[0, 1/(1−γ)]^{|S|}`. Identical pairs are skipped.
pub fn contraction_check(model: &RobustMdp, theta: &AgentPolicy, trials: usize, rng_seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let n = model.n_states;
    let hi = 1.0 / (1.0 - model.gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let v = ValueVector((0..n).map(|_| rng.random_range(0.0..hi)).collect());
        let w = ValueVector((0..n).map(|_| rng.random_range(0.0..hi)).collect());
        let gap = v.dist_inf(&w);
        if gap == 0.0 {
            continue;
        }
        let tv = robust_bellman_apply(model, theta, &v)?;
        let tw = robust_bellman_apply(model, theta, &w)?;
        worst = worst.max(tv.dist_inf(&tw) / gap);
    }
    Ok(worst)
}
