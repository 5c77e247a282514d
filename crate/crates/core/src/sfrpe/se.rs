//! Simulator-based evaluation of nature's value by a truncated, sampled
//! Neumann series.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{nature_cost, AgentPolicy, NaturePolicy, RobustMdp, ValueVector};
use crate::rng::Streams;

use super::sim::{sample_index, Simulator};

/// Quantities of one `(ϑ, π)` pair that stay fixed across sample rounds:
/// nature's cost `𝔠` and `D^{π,ϑ}(s, s') = Σ_a ϑ(a|s)D^{π(s)}_a(s')`.
#[derive(Clone, Debug)]
pub struct SeContext {
    cost: Vec<f64>,
    d_mix: Vec<f64>,
    n_states: usize,
    gamma: f64,
    zeta: f64,
}

impl SeContext {
    pub fn new(model: &RobustMdp, theta: &AgentPolicy, pi: &NaturePolicy) -> Result<Self> {
        let cost = nature_cost(model, theta)?.into_inner();
        let n = model.n_states;
        if pi.choice.n_states() != n || pi.choice.n_actions() != model.n_actions {
            return Err(Error::DimensionMismatch {
                context: "nature policy",
                expected: n,
                found: pi.choice.n_states(),
            });
        }
        let mut d_mix = vec![0.0; n * n];
        for s in 0..n {
            for (a, &w) in theta.row(s).iter().enumerate() {
                for (t, &q) in pi.choice.row(s, a).iter().enumerate() {
                    d_mix[s * n + t] += w * q;
                }
            }
        }
        Ok(SeContext {
            cost,
            d_mix,
            n_states: n,
            gamma: model.gamma,
            zeta: model.zeta,
        })
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    /// `D^{π,ϑ}` as a dense row-major `|S|×|S|` table.
    pub fn d_mix(&self) -> &[f64] {
        &self.d_mix
    }

    /// `𝔠 + γ((1−ζ)P̂ + ζD^{π,ϑ})w` where `P̂` sends state `s` to `next[s]`.
    fn step(&self, next: &[usize], w: &[f64]) -> Vec<f64> {
        let n = self.n_states;
        (0..n)
            .map(|s| {
                let row = &self.d_mix[s * n..(s + 1) * n];
                let mixed: f64 = row.iter().zip(w).map(|(d, x)| d * x).sum();
                self.cost[s] + self.gamma * ((1.0 - self.zeta) * w[next[s]] + self.zeta * mixed)
            })
            .collect()
    }

    /// Estimate `Σ_{i<l} γ^i R_i 𝔠` with `R_0 = I` and
    /// `R_i = R_{i−1}((1−ζ)P̂_i + ζD^{π,ϑ})`, where round `i` (1-based)
    /// uses `rounds[i−1]` as the sampled next state of every state. So
    /// `l = rounds.len() + 1`.
    pub fn estimate_from_samples(&self, rounds: &[Vec<usize>]) -> ValueVector {
        let mut w = self.cost.clone();
        for next in rounds.iter().rev() {
            w = self.step(next, &w);
        }
        ValueVector(w)
    }
}

/// Draws `l − 1` rounds of `(a, s')` per state, with `a ∼ ϑ(·|s)` and
/// `s' ∼ P̄_{s,a}`. State `s` reads from stream `streams.child(s)`.
pub fn se_draw_rounds(
    sim: &Simulator,
    theta: &AgentPolicy,
    l: usize,
    streams: Streams,
) -> Vec<Vec<usize>> {
    let n = sim.n_states();
    let rounds = l.saturating_sub(1);
    let mut out = vec![vec![0usize; n]; rounds];
    for s in 0..n {
        let mut rng = streams.child(s as u64).rng();
        for round in out.iter_mut() {
            let a = sample_index(theta.row(s), &mut rng);
            round[s] = sim.sample_next(s, a, &mut rng);
        }
    }
    out
}

/// One SE estimate `𝒱̂^π` with `l` series terms. Always satisfies
/// `‖𝒱̂‖_∞ ≤ (1 − γ^l)/(1−γ)`, and its mean is the truncated series
/// `Σ_{i<l} γ^i (𝙿^π)^i 𝔠`.
pub fn se_evaluate(
    sim: &Simulator,
    model: &RobustMdp,
    theta: &AgentPolicy,
    pi: &NaturePolicy,
    l: usize,
    streams: Streams,
) -> Result<ValueVector> {
    if l == 0 {
        return Err(Error::param("l", "must be at least 1"));
    }
    let ctx = SeContext::new(model, theta, pi)?;
    Ok(ctx.estimate_from_samples(&se_draw_rounds(sim, theta, l, streams)))
}

/// Draws with an explicit generator, for callers that manage their own
/// randomness.
pub fn se_evaluate_with<R: Rng + ?Sized>(
    sim: &Simulator,
    model: &RobustMdp,
    theta: &AgentPolicy,
    pi: &NaturePolicy,
    l: usize,
    rng: &mut R,
) -> Result<ValueVector> {
    if l == 0 {
        return Err(Error::param("l", "must be at least 1"));
    }
    let ctx = SeContext::new(model, theta, pi)?;
    let n = model.n_states;
    let rounds: Vec<Vec<usize>> = (1..l)
        .map(|_| {
            (0..n)
                .map(|s| {
                    let a = sample_index(theta.row(s), rng);
                    sim.sample_next(s, a, rng)
                })
                .collect()
        })
        .collect();
    Ok(ctx.estimate_from_samples(&rounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::garnet::{generate_garnet, GarnetSpec};
    use crate::mdp::fixtures::canonical;
    use crate::mdp::{nature_value, state_chain, Kernel};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn truncated_series(model: &RobustMdp, theta: &AgentPolicy, pi: &NaturePolicy, l: usize) -> Vec<f64> {
        let p = state_chain(model, theta, pi).unwrap().0;
        let c = DVector::from_vec(nature_cost(model, theta).unwrap().into_inner());
        let mut term = c.clone();
        let mut total = DVector::zeros(c.len());
        for _ in 0..l {
            total += &term;
            term = &p * term * model.gamma;
        }
        total.as_slice().to_vec()
    }

    fn matrix_recursion(ctx: &SeContext, rounds: &[Vec<usize>]) -> Vec<f64> {
        let n = ctx.n_states;
        let c = DVector::from_column_slice(ctx.cost());
        let d = DMatrix::from_row_slice(n, n, ctx.d_mix());
        let mut r = DMatrix::<f64>::identity(n, n);
        let mut v = c.clone();
        let mut discount = 1.0;
        for next in rounds {
            let mut p_hat = DMatrix::zeros(n, n);
            for s in 0..n {
                p_hat[(s, next[s])] = 1.0;
            }
            r = &r * (p_hat * (1.0 - ctx.zeta) + &d * ctx.zeta);
            discount *= ctx.gamma;
            v += &r * &c * discount;
        }
        v.as_slice().to_vec()
    }

    // every assignment of (action, next state) to each state in one round,
    // with its probability
    fn round_outcomes(model: &RobustMdp, theta: &AgentPolicy) -> Vec<(f64, Vec<usize>)> {
        let n = model.n_states;
        let mut out = vec![(1.0, Vec::new())];
        for s in 0..n {
            let mut next_out = Vec::new();
            for (p, assign) in &out {
                for a in 0..model.n_actions {
                    for t in 0..n {
                        let q = theta.row(s)[a] * model.nominal_kernel.row(s, a)[t];
                        if q > 0.0 {
                            let mut v = assign.clone();
                            v.push(t);
                            next_out.push((p * q, v));
                        }
                    }
                }
            }
            out = next_out;
        }
        out
    }

    fn random_policy(n: usize, na: usize, seed: u64) -> NaturePolicy {
        let mut rng = Streams::new(seed).rng();
        let mut k = Kernel::zeros(n, na);
        for s in 0..n {
            for a in 0..na {
                let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
                let total: f64 = w.iter().sum();
                k.row_mut(s, a).iter_mut().zip(&w).for_each(|(p, x)| *p = x / total);
            }
        }
        NaturePolicy { choice: k }
    }

    #[test]
    fn brute_force_mean_is_truncated_series() {
        for seed in 0..3 {
            let (model, theta) = generate_garnet(&GarnetSpec::new(3, 2, 2, 0.8, 0.4, seed));
            let pi = random_policy(3, 2, seed + 100);
            let ctx = SeContext::new(&model, &theta, &pi).unwrap();
            let outcomes = round_outcomes(&model, &theta);
            for l in 1..=3 {
                let mut mean = [0.0; 3];
                let mut mass = 0.0;
                let mut paths: Vec<(f64, Vec<Vec<usize>>)> = vec![(1.0, Vec::new())];
                for _ in 1..l {
                    paths = paths
                        .iter()
                        .flat_map(|(p, rs)| {
                            outcomes.iter().map(move |(q, o)| {
                                let mut rs = rs.clone();
                                rs.push(o.clone());
                                (p * q, rs)
                            })
                        })
                        .collect();
                }
                for (p, rounds) in &paths {
                    let v = ctx.estimate_from_samples(rounds);
                    mass += p;
                    for s in 0..3 {
                        mean[s] += p * v[s];
                    }
                }
                assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
                let expect = truncated_series(&model, &theta, &pi, l);
                for s in 0..3 {
                    assert_abs_diff_eq!(mean[s], expect[s], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn horner_matches_matrix_recursion() {
        let (model, theta) = generate_garnet(&GarnetSpec::new(6, 3, 3, 0.9, 0.6, 8));
        let pi = random_policy(6, 3, 1);
        let sim = Simulator::new(&model.nominal_kernel);
        let ctx = SeContext::new(&model, &theta, &pi).unwrap();
        for seed in 0..5 {
            let rounds = se_draw_rounds(&sim, &theta, 12, Streams::new(seed));
            let fast = ctx.estimate_from_samples(&rounds);
            let slow = matrix_recursion(&ctx, &rounds);
            for s in 0..6 {
                assert_abs_diff_eq!(fast[s], slow[s], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_cost_gives_zero() {
        let (mut model, theta) = generate_garnet(&GarnetSpec::new(4, 2, 2, 0.9, 0.5, 3));
        model.cost.iter_mut().for_each(|c| *c = 0.0);
        let sim = Simulator::new(&model.nominal_kernel);
        let v = se_evaluate(&sim, &model, &theta, &NaturePolicy::uniform(4, 2), 10, Streams::new(1)).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_kernel_without_mixing_is_exact() {
        let n = 4;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|s| {
                let mut r = vec![0.0; n];
                r[(s + 1) % n] = 1.0;
                r
            })
            .collect();
        let kernel = Kernel::from_rows(n, 1, &rows).unwrap();
        let cost: Vec<Vec<f64>> = (0..n).map(|s| vec![s as f64 / 4.0]).collect();
        let model = RobustMdp::new(&cost, kernel, 0.9, 0.0, crate::ambiguity::AmbiguityDescriptor::FullSimplex).unwrap();
        let theta = AgentPolicy::uniform(n, 1);
        let pi = NaturePolicy::uniform(n, 1);
        let sim = Simulator::new(&model.nominal_kernel);
        for l in [1, 2, 7, 25] {
            let v = se_evaluate(&sim, &model, &theta, &pi, l, Streams::new(l as u64)).unwrap();
            let expect = truncated_series(&model, &theta, &pi, l);
            for s in 0..n {
                assert_abs_diff_eq!(v[s], expect[s], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn bounded_and_nearly_unbiased_on_canonical() {
        let (model, theta) = canonical(1.0);
        let pi = NaturePolicy::point_mass(2, 1, 1);
        let exact = nature_value(&model, &theta, &pi).unwrap();
        assert_abs_diff_eq!(exact[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(exact[1], -2.0, epsilon = 1e-12);
        let sim = Simulator::new(&model.nominal_kernel);
        let l = 20;
        let seeds = 2000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for seed in 0..seeds {
            let v = se_evaluate(&sim, &model, &theta, &pi, l, Streams::new(seed)).unwrap();
            assert!(v.inf_norm() <= 2.0);
            for s in 0..2 {
                sum[s] += v[s];
                sq[s] += v[s] * v[s];
            }
        }
        let bias_bound = 0.5f64.powi(l as i32) / 0.5;
        for s in 0..2 {
            let mean = sum[s] / seeds as f64;
            let var = (sq[s] / seeds as f64 - mean * mean).max(0.0);
            let stderr = (var / seeds as f64).sqrt();
            assert!((mean - exact[s]).abs() <= bias_bound + 3.0 * stderr);
        }
    }

    #[test]
    fn garnet_bound_and_stream_reproducibility() {
        let (model, theta) = generate_garnet(&GarnetSpec::new(5, 3, 2, 0.7, 0.5, 2));
        let pi = random_policy(5, 3, 4);
        let sim = Simulator::new(&model.nominal_kernel);
        for seed in 0..200 {
            let v = se_evaluate(&sim, &model, &theta, &pi, 15, Streams::new(seed)).unwrap();
            assert!(v.inf_norm() <= 1.0 / 0.3);
            let again = se_evaluate(&sim, &model, &theta, &pi, 15, Streams::new(seed)).unwrap();
            assert_eq!(v, again);
        }
        assert!(se_evaluate(&sim, &model, &theta, &pi, 0, Streams::new(0)).is_err());
        let mut rng = Streams::new(1).rng();
        let v = se_evaluate_with(&sim, &model, &theta, &pi, 15, &mut rng).unwrap();
        assert!(v.inf_norm() <= 1.0 / 0.3);
    }
}
