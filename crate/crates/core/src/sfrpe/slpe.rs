//! Stochastic least-squares evaluation of nature's value with linear
//! features, by SGD on the projected Bellman residual.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::mdp::{nature_cost, state_chain, AgentPolicy, Distribution, NaturePolicy, RobustMdp, ValueVector};
use crate::rng::Streams;

use super::sim::{sample_index, Simulator};

/// Feature matrix `Ψ` with rows `ψ(s)`, each of Euclidean norm at most 1.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    n_states: usize,
    d: usize,
    rows: Vec<f64>,
}

impl FeatureMap {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n_states = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if n_states == 0 || d == 0 {
            return Err(Error::input("features", "need at least one state and one feature"));
        }
        let mut flat = Vec::with_capacity(n_states * d);
        for (s, row) in rows.iter().enumerate() {
            check_dim("feature row length", d, row.len())?;
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::input("features", format!("row {s} is not finite")));
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1.0 + 1e-12 {
                return Err(Error::input("features", format!("row {s} has norm {norm} > 1")));
            }
            flat.extend_from_slice(row);
        }
        Ok(FeatureMap {
            n_states,
            d,
            rows: flat,
        })
    }

    /// `Ψ = I`: one indicator feature per state.
    pub fn identity(n_states: usize) -> Self {
        let mut rows = vec![0.0; n_states * n_states];
        for s in 0..n_states {
            rows[s * n_states + s] = 1.0;
        }
        FeatureMap {
            n_states,
            d: n_states,
            rows,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn psi(&self, s: usize) -> &[f64] {
        &self.rows[s * self.d..(s + 1) * self.d]
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_states, self.d, &self.rows)
    }

    /// `Ψθ`.
    pub fn values(&self, theta_vec: &[f64]) -> ValueVector {
        ValueVector((0..self.n_states).map(|s| dot(self.psi(s), theta_vec)).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlpeConfig {
    /// State sampling distribution `ν`; needs full support.
    pub nu: Distribution,
    pub eta: f64,
    pub iterations: usize,
    pub theta0: Vec<f64>,
}

impl SlpeConfig {
    /// Starts from `θ_0 = 0`.
    pub fn new(nu: Distribution, eta: f64, iterations: usize, d: usize) -> Self {
        SlpeConfig {
            nu,
            eta,
            iterations,
            theta0: vec![0.0; d],
        }
    }

    pub fn validate(&self, features: &FeatureMap) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::param("eta", format!("must be positive, got {}", self.eta)));
        }
        check_dim("sampling distribution", features.n_states(), self.nu.len())?;
        if !self.nu.has_full_support() {
            return Err(Error::param("nu", "sampling distribution needs full support"));
        }
        check_dim("initial parameter", features.d(), self.theta0.len())
    }
}

/// One draw `(s, 𝔠(s), x, x', y, y')` of the stochastic operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlpeSample {
    pub s: usize,
    pub cost: f64,
    pub x: usize,
    pub x_prime: usize,
    pub y: usize,
    pub y_prime: usize,
}

/// `F̂(θ) = [ψ(s)ᵀθ − γ((1−ζ)ψ(x') + ζψ(y'))ᵀθ − 𝔠(s)] · [ψ(s) − γ((1−ζ)ψ(x) + ζψ(y))]`.
pub fn slpe_gradient(sample: &SlpeSample, theta_vec: &[f64], features: &FeatureMap, gamma: f64, zeta: f64) -> Vec<f64> {
    let next = |a: usize, b: usize, k: usize| (1.0 - zeta) * features.psi(a)[k] + zeta * features.psi(b)[k];
    let d = features.d();
    let here = features.psi(sample.s);
    let residual = dot(here, theta_vec)
        - gamma
            * (0..d)
                .map(|k| next(sample.x_prime, sample.y_prime, k) * theta_vec[k])
                .sum::<f64>()
        - sample.cost;
    (0..d)
        .map(|k| residual * (here[k] - gamma * next(sample.x, sample.y, k)))
        .collect()
}

/// Draws `s ∼ ν` and two independent transitions from `s`: `a ∼ ϑ(·|s)`
/// with `x ∼ P̄_{s,a}`, `y ∼ D^{π(s)}_a`, and likewise `a'` with `x'`, `y'`.
pub fn slpe_draw<R: Rng + ?Sized>(
    sim: &Simulator,
    cost: &[f64],
    theta: &AgentPolicy,
    pi: &NaturePolicy,
    nu: &Distribution,
    rng: &mut R,
) -> SlpeSample {
    let s = sample_index(nu, rng);
    let a = sample_index(theta.row(s), rng);
    let x = sim.sample_next(s, a, rng);
    let y = sample_index(pi.choice.row(s, a), rng);
    let a_prime = sample_index(theta.row(s), rng);
    let x_prime = sim.sample_next(s, a_prime, rng);
    let y_prime = sample_index(pi.choice.row(s, a_prime), rng);
    SlpeSample {
        s,
        cost: cost[s],
        x,
        x_prime,
        y,
        y_prime,
    }
}

/// Runs `cfg.iterations` SGD steps `θ ← θ − ηF̂(θ)` from `cfg.theta0`,
/// reading one stream. Returns `θ_T` and `Ψθ_T`.
#[allow(clippy::too_many_arguments)]
pub fn slpe_evaluate(
    sim: &Simulator,
    model: &RobustMdp,
    theta: &AgentPolicy,
    pi: &NaturePolicy,
    features: &FeatureMap,
    cfg: &SlpeConfig,
    streams: Streams,
) -> Result<(Vec<f64>, ValueVector)> {
    cfg.validate(features)?;
    check_dim("feature rows", model.n_states, features.n_states())?;
    let cost = nature_cost(model, theta)?;
    let mut rng = streams.rng();
    let mut w = cfg.theta0.clone();
    for _ in 0..cfg.iterations {
        let sample = slpe_draw(sim, &cost, theta, pi, &cfg.nu, &mut rng);
        let g = slpe_gradient(&sample, &w, features, model.gamma, model.zeta);
        w.iter_mut().zip(&g).for_each(|(x, gi)| *x -= cfg.eta * gi);
    }
    let values = features.values(&w);
    Ok((w, values))
}

/// The linear system behind the stochastic operator:
/// `F(θ) = Aθ − b` with `A = Ψᵀ(I−γ𝙿^π)ᵀdiag(ν)(I−γ𝙿^π)Ψ` and
/// `b = Ψᵀ(I−γ𝙿^π)ᵀdiag(ν)𝔠`.
#[derive(Clone, Debug)]
pub struct SlpeSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Root `θ^π` of `F`.
    pub theta_pi: Vec<f64>,
    /// Smallest eigenvalue of `A`.
    pub mu: f64,
    /// Largest eigenvalue of `A`.
    pub l: f64,
}

impl SlpeSystem {
    pub fn new(
        model: &RobustMdp,
        theta: &AgentPolicy,
        pi: &NaturePolicy,
        features: &FeatureMap,
        nu: &Distribution,
    ) -> Result<Self> {
        check_dim("feature rows", model.n_states, features.n_states())?;
        check_dim("sampling distribution", model.n_states, nu.len())?;
        let n = model.n_states;
        let p = state_chain(model, theta, pi)?.0;
        let c = DVector::from_vec(nature_cost(model, theta)?.into_inner());
        let psi = features.matrix();
        let b_mat = (DMatrix::identity(n, n) - p * model.gamma) * &psi;
        let weighted = DMatrix::from_diagonal(&DVector::from_column_slice(nu)) * &b_mat;
        let a = b_mat.transpose() * &weighted;
        let a = (&a + a.transpose()) * 0.5;
        let b = weighted.transpose() * c;
        let eig = SymmetricEigen::new(a.clone());
        let mu = eig.eigenvalues.min();
        let l = eig.eigenvalues.max();
        if !(mu > 1e-12 * l.max(f64::MIN_POSITIVE)) {
            return Err(Error::RankDeficient { min_eigenvalue: mu });
        }
        let theta_pi = a.clone().cholesky().ok_or(Error::RankDeficient { min_eigenvalue: mu })?.solve(&b);
        Ok(SlpeSystem {
            a,
            b,
            theta_pi: theta_pi.as_slice().to_vec(),
            mu,
            l,
        })
    }

    /// `F(θ) = Aθ − b`.
    pub fn f(&self, theta_vec: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta_vec);
        (&self.a * t - &self.b).as_slice().to_vec()
    }

    /// `μ/(L² + 32)`.
    pub fn safe_eta(&self) -> f64 {
        self.mu / (self.l * self.l + 32.0)
    }
}

/// Exact `F(θ)` for one `(ϑ, π)`; see [`SlpeSystem`].
pub fn slpe_deterministic_f(
    model: &RobustMdp,
    theta: &AgentPolicy,
    pi: &NaturePolicy,
    features: &FeatureMap,
    nu: &Distribution,
    theta_vec: &[f64],
) -> Result<Vec<f64>> {
    check_dim("parameter", features.d(), theta_vec.len())?;
    Ok(SlpeSystem::new(model, theta, pi, features, nu)?.f(theta_vec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::garnet::{generate_garnet, GarnetSpec};
    use crate::mdp::fixtures::canonical;
    use crate::mdp::{nature_value, Kernel};
    use approx::assert_abs_diff_eq;

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

    // probability-weighted transitions (x, y) from s, jointly over a
    fn transition_pairs(model: &RobustMdp, theta: &AgentPolicy, pi: &NaturePolicy, s: usize) -> Vec<(f64, usize, usize)> {
        let n = model.n_states;
        let mut out = Vec::new();
        for a in 0..model.n_actions {
            for x in 0..n {
                for y in 0..n {
                    let p = theta.row(s)[a] * model.nominal_kernel.row(s, a)[x] * pi.choice.row(s, a)[y];
                    if p > 0.0 {
                        out.push((p, x, y));
                    }
                }
            }
        }
        out
    }

    fn brute_force_f(
        model: &RobustMdp,
        theta: &AgentPolicy,
        pi: &NaturePolicy,
        features: &FeatureMap,
        nu: &Distribution,
        w: &[f64],
    ) -> Vec<f64> {
        let cost = nature_cost(model, theta).unwrap();
        let mut mean = vec![0.0; features.d()];
        for s in 0..model.n_states {
            let pairs = transition_pairs(model, theta, pi, s);
            for &(p, x, y) in &pairs {
                for &(q, x_prime, y_prime) in &pairs {
                    let sample = SlpeSample {
                        s,
                        cost: cost[s],
                        x,
                        x_prime,
                        y,
                        y_prime,
                    };
                    let g = slpe_gradient(&sample, w, features, model.gamma, model.zeta);
                    for k in 0..features.d() {
                        mean[k] += nu[s] * p * q * g[k];
                    }
                }
            }
        }
        mean
    }

    #[test]
    fn gradient_is_unbiased() {
        for seed in 0..4 {
            let (model, theta) = generate_garnet(&GarnetSpec::new(3, 2, 2, 0.8, 0.6, seed));
            let pi = random_policy(3, 2, seed + 50);
            let features = if seed % 2 == 0 {
                FeatureMap::identity(3)
            } else {
                FeatureMap::new(&[vec![0.6, 0.0], vec![0.3, 0.5], vec![0.0, 0.9]]).unwrap()
            };
            let nu = Distribution::new(vec![0.2, 0.5, 0.3]).unwrap();
            let sys = SlpeSystem::new(&model, &theta, &pi, &features, &nu).unwrap();
            let mut rng = Streams::new(seed).rng();
            for _ in 0..10 {
                let w: Vec<f64> = (0..features.d()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let exact = sys.f(&w);
                let brute = brute_force_f(&model, &theta, &pi, &features, &nu, &w);
                for k in 0..features.d() {
                    assert_abs_diff_eq!(exact[k], brute[k], epsilon = 1e-12);
                }
            }
            let at_root = sys.f(&sys.theta_pi);
            assert!(at_root.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn identity_features_recover_value() {
        let (model, theta) = generate_garnet(&GarnetSpec::new(5, 3, 2, 0.9, 0.4, 6));
        let pi = random_policy(5, 3, 2);
        let sys = SlpeSystem::new(&model, &theta, &pi, &FeatureMap::identity(5), &Distribution::uniform(5)).unwrap();
        let exact = nature_value(&model, &theta, &pi).unwrap();
        for s in 0..5 {
            assert_abs_diff_eq!(sys.theta_pi[s], exact[s], epsilon = 1e-10);
        }
    }

    #[test]
    fn strongly_monotone() {
        let (model, theta) = generate_garnet(&GarnetSpec::new(6, 2, 3, 0.9, 0.7, 3));
        let pi = random_policy(6, 2, 9);
        let rows: Vec<Vec<f64>> = (0..6).map(|s| vec![0.5, (s as f64) / 10.0, ((s % 3) as f64) / 4.0]).collect();
        let features = FeatureMap::new(&rows).unwrap();
        let sys = SlpeSystem::new(&model, &theta, &pi, &features, &Distribution::uniform(6)).unwrap();
        assert!(sys.mu > 0.0 && sys.mu <= sys.l);
        let mut rng = Streams::new(1).rng();
        for _ in 0..100 {
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let f = sys.f(&w);
            let diff: Vec<f64> = w.iter().zip(&sys.theta_pi).map(|(a, b)| a - b).collect();
            assert!(dot(&f, &diff) >= sys.mu * dot(&diff, &diff) - 1e-10);
            let fv = sys.f(&v);
            let df: Vec<f64> = f.iter().zip(&fv).map(|(a, b)| a - b).collect();
            let dx: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - b).collect();
            assert!(dot(&df, &dx) >= sys.mu * dot(&dx, &dx) - 1e-10);
        }
    }

    #[test]
    fn rank_deficient_features_rejected() {
        let (model, theta) = canonical(1.0);
        let features = FeatureMap::new(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let err = SlpeSystem::new(&model, &theta, &NaturePolicy::uniform(2, 1), &features, &Distribution::uniform(2));
        assert!(matches!(err, Err(Error::RankDeficient { .. })));
        assert!(FeatureMap::new(&[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn null_features_and_zero_steps() {
        let (model, theta) = canonical(1.0);
        let zero = FeatureMap::new(&[vec![0.0], vec![0.0]]).unwrap();
        let sample = SlpeSample {
            s: 1,
            cost: -1.0,
            x: 0,
            x_prime: 1,
            y: 1,
            y_prime: 0,
        };
        assert_eq!(slpe_gradient(&sample, &[3.0], &zero, 0.5, 1.0), vec![0.0]);
        let sim = Simulator::new(&model.nominal_kernel);
        let mut cfg = SlpeConfig::new(Distribution::uniform(2), 0.1, 0, 2);
        cfg.theta0 = vec![0.25, -0.5];
        let (w, v) = slpe_evaluate(&sim, &model, &theta, &NaturePolicy::uniform(2, 1), &FeatureMap::identity(2), &cfg, Streams::new(0)).unwrap();
        assert_eq!(w, vec![0.25, -0.5]);
        assert_eq!(v.0, vec![0.25, -0.5]);
        cfg.eta = 0.0;
        assert!(slpe_evaluate(&sim, &model, &theta, &NaturePolicy::uniform(2, 1), &FeatureMap::identity(2), &cfg, Streams::new(0)).is_err());
    }

    #[test]
    fn canonical_sgd_approaches_value() {
        let (model, theta) = canonical(1.0);
        let pi = NaturePolicy::point_mass(2, 1, 1);
        let features = FeatureMap::identity(2);
        let nu = Distribution::uniform(2);
        let sys = SlpeSystem::new(&model, &theta, &pi, &features, &nu).unwrap();
        assert_abs_diff_eq!(sys.theta_pi[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sys.theta_pi[1], -2.0, epsilon = 1e-12);
        let sim = Simulator::new(&model.nominal_kernel);
        let cfg = SlpeConfig::new(nu, 0.2, 3000, 2);
        let (w, _) = slpe_evaluate(&sim, &model, &theta, &pi, &features, &cfg, Streams::new(5)).unwrap();
        // ζ = 1 with a point-mass π makes every draw deterministic given s
        assert_abs_diff_eq!(w[0], -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(w[1], -2.0, epsilon = 1e-6);
        let (again, _) = slpe_evaluate(&sim, &model, &theta, &pi, &features, &cfg, Streams::new(5)).unwrap();
        assert_eq!(w, again);
    }
}
