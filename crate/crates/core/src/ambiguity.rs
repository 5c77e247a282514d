//! Ambiguity sets `𝒟_s`, the weighted-entropy distance-generating function,
//! and the two per-state subproblems the algorithms need: the entropic prox
//! step of dual averaging and the linear maximization inside the robust
//! Bellman operator.
//!
//! Only the full simplex `Δ_S^{|A|}` is built in. Other convex sets plug in
//! through [`AmbiguitySet`], which asks for exactly those two oracles.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mdp::{KernelSlice, DERIVED_TOL};

/// Largest exponent argument fed to `exp` before the prox falls back to the
/// linear minimizer.
const MAX_EXPONENT: f64 = 700.0;

/// A user-supplied convex ambiguity set.
pub trait AmbiguitySet: Send + Sync {
    fn name(&self) -> &str;

    /// `argmin_{D ∈ 𝒟_s} Σ_a ϑ(a|s)⟨D_a, g⟩ + λ w_s(D)` where `g` and `λ`
    /// come from `acc`.
    fn prox(&self, state: usize, theta_row: &[f64], acc: &ProxAccumulator) -> Result<KernelSlice>;

    /// `max_{D ∈ 𝒟_s} Σ_a ϑ(a|s)⟨D_a, v⟩` and a maximizer.
    fn linear_max(&self, state: usize, theta_row: &[f64], v: &[f64]) -> (KernelSlice, f64);

    fn contains(&self, _state: usize, _slice: &KernelSlice) -> bool {
        true
    }
}

#[derive(Clone)]
pub enum AmbiguityDescriptor {
    /// `𝒟_s = Δ_S^{|A|}` for every state.
    FullSimplex,
    Custom(Arc<dyn AmbiguitySet>),
}

impl AmbiguityDescriptor {
    pub fn contains(&self, state: usize, slice: &KernelSlice) -> bool {
        match self {
            AmbiguityDescriptor::FullSimplex => slice.is_feasible(DERIVED_TOL),
            AmbiguityDescriptor::Custom(set) => set.contains(state, slice),
        }
    }

    /// Serialized `kind` tag.
    pub fn kind(&self) -> &str {
        match self {
            AmbiguityDescriptor::FullSimplex => "full_simplex",
            AmbiguityDescriptor::Custom(set) => set.name(),
        }
    }
}

impl fmt::Debug for AmbiguityDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AmbiguityDescriptor::FullSimplex => f.write_str("FullSimplex"),
            AmbiguityDescriptor::Custom(set) => write!(f, "Custom({})", set.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DgfKind {
    WeightedEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DgfSpec {
    pub kind: DgfKind,
    /// Upper bound `w̄` on the DGF.
    pub w_bar: f64,
    /// Strong-convexity modulus in the `ϑ`-weighted group norm.
    pub mu_w: f64,
}

impl DgfSpec {
    pub fn weighted_entropy(n_states: usize) -> Self {
        DgfSpec {
            kind: DgfKind::WeightedEntropy,
            w_bar: (n_states as f64).ln(),
            mu_w: 1.0,
        }
    }
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Weighted negative entropy `w_s(D) = Σ_a ϑ(a|s)Σ_{s'} D_a(s') log D_a(s') + log|S|`.
pub fn dgf_value(theta_row: &[f64], d: &KernelSlice) -> f64 {
    let neg_entropy: f64 = theta_row
        .iter()
        .enumerate()
        .map(|(a, &w)| w * d.row(a).iter().map(|&p| xlogx(p)).sum::<f64>())
        .sum();
    let log_n = (d.n_states() as f64).ln();
    (neg_entropy + log_n).clamp(0.0, log_n)
}

/// Weighted KL divergence `Σ_a ϑ(a|s) KL(D'_a ‖ D_a)`.
pub fn bregman(theta_row: &[f64], d: &KernelSlice, d_prime: &KernelSlice) -> Result<f64> {
    let mut total = 0.0;
    for (a, &w) in theta_row.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let mut kl = 0.0;
        for (state, (&p, &q)) in d.row(a).iter().zip(d_prime.row(a)).enumerate() {
            if q == 0.0 {
                continue;
            }
            if p <= 0.0 {
                return Err(Error::SupportMismatch { action: a, state });
            }
            kl += q * (q / p).ln();
        }
        total += w * kl;
    }
    Ok(total.max(0.0))
}

/// Running dual `g = Σ_t w_t v_t` of dual averaging, kept as
/// `exp(log_scale) · unit` so that geometrically growing weights never
/// overflow, together with the current regularization weight `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxAccumulator {
    log_scale: f64,
    unit: Vec<f64>,
    lambda: f64,
}

impl ProxAccumulator {
    pub fn new(n_states: usize) -> Self {
        ProxAccumulator {
            log_scale: f64::NEG_INFINITY,
            unit: vec![0.0; n_states],
            lambda: 0.0,
        }
    }

    /// Adds `exp(log_weight) · v`. A weight of zero (`-inf`) is a no-op.
    pub fn fold(&mut self, log_weight: f64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.unit.len());
        if log_weight == f64::NEG_INFINITY {
            return;
        }
        let new_scale = self.log_scale.max(log_weight);
        let old = (self.log_scale - new_scale).exp();
        let new = (log_weight - new_scale).exp();
        for (u, &x) in self.unit.iter_mut().zip(v) {
            *u = *u * old + x * new;
        }
        self.log_scale = new_scale;
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda;
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn unit(&self) -> &[f64] {
        &self.unit
    }

    /// `scale · unit`; may overflow once the weights get large.
    pub fn dual(&self) -> Vec<f64> {
        let scale = self.scale();
        self.unit.iter().map(|u| u * scale).collect()
    }

    /// The minimizer over one simplex row of `⟨p, g⟩ + λ Σ p log p`, i.e.
    /// `softmax(−g/λ)`.
    fn entropic_row(&self) -> Vec<f64> {
        let n = self.unit.len();
        if self.log_scale == f64::NEG_INFINITY {
            return vec![1.0 / n as f64; n];
        }
        let floor = self.unit.iter().copied().fold(f64::INFINITY, f64::min);
        let log_coef = self.log_scale - self.lambda.ln();
        if log_coef > MAX_EXPONENT {
            // g/λ beyond floating range: the prox has collapsed onto the
            // linear minimizer.
            let target = self.unit.iter().position(|&u| u == floor).unwrap_or(0);
            let mut row = vec![0.0; n];
            row[target] = 1.0;
            return row;
        }
        let coef = log_coef.exp();
        let mut row: Vec<f64> = self
            .unit
            .iter()
            .map(|&u| (-(u - floor) * coef).exp())
            .collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
        row
    }
}

/// Dual-averaging step `argmin_{D ∈ 𝒟_s} Σ_a ϑ(a|s)⟨D_a, g⟩ + λ w_s(D)`.
///
/// Over the full simplex the `ϑ` weights cancel and every action row is the
/// same `softmax(−g/λ)`. Actions with `ϑ(a|s) = 0` leave the objective
/// unchanged and receive that shared row as well.
pub fn prox_step(
    acc: &ProxAccumulator,
    set: &AmbiguityDescriptor,
    state: usize,
    theta_row: &[f64],
) -> Result<KernelSlice> {
    if !(acc.lambda > 0.0) {
        return Err(Error::param(
            "lambda",
            format!("prox weight must be positive, got {}", acc.lambda),
        ));
    }
    match set {
        AmbiguityDescriptor::FullSimplex => {
            Ok(KernelSlice::repeat_row(theta_row.len(), &acc.entropic_row()))
        }
        AmbiguityDescriptor::Custom(custom) => custom.prox(state, theta_row, acc),
    }
}

/// `max_{D ∈ 𝒟_s} Σ_a ϑ(a|s)⟨D_a, v⟩` with a maximizer. Over the full
/// simplex this is `max_{s'} v(s')`, attained by a point mass on the lowest
/// maximizing index.
pub fn linear_max(
    set: &AmbiguityDescriptor,
    state: usize,
    theta_row: &[f64],
    v: &[f64],
) -> (KernelSlice, f64) {
    match set {
        AmbiguityDescriptor::FullSimplex => {
            let (target, best) = argmax(v);
            let mut row = vec![0.0; v.len()];
            row[target] = 1.0;
            (KernelSlice::repeat_row(theta_row.len(), &row), best)
        }
        AmbiguityDescriptor::Custom(custom) => custom.linear_max(state, theta_row, v),
    }
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}
