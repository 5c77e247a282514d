//! Model representation, exact policy evaluation, and the nature-MDP
//! reformulation of robust policy evaluation.
//!
//! Everything is stored densely: a kernel over `|S|` states and `|A|` actions
//! holds `|S|·|A|·|S|` entries, so memory grows as `O(|S|²|A|)`. That is fine
//! for the desk-scale instances this crate targets (`|S|` up to a few hundred).

use std::fmt;
use std::ops::{Deref, DerefMut};

use nalgebra::{DMatrix, DVector};

use crate::ambiguity::AmbiguityDescriptor;
use crate::error::{check_dim, Error, Result};

/// Row-sum tolerance for tables supplied by the user.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Row-sum tolerance for quantities computed from other quantities.
pub const DERIVED_TOL: f64 = 1e-10;

fn is_probability_vector(row: &[f64], tol: f64) -> bool {
    row.iter().all(|&p| p.is_finite() && p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// A length-`|S|` real vector: values of the agent or of nature, costs, and
/// their estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueVector(pub Vec<f64>);

impl ValueVector {
    pub fn zeros(n: usize) -> Self {
        ValueVector(vec![0.0; n])
    }

    pub fn inf_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖_∞`.
    pub fn dist_inf(&self, other: &ValueVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ValueVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ValueVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ValueVector {
    fn from(v: Vec<f64>) -> Self {
        ValueVector(v)
    }
}

/// A probability vector over states (initial, visitation or sampling
/// distribution).
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() || !is_probability_vector(&p, CONSTRUCTION_TOL) {
            return Err(Error::input(
                "distribution",
                "entries must be nonnegative and sum to 1",
            ));
        }
        Ok(Distribution(p))
    }

    pub(crate) fn derived(p: Vec<f64>) -> Self {
        debug_assert!(is_probability_vector(&p, 1e-8));
        Distribution(p)
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, s: usize) -> Self {
        let mut p = vec![0.0; n];
        p[s] = 1.0;
        Distribution(p)
    }

    pub fn has_full_support(&self) -> bool {
        self.0.iter().all(|&p| p > 0.0)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for Distribution {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Dense `|S|×|A|×|S|` table indexed by `(s, a, s')`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Kernel {
            n_states,
            n_actions,
            data: vec![0.0; n_states * n_actions * n_states],
        }
    }

    /// Builds a kernel from `|S|·|A|` rows of length `|S|`, row index
    /// `s·|A| + a`.
    pub fn from_rows(n_states: usize, n_actions: usize, rows: &[Vec<f64>]) -> Result<Self> {
        check_dim("kernel rows", n_states * n_actions, rows.len())?;
        let mut data = Vec::with_capacity(n_states * n_actions * n_states);
        for row in rows {
            check_dim("kernel row length", n_states, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Kernel {
            n_states,
            n_actions,
            data,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.data[start..start + self.n_states]
    }

    pub fn row_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &mut self.data[start..start + self.n_states]
    }

    /// The `|A|×|S|` slice for state `s`.
    pub fn slice(&self, s: usize) -> KernelSlice {
        let width = self.n_actions * self.n_states;
        KernelSlice {
            n_actions: self.n_actions,
            n_states: self.n_states,
            data: self.data[s * width..(s + 1) * width].to_vec(),
        }
    }

    pub fn set_slice(&mut self, s: usize, slice: &KernelSlice) {
        let width = self.n_actions * self.n_states;
        self.data[s * width..(s + 1) * width].copy_from_slice(&slice.data);
    }

    /// Rows in file order (`s·|A| + a`).
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_states.max(1))
    }
}

/// One state's kernel selection `D ∈ Δ_S^{|A|}`, stored as `|A|` rows of
/// length `|S|`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSlice {
    n_actions: usize,
    n_states: usize,
    data: Vec<f64>,
}

impl KernelSlice {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.len();
        let n_states = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_actions * n_states);
        for row in rows {
            check_dim("kernel slice row length", n_states, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(KernelSlice {
            n_actions,
            n_states,
            data,
        })
    }

    /// Every action row set to `row`.
    pub fn repeat_row(n_actions: usize, row: &[f64]) -> Self {
        let mut data = Vec::with_capacity(n_actions * row.len());
        for _ in 0..n_actions {
            data.extend_from_slice(row);
        }
        KernelSlice {
            n_actions,
            n_states: row.len(),
            data,
        }
    }

    pub fn uniform(n_actions: usize, n_states: usize) -> Self {
        Self::repeat_row(n_actions, &vec![1.0 / n_states as f64; n_states])
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.n_states..(a + 1) * self.n_states]
    }

    pub fn row_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.data[a * self.n_states..(a + 1) * self.n_states]
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        (0..self.n_actions).all(|a| is_probability_vector(self.row(a), tol))
    }

    /// `⟨D, v⟩_ϑ = Σ_a ϑ(a)⟨D_a, v⟩`.
    pub fn weighted_inner(&self, theta_row: &[f64], v: &[f64]) -> f64 {
        theta_row
            .iter()
            .enumerate()
            .map(|(a, &w)| w * dot(self.row(a), v))
            .sum()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fixed agent policy `ϑ`, a row-stochastic `|S|×|A|` table.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl AgentPolicy {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for (s, row) in rows.iter().enumerate() {
            check_dim("agent policy row length", n_actions, row.len())?;
            if !is_probability_vector(row, CONSTRUCTION_TOL) {
                return Err(Error::input(
                    "agent policy",
                    format!("row {s} is not a probability vector"),
                ));
            }
            probs.extend_from_slice(row);
        }
        Ok(AgentPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        AgentPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.row(s).to_vec()).collect()
    }

    fn check_against(&self, model: &RobustMdp) -> Result<()> {
        check_dim("agent policy states", model.n_states, self.n_states)?;
        check_dim("agent policy actions", model.n_actions, self.n_actions)
    }
}

/// Nature's policy: one kernel selection `π(s) ∈ 𝒟_s` per state.
#[derive(Clone, Debug, PartialEq)]
pub struct NaturePolicy {
    pub choice: Kernel,
}

impl NaturePolicy {
    /// Checks that every row is a probability vector and every slice lies in
    /// the ambiguity set.
    pub fn new(choice: Kernel, set: &AmbiguityDescriptor) -> Result<Self> {
        for s in 0..choice.n_states() {
            let slice = choice.slice(s);
            if !slice.is_feasible(DERIVED_TOL) {
                return Err(Error::input(
                    "nature policy",
                    format!("slice {s} has a row off the simplex"),
                ));
            }
            if !set.contains(s, &slice) {
                return Err(Error::input(
                    "nature policy",
                    format!("slice {s} lies outside the ambiguity set"),
                ));
            }
        }
        Ok(NaturePolicy { choice })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let mut choice = Kernel::zeros(n_states, n_actions);
        let u = 1.0 / n_states as f64;
        choice.data.iter_mut().for_each(|p| *p = u);
        NaturePolicy { choice }
    }

    /// Every state and action sends all mass to `target`.
    pub fn point_mass(n_states: usize, n_actions: usize, target: usize) -> Self {
        let mut choice = Kernel::zeros(n_states, n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                choice.row_mut(s, a)[target] = 1.0;
            }
        }
        NaturePolicy { choice }
    }

    pub fn slice(&self, s: usize) -> KernelSlice {
        self.choice.slice(s)
    }

    fn check_against(&self, model: &RobustMdp) -> Result<()> {
        check_dim("nature policy states", model.n_states, self.choice.n_states())?;
        check_dim("nature policy actions", model.n_actions, self.choice.n_actions())
    }
}

/// Robust MDP with mixing ambiguity `P_{s,a} = (1−ζ)P̄_{s,a} + ζD_a`,
/// `D ∈ 𝒟_s`.
#[derive(Clone, Debug)]
pub struct RobustMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major `|S|×|A|`, entries in `[0, 1]`.
    pub cost: Vec<f64>,
    pub nominal_kernel: Kernel,
    pub gamma: f64,
    pub zeta: f64,
    pub ambiguity: AmbiguityDescriptor,
}

impl RobustMdp {
    /// Builds a model and rejects it unless [`validate`] comes back clean.
    pub fn new(
        cost: &[Vec<f64>],
        nominal_kernel: Kernel,
        gamma: f64,
        zeta: f64,
        ambiguity: AmbiguityDescriptor,
    ) -> Result<Self> {
        let n_states = cost.len();
        let n_actions = cost.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n_states * n_actions);
        for row in cost {
            check_dim("cost row length", n_actions, row.len())?;
            flat.extend_from_slice(row);
        }
        let model = RobustMdp {
            n_states,
            n_actions,
            cost: flat,
            nominal_kernel,
            gamma,
            zeta,
            ambiguity,
        };
        let report = validate(&model);
        if report.is_empty() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(report))
        }
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s * self.n_actions + a]
    }

    pub fn cost_rows(&self) -> Vec<Vec<f64>> {
        self.cost
            .chunks(self.n_actions.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// `log|S|`, the upper bound of the weighted-entropy DGF.
    pub fn w_bar(&self) -> f64 {
        (self.n_states as f64).ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ValidationIssue {
    EmptySpace { n_states: usize, n_actions: usize },
    CostShape { expected: usize, found: usize },
    KernelShape { n_states: usize, n_actions: usize },
    CostOutOfRange { state: usize, action: usize, value: f64 },
    KernelRowNegative { state: usize, action: usize },
    KernelRowSum { state: usize, action: usize, sum: f64 },
    Discount { gamma: f64 },
    Mixing { zeta: f64 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::EmptySpace {
                n_states,
                n_actions,
            } => write!(f, "empty space: n_states = {n_states}, n_actions = {n_actions}"),
            ValidationIssue::CostShape { expected, found } => {
                write!(f, "cost table has {found} entries, expected {expected}")
            }
            ValidationIssue::KernelShape {
                n_states,
                n_actions,
            } => write!(
                f,
                "nominal kernel has shape ({n_states}, {n_actions}) that does not match the model"
            ),
            ValidationIssue::CostOutOfRange {
                state,
                action,
                value,
            } => write!(f, "cost ({state}, {action}) = {value} is outside [0, 1]"),
            ValidationIssue::KernelRowNegative { state, action } => {
                write!(f, "nominal kernel row ({state}, {action}) has a negative or non-finite entry")
            }
            ValidationIssue::KernelRowSum { state, action, sum } => {
                write!(f, "nominal kernel row ({state}, {action}) sums to {sum}")
            }
            ValidationIssue::Discount { gamma } => {
                write!(f, "discount gamma = {gamma} must lie in [0, 1)")
            }
            ValidationIssue::Mixing { zeta } => {
                write!(f, "mixing weight zeta = {zeta} must lie in [0, 1]")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "  - {issue}")?;
        }
        Ok(())
    }
}

/// Lists every violated model invariant. An empty report means the model is
/// valid.
pub fn validate(model: &RobustMdp) -> ValidationReport {
    let mut issues = Vec::new();
    let (ns, na) = (model.n_states, model.n_actions);
    if ns == 0 || na == 0 {
        issues.push(ValidationIssue::EmptySpace {
            n_states: ns,
            n_actions: na,
        });
    }
    if !(0.0..1.0).contains(&model.gamma) {
        issues.push(ValidationIssue::Discount { gamma: model.gamma });
    }
    if !(0.0..=1.0).contains(&model.zeta) {
        issues.push(ValidationIssue::Mixing { zeta: model.zeta });
    }
    if model.cost.len() != ns * na {
        issues.push(ValidationIssue::CostShape {
            expected: ns * na,
            found: model.cost.len(),
        });
    } else {
        for (i, &c) in model.cost.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                issues.push(ValidationIssue::CostOutOfRange {
                    state: i / na,
                    action: i % na,
                    value: c,
                });
            }
        }
    }
    let kernel = &model.nominal_kernel;
    if kernel.n_states() != ns || kernel.n_actions() != na {
        issues.push(ValidationIssue::KernelShape {
            n_states: kernel.n_states(),
            n_actions: kernel.n_actions(),
        });
    } else {
        for s in 0..ns {
            for a in 0..na {
                let row = kernel.row(s, a);
                if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                    issues.push(ValidationIssue::KernelRowNegative {
                        state: s,
                        action: a,
                    });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > CONSTRUCTION_TOL {
                    issues.push(ValidationIssue::KernelRowSum {
                        state: s,
                        action: a,
                        sum,
                    });
                }
            }
        }
    }
    ValidationReport { issues }
}

/// `P^π_{s,a} = (1−ζ)P̄_{s,a} + ζD^{π(s)}_a`.
pub fn nature_kernel(model: &RobustMdp, pi: &NaturePolicy) -> Result<Kernel> {
    pi.check_against(model)?;
    let zeta = model.zeta;
    let mut out = model.nominal_kernel.clone();
    for s in 0..model.n_states {
        for a in 0..model.n_actions {
            let d = pi.choice.row(s, a);
            for (p, &q) in out.row_mut(s, a).iter_mut().zip(d) {
                *p = (1.0 - zeta) * *p + zeta * q;
            }
        }
    }
    Ok(out)
}

/// Nature's per-state cost `𝔠(s) = −Σ_a ϑ(a|s)c(s,a)`.
pub fn nature_cost(model: &RobustMdp, theta: &AgentPolicy) -> Result<ValueVector> {
    theta.check_against(model)?;
    Ok(ValueVector(
        (0..model.n_states)
            .map(|s| -dot(theta.row(s), &model.cost[s * model.n_actions..(s + 1) * model.n_actions]))
            .collect(),
    ))
}

/// Expected one-step agent cost `Σ_a ϑ(a|s)c(s,a)`.
pub fn agent_cost(model: &RobustMdp, theta: &AgentPolicy) -> Result<ValueVector> {
    let mut c = nature_cost(model, theta)?;
    c.iter_mut().for_each(|x| *x = -*x);
    Ok(c)
}

/// Row-stochastic transition matrix of a state chain.
#[derive(Clone, Debug, PartialEq)]
pub struct StateChainMatrix(pub DMatrix<f64>);

impl StateChainMatrix {
    pub fn n_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_stochastic(&self, tol: f64) -> bool {
        self.0.row_iter().all(|r| {
            r.iter().all(|&p| p >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }
}

/// State chain `Σ_a ϑ(a|s)K_{s,a}(s')` of `ϑ` under an arbitrary kernel `K`.
pub fn chain_of_kernel(kernel: &Kernel, theta: &AgentPolicy) -> Result<StateChainMatrix> {
    check_dim("agent policy states", kernel.n_states(), theta.n_states())?;
    check_dim("agent policy actions", kernel.n_actions(), theta.n_actions())?;
    let n = kernel.n_states();
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for (a, &w) in theta.row(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (t, &q) in kernel.row(s, a).iter().enumerate() {
                p[(s, t)] += w * q;
            }
        }
    }
    Ok(StateChainMatrix(p))
}

/// `𝙿^π(s, s') = Σ_a ϑ(a|s)P^π_{s,a}(s')`.
pub fn state_chain(
    model: &RobustMdp,
    theta: &AgentPolicy,
    pi: &NaturePolicy,
) -> Result<StateChainMatrix> {
    theta.check_against(model)?;
    chain_of_kernel(&nature_kernel(model, pi)?, theta)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::param("gamma", format!("{gamma} is outside [0, 1)")))
    }
}

fn bellman_residual(chain: &StateChainMatrix, cost: &DVector<f64>, gamma: f64, v: &DVector<f64>) -> DVector<f64> {
    cost + &chain.0 * v * gamma - v
}

/// Solves `V = cost + γ𝙿V` as a dense linear system.
pub fn evaluate_exact(chain: &StateChainMatrix, cost: &ValueVector, gamma: f64) -> Result<ValueVector> {
    check_gamma(gamma)?;
    let n = chain.n_states();
    check_dim("cost vector", n, cost.len())?;
    let system = DMatrix::identity(n, n) - &chain.0 * gamma;
    let rhs = DVector::from_column_slice(cost);
    let lu = system.lu();
    let mut v = lu.solve(&rhs).ok_or(Error::Singular)?;
    // one step of iterative refinement
    let r = bellman_residual(chain, &rhs, gamma, &v);
    if r.amax() > 0.0 {
        if let Some(dv) = lu.solve(&r) {
            v += dv;
        }
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(ValueVector(v.as_slice().to_vec()))
}

/// Fixed-point iteration `V ← cost + γ𝙿V` from `V = 0`, stopped once
/// `‖V_new − V‖_∞ ≤ tol(1−γ)/γ`, so that the result is within `tol` of the
/// fixed point.
pub fn evaluate_fixed_point(
    chain: &StateChainMatrix,
    cost: &ValueVector,
    gamma: f64,
    tol: f64,
) -> Result<ValueVector> {
    check_gamma(gamma)?;
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let n = chain.n_states();
    check_dim("cost vector", n, cost.len())?;
    let threshold = stopping_threshold(tol, gamma);
    let c = DVector::from_column_slice(cost);
    let mut v = DVector::zeros(n);
    loop {
        let next = &c + &chain.0 * &v * gamma;
        let step = (&next - &v).amax();
        v = next;
        if step <= threshold {
            break;
        }
    }
    Ok(ValueVector(v.as_slice().to_vec()))
}

/// Successive-difference threshold guaranteeing `tol` accuracy for a
/// `γ`-contraction.
pub(crate) fn stopping_threshold(tol: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / gamma
    }
}

/// Standard value `V^ϑ_K` of the agent under kernel `K`.
pub fn agent_value(model: &RobustMdp, theta: &AgentPolicy, kernel: &Kernel) -> Result<ValueVector> {
    let chain = chain_of_kernel(kernel, theta)?;
    evaluate_exact(&chain, &agent_cost(model, theta)?, model.gamma)
}

/// Nature's value `𝒱^π`, equal to `−V^ϑ_{P^π}`.
pub fn nature_value(model: &RobustMdp, theta: &AgentPolicy, pi: &NaturePolicy) -> Result<ValueVector> {
    let chain = state_chain(model, theta, pi)?;
    evaluate_exact(&chain, &nature_cost(model, theta)?, model.gamma)
}

/// `𝒬^π(s, D) = 𝔠(s) + γ⟨(1−ζ)P̄_s + ζD, 𝒱^π_{ϑ,s}⟩` given a precomputed
/// `𝒱^π`.
pub fn q_value_with(
    model: &RobustMdp,
    theta: &AgentPolicy,
    value: &ValueVector,
    s: usize,
    d: &KernelSlice,
) -> Result<f64> {
    theta.check_against(model)?;
    check_dim("value vector", model.n_states, value.len())?;
    check_dim("kernel slice actions", model.n_actions, d.n_actions())?;
    check_dim("kernel slice states", model.n_states, d.n_states())?;
    let theta_row = theta.row(s);
    let cost = -dot(theta_row, &model.cost[s * model.n_actions..(s + 1) * model.n_actions]);
    let mut nominal = 0.0;
    for (a, &w) in theta_row.iter().enumerate() {
        nominal += w * dot(model.nominal_kernel.row(s, a), value);
    }
    let adversarial = d.weighted_inner(theta_row, value);
    Ok(cost + model.gamma * ((1.0 - model.zeta) * nominal + model.zeta * adversarial))
}

/// `𝒬^π(s, D)` for nature's one-step deviation to `D` at state `s`.
pub fn q_value(
    model: &RobustMdp,
    theta: &AgentPolicy,
    pi: &NaturePolicy,
    s: usize,
    d: &KernelSlice,
) -> Result<f64> {
    let value = nature_value(model, theta, pi)?;
    q_value_with(model, theta, &value, s, d)
}

/// `d_ρ = (1−γ)ρᵀ(I − γ𝙿)^{-1}`.
pub fn discounted_visitation(
    chain: &StateChainMatrix,
    rho: &Distribution,
    gamma: f64,
) -> Result<Distribution> {
    check_gamma(gamma)?;
    let n = chain.n_states();
    check_dim("initial distribution", n, rho.len())?;
    let system = (DMatrix::identity(n, n) - &chain.0 * gamma).transpose();
    let x = system
        .lu()
        .solve(&DVector::from_column_slice(rho))
        .ok_or(Error::Singular)?;
    Ok(Distribution::derived(
        x.iter().map(|&v| ((1.0 - gamma) * v).max(0.0)).collect(),
    ))
}

/// `φ^π(s, D) = γζ⟨D − π(s), 𝒱^π_{ϑ,s}⟩`.
pub fn advantage(
    model: &RobustMdp,
    theta: &AgentPolicy,
    pi: &NaturePolicy,
    value: &ValueVector,
    s: usize,
    d: &KernelSlice,
) -> f64 {
    let theta_row = theta.row(s);
    let current = pi.slice(s);
    model.gamma
        * model.zeta
        * (d.weighted_inner(theta_row, value) - current.weighted_inner(theta_row, value))
}

/// Both sides of the performance-difference identity at state `s`:
/// `𝒱^{π'}(s) − 𝒱^π(s)` and `(1−γ)^{-1}E_{s'∼d_s^{π'}}[φ^π(s', π'(s'))]`.
pub fn perf_diff_check(
    model: &RobustMdp,
    theta: &AgentPolicy,
    pi: &NaturePolicy,
    pi_prime: &NaturePolicy,
    s: usize,
) -> Result<(f64, f64)> {
    let v = nature_value(model, theta, pi)?;
    let v_prime = nature_value(model, theta, pi_prime)?;
    let lhs = v_prime[s] - v[s];
    let chain_prime = state_chain(model, theta, pi_prime)?;
    let d = discounted_visitation(
        &chain_prime,
        &Distribution::point_mass(model.n_states, s),
        model.gamma,
    )?;
    let expected: f64 = (0..model.n_states)
        .map(|t| d[t] * advantage(model, theta, pi, &v, t, &pi_prime.slice(t)))
        .sum();
    Ok((lhs, expected / (1.0 - model.gamma)))
}
