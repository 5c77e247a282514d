//! Python bindings: models, the robust Bellman oracle and the three
//! first-order evaluators, with plain lists in and out.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rpe_core::frpe::{frpe_run, make_noisy_evaluator, ExactEvaluator, FrpeSchedule};
use rpe_core::harness::garnet::{generate_garnet, GarnetSpec};
use rpe_core::harness::io::{load_model, save_model};
use rpe_core::mdp::{nature_value, AgentPolicy, Distribution, Kernel, NaturePolicy, RobustMdp};
use rpe_core::oracle::robust_value;
use rpe_core::rng::Streams;
use rpe_core::sfrpe::{sfrpe_run, FeatureMap, SfrpeSchedule, Simulator, SlpeConfig, SlpeSystem, StochasticOperator};
use rpe_core::{AmbiguityDescriptor, Error};

fn to_py(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// A robust MDP with full-simplex mixing ambiguity, together with the
/// agent policy under evaluation.
#[pyclass(module = "rpe", frozen)]
pub struct Model {
    model: RobustMdp,
    theta: AgentPolicy,
}

/// Nature policy rows, one per `(s, a)` in order `s * n_actions + a`.
fn policy_rows(pi: &NaturePolicy) -> Vec<Vec<f64>> {
    pi.choice.rows().map(<[f64]>::to_vec).collect()
}

#[pyclass(module = "rpe", get_all, frozen)]
pub struct OracleResult {
    /// Agent-side robust value.
    pub v_r: Vec<f64>,
    pub worst_policy: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

#[pyclass(module = "rpe", get_all, frozen)]
pub struct FrpeResult {
    /// `f(π_k)` for `k = 0..=iterations`.
    pub f_values: Vec<f64>,
    /// `f(π_k) − f(π*)` against the oracle.
    pub gaps: Vec<f64>,
    pub final_value: Vec<f64>,
    pub final_policy: Vec<Vec<f64>>,
}

#[pyclass(module = "rpe", get_all, frozen)]
pub struct SfrpeResult {
    /// Weighted-average estimate of nature's value.
    pub estimate: Vec<f64>,
    /// Running estimate at state 0 after each iteration.
    pub est_s0: Vec<f64>,
    pub vhat_inf_norm: Vec<f64>,
    pub final_policy: Vec<Vec<f64>>,
}

impl Model {
    pub fn build(
        cost: Vec<Vec<f64>>,
        nominal_kernel: Vec<Vec<f64>>,
        gamma: f64,
        zeta: f64,
        agent_policy: Vec<Vec<f64>>,
    ) -> Result<Self, Error> {
        let n_states = cost.len();
        let n_actions = cost.first().map_or(0, Vec::len);
        let kernel = Kernel::from_rows(n_states, n_actions, &nominal_kernel)?;
        let model = RobustMdp::new(&cost, kernel, gamma, zeta, AmbiguityDescriptor::FullSimplex)?;
        let theta = AgentPolicy::new(&agent_policy)?;
        if theta.n_states() != n_states || theta.n_actions() != n_actions {
            return Err(Error::DimensionMismatch {
                context: "agent policy",
                expected: n_states * n_actions,
                found: theta.n_states() * theta.n_actions(),
            });
        }
        Ok(Model { model, theta })
    }

    fn rho(&self, rho: Option<Vec<f64>>) -> Result<Distribution, Error> {
        match rho {
            Some(p) => Distribution::new(p),
            None => Ok(Distribution::uniform(self.model.n_states)),
        }
    }

    pub fn oracle(&self, tol: f64) -> Result<OracleResult, Error> {
        let res = robust_value(&self.model, &self.theta, tol)?;
        Ok(OracleResult {
            v_r: res.v_r.0,
            worst_policy: policy_rows(&res.worst_policy),
            iterations: res.iterations,
            residual: res.residual,
        })
    }

    pub fn run_frpe(
        &self,
        iterations: usize,
        kappa: Option<f64>,
        lam: f64,
        epsilon: f64,
        seed: u64,
        rho: Option<Vec<f64>>,
    ) -> Result<FrpeResult, Error> {
        let rho = self.rho(rho)?;
        let oracle = robust_value(&self.model, &self.theta, 1e-12)?;
        let f_star: f64 = -oracle.v_r.iter().zip(rho.iter()).map(|(v, p)| v * p).sum::<f64>();
        let schedule = FrpeSchedule::geometric(kappa.unwrap_or(1.0 / rho.min()), lam)?;
        let mut noisy = make_noisy_evaluator(ExactEvaluator, epsilon, seed)?;
        let trace = frpe_run(&self.model, &self.theta, &mut noisy, &schedule, iterations, &rho, Some(f_star))?;
        Ok(FrpeResult {
            f_values: trace.records.iter().map(|r| r.f_pi).collect(),
            gaps: trace.records.iter().map(|r| r.gap.unwrap_or(f64::NAN)).collect(),
            final_value: trace.final_value.0.clone(),
            final_policy: policy_rows(&trace.final_policy),
        })
    }

    fn run_sfrpe(&self, operator: StochasticOperator, iterations: usize, m: Option<f64>, seed: u64) -> Result<SfrpeResult, Error> {
        let m = m.unwrap_or(1.0 / (1.0 - self.model.gamma));
        let schedule = SfrpeSchedule::for_model(&self.model, m)?;
        let sim = Simulator::new(&self.model.nominal_kernel);
        let res = sfrpe_run(&self.model, &sim, &self.theta, &operator, &schedule, iterations, Streams::new(seed))?;
        Ok(SfrpeResult {
            estimate: res.estimate().0,
            est_s0: res.records.iter().map(|r| r.est_s0).collect(),
            vhat_inf_norm: res.records.iter().map(|r| r.vhat_inf_norm).collect(),
            final_policy: policy_rows(&res.final_policy),
        })
    }

    pub fn run_sfrpe_se(&self, iterations: usize, l: usize, m: Option<f64>, seed: u64) -> Result<SfrpeResult, Error> {
        self.run_sfrpe(StochasticOperator::Se { l }, iterations, m, seed)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn run_sfrpe_slpe(
        &self,
        iterations: usize,
        slpe_iterations: usize,
        eta: Option<f64>,
        features: Option<Vec<Vec<f64>>>,
        nu: Option<Vec<f64>>,
        m: Option<f64>,
        seed: u64,
    ) -> Result<SfrpeResult, Error> {
        let n = self.model.n_states;
        let features = match features {
            Some(rows) => FeatureMap::new(&rows)?,
            None => FeatureMap::identity(n),
        };
        let nu = self.rho(nu)?;
        let eta = match eta {
            Some(e) => e,
            None => {
                let uniform = NaturePolicy::uniform(n, self.model.n_actions);
                SlpeSystem::new(&self.model, &self.theta, &uniform, &features, &nu)?.safe_eta()
            }
        };
        let cfg = SlpeConfig::new(nu, eta, slpe_iterations, features.d());
        self.run_sfrpe(StochasticOperator::Slpe { features, cfg }, iterations, m, seed)
    }
}

#[pymethods]
impl Model {
    #[new]
    fn py_new(
        cost: Vec<Vec<f64>>,
        nominal_kernel: Vec<Vec<f64>>,
        gamma: f64,
        zeta: f64,
        agent_policy: Vec<Vec<f64>>,
    ) -> PyResult<Self> {
        Model::build(cost, nominal_kernel, gamma, zeta, agent_policy).map_err(to_py)
    }

    /// Reads a TOML model file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (model, theta) = load_model(path).map_err(to_py)?;
        Ok(Model { model, theta })
    }

    /// Random Garnet instance with a uniform agent policy.
    #[staticmethod]
    #[pyo3(signature = (n_states, n_actions, branching, gamma, zeta, seed=0))]
    fn garnet(n_states: usize, n_actions: usize, branching: usize, gamma: f64, zeta: f64, seed: u64) -> PyResult<Self> {
        let spec = GarnetSpec::new(n_states, n_actions, branching, gamma, zeta, seed);
        spec.validate().map_err(to_py)?;
        let (model, theta) = generate_garnet(&spec);
        Ok(Model { model, theta })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(path, &self.model, &self.theta).map_err(to_py)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.model.n_states
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.model.n_actions
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.model.gamma
    }

    #[getter]
    fn zeta(&self) -> f64 {
        self.model.zeta
    }

    #[getter]
    fn cost(&self) -> Vec<Vec<f64>> {
        self.model.cost_rows()
    }

    #[getter]
    fn agent_policy(&self) -> Vec<Vec<f64>> {
        self.theta.rows()
    }

    #[pyo3(signature = (tol=1e-8))]
    fn robust_value(&self, tol: f64) -> PyResult<OracleResult> {
        self.oracle(tol).map_err(to_py)
    }

    /// Nature's value of the policy given as `n_states * n_actions` rows.
    fn nature_value(&self, policy: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let kernel = Kernel::from_rows(self.model.n_states, self.model.n_actions, &policy).map_err(to_py)?;
        let pi = NaturePolicy::new(kernel, &self.model.ambiguity).map_err(to_py)?;
        Ok(nature_value(&self.model, &self.theta, &pi).map_err(to_py)?.0)
    }

    #[pyo3(signature = (iterations, kappa=None, lam=1.0, epsilon=0.0, seed=0, rho=None))]
    #[allow(clippy::too_many_arguments)]
    fn frpe(
        &self,
        py: Python<'_>,
        iterations: usize,
        kappa: Option<f64>,
        lam: f64,
        epsilon: f64,
        seed: u64,
        rho: Option<Vec<f64>>,
    ) -> PyResult<FrpeResult> {
        py.detach(|| self.run_frpe(iterations, kappa, lam, epsilon, seed, rho)).map_err(to_py)
    }

    #[pyo3(signature = (iterations, l=30, m=None, seed=0))]
    fn sfrpe_se(&self, py: Python<'_>, iterations: usize, l: usize, m: Option<f64>, seed: u64) -> PyResult<SfrpeResult> {
        py.detach(|| self.run_sfrpe_se(iterations, l, m, seed)).map_err(to_py)
    }

    #[pyo3(signature = (iterations, slpe_iterations, eta=None, features=None, nu=None, m=None, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn sfrpe_slpe(
        &self,
        py: Python<'_>,
        iterations: usize,
        slpe_iterations: usize,
        eta: Option<f64>,
        features: Option<Vec<Vec<f64>>>,
        nu: Option<Vec<f64>>,
        m: Option<f64>,
        seed: u64,
    ) -> PyResult<SfrpeResult> {
        py.detach(|| self.run_sfrpe_slpe(iterations, slpe_iterations, eta, features, nu, m, seed))
            .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n_states={}, n_actions={}, gamma={}, zeta={})",
            self.model.n_states, self.model.n_actions, self.model.gamma, self.model.zeta
        )
    }
}

#[pymodule]
fn rpe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<OracleResult>()?;
    m.add_class::<FrpeResult>()?;
    m.add_class::<SfrpeResult>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical() -> Model {
        Model::build(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            0.5,
            1.0,
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap()
    }

    #[test]
    fn oracle_and_frpe() {
        let m = canonical();
        let o = m.oracle(1e-10).unwrap();
        assert!((o.v_r[0] - 1.0).abs() < 1e-10 && (o.v_r[1] - 2.0).abs() < 1e-10);
        let f = m.run_frpe(60, None, 1.0, 0.0, 0, None).unwrap();
        assert_eq!(f.f_values.len(), 61);
        assert!(f.gaps.last().unwrap().abs() < 1e-6);
    }

    #[test]
    fn stochastic_runs() {
        let m = canonical();
        let se = m.run_sfrpe_se(500, 30, None, 1).unwrap();
        assert!((se.estimate[0] + 1.0).abs() < 0.05 && (se.estimate[1] + 2.0).abs() < 0.05);
        let slpe = m.run_sfrpe_slpe(50, 300, Some(0.2), None, None, None, 1).unwrap();
        assert_eq!(slpe.est_s0.len(), 50);
    }

    #[test]
    fn invalid_inputs_are_validation_errors() {
        let err = Model::build(vec![vec![0.0]], vec![vec![0.5]], 0.5, 1.0, vec![vec![1.0]]).err().unwrap();
        assert!(err.is_validation());
        let err = Model::build(vec![vec![0.0]], vec![vec![1.0]], 0.5, 1.0, vec![vec![0.5, 0.5]]).err().unwrap();
        assert!(err.is_validation());
    }
}
