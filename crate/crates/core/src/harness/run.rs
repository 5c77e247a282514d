//! Experiment orchestration. Every run also solves the instance with the
//! robust Bellman oracle and reports the algorithm against it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frpe::{approx_floor, approx_frpe_gap_bound, frpe_run, make_noisy_evaluator, ExactEvaluator, FrpeSchedule};
use crate::mdp::{AgentPolicy, Distribution, NaturePolicy, RobustMdp};
use crate::oracle::robust_value;
use crate::rng::{Streams, MACRO};
use crate::sfrpe::{
    sfrpe_run, theoretical_expectation_bound, FeatureMap, SfrpeRecord, SfrpeSchedule, Simulator, SlpeConfig,
    SlpeSystem, StochasticOperator,
};

use super::config::{Algorithm, ExperimentConfig};
use super::garnet::generate_garnet;
use super::io::{load_model, save_model, write_file};

pub struct Instance {
    pub model: RobustMdp,
    pub theta: AgentPolicy,
    pub rho: Distribution,
    pub source: String,
}

pub fn load_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    let (model, theta, source) = match (&cfg.model, &cfg.garnet) {
        (Some(path), None) => {
            let (m, t) = load_model(path)?;
            (m, t, path.display().to_string())
        }
        (None, Some(spec)) => {
            spec.validate()?;
            let (m, t) = generate_garnet(spec);
            (m, t, "garnet".to_string())
        }
        _ => return Err(Error::Config("set exactly one of `model` and `[garnet]`".into())),
    };
    let rho = match &cfg.rho {
        Some(p) => {
            let d = Distribution::new(p.clone())?;
            if d.len() != model.n_states {
                return Err(Error::Config(format!("`rho` has {} entries for {} states", d.len(), model.n_states)));
            }
            d
        }
        None => Distribution::uniform(model.n_states),
    };
    Ok(Instance {
        model,
        theta,
        rho,
        source,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSection {
    pub algorithm: String,
    pub seed: u64,
    pub macro_seeds: usize,
    pub tol: f64,
    pub rho: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InstanceSection {
    pub source: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub zeta: f64,
    pub ambiguity: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleSummary {
    /// Agent-side robust value `V_r`.
    pub v_r: Vec<f64>,
    /// Nature's optimal value `𝒱* = −V_r`.
    pub nature_value: Vec<f64>,
    pub f_star: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrpeSummary {
    pub iterations: usize,
    pub kappa: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub f_final: f64,
    pub initial_gap: f64,
    pub final_gap: f64,
    pub gap_bound: f64,
    pub approximation_floor: f64,
    pub within_bound: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SfrpeSummary {
    pub operator: String,
    pub iterations: usize,
    pub m: f64,
    pub mu_w: f64,
    pub w_bar: f64,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slpe_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Bias level `ε` assumed for the band.
    pub bias: f64,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub band_lower: f64,
    pub band_upper: f64,
    /// Mean error inside the band widened by three standard errors.
    pub estimator_check: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub run: RunSection,
    pub instance: InstanceSection,
    pub oracle: OracleSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frpe: Option<FrpeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sfrpe_se: Option<SfrpeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sfrpe_slpe: Option<SfrpeSummary>,
}

/// Plain decimal when that is compact, exponent form otherwise; both are
/// shortest round-trip.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn vector_text(v: &[f64]) -> String {
    let mut s = String::new();
    for x in v {
        let _ = writeln!(s, "{}", fmt_f64(*x));
    }
    s
}

#[derive(Serialize)]
struct PolicyFile {
    n_states: usize,
    n_actions: usize,
    /// Row `s·|A| + a` is `D^{π(s)}_a`.
    choice: Vec<Vec<f64>>,
}

fn policy_text(pi: &NaturePolicy) -> Result<String> {
    let file = PolicyFile {
        n_states: pi.choice.n_states(),
        n_actions: pi.choice.n_actions(),
        choice: pi.choice.rows().map(<[f64]>::to_vec).collect(),
    };
    toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))
}

fn summary_text(summary: &Summary) -> Result<String> {
    toml::to_string(summary).map_err(|e| Error::Config(e.to_string()))
}

fn oracle_summary(inst: &Instance, tol: f64) -> Result<OracleSummary> {
    let res = robust_value(&inst.model, &inst.theta, tol)?;
    let nature: Vec<f64> = res.v_r.iter().map(|x| -x).collect();
    let f_star = nature.iter().zip(inst.rho.iter()).map(|(v, p)| v * p).sum();
    Ok(OracleSummary {
        v_r: res.v_r.0,
        nature_value: nature,
        f_star,
        iterations: res.iterations,
        residual: res.residual,
    })
}

fn run_frpe(cfg: &ExperimentConfig, inst: &Instance, oracle: &OracleSummary, out: &Path) -> Result<FrpeSummary> {
    let (model, theta) = (&inst.model, &inst.theta);
    let kappa = cfg.frpe.kappa.unwrap_or(1.0 / inst.rho.min());
    let schedule = FrpeSchedule::geometric(kappa, cfg.frpe.lambda)?;
    let k = cfg.frpe.iterations;
    let trace = if cfg.frpe.epsilon > 0.0 {
        let mut eval = make_noisy_evaluator(ExactEvaluator, cfg.frpe.epsilon, cfg.seed)?;
        frpe_run(model, theta, &mut eval, &schedule, k, &inst.rho, Some(oracle.f_star))?
    } else {
        frpe_run(model, theta, &mut ExactEvaluator, &schedule, k, &inst.rho, Some(oracle.f_star))?
    };
    let mut csv = String::from("k,f_pi,gap,elapsed_ms\n");
    for r in &trace.records {
        let elapsed = if cfg.timing { r.elapsed_ms } else { 0.0 };
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.k,
            fmt_f64(r.f_pi),
            fmt_f64(r.gap.unwrap_or(f64::NAN)),
            fmt_f64(elapsed)
        );
    }
    write_file(&out.join("trace.csv"), &csv)?;
    write_file(&out.join("final_policy.toml"), &policy_text(&trace.final_policy)?)?;
    write_file(&out.join("estimate.txt"), &vector_text(&trace.final_value))?;

    let initial_gap = trace.records[0].gap.unwrap_or(f64::NAN);
    let final_gap = trace.final_gap().unwrap_or(f64::NAN);
    let (gamma, zeta) = (model.gamma, model.zeta);
    let gap_bound = approx_frpe_gap_bound(&schedule, initial_gap, model.w_bar(), gamma, zeta, cfg.frpe.epsilon, k - 1);
    Ok(FrpeSummary {
        iterations: k,
        kappa,
        lambda: cfg.frpe.lambda,
        epsilon: cfg.frpe.epsilon,
        f_final: trace.records[k].f_pi,
        initial_gap,
        final_gap,
        gap_bound,
        approximation_floor: approx_floor(&schedule, gamma, zeta, cfg.frpe.epsilon),
        within_bound: final_gap <= gap_bound + 1e-9,
    })
}

struct SeedOutcome {
    estimate: Vec<f64>,
    records: Vec<SfrpeRecord>,
    final_policy: NaturePolicy,
}

fn run_sfrpe(
    cfg: &ExperimentConfig,
    inst: &Instance,
    oracle: &OracleSummary,
    out: &Path,
    use_slpe: bool,
) -> Result<SfrpeSummary> {
    let (model, theta) = (&inst.model, &inst.theta);
    let gamma = model.gamma;
    let m = cfg.sfrpe.m.unwrap_or(1.0 / (1.0 - gamma));
    let w_bar = model.w_bar();
    let schedule = SfrpeSchedule::new(m, cfg.sfrpe.mu_w, w_bar, gamma, model.zeta)?;
    let k = cfg.sfrpe.iterations;
    let (operator, bias, eta) = if use_slpe {
        let features = match &cfg.slpe.features {
            Some(rows) => FeatureMap::new(rows)?,
            None => FeatureMap::identity(model.n_states),
        };
        let nu = match &cfg.slpe.nu {
            Some(p) => Distribution::new(p.clone())?,
            None => Distribution::uniform(model.n_states),
        };
        let eta = match cfg.slpe.eta {
            Some(e) => e,
            None => SlpeSystem::new(model, theta, &NaturePolicy::uniform(model.n_states, model.n_actions), &features, &nu)?
                .safe_eta(),
        };
        let slpe_cfg = SlpeConfig::new(nu, eta, cfg.slpe.iterations, features.d());
        (StochasticOperator::Slpe { features, cfg: slpe_cfg }, 0.0, Some(eta))
    } else {
        let l = cfg.sfrpe.l;
        (StochasticOperator::Se { l }, gamma.powi(l as i32) / (1.0 - gamma), None)
    };
    let sim = Simulator::new(&model.nominal_kernel);
    let base = Streams::new(cfg.seed);
    let outcomes: Vec<SeedOutcome> = (0..cfg.macro_seeds)
        .into_par_iter()
        .map(|j| {
            let streams = if cfg.macro_seeds == 1 { base } else { base.child(MACRO).child(j as u64) };
            let res = sfrpe_run(model, &sim, theta, &operator, &schedule, k, streams)?;
            Ok(SeedOutcome {
                estimate: res.estimate().0,
                records: res.records,
                final_policy: res.final_policy,
            })
        })
        .collect::<Result<_>>()?;

    let n = model.n_states;
    let count = outcomes.len() as f64;
    let mut mean = vec![0.0; n];
    for o in &outcomes {
        mean.iter_mut().zip(&o.estimate).for_each(|(a, x)| *a += x / count);
    }
    let stderr: Vec<f64> = (0..n)
        .map(|s| {
            if outcomes.len() < 2 {
                return 0.0;
            }
            let var = outcomes.iter().map(|o| (o.estimate[s] - mean[s]).powi(2)).sum::<f64>() / (count - 1.0);
            (var / count).sqrt()
        })
        .collect();
    let mean_error: Vec<f64> = mean.iter().zip(&oracle.nature_value).map(|(a, b)| a - b).collect();
    let (band_lower, band_upper) = theoretical_expectation_bound(m, cfg.sfrpe.mu_w, w_bar, gamma, model.zeta, bias, k);
    let estimator_check = (0..n)
        .all(|s| mean_error[s] >= band_lower - 3.0 * stderr[s] - 1e-12 && mean_error[s] <= band_upper + 3.0 * stderr[s] + 1e-12);

    let mut csv = String::from("t,beta_t,lambda_t,vhat_inf_norm,est_s0,elapsed_ms\n");
    for r in &outcomes[0].records {
        let elapsed = if cfg.timing { r.elapsed_ms } else { 0.0 };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.t,
            fmt_f64(r.beta_t),
            fmt_f64(r.lambda_t),
            fmt_f64(r.vhat_inf_norm),
            fmt_f64(r.est_s0),
            fmt_f64(elapsed)
        );
    }
    write_file(&out.join("trace.csv"), &csv)?;
    write_file(&out.join("final_policy.toml"), &policy_text(&outcomes[0].final_policy)?)?;
    write_file(&out.join("estimate.txt"), &vector_text(&mean))?;
    if outcomes.len() > 1 {
        let mut per_seed = String::from("macro_seed");
        for s in 0..n {
            let _ = write!(per_seed, ",v{s}");
        }
        per_seed.push('\n');
        for (j, o) in outcomes.iter().enumerate() {
            let _ = write!(per_seed, "{j}");
            for x in &o.estimate {
                let _ = write!(per_seed, ",{}", fmt_f64(*x));
            }
            per_seed.push('\n');
        }
        write_file(&out.join("estimates.csv"), &per_seed)?;
    }
    let (l, slpe_iterations) = match &operator {
        StochasticOperator::Se { l } => (Some(*l), None),
        StochasticOperator::Slpe { cfg, .. } => (None, Some(cfg.iterations)),
    };
    Ok(SfrpeSummary {
        operator: if use_slpe { "slpe" } else { "se" }.to_string(),
        iterations: k,
        m,
        mu_w: cfg.sfrpe.mu_w,
        w_bar,
        lambda: schedule.lambda,
        l,
        slpe_iterations,
        eta,
        bias,
        mean,
        stderr,
        mean_error,
        band_lower,
        band_upper,
        estimator_check,
    })
}

fn base_summary(cfg: &ExperimentConfig, inst: &Instance, oracle: OracleSummary, algorithm: Algorithm) -> Summary {
    Summary {
        run: RunSection {
            algorithm: algorithm.name().to_string(),
            seed: cfg.seed,
            macro_seeds: cfg.macro_seeds,
            tol: cfg.tol,
            rho: inst.rho.to_vec(),
        },
        instance: InstanceSection {
            source: inst.source.clone(),
            n_states: inst.model.n_states,
            n_actions: inst.model.n_actions,
            gamma: inst.model.gamma,
            zeta: inst.model.zeta,
            ambiguity: inst.model.ambiguity.kind().to_string(),
        },
        oracle,
        frpe: None,
        sfrpe_se: None,
        sfrpe_slpe: None,
    }
}

fn run_one(cfg: &ExperimentConfig, inst: &Instance, algorithm: Algorithm, out: &Path) -> Result<Summary> {
    let oracle = oracle_summary(inst, cfg.tol)?;
    write_file(&out.join("robust_value.txt"), &vector_text(&oracle.v_r))?;
    let mut summary = base_summary(cfg, inst, oracle.clone(), algorithm);
    match algorithm {
        Algorithm::Oracle => {}
        Algorithm::Frpe => summary.frpe = Some(run_frpe(cfg, inst, &oracle, out)?),
        Algorithm::SfrpeSe => summary.sfrpe_se = Some(run_sfrpe(cfg, inst, &oracle, out, false)?),
        Algorithm::SfrpeSlpe => summary.sfrpe_slpe = Some(run_sfrpe(cfg, inst, &oracle, out, true)?),
        Algorithm::Compare => {
            for sub in [Algorithm::Oracle, Algorithm::Frpe, Algorithm::SfrpeSe] {
                let part = run_one(cfg, inst, sub, &out.join(sub.name()))?;
                summary.frpe = summary.frpe.or(part.frpe);
                summary.sfrpe_se = summary.sfrpe_se.or(part.sfrpe_se);
            }
        }
    }
    write_file(&out.join("summary.toml"), &summary_text(&summary)?)?;
    Ok(summary)
}

/// Validates `cfg`, runs the selected algorithm into `cfg.out`, and
/// returns the summary that was written to `summary.toml`.
pub fn run(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    let inst = load_instance(cfg)?;
    run_one(cfg, &inst, cfg.algorithm, &cfg.out)
}

/// Writes the configured Garnet instance to `<out>/model.toml`.
pub fn generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let spec = cfg
        .garnet
        .as_ref()
        .ok_or_else(|| Error::Config("`generate` needs a `[garnet]` table".into()))?;
    spec.validate()?;
    let (model, theta) = generate_garnet(spec);
    let path = cfg.out.join("model.toml");
    save_model(&path, &model, &theta)?;
    Ok(path)
}
