//! Experiment configuration: a TOML file plus `key=value` overrides with
//! dotted keys (`frpe.iterations=500`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::garnet::GarnetSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Oracle,
    Frpe,
    SfrpeSe,
    SfrpeSlpe,
    /// Oracle, FRPE and SFRPE+SE on one instance.
    Compare,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Oracle => "oracle",
            Algorithm::Frpe => "frpe",
            Algorithm::SfrpeSe => "sfrpe_se",
            Algorithm::SfrpeSlpe => "sfrpe_slpe",
            Algorithm::Compare => "compare",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrpeSection {
    pub iterations: usize,
    /// Defaults to `1/min ρ`.
    pub kappa: Option<f64>,
    pub lambda: f64,
    /// Uniform noise level injected into every evaluation.
    pub epsilon: f64,
}

impl Default for FrpeSection {
    fn default() -> Self {
        FrpeSection {
            iterations: 300,
            kappa: None,
            lambda: 1.0,
            epsilon: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfrpeSection {
    pub iterations: usize,
    /// Series length of the SE operator.
    pub l: usize,
    /// Defaults to `1/(1−γ)`.
    pub m: Option<f64>,
    pub mu_w: f64,
}

impl Default for SfrpeSection {
    fn default() -> Self {
        SfrpeSection {
            iterations: 1000,
            l: 30,
            m: None,
            mu_w: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlpeSection {
    /// SGD steps per evaluation.
    pub iterations: usize,
    /// Defaults to `μ/(L²+32)` computed from the model.
    pub eta: Option<f64>,
    /// Feature rows; defaults to the identity.
    pub features: Option<Vec<Vec<f64>>>,
    /// State sampling distribution; defaults to uniform.
    pub nu: Option<Vec<f64>>,
}

impl Default for SlpeSection {
    fn default() -> Self {
        SlpeSection {
            iterations: 1000,
            eta: None,
            features: None,
            nu: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    /// Model file; relative paths resolve against the config file.
    pub model: Option<PathBuf>,
    pub garnet: Option<GarnetSpec>,
    pub seed: u64,
    pub macro_seeds: usize,
    pub out: PathBuf,
    /// Oracle accuracy.
    pub tol: f64,
    /// Record wall-clock times in traces. Off by default so reruns are
    /// byte-identical.
    pub timing: bool,
    /// Initial distribution; defaults to uniform.
    pub rho: Option<Vec<f64>>,
    pub frpe: FrpeSection,
    pub sfrpe: SfrpeSection,
    pub slpe: SlpeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::Oracle,
            model: None,
            garnet: None,
            seed: 0,
            macro_seeds: 1,
            out: PathBuf::from("out"),
            tol: 1e-8,
            timing: false,
            rho: None,
            frpe: FrpeSection::default(),
            sfrpe: SfrpeSection::default(),
            slpe: SlpeSection::default(),
        }
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), override_value(raw));
    Ok(())
}

/// Splits `--key=value` arguments out of `args`. Returns the remaining
/// arguments and the overrides in order.
pub fn split_overrides<I: IntoIterator<Item = String>>(
    args: I,
    reserved: &[&str],
) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let split = arg
            .strip_prefix("--")
            .and_then(|body| body.split_once('='))
            .filter(|(k, _)| !reserved.contains(k));
        match split {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let located = |e: toml::de::Error| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        };
        let mut cfg: ExperimentConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(located)?
        } else {
            let mut table: toml::Table = toml::from_str(text).map_err(located)?;
            for (k, v) in overrides {
                apply_override(&mut table, k, v)?;
            }
            ExperimentConfig::deserialize(toml::Value::Table(table))
                .map_err(|e| Error::Config(format!("after overrides: {}", e.message())))?
        };
        if let (Some(model), Some(dir)) = (cfg.model.as_mut(), origin.parent()) {
            if model.is_relative() {
                *model = dir.join(&*model);
            }
        }
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| Error::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text, p, overrides)
            }
            None => Self::from_toml("", Path::new(""), overrides),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (&self.model, &self.garnet) {
            (Some(_), Some(_)) => return bad("set either `model` or `[garnet]`, not both".into()),
            (None, None) => return bad("no instance: set `model` or a `[garnet]` table".into()),
            (None, Some(g)) => g.validate()?,
            (Some(path), None) => {
                if !path.exists() {
                    return bad(format!("model file {} does not exist", path.display()));
                }
            }
        }
        if self.macro_seeds == 0 {
            return bad("`macro_seeds` must be at least 1".into());
        }
        if !(self.tol > 0.0) {
            return bad("`tol` must be positive".into());
        }
        if self.frpe.iterations == 0 || self.sfrpe.iterations == 0 {
            return bad("iteration counts must be at least 1".into());
        }
        if self.frpe.kappa.is_some_and(|k| !(k >= 1.0)) {
            return bad("`frpe.kappa` must be at least 1".into());
        }
        if !(self.frpe.lambda > 0.0) {
            return bad("`frpe.lambda` must be positive".into());
        }
        if !(self.frpe.epsilon >= 0.0) {
            return bad("`frpe.epsilon` must be nonnegative".into());
        }
        if self.sfrpe.l == 0 {
            return bad("`sfrpe.l` must be at least 1".into());
        }
        if self.sfrpe.m.is_some_and(|m| !(m > 0.0)) || !(self.sfrpe.mu_w > 0.0) {
            return bad("`sfrpe.m` and `sfrpe.mu_w` must be positive".into());
        }
        if self.slpe.eta.is_some_and(|e| !(e > 0.0)) {
            return bad("`slpe.eta` must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
algorithm = "frpe"
seed = 3

[garnet]
n_states = 10
n_actions = 4
branching = 3
gamma = 0.9
zeta = 0.3
seed = 1

[frpe]
iterations = 50
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(BASE, Path::new("c.toml"), &[]).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Frpe);
        assert_eq!(cfg.frpe.iterations, 50);
        assert_eq!(cfg.frpe.lambda, 1.0);
        assert_eq!(cfg.tol, 1e-8);
        assert_eq!(cfg.sfrpe.l, 30);
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_apply() {
        let ov = vec![
            ("frpe.iterations".to_string(), "7".to_string()),
            ("algorithm".to_string(), "sfrpe_se".to_string()),
            ("garnet.zeta".to_string(), "1.0".to_string()),
            ("out".to_string(), "/tmp/x y".to_string()),
            ("rho".to_string(), "[0.5, 0.5]".to_string()),
        ];
        let cfg = ExperimentConfig::from_toml(BASE, Path::new("c.toml"), &ov).unwrap();
        assert_eq!(cfg.frpe.iterations, 7);
        assert_eq!(cfg.algorithm, Algorithm::SfrpeSe);
        assert_eq!(cfg.garnet.unwrap().zeta, 1.0);
        assert_eq!(cfg.out, PathBuf::from("/tmp/x y"));
        assert_eq!(cfg.rho, Some(vec![0.5, 0.5]));
    }

    #[test]
    fn errors_have_context() {
        let err = ExperimentConfig::from_toml("seed = \"x\"\n", Path::new("c.toml"), &[]).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = ExperimentConfig::from_toml("bogus = 1\n", Path::new("c.toml"), &[]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let ov = vec![("seed.x".to_string(), "1".to_string())];
        assert!(ExperimentConfig::from_toml("seed = 1", Path::new("c.toml"), &ov).is_err());
        let cfg = ExperimentConfig::from_toml("", Path::new(""), &[]).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_model_path_resolves() {
        let cfg = ExperimentConfig::from_toml("model = \"m.toml\"", Path::new("/a/b/c.toml"), &[]).unwrap();
        assert_eq!(cfg.model, Some(PathBuf::from("/a/b/m.toml")));
    }

    #[test]
    fn split_keeps_positional() {
        let args = ["rpe", "frpe", "--config", "c.toml", "--frpe.iterations=5", "--seed=4"].map(String::from);
        let (rest, ov) = split_overrides(args, &["seed", "config", "out", "tol"]);
        assert_eq!(rest, vec!["rpe", "frpe", "--config", "c.toml", "--seed=4"]);
        assert_eq!(ov, vec![("frpe.iterations".to_string(), "5".to_string())]);
    }
}
