//! Model files: a human-readable TOML document holding the robust MDP and
//! the agent policy.
//!
//! ```toml
//! n_states = 2
//! n_actions = 1
//! gamma = 0.5
//! zeta = 1.0
//! cost = [[0.0], [1.0]]
//! nominal_kernel = [[1.0, 0.0], [0.0, 1.0]]
//! agent_policy = [[1.0], [1.0]]
//!
//! [ambiguity]
//! kind = "full_simplex"
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ambiguity::AmbiguityDescriptor;
use crate::error::{Error, Result};
use crate::mdp::{AgentPolicy, Kernel, RobustMdp};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AmbiguityEntry {
    kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    zeta: f64,
    cost: Vec<Vec<f64>>,
    nominal_kernel: Vec<Vec<f64>>,
    ambiguity: AmbiguityEntry,
    agent_policy: Vec<Vec<f64>>,
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parses model text; `path` only labels error messages.
pub fn parse_model(text: &str, path: &Path) -> Result<(RobustMdp, AgentPolicy)> {
    let file: ModelFile = toml::from_str(text).map_err(|e| parse_err(path, e.to_string()))?;
    if file.cost.len() != file.n_states {
        return Err(parse_err(
            path,
            format!("key `cost`: expected {} rows, found {}", file.n_states, file.cost.len()),
        ));
    }
    if let Some(s) = file.cost.iter().position(|r| r.len() != file.n_actions) {
        return Err(parse_err(path, format!("key `cost`: row {s} should have {} entries", file.n_actions)));
    }
    let ambiguity = match file.ambiguity.kind.as_str() {
        "full_simplex" => AmbiguityDescriptor::FullSimplex,
        other => return Err(Error::Unsupported(format!("key `ambiguity.kind` = \"{other}\""))),
    };
    let kernel = Kernel::from_rows(file.n_states, file.n_actions, &file.nominal_kernel)
        .map_err(|e| parse_err(path, format!("key `nominal_kernel`: {e}")))?;
    let model = RobustMdp::new(&file.cost, kernel, file.gamma, file.zeta, ambiguity)?;
    if file.agent_policy.len() != file.n_states {
        return Err(parse_err(
            path,
            format!("key `agent_policy`: expected {} rows, found {}", file.n_states, file.agent_policy.len()),
        ));
    }
    let theta = AgentPolicy::new(&file.agent_policy)?;
    if theta.n_actions() != file.n_actions {
        return Err(parse_err(path, format!("key `agent_policy`: rows should have {} entries", file.n_actions)));
    }
    Ok((model, theta))
}

pub fn model_to_string(model: &RobustMdp, theta: &AgentPolicy) -> Result<String> {
    if !matches!(model.ambiguity, AmbiguityDescriptor::FullSimplex) {
        return Err(Error::Unsupported(format!(
            "cannot serialize ambiguity set `{}`",
            model.ambiguity.kind()
        )));
    }
    let file = ModelFile {
        n_states: model.n_states,
        n_actions: model.n_actions,
        gamma: model.gamma,
        zeta: model.zeta,
        cost: model.cost_rows(),
        nominal_kernel: model.nominal_kernel.rows().map(<[f64]>::to_vec).collect(),
        ambiguity: AmbiguityEntry {
            kind: model.ambiguity.kind().to_string(),
        },
        agent_policy: theta.rows(),
    };
    toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(RobustMdp, AgentPolicy)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_model(&text, path)
}

pub fn save_model(path: impl AsRef<Path>, model: &RobustMdp, theta: &AgentPolicy) -> Result<()> {
    let path = path.as_ref();
    write_file(path, &model_to_string(model, theta)?)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
