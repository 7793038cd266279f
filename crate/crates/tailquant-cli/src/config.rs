//! Optional TOML configuration file.
//!
//! Every long option of every subcommand may appear as a key; values given on
//! the command line win over the file. Unknown keys are rejected so typos
//! surface instead of being silently ignored.

use std::path::Path;

use serde::Deserialize;

use crate::{CResult, Failure};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    // shared
    pub data: Option<std::path::PathBuf>,
    pub x_grid: Option<String>,
    pub beta: Option<Vec<f64>>,
    pub h: Option<f64>,
    pub select: Option<String>,
    pub out: Option<std::path::PathBuf>,
    pub format: Option<String>,
    // tail estimation
    pub alpha: Option<f64>,
    pub j_levels: Option<usize>,
    pub r: Option<f64>,
    pub weights: Option<String>,
    pub k: Option<usize>,
    // selection
    pub estimator: Option<String>,
    pub h_points: Option<usize>,
    pub trace_out: Option<std::path::PathBuf>,
    // simulation
    pub scenario: Option<String>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub alphas: Option<Vec<f64>>,
    pub l_points: Option<usize>,
    pub protocol: Option<String>,
    pub survival_at: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            Failure::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| Failure::Config(format!("bad config file {}: {e}", path.display())))
    }
}
