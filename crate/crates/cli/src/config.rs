//! Optional TOML file supplying defaults for command-line flags.
//!
//! ```toml
//! k = 5
//! eta = 0.5
//! radius = 2
//! threads = 4
//! seed = 11
//! ```
//!
//! Flags given on the command line take precedence.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub k: Option<usize>,
    pub eta: Option<f64>,
    pub radius: Option<u32>,
    pub region_cap: Option<usize>,
    pub pixel_budget: Option<u64>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub tau_global: Option<f64>,
    pub tau_local: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}
