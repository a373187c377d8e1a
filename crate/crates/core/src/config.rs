//! JSON run configuration: a sweep spec, reference-solver settings and an
//! output directory. Unknown keys are rejected.
//!
//! ```json
//! {
//!   "sweep": {
//!     "problem": {"synthetic": {"task": "squared-regression", "d": 10, "n": 10000}},
//!     "beta": 0.95,
//!     "seeds": [1, 2, 3]
//!   },
//!   "reference": {"path": "reference.json"},
//!   "output_dir": "results"
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::SweepSpec;
use crate::error::{Error, Result};
use crate::reference::{DEFAULT_MAX_ITERS, DEFAULT_TOL};

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSettings {
    /// Stored solution to reuse; when missing the solution is computed and
    /// written to the output directory.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        Self {
            path: None,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sweep: SweepSpec,
    #[serde(default)]
    pub reference: ReferenceSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.sweep.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.reference.tol > 0.0) || self.reference.max_iters == 0 {
            return Err(Error::Config("reference tol and max_iters must be positive".into()));
        }
        Ok(())
    }
}
