//! Experiment driver: strict JSON configs, the four suites, result tables
//! and the run manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{FunctionError, GridFunction, TestFunction};
use crate::gasket::{Gasket, GeometryError};
use crate::kernels::KernelError;
use crate::seminorms::SemiNormError;

pub mod config;
mod suites;
pub mod table;

pub use config::{derive_seed, ConfigError, ExperimentConfig};
pub use suites::{run_equivalence, run_kernels, run_monotone, run_trace};
pub use table::{ResultTable, Value, Verdict};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error(transparent)]
    SemiNorm(#[from] SemiNormError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Equivalence,
    Monotone,
    Trace,
    Kernels,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Equivalence, Suite::Monotone, Suite::Trace, Suite::Kernels];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Equivalence => "equivalence",
            Suite::Monotone => "monotone",
            Suite::Trace => "trace",
            Suite::Kernels => "kernels",
        }
    }
}

/// The gasket and the corpus materialized at the grid level.
pub struct Corpus {
    pub gasket: Gasket,
    pub functions: Vec<(TestFunction, GridFunction<f64>)>,
}

impl Corpus {
    pub fn build(config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let m = config.levels.grid;
        let gasket = Gasket::new(m)?;
        let functions = config
            .corpus
            .iter()
            .map(|f| Ok((f.clone(), f.materialize::<f64>(&gasket, m)?)))
            .collect::<Result<_, ExperimentError>>()?;
        Ok(Corpus { gasket, functions })
    }
}

pub fn run_suite(suite: Suite, config: &ExperimentConfig, corpus: &Corpus) -> Result<ResultTable, ExperimentError> {
    match suite {
        Suite::Equivalence => run_equivalence(config, corpus),
        Suite::Monotone => run_monotone(config, corpus),
        Suite::Trace => run_trace(config, corpus),
        Suite::Kernels => run_kernels(config, corpus),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub suite: String,
    pub passed: bool,
    pub verdicts: Vec<Verdict>,
}

/// `manifest.json`: the only output carrying a timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub timestamp: String,
    pub passed: bool,
    pub suites: Vec<SuiteSummary>,
}

/// Runs the suites, writes `<suite>.csv`, `<suite>.json` and
/// `manifest.json` into `out`, and returns the manifest.
pub fn run_and_write(suites: &[Suite], config: &ExperimentConfig, out: &Path) -> Result<Manifest, ExperimentError> {
    let corpus = Corpus::build(config)?;
    let mut summaries = Vec::new();
    for &suite in suites {
        let table = run_suite(suite, config, &corpus)?;
        table.write(out)?;
        summaries.push(SuiteSummary {
            suite: table.suite.clone(),
            passed: table.passed(),
            verdicts: table.verdicts.clone(),
        });
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        passed: summaries.iter().all(|s| s.passed),
        suites: summaries,
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    Ok(manifest)
}
