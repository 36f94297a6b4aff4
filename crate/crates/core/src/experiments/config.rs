use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::functions::TestFunction;
use crate::gasket::{DEFAULT_MAX_ENUMERATION_LEVEL, HAUSDORFF_DIM, WALK_DIM};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Levels {
    /// Grid level `m` the corpus is materialized at.
    pub grid: u32,
    /// Truncation `N` of the discrete semi-norms.
    pub truncation: u32,
    /// Cell level of the integral estimators.
    pub quadrature: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub samples: u64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `delta_i = 1 - 2^-i`, `beta_i = beta* - (beta* - alpha) 2^-i`.
    Dyadic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub i_max: u32,
    /// Defaults to the smallest admissible value at `i = 1`.
    #[serde(default)]
    pub gamma: Option<u32>,
    pub delta_schedule: Schedule,
    pub beta_schedule: Schedule,
    /// Levels with explicitly integrated deep-cell pairs.
    pub explicit_levels: u32,
    /// Sub-cell refinement inside deep cells.
    pub refinement: u32,
    /// Cell level of the plain Besov part.
    pub plain_level: u32,
    /// Frozen sandwich constant; calibrated from the run when absent.
    #[serde(default)]
    pub slack_constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoelderConfig {
    pub betas: Vec<f64>,
    pub coarse_level: u32,
    pub fine_level: u32,
    /// Allowed relative growth from the coarse to the fine sup.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    pub starts: Vec<u32>,
    /// Radius multipliers as powers of two.
    pub radius_log2: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub corpus: Vec<TestFunction>,
    pub beta_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub levels: Levels,
    pub mc: McConfig,
    pub kernel: KernelConfig,
    pub hoelder: HoelderConfig,
    pub robustness: RobustnessConfig,
    /// Length of the spline-extended energy sequence in the monotone suite.
    pub extended_truncation: u32,
    pub output: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            corpus: default_corpus(),
            beta_grid: vec![1.65, 1.80, 1.95, 2.10, 2.25],
            lambda_grid: vec![0.21, 0.24, 0.27, 0.30, 0.33],
            levels: Levels {
                grid: 9,
                truncation: 6,
                quadrature: 9,
            },
            mc: McConfig {
                samples: 1_000_000,
                seed: Some(20_240_611),
            },
            kernel: KernelConfig {
                i_max: 4,
                gamma: None,
                delta_schedule: Schedule::Dyadic,
                beta_schedule: Schedule::Dyadic,
                explicit_levels: 6,
                refinement: 2,
                plain_level: 7,
                slack_constant: None,
            },
            hoelder: HoelderConfig {
                betas: vec![1.7, 2.2],
                coarse_level: 5,
                fine_level: 7,
                tolerance: 0.1,
            },
            robustness: RobustnessConfig {
                starts: vec![0, 1, 2],
                radius_log2: vec![-1, 0, 1],
            },
            extended_truncation: 30,
            output: "results".into(),
        }
    }
}

pub fn default_corpus() -> Vec<TestFunction> {
    vec![
        TestFunction::Harmonic {
            boundary: [1.0, 0.0, 0.0],
        },
        TestFunction::Harmonic {
            boundary: [0.0, 1.0, 0.0],
        },
        TestFunction::CoordinateX {},
        TestFunction::CoordinateY {},
        TestFunction::HoelderProbe {
            word: "00".parse().expect("valid word"),
        },
    ]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Applies `--seed` / `--level` overrides. The level override moves the
    /// grid and quadrature levels together.
    pub fn with_overrides(mut self, seed: Option<u64>, level: Option<u32>) -> Self {
        if let Some(seed) = seed {
            self.mc.seed = Some(seed);
        }
        if let Some(m) = level {
            self.levels.grid = m;
            self.levels.quadrature = m;
        }
        self
    }

    /// Every violated invariant, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errors.push(msg);
            }
        };
        let l = &self.levels;
        check(
            self.version == CONFIG_VERSION,
            format!("version {} unsupported (expected {CONFIG_VERSION})", self.version),
        );
        check(!self.corpus.is_empty(), "corpus is empty".into());
        for f in &self.corpus {
            check(
                f.min_level() <= l.grid,
                format!("{} needs grid level {} (have {})", f.name(), f.min_level(), l.grid),
            );
        }
        check(!self.beta_grid.is_empty(), "beta_grid is empty".into());
        for b in &self.beta_grid {
            check(
                *b > HAUSDORFF_DIM && *b < WALK_DIM,
                format!("beta {b} outside (alpha, beta*) = ({HAUSDORFF_DIM:.6}, {WALK_DIM:.6})"),
            );
        }
        for x in &self.lambda_grid {
            check(*x > 0.2 && *x < 1.0 / 3.0, format!("lambda {x} outside (1/5, 1/3)"));
        }
        check(
            l.grid <= DEFAULT_MAX_ENUMERATION_LEVEL,
            format!(
                "grid level {} above the enumeration limit {DEFAULT_MAX_ENUMERATION_LEVEL}",
                l.grid
            ),
        );
        check(l.truncation >= 1, "truncation must be at least 1".into());
        check(
            l.truncation <= l.grid,
            format!("truncation {} above grid level {}", l.truncation, l.grid),
        );
        check(
            l.quadrature >= l.truncation + 2,
            format!(
                "quadrature level {} below truncation + 2 = {}",
                l.quadrature,
                l.truncation + 2
            ),
        );
        check(
            l.quadrature <= l.grid,
            format!("quadrature level {} above grid level {}", l.quadrature, l.grid),
        );
        check(self.mc.samples >= 1, "mc.samples must be positive".into());
        check(self.mc.seed.is_some(), "mc.seed is required (or pass --seed)".into());
        let k = &self.kernel;
        check(k.i_max >= 1, "kernel.i_max must be at least 1".into());
        check(k.gamma != Some(0), "kernel.gamma must be positive".into());
        check(
            k.explicit_levels <= l.grid,
            format!(
                "kernel.explicit_levels {} above grid level {}",
                k.explicit_levels, l.grid
            ),
        );
        check(
            (1..=l.grid).contains(&k.plain_level),
            format!("kernel.plain_level {} outside 1..={}", k.plain_level, l.grid),
        );
        check(k.refinement <= 4, format!("kernel.refinement {} above 4", k.refinement));
        if let Some(c) = k.slack_constant {
            check(
                c.is_finite() && c >= 0.0,
                format!("kernel.slack_constant {c} must be finite and >= 0"),
            );
        }
        let h = &self.hoelder;
        check(
            h.coarse_level <= h.fine_level && h.fine_level <= l.grid,
            format!(
                "hoelder levels {} <= {} <= grid {} violated",
                h.coarse_level, h.fine_level, l.grid
            ),
        );
        for b in &h.betas {
            check(
                *b > HAUSDORFF_DIM && *b < WALK_DIM,
                format!("hoelder beta {b} outside (alpha, beta*)"),
            );
        }
        for s in &self.robustness.starts {
            check(*s <= l.truncation, format!("robustness start {s} above truncation"));
        }
        for r in &self.robustness.radius_log2 {
            check(
                l.quadrature as i64 + 1 + *r as i64 >= l.truncation as i64 && r.abs() <= 4,
                format!("robustness radius exponent {r} out of range"),
            );
        }
        check(
            self.extended_truncation >= l.truncation,
            "extended_truncation below truncation".into(),
        );
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> u64 {
        self.mc.seed.expect("validated config has a seed")
    }
}

/// Seed of a named stream: SHA-256 over the root seed and the stream path.
pub fn derive_seed(root: u64, suite: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(suite.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
