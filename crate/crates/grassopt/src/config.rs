//! Experiment configuration: JSON schema, named presets, and content hashing.
//!
//! A config file is either a complete [`ExperimentConfig`] object or a
//! `{"preset": "<name>", ...}` object whose remaining top-level fields
//! override the preset wholesale (shallow merge by field). Every artifact a
//! command emits embeds [`ExperimentConfig::semantic_hash`], the SHA-256 of
//! the resolved configuration with the output directory masked out, so
//! mismatched artifact/config pairs are detectable.
//!
//! Presets:
//!
//! * `fig4-desk` — line-search convergence run against sample-covariance
//!   surrogate statistics at desk scale (16×16 images, p = 5).
//! * `fig4-paper` — the same pipeline at full scale (50×50 images, p = 25);
//!   opt-in, takes minutes.
//! * `table1` — covariance-estimation error versus sample size at desk scale.
//! * `table1-paper` — the full-scale covariance table; opt-in.
//! * `table2` — detection-performance (AUC) comparison at desk scale.
//! * `ratecheck` — convergence-rate slope check on the quadratic trace
//!   objective with the diminishing additive-error oracle.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optimizer::{FixedStepConfig, LineSearchConfig, StepRule};
use crate::simulate::GridSpec;

/// Gradient-oracle selection in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleSpec {
    /// True-statistics gradient.
    Exact,
    /// True gradient plus `c/(k+1)^exponent` ambient noise.
    Additive { c: f64, exponent: f64 },
    /// True gradient plus tangent noise bounded by `delta`·gradient norm.
    Relative { delta: f64 },
    /// Per-iteration uniform perturbation of the true covariances.
    SurrogatePerturb,
    /// One uniform perturbation drawn up front and held fixed (sensitivity
    /// variant of `surrogate-perturb`).
    SurrogatePerturbFixed,
    /// Shrunk sample covariance estimated from `n_train` simulated training
    /// images per class.
    SurrogateSample { n_train: usize },
}

/// Optimizer selection in a config file; the iteration budget comes from the
/// top-level `iters` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerSpec {
    Fixed {
        step: StepRule,
    },
    LineSearch {
        eta0: f64,
        beta: f64,
        sigma: f64,
        #[serde(default = "default_max_backtracks")]
        max_backtracks: u32,
    },
}

fn default_max_backtracks() -> u32 {
    60
}

impl OptimizerSpec {
    /// Lowers the spec to a runnable fixed-step configuration, if it is one.
    pub fn fixed(&self, iters: usize) -> Option<FixedStepConfig> {
        match self {
            OptimizerSpec::Fixed { step } => Some(FixedStepConfig {
                step_rule: *step,
                max_iters: iters,
                grad_tol: 0.0,
            }),
            OptimizerSpec::LineSearch { .. } => None,
        }
    }

    /// Lowers the spec to a runnable line-search configuration, if it is one.
    pub fn line_search(&self, iters: usize) -> Option<LineSearchConfig> {
        match self {
            OptimizerSpec::LineSearch {
                eta0,
                beta,
                sigma,
                max_backtracks,
            } => Some(LineSearchConfig {
                eta0: *eta0,
                beta: *beta,
                sigma: *sigma,
                max_backtracks: *max_backtracks,
                max_iters: iters,
                grad_tol: 0.0,
            }),
            OptimizerSpec::Fixed { .. } => None,
        }
    }

    fn validate(&self, iters: usize) -> Result<()> {
        match self {
            OptimizerSpec::Fixed { .. } => self.fixed(iters).unwrap().validate(),
            OptimizerSpec::LineSearch { .. } => self.line_search(iters).unwrap().validate(),
        }
    }
}

/// Parameters of the rate-slope experiment (`ratecheck`).
///
/// The quadratic trace objective uses a two-tier spectrum — a separated top
/// pair over a flat bulk — so the best-gradient series settles onto the
/// injected error envelope instead of a geometric transient, and the noise
/// amplitude keeps the error dominant across the fit window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatecheckSpec {
    pub n: usize,
    pub p: usize,
    /// `c` of the conforming additive schedule.
    pub noise_amplitude: f64,
    /// Exponent of the conforming additive schedule.
    pub exponent: f64,
    /// Constant-error amplitude of the negative control.
    pub control_amplitude: f64,
}

impl Default for RatecheckSpec {
    fn default() -> Self {
        Self {
            n: 16,
            p: 2,
            noise_amplitude: 64.0,
            exponent: 0.75,
            control_amplitude: 4.0,
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    /// Subspace (channel) dimension.
    pub p: usize,
    pub oracle: OracleSpec,
    pub optimizer: OptimizerSpec,
    /// Iteration budget K.
    pub iters: usize,
    pub seeds: Vec<u64>,
    /// Shrinkage parameter applied to sample covariances.
    pub lambda: f64,
    /// Training-set sizes for the covariance table and dataset emission.
    pub sample_sizes: Vec<usize>,
    /// Test images per class for evaluation.
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default)]
    pub ratecheck: RatecheckSpec,
    /// Default output directory; the CLI `--out` flag overrides it. Excluded
    /// from the semantic hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_test_per_class() -> usize {
    2000
}

impl ExperimentConfig {
    /// Checks every module precondition the config can violate, before any
    /// work starts.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = self.grid.dim();
        if self.p < 1 || self.p >= n {
            return Err(Error::Config(format!(
                "p must satisfy 1 <= p < n = {n}, got {}",
                self.p
            )));
        }
        if self.iters < 1 {
            return Err(Error::Config("iters must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!(
                "lambda must lie strictly inside (0,1), got {}",
                self.lambda
            )));
        }
        if self.sample_sizes.is_empty() {
            return Err(Error::Config("sample_sizes must be nonempty".into()));
        }
        if let Some(&bad) = self.sample_sizes.iter().find(|&&v| v < 2) {
            return Err(Error::Config(format!(
                "sample sizes must be at least 2 (covariance estimation), got {bad}"
            )));
        }
        if self.test_per_class < 1 {
            return Err(Error::Config("test_per_class must be at least 1".into()));
        }
        match &self.oracle {
            OracleSpec::Additive { c, exponent } => {
                if !(*c > 0.0) || !c.is_finite() || !(*exponent >= 0.0) || !exponent.is_finite() {
                    return Err(Error::Config(format!(
                        "additive oracle needs c > 0 and exponent >= 0, got c={c}, exponent={exponent}"
                    )));
                }
            }
            OracleSpec::Relative { delta } => {
                if !(*delta >= 0.0 && *delta < 1.0) {
                    return Err(Error::Config(format!(
                        "relative oracle needs delta in [0,1), got {delta}"
                    )));
                }
            }
            OracleSpec::SurrogateSample { n_train } => {
                if *n_train < 2 {
                    return Err(Error::Config(format!(
                        "surrogate-sample oracle needs n_train >= 2, got {n_train}"
                    )));
                }
            }
            OracleSpec::Exact
            | OracleSpec::SurrogatePerturb
            | OracleSpec::SurrogatePerturbFixed => {}
        }
        self.optimizer.validate(self.iters)?;
        let rc = &self.ratecheck;
        if rc.p < 1 || rc.p >= rc.n {
            return Err(Error::Config(format!(
                "ratecheck needs 1 <= p < n, got n={}, p={}",
                rc.n, rc.p
            )));
        }
        if !(rc.noise_amplitude > 0.0) || !(rc.control_amplitude > 0.0) || !(rc.exponent > 0.5) {
            return Err(Error::Config(format!(
                "ratecheck needs positive amplitudes and exponent > 0.5, got {rc:?}"
            )));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration with `out_dir` masked; hex.
    pub fn semantic_hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.out_dir = None;
        let canonical = serde_json::to_string(&semantic).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Builds a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let desk_grid = |sigma1: f64, sigma2: f64| GridSpec {
        side: 16,
        sigma1,
        sigma2,
        nugget: 1e-8,
    };
    let paper_grid = |sigma1: f64, sigma2: f64| GridSpec {
        side: 50,
        sigma1,
        sigma2,
        nugget: 1e-8,
    };
    let line_search = OptimizerSpec::LineSearch {
        eta0: 2.0,
        beta: 0.7,
        sigma: 1e-4,
        max_backtracks: 60,
    };
    let cfg = match name {
        "fig4-desk" => ExperimentConfig {
            grid: desk_grid(0.55, 0.30),
            p: 5,
            oracle: OracleSpec::SurrogateSample { n_train: 100 },
            optimizer: line_search,
            iters: 300,
            seeds: vec![1, 2, 3, 4, 5],
            lambda: 0.6,
            sample_sizes: vec![100],
            test_per_class: 2000,
            ratecheck: RatecheckSpec::default(),
            out_dir: None,
        },
        "fig4-paper" => ExperimentConfig {
            grid: paper_grid(0.55, 0.30),
            p: 25,
            oracle: OracleSpec::SurrogateSample { n_train: 100 },
            optimizer: line_search,
            iters: 300,
            seeds: vec![1],
            lambda: 0.6,
            sample_sizes: vec![100],
            test_per_class: 2000,
            ratecheck: RatecheckSpec::default(),
            out_dir: None,
        },
        "table1" => ExperimentConfig {
            grid: desk_grid(3.0, 4.5),
            p: 5,
            oracle: OracleSpec::Exact,
            optimizer: OptimizerSpec::Fixed {
                step: StepRule::Constant { eta: 0.2 },
            },
            iters: 300,
            seeds: (0..20).collect(),
            lambda: 0.6,
            sample_sizes: vec![10, 100, 1000, 10000],
            test_per_class: 2000,
            ratecheck: RatecheckSpec::default(),
            out_dir: None,
        },
        "table1-paper" => ExperimentConfig {
            grid: paper_grid(3.0, 4.5),
            p: 25,
            oracle: OracleSpec::Exact,
            optimizer: OptimizerSpec::Fixed {
                step: StepRule::Constant { eta: 0.2 },
            },
            iters: 300,
            seeds: (0..10).collect(),
            lambda: 0.6,
            sample_sizes: vec![10, 100, 1000, 10000],
            test_per_class: 2000,
            ratecheck: RatecheckSpec::default(),
            out_dir: None,
        },
        "table2" => ExperimentConfig {
            grid: desk_grid(0.55, 0.30),
            p: 5,
            oracle: OracleSpec::Exact,
            optimizer: OptimizerSpec::Fixed {
                step: StepRule::Constant { eta: 0.2 },
            },
            iters: 300,
            seeds: vec![1, 2, 3, 4, 5],
            lambda: 0.6,
            sample_sizes: vec![100],
            test_per_class: 2000,
            ratecheck: RatecheckSpec::default(),
            out_dir: None,
        },
        "ratecheck" => ExperimentConfig {
            grid: desk_grid(1.0, 1.0),
            p: 5,
            oracle: OracleSpec::Additive {
                c: 64.0,
                exponent: 0.75,
            },
            optimizer: OptimizerSpec::Fixed {
                step: StepRule::LipschitzConstant { lipschitz: 4.0 },
            },
            iters: 2000,
            seeds: vec![0, 1, 2, 3, 4],
            lambda: 0.6,
            sample_sizes: vec![100],
            test_per_class: 2000,
            ratecheck: RatecheckSpec::default(),
            out_dir: None,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (available: fig4-desk, fig4-paper, table1, table1-paper, table2, ratecheck)"
            )))
        }
    };
    Ok(cfg)
}

/// Parses a config JSON string: either a complete configuration or a preset
/// name plus top-level field overrides.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Config("config root must be a JSON object".into()))?;

    let resolved = if let Some(preset_name) = obj.get("preset") {
        let name = preset_name
            .as_str()
            .ok_or_else(|| Error::Config("preset must be a string".into()))?;
        let base = preset(name)?;
        let mut merged = serde_json::to_value(&base)?;
        let target = merged.as_object_mut().expect("config serializes to an object");
        for (key, val) in obj {
            if key != "preset" {
                target.insert(key.clone(), val.clone());
            }
        }
        merged
    } else {
        value
    };

    let cfg: ExperimentConfig = serde_json::from_value(resolved)
        .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}
