//! Run configuration: a single TOML tree with model, optimizer, data,
//! sweep, logging and smoothing sections. Unknown keys are hard errors so
//! typos cannot silently skew a sweep.

use crate::model::ModelConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::HarnessError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// "constant" or "linear-decay-tail".
    #[serde(default = "default_schedule")]
    pub schedule: String,
    #[serde(default = "default_decay_fraction")]
    pub decay_fraction: f64,
    #[serde(default = "default_ns_iters")]
    pub ns_iters: usize,
    #[serde(default = "default_ns_coeffs")]
    pub ns_coeffs: [f64; 3],
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub lr_scales: LrScales,
}

fn default_schedule() -> String {
    "constant".into()
}
fn default_decay_fraction() -> f64 {
    0.25
}
fn default_ns_iters() -> usize {
    5
}
fn default_ns_coeffs() -> [f64; 3] {
    (crate::lmo::NewtonSchulzConfig::default().coeffs).into()
}
fn default_eps() -> f64 {
    1e-20
}

impl OptimizerConfig {
    pub fn ns_config(&self) -> crate::lmo::NewtonSchulzConfig {
        crate::lmo::NewtonSchulzConfig {
            n_iter: self.ns_iters,
            coeffs: (self.ns_coeffs[0], self.ns_coeffs[1], self.ns_coeffs[2]),
            eps: self.eps,
        }
    }
}

/// Per-layer-group learning-rate multipliers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrScales {
    pub input: f64,
    pub hidden: f64,
    pub output: f64,
}

impl Default for LrScales {
    fn default() -> Self {
        LrScales {
            input: 1.0,
            hidden: 1.0,
            output: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: PathBuf,
    /// Only "byte" is supported: raw bytes 0..=255 plus EOS = 256.
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    pub context: usize,
}

fn default_tokenizer() -> String {
    "byte".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Learning-rate grid; must be geometric with step 2^0.5 or 2^1.
    pub etas: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    /// Evaluation horizons in tokens, ascending; runs train to the last.
    pub horizons: Vec<u64>,
    /// Per-layer-group multiplier layouts `[input, hidden, output]`.
    #[serde(default = "default_layouts")]
    pub layouts: Vec<[f64; 3]>,
    pub seeds: Vec<u64>,
}

fn default_layouts() -> Vec<[f64; 3]> {
    vec![[1.0, 1.0, 1.0]]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggingConfig {
    /// Evaluation cadence in tokens (norm logging happens at eval points).
    pub eval_every_tokens: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Smooth only runs with batch size at or below this.
    #[serde(default = "default_max_batch")]
    pub max_batch: u64,
    /// Smooth only horizons at or above this many tokens.
    #[serde(default = "default_min_horizon")]
    pub min_horizon_tokens: u64,
}

fn default_true() -> bool {
    true
}
fn default_max_batch() -> u64 {
    128
}
fn default_min_horizon() -> u64 {
    1 << 33
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            enabled: true,
            max_batch: default_max_batch(),
            min_horizon_tokens: default_min_horizon(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub sweep: SweepConfig,
    pub logging: LoggingConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.data.tokenizer != "byte" {
            return Err(HarnessError::Config(format!(
                "unsupported tokenizer `{}` (only `byte`)",
                self.data.tokenizer
            )));
        }
        if self.data.context != self.model.context_len {
            return Err(HarnessError::Config(format!(
                "data.context ({}) must match model.context_len ({})",
                self.data.context, self.model.context_len
            )));
        }
        if self.sweep.etas.is_empty()
            || self.sweep.batch_sizes.is_empty()
            || self.sweep.horizons.is_empty()
            || self.sweep.seeds.is_empty()
        {
            return Err(HarnessError::Config("empty sweep grid".into()));
        }
        validate_eta_grid(&self.sweep.etas)?;
        if self.sweep.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::Config("horizons must be ascending".into()));
        }
        if self.logging.eval_every_tokens == 0 {
            return Err(HarnessError::Config("eval_every_tokens must be > 0".into()));
        }
        for lay in &self.sweep.layouts {
            if lay.iter().any(|&s| s <= 0.0) {
                return Err(HarnessError::Config(format!(
                    "layout {lay:?} has nonpositive scales"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            return Err(HarnessError::Config("momentum must be in [0, 1)".into()));
        }
        match self.optimizer.schedule.as_str() {
            "constant" | "linear-decay-tail" => {}
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown schedule `{other}`"
                )))
            }
        }
        Ok(())
    }
}

/// The learning-rate grid must be geometric with step 2^0.5 or 2^1.
fn validate_eta_grid(etas: &[f64]) -> Result<(), HarnessError> {
    if etas.iter().any(|&e| e <= 0.0) {
        return Err(HarnessError::Config("etas must be positive".into()));
    }
    if etas.len() < 2 {
        return Ok(());
    }
    let ratios: Vec<f64> = etas.windows(2).map(|w| w[1] / w[0]).collect();
    let first = ratios[0];
    let is_half_step = (first - 2f64.sqrt()).abs() < 1e-9;
    let is_full_step = (first - 2.0).abs() < 1e-9;
    if !is_half_step && !is_full_step {
        return Err(HarnessError::Config(format!(
            "eta grid step {first} is not 2^0.5 or 2^1"
        )));
    }
    if ratios.iter().any(|r| (r - first).abs() > 1e-9) {
        return Err(HarnessError::Config("eta grid step is not uniform".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_toml(dir: &Path) -> String {
        format!(
            r#"
[model]
d_model = 32
n_layers = 2
n_heads = 2
n_kv_heads = 2
d_head = 16
mlp_factor = 2.75
vocab_size = 257
context_len = 64
rope_theta = 10000.0

[optimizer]
base_lr = 0.125

[data]
corpus = "{}"
context = 64

[sweep]
etas = [0.0625, 0.125, 0.25]
batch_sizes = [4]
horizons = [4096, 8192]
seeds = [30]

[logging]
eval_every_tokens = 1024
"#,
            dir.join("corpus.bin").display()
        )
    }

    #[test]
    fn parses_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, desk_toml(dir.path())).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.sweep.etas.len(), 3);
        assert_eq!(cfg.optimizer.ns_iters, 5);
        assert_eq!(cfg.smoothing.max_batch, 128);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        let toml = desk_toml(dir.path()).replace("[logging]", "[logging]\ntypo_key = 1\n");
        std::fs::write(&path, toml).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");
    }

    #[test]
    fn eta_grid_steps() {
        assert!(validate_eta_grid(&[0.1]).is_ok());
        assert!(validate_eta_grid(&[0.0625, 0.125, 0.25]).is_ok());
        let root2: Vec<f64> = (0..4).map(|i| 0.1 * 2f64.powf(0.5 * i as f64)).collect();
        assert!(validate_eta_grid(&root2).is_ok());
        assert!(validate_eta_grid(&[0.1, 0.3]).is_err());
        assert!(validate_eta_grid(&[0.25, 0.125]).is_err());
    }
}
