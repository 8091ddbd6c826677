//! Desk-scale decoder-only transformer with RMS normalization in front of
//! every linear map, manual reverse-mode gradients, and the depth-scaling
//! ablation knobs (init gain schemes and residual coefficient schemes).
//!
//! All weights are held in map convention `(d_out, d_in)` — including the
//! input embedding, which as a linear map from one-hot token space is
//! `(d_model, vocab)`; its columns are the token vectors. Layer grouping:
//! the input embedding belongs to the input group (1->RMS), every interior
//! linear map to the hidden group (RMS->RMS), the output projection to the
//! output group (RMS->inf).

mod backward;
mod forward;
pub(crate) mod ops;

pub use backward::backward;
pub use forward::{forward_loss, Cache, TokenBatch};
pub use ops::RMSNORM_EPS;

use crate::linalg::{row_normalized_gaussian_init, semi_orthogonal_init, Matrix2D, Rng};
use crate::scion::{LayerGroup, Param, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocab {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("batch predicts zero positions (sequence length {0} < 2)")]
    DegenerateContext(usize),
    #[error("batch shape mismatch: {0}")]
    BadBatch(String),
}

/// Depth-wise init gain scaling for the residual-feeding matrices (the
/// attention output projection and the final MLP matrix).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    Identity,
    /// Multiply gain by `1/sqrt(2 N_layers)`.
    TotalDepth,
    /// Multiply gain by `1/sqrt(2 l)` where `l` is the 1-based sub-block
    /// depth (attention and FFN each count one).
    RelativeDepth,
}

/// Residual combination `y = alpha x + beta Block(Norm(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualScheme {
    /// `(1, 1)`
    Identity,
    /// `((2N-1)/2N, 1/2N)`
    DepthNormalized,
    /// `(1, 1/2N)`
    CompleteP,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_head: usize,
    /// SwiGLU expansion factor; `d_ff = round(mlp_factor * d_model)`.
    pub mlp_factor: f64,
    pub vocab_size: usize,
    pub context_len: usize,
    pub rope_theta: f64,
    #[serde(default = "default_init_scheme")]
    pub init_scheme: InitScheme,
    #[serde(default = "default_residual_scheme")]
    pub residual_scheme: ResidualScheme,
    /// A.8-style option: count FFN sub-blocks at the same relative depth as
    /// the preceding attention sub-block.
    #[serde(default)]
    pub ffn_depth_offset: bool,
    /// Present for config completeness; tying is never supported.
    #[serde(default)]
    pub tie_embeddings: bool,
}

fn default_init_scheme() -> InitScheme {
    InitScheme::TotalDepth
}

fn default_residual_scheme() -> ResidualScheme {
    ResidualScheme::Identity
}

impl ModelConfig {
    /// Fast desk-scale defaults: byte vocabulary, two layers, finite-
    /// difference-checkable in seconds.
    pub fn desk() -> ModelConfig {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            n_kv_heads: 4,
            d_head: 16,
            mlp_factor: 2.75,
            vocab_size: 257,
            context_len: 128,
            rope_theta: 10_000.0,
            init_scheme: InitScheme::TotalDepth,
            residual_scheme: ResidualScheme::Identity,
            ffn_depth_offset: false,
            tie_embeddings: false,
        }
    }

    pub fn d_ff(&self) -> usize {
        (self.mlp_factor * self.d_model as f64).round() as usize
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.d_head
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model != self.n_heads * self.d_head {
            return Err(ModelError::InvalidConfig(
                "d_model must equal n_heads * d_head".into(),
            ));
        }
        if self.n_kv_heads == 0 || !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(ModelError::InvalidConfig(
                "n_heads must be a multiple of n_kv_heads".into(),
            ));
        }
        if !self.d_head.is_multiple_of(2) {
            return Err(ModelError::InvalidConfig(
                "d_head must be even for rotary pairs".into(),
            ));
        }
        if self.vocab_size < 2 {
            return Err(ModelError::InvalidConfig("vocab_size must be >= 2".into()));
        }
        if self.n_layers == 0 || self.d_ff() == 0 || self.context_len < 2 {
            return Err(ModelError::InvalidConfig("degenerate dimensions".into()));
        }
        if self.tie_embeddings {
            return Err(ModelError::InvalidConfig(
                "tied embeddings are not supported".into(),
            ));
        }
        Ok(())
    }

    /// `(alpha, beta)` residual coefficients.
    pub fn residual_coeffs(&self) -> (f64, f64) {
        let two_n = 2.0 * self.n_layers as f64;
        match self.residual_scheme {
            ResidualScheme::Identity => (1.0, 1.0),
            ResidualScheme::DepthNormalized => ((two_n - 1.0) / two_n, 1.0 / two_n),
            ResidualScheme::CompleteP => (1.0, 1.0 / two_n),
        }
    }

    /// Gain multiplier for a residual-feeding matrix at 1-based sub-block
    /// depth `l` (attention of layer i: `2i+1`; FFN: `2i+2`, or `2i+1`
    /// with the offset flag).
    pub fn depth_gain(&self, sub_block_depth: usize) -> f64 {
        match self.init_scheme {
            InitScheme::Identity => 1.0,
            InitScheme::TotalDepth => 1.0 / (2.0 * self.n_layers as f64).sqrt(),
            InitScheme::RelativeDepth => 1.0 / (2.0 * sub_block_depth as f64).sqrt(),
        }
    }

    fn attn_depth(&self, layer: usize) -> usize {
        2 * layer + 1
    }

    fn ffn_depth(&self, layer: usize) -> usize {
        if self.ffn_depth_offset {
            2 * layer + 1
        } else {
            2 * layer + 2
        }
    }
}

/// Number of weight matrices per transformer layer.
pub const PARAMS_PER_LAYER: usize = 7;

/// Index of a layer-local matrix within [`ParamBundle::params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerParam {
    Wq,
    Wk,
    Wv,
    Wo,
    WGate,
    WUp,
    WDown,
}

/// All trainable weights, in a fixed deterministic order: input embedding,
/// then 7 matrices per layer, then the output projection.
#[derive(Debug, Clone)]
pub struct ParamBundle {
    pub params: Vec<Param>,
}

impl ParamBundle {
    pub fn input_embedding(&self) -> &Matrix2D {
        self.params[0].value.as_mat().expect("embedding is 2d")
    }

    pub fn output_projection(&self) -> &Matrix2D {
        self.params
            .last()
            .unwrap()
            .value
            .as_mat()
            .expect("output is 2d")
    }

    pub fn layer_param_index(layer: usize, which: LayerParam) -> usize {
        let off = match which {
            LayerParam::Wq => 0,
            LayerParam::Wk => 1,
            LayerParam::Wv => 2,
            LayerParam::Wo => 3,
            LayerParam::WGate => 4,
            LayerParam::WUp => 5,
            LayerParam::WDown => 6,
        };
        1 + layer * PARAMS_PER_LAYER + off
    }

    pub fn layer(&self, layer: usize, which: LayerParam) -> &Matrix2D {
        self.params[Self::layer_param_index(layer, which)]
            .value
            .as_mat()
            .expect("layer params are 2d")
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Zero gradients shaped like the bundle.
    pub fn zero_grads(&self) -> Vec<Matrix2D> {
        self.params
            .iter()
            .map(|p| {
                let m = p.value.as_mat().expect("model params are 2d");
                Matrix2D::zeros(m.rows(), m.cols())
            })
            .collect()
    }
}

/// Builds and initializes all weights.
///
/// Hidden matrices are semi-orthogonal with gain `sqrt(d_out/d_in)`
/// (unit RMS->RMS norm); the residual-feeding matrices additionally carry
/// the depth gain of the configured init scheme. The input embedding's
/// token vectors (map columns) have RMS exactly 1, so its 1->RMS norm is 1;
/// the output projection's rows have RMS `1/d_model`, so its RMS->inf norm
/// is 1 and logits start near zero (init loss ~= ln vocab).
pub fn build_model(cfg: &ModelConfig, rng: &mut Rng) -> Result<ParamBundle, ModelError> {
    cfg.validate()?;
    let d = cfg.d_model;
    let kv = cfg.kv_dim();
    let d_ff = cfg.d_ff();
    let mut params = Vec::with_capacity(2 + cfg.n_layers * PARAMS_PER_LAYER);

    // Input embedding: rows of the stored (vocab, d_model) draw are token
    // vectors; transpose into map layout (d_model, vocab).
    let stored = row_normalized_gaussian_init(cfg.vocab_size, d, 1.0, rng);
    params.push(Param::mat(
        "input_embedding",
        LayerGroup::Input,
        stored.transpose(),
    ));

    let ortho = |d_out: usize, d_in: usize, extra: f64, rng: &mut Rng| {
        let gain = (d_out as f64 / d_in as f64).sqrt() * extra;
        semi_orthogonal_init(d_out, d_in, gain, rng)
    };

    for layer in 0..cfg.n_layers {
        let attn_gain = cfg.depth_gain(cfg.attn_depth(layer));
        let ffn_gain = cfg.depth_gain(cfg.ffn_depth(layer));
        let names = [
            ("attn.wq", d, d, 1.0),
            ("attn.wk", kv, d, 1.0),
            ("attn.wv", kv, d, 1.0),
            ("attn.wo", d, d, attn_gain),
            ("mlp.w_gate", d_ff, d, 1.0),
            ("mlp.w_up", d_ff, d, 1.0),
            ("mlp.w_down", d, d_ff, ffn_gain),
        ];
        for (name, d_out, d_in, extra) in names {
            params.push(Param::mat(
                format!("layers.{layer}.{name}"),
                LayerGroup::Hidden,
                ortho(d_out, d_in, extra, rng),
            ));
        }
    }

    // Output projection in map layout (vocab, d_model).
    params.push(Param::mat(
        "output_projection",
        LayerGroup::Output,
        row_normalized_gaussian_init(cfg.vocab_size, d, 1.0 / d as f64, rng),
    ));

    Ok(ParamBundle { params })
}

/// Assigned-norm gradients bundle: map-layout matrices parallel to
/// [`ParamBundle::params`].
pub type GradBundle = Vec<Matrix2D>;

/// Wraps grads as scion tensors (borrow-free, cheap at desk scale).
pub fn grads_to_tensors(grads: &GradBundle) -> Vec<Tensor> {
    grads.iter().map(|g| Tensor::Mat(g.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::{op_norm_one_to_rms, op_norm_rms_to_inf, op_norm_rms_to_rms_with};

    #[test]
    fn desk_config_validates() {
        assert!(ModelConfig::desk().validate().is_ok());
        let mut bad = ModelConfig::desk();
        bad.d_head = 15;
        assert!(bad.validate().is_err());
        let mut tied = ModelConfig::desk();
        tied.tie_embeddings = true;
        assert!(tied.validate().is_err());
    }

    #[test]
    fn init_norms_are_unit() {
        let cfg = ModelConfig {
            init_scheme: InitScheme::Identity,
            ..ModelConfig::desk()
        };
        let mut rng = Rng::new(30);
        let bundle = build_model(&cfg, &mut rng).unwrap();
        // Input embedding 1->RMS norm = 1 exactly.
        let n_in = op_norm_one_to_rms(bundle.input_embedding());
        assert!((n_in - 1.0).abs() < 1e-12, "input norm {n_in}");
        // Output projection RMS->inf norm = 1 exactly.
        let n_out = op_norm_rms_to_inf(bundle.output_projection());
        assert!((n_out - 1.0).abs() < 1e-12, "output norm {n_out}");
        // Hidden layers: unit RMS->RMS (identity scheme leaves gains alone).
        for p in &bundle.params[1..bundle.params.len() - 1] {
            let m = p.value.as_mat().unwrap();
            let n = op_norm_rms_to_rms_with(m, 1e-12, 20_000).unwrap();
            assert!((n - 1.0).abs() < 1e-8, "{}: {n}", p.name);
        }
    }

    #[test]
    fn depth_gains_scale_residual_feeders() {
        let mut rng = Rng::new(31);
        let total = ModelConfig {
            init_scheme: InitScheme::TotalDepth,
            n_layers: 4,
            ..ModelConfig::desk()
        };
        let bundle = build_model(&total, &mut rng).unwrap();
        let wo = bundle.layer(0, LayerParam::Wo);
        let n = op_norm_rms_to_rms_with(wo, 1e-12, 20_000).unwrap();
        // gain multiplied by 1/sqrt(2*4)
        assert!((n - 1.0 / 8f64.sqrt()).abs() < 1e-8, "wo norm {n}");

        let rel = ModelConfig {
            init_scheme: InitScheme::RelativeDepth,
            n_layers: 4,
            ..ModelConfig::desk()
        };
        let bundle = build_model(&rel, &mut Rng::new(31)).unwrap();
        // FFN of layer 1 sits at sub-block depth 4 -> 1/sqrt(8); attention
        // of layer 1 at depth 3 -> 1/sqrt(6).
        let wdown = bundle.layer(1, LayerParam::WDown);
        let n = op_norm_rms_to_rms_with(wdown, 1e-12, 20_000).unwrap();
        assert!((n - 1.0 / 8f64.sqrt()).abs() < 1e-8);
        let wo1 = bundle.layer(1, LayerParam::Wo);
        let n = op_norm_rms_to_rms_with(wo1, 1e-12, 20_000).unwrap();
        assert!((n - 1.0 / 6f64.sqrt()).abs() < 1e-8);
        // Non-residual-feeding matrices stay at unit norm.
        let wq = bundle.layer(1, LayerParam::Wq);
        let n = op_norm_rms_to_rms_with(wq, 1e-12, 20_000).unwrap();
        assert!((n - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ffn_depth_offset_shifts_relative_depth() {
        let base = ModelConfig {
            init_scheme: InitScheme::RelativeDepth,
            n_layers: 2,
            ..ModelConfig::desk()
        };
        let offset = ModelConfig {
            ffn_depth_offset: true,
            ..base.clone()
        };
        // Without the offset, layer 0's FFN sits at sub-block depth 2;
        // with it, at depth 1 (same as the attention sub-block).
        let b0 = build_model(&base, &mut Rng::new(5)).unwrap();
        let b1 = build_model(&offset, &mut Rng::new(5)).unwrap();
        let n0 = op_norm_rms_to_rms_with(b0.layer(0, LayerParam::WDown), 1e-12, 20_000).unwrap();
        let n1 = op_norm_rms_to_rms_with(b1.layer(0, LayerParam::WDown), 1e-12, 20_000).unwrap();
        assert!((n0 - 1.0 / 4f64.sqrt()).abs() < 1e-8, "{n0}");
        assert!((n1 - 1.0 / 2f64.sqrt()).abs() < 1e-8, "{n1}");
    }

    #[test]
    fn residual_coeffs_per_scheme() {
        let mk = |scheme| ModelConfig {
            residual_scheme: scheme,
            n_layers: 4,
            ..ModelConfig::desk()
        };
        assert_eq!(mk(ResidualScheme::Identity).residual_coeffs(), (1.0, 1.0));
        assert_eq!(
            mk(ResidualScheme::DepthNormalized).residual_coeffs(),
            (7.0 / 8.0, 1.0 / 8.0)
        );
        assert_eq!(mk(ResidualScheme::CompleteP).residual_coeffs(), (1.0, 1.0 / 8.0));
    }

    #[test]
    fn build_is_seed_deterministic() {
        let cfg = ModelConfig::desk();
        let a = build_model(&cfg, &mut Rng::new(7)).unwrap();
        let b = build_model(&cfg, &mut Rng::new(7)).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa.value.data(), pb.value.data(), "{}", pa.name);
        }
    }
}
