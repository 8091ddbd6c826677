//! Forward pass: causal language-model cross-entropy with a full activation
//! cache for the manual backward pass.
//!
//! Per layer, with `(alpha, beta)` from the residual scheme:
//!
//! ```text
//! xn   = RMSNorm(x)                  # shared input norm for Wq/Wk/Wv
//! q,k  = per-head RMSNorm + RoPE of Wq xn, Wk xn
//! v    = RMSNorm(Wv xn)              # full-width value norm
//! att  = causal softmax(q k^T / sqrt(d_head)) v, heads concatenated
//! x    = alpha x + beta Wo RMSNorm(att)
//! hn   = RMSNorm(x)
//! s    = silu(W_gate hn) * (W_up hn)
//! x    = alpha x + beta W_down RMSNorm(s)
//! ```
//!
//! and finally `logits = W_out RMSNorm(x)`. Every linear map therefore sees
//! an input of RMS exactly 1.

use super::ops::{linear_forward, rms_norm_rows, silu, Rope, RMSNORM_EPS};
use super::{LayerParam, ModelConfig, ModelError, ParamBundle};

/// `(batch, seq)` token ids, row-major.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub tokens: Vec<u32>,
    pub batch: usize,
    pub seq: usize,
}

impl TokenBatch {
    pub fn new(tokens: Vec<u32>, batch: usize, seq: usize) -> Result<TokenBatch, ModelError> {
        if tokens.len() != batch * seq || batch == 0 {
            return Err(ModelError::BadBatch(format!(
                "{} tokens for {batch}x{seq}",
                tokens.len()
            )));
        }
        Ok(TokenBatch { tokens, batch, seq })
    }

    pub fn positions(&self) -> usize {
        self.batch * self.seq
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub x_in: Vec<f64>,
    pub att_xn: Vec<f64>,
    pub q_raw: Vec<f64>,
    pub k_raw: Vec<f64>,
    pub v_raw: Vec<f64>,
    pub q_nr: Vec<f64>,
    pub k_nr: Vec<f64>,
    pub v_n: Vec<f64>,
    /// Attention weights, `(batch, head, tq, tk)` with zeros above the
    /// causal diagonal.
    pub att_probs: Vec<f64>,
    pub att_concat: Vec<f64>,
    pub o_n: Vec<f64>,
    pub x_mid: Vec<f64>,
    pub mlp_hn: Vec<f64>,
    pub gate_raw: Vec<f64>,
    pub up_raw: Vec<f64>,
    pub s: Vec<f64>,
    pub s_n: Vec<f64>,
}

/// Everything the backward pass and the instrumentation need.
#[derive(Debug, Clone)]
pub struct Cache {
    pub batch: TokenBatch,
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) x_final: Vec<f64>,
    pub(crate) f_n: Vec<f64>,
    /// Softmax probabilities at every position, `(positions, vocab)`.
    pub(crate) probs: Vec<f64>,
    pub loss: f64,
}

impl Cache {
    /// Min and max RMS over every cached linear input, across all
    /// positions and layers. The norm-everywhere invariant pins both to 1.
    pub fn linear_input_rms_range(&self, cfg: &ModelConfig) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut scan = |buf: &[f64], width: usize| {
            for chunk in buf.chunks_exact(width) {
                let ms = chunk.iter().map(|v| v * v).sum::<f64>() / width as f64;
                let rms = ms.sqrt();
                lo = lo.min(rms);
                hi = hi.max(rms);
            }
        };
        let d = cfg.d_model;
        for l in &self.layers {
            scan(&l.att_xn, d);
            scan(&l.o_n, d);
            scan(&l.mlp_hn, d);
            scan(&l.s_n, cfg.d_ff());
        }
        scan(&self.f_n, d);
        (lo, hi)
    }
}

/// Runs the model and returns `(mean cross-entropy, cache)`.
pub fn forward_loss(
    params: &ParamBundle,
    cfg: &ModelConfig,
    batch: &TokenBatch,
) -> Result<(f64, Cache), ModelError> {
    cfg.validate()?;
    if batch.seq < 2 {
        return Err(ModelError::DegenerateContext(batch.seq));
    }
    for &t in &batch.tokens {
        if t as usize >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfRange {
                id: t,
                vocab: cfg.vocab_size,
            });
        }
    }

    let d = cfg.d_model;
    let n = batch.positions();
    let eps = RMSNORM_EPS;

    // Embedding lookup: token j -> column j of the (d_model, vocab) map.
    let emb = params.input_embedding();
    let mut x = vec![0.0; n * d];
    for (p, &tok) in batch.tokens.iter().enumerate() {
        for i in 0..d {
            x[p * d + i] = emb.get(i, tok as usize);
        }
    }
    let (alpha, beta) = cfg.residual_coeffs();
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        let (lc, x_next) = forward_layer(params, cfg, layer, &x, batch, alpha, beta, eps);
        layers.push(lc);
        x = x_next;
    }

    let f_n = rms_norm_rows(&x, d, eps);
    let w_out = params.output_projection();
    let logits = linear_forward(w_out, &f_n, n);

    // Cross-entropy over positions 0..seq-1 predicting the next token,
    // mean over batch * (seq - 1) predictions.
    let vocab = cfg.vocab_size;
    let mut probs = vec![0.0; n * vocab];
    let predictions = batch.batch * (batch.seq - 1);
    let mut loss = 0.0;
    for b in 0..batch.batch {
        for t in 0..batch.seq - 1 {
            let p = b * batch.seq + t;
            let target = batch.tokens[b * batch.seq + t + 1] as usize;
            let row = &logits[p * vocab..(p + 1) * vocab];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0;
            for &v in row {
                z += (v - m).exp();
            }
            let out = &mut probs[p * vocab..(p + 1) * vocab];
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - m).exp() / z;
            }
            loss += m + z.ln() - row[target];
        }
    }
    loss /= predictions as f64;

    let cache = Cache {
        batch: batch.clone(),
        layers,
        x_final: x,
        f_n,
        probs,
        loss,
    };
    Ok((loss, cache))
}

#[allow(clippy::too_many_arguments)]
fn forward_layer(
    params: &ParamBundle,
    cfg: &ModelConfig,
    layer: usize,
    x: &[f64],
    batch: &TokenBatch,
    alpha: f64,
    beta: f64,
    eps: f64,
) -> (LayerCache, Vec<f64>) {
    let d = cfg.d_model;
    let kv = cfg.kv_dim();
    let dh = cfg.d_head;
    let n = batch.positions();
    let rope = Rope::new(dh, cfg.rope_theta);
    let group = cfg.n_heads / cfg.n_kv_heads;

    let att_xn = rms_norm_rows(x, d, eps);
    let wq = params.layer(layer, LayerParam::Wq);
    let wk = params.layer(layer, LayerParam::Wk);
    let wv = params.layer(layer, LayerParam::Wv);
    let q_raw = linear_forward(wq, &att_xn, n);
    let k_raw = linear_forward(wk, &att_xn, n);
    let v_raw = linear_forward(wv, &att_xn, n);

    // Per-head RMS norm then RoPE for q and k.
    let mut q_nr = rms_norm_rows(&q_raw, dh, eps);
    let mut k_nr = rms_norm_rows(&k_raw, dh, eps);
    for b in 0..batch.batch {
        for t in 0..batch.seq {
            let p = b * batch.seq + t;
            for h in 0..cfg.n_heads {
                rope.apply(&mut q_nr[p * d + h * dh..p * d + (h + 1) * dh], t);
            }
            for h in 0..cfg.n_kv_heads {
                rope.apply(&mut k_nr[p * kv + h * dh..p * kv + (h + 1) * dh], t);
            }
        }
    }
    // Full-width value norm.
    let v_n = rms_norm_rows(&v_raw, kv, eps);

    // Causal attention per (batch, head).
    let seq = batch.seq;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut att_probs = vec![0.0; batch.batch * cfg.n_heads * seq * seq];
    let mut att_concat = vec![0.0; n * d];
    for b in 0..batch.batch {
        for h in 0..cfg.n_heads {
            let kvh = h / group;
            let prow = |tq: usize| ((b * cfg.n_heads + h) * seq + tq) * seq;
            for tq in 0..seq {
                let pq = b * seq + tq;
                let qv = &q_nr[pq * d + h * dh..pq * d + (h + 1) * dh];
                let mut m = f64::NEG_INFINITY;
                let mut scores = vec![0.0; tq + 1];
                for (tk, s) in scores.iter_mut().enumerate() {
                    let pk = b * seq + tk;
                    let kvec = &k_nr[pk * kv + kvh * dh..pk * kv + (kvh + 1) * dh];
                    let mut acc = 0.0;
                    for (a, c) in qv.iter().zip(kvec) {
                        acc += a * c;
                    }
                    *s = acc * scale;
                    m = m.max(*s);
                }
                let mut z = 0.0;
                for s in &scores {
                    z += (s - m).exp();
                }
                let base = prow(tq);
                for (tk, s) in scores.iter().enumerate() {
                    att_probs[base + tk] = (s - m).exp() / z;
                }
                let out = &mut att_concat[pq * d + h * dh..pq * d + (h + 1) * dh];
                for (tk, &pr) in att_probs[base..base + tq + 1].iter().enumerate() {
                    let pk = b * seq + tk;
                    let vvec = &v_n[pk * kv + kvh * dh..pk * kv + (kvh + 1) * dh];
                    for (o, &vv) in out.iter_mut().zip(vvec) {
                        *o += pr * vv;
                    }
                }
            }
        }
    }

    let o_n = rms_norm_rows(&att_concat, d, eps);
    let wo = params.layer(layer, LayerParam::Wo);
    let att_out = linear_forward(wo, &o_n, n);

    let mut x_mid = vec![0.0; n * d];
    for i in 0..n * d {
        x_mid[i] = alpha * x[i] + beta * att_out[i];
    }

    let mlp_hn = rms_norm_rows(&x_mid, d, eps);
    let w_gate = params.layer(layer, LayerParam::WGate);
    let w_up = params.layer(layer, LayerParam::WUp);
    let w_down = params.layer(layer, LayerParam::WDown);
    let gate_raw = linear_forward(w_gate, &mlp_hn, n);
    let up_raw = linear_forward(w_up, &mlp_hn, n);
    let d_ff = cfg.d_ff();
    let mut s = vec![0.0; n * d_ff];
    for i in 0..n * d_ff {
        s[i] = silu(gate_raw[i]) * up_raw[i];
    }
    let s_n = rms_norm_rows(&s, d_ff, eps);
    let mlp_out = linear_forward(w_down, &s_n, n);

    let mut x_next = vec![0.0; n * d];
    for i in 0..n * d {
        x_next[i] = alpha * x_mid[i] + beta * mlp_out[i];
    }

    let lc = LayerCache {
        x_in: x.to_vec(),
        att_xn,
        q_raw,
        k_raw,
        v_raw,
        q_nr,
        k_nr,
        v_n,
        att_probs,
        att_concat,
        o_n,
        x_mid,
        mlp_hn,
        gate_raw,
        up_raw,
        s,
        s_n,
    };
    (lc, x_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use crate::model::build_model;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            n_kv_heads: 2,
            d_head: 8,
            mlp_factor: 2.75,
            vocab_size: 31,
            context_len: 16,
            rope_theta: 10_000.0,
            ..ModelConfig::desk()
        }
    }

    fn random_batch(cfg: &ModelConfig, b: usize, t: usize, seed: u64) -> TokenBatch {
        let mut rng = Rng::new(seed);
        let tokens = (0..b * t)
            .map(|_| rng.below(cfg.vocab_size as u64) as u32)
            .collect();
        TokenBatch::new(tokens, b, t).unwrap()
    }

    #[test]
    fn init_loss_near_ln_vocab() {
        let cfg = ModelConfig::desk();
        for seed in 0..3 {
            let bundle = build_model(&cfg, &mut Rng::new(seed)).unwrap();
            let batch = random_batch(&cfg, 2, 64, 100 + seed);
            let (loss, _) = forward_loss(&bundle, &cfg, &batch).unwrap();
            let want = (cfg.vocab_size as f64).ln();
            assert!(
                (loss - want).abs() / want < 0.01,
                "seed {seed}: loss {loss} vs ln(V) {want}"
            );
        }
    }

    #[test]
    fn single_token_context_is_error() {
        let cfg = tiny_cfg();
        let bundle = build_model(&cfg, &mut Rng::new(1)).unwrap();
        let batch = TokenBatch::new(vec![3, 4], 2, 1).unwrap();
        assert!(matches!(
            forward_loss(&bundle, &cfg, &batch),
            Err(ModelError::DegenerateContext(1))
        ));
    }

    #[test]
    fn out_of_vocab_token_is_error() {
        let cfg = tiny_cfg();
        let bundle = build_model(&cfg, &mut Rng::new(1)).unwrap();
        let batch = TokenBatch::new(vec![1, 2, 31, 4], 1, 4).unwrap();
        assert!(matches!(
            forward_loss(&bundle, &cfg, &batch),
            Err(ModelError::TokenOutOfRange { id: 31, .. })
        ));
    }

    #[test]
    fn residual_schemes_differ_but_both_finite() {
        let mut a = tiny_cfg();
        a.residual_scheme = crate::model::ResidualScheme::Identity;
        let mut b = tiny_cfg();
        b.residual_scheme = crate::model::ResidualScheme::DepthNormalized;
        let bundle_a = build_model(&a, &mut Rng::new(9)).unwrap();
        let bundle_b = build_model(&b, &mut Rng::new(9)).unwrap();
        let batch = random_batch(&a, 2, 8, 5);
        let (la, _) = forward_loss(&bundle_a, &a, &batch).unwrap();
        let (lb, _) = forward_loss(&bundle_b, &b, &batch).unwrap();
        assert!(la.is_finite() && lb.is_finite());
        assert_ne!(la, lb);
    }

    #[test]
    fn norm_everywhere_at_init() {
        let cfg = tiny_cfg();
        let bundle = build_model(&cfg, &mut Rng::new(2)).unwrap();
        let batch = random_batch(&cfg, 2, 12, 6);
        let (_, cache) = forward_loss(&bundle, &cfg, &batch).unwrap();
        let (lo, hi) = cache.linear_input_rms_range(&cfg);
        assert!((lo - 1.0).abs() < 1e-6 && (hi - 1.0).abs() < 1e-6, "[{lo}, {hi}]");
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let bundle = build_model(&cfg, &mut Rng::new(3)).unwrap();
        let batch = random_batch(&cfg, 2, 8, 7);
        let (l1, _) = forward_loss(&bundle, &cfg, &batch).unwrap();
        let (l2, _) = forward_loss(&bundle, &cfg, &batch).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
    }
}
