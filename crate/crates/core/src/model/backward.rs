//! Manual reverse-mode gradients for the forward pass in
//! [`super::forward`]. Returns one map-layout gradient matrix per
//! parameter, in bundle order.

use super::forward::Cache;
use super::ops::{linear_backward, rms_norm_rows_backward, silu, silu_grad, Rope, RMSNORM_EPS};
use super::{GradBundle, LayerParam, ModelConfig, ParamBundle};

/// Exact gradients of the cached loss w.r.t. every parameter.
pub fn backward(params: &ParamBundle, cfg: &ModelConfig, cache: &Cache) -> GradBundle {
    let d = cfg.d_model;
    let kv = cfg.kv_dim();
    let dh = cfg.d_head;
    let d_ff = cfg.d_ff();
    let vocab = cfg.vocab_size;
    let batch = &cache.batch;
    let n = batch.positions();
    let seq = batch.seq;
    let eps = RMSNORM_EPS;
    let (alpha, beta) = cfg.residual_coeffs();
    let rope = Rope::new(dh, cfg.rope_theta);
    let group = cfg.n_heads / cfg.n_kv_heads;

    let mut grads = params.zero_grads();
    let out_idx = params.params.len() - 1;

    // Cross-entropy: d logits = (probs - onehot) / predictions at every
    // predicting position; the final position of each row predicts nothing.
    let predictions = (batch.batch * (seq - 1)) as f64;
    let mut dlogits = vec![0.0; n * vocab];
    for b in 0..batch.batch {
        for t in 0..seq - 1 {
            let p = b * seq + t;
            let target = batch.tokens[b * seq + t + 1] as usize;
            let src = &cache.probs[p * vocab..(p + 1) * vocab];
            let dst = &mut dlogits[p * vocab..(p + 1) * vocab];
            for (o, &pr) in dst.iter_mut().zip(src) {
                *o = pr / predictions;
            }
            dst[target] -= 1.0 / predictions;
        }
    }

    // Output projection and final norm.
    let w_out = params.output_projection();
    let df_n = linear_backward(w_out, &cache.f_n, &dlogits, n, &mut grads[out_idx]);
    let mut dx = rms_norm_rows_backward(&cache.x_final, &df_n, d, eps);

    for layer in (0..cfg.n_layers).rev() {
        let lc = &cache.layers[layer];
        let idx = |which| ParamBundle::layer_param_index(layer, which);

        // x_next = alpha x_mid + beta W_down s_n
        let mut dmlp_out = vec![0.0; n * d];
        let mut dx_mid = vec![0.0; n * d];
        for i in 0..n * d {
            dmlp_out[i] = beta * dx[i];
            dx_mid[i] = alpha * dx[i];
        }
        let w_down = params.layer(layer, LayerParam::WDown);
        let ds_n = {
            let g = &mut grads[idx(LayerParam::WDown)];
            linear_backward(w_down, &lc.s_n, &dmlp_out, n, g)
        };
        let ds = rms_norm_rows_backward(&lc.s, &ds_n, d_ff, eps);

        // s = silu(gate) * up
        let mut dgate = vec![0.0; n * d_ff];
        let mut dup = vec![0.0; n * d_ff];
        for i in 0..n * d_ff {
            dgate[i] = ds[i] * lc.up_raw[i] * silu_grad(lc.gate_raw[i]);
            dup[i] = ds[i] * silu(lc.gate_raw[i]);
        }
        let w_gate = params.layer(layer, LayerParam::WGate);
        let w_up = params.layer(layer, LayerParam::WUp);
        let mut dhn = {
            let g = &mut grads[idx(LayerParam::WGate)];
            linear_backward(w_gate, &lc.mlp_hn, &dgate, n, g)
        };
        let dhn_up = {
            let g = &mut grads[idx(LayerParam::WUp)];
            linear_backward(w_up, &lc.mlp_hn, &dup, n, g)
        };
        for (a, b) in dhn.iter_mut().zip(&dhn_up) {
            *a += b;
        }
        let dmid_from_norm = rms_norm_rows_backward(&lc.x_mid, &dhn, d, eps);
        for (a, b) in dx_mid.iter_mut().zip(&dmid_from_norm) {
            *a += b;
        }

        // x_mid = alpha x_in + beta Wo o_n
        let mut datt_out = vec![0.0; n * d];
        let mut dx_in = vec![0.0; n * d];
        for i in 0..n * d {
            datt_out[i] = beta * dx_mid[i];
            dx_in[i] = alpha * dx_mid[i];
        }
        let wo = params.layer(layer, LayerParam::Wo);
        let do_n = {
            let g = &mut grads[idx(LayerParam::Wo)];
            linear_backward(wo, &lc.o_n, &datt_out, n, g)
        };
        let datt_concat = rms_norm_rows_backward(&lc.att_concat, &do_n, d, eps);

        // Attention.
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq_nr = vec![0.0; n * d];
        let mut dk_nr = vec![0.0; n * kv];
        let mut dv_n = vec![0.0; n * kv];
        for b in 0..batch.batch {
            for h in 0..cfg.n_heads {
                let kvh = h / group;
                for tq in 0..seq {
                    let pq = b * seq + tq;
                    let dout = &datt_concat[pq * d + h * dh..pq * d + (h + 1) * dh];
                    let prow = ((b * cfg.n_heads + h) * seq + tq) * seq;
                    let probs = &lc.att_probs[prow..prow + tq + 1];
                    // d probs and dV
                    let mut dprobs = vec![0.0; tq + 1];
                    for tk in 0..=tq {
                        let pk = b * seq + tk;
                        let vvec = &lc.v_n[pk * kv + kvh * dh..pk * kv + (kvh + 1) * dh];
                        let mut acc = 0.0;
                        for (a, c) in dout.iter().zip(vvec) {
                            acc += a * c;
                        }
                        dprobs[tk] = acc;
                        let dvv = &mut dv_n[pk * kv + kvh * dh..pk * kv + (kvh + 1) * dh];
                        for (o, &a) in dvv.iter_mut().zip(dout) {
                            *o += probs[tk] * a;
                        }
                    }
                    // softmax backward
                    let inner: f64 = dprobs.iter().zip(probs).map(|(a, b)| a * b).sum();
                    let qvec = &lc.q_nr[pq * d + h * dh..pq * d + (h + 1) * dh];
                    let dq = &mut dq_nr[pq * d + h * dh..pq * d + (h + 1) * dh];
                    for tk in 0..=tq {
                        let dscore = probs[tk] * (dprobs[tk] - inner) * scale;
                        if dscore == 0.0 {
                            continue;
                        }
                        let pk = b * seq + tk;
                        let kvec = &lc.k_nr[pk * kv + kvh * dh..pk * kv + (kvh + 1) * dh];
                        for (o, &c) in dq.iter_mut().zip(kvec) {
                            *o += dscore * c;
                        }
                        let dk = &mut dk_nr[pk * kv + kvh * dh..pk * kv + (kvh + 1) * dh];
                        for (o, &c) in dk.iter_mut().zip(qvec) {
                            *o += dscore * c;
                        }
                    }
                }
            }
        }

        // Value norm backward (full width).
        let dv_raw = rms_norm_rows_backward(&lc.v_raw, &dv_n, kv, eps);

        // RoPE backward (rotate by the transpose), then per-head norm
        // backward onto the raw projections.
        for b in 0..batch.batch {
            for t in 0..seq {
                let p = b * seq + t;
                for h in 0..cfg.n_heads {
                    rope.apply_inverse(&mut dq_nr[p * d + h * dh..p * d + (h + 1) * dh], t);
                }
                for h in 0..cfg.n_kv_heads {
                    rope.apply_inverse(&mut dk_nr[p * kv + h * dh..p * kv + (h + 1) * dh], t);
                }
            }
        }
        let dq_raw = rms_norm_rows_backward(&lc.q_raw, &dq_nr, dh, eps);
        let dk_raw = rms_norm_rows_backward(&lc.k_raw, &dk_nr, dh, eps);

        // Projections share the normalized attention input.
        let wq = params.layer(layer, LayerParam::Wq);
        let wk = params.layer(layer, LayerParam::Wk);
        let wv = params.layer(layer, LayerParam::Wv);
        let mut datt_xn = {
            let g = &mut grads[idx(LayerParam::Wq)];
            linear_backward(wq, &lc.att_xn, &dq_raw, n, g)
        };
        let dxn_k = {
            let g = &mut grads[idx(LayerParam::Wk)];
            linear_backward(wk, &lc.att_xn, &dk_raw, n, g)
        };
        let dxn_v = {
            let g = &mut grads[idx(LayerParam::Wv)];
            linear_backward(wv, &lc.att_xn, &dv_raw, n, g)
        };
        for i in 0..n * d {
            datt_xn[i] += dxn_k[i] + dxn_v[i];
        }
        let dx_from_norm = rms_norm_rows_backward(&lc.x_in, &datt_xn, d, eps);
        for (a, b) in dx_in.iter_mut().zip(&dx_from_norm) {
            *a += b;
        }

        dx = dx_in;
    }

    // Embedding: accumulate into the token's column of the (d_model, vocab)
    // map.
    let demb = &mut grads[0];
    for (p, &tok) in batch.tokens.iter().enumerate() {
        for i in 0..d {
            let cur = demb.get(i, tok as usize);
            demb.set(i, tok as usize, cur + dx[p * d + i]);
        }
    }

    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Matrix2D, Rng};
    use crate::model::{build_model, forward_loss, TokenBatch};

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

    fn batch(cfg: &ModelConfig, b: usize, t: usize, seed: u64) -> TokenBatch {
        let mut rng = Rng::new(seed);
        let tokens = (0..b * t)
            .map(|_| rng.below(cfg.vocab_size as u64) as u32)
            .collect();
        TokenBatch::new(tokens, b, t).unwrap()
    }

    /// Central finite difference of the loss along `dir` for parameter `i`.
    fn directional_fd(
        params: &ParamBundle,
        cfg: &ModelConfig,
        b: &TokenBatch,
        i: usize,
        dir: &Matrix2D,
        h: f64,
    ) -> f64 {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.params[i]
            .value
            .data_mut()
            .iter_mut()
            .zip(dir.data())
            .for_each(|(w, d)| *w += h * d);
        minus.params[i]
            .value
            .data_mut()
            .iter_mut()
            .zip(dir.data())
            .for_each(|(w, d)| *w -= h * d);
        let (lp, _) = forward_loss(&plus, cfg, b).unwrap();
        let (lm, _) = forward_loss(&minus, cfg, b).unwrap();
        (lp - lm) / (2.0 * h)
    }

    #[test]
    fn gradients_match_directional_finite_differences() {
        let cfg = tiny_cfg();
        let bundle = build_model(&cfg, &mut Rng::new(30)).unwrap();
        let tb = batch(&cfg, 2, 8, 77);
        let (_, cache) = forward_loss(&bundle, &cfg, &tb).unwrap();
        let grads = backward(&bundle, &cfg, &cache);
        let mut rng = Rng::new(1234);
        #[allow(clippy::needless_range_loop)]
        for i in 0..bundle.params.len() {
            let m = bundle.params[i].value.as_mat().unwrap();
            let mut dir = Matrix2D::gaussian(m.rows(), m.cols(), &mut rng);
            let f = dir.frobenius_norm();
            dir.scale(1.0 / f);
            let fd = directional_fd(&bundle, &cfg, &tb, i, &dir, 1e-4);
            let analytic: f64 = grads[i]
                .data()
                .iter()
                .zip(dir.data())
                .map(|(a, b)| a * b)
                .sum();
            let denom = analytic.abs().max(fd.abs()).max(1e-10);
            assert!(
                (fd - analytic).abs() / denom < 1e-4,
                "param {} ({}): fd {fd} vs analytic {analytic}",
                i,
                bundle.params[i].name
            );
        }
    }

    #[test]
    fn unused_token_embedding_has_zero_gradient() {
        let cfg = tiny_cfg();
        let bundle = build_model(&cfg, &mut Rng::new(5)).unwrap();
        // Tokens drawn only from 0..8; columns for tokens >= 8 are unused
        // inputs, so their embedding gradient must vanish.
        let mut rng = Rng::new(8);
        let tokens: Vec<u32> = (0..16).map(|_| rng.below(8) as u32).collect();
        let tb = TokenBatch::new(tokens, 2, 8).unwrap();
        let (_, cache) = forward_loss(&bundle, &cfg, &tb).unwrap();
        let grads = backward(&bundle, &cfg, &cache);
        let demb = &grads[0];
        for tok in 8..cfg.vocab_size {
            for i in 0..cfg.d_model {
                assert_eq!(demb.get(i, tok), 0.0, "token {tok} row {i}");
            }
        }
    }

    #[test]
    fn duplicated_batch_leaves_mean_gradients_unchanged() {
        let cfg = tiny_cfg();
        let bundle = build_model(&cfg, &mut Rng::new(6)).unwrap();
        let tb = batch(&cfg, 2, 8, 9);
        let mut doubled = tb.tokens.clone();
        doubled.extend_from_slice(&tb.tokens);
        let tb2 = TokenBatch::new(doubled, 4, 8).unwrap();

        let (_, c1) = forward_loss(&bundle, &cfg, &tb).unwrap();
        let g1 = backward(&bundle, &cfg, &c1);
        let (_, c2) = forward_loss(&bundle, &cfg, &tb2).unwrap();
        let g2 = backward(&bundle, &cfg, &c2);
        for (a, b) in g1.iter().zip(&g2) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
    }
}
