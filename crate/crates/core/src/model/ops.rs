//! Elementwise and per-position primitives shared by the forward and
//! backward passes. Activations are flat row-major `Vec<f64>` buffers of
//! shape `(positions, features)`.

use crate::linalg::Matrix2D;

pub const RMSNORM_EPS: f64 = 1e-20;

/// `y = x / sqrt(mean(x^2) + eps)` over one feature vector.
pub fn rms_norm_vec(x: &[f64], y: &mut [f64], eps: f64) {
    let d = x.len() as f64;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / d + eps;
    let inv = 1.0 / ms.sqrt();
    for (o, v) in y.iter_mut().zip(x) {
        *o = v * inv;
    }
}

/// Backward of [`rms_norm_vec`]: given the cached input `x` and upstream
/// `dy`, accumulates into `dx`.
pub fn rms_norm_backward_vec(x: &[f64], dy: &[f64], dx: &mut [f64], eps: f64) {
    let d = x.len() as f64;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / d + eps;
    let inv = 1.0 / ms.sqrt();
    let dot: f64 = dy.iter().zip(x).map(|(a, b)| a * b).sum();
    let coef = dot * inv * inv * inv / d;
    for ((o, &g), &xv) in dx.iter_mut().zip(dy).zip(x) {
        *o += g * inv - xv * coef;
    }
}

/// Applies [`rms_norm_vec`] to every `width`-sized chunk.
pub fn rms_norm_rows(x: &[f64], width: usize, eps: f64) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (xc, yc) in x.chunks_exact(width).zip(y.chunks_exact_mut(width)) {
        rms_norm_vec(xc, yc, eps);
    }
    y
}

/// Row-chunk backward of [`rms_norm_rows`].
pub fn rms_norm_rows_backward(x: &[f64], dy: &[f64], width: usize, eps: f64) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for ((xc, dyc), dxc) in x
        .chunks_exact(width)
        .zip(dy.chunks_exact(width))
        .zip(dx.chunks_exact_mut(width))
    {
        rms_norm_backward_vec(xc, dyc, dxc, eps);
    }
    dx
}

/// `y[p] = W x[p]` for `n` positions; `x` is `(n, d_in)`, result `(n, d_out)`.
pub fn linear_forward(w: &Matrix2D, x: &[f64], n: usize) -> Vec<f64> {
    let d_in = w.cols();
    let d_out = w.rows();
    debug_assert_eq!(x.len(), n * d_in);
    let mut y = vec![0.0; n * d_out];
    for p in 0..n {
        let xr = &x[p * d_in..(p + 1) * d_in];
        let yr = &mut y[p * d_out..(p + 1) * d_out];
        for (o, out) in yr.iter_mut().enumerate() {
            let wr = w.row(o);
            let mut acc = 0.0;
            for (a, b) in wr.iter().zip(xr) {
                acc += a * b;
            }
            *out = acc;
        }
    }
    y
}

/// Backward of [`linear_forward`]: accumulates `dW += dy^T x` into `dw` and
/// returns `dx = dy W`.
pub fn linear_backward(w: &Matrix2D, x: &[f64], dy: &[f64], n: usize, dw: &mut Matrix2D) -> Vec<f64> {
    let d_in = w.cols();
    let d_out = w.rows();
    debug_assert_eq!(x.len(), n * d_in);
    debug_assert_eq!(dy.len(), n * d_out);
    let mut dx = vec![0.0; n * d_in];
    for p in 0..n {
        let xr = &x[p * d_in..(p + 1) * d_in];
        let dyr = &dy[p * d_out..(p + 1) * d_out];
        let dxr = &mut dx[p * d_in..(p + 1) * d_in];
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wr = w.row(o);
            let dwr = dw.row_mut(o);
            for i in 0..d_in {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    dx
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Rotary position embedding over adjacent pairs within one head vector:
/// pair `i` rotates by `pos * theta^(-2i/d_head)`.
pub struct Rope {
    /// `freqs[i]` = theta^(-2i/d_head) for pair index i.
    freqs: Vec<f64>,
}

impl Rope {
    pub fn new(d_head: usize, theta: f64) -> Rope {
        assert!(d_head.is_multiple_of(2), "d_head must be even for rotary pairs");
        let half = d_head / 2;
        let freqs = (0..half)
            .map(|i| theta.powf(-((2 * i) as f64) / d_head as f64))
            .collect();
        Rope { freqs }
    }

    pub fn apply(&self, head: &mut [f64], pos: usize) {
        self.rotate(head, pos as f64)
    }

    /// Inverse rotation; the backward pass multiplies by the transpose.
    pub fn apply_inverse(&self, head: &mut [f64], pos: usize) {
        self.rotate(head, -(pos as f64))
    }

    fn rotate(&self, head: &mut [f64], signed_pos: f64) {
        for (i, &f) in self.freqs.iter().enumerate() {
            let angle = signed_pos * f;
            let (sin, cos) = angle.sin_cos();
            let a = head[2 * i];
            let b = head[2 * i + 1];
            head[2 * i] = a * cos - b * sin;
            head[2 * i + 1] = a * sin + b * cos;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rms_vector_norm, Rng};

    #[test]
    fn rms_norm_output_has_unit_rms() {
        let mut rng = Rng::new(51);
        let x: Vec<f64> = (0..16).map(|_| rng.normal() * 3.0).collect();
        let mut y = vec![0.0; 16];
        rms_norm_vec(&x, &mut y, RMSNORM_EPS);
        let r = rms_vector_norm(&y).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rms_norm_backward_matches_finite_difference() {
        let mut rng = Rng::new(52);
        let x: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let dy: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let mut dx = vec![0.0; 8];
        rms_norm_backward_vec(&x, &dy, &mut dx, RMSNORM_EPS);
        let f = |x: &[f64]| -> f64 {
            let mut y = vec![0.0; 8];
            rms_norm_vec(x, &mut y, RMSNORM_EPS);
            y.iter().zip(&dy).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for j in 0..8 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - dx[j]).abs() < 1e-7, "j={j}: {fd} vs {}", dx[j]);
        }
    }

    #[test]
    fn linear_backward_matches_finite_difference() {
        let mut rng = Rng::new(53);
        let w = Matrix2D::gaussian(3, 4, &mut rng);
        let x: Vec<f64> = (0..2 * 4).map(|_| rng.normal()).collect();
        let dy: Vec<f64> = (0..2 * 3).map(|_| rng.normal()).collect();
        let mut dw = Matrix2D::zeros(3, 4);
        let dx = linear_backward(&w, &x, &dy, 2, &mut dw);
        let f = |w: &Matrix2D, x: &[f64]| -> f64 {
            linear_forward(w, x, 2)
                .iter()
                .zip(&dy)
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-6;
        for idx in 0..12 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp.data_mut()[idx] += h;
            wm.data_mut()[idx] -= h;
            let fd = (f(&wp, &x) - f(&wm, &x)) / (2.0 * h);
            assert!((fd - dw.data()[idx]).abs() < 1e-7);
        }
        for j in 0..8 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (f(&w, &xp) - f(&w, &xm)) / (2.0 * h);
            assert!((fd - dx[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn rope_inverse_round_trips_and_preserves_norm() {
        let rope = Rope::new(8, 10_000.0);
        let mut rng = Rng::new(54);
        let orig: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let mut v = orig.clone();
        rope.apply(&mut v, 17);
        let n0: f64 = orig.iter().map(|a| a * a).sum();
        let n1: f64 = v.iter().map(|a| a * a).sum();
        assert!((n0 - n1).abs() < 1e-12);
        rope.apply_inverse(&mut v, 17);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
