//! Duality maps (linear-minimization oracles) for each operator norm.
//!
//! Given a raw gradient `G`, the duality map returns the steepest-descent
//! direction of unit operator norm:
//!
//! * 1 -> RMS:    each column scaled to RMS 1
//! * RMS -> RMS:  `sqrt(d_out/d_in) * U V^T` (polar factor), approximated
//!   with the quintic Newton-Schulz iteration on the hot path and computed
//!   exactly from the SVD for reference
//! * RMS -> inf:  each row scaled to RMS `1/d_in`
//!
//! Batched variants apply the per-matrix map independently to each expert
//! slice of a 3D tensor.

use crate::linalg::{rms_vector_norm, svd_oracle, Batch3D, LinalgError, Matrix2D};
use crate::norms::NormKind;
use serde::{Deserialize, Serialize};

/// Quintic Newton-Schulz iteration parameters. The coefficient triple is
/// the original Muon choice; eps guards the Frobenius pre-normalization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NewtonSchulzConfig {
    pub n_iter: usize,
    pub coeffs: (f64, f64, f64),
    pub eps: f64,
}

impl Default for NewtonSchulzConfig {
    fn default() -> Self {
        NewtonSchulzConfig {
            n_iter: 5,
            coeffs: (3.4445, -4.7750, 2.0315),
            eps: 1e-20,
        }
    }
}

/// Default epsilon used by the row/column normalizing duals.
pub const DUAL_EPS: f64 = 1e-20;

/// Column-normalizing dual for the 1->RMS norm. Columns with RMS <= eps map
/// to zero columns rather than dividing.
pub fn dual_one_to_rms(g: &Matrix2D, eps: f64) -> Matrix2D {
    let mut out = g.clone();
    let d_out = g.rows() as f64;
    for j in 0..g.cols() {
        let mut ss = 0.0;
        for i in 0..g.rows() {
            let v = g.get(i, j);
            ss += v * v;
        }
        let rms = (ss / d_out).sqrt();
        let scale = if rms <= eps { 0.0 } else { 1.0 / rms };
        for i in 0..g.rows() {
            out.set(i, j, g.get(i, j) * scale);
        }
    }
    out
}

/// Row-scaling dual for the RMS->inf norm: nonzero rows are rescaled to RMS
/// `1/d_in`; zero rows stay zero.
pub fn dual_rms_to_inf(g: &Matrix2D, eps: f64) -> Matrix2D {
    let mut out = g.clone();
    let d_in = g.cols() as f64;
    for i in 0..g.rows() {
        let rms = rms_vector_norm(g.row(i)).expect("nonempty row");
        let scale = if rms <= eps { 0.0 } else { 1.0 / (d_in * rms) };
        for v in out.row_mut(i) {
            *v *= scale;
        }
    }
    out
}

/// Quintic Newton-Schulz approximation of the polar factor `U V^T`.
///
/// The input is first scaled by `1/(|G|_F + eps)` so all singular values
/// land in the iteration's basin; the iterate is
/// `X <- a X + b (X X^T) X + c (X X^T)^2 X`. A tall input is transposed
/// first so the Gram matrix stays at the smaller dimension, and transposed
/// back at the end (mathematically a no-op).
pub fn newton_schulz(g: &Matrix2D, cfg: &NewtonSchulzConfig) -> Result<Matrix2D, LinalgError> {
    if !g.all_finite() {
        return Err(LinalgError::NonFinite("newton_schulz input".into()));
    }
    let tall = g.rows() > g.cols();
    let mut x = if tall { g.transpose() } else { g.clone() };
    let fro = x.frobenius_norm();
    x.scale(1.0 / (fro + cfg.eps));

    let (a, b, c) = cfg.coeffs;
    for _ in 0..cfg.n_iter {
        let gram = x.matmul_transpose(&x); // X X^T, (r, r) with r = min dim
        let gram2 = gram.matmul(&gram);
        // B = b*A + c*A^2
        let mut poly = gram2;
        poly.scale(c);
        poly.add_scaled(&gram, b);
        // X = a*X + B*X
        let bx = poly.matmul(&x);
        x.scale(a);
        x.add_scaled(&bx, 1.0);
    }

    Ok(if tall { x.transpose() } else { x })
}

/// Scalar form of one Newton-Schulz pass: the singular values of the matrix
/// iterate evolve independently under this quintic. Used by tests to predict
/// the exact output spectrum for inputs with known singular values.
pub fn newton_schulz_scalar(x0: f64, cfg: &NewtonSchulzConfig) -> f64 {
    let (a, b, c) = cfg.coeffs;
    let mut x = x0;
    for _ in 0..cfg.n_iter {
        let x2 = x * x;
        x = a * x + b * x2 * x + c * x2 * x2 * x;
    }
    x
}

/// RMS->RMS dual on the training path: `sqrt(d_out/d_in)` times the
/// Newton-Schulz polar approximation.
pub fn dual_rms_to_rms(g: &Matrix2D, cfg: &NewtonSchulzConfig) -> Result<Matrix2D, LinalgError> {
    let scale = (g.rows() as f64 / g.cols() as f64).sqrt();
    Ok(newton_schulz(g, cfg)?.scaled(scale))
}

/// Exact RMS->RMS dual via the SVD oracle: `sqrt(d_out/d_in) * U V^T` with
/// zero singular directions dropped. Reference semantics for tests.
pub fn dual_rms_to_rms_exact(g: &Matrix2D) -> Result<Matrix2D, LinalgError> {
    if !g.all_finite() {
        return Err(LinalgError::NonFinite("dual_rms_to_rms_exact input".into()));
    }
    let svd = svd_oracle(g);
    if svd.sigma[0] == 0.0 {
        return Err(LinalgError::ZeroMatrix);
    }
    let cutoff = svd.sigma[0] * 1e-12;
    let scale = (g.rows() as f64 / g.cols() as f64).sqrt();
    Ok(svd.polar_factor(cutoff).scaled(scale))
}

/// Applies the dual map selected by `kind` to one matrix.
pub fn dual(kind: NormKind, g: &Matrix2D, cfg: &NewtonSchulzConfig) -> Result<Matrix2D, LinalgError> {
    match kind {
        NormKind::OneToRms => Ok(dual_one_to_rms(g, cfg.eps)),
        NormKind::RmsToRms => dual_rms_to_rms(g, cfg),
        NormKind::RmsToInf => Ok(dual_rms_to_inf(g, cfg.eps)),
    }
}

/// Per-expert dual over a `(experts, d_out, d_in)` batch. With
/// `transpose_experts` set, each slice is transposed before the dual and
/// transposed back, for weights stored as `(experts, d_in, d_out)`.
/// Slices are processed independently, so the result does not depend on
/// processing order.
pub fn batched_lmo(
    g: &Batch3D,
    kind: NormKind,
    cfg: &NewtonSchulzConfig,
    transpose_experts: bool,
) -> Result<Batch3D, LinalgError> {
    let mut out = g.clone();
    for e in 0..g.experts() {
        let slice = g.slice(e);
        let slice = if transpose_experts {
            slice.transpose()
        } else {
            slice
        };
        let u = dual(kind, &slice, cfg)?;
        let u = if transpose_experts { u.transpose() } else { u };
        out.set_slice(e, &u);
    }
    Ok(out)
}
