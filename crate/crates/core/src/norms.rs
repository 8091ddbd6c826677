//! The three induced operator norms assigned by the optimizer, plus a
//! brute-force induced-norm estimator for small matrices (test oracle).
//!
//! For `W` mapping `(R^{d_in}, |.|_alpha) -> (R^{d_out}, |.|_beta)`:
//!
//! * 1 -> RMS:    `max_j |col_j(W)|_RMS`
//! * RMS -> RMS:  `sqrt(d_in/d_out) * sigma_max(W)`
//! * RMS -> inf:  `max_i d_in * |row_i(W)|_RMS`

use crate::linalg::{
    l2_norm, rms_vector_norm, spectral_norm, svd_oracle, LinalgError, Matrix2D, Rng,
};
use serde::{Deserialize, Serialize};

/// Operator norm assignment for a parameter group. Input embeddings carry
/// `OneToRms`, interior linear maps `RmsToRms`, the output projection
/// `RmsToInf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    OneToRms,
    RmsToRms,
    RmsToInf,
}

impl NormKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormKind::OneToRms => "one-to-rms",
            NormKind::RmsToRms => "rms-to-rms",
            NormKind::RmsToInf => "rms-to-inf",
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `max_j |col_j(W)|_RMS`.
pub fn op_norm_one_to_rms(w: &Matrix2D) -> f64 {
    assert!(!w.is_empty(), "empty matrix");
    let d_out = w.rows() as f64;
    let mut best = 0.0f64;
    for j in 0..w.cols() {
        let mut ss = 0.0;
        for i in 0..w.rows() {
            let v = w.get(i, j);
            ss += v * v;
        }
        best = best.max((ss / d_out).sqrt());
    }
    best
}

/// `sqrt(d_in/d_out) * sigma_max(W)`; propagates power-iteration failures.
/// The generous iteration cap covers near-degenerate spectra (orthogonalized
/// gradients cluster all singular values around 1).
pub fn op_norm_rms_to_rms(w: &Matrix2D) -> Result<f64, LinalgError> {
    op_norm_rms_to_rms_with(w, 1e-9, 200_000)
}

pub fn op_norm_rms_to_rms_with(
    w: &Matrix2D,
    tol: f64,
    max_iter: usize,
) -> Result<f64, LinalgError> {
    let scale = (w.cols() as f64 / w.rows() as f64).sqrt();
    Ok(scale * spectral_norm(w, tol, max_iter)?)
}

/// `max_i d_in * |row_i(W)|_RMS`.
pub fn op_norm_rms_to_inf(w: &Matrix2D) -> f64 {
    assert!(!w.is_empty(), "empty matrix");
    let d_in = w.cols() as f64;
    let mut best = 0.0f64;
    for i in 0..w.rows() {
        best = best.max(rms_vector_norm(w.row(i)).expect("nonempty row"));
    }
    d_in * best
}

/// Computes the operator norm selected by `kind`.
pub fn op_norm(kind: NormKind, w: &Matrix2D) -> Result<f64, LinalgError> {
    match kind {
        NormKind::OneToRms => Ok(op_norm_one_to_rms(w)),
        NormKind::RmsToRms => op_norm_rms_to_rms(w),
        NormKind::RmsToInf => Ok(op_norm_rms_to_inf(w)),
    }
}

/// Vector norms available to the brute-force estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorNorm {
    L1,
    Rms,
    LInf,
}

fn vector_norm(kind: VectorNorm, x: &[f64]) -> f64 {
    match kind {
        VectorNorm::L1 => x.iter().map(|v| v.abs()).sum(),
        VectorNorm::Rms => rms_vector_norm(x).expect("nonempty"),
        VectorNorm::LInf => x.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}

/// Lower-bound estimate of `max |Wx|_beta / |x|_alpha` by probing.
///
/// Structured probes make the bound exact for the three norms of interest:
/// signed basis vectors are the extreme points of the l1 ball; the top right
/// singular vector maximizes the RMS->RMS ratio; and for RMS->inf the
/// maximizer for row `r` is `sqrt(d_in) * r / |r|_2`, achieving
/// `d_in * |r|_RMS` exactly. Random Gaussian probes are added on top.
/// Test oracle only; dims are expected to stay small.
pub fn induced_norm_bruteforce(
    w: &Matrix2D,
    alpha: VectorNorm,
    beta: VectorNorm,
    samples: usize,
) -> f64 {
    assert!(!w.is_empty(), "empty matrix");
    let d_in = w.cols();
    let mut best = 0.0f64;
    let mut probe = |x: &[f64]| {
        let denom = vector_norm(alpha, x);
        if denom == 0.0 {
            return;
        }
        let y = w.matvec(x);
        let num = vector_norm(beta, &y);
        let ratio = num / denom;
        if ratio > best {
            best = ratio;
        }
    };

    // Signed basis vectors (l1 extreme points).
    for j in 0..d_in {
        let mut x = vec![0.0; d_in];
        x[j] = 1.0;
        probe(&x);
        x[j] = -1.0;
        probe(&x);
    }
    // Top right singular vector.
    let svd = svd_oracle(w);
    let top: Vec<f64> = (0..d_in).map(|i| svd.v.get(i, 0)).collect();
    probe(&top);
    // Scaled rows (RMS->inf closed-form maximizers).
    for i in 0..w.rows() {
        let r = w.row(i);
        let n = l2_norm(r);
        if n > 0.0 {
            let x: Vec<f64> = r.iter().map(|v| v * (d_in as f64).sqrt() / n).collect();
            probe(&x);
        }
    }
    // Random probes.
    let mut rng = Rng::new(0x6e6f726d);
    for _ in 0..samples {
        let x: Vec<f64> = (0..d_in).map(|_| rng.normal()).collect();
        probe(&x);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_closed_forms() {
        for d in [1usize, 2, 4, 16] {
            let i = Matrix2D::identity(d);
            let df = d as f64;
            assert!((op_norm_one_to_rms(&i) - 1.0 / df.sqrt()).abs() < 1e-15);
            assert!((op_norm_rms_to_rms(&i).unwrap() - 1.0).abs() < 1e-12);
            assert!((op_norm_rms_to_inf(&i) - df.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn all_ones_closed_forms() {
        let w = Matrix2D::from_fn(3, 5, |_, _| 1.0);
        assert!((op_norm_one_to_rms(&w) - 1.0).abs() < 1e-15);
        // sqrt(5/3) * sqrt(15) = 5
        assert!((op_norm_rms_to_rms(&w).unwrap() - 5.0).abs() < 1e-9);
        assert!((op_norm_rms_to_inf(&w) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn one_to_rms_matches_basis_bruteforce() {
        let mut rng = Rng::new(21);
        for _ in 0..5 {
            let w = Matrix2D::gaussian(8, 8, &mut rng);
            let bf = induced_norm_bruteforce(&w, VectorNorm::L1, VectorNorm::Rms, 0);
            let direct = op_norm_one_to_rms(&w);
            assert!((bf - direct).abs() < 1e-9, "{bf} vs {direct}");
        }
    }

    #[test]
    fn rms_to_rms_matches_rayleigh_bruteforce() {
        let mut rng = Rng::new(22);
        for _ in 0..5 {
            let w = Matrix2D::gaussian(8, 8, &mut rng);
            let bf = induced_norm_bruteforce(&w, VectorNorm::Rms, VectorNorm::Rms, 20_000);
            let direct = op_norm_rms_to_rms(&w).unwrap();
            // Brute force is a lower bound; the singular-vector probe makes
            // it tight.
            assert!(bf <= direct + 1e-7);
            assert!((bf - direct).abs() < 1e-4, "{bf} vs {direct}");
        }
    }

    #[test]
    fn rms_to_inf_matches_dual_oracle() {
        let mut rng = Rng::new(23);
        for _ in 0..5 {
            let w = Matrix2D::gaussian(8, 8, &mut rng);
            let bf = induced_norm_bruteforce(&w, VectorNorm::Rms, VectorNorm::LInf, 10_000);
            let direct = op_norm_rms_to_inf(&w);
            assert!((bf - direct).abs() < 1e-9, "{bf} vs {direct}");
        }
    }

    #[test]
    fn bruteforce_identity_rms_to_inf() {
        let i4 = Matrix2D::identity(4);
        let bf = induced_norm_bruteforce(&i4, VectorNorm::Rms, VectorNorm::LInf, 10_000);
        assert!(bf >= 2.0 - 1e-6, "got {bf}");
        let d = Matrix2D::from_vec(2, 2, vec![3.0, 0.0, 0.0, 1.0]);
        let bf = induced_norm_bruteforce(&d, VectorNorm::Rms, VectorNorm::Rms, 10_000);
        assert!((bf - 3.0).abs() < 1e-9);
    }

    fn tight_norm(kind: NormKind, w: &Matrix2D) -> f64 {
        match kind {
            NormKind::RmsToRms => op_norm_rms_to_rms_with(w, 1e-14, 100_000).unwrap(),
            _ => op_norm(kind, w).unwrap(),
        }
    }

    #[test]
    fn homogeneity_and_triangle() {
        let mut rng = Rng::new(24);
        for _ in 0..100 {
            let a = Matrix2D::gaussian(5, 7, &mut rng);
            let b = Matrix2D::gaussian(5, 7, &mut rng);
            let c = rng.normal() * 3.0;
            for kind in [NormKind::OneToRms, NormKind::RmsToRms, NormKind::RmsToInf] {
                let na = tight_norm(kind, &a);
                let nb = tight_norm(kind, &b);
                if c != 0.0 {
                    let nca = tight_norm(kind, &a.scaled(c));
                    let want = c.abs() * na;
                    assert!(
                        (nca - want).abs() <= 1e-12 * want,
                        "{kind}: {nca} vs {want}"
                    );
                }
                let mut sum = a.clone();
                sum.add_scaled(&b, 1.0);
                let ns = tight_norm(kind, &sum);
                assert!(ns <= na + nb + 1e-8, "{kind}: {ns} > {na} + {nb}");
            }
        }
    }
}
