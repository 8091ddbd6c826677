//! Weight initializers.
//!
//! Hidden linear layers get semi-orthogonal matrices whose nonzero singular
//! values all equal the requested gain; embedding-style layers get Gaussian
//! rows rescaled to an exact per-row RMS. Both are deterministic in the
//! supplied RNG. Initialization is off the hot path, so the semi-orthogonal
//! variant simply orthogonalizes a Gaussian draw through the SVD.

use super::{rms_vector_norm, svd_oracle, Matrix2D, Rng};

/// Gaussian draw orthogonalized so that every nonzero singular value equals
/// `gain`. With `gain = sqrt(d_out/d_in)` the result has unit RMS->RMS norm.
pub fn semi_orthogonal_init(d_out: usize, d_in: usize, gain: f64, rng: &mut Rng) -> Matrix2D {
    assert!(d_out >= 1 && d_in >= 1, "degenerate shape");
    let g = Matrix2D::gaussian(d_out, d_in, rng);
    let svd = svd_oracle(&g);
    // A Gaussian draw is full rank with probability 1; the cutoff only
    // guards against pathological underflow.
    let cutoff = svd.sigma[0] * 1e-12;
    svd.polar_factor(cutoff).scaled(gain)
}

/// Gaussian rows rescaled so every row has RMS norm exactly
/// `target_row_rms`. With target `1/d_in` the RMS->inf operator norm of the
/// result is 1; with target 1 each row is a unit-RMS token vector.
pub fn row_normalized_gaussian_init(
    d_out: usize,
    d_in: usize,
    target_row_rms: f64,
    rng: &mut Rng,
) -> Matrix2D {
    assert!(d_in >= 1, "rows need at least one column");
    let mut w = Matrix2D::gaussian(d_out, d_in, rng);
    for i in 0..d_out {
        let row = w.row_mut(i);
        let mut rms = rms_vector_norm(row).expect("d_in >= 1");
        while rms == 0.0 {
            // Probability-zero redraw; keeps the contract exact.
            for v in row.iter_mut() {
                *v = rng.normal();
            }
            rms = rms_vector_norm(row).expect("d_in >= 1");
        }
        let scale = target_row_rms / rms;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{spectral_norm, svd_oracle};

    #[test]
    fn square_orthogonal_unit_gain() {
        let mut rng = Rng::new(1);
        let w = semi_orthogonal_init(4, 4, 1.0, &mut rng);
        let svd = svd_oracle(&w);
        for s in &svd.sigma {
            assert!((s - 1.0).abs() < 1e-8, "sigma {s}");
        }
        assert!((spectral_norm(&w, 1e-10, 1000).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn tall_gain_two_has_unit_rms_to_rms_norm() {
        let mut rng = Rng::new(2);
        let w = semi_orthogonal_init(8, 2, 2.0, &mut rng);
        // sqrt(d_in/d_out) * sigma_max = sqrt(2/8) * 2 = 1
        let s = spectral_norm(&w, 1e-10, 1000).unwrap();
        let rms_to_rms = (2.0f64 / 8.0).sqrt() * s;
        assert!((rms_to_rms - 1.0).abs() < 1e-8);
        // gram check: W^T W = gain^2 I for tall matrices
        let g = w.transpose().matmul(&w);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 4.0 } else { 0.0 };
                assert!((g.get(i, j) - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn wide_spectral_norm_matches_gain() {
        let mut rng = Rng::new(3);
        let gain = (2.0f64 / 8.0).sqrt();
        let w = semi_orthogonal_init(2, 8, gain, &mut rng);
        let svd = svd_oracle(&w);
        assert!((svd.sigma[0] - 0.5).abs() < 1e-8, "sigma {}", svd.sigma[0]);
        // gram on the short side: W W^T = gain^2 I
        let g = w.matmul_transpose(&w);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { gain * gain } else { 0.0 };
                assert!((g.get(i, j) - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn row_init_hits_exact_row_rms_and_is_deterministic() {
        let mut rng = Rng::new(30);
        let w = row_normalized_gaussian_init(3, 4, 1.0, &mut rng);
        for i in 0..3 {
            let rms = rms_vector_norm(w.row(i)).unwrap();
            assert!((rms - 1.0).abs() < 1e-15);
        }
        let w1 = row_normalized_gaussian_init(5, 7, 0.25, &mut Rng::new(99));
        let w2 = row_normalized_gaussian_init(5, 7, 0.25, &mut Rng::new(99));
        assert_eq!(w1, w2);
    }
}
