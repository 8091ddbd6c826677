//! One-sided Jacobi SVD for small dense matrices.
//!
//! This is the crate's numerical ground truth: duality maps and power
//! iteration are validated against it. One-sided Jacobi orthogonalizes the
//! columns of the input by plane rotations; each sweep strictly decreases
//! the off-diagonal mass of `A^T A`, so the loop terminates.

use super::{l2_norm, Matrix2D};

/// Thin SVD `W = U diag(sigma) V^T` with `sigma` sorted descending.
/// `u` is `(m, k)` and `v` is `(n, k)` with `k = min(m, n)`; both have
/// orthonormal columns (zero singular directions are completed with an
/// orthonormal basis so the factors stay well formed for rank-deficient
/// inputs).
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix2D,
    pub sigma: Vec<f64>,
    pub v: Matrix2D,
}

impl Svd {
    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Matrix2D {
        let m = self.u.rows();
        let n = self.v.rows();
        let k = self.sigma.len();
        let mut out = Matrix2D::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += self.u.get(i, p) * self.sigma[p] * self.v.get(j, p);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// Polar factor `U V^T` restricted to singular values above `cutoff`,
    /// so zero singular directions map to zero.
    pub fn polar_factor(&self, cutoff: f64) -> Matrix2D {
        let m = self.u.rows();
        let n = self.v.rows();
        let mut out = Matrix2D::zeros(m, n);
        for p in 0..self.sigma.len() {
            if self.sigma[p] <= cutoff {
                continue;
            }
            for i in 0..m {
                let uip = self.u.get(i, p);
                if uip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.set(i, j, out.get(i, j) + uip * self.v.get(j, p));
                }
            }
        }
        out
    }
}

/// Computes the thin SVD of `w` by one-sided Jacobi.
///
/// Intended for test-scale matrices (the crate never calls it on anything
/// larger than a desk-model layer).
pub fn svd_oracle(w: &Matrix2D) -> Svd {
    if w.rows() >= w.cols() {
        jacobi_tall(w)
    } else {
        // Work on the transpose and swap factors.
        let svd = jacobi_tall(&w.transpose());
        Svd {
            u: svd.v,
            sigma: svd.sigma,
            v: svd.u,
        }
    }
}

/// One-sided Jacobi on a tall (m >= n) matrix: rotate column pairs of a
/// working copy `A` until all pairs are orthogonal; then sigma_j = |col_j|,
/// U = normalized columns, V = accumulated rotations.
fn jacobi_tall(w: &Matrix2D) -> Svd {
    let m = w.rows();
    let n = w.cols();
    debug_assert!(m >= n);
    let mut a = w.clone();
    let mut v = Matrix2D::identity(n);

    let eps = 1e-15;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    let x = a.get(i, p);
                    let y = a.get(i, q);
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if apq.abs() <= eps * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                // Closed-form Jacobi rotation zeroing the (p,q) correlation.
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let x = a.get(i, p);
                    let y = a.get(i, q);
                    a.set(i, p, c * x - s * y);
                    a.set(i, q, s * x + c * y);
                }
                for i in 0..n {
                    let x = v.get(i, p);
                    let y = v.get(i, q);
                    v.set(i, p, c * x - s * y);
                    v.set(i, q, s * x + c * y);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Extract singular values and left vectors.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| {
            let col: Vec<f64> = (0..m).map(|i| a.get(i, j)).collect();
            l2_norm(&col)
        })
        .collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let mut u = Matrix2D::zeros(m, n);
    let mut vv = Matrix2D::zeros(n, n);
    let mut sigma = vec![0.0; n];
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        for i in 0..n {
            vv.set(i, dst, v.get(i, src));
        }
        if norms[src] > 0.0 {
            for i in 0..m {
                u.set(i, dst, a.get(i, src) / norms[src]);
            }
        }
    }
    complete_zero_columns(&mut u, &sigma);

    Svd { u, sigma, v: vv }
}

/// Replaces columns belonging to zero singular values with vectors
/// orthonormal to the rest, keeping U's columns an orthonormal set.
fn complete_zero_columns(u: &mut Matrix2D, sigma: &[f64]) {
    let m = u.rows();
    let k = u.cols();
    let rank = sigma.iter().take_while(|&&s| s > 0.0).count();
    if rank == k {
        return;
    }
    let mut filled = rank;
    for basis in 0..m {
        if filled == k {
            break;
        }
        // Gram-Schmidt e_basis against the columns already in place.
        let mut cand = vec![0.0; m];
        cand[basis] = 1.0;
        for j in 0..filled {
            let dot: f64 = cand.iter().enumerate().map(|(i, c)| c * u.get(i, j)).sum();
            for (i, c) in cand.iter_mut().enumerate() {
                *c -= dot * u.get(i, j);
            }
        }
        let nrm = l2_norm(&cand);
        if nrm > 1e-8 {
            for (i, c) in cand.iter().enumerate() {
                u.set(i, filled, c / nrm);
            }
            filled += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn orthonormality_defect(m: &Matrix2D) -> f64 {
        // max |M^T M - I| entry
        let g = m.transpose().matmul(m);
        let mut worst = 0.0f64;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - want).abs());
            }
        }
        worst
    }

    #[test]
    fn diagonal_and_identity() {
        let d = Matrix2D::from_vec(2, 2, vec![3.0, 0.0, 0.0, 2.0]);
        let svd = svd_oracle(&d);
        assert!((svd.sigma[0] - 3.0).abs() < 1e-12);
        assert!((svd.sigma[1] - 2.0).abs() < 1e-12);

        let i5 = Matrix2D::identity(5);
        let svd = svd_oracle(&i5);
        for s in &svd.sigma {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        let mut rng = Rng::new(17);
        for &(m, n) in &[(6usize, 4usize), (4, 6), (8, 8), (1, 5), (5, 1)] {
            let w = Matrix2D::gaussian(m, n, &mut rng);
            let svd = svd_oracle(&w);
            let rec = svd.reconstruct();
            let denom = w.frobenius_norm().max(1.0);
            let resid = {
                let mut d = rec.clone();
                d.add_scaled(&w, -1.0);
                d.frobenius_norm() / denom
            };
            assert!(resid < 1e-10, "residual {resid} for {m}x{n}");
            assert!(orthonormality_defect(&svd.u) < 1e-10);
            assert!(orthonormality_defect(&svd.v) < 1e-10);
            // descending order
            for w in svd.sigma.windows(2) {
                assert!(w[0] >= w[1] - 1e-14);
            }
        }
    }

    #[test]
    fn rank_deficient_polar_keeps_null_directions() {
        let g = Matrix2D::from_vec(2, 2, vec![7.0, 0.0, 0.0, 0.0]);
        let svd = svd_oracle(&g);
        let p = svd.polar_factor(1e-12);
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(p.get(0, 1).abs() < 1e-12);
        assert!(p.get(1, 0).abs() < 1e-12);
        assert!(p.get(1, 1).abs() < 1e-12);
        // completion still orthonormal
        assert!(orthonormality_defect(&svd.u) < 1e-10);
    }
}
