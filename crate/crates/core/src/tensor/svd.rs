//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! One-sided Jacobi is slower than bidiagonalization-based methods but
//! computes small singular values to high relative accuracy, and the
//! matrices in the Koopman fit are small (encoded size by snapshot count).

use crate::error::{Error, Result};

use super::matrix::{Matrix, RMatrix, Scalar};

/// Singular values below `REL_TOL * s[0]` are treated as zero.
pub const REL_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 100;

/// Thin SVD `A = U diag(s) V^H` with all `min(rows, cols)` triplets.
#[derive(Debug, Clone)]
pub struct ThinSvd<T: Scalar> {
    pub u: Matrix<T>,
    pub s: Vec<f64>,
    pub v: Matrix<T>,
}

/// Truncated real SVD.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x r`, orthonormal columns.
    pub u: RMatrix,
    /// Descending, strictly positive.
    pub s: Vec<f64>,
    /// `cols x r`, orthonormal columns.
    pub v: RMatrix,
    pub effective_rank: usize,
}

impl SvdResult {
    pub fn reconstruct(&self) -> RMatrix {
        self.u
            .mul_columns(&self.s)
            .expect("column count matches")
            .matmul_unchecked(&self.v.transpose())
    }
}

/// Full thin SVD of any real or complex matrix.
pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<ThinSvd<T>> {
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        // A^H = U' S V'^H  =>  A = V' S U'^H
        let t = jacobi_tall(&a.adjoint())?;
        Ok(ThinSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

fn jacobi_tall<T: Scalar>(a: &Matrix<T>) -> Result<ThinSvd<T>> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = Matrix::<T>::identity(n);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = T::zero();
                for i in 0..m {
                    let ap = w[(i, p)];
                    let aq = w[(i, q)];
                    alpha += ap.abs_sqr();
                    beta += aq.abs_sqr();
                    gamma += ap.conj() * aq;
                }
                let g = gamma.abs();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;

                // Rotate column q by the phase of gamma so the pair's inner
                // product becomes real, then apply a real Jacobi rotation.
                let phase = gamma.conj().scale(1.0 / g);
                if T::KIND == super::ScalarKind::Complex {
                    for i in 0..m {
                        w[(i, q)] *= phase;
                    }
                    for i in 0..n {
                        v[(i, q)] *= phase;
                    }
                } else if phase.re() < 0.0 {
                    for i in 0..m {
                        w[(i, q)] = -w[(i, q)];
                    }
                    for i in 0..n {
                        v[(i, q)] = -v[(i, q)];
                    }
                }

                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let ap = w[(i, p)];
                    let aq = w[(i, q)];
                    w[(i, p)] = ap.scale(c) - aq.scale(s);
                    w[(i, q)] = ap.scale(s) + aq.scale(c);
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = vp.scale(c) - vq.scale(s);
                    v[(i, q)] = vp.scale(s) + vq.scale(c);
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure("Jacobi SVD"));
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| w[(i, j)].abs_sqr()).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let mut u = Matrix::<T>::zeros(m, n);
    let mut vs = Matrix::<T>::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        for i in 0..n {
            vs[(i, k)] = v[(i, j)];
        }
        if s[k] > 0.0 && s[k] > smax * f64::EPSILON {
            let inv = 1.0 / s[k];
            for i in 0..m {
                u[(i, k)] = w[(i, j)].scale(inv);
            }
        } else {
            complete_column(&mut u, k);
        }
    }
    Ok(ThinSvd { u, s, v: vs })
}

/// Fills column `k` with a unit vector orthogonal to columns `0..k`.
fn complete_column<T: Scalar>(u: &mut Matrix<T>, k: usize) {
    let m = u.rows();
    for e in 0..m {
        let mut cand = vec![T::zero(); m];
        cand[e] = T::one();
        for _ in 0..2 {
            for j in 0..k {
                let dot: T = (0..m).map(|i| u[(i, j)].conj() * cand[i]).sum();
                for (i, c) in cand.iter_mut().enumerate() {
                    *c -= u[(i, j)] * dot;
                }
            }
        }
        let norm = cand.iter().map(|x| x.abs_sqr()).sum::<f64>().sqrt();
        if norm > 0.5 {
            for (i, c) in cand.into_iter().enumerate() {
                u[(i, k)] = c.scale(1.0 / norm);
            }
            return;
        }
    }
}

/// Number of singular values above the relative cutoff.
pub fn numerical_rank(s: &[f64]) -> usize {
    let smax = s.first().copied().unwrap_or(0.0);
    if smax <= 0.0 {
        return 0;
    }
    s.iter().take_while(|&&x| x > REL_TOL * smax).count()
}

/// Top-`rank` singular triplets of a real matrix. Singular values below
/// `REL_TOL * s[0]` are dropped, which can make `effective_rank < rank`.
pub fn svd_truncated(a: &RMatrix, rank: usize) -> Result<SvdResult> {
    let full = a.rows().min(a.cols());
    if rank == 0 || rank > full {
        return Err(Error::RankTooLarge {
            requested: rank,
            available: full,
        });
    }
    let thin = svd(a)?;
    let r = rank.min(numerical_rank(&thin.s));
    let keep: Vec<usize> = (0..r).collect();
    Ok(SvdResult {
        u: thin.u.select_columns(&keep)?,
        s: thin.s[..r].to_vec(),
        v: thin.v.select_columns(&keep)?,
        effective_rank: r,
    })
}

/// Moore-Penrose pseudoinverse with the same relative cutoff as
/// [`svd_truncated`].
pub fn pinv<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let thin = svd(a)?;
    let r = numerical_rank(&thin.s);
    // A+ = V_r diag(1/s) U_r^H
    let mut out = Matrix::<T>::zeros(a.cols(), a.rows());
    for k in 0..r {
        let inv = 1.0 / thin.s[k];
        for i in 0..a.cols() {
            let vik = thin.v[(i, k)].scale(inv);
            for j in 0..a.rows() {
                out[(i, j)] += vik * thin.u[(j, k)].conj();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::CMatrix;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> RMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormality_error<T: Scalar>(q: &Matrix<T>) -> f64 {
        let g = q.adjoint().matmul(q).unwrap();
        g.sub(&Matrix::identity(q.cols())).unwrap().max_abs()
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let r = svd_truncated(&RMatrix::identity(2), 2).unwrap();
        assert_eq!(r.s, vec![1.0, 1.0]);
        let uvt = r.u.matmul(&r.v.transpose()).unwrap();
        assert!(uvt.sub(&RMatrix::identity(2)).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn diagonal_rank_one_truncation() {
        let a = RMatrix::diag(&[2.0, 1.0]);
        let r = svd_truncated(&a, 1).unwrap();
        assert_eq!(r.s, vec![2.0]);
        let rec = r.reconstruct();
        assert!(rec.sub(&RMatrix::diag(&[2.0, 0.0])).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn rank_too_large_is_rejected() {
        assert!(matches!(
            svd_truncated(&RMatrix::zeros(2, 3), 3),
            Err(Error::RankTooLarge { .. })
        ));
        assert!(svd_truncated(&RMatrix::zeros(2, 3), 0).is_err());
    }

    #[test]
    fn rank_deficient_input_reduces_effective_rank() {
        // Two identical columns.
        let a = RMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let r = svd_truncated(&a, 2).unwrap();
        assert_eq!(r.effective_rank, 1);
        assert_eq!(r.u.cols(), 1);
    }

    #[test]
    fn wide_and_tall_reconstruct() {
        for (rows, cols, seed) in [(5, 3, 1), (3, 5, 2), (4, 4, 3)] {
            let a = random(rows, cols, seed);
            let k = rows.min(cols);
            let r = svd_truncated(&a, k).unwrap();
            assert!(r.reconstruct().sub(&a).unwrap().frobenius_norm() < 1e-12);
            assert!(orthonormality_error(&r.u) < 1e-12);
            assert!(orthonormality_error(&r.v) < 1e-12);
            assert!(r.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn complex_svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = CMatrix::from_fn(4, 3, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let t = svd(&a).unwrap();
        let rec =
            t.u.mul_columns(
                &t.s.iter()
                    .map(|&x| Complex64::new(x, 0.0))
                    .collect::<Vec<_>>(),
            )
            .unwrap()
            .matmul(&t.v.adjoint())
            .unwrap();
        assert!(rec.sub(&a).unwrap().max_abs() < 1e-12);
        assert!(orthonormality_error(&t.u) < 1e-12);
    }

    #[test]
    fn pinv_examples() {
        assert!(
            pinv(&RMatrix::identity(3))
                .unwrap()
                .sub(&RMatrix::identity(3))
                .unwrap()
                .max_abs()
                < 1e-15
        );
        let p = pinv(&RMatrix::diag(&[2.0, 0.0])).unwrap();
        assert_eq!(p, RMatrix::diag(&[0.5, 0.0]));
    }

    #[test]
    fn zero_matrix_pinv_is_zero() {
        let p = pinv(&RMatrix::zeros(2, 3)).unwrap();
        assert_eq!(p, RMatrix::zeros(3, 2));
    }
}
