//! Nonsymmetric eigendecomposition: Householder reduction to Hessenberg
//! form, shifted complex QR to Schur form, then back-substitution for the
//! eigenvectors of the triangular factor.

use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::matrix::{CMatrix, Matrix, Scalar, C64};
use super::svd::svd;

/// Eigenvector matrices with a larger 2-norm condition number are rejected.
pub const MAX_EIGVEC_CONDITION: f64 = 1e12;

/// Magnitudes closer than this (relatively) are ordered by angle instead.
const MAGNITUDE_TIE: f64 = 1e-10;

/// Components below this magnitude are skipped when fixing eigenvector phase.
pub(crate) const PHASE_PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EigResult {
    /// Sorted by magnitude descending, ties by angle ascending in (-pi, pi].
    pub values: Vec<C64>,
    /// Unit-norm columns; the first component above `PHASE_PIVOT_TOL` is
    /// real and positive.
    pub vectors: CMatrix,
}

/// Angle in (-pi, pi].
pub fn principal_angle(z: C64) -> f64 {
    let a = z.arg();
    if a <= -PI {
        PI
    } else {
        a
    }
}

pub fn eig<T: Scalar>(a: &Matrix<T>) -> Result<EigResult> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "eig needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if n == 0 {
        return Ok(EigResult {
            values: Vec::new(),
            vectors: CMatrix::zeros(0, 0),
        });
    }
    let (mut t, mut z) = hessenberg(&a.to_complex());
    schur_qr(&mut t, &mut z)?;
    let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let y = triangular_eigenvectors(&t);
    let mut vectors = z.matmul_unchecked(&y);
    for k in 0..n {
        normalize_column(&mut vectors, k);
    }

    let order = spectral_order(&values);
    let values: Vec<C64> = order.iter().map(|&i| values[i]).collect();
    let vectors = vectors.select_columns(&order)?;

    let sv = svd(&vectors)?.s;
    let smin = *sv.last().expect("n > 0");
    let cond = if smin > 0.0 {
        sv[0] / smin
    } else {
        f64::INFINITY
    };
    if !(cond <= MAX_EIGVEC_CONDITION) {
        return Err(Error::DefectiveMatrix(cond));
    }
    Ok(EigResult { values, vectors })
}

/// Deterministic ordering: magnitude descending, near-equal magnitudes by
/// angle ascending.
pub fn spectral_order(values: &[C64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .norm()
            .total_cmp(&values[i].norm())
            .then(i.cmp(&j))
    });
    let mut out = Vec::with_capacity(order.len());
    let mut start = 0;
    while start < order.len() {
        let lead = values[order[start]].norm();
        let mut end = start + 1;
        while end < order.len()
            && lead - values[order[end]].norm() <= MAGNITUDE_TIE * lead.max(f64::MIN_POSITIVE)
        {
            end += 1;
        }
        let mut group = order[start..end].to_vec();
        group.sort_by(|&i, &j| {
            principal_angle(values[i])
                .total_cmp(&principal_angle(values[j]))
                .then(i.cmp(&j))
        });
        out.extend(group);
        start = end;
    }
    out
}

/// Index of the component used to fix the phase of a unit vector.
pub(crate) fn phase_pivot(v: &CMatrix, col: usize) -> usize {
    (0..v.rows())
        .find(|&i| v[(i, col)].norm() > PHASE_PIVOT_TOL)
        .unwrap_or(0)
}

/// Scales column `col` to unit 2-norm with its phase pivot real positive.
pub(crate) fn normalize_column(v: &mut CMatrix, col: usize) {
    let norm = (0..v.rows())
        .map(|i| v[(i, col)].norm_sqr())
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return;
    }
    for i in 0..v.rows() {
        v[(i, col)] /= norm;
    }
    let p = phase_pivot(v, col);
    let pivot = v[(p, col)];
    let rot = pivot.conj() / pivot.norm();
    for i in 0..v.rows() {
        v[(i, col)] *= rot;
    }
    v[(p, col)] = C64::new(v[(p, col)].norm(), 0.0);
}

/// Returns `(H, Q)` with `A = Q H Q^H`, `H` upper Hessenberg.
fn hessenberg(a: &CMatrix) -> (CMatrix, CMatrix) {
    let n = a.rows();
    let mut h = a.clone();
    let mut q = CMatrix::identity(n);
    for k in 0..n.saturating_sub(2) {
        let xnorm = (k + 1..n).map(|i| h[(i, k)].norm_sqr()).sum::<f64>().sqrt();
        if xnorm == 0.0 {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let phase = if x0.norm() > 0.0 {
            x0 / x0.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        let alpha = -phase * xnorm;
        let mut v: Vec<C64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        for z in &mut v {
            *z /= vnorm;
        }
        // H <- P H with P = I - 2 v v^H acting on rows k+1..n.
        for c in 0..n {
            let dot: C64 = v
                .iter()
                .enumerate()
                .map(|(i, vi)| vi.conj() * h[(k + 1 + i, c)])
                .sum();
            for (i, vi) in v.iter().enumerate() {
                h[(k + 1 + i, c)] -= *vi * dot * 2.0;
            }
        }
        // H <- H P, Q <- Q P on columns k+1..n.
        for m in [&mut h, &mut q] {
            for r in 0..n {
                let dot: C64 = v
                    .iter()
                    .enumerate()
                    .map(|(i, vi)| m[(r, k + 1 + i)] * *vi)
                    .sum();
                for (i, vi) in v.iter().enumerate() {
                    m[(r, k + 1 + i)] -= dot * vi.conj() * 2.0;
                }
            }
        }
        for i in k + 2..n {
            h[(i, k)] = C64::new(0.0, 0.0);
        }
    }
    (h, q)
}

struct Givens {
    c: f64,
    s: C64,
}

impl Givens {
    /// Rotation `G` with `G [x; y] = [r; 0]`.
    fn zeroing(x: C64, y: C64) -> Self {
        let norm = (x.norm_sqr() + y.norm_sqr()).sqrt();
        if norm == 0.0 {
            return Givens {
                c: 1.0,
                s: C64::new(0.0, 0.0),
            };
        }
        if x.norm() == 0.0 {
            return Givens {
                c: 0.0,
                s: C64::new(1.0, 0.0),
            };
        }
        let alpha = x / x.norm();
        Givens {
            c: x.norm() / norm,
            s: alpha * y.conj() / norm,
        }
    }

    fn apply_rows(&self, m: &mut CMatrix, k: usize, cols: std::ops::Range<usize>) {
        for j in cols {
            let u = m[(k, j)];
            let v = m[(k + 1, j)];
            m[(k, j)] = u * self.c + self.s * v;
            m[(k + 1, j)] = -self.s.conj() * u + v * self.c;
        }
    }

    /// `M <- M G^H` on columns k, k+1.
    fn apply_cols(&self, m: &mut CMatrix, k: usize, rows: std::ops::Range<usize>) {
        for i in rows {
            let u = m[(i, k)];
            let v = m[(i, k + 1)];
            m[(i, k)] = u * self.c + v * self.s.conj();
            m[(i, k + 1)] = -u * self.s + v * self.c;
        }
    }
}

/// Reduces Hessenberg `h` to upper triangular Schur form in place,
/// accumulating the unitary factor into `z`.
fn schur_qr(h: &mut CMatrix, z: &mut CMatrix) -> Result<()> {
    let n = h.rows();
    let max_iter = 100 * n.max(1);
    let mut hi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    while hi > 0 {
        let mut lo = hi;
        while lo > 0 {
            let scale = h[(lo - 1, lo - 1)].norm() + h[(lo, lo)].norm();
            let sub = h[(lo, lo - 1)].norm();
            if sub <= f64::EPSILON * scale || sub < f64::MIN_POSITIVE {
                h[(lo, lo - 1)] = C64::new(0.0, 0.0);
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > max_iter * n.max(1) {
            return Err(Error::ConvergenceFailure("Schur QR iteration"));
        }

        let a = h[(hi - 1, hi - 1)];
        let b = h[(hi - 1, hi)];
        let c = h[(hi, hi - 1)];
        let d = h[(hi, hi)];
        let mu = if iter % 11 == 10 {
            // Exceptional shift breaks cycles.
            d + C64::new(c.norm() * 0.75, c.norm() * 0.3)
        } else {
            let half = (a - d) * 0.5;
            let disc = (half * half + b * c).sqrt();
            let m1 = (a + d) * 0.5 + disc;
            let m2 = (a + d) * 0.5 - disc;
            if (m1 - d).norm() <= (m2 - d).norm() {
                m1
            } else {
                m2
            }
        };

        for i in lo..=hi {
            h[(i, i)] -= mu;
        }
        let mut rotations = Vec::with_capacity(hi - lo);
        for k in lo..hi {
            let g = Givens::zeroing(h[(k, k)], h[(k + 1, k)]);
            g.apply_rows(h, k, k..n);
            h[(k + 1, k)] = C64::new(0.0, 0.0);
            rotations.push(g);
        }
        for (offset, g) in rotations.iter().enumerate() {
            let k = lo + offset;
            g.apply_cols(h, k, 0..(k + 2).min(hi + 1));
            g.apply_cols(z, k, 0..n);
        }
        for i in lo..=hi {
            h[(i, i)] += mu;
        }
    }
    for i in 1..n {
        for j in 0..i {
            h[(i, j)] = C64::new(0.0, 0.0);
        }
    }
    Ok(())
}

/// Eigenvectors of an upper triangular matrix, one per column.
fn triangular_eigenvectors(t: &CMatrix) -> CMatrix {
    let n = t.rows();
    let tnorm = t.frobenius_norm().max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;
    let mut y = CMatrix::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        y[(k, k)] = C64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for l in j + 1..=k {
                acc += t[(j, l)] * y[(l, k)];
            }
            let mut denom = t[(j, j)] - lambda;
            if denom.norm() < small {
                denom = C64::new(small, 0.0);
            }
            y[(j, k)] = -acc / denom;
        }
    }
    y
}

/// Elementwise `exp(omega * i)`.
pub fn matexp_eigs(omega: &[C64], i: f64) -> Vec<C64> {
    omega.iter().map(|w| (w * i).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual(a: &CMatrix, r: &EigResult) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..a.rows() {
            let w = CMatrix::column_vector(&r.vectors.column(k));
            let aw = a.matmul(&w).unwrap();
            let lw = w.scale_by(r.values[k]);
            worst = worst.max(aw.sub(&lw).unwrap().frobenius_norm());
        }
        worst
    }

    #[test]
    fn diagonal_values_in_order() {
        let r = eig(&RMatrix::diag(&[0.8, 0.9])).unwrap();
        assert_eq!(r.values, vec![C64::new(0.9, 0.0), C64::new(0.8, 0.0)]);
    }

    #[test]
    fn rotation_generator_has_imaginary_pair() {
        let a = RMatrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let r = eig(&a).unwrap();
        assert!((r.values[0] - C64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((r.values[1] - C64::new(0.0, 1.0)).norm() < 1e-12);
        assert!(residual(&a.to_complex(), &r) < 1e-12);
    }

    #[test]
    fn random_matrices_satisfy_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..8 {
            let a = RMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let r = eig(&a).unwrap();
            let ac = a.to_complex();
            assert!(residual(&ac, &r) <= 1e-8 * a.frobenius_norm());
            for k in 0..n {
                let p = phase_pivot(&r.vectors, k);
                assert_eq!(r.vectors[(p, k)].im, 0.0);
                assert!(r.vectors[(p, k)].re > 0.0);
            }
        }
    }

    #[test]
    fn complex_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = CMatrix::from_fn(5, 5, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let r = eig(&a).unwrap();
        assert!(residual(&a, &r) <= 1e-8 * a.frobenius_norm());
    }

    #[test]
    fn jordan_block_is_defective() {
        let a = RMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(eig(&a), Err(Error::DefectiveMatrix(_))));
    }

    #[test]
    fn identity_is_not_defective() {
        let r = eig(&RMatrix::identity(3)).unwrap();
        assert!(r.values.iter().all(|v| (v - 1.0).norm() < 1e-15));
    }

    #[test]
    fn ordering_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = RMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let r1 = eig(&a).unwrap();
        let r2 = eig(&a).unwrap();
        assert_eq!(r1.values, r2.values);
        assert_eq!(r1.vectors, r2.vectors);
    }

    #[test]
    fn spectral_order_breaks_ties_by_angle() {
        let v = [
            C64::new(0.0, 1.0),
            C64::new(2.0, 0.0),
            C64::new(0.0, -1.0),
            C64::new(-1.0, 0.0),
        ];
        assert_eq!(spectral_order(&v), vec![1, 2, 0, 3]);
    }

    #[test]
    fn matexp_examples() {
        let two = matexp_eigs(&[C64::new(4f64.ln(), 0.0)], 0.5);
        assert!((two[0] - 2.0).norm() < 1e-15);
        let ones = matexp_eigs(&[C64::new(0.3, -2.0), C64::new(-1.0, 5.0)], 0.0);
        assert!(ones.iter().all(|z| *z == C64::new(1.0, 0.0)));
        let euler = matexp_eigs(&[C64::new(0.0, PI)], 1.0);
        assert!((euler[0] + 1.0).norm() < 1e-12);
    }
}
