use crate::error::{Error, Result};
use crate::tensor::{self, phase_pivot, CMatrix, Matrix, RMatrix, Scalar, C64};

use super::{Op, SvdCache, Tape, Value, Var};

/// Relative separation below which SVD/eig adjoints are refused.
pub const SPECTRAL_GAP_TOL: f64 = 1e-6;

/// Result of [`Tape::backward`]: one gradient slot per tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Value>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Value> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a real node. Leaves that require a gradient always have
    /// one (zero when they did not influence the loss).
    pub fn real(&self, v: Var) -> Result<&RMatrix> {
        self.get(v)
            .ok_or_else(|| Error::ShapeMismatch(format!("no gradient recorded for node {}", v.0)))?
            .as_real()
    }
}

impl Tape {
    /// Reverse pass from a real `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        let is_scalar = matches!(lv, Value::Real(m) if m.shape() == (1, 1));
        if !is_scalar {
            let (r, c) = lv.shape();
            return Err(Error::NonScalarLoss(format!(
                "{} {r}x{c}",
                lv.kind().name()
            )));
        }

        let mut grads: Vec<Option<Value>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Value::Real(RMatrix::from_vec(1, 1, vec![1.0])?));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Output) {
                continue;
            }
            // Multi-output ops may still need to run when only a secondary
            // output received a gradient.
            let g = match (&grads[idx], &node.op) {
                (Some(g), _) => g.clone(),
                (None, Op::Svd { s, v, .. }) if grads[s.0].is_some() || grads[v.0].is_some() => {
                    node.value.zeros_like()
                }
                (None, Op::Eig { vectors, .. }) if grads[vectors.0].is_some() => {
                    node.value.zeros_like()
                }
                (None, _) => continue,
            };
            for (target, contribution) in self.node_backward(idx, &g, &grads)? {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.accumulate(&contribution),
                    slot @ None => {
                        *slot = Some(coerce_kind(contribution, &self.nodes[target.0].value))
                    }
                }
            }
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(node.value.zeros_like());
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(
        &self,
        idx: usize,
        g: &Value,
        grads: &[Option<Value>],
    ) -> Result<Vec<(Var, Value)>> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let out = match &node.op {
            Op::Leaf | Op::Output => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, negate(g))],
            Op::Scale(a, f) => vec![(*a, scale(g, *f))],
            Op::MatMul(a, b) => match (val(*a), val(*b), g) {
                (Value::Real(x), Value::Real(y), Value::Real(g)) => vec![
                    (*a, Value::Real(g.matmul(&y.transpose())?)),
                    (*b, Value::Real(x.transpose().matmul(g)?)),
                ],
                (Value::Complex(x), Value::Complex(y), Value::Complex(g)) => vec![
                    (*a, Value::Complex(g.matmul(&y.adjoint())?)),
                    (*b, Value::Complex(x.adjoint().matmul(g)?)),
                ],
                _ => return Err(kind_mix()),
            },
            Op::Transpose(a) => vec![(
                *a,
                match g {
                    Value::Real(m) => Value::Real(m.transpose()),
                    Value::Complex(m) => Value::Complex(m.transpose()),
                },
            )],
            Op::AddBias(a, bias) => {
                let g = g.as_real()?;
                let gb = RMatrix::from_fn(g.rows(), 1, |r, _| g.row(r).iter().sum());
                vec![(*a, Value::Real(g.clone())), (*bias, Value::Real(gb))]
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let cols = val(p).shape().1;
                    let piece = match g {
                        Value::Real(m) => Value::Real(m.slice_columns(offset, offset + cols)?),
                        Value::Complex(m) => {
                            Value::Complex(m.slice_columns(offset, offset + cols)?)
                        }
                    };
                    out.push((p, piece));
                    offset += cols;
                }
                out
            }
            Op::Select(a, idx) => {
                let ga = match (val(*a), g) {
                    (Value::Real(x), Value::Real(g)) => Value::Real(scatter(x.shape(), g, idx)),
                    (Value::Complex(x), Value::Complex(g)) => {
                        Value::Complex(scatter(x.shape(), g, idx))
                    }
                    _ => return Err(kind_mix()),
                };
                vec![(*a, ga)]
            }
            Op::Activation(a, kind) => {
                let x = val(*a).as_real()?;
                let y = node.value.as_real()?;
                let g = g.as_real()?;
                let ga = RMatrix::from_fn(x.rows(), x.cols(), |r, c| {
                    g[(r, c)] * kind.derivative(x[(r, c)], y[(r, c)])
                });
                vec![(*a, Value::Real(ga))]
            }
            Op::Mse(a, b) => {
                let s = g.as_real()?[(0, 0)];
                let x = val(*a).as_real()?;
                let y = val(*b).as_real()?;
                let n = x.len().max(1) as f64;
                let ga = x.sub(y)?.scale(2.0 * s / n);
                vec![(*b, Value::Real(ga.scale(-1.0))), (*a, Value::Real(ga))]
            }
            Op::L1Mean(a) => {
                let s = g.as_real()?[(0, 0)];
                let x = val(*a).as_real()?;
                let n = x.len().max(1) as f64;
                let ga = x.map(|v| {
                    if v > 0.0 {
                        s / n
                    } else if v < 0.0 {
                        -s / n
                    } else {
                        0.0
                    }
                });
                vec![(*a, Value::Real(ga))]
            }
            Op::SumSquares(a) => {
                let s = g.as_real()?[(0, 0)];
                vec![(*a, scale(val(*a), 2.0 * s))]
            }
            Op::ToComplex(a) => vec![(*a, Value::Real(g.as_complex()?.re()))],
            Op::RealPart(a) => vec![(*a, Value::Complex(g.as_real()?.to_complex()))],
            Op::MulColumns(a, v) => match (val(*a), val(*v), g) {
                (Value::Real(x), Value::Real(d), Value::Real(g)) => {
                    let (ga, gd) = mul_columns_backward(x, d, g)?;
                    vec![(*a, Value::Real(ga)), (*v, Value::Real(gd))]
                }
                (Value::Complex(x), Value::Complex(d), Value::Complex(g)) => {
                    let (ga, gd) = mul_columns_backward(x, d, g)?;
                    vec![(*a, Value::Complex(ga)), (*v, Value::Complex(gd))]
                }
                _ => return Err(kind_mix()),
            },
            Op::Reciprocal(a) => {
                let ga = match (val(*a), g) {
                    (Value::Real(x), Value::Real(g)) => {
                        Value::Real(x.zip_map(g, |x, g| -g / (x * x))?)
                    }
                    (Value::Complex(x), Value::Complex(g)) => {
                        Value::Complex(x.zip_map(g, |x, g| -(x * x).inv().conj() * g)?)
                    }
                    _ => return Err(kind_mix()),
                };
                vec![(*a, ga)]
            }
            Op::Log(a) => {
                let x = val(*a).as_complex()?;
                let g = g.as_complex()?;
                vec![(*a, Value::Complex(x.zip_map(g, |x, g| g / x.conj())?))]
            }
            Op::ExpEvolve {
                omega,
                coeffs,
                indexes,
            } => {
                let w = val(*omega).as_complex()?;
                let c = node.value.as_complex()?;
                let g = g.as_complex()?;
                let r = w.rows();
                let mut gw = CMatrix::zeros(r, 1);
                let mut gb = CMatrix::zeros(r, 1);
                for j in 0..r {
                    for (k, &t) in indexes.iter().enumerate() {
                        let e = (w[(j, 0)] * t).exp();
                        gw[(j, 0)] += (c[(j, k)] * t).conj() * g[(j, k)];
                        gb[(j, 0)] += e.conj() * g[(j, k)];
                    }
                }
                vec![(*omega, Value::Complex(gw)), (*coeffs, Value::Complex(gb))]
            }
            Op::Svd { input, s, v, cache } => {
                let gu = g.as_real()?;
                let gs = grads[s.0].as_ref().map(Value::as_real).transpose()?;
                let gv = grads[v.0].as_ref().map(Value::as_real).transpose()?;
                let a = val(*input).as_real()?;
                vec![(*input, Value::Real(svd_backward(a, cache, gu, gs, gv)?))]
            }
            Op::Eig { input, vectors } => {
                let gl = g.as_complex()?;
                let w = val(*vectors).as_complex()?;
                let lambda = node.value.as_complex()?;
                let gw = grads[vectors.0]
                    .as_ref()
                    .map(Value::as_complex)
                    .transpose()?;
                let ga = eig_backward(lambda.as_slice(), w, gl.as_slice(), gw)?;
                let ga = match val(*input) {
                    Value::Real(_) => Value::Real(ga.re()),
                    Value::Complex(_) => Value::Complex(ga),
                };
                vec![(*input, ga)]
            }
            Op::Pinv(a) => {
                let ga = match (val(*a), &node.value, g) {
                    (Value::Real(x), Value::Real(p), Value::Real(g)) => {
                        Value::Real(pinv_backward(x, p, g)?)
                    }
                    (Value::Complex(x), Value::Complex(p), Value::Complex(g)) => {
                        Value::Complex(pinv_backward(x, p, g)?)
                    }
                    _ => return Err(kind_mix()),
                };
                vec![(*a, ga)]
            }
        };
        Ok(out)
    }
}

fn kind_mix() -> Error {
    Error::KindMismatch {
        expected: "matching scalar kinds",
        found: "mixed real and complex operands",
    }
}

fn coerce_kind(g: Value, like: &Value) -> Value {
    match (g, like) {
        (Value::Complex(m), Value::Real(_)) => Value::Real(m.re()),
        (Value::Real(m), Value::Complex(_)) => Value::Complex(m.to_complex()),
        (g, _) => g,
    }
}

fn negate(g: &Value) -> Value {
    scale(g, -1.0)
}

fn scale(g: &Value, f: f64) -> Value {
    match g {
        Value::Real(m) => Value::Real(m.scale(f)),
        Value::Complex(m) => Value::Complex(m.scale(f)),
    }
}

fn scatter<T: Scalar>(shape: (usize, usize), g: &Matrix<T>, idx: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(shape.0, shape.1);
    for (k, &c) in idx.iter().enumerate() {
        for r in 0..shape.0 {
            out[(r, c)] += g[(r, k)];
        }
    }
    out
}

fn mul_columns_backward<T: Scalar>(
    x: &Matrix<T>,
    d: &Matrix<T>,
    g: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let dconj: Vec<T> = d.as_slice().iter().map(|v| v.conj()).collect();
    let ga = g.mul_columns(&dconj)?;
    let gd = Matrix::from_fn(d.rows(), d.cols(), |j, _| {
        (0..x.rows()).map(|i| x[(i, j)].conj() * g[(i, j)]).sum()
    });
    Ok((ga, gd))
}

fn check_separated(values: &[(f64, f64)], active: &[bool], scale: f64) -> Result<()> {
    // values: points in the plane (real, imaginary); only pairs touching an
    // active index are checked.
    let tol = SPECTRAL_GAP_TOL * scale;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            if !(active[i] || active[j]) {
                continue;
            }
            let d =
                ((values[i].0 - values[j].0).powi(2) + (values[i].1 - values[j].1).powi(2)).sqrt();
            if d <= tol {
                return Err(Error::DegenerateSpectrum(
                    (values[i].0.powi(2) + values[i].1.powi(2)).sqrt(),
                    (values[j].0.powi(2) + values[j].1.powi(2)).sqrt(),
                ));
            }
        }
    }
    Ok(())
}

/// Adjoint of the thin SVD restricted to its numerically nonzero part,
/// with discarded triplets carrying zero gradient.
fn svd_backward(
    a: &RMatrix,
    cache: &SvdCache,
    gu: &RMatrix,
    gs: Option<&RMatrix>,
    gv: Option<&RMatrix>,
) -> Result<RMatrix> {
    let (m, n) = a.shape();
    let k = cache.s.len();
    let r = gu.cols();
    let u = &cache.u;
    let v = &cache.v;
    let s = &cache.s;

    // Pad the retained gradients to the cached k triplets.
    let mut gu_full = RMatrix::zeros(m, k);
    let mut gv_full = RMatrix::zeros(n, k);
    let mut gs_full = vec![0.0; k];
    for j in 0..r {
        for i in 0..m {
            gu_full[(i, j)] = gu[(i, j)];
        }
        if let Some(gv) = gv {
            for i in 0..n {
                gv_full[(i, j)] = gv[(i, j)];
            }
        }
        if let Some(gs) = gs {
            gs_full[j] = gs[(j, 0)];
        }
    }

    let vectors_active = !gu.as_slice().iter().all(|&x| x == 0.0)
        || gv.is_some_and(|g| !g.as_slice().iter().all(|&x| x == 0.0));
    if vectors_active {
        let pts: Vec<(f64, f64)> = s.iter().map(|&x| (x, 0.0)).collect();
        let active: Vec<bool> = (0..k).map(|j| j < r).collect();
        check_separated(&pts, &active, s.first().copied().unwrap_or(1.0))?;
    }

    let f = RMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            let d = s[j] * s[j] - s[i] * s[i];
            if d == 0.0 {
                0.0
            } else {
                1.0 / d
            }
        }
    });
    let ut_gu = u.transpose().matmul(&gu_full)?;
    let vt_gv = v.transpose().matmul(&gv_full)?;
    let j_mat = f.hadamard(&ut_gu.sub(&ut_gu.transpose())?)?;
    let k_mat = f.hadamard(&vt_gv.sub(&vt_gv.transpose())?)?;

    // Inner = J S + diag(gS) + S K
    let mut inner = j_mat.mul_columns(s)?;
    let s_k = RMatrix::from_fn(k, k, |i, j| s[i] * k_mat[(i, j)]);
    inner.add_assign(&s_k);
    for i in 0..k {
        inner[(i, i)] += gs_full[i];
    }
    let mut ga = u.matmul(&inner)?.matmul(&v.transpose())?;

    let s_inv: Vec<f64> = s.iter().map(|&x| 1.0 / x).collect();
    // (I - U U^T) gU S^-1 V^T
    let proj_u = gu_full.sub(&u.matmul(&ut_gu)?)?;
    ga.add_assign(&proj_u.mul_columns(&s_inv)?.matmul(&v.transpose())?);
    // U S^-1 gV^T (I - V V^T)
    let proj_v = gv_full.sub(&v.matmul(&vt_gv)?)?;
    ga.add_assign(&u.mul_columns(&s_inv)?.matmul(&proj_v.transpose())?);
    Ok(ga)
}

/// Adjoint of the nonsymmetric eigendecomposition with unit-norm,
/// phase-fixed eigenvectors.
fn eig_backward(lambda: &[C64], w: &CMatrix, gl: &[C64], gw: Option<&CMatrix>) -> Result<CMatrix> {
    let n = lambda.len();
    let zero = C64::new(0.0, 0.0);
    let mut gbar = CMatrix::zeros(n, n);

    if let Some(gw) = gw.filter(|g| !g.as_slice().iter().all(|z| *z == zero)) {
        let scale = lambda.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let pts: Vec<(f64, f64)> = lambda.iter().map(|z| (z.re, z.im)).collect();
        check_separated(&pts, &vec![true; n], scale.max(f64::MIN_POSITIVE))?;

        // Pull the gradient back through the normalization v -> v conj(v_p) / (|v_p| |v|),
        // evaluated at an already normalized column.
        let mut graw = gw.clone();
        for k in 0..n {
            let p = phase_pivot(w, k);
            let a = w[(p, k)].re;
            let ghv: C64 = (0..n).map(|i| gw[(i, k)].conj() * w[(i, k)]).sum();
            for i in 0..n {
                graw[(i, k)] -= w[(i, k)] * ghv.re;
            }
            graw[(p, k)] += C64::new(0.0, ghv.im / a);
        }
        let vh_g = w.adjoint().matmul(&graw)?;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    gbar[(i, j)] = vh_g[(i, j)] / (lambda[j].conj() - lambda[i].conj());
                }
            }
        }
    }
    for i in 0..n {
        gbar[(i, i)] = gl[i];
    }
    // gA = W^-H Gbar W^H
    let wh = w.adjoint();
    tensor::solve(&wh, &gbar.matmul(&wh)?)
}

/// Adjoint of the Moore-Penrose pseudoinverse (constant-rank case).
fn pinv_backward<T: Scalar>(a: &Matrix<T>, p: &Matrix<T>, g: &Matrix<T>) -> Result<Matrix<T>> {
    let ph = p.adjoint();
    let gh = g.adjoint();
    let (m, n) = a.shape();
    let term1 = ph.matmul(g)?.matmul(&ph)?.scale(-1.0);
    let left = Matrix::<T>::identity(m).sub(&a.matmul(p)?)?;
    let term2 = left.matmul(&gh)?.matmul(&p.matmul(&ph)?)?;
    let right = Matrix::<T>::identity(n).sub(&p.matmul(a)?)?;
    let term3 = ph.matmul(p)?.matmul(&gh)?.matmul(&right)?;
    term1.add(&term2)?.add(&term3)
}
