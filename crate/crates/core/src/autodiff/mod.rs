//! Tape-based reverse-mode differentiation over real and complex matrices.
//!
//! Every forward op appends a node to a [`Tape`]; [`Tape::backward`] walks
//! the nodes in exact reverse registration order. Besides the usual
//! arithmetic the tape differentiates through truncated SVD, nonsymmetric
//! eigendecomposition and the pseudoinverse, which is what makes the
//! SVD-fitted Koopman operator trainable end to end.
//!
//! Gradients of complex nodes follow the convention used for real-valued
//! losses: the stored gradient of `z` is `dL/dRe(z) + i dL/dIm(z)`. Real
//! leaves receive the real part of their complex adjoint.

mod backward;
pub mod gradcheck;
mod value;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, CMatrix, Matrix, RMatrix, C64};

pub use backward::Gradients;
pub use value::Value;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Cached full thin SVD for the backward pass.
#[derive(Debug)]
pub(crate) struct SvdCache {
    u: RMatrix,
    s: Vec<f64>,
    v: RMatrix,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Concat(Vec<Var>),
    Select(Var, Vec<usize>),
    Activation(Var, Activation),
    Mse(Var, Var),
    L1Mean(Var),
    SumSquares(Var),
    ToComplex(Var),
    RealPart(Var),
    MulColumns(Var, Var),
    Reciprocal(Var),
    Log(Var),
    ExpEvolve {
        omega: Var,
        coeffs: Var,
        indexes: Vec<f64>,
    },
    Svd {
        input: Var,
        s: Var,
        v: Var,
        cache: Box<SvdCache>,
    },
    Eig {
        input: Var,
        vectors: Var,
    },
    Pinv(Var),
    /// Secondary output of a multi-output op; its gradient is consumed by
    /// the op's primary node.
    Output,
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Value,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Outputs of [`Tape::svd_truncated`].
#[derive(Debug, Clone, Copy)]
pub struct SvdVars {
    pub u: Var,
    /// `r x 1` singular values.
    pub s: Var,
    pub v: Var,
    pub rank: usize,
}

/// Outputs of [`Tape::eig`].
#[derive(Debug, Clone, Copy)]
pub struct EigVars {
    /// `n x 1` complex eigenvalues.
    pub values: Var,
    /// `n x n` complex eigenvectors.
    pub vectors: Var,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: impl Into<Value>) -> Var {
        self.push(value.into(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: impl Into<Value>) -> Var {
        self.push(value.into(), Op::Leaf, false)
    }

    /// Same value, gradient flow blocked.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Value {
        &self.nodes[v.0].value
    }

    pub fn real(&self, v: Var) -> Result<&RMatrix> {
        self.value(v).as_real()
    }

    pub fn complex(&self, v: Var) -> Result<&CMatrix> {
        self.value(v).as_complex()
    }

    /// Value of a real `1 x 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let m = self.real(v)?;
        if m.shape() != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "expected a scalar, found {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(m[(0, 0)])
    }

    fn binary_same_kind(
        &mut self,
        a: Var,
        b: Var,
        real: impl Fn(&RMatrix, &RMatrix) -> Result<RMatrix>,
        complex: impl Fn(&CMatrix, &CMatrix) -> Result<CMatrix>,
        op: Op,
    ) -> Result<Var> {
        let value = match (self.value(a), self.value(b)) {
            (Value::Real(x), Value::Real(y)) => Value::Real(real(x, y)?),
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(complex(x, y)?),
            (x, y) => {
                return Err(Error::KindMismatch {
                    expected: x.kind().name(),
                    found: y.kind().name(),
                })
            }
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_kind(a, b, |x, y| x.add(y), |x, y| x.add(y), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_kind(a, b, |x, y| x.sub(y), |x, y| x.sub(y), Op::Sub(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_kind(
            a,
            b,
            |x, y| x.matmul(y),
            |x, y| x.matmul(y),
            Op::MatMul(a, b),
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = match self.value(a) {
            Value::Real(m) => Value::Real(m.scale(factor)),
            Value::Complex(m) => Value::Complex(m.scale(factor)),
        };
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Plain (non-conjugating) transpose.
    pub fn transpose(&mut self, a: Var) -> Var {
        let value = match self.value(a) {
            Value::Real(m) => Value::Real(m.transpose()),
            Value::Complex(m) => Value::Complex(m.transpose()),
        };
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Adds an `n x 1` bias to every column of an `n x m` real matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let x = self.real(a)?;
        let b = self.real(bias)?;
        if b.shape() != (x.rows(), 1) {
            return Err(Error::ShapeMismatch(format!(
                "bias {}x{} for {}x{} input",
                b.rows(),
                b.cols(),
                x.rows(),
                x.cols()
            )));
        }
        let out = RMatrix::from_fn(x.rows(), x.cols(), |r, c| x[(r, c)] + b[(r, 0)]);
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Value::Real(out), Op::AddBias(a, bias), rg))
    }

    pub fn concat_columns(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("concat of zero parts".into()))?;
        let value = match self.value(*first) {
            Value::Real(_) => {
                let ms = parts
                    .iter()
                    .map(|&p| self.real(p))
                    .collect::<Result<Vec<_>>>()?;
                Value::Real(Matrix::hcat(&ms)?)
            }
            Value::Complex(_) => {
                let ms = parts
                    .iter()
                    .map(|&p| self.complex(p))
                    .collect::<Result<Vec<_>>>()?;
                Value::Complex(Matrix::hcat(&ms)?)
            }
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn select_columns(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let value = match self.value(a) {
            Value::Real(m) => Value::Real(m.select_columns(idx)?),
            Value::Complex(m) => Value::Complex(m.select_columns(idx)?),
        };
        let rg = self.rg(a);
        Ok(self.push(value, Op::Select(a, idx.to_vec()), rg))
    }

    pub fn slice_columns(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let cols = self.value(a).shape().1;
        if start > end || end > cols {
            return Err(Error::ShapeMismatch(format!(
                "column range {start}..{end} out of range for {cols} columns"
            )));
        }
        let idx: Vec<usize> = (start..end).collect();
        self.select_columns(a, &idx)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let out = self.real(a)?.map(|x| kind.apply(x));
        let rg = self.rg(a);
        Ok(self.push(Value::Real(out), Op::Activation(a, kind), rg))
    }

    /// Mean of squared elementwise differences, as a `1 x 1` node.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let x = self.real(a)?;
        let y = self.real(b)?;
        let v = crate::metrics::mse(x, y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Value::Real(RMatrix::from_vec(1, 1, vec![v])?),
            Op::Mse(a, b),
            rg,
        ))
    }

    /// Mean absolute value.
    pub fn l1_mean(&mut self, a: Var) -> Result<Var> {
        let x = self.real(a)?;
        let n = x.len().max(1) as f64;
        let v = x.as_slice().iter().map(|v| v.abs()).sum::<f64>() / n;
        let rg = self.rg(a);
        Ok(self.push(
            Value::Real(RMatrix::from_vec(1, 1, vec![v])?),
            Op::L1Mean(a),
            rg,
        ))
    }

    /// Sum of squared magnitudes.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = match self.value(a) {
            Value::Real(m) => m.as_slice().iter().map(|x| x * x).sum::<f64>(),
            Value::Complex(m) => m.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>(),
        };
        let rg = self.rg(a);
        self.push(
            Value::Real(RMatrix::from_vec(1, 1, vec![v]).expect("1x1")),
            Op::SumSquares(a),
            rg,
        )
    }

    pub fn to_complex(&mut self, a: Var) -> Result<Var> {
        let out = self.real(a)?.to_complex();
        let rg = self.rg(a);
        Ok(self.push(Value::Complex(out), Op::ToComplex(a), rg))
    }

    pub fn real_part(&mut self, a: Var) -> Result<Var> {
        let out = self.complex(a)?.re();
        let rg = self.rg(a);
        Ok(self.push(Value::Real(out), Op::RealPart(a), rg))
    }

    /// `A diag(v)` for an `n x 1` vector `v` of the same kind as `A`.
    pub fn mul_columns(&mut self, a: Var, v: Var) -> Result<Var> {
        self.binary_same_kind(
            a,
            v,
            |x, y| x.mul_columns(y.as_slice()),
            |x, y| x.mul_columns(y.as_slice()),
            Op::MulColumns(a, v),
        )
    }

    /// Elementwise reciprocal.
    pub fn reciprocal(&mut self, a: Var) -> Var {
        let value = match self.value(a) {
            Value::Real(m) => Value::Real(m.map(|x| 1.0 / x)),
            Value::Complex(m) => Value::Complex(m.map(|z| z.inv())),
        };
        let rg = self.rg(a);
        self.push(value, Op::Reciprocal(a), rg)
    }

    /// Elementwise principal logarithm of a complex node.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.complex(a)?.map(|z| z.ln());
        let rg = self.rg(a);
        Ok(self.push(Value::Complex(out), Op::Log(a), rg))
    }

    /// Column `k` of the result is `diag(exp(omega * indexes[k])) coeffs`,
    /// for `r x 1` complex `omega` and `coeffs`.
    pub fn complex_exp_evolve(&mut self, omega: Var, coeffs: Var, indexes: &[f64]) -> Result<Var> {
        let w = self.complex(omega)?;
        let b = self.complex(coeffs)?;
        if w.cols() != 1 || b.shape() != w.shape() {
            return Err(Error::ShapeMismatch(format!(
                "evolve: omega {}x{}, coefficients {}x{}",
                w.rows(),
                w.cols(),
                b.rows(),
                b.cols()
            )));
        }
        let out = evolve_coefficients(w.as_slice(), b.as_slice(), indexes);
        let rg = self.rg(omega) || self.rg(coeffs);
        Ok(self.push(
            Value::Complex(out),
            Op::ExpEvolve {
                omega,
                coeffs,
                indexes: indexes.to_vec(),
            },
            rg,
        ))
    }

    /// Truncated SVD of a real node. The effective rank may fall below
    /// `rank` when trailing singular values are below the relative cutoff.
    pub fn svd_truncated(&mut self, a: Var, rank: usize) -> Result<SvdVars> {
        let x = self.real(a)?;
        let full = x.rows().min(x.cols());
        if rank == 0 || rank > full {
            return Err(Error::RankTooLarge {
                requested: rank,
                available: full,
            });
        }
        let thin = tensor::svd(x)?;
        let k = tensor::numerical_rank(&thin.s);
        let r = rank.min(k);
        let head: Vec<usize> = (0..r).collect();
        let keep: Vec<usize> = (0..k).collect();
        let u = thin.u.select_columns(&head)?;
        let v = thin.v.select_columns(&head)?;
        let s = RMatrix::column_vector(&thin.s[..r]);
        let cache = Box::new(SvdCache {
            u: thin.u.select_columns(&keep)?,
            s: thin.s[..k].to_vec(),
            v: thin.v.select_columns(&keep)?,
        });
        let rg = self.rg(a);
        let u_var = Var(self.nodes.len());
        let s_var = Var(u_var.0 + 1);
        let v_var = Var(u_var.0 + 2);
        self.push(
            Value::Real(u),
            Op::Svd {
                input: a,
                s: s_var,
                v: v_var,
                cache,
            },
            rg,
        );
        self.push(Value::Real(s), Op::Output, rg);
        self.push(Value::Real(v), Op::Output, rg);
        Ok(SvdVars {
            u: u_var,
            s: s_var,
            v: v_var,
            rank: r,
        })
    }

    /// Eigendecomposition of a square real or complex node.
    pub fn eig(&mut self, a: Var) -> Result<EigVars> {
        let res = match self.value(a) {
            Value::Real(m) => tensor::eig(m)?,
            Value::Complex(m) => tensor::eig(m)?,
        };
        let rg = self.rg(a);
        let values_var = Var(self.nodes.len());
        let vectors_var = Var(values_var.0 + 1);
        self.push(
            Value::Complex(CMatrix::column_vector(&res.values)),
            Op::Eig {
                input: a,
                vectors: vectors_var,
            },
            rg,
        );
        self.push(Value::Complex(res.vectors), Op::Output, rg);
        Ok(EigVars {
            values: values_var,
            vectors: vectors_var,
        })
    }

    /// Moore-Penrose pseudoinverse.
    pub fn pinv(&mut self, a: Var) -> Result<Var> {
        let value = match self.value(a) {
            Value::Real(m) => Value::Real(tensor::pinv(m)?),
            Value::Complex(m) => Value::Complex(tensor::pinv(m)?),
        };
        let rg = self.rg(a);
        Ok(self.push(value, Op::Pinv(a), rg))
    }
}

/// `out[j, k] = exp(omega[j] * indexes[k]) * coeffs[j]`.
pub fn evolve_coefficients(omega: &[C64], coeffs: &[C64], indexes: &[f64]) -> CMatrix {
    CMatrix::from_fn(omega.len(), indexes.len(), |j, k| {
        (omega[j] * indexes[k]).exp() * coeffs[j]
    })
}
