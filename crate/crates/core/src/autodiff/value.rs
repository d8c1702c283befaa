use crate::error::{Error, Result};
use crate::tensor::{CMatrix, RMatrix, ScalarKind};

/// A node value: a real or complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(RMatrix),
    Complex(CMatrix),
}

impl Value {
    pub fn kind(&self) -> ScalarKind {
        match self {
            Value::Real(_) => ScalarKind::Real,
            Value::Complex(_) => ScalarKind::Complex,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Value::Real(m) => m.shape(),
            Value::Complex(m) => m.shape(),
        }
    }

    pub fn as_real(&self) -> Result<&RMatrix> {
        match self {
            Value::Real(m) => Ok(m),
            Value::Complex(_) => Err(Error::KindMismatch {
                expected: ScalarKind::Real.name(),
                found: ScalarKind::Complex.name(),
            }),
        }
    }

    pub fn as_complex(&self) -> Result<&CMatrix> {
        match self {
            Value::Complex(m) => Ok(m),
            Value::Real(_) => Err(Error::KindMismatch {
                expected: ScalarKind::Complex.name(),
                found: ScalarKind::Real.name(),
            }),
        }
    }

    pub(crate) fn zeros_like(&self) -> Value {
        let (r, c) = self.shape();
        match self {
            Value::Real(_) => Value::Real(RMatrix::zeros(r, c)),
            Value::Complex(_) => Value::Complex(CMatrix::zeros(r, c)),
        }
    }

    pub(crate) fn accumulate(&mut self, other: &Value) {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => a.add_assign(b),
            (Value::Complex(a), Value::Complex(b)) => a.add_assign(b),
            (Value::Complex(a), Value::Real(b)) => a.add_assign(&b.to_complex()),
            (Value::Real(a), Value::Complex(b)) => a.add_assign(&b.re()),
        }
    }
}

impl From<RMatrix> for Value {
    fn from(m: RMatrix) -> Self {
        Value::Real(m)
    }
}

impl From<CMatrix> for Value {
    fn from(m: CMatrix) -> Self {
        Value::Complex(m)
    }
}
