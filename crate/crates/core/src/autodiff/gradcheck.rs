//! Central-difference gradient checks. `op_suite` exercises every
//! differentiable op on seeded random well-conditioned instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, Tape, Value, Var};
use crate::error::Result;
use crate::tensor::{CMatrix, RMatrix, ScalarKind, C64};

/// A scalar loss built on a fresh tape from one input leaf.
pub type Build<'a> = dyn Fn(&mut Tape, Var) -> Result<Var> + 'a;

pub fn random_real<R: Rng>(rng: &mut R, r: usize, c: usize) -> RMatrix {
    RMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_complex<R: Rng>(rng: &mut R, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// Reduces any node to a real scalar through a fixed random projection, so
/// both real and imaginary parts of complex outputs reach the loss.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let (r, c) = tape.value(out).shape();
    let real = match tape.value(out).kind() {
        ScalarKind::Real => out,
        ScalarKind::Complex => {
            let w = tape.constant(random_complex(&mut rng, c, c));
            let mixed = tape.matmul(out, w)?;
            tape.real_part(mixed)?
        }
    };
    let target = tape.constant(random_real(&mut rng, r, c));
    tape.mse(real, target)
}

fn eval(build: &Build, x: &Value) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.param(x.clone());
    let l = build(&mut tape, p)?;
    tape.scalar(l)
}

/// Largest relative error over all entries
/// (`|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`), with real and
/// imaginary parts perturbed separately for complex inputs. Steps are
/// `1e-6 (1 + |x|)`.
pub fn max_relative_error(build: &Build, x: Value) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.param(x.clone());
    let l = build(&mut tape, p)?;
    let grads = tape.backward(l)?;
    let g = grads.get(p).expect("the input reaches the loss").clone();

    let step = |v: f64| 1e-6 * (1.0 + v.abs());
    let mut worst: f64 = 0.0;
    let mut compare = |analytic: f64, plus: Value, minus: Value, h: f64| -> Result<()> {
        let fd = (eval(build, &plus)? - eval(build, &minus)?) / (2.0 * h);
        let scale = analytic.abs().max(fd.abs()).max(1e-3);
        worst = worst.max((analytic - fd).abs() / scale);
        Ok(())
    };
    match (&x, &g) {
        (Value::Real(m), Value::Real(gm)) => {
            for i in 0..m.len() {
                let h = step(m.as_slice()[i]);
                let mut plus = m.clone();
                plus.as_mut_slice()[i] += h;
                let mut minus = m.clone();
                minus.as_mut_slice()[i] -= h;
                compare(gm.as_slice()[i], plus.into(), minus.into(), h)?;
            }
        }
        (Value::Complex(m), Value::Complex(gm)) => {
            for i in 0..m.len() {
                let z = m.as_slice()[i];
                let gz = gm.as_slice()[i];
                for (dir, part, analytic) in [
                    (C64::new(1.0, 0.0), z.re, gz.re),
                    (C64::new(0.0, 1.0), z.im, gz.im),
                ] {
                    let h = step(part);
                    let mut plus = m.clone();
                    plus.as_mut_slice()[i] += dir * h;
                    let mut minus = m.clone();
                    minus.as_mut_slice()[i] -= dir * h;
                    compare(analytic, plus.into(), minus.into(), h)?;
                }
            }
        }
        _ => unreachable!("gradients take the kind of their input"),
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub checks: usize,
    pub worst: f64,
    /// Checks above the tolerance or that errored, as `instance: detail`.
    pub failures: Vec<String>,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Runner {
    rel: f64,
    report: OpReport,
}

impl Runner {
    fn check(&mut self, instance: u64, build: &Build, x: Value) {
        self.report.checks += 1;
        match max_relative_error(build, x) {
            Ok(e) => {
                self.report.worst = self.report.worst.max(e);
                if !(e <= self.rel) {
                    self.report
                        .failures
                        .push(format!("{instance}: relative error {e:e}"));
                }
            }
            Err(e) => self.report.failures.push(format!("{instance}: {e}")),
        }
    }
}

type Case = fn(&mut Runner, u64, &mut ChaCha8Rng);

fn matmul_bias_activation(run: &mut Runner, seed: u64, rng: &mut ChaCha8Rng) {
    let b = random_real(rng, 4, 3);
    let bias = random_real(rng, 2, 1);
    let act = [Activation::Tanh, Activation::Sigmoid, Activation::Identity][seed as usize % 3];
    let build = move |t: &mut Tape, x: Var| {
        let bv = t.constant(b.clone());
        let y = t.matmul(x, bv)?;
        let bias = t.constant(bias.clone());
        let y = t.add_bias(y, bias)?;
        let y = t.activation(y, act)?;
        let y = t.transpose(y);
        let y = t.scale(y, 1.7);
        project(t, y, seed)
    };
    run.check(seed, &build, random_real(rng, 2, 4).into());
}

fn relu(run: &mut Runner, seed: u64, rng: &mut ChaCha8Rng) {
    // Entries stay away from the kink at zero.
    let x = RMatrix::from_fn(3, 3, |_, _| {
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let build = move |t: &mut Tape, x: Var| {
        let y = t.activation(x, Activation::Relu)?;
        project(t, y, seed)
    };
    run.check(seed, &build, x.into());
}

fn columns_and_losses(run: &mut Runner, seed: u64, rng: &mut ChaCha8Rng) {
    let build = move |t: &mut Tape, x: Var| {
        let a = t.slice_columns(x, 0, 3)?;
        let b = t.select_columns(x, &[4, 1, 1])?;
        let d = t.sub(a, b)?;
        let c = t.concat_columns(&[d, x])?;
        let l1 = t.l1_mean(c)?;
        let l2 = t.sum_squares(d);
        let l3 = project(t, c, seed)?;
        let s = t.add(l1, l2)?;
        t.add(s, l3)
    };
    run.check(seed, &build, random_real(rng, 3, 5).into());
}

fn complex_arithmetic(run: &mut Runner, seed: u64, rng: &mut ChaCha8Rng) {
    let b = random_complex(rng, 3, 3);
    let v = random_complex(rng, 3, 1);
    let build = move |t: &mut Tape, x: Var| {
        let bv = t.constant(b.clone());
        let vv = t.constant(v.clone());
        let y = t.matmul(bv, x)?;
        let y = t.mul_columns(y, vv)?;
        let r = t.reciprocal(x);
        let y = t.add(y, r)?;
        let n = t.sum_squares(y);
        let p = project(t, y, seed)?;
        let n = t.scale(n, 0.01);
        t.add(n, p)
    };
    run.check(seed, &build, random_complex(rng, 3, 3).into());
}

fn to_complex(run: &mut Runner, seed: u64, rng: &mut ChaCha8Rng) {
    let w = random_complex(rng, 3, 1);
    let build = move |t: &mut Tape, x: Var| {
        let z = t.to_complex(x)?;
        let wv = t.constant(w.clone());
        let z = t.mul_columns(z, wv)?;
        project(t, z, seed)
    };
    run.check(seed, &build, random_real(rng, 2, 3).into());
}

fn log_and_evolve(run: &mut Runner, seed: u64, rng: &mut ChaCha8Rng) {
    let idx = [0.0, 0.5, 1.0, 2.5, 4.0];
    let coeffs = random_complex(rng, 3, 1);
    // Away from the branch cut on the negative real axis.
    let x = CMatrix::from_fn(3, 1, |_, _| {
        C64::from_polar(rng.random_range(0.3..1.2), rng.random_range(-2.5..2.5))
    });
    let build = move |t: &mut Tape, x: Var| {
        let w = t.log(x)?;
        let c = t.constant(coeffs.clone());
        let y = t.complex_exp_evolve(w, c, &idx)?;
        project(t, y, seed)
    };
    run.check(seed, &build, x.into());

    let omega = CMatrix::from_fn(3, 1, |_, _| {
        C64::new(rng.random_range(-0.5..0.1), rng.random_range(-1.0..1.0))
    });
    let build_b = move |t: &mut Tape, b: Var| {
        let w = t.constant(omega.clone());
        let y = t.complex_exp_evolve(w, b, &idx)?;
        project(t, y, seed + 1)
    };
    run.check(seed, &build_b, random_complex(rng, 3, 1).into());
}

fn svd_truncated(run: &mut Runner, seed: u64, rng: &mut ChaCha8Rng) {
    let (rows, cols) = [(6, 4), (4, 6), (5, 5)][seed as usize % 3];
    let rank = 1 + seed as usize % rows.min(cols);
    let t1 = random_real(rng, rows, rows);
    let t2 = random_real(rng, cols, cols);
    // Losses invariant to the sign of each singular pair.
    let build = move |t: &mut Tape, x: Var| {
        let s = t.svd_truncated(x, rank)?;
        let ut = t.transpose(s.u);
        let uu = t.matmul(s.u, ut)?;
        let c1 = t.constant(t1.clone());
        let l1 = t.mse(uu, c1)?;
        let vs = t.mul_columns(s.v, s.s)?;
        let vt = t.transpose(s.v);
        let vsv = t.matmul(vs, vt)?;
        let c2 = t.constant(t2.clone());
        let l2 = t.mse(vsv, c2)?;
        let ls = t.sum_squares(s.s);
        let l = t.add(l1, l2)?;
        t.add(l, ls)
    };
    run.check(seed, &build, random_real(rng, rows, cols).into());

    let build_s = move |t: &mut Tape, x: Var| {
        let s = t.svd_truncated(x, 2)?;
        project(t, s.s, seed)
    };
    run.check(seed, &build_s, random_real(rng, 4, 3).into());
}

fn eig(run: &mut Runner, seed: u64, rng: &mut ChaCha8Rng) {
    let n = 2 + seed as usize % 3;
    let build = move |t: &mut Tape, x: Var| {
        let e = t.eig(x)?;
        let lv = project(t, e.values, seed)?;
        let lw = project(t, e.vectors, seed + 7)?;
        t.add(lv, lw)
    };
    run.check(seed, &build, random_real(rng, n, n).into());
    run.check(seed, &build, random_complex(rng, n, n).into());
}

fn pinv(run: &mut Runner, seed: u64, rng: &mut ChaCha8Rng) {
    let (rows, cols) = [(4, 2), (2, 4), (3, 3)][seed as usize % 3];
    let build = move |t: &mut Tape, x: Var| {
        let p = t.pinv(x)?;
        project(t, p, seed)
    };
    run.check(seed, &build, random_real(rng, rows, cols).into());
    run.check(seed, &build, random_complex(rng, rows, cols).into());
}

const CASES: [(&str, Case); 9] = [
    (
        "matmul/add_bias/activation/transpose/scale",
        matmul_bias_activation,
    ),
    ("relu", relu),
    (
        "slice/select/concat/sub/l1_mean/sum_squares/mse",
        columns_and_losses,
    ),
    (
        "complex matmul/mul_columns/reciprocal/add",
        complex_arithmetic,
    ),
    ("to_complex/real_part", to_complex),
    ("log/complex_exp_evolve", log_and_evolve),
    ("svd_truncated", svd_truncated),
    ("eig", eig),
    ("pinv", pinv),
];

/// Runs every op group on `instances` seeded random inputs at relative
/// tolerance `rel`.
pub fn op_suite(instances: u64, rel: f64) -> Vec<OpReport> {
    CASES
        .iter()
        .map(|&(op, case)| {
            let mut run = Runner {
                rel,
                report: OpReport {
                    op,
                    checks: 0,
                    worst: 0.0,
                    failures: Vec::new(),
                },
            };
            for seed in 0..instances {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                case(&mut run, seed, &mut rng);
            }
            run.report
        })
        .collect()
}
