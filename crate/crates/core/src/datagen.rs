//! Synthetic systems with known dynamics: linear maps and the planar
//! system `x1' = mu x1`, `x2' = lambda (x2 - x1^2)`, whose trajectories lie
//! on a polynomial slow manifold and are sampled here in closed form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Snapshots, Trajectories};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::RMatrix;

/// Trajectories `x_{i+1} = A x_i`, `i = 0..m`, one per row of `x0`.
pub fn gen_linear_system(a: &RMatrix, x0: &RMatrix, m: usize) -> Result<Trajectories> {
    if a.rows() != a.cols() || x0.cols() != a.rows() {
        return Err(Error::ShapeMismatch(format!(
            "system matrix {}x{} with {}-dimensional initial states",
            a.rows(),
            a.cols(),
            x0.cols()
        )));
    }
    let d = a.rows();
    let trajs = (0..x0.rows())
        .map(|p| {
            let mut out = RMatrix::zeros(m + 1, d);
            let mut x = RMatrix::column_vector(x0.row(p));
            for i in 0..=m {
                out.set_row(i, x.as_slice());
                x = a.matmul_unchecked(&x);
            }
            out
        })
        .collect();
    Trajectories::new(trajs)
}

/// One linear trajectory as snapshots at `t = t0 + i dt`.
pub fn gen_linear_snapshots(
    a: &RMatrix,
    x0: &[f64],
    m: usize,
    t0: f64,
    dt: f64,
) -> Result<Snapshots> {
    let x0 = RMatrix::from_vec(1, x0.len(), x0.to_vec())?;
    let tr = gen_linear_system(a, &x0, m)?;
    let t = (0..=m).map(|i| t0 + i as f64 * dt).collect();
    Snapshots::new(tr.as_slice()[0].clone(), t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolyManifoldParams {
    pub mu: f64,
    pub lambda: f64,
    pub dt: f64,
    /// Steps per trajectory; each trajectory has `steps + 1` states.
    pub steps: usize,
    pub x1_range: (f64, f64),
    pub x2_range: (f64, f64),
    pub count: usize,
    pub seed: u64,
}

impl Default for PolyManifoldParams {
    fn default() -> Self {
        PolyManifoldParams {
            mu: -0.05,
            lambda: -1.0,
            dt: 0.02,
            steps: 50,
            x1_range: (-0.5, 0.5),
            x2_range: (-0.5, 0.5),
            count: 100,
            seed: 0,
        }
    }
}

impl PolyManifoldParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.lambda < self.mu && self.mu < 0.0) {
            return bad(format!(
                "need lambda < mu < 0, got lambda = {}, mu = {}",
                self.lambda, self.mu
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        for (name, (lo, hi)) in [("x1_range", self.x1_range), ("x2_range", self.x2_range)] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return bad(format!("{name} ({lo}, {hi}) is not an interval"));
            }
        }
        Ok(())
    }

    /// Closed-form state at time `t` from `x(0) = (a, b)`.
    pub fn state_at(&self, x0: [f64; 2], t: f64) -> [f64; 2] {
        let c = self.lambda / (self.lambda - 2.0 * self.mu);
        let [a, b] = x0;
        [
            a * (self.mu * t).exp(),
            (b - c * a * a) * (self.lambda * t).exp() + c * a * a * (2.0 * self.mu * t).exp(),
        ]
    }

    /// `(steps + 1) x 2` trajectory sampled at `t = k dt`.
    pub fn trajectory(&self, x0: [f64; 2]) -> RMatrix {
        let mut out = RMatrix::zeros(self.steps + 1, 2);
        for k in 0..=self.steps {
            out.set_row(k, &self.state_at(x0, k as f64 * self.dt));
        }
        out
    }

    /// Continuous-time generator of the embedding `(x1, x2, x1^2)`.
    pub fn embedded_generator(&self) -> RMatrix {
        RMatrix::from_rows(&[
            vec![self.mu, 0.0, 0.0],
            vec![0.0, self.lambda, -self.lambda],
            vec![0.0, 0.0, 2.0 * self.mu],
        ])
        .expect("3x3")
    }
}

/// The embedding `(x1, x2, x1^2)` in which the system is exactly linear.
pub fn poly_embedding(x: &[f64]) -> [f64; 3] {
    [x[0], x[1], x[0] * x[0]]
}

/// `count` trajectories from initial states drawn uniformly in the box.
pub fn gen_poly_manifold(p: &PolyManifoldParams) -> Result<Trajectories> {
    p.validate()?;
    let mut r = rng::seeded(p.seed);
    let trajs = (0..p.count)
        .map(|_| {
            let a = sample(&mut r, p.x1_range);
            let b = sample(&mut r, p.x2_range);
            p.trajectory([a, b])
        })
        .collect();
    Trajectories::new(trajs)
}

fn sample<R: Rng>(r: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        r.random_range(lo..hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_dynamics_are_constant() {
        let x0 = RMatrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let t = gen_linear_system(&RMatrix::identity(2), &x0, 4).unwrap();
        for r in 0..5 {
            assert_eq!(t.as_slice()[0].row(r), &[1.0, -2.0]);
        }
    }

    #[test]
    fn diagonal_hand_computation() {
        let a = RMatrix::diag(&[0.9, 0.8]);
        let x0 = RMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let t = gen_linear_system(&a, &x0, 3).unwrap();
        let want = [[0.9, 0.8], [0.81, 0.64], [0.729, 0.512]];
        for (i, w) in want.iter().enumerate() {
            for (c, &v) in w.iter().enumerate() {
                assert!((t.as_slice()[0][(i + 1, c)] - v).abs() < 1e-15);
            }
        }
        assert!(gen_linear_system(&RMatrix::zeros(2, 3), &x0, 3).is_err());
    }

    #[test]
    fn manifold_axis_is_pure_decay() {
        let p = PolyManifoldParams::default();
        for k in 0..=p.steps {
            let t = k as f64 * p.dt;
            let x = p.state_at([0.0, 0.3], t);
            assert_eq!(x[0], 0.0);
            assert_eq!(x[1], 0.3 * (p.lambda * t).exp());
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let base = PolyManifoldParams::default();
        for p in [
            PolyManifoldParams {
                mu: -2.0,
                ..base.clone()
            },
            PolyManifoldParams {
                mu: 0.1,
                ..base.clone()
            },
            PolyManifoldParams {
                dt: 0.0,
                ..base.clone()
            },
            PolyManifoldParams {
                steps: 0,
                ..base.clone()
            },
            PolyManifoldParams {
                x1_range: (1.0, -1.0),
                ..base.clone()
            },
        ] {
            assert!(matches!(
                gen_poly_manifold(&p),
                Err(Error::InvalidParams(_))
            ));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let p = PolyManifoldParams {
            count: 5,
            ..Default::default()
        };
        assert_eq!(
            gen_poly_manifold(&p).unwrap(),
            gen_poly_manifold(&p).unwrap()
        );
        let q = PolyManifoldParams {
            seed: 1,
            ..p.clone()
        };
        assert_ne!(
            gen_poly_manifold(&p).unwrap(),
            gen_poly_manifold(&q).unwrap()
        );
    }

    fn rk4(p: &PolyManifoldParams, x: [f64; 2], h: f64) -> [f64; 2] {
        let f = |x: [f64; 2]| [p.mu * x[0], p.lambda * (x[1] - x[0] * x[0])];
        let add = |x: [f64; 2], k: [f64; 2], s: f64| [x[0] + s * k[0], x[1] + s * k[1]];
        let k1 = f(x);
        let k2 = f(add(x, k1, h / 2.0));
        let k3 = f(add(x, k2, h / 2.0));
        let k4 = f(add(x, k3, h));
        [
            x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    }

    #[test]
    fn closed_form_matches_rk4() {
        let p = PolyManifoldParams {
            count: 10,
            seed: 3,
            ..Default::default()
        };
        let data = gen_poly_manifold(&p).unwrap();
        let h = p.dt / 1000.0;
        let mut worst: f64 = 0.0;
        for tr in data.as_slice() {
            let mut x = [tr[(0, 0)], tr[(0, 1)]];
            for k in 1..=p.steps {
                for _ in 0..1000 {
                    x = rk4(&p, x, h);
                }
                worst = worst
                    .max((x[0] - tr[(k, 0)]).abs())
                    .max((x[1] - tr[(k, 1)]).abs());
            }
        }
        assert!(worst < 1e-9, "max deviation {worst:e}");
    }

    /// Scaling-and-squaring Taylor exponential.
    fn expm(a: &RMatrix) -> RMatrix {
        let squarings = 10;
        let s = a.scale(1.0 / f64::from(1 << squarings));
        let mut term = RMatrix::identity(a.rows());
        let mut sum = term.clone();
        for k in 1..30 {
            term = term.matmul(&s).unwrap().scale(1.0 / k as f64);
            sum = sum.add(&term).unwrap();
        }
        for _ in 0..squarings {
            sum = sum.matmul(&sum).unwrap();
        }
        sum
    }

    #[test]
    fn embedding_evolves_linearly() {
        let p = PolyManifoldParams {
            count: 10,
            seed: 4,
            ..Default::default()
        };
        let k = expm(&p.embedded_generator().scale(p.dt));
        let data = gen_poly_manifold(&p).unwrap();
        for tr in data.as_slice() {
            for i in 0..p.steps {
                let y = RMatrix::column_vector(&poly_embedding(tr.row(i)));
                let next = poly_embedding(tr.row(i + 1));
                let pred = k.matmul(&y).unwrap();
                for c in 0..3 {
                    assert!((pred[(c, 0)] - next[c]).abs() < 1e-9);
                }
            }
        }
    }
}
