//! Fully connected encoder/decoder networks, the linear Koopman layer and
//! the Adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::RMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_size: usize,
    pub hidden_layer_sizes: Vec<usize>,
    pub output_size: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

fn default_true() -> bool {
    true
}

impl MlpSpec {
    pub fn new(input_size: usize, hidden_layer_sizes: Vec<usize>, output_size: usize) -> Self {
        MlpSpec {
            input_size,
            hidden_layer_sizes,
            output_size,
            activation: Activation::Tanh,
            use_bias: true,
        }
    }

    /// Same layers in reverse, from output back to input.
    pub fn mirror(&self) -> MlpSpec {
        MlpSpec {
            input_size: self.output_size,
            hidden_layer_sizes: self.hidden_layer_sizes.iter().rev().copied().collect(),
            output_size: self.input_size,
            activation: self.activation,
            use_bias: self.use_bias,
        }
    }

    /// Layer sizes from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_size];
        s.extend(&self.hidden_layer_sizes);
        s.push(self.output_size);
        s
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.sizes().contains(&0) {
            return Err(Error::SpecMismatch(format!(
                "{name} has a zero-sized layer: {:?}",
                self.sizes()
            )));
        }
        Ok(())
    }
}

/// Affine map `W x + b` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: RMatrix,
    pub bias: Option<RMatrix>,
}

/// Multilayer perceptron; the activation is applied after every layer
/// except the last, which stays linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Tape handles of an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Option<Var>)>,
    activation: Activation,
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> RMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    RMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl Mlp {
    pub fn init<R: Rng>(spec: &MlpSpec, rng: &mut R) -> Mlp {
        let sizes = spec.sizes();
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: xavier(rng, w[1], w[0]),
                bias: spec.use_bias.then(|| RMatrix::zeros(w[1], 1)),
            })
            .collect();
        Mlp {
            layers,
            activation: spec.activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.cols())
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }

    /// Weights then bias for each layer, in order.
    pub fn tensors(&self) -> Vec<&RMatrix> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            if let Some(b) = &l.bias {
                out.push(b);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut RMatrix> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            if let Some(b) = &mut l.bias {
                out.push(b);
            }
        }
        out
    }

    /// Puts the parameters on the tape, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let mut leaf = |m: &RMatrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let layers = self
            .layers
            .iter()
            .map(|l| (leaf(&l.weight), l.bias.as_ref().map(&mut leaf)))
            .collect();
        BoundMlp {
            layers,
            activation: self.activation,
        }
    }

    /// Tape-free forward pass with the same arithmetic as
    /// [`BoundMlp::forward`].
    pub fn forward(&self, x: &RMatrix) -> Result<RMatrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = bound.forward(&mut tape, xv)?;
        Ok(tape.real(y)?.clone())
    }
}

impl BoundMlp {
    /// `x` holds one sample per column.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        let mut h = x;
        for (k, (w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(*w, h)?;
            if let Some(b) = b {
                h = tape.add_bias(h, *b)?;
            }
            if k < last {
                h = tape.activation(h, self.activation)?;
            }
        }
        Ok(h)
    }

    /// Handles in the order of [`Mlp::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.push(*w);
            out.extend(b);
        }
        out
    }

    pub fn weight_vars(&self) -> Vec<Var> {
        self.layers.iter().map(|(w, _)| *w).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Xavier-uniform weights (encoder layers first, then decoder), zero biases.
pub fn build_autoencoder(encoder: &MlpSpec, decoder: &MlpSpec, seed: u64) -> Result<Autoencoder> {
    encoder.validate("encoder")?;
    decoder.validate("decoder")?;
    if encoder.output_size != decoder.input_size {
        return Err(Error::SpecMismatch(format!(
            "encoder output {} != decoder input {}",
            encoder.output_size, decoder.input_size
        )));
    }
    if encoder.input_size != decoder.output_size {
        return Err(Error::SpecMismatch(format!(
            "encoder input {} != decoder output {}",
            encoder.input_size, decoder.output_size
        )));
    }
    let mut r = rng::seeded(seed);
    let enc = Mlp::init(encoder, &mut r);
    let dec = Mlp::init(decoder, &mut r);
    Ok(Autoencoder {
        encoder: enc,
        decoder: dec,
    })
}

#[derive(Debug, Clone)]
pub struct BoundAutoencoder {
    pub encoder: BoundMlp,
    pub decoder: BoundMlp,
}

impl BoundAutoencoder {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars();
        v.extend(self.decoder.vars());
        v
    }

    /// Sum of squared weights of both networks; biases excluded.
    pub fn weight_decay(&self, tape: &mut Tape) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for w in self
            .encoder
            .weight_vars()
            .into_iter()
            .chain(self.decoder.weight_vars())
        {
            let s = tape.sum_squares(w);
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
        acc.ok_or_else(|| Error::SpecMismatch("autoencoder without layers".into()))
    }
}

impl Autoencoder {
    pub fn state_size(&self) -> usize {
        self.encoder.input_size()
    }

    pub fn encoded_size(&self) -> usize {
        self.encoder.output_size()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundAutoencoder {
        BoundAutoencoder {
            encoder: self.encoder.bind(tape, trainable),
            decoder: self.decoder.bind(tape, trainable),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut RMatrix> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v
    }

    pub fn tensors(&self) -> Vec<&RMatrix> {
        let mut v = self.encoder.tensors();
        v.extend(self.decoder.tensors());
        v
    }
}

/// Square, bias-free, activation-free layer `y -> K y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearKoopmanLayer {
    pub k: RMatrix,
}

impl LinearKoopmanLayer {
    /// Identity plus small Xavier noise, so early rollouts neither vanish
    /// nor explode.
    pub fn init<R: Rng>(size: usize, rng: &mut R) -> Self {
        let noise = xavier(rng, size, size).scale(0.01);
        LinearKoopmanLayer {
            k: RMatrix::identity(size).add(&noise).expect("same shape"),
        }
    }

    /// `K^steps y`.
    pub fn apply_n(&self, y: &RMatrix, steps: usize) -> Result<RMatrix> {
        let mut out = y.clone();
        for _ in 0..steps {
            out = self.k.matmul(&out)?;
        }
        Ok(out)
    }
}

/// Adam with bias correction. Weight decay is not applied here; it enters
/// through the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<RMatrix>,
    v: Vec<RMatrix>,
}

impl Adam {
    pub fn new(lr: f64, params: &[&RMatrix]) -> Self {
        let zeros: Vec<RMatrix> = params
            .iter()
            .map(|p| RMatrix::zeros(p.rows(), p.cols()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut RMatrix], grads: &[&RMatrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            p.check_same_shape(g, "adam parameter/gradient")?;
            p.check_same_shape(m, "adam parameter/moment")?;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            let g = grads[k].as_slice();
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (i, x) in p.as_mut_slice().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shapes(m: &Mlp) -> Vec<(usize, usize)> {
        m.layers.iter().map(|l| l.weight.shape()).collect()
    }

    #[test]
    fn example_architecture_shapes() {
        let enc = MlpSpec::new(200, vec![100], 50);
        let ae = build_autoencoder(&enc, &enc.mirror(), 1).unwrap();
        assert_eq!(shapes(&ae.encoder), vec![(100, 200), (50, 100)]);
        assert_eq!(shapes(&ae.decoder), vec![(100, 50), (200, 100)]);
        assert!(ae
            .tensors()
            .iter()
            .filter(|t| t.cols() == 1)
            .all(|b| b.max_abs() == 0.0));
    }

    #[test]
    fn empty_hidden_list_is_one_affine_layer() {
        let enc = MlpSpec::new(3, vec![], 2);
        let ae = build_autoencoder(&enc, &enc.mirror(), 0).unwrap();
        assert_eq!(shapes(&ae.encoder), vec![(2, 3)]);
        assert_eq!(shapes(&ae.decoder), vec![(3, 2)]);
    }

    #[test]
    fn mirror_reverses_hidden_layers() {
        let enc = MlpSpec::new(10, vec![8, 6, 4], 3);
        assert_eq!(enc.mirror().hidden_layer_sizes, vec![4, 6, 8]);
        assert_eq!(enc.mirror().mirror(), enc);
    }

    #[test]
    fn mismatched_specs_are_rejected() {
        let enc = MlpSpec::new(4, vec![], 3);
        assert!(matches!(
            build_autoencoder(&enc, &MlpSpec::new(2, vec![], 4), 0),
            Err(Error::SpecMismatch(_))
        ));
        assert!(matches!(
            build_autoencoder(&enc, &MlpSpec::new(3, vec![], 5), 0),
            Err(Error::SpecMismatch(_))
        ));
        let zero = MlpSpec::new(4, vec![0], 3);
        assert!(build_autoencoder(&zero, &zero.mirror(), 0).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let enc = MlpSpec::new(5, vec![7], 3);
        let a = build_autoencoder(&enc, &enc.mirror(), 42).unwrap();
        let b = build_autoencoder(&enc, &enc.mirror(), 42).unwrap();
        let c = build_autoencoder(&enc, &enc.mirror(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_bounds_hold() {
        let enc = MlpSpec::new(30, vec![20], 10);
        let ae = build_autoencoder(&enc, &enc.mirror(), 5).unwrap();
        for l in ae.encoder.layers.iter().chain(&ae.decoder.layers) {
            let (o, i) = l.weight.shape();
            let limit = (6.0 / (o + i) as f64).sqrt();
            assert!(l.weight.max_abs() <= limit);
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = Mlp::init(
            &MlpSpec::new(3, vec![4], 2),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        for t in m.tensors_mut() {
            *t = RMatrix::zeros(t.rows(), t.cols());
        }
        let x = RMatrix::from_fn(3, 5, |r, c| (r + c) as f64);
        assert_eq!(m.forward(&x).unwrap(), RMatrix::zeros(2, 5));
    }

    #[test]
    fn identity_layer_is_identity() {
        let m = Mlp {
            layers: vec![Layer {
                weight: RMatrix::identity(3),
                bias: Some(RMatrix::zeros(3, 1)),
            }],
            activation: Activation::Tanh,
        };
        let x = RMatrix::from_fn(3, 4, |r, c| r as f64 * 2.5 - c as f64);
        assert_eq!(m.forward(&x).unwrap(), x);
        assert!(m.forward(&RMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn koopman_layer_matches_matrix_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = LinearKoopmanLayer::init(4, &mut rng);
        let y = RMatrix::from_fn(4, 1, |r, _| r as f64 + 1.0);
        let mut kp = RMatrix::identity(4);
        for _ in 0..7 {
            kp = kp.matmul(&layer.k).unwrap();
        }
        let want = kp.matmul(&y).unwrap();
        let got = layer.apply_n(&y, 7).unwrap();
        assert!(got.sub(&want).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut w = RMatrix::from_fn(2, 2, |r, c| (r * 2 + c) as f64);
        let before = w.clone();
        let mut opt = Adam::new(1e-3, &[&w]);
        let g = RMatrix::zeros(2, 2);
        for _ in 0..5 {
            opt.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert_eq!(w, before);
        assert_eq!(opt.steps_taken(), 5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = RMatrix::zeros(3, 1);
        let mut opt = Adam::new(0.01, &[&w]);
        let g = RMatrix::column_vector(&[0.5, -2.0, 1e-3]);
        opt.step(&mut [&mut w], &[&g]).unwrap();
        for (x, gi) in w.as_slice().iter().zip(g.as_slice()) {
            assert!((x.abs() - 0.01).abs() < 1e-7);
            assert_eq!(x.signum(), -gi.signum());
        }
    }

    #[test]
    fn adam_solves_convex_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = RMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let mut w = RMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let mut opt = Adam::new(1e-2, &[&w]);
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let wv = tape.param(w.clone());
            let av = tape.constant(a.clone());
            let d = tape.sub(wv, av).unwrap();
            let l = tape.sum_squares(d);
            let g = tape.backward(l).unwrap().real(wv).unwrap().clone();
            opt.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert!(w.sub(&a).unwrap().frobenius_norm() < 1e-3);
    }

    #[test]
    fn weight_decay_excludes_biases() {
        let enc = MlpSpec::new(2, vec![3], 1);
        let mut ae = build_autoencoder(&enc, &enc.mirror(), 0).unwrap();
        for t in ae.tensors_mut() {
            *t = t.map(|_| 1.0);
        }
        let mut tape = Tape::new();
        let b = ae.bind(&mut tape, true);
        let l = b.weight_decay(&mut tape).unwrap();
        // 6 + 3 encoder weights, 3 + 6 decoder weights.
        assert_eq!(tape.scalar(l).unwrap(), 18.0);
    }
}
