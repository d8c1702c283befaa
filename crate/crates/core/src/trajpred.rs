//! Trajectory prediction: an autoencoder with a trainable linear layer `K`
//! advancing the encoding one step at a time, trained on minibatches of
//! equal-length trajectories.
//!
//! A batch of `B` trajectories with `m + 1` states is laid out step-major:
//! column `k * B + p` holds state `k` of trajectory `p`, so the states of one
//! step form a contiguous block.

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Var};
use crate::data::{Scaler, Trajectories, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::metrics::{
    anae_or_nan, k_regularizer, total_loss, EpochMetrics, LossTerms, LossWeights, ModelKind,
    RunStats, SplitMetrics,
};
use crate::nets::{
    build_autoencoder, Adam, Autoencoder, BoundAutoencoder, LinearKoopmanLayer, MlpSpec,
};
use crate::rng;
use crate::statepred::{default_decoder_loss_weight, default_lr, default_numepochs, default_true};
use crate::tensor::RMatrix;

fn default_batch_size() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajPredConfig {
    pub encoded_size: usize,
    #[serde(default)]
    pub encoder_hidden_layers: Vec<usize>,
    #[serde(default)]
    pub decoder_hidden_layers: Option<Vec<usize>>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_numepochs")]
    pub numepochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_decoder_loss_weight")]
    pub decoder_loss_weight: f64,
    /// Weight decay of the autoencoder and of `K` alike.
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub scale_features: bool,
    #[serde(default)]
    pub anae_zero_threshold: f64,
}

impl TrajPredConfig {
    pub fn new(encoded_size: usize) -> Self {
        TrajPredConfig {
            encoded_size,
            encoder_hidden_layers: Vec::new(),
            decoder_hidden_layers: None,
            activation: Activation::Tanh,
            numepochs: default_numepochs(),
            batch_size: default_batch_size(),
            decoder_loss_weight: default_decoder_loss_weight(),
            weight_decay: 0.0,
            learning_rate: default_lr(),
            seed: 0,
            scale_features: true,
            anae_zero_threshold: 0.0,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.decoder_loss_weight,
            beta: self.weight_decay,
            gamma: self.weight_decay,
        }
    }

    pub fn specs(&self, state_dim: usize) -> (MlpSpec, MlpSpec) {
        let mut enc = MlpSpec::new(
            state_dim,
            self.encoder_hidden_layers.clone(),
            self.encoded_size,
        );
        enc.activation = self.activation;
        let dec = match &self.decoder_hidden_layers {
            Some(h) => {
                let mut d = MlpSpec::new(self.encoded_size, h.clone(), state_dim);
                d.activation = self.activation;
                d
            }
            None => enc.mirror(),
        };
        (enc, dec)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if self.encoded_size == 0 {
            return Err(Error::InvalidParams(
                "encoded_size must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParams("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.anae_zero_threshold >= 0.0) {
            return Err(Error::InvalidParams(
                "anae_zero_threshold must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// `[K y0, K^2 y0, ..., K^steps y0]` as one step-major block of columns.
pub fn rollout(tape: &mut Tape, k: Var, y0: Var, steps: usize) -> Result<Var> {
    if steps == 0 {
        return Err(Error::InvalidParams(
            "rollout needs at least one step".into(),
        ));
    }
    let mut y = y0;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        y = tape.matmul(k, y)?;
        out.push(y);
    }
    tape.concat_columns(&out)
}

/// Trajectories as step-major columns, after scaling.
fn batch_columns(trajs: &[&RMatrix], scaler: &Scaler) -> Result<RMatrix> {
    let b = trajs.len();
    let states = trajs.first().map_or(0, |t| t.rows());
    let d = scaler.dim();
    let scaled: Vec<RMatrix> = trajs
        .iter()
        .map(|t| scaler.transform(t))
        .collect::<Result<_>>()?;
    Ok(RMatrix::from_fn(d, states * b, |r, c| {
        scaled[c % b][(c / b, r)]
    }))
}

fn raw_columns(trajs: &[&RMatrix]) -> RMatrix {
    let b = trajs.len();
    let states = trajs.first().map_or(0, |t| t.rows());
    let d = trajs.first().map_or(0, |t| t.cols());
    RMatrix::from_fn(d, states * b, |r, c| trajs[c % b][(c / b, r)])
}

struct BatchForward {
    total: Var,
    recon: Var,
    lin: Var,
    pred: Var,
    recon_out: Var,
    encoded_next: Var,
    rolled: Var,
    pred_out: Var,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajPred {
    pub config: TrajPredConfig,
    pub autoencoder: Autoencoder,
    pub koopman: LinearKoopmanLayer,
    pub scaler: Scaler,
    /// Steps per training trajectory, the default prediction horizon.
    pub num_steps: usize,
    pub trained: bool,
    #[serde(skip)]
    pub stats: RunStats,
}

impl TrajPred {
    /// Initializes the networks (encoder, decoder, then `K`) from the seed.
    pub fn new(ds: &TrajectoryDataset, config: TrajPredConfig) -> Result<Self> {
        config.validate()?;
        let (enc, dec) = config.specs(ds.dim());
        let autoencoder = build_autoencoder(&enc, &dec, config.seed)?;
        let mut r = rng::seeded(rng::derive(config.seed, u64::MAX));
        let koopman = LinearKoopmanLayer::init(config.encoded_size, &mut r);
        let scaler = if config.scale_features {
            Scaler::fit(ds.train.as_slice())?
        } else {
            Scaler::identity(ds.dim())
        };
        Ok(TrajPred {
            config,
            autoencoder,
            koopman,
            scaler,
            num_steps: ds.train.num_states() - 1,
            trained: false,
            stats: RunStats::default(),
        })
    }

    fn tensors(&self) -> Vec<&RMatrix> {
        let mut v = self.autoencoder.tensors();
        v.push(&self.koopman.k);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut RMatrix> {
        let mut v = self.autoencoder.tensors_mut();
        v.push(&mut self.koopman.k);
        v
    }

    fn forward(
        &self,
        tape: &mut Tape,
        ae: &BoundAutoencoder,
        k: Var,
        x: &RMatrix,
        batch: usize,
    ) -> Result<BatchForward> {
        let steps = x.cols() / batch - 1;
        let xv = tape.constant(x.clone());
        let encoded = ae.encoder.forward(tape, xv)?;
        let recon_out = ae.decoder.forward(tape, encoded)?;
        let recon = tape.mse(recon_out, xv)?;
        let y0 = tape.slice_columns(encoded, 0, batch)?;
        let rolled = rollout(tape, k, y0, steps)?;
        let encoded_next = tape.slice_columns(encoded, batch, x.cols())?;
        let lin = tape.mse(encoded_next, rolled)?;
        let pred_out = ae.decoder.forward(tape, rolled)?;
        let x_next = tape.slice_columns(xv, batch, x.cols())?;
        let pred = tape.mse(pred_out, x_next)?;
        let terms = LossTerms {
            recon,
            lin,
            pred,
            ae_decay: ae.weight_decay(tape)?,
            k_decay: k_regularizer(tape, ModelKind::TrajPred, k)?,
        };
        let total = total_loss(tape, terms, self.config.weights())?;
        Ok(BatchForward {
            total,
            recon,
            lin,
            pred,
            recon_out,
            encoded_next,
            rolled,
            pred_out,
        })
    }

    /// Metrics of the current parameters on a set of trajectories, with no
    /// gradients.
    pub fn evaluate(&self, trajs: &Trajectories) -> Result<SplitMetrics> {
        let refs: Vec<&RMatrix> = trajs.as_slice().iter().collect();
        let b = refs.len();
        let x = batch_columns(&refs, &self.scaler)?;
        let raw = raw_columns(&refs);
        let mut tape = Tape::new();
        let ae = self.autoencoder.bind(&mut tape, false);
        let k = tape.constant(self.koopman.k.clone());
        let f = self.forward(&mut tape, &ae, k, &x, b)?;
        let thr = self.config.anae_zero_threshold;
        let unscale = |m: &RMatrix| -> Result<RMatrix> {
            Ok(self.scaler.inverse(&m.transpose())?.transpose())
        };
        let raw_next = raw.slice_columns(b, raw.cols())?;
        Ok(SplitMetrics {
            recon_loss: tape.scalar(f.recon)?,
            lin_loss: tape.scalar(f.lin)?,
            pred_loss: tape.scalar(f.pred)?,
            total_loss: tape.scalar(f.total)?,
            recon_anae: anae_or_nan(&raw, &unscale(tape.real(f.recon_out)?)?, thr)?,
            lin_anae: anae_or_nan(tape.real(f.encoded_next)?, tape.real(f.rolled)?, thr)?,
            pred_anae: anae_or_nan(&raw_next, &unscale(tape.real(f.pred_out)?)?, thr)?,
        })
    }

    /// Shuffled minibatches of training trajectory positions for `epoch`.
    pub fn batches(&self, count: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng::seeded(rng::derive(
            self.config.seed,
            epoch as u64,
        )));
        order
            .chunks(self.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    fn step(&mut self, opt: &mut Adam, x: &RMatrix, batch: usize) -> Result<()> {
        let mut tape = Tape::new();
        let ae = self.autoencoder.bind(&mut tape, true);
        let k = tape.param(self.koopman.k.clone());
        let f = self.forward(&mut tape, &ae, k, x, batch)?;
        let loss = tape.scalar(f.total)?;
        if !loss.is_finite() {
            return Err(Error::NonScalarLoss(format!("loss is {loss}")));
        }
        let g = tape.backward(f.total)?;
        let mut vars = ae.vars();
        vars.push(k);
        let grads: Vec<RMatrix> = vars
            .into_iter()
            .map(|v| g.real(v).cloned())
            .collect::<Result<_>>()?;
        let refs: Vec<&RMatrix> = grads.iter().collect();
        opt.step(&mut self.tensors_mut(), &refs)
    }

    /// Trains for `numepochs` epochs; training and validation metrics are
    /// recorded after the last batch of every epoch.
    pub fn train_net(&mut self, ds: &TrajectoryDataset) -> Result<&RunStats> {
        let mut opt = Adam::new(self.config.learning_rate, &self.tensors());
        self.stats = RunStats::default();
        let train = ds.train.as_slice();
        for epoch in 1..=self.config.numepochs {
            let mut run = |model: &mut TrajPred| -> Result<EpochMetrics> {
                for idx in model.batches(train.len(), epoch) {
                    let refs: Vec<&RMatrix> = idx.iter().map(|&p| &train[p]).collect();
                    let x = batch_columns(&refs, &model.scaler)?;
                    model.step(&mut opt, &x, refs.len())?;
                }
                Ok(EpochMetrics {
                    epoch,
                    train: model.evaluate(&ds.train)?,
                    val: ds.val.as_ref().map(|v| model.evaluate(v)).transpose()?,
                })
            };
            let m = run(self).map_err(|e| e.at_epoch(epoch))?;
            if epoch % 100 == 0 || epoch == self.config.numepochs {
                debug!(
                    "epoch {epoch}: loss {:.4e}, pred ANAE {:.3}%",
                    m.train.total_loss, m.train.pred_anae
                );
            }
            self.stats.epochs.push(m);
        }
        self.trained = true;
        Ok(&self.stats)
    }

    /// Metrics of the trained model on the test trajectories.
    pub fn test_net(&self, ds: &TrajectoryDataset) -> Result<SplitMetrics> {
        if !self.trained {
            return Err(Error::NotTrained);
        }
        self.evaluate(ds.test.as_ref().ok_or(Error::NoTestSplit)?)
    }

    /// Predicted states `x_1..x_steps` (one matrix of rows per initial
    /// state, in the order of the rows of `x0`).
    pub fn predict_new(&self, x0: &RMatrix, steps: usize) -> Result<Vec<RMatrix>> {
        if !self.trained {
            return Err(Error::NotTrained);
        }
        if x0.cols() != self.scaler.dim() {
            return Err(Error::ShapeMismatch(format!(
                "initial states have {} features, the model expects {}",
                x0.cols(),
                self.scaler.dim()
            )));
        }
        let b = x0.rows();
        let x = self.scaler.transform(x0)?.transpose();
        let mut tape = Tape::new();
        let ae = self.autoencoder.bind(&mut tape, false);
        let k = tape.constant(self.koopman.k.clone());
        let xv = tape.constant(x);
        let y0 = ae.encoder.forward(&mut tape, xv)?;
        let rolled = rollout(&mut tape, k, y0, steps)?;
        let decoded = ae.decoder.forward(&mut tape, rolled)?;
        let states = self.scaler.inverse(&tape.real(decoded)?.transpose())?;
        Ok((0..b)
            .map(|p| {
                let rows: Vec<usize> = (0..steps).map(|k| k * b + p).collect();
                states.select_rows(&rows)
            })
            .collect())
    }

    pub fn fit(ds: &TrajectoryDataset, config: TrajPredConfig) -> Result<TrajPred> {
        let mut model = TrajPred::new(ds, config)?;
        model.train_net(ds)?;
        Ok(model)
    }
}
