//! State prediction: an autoencoder whose encoded snapshots are fitted by a
//! truncated-SVD Koopman operator every epoch, with the fit's continuous
//! eigenvalues used to evolve the encoding to any real index.
//!
//! The fit is built on the autodiff tape, so the losses differentiate
//! through the SVD, the eigendecomposition and the pseudoinverse back into
//! the encoder.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{evolve_coefficients, Activation, Tape, Var};
use crate::data::{IndexMap, Scaler, SnapshotDataset, Snapshots};
use crate::error::{Error, Result};
use crate::metrics::{
    anae_or_nan, k_regularizer, total_loss, EpochMetrics, LossTerms, LossWeights, ModelKind,
    RunStats, SplitMetrics,
};
use crate::nets::{build_autoencoder, Adam, Autoencoder, BoundAutoencoder, MlpSpec};
use crate::tensor::{CMatrix, RMatrix, C64};

/// Modes whose eigenvalue magnitude is below this fall back to projected
/// eigenvectors in exact mode.
pub const EXACT_MODE_MIN_EIGENVALUE: f64 = 1e-12;

/// Imaginary parts of an evolution larger than this fraction of its real
/// parts are reported.
pub const IMAGINARY_RESIDUAL_TOL: f64 = 1e-4;

/// How the encoded-space modes are recovered from the reduced operator's
/// eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigvecMode {
    /// `W = U_r W~`.
    #[default]
    Projected,
    /// `W = Y_next V_r S_r^-1 W~ diag(1/lambda)`.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatePredConfig {
    pub rank: usize,
    pub encoded_size: usize,
    #[serde(default)]
    pub encoder_hidden_layers: Vec<usize>,
    /// Mirror of the encoder when absent.
    #[serde(default)]
    pub decoder_hidden_layers: Option<Vec<usize>>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_numepochs")]
    pub numepochs: usize,
    /// `alpha`: weight of reconstruction and prediction losses.
    #[serde(default = "default_decoder_loss_weight")]
    pub decoder_loss_weight: f64,
    /// `beta`: autoencoder weight decay.
    #[serde(default)]
    pub weight_decay: f64,
    /// `gamma`: penalty on the encoded-space Koopman matrix.
    #[serde(default, rename = "Kreg", alias = "kreg")]
    pub kreg: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eigvec_mode: EigvecMode,
    /// Stops gradients at the eigendecomposition of the reduced operator.
    #[serde(default)]
    pub detach_eig_gradient: bool,
    #[serde(default = "default_true")]
    pub scale_features: bool,
    /// Reference elements with `|p| <= threshold` are left out of ANAE; zero
    /// means exactly-zero references only.
    #[serde(default)]
    pub anae_zero_threshold: f64,
}

pub(crate) fn default_numepochs() -> usize {
    500
}
pub(crate) fn default_decoder_loss_weight() -> f64 {
    1e-2
}
pub(crate) fn default_lr() -> f64 {
    1e-3
}
pub(crate) fn default_true() -> bool {
    true
}

impl StatePredConfig {
    pub fn new(rank: usize, encoded_size: usize) -> Self {
        StatePredConfig {
            rank,
            encoded_size,
            encoder_hidden_layers: Vec::new(),
            decoder_hidden_layers: None,
            activation: Activation::Tanh,
            numepochs: default_numepochs(),
            decoder_loss_weight: default_decoder_loss_weight(),
            weight_decay: 0.0,
            kreg: 0.0,
            learning_rate: default_lr(),
            seed: 0,
            eigvec_mode: EigvecMode::Projected,
            detach_eig_gradient: false,
            scale_features: true,
            anae_zero_threshold: 0.0,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.decoder_loss_weight,
            beta: self.weight_decay,
            gamma: self.kreg,
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
        if self.rank == 0 || self.rank > self.encoded_size {
            return Err(Error::RankTooLarge {
                requested: self.rank,
                available: self.encoded_size,
            });
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

/// A fitted Koopman operator in eigen form, for evolution
/// `y(i) = Re(W diag(exp(omega i)) b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopmanEigen {
    /// `encoded_size x r` modes.
    pub w: CMatrix,
    /// `r x 1` discrete eigenvalues.
    pub lambda: CMatrix,
    /// `r x 1` principal logarithms of `lambda`.
    pub omega: CMatrix,
    /// `r x 1` initial coefficients `W^+ y0`.
    pub b: CMatrix,
    /// Full encoded-space operator `Y_next V_r S_r^-1 U_r^T`.
    pub k: RMatrix,
}

impl KoopmanEigen {
    pub fn rank(&self) -> usize {
        self.lambda.rows()
    }

    /// Encoded states as columns, one per internal index, with the largest
    /// imaginary part relative to the largest real part.
    pub fn evolve_with_residual(&self, indexes: &[f64]) -> (RMatrix, f64) {
        let coeffs = evolve_coefficients(self.omega.as_slice(), self.b.as_slice(), indexes);
        let y = self.w.matmul_unchecked(&coeffs);
        let re = y.re();
        let im = y.im().max_abs();
        let scale = re.max_abs();
        let ratio = if scale > 0.0 { im / scale } else { im };
        (re, ratio)
    }

    pub fn evolve(&self, indexes: &[f64]) -> RMatrix {
        let (y, ratio) = self.evolve_with_residual(indexes);
        if ratio > IMAGINARY_RESIDUAL_TOL {
            warn!("evolution has imaginary residual {ratio:.2e} relative to its real part");
        }
        y
    }

    /// Refits with a different base state: the coefficients of `y` after
    /// evolving by `i`.
    pub fn advanced(&self, i: f64) -> KoopmanEigen {
        let b = CMatrix::from_fn(self.rank(), 1, |k, _| {
            (self.omega[(k, 0)] * i).exp() * self.b[(k, 0)]
        });
        KoopmanEigen { b, ..self.clone() }
    }
}

/// Tape handles of a Koopman fit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FitVars {
    pub w: Var,
    pub lambda: Var,
    pub omega: Var,
    pub b: Var,
    pub k: Var,
}

impl FitVars {
    fn constants(tape: &mut Tape, ke: &KoopmanEigen) -> FitVars {
        FitVars {
            w: tape.constant(ke.w.clone()),
            lambda: tape.constant(ke.lambda.clone()),
            omega: tape.constant(ke.omega.clone()),
            b: tape.constant(ke.b.clone()),
            k: tape.constant(ke.k.clone()),
        }
    }

    fn extract(&self, tape: &Tape) -> Result<KoopmanEigen> {
        Ok(KoopmanEigen {
            w: tape.complex(self.w)?.clone(),
            lambda: tape.complex(self.lambda)?.clone(),
            omega: tape.complex(self.omega)?.clone(),
            b: tape.complex(self.b)?.clone(),
            k: tape.real(self.k)?.clone(),
        })
    }
}

/// Column positions `(prev, next)` of every pair of consecutive internal
/// indexes.
pub(crate) fn consecutive_pairs(indexes: &[i64]) -> (Vec<usize>, Vec<usize>) {
    let mut prev = Vec::new();
    let mut next = Vec::new();
    for (p, w) in indexes.windows(2).enumerate() {
        if w[1] == w[0] + 1 {
            prev.push(p);
            next.push(p + 1);
        }
    }
    (prev, next)
}

/// Fits the Koopman operator to encoded states `y` (columns at the sorted
/// internal `indexes`, the first being index 0) on the tape.
pub(crate) fn fit_on_tape(
    tape: &mut Tape,
    y: Var,
    indexes: &[i64],
    rank: usize,
    mode: EigvecMode,
    detach_eig: bool,
) -> Result<FitVars> {
    let (prev, next) = consecutive_pairs(indexes);
    if prev.is_empty() {
        return Err(Error::DegenerateIndexes(
            "no two training snapshots are one index step apart".into(),
        ));
    }
    let y_prev = tape.select_columns(y, &prev)?;
    let y_next = tape.select_columns(y, &next)?;
    let svd = tape.svd_truncated(y_prev, rank)?;
    if svd.rank < rank {
        debug!(
            "encoded snapshots have numerical rank {} < {rank}",
            svd.rank
        );
    }
    let s_inv = tape.reciprocal(svd.s);
    let v_scaled = tape.mul_columns(svd.v, s_inv)?;
    let b_mat = tape.matmul(y_next, v_scaled)?;
    let ut = tape.transpose(svd.u);
    let k_reduced = tape.matmul(ut, b_mat)?;
    let k_full = tape.matmul(b_mat, ut)?;

    let eig_input = if detach_eig {
        tape.detach(k_reduced)
    } else {
        k_reduced
    };
    let eig = tape.eig(eig_input)?;
    let lambda = tape.complex(eig.values)?.clone();
    if let Some(k) = lambda.as_slice().iter().position(|l| l.norm() == 0.0) {
        return Err(Error::ZeroEigenvalue(k));
    }

    let u_c = tape.to_complex(svd.u)?;
    let projected = tape.matmul(u_c, eig.vectors)?;
    let w = match mode {
        EigvecMode::Projected => projected,
        EigvecMode::Exact => {
            let b_c = tape.to_complex(b_mat)?;
            let lifted = tape.matmul(b_c, eig.vectors)?;
            let inv = tape.reciprocal(eig.values);
            let exact = tape.mul_columns(lifted, inv)?;
            let small: Vec<usize> = (0..lambda.rows())
                .filter(|&k| lambda[(k, 0)].norm() < EXACT_MODE_MIN_EIGENVALUE)
                .collect();
            if small.is_empty() {
                exact
            } else {
                warn!(
                    "exact eigenvectors: {} near-zero eigenvalues use projected modes",
                    small.len()
                );
                let cols = (0..lambda.rows())
                    .map(|k| {
                        let src = if small.contains(&k) { projected } else { exact };
                        tape.select_columns(src, &[k])
                    })
                    .collect::<Result<Vec<_>>>()?;
                tape.concat_columns(&cols)?
            }
        }
    };
    let omega = tape.log(eig.values)?;
    let y0 = tape.select_columns(y, &[0])?;
    let y0 = tape.to_complex(y0)?;
    let w_pinv = tape.pinv(w)?;
    let b = tape.matmul(w_pinv, y0)?;
    Ok(FitVars {
        w,
        lambda: eig.values,
        omega,
        b,
        k: k_full,
    })
}

/// Fits the Koopman operator to encoded states given as columns, ordered by
/// their (sorted, distinct) internal indexes starting at 0.
pub fn koopman_fit(
    y: &RMatrix,
    indexes: &[i64],
    rank: usize,
    mode: EigvecMode,
) -> Result<KoopmanEigen> {
    if indexes.len() != y.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{} encoded states but {} indexes",
            y.cols(),
            indexes.len()
        )));
    }
    let mut tape = Tape::new();
    let yv = tape.constant(y.clone());
    fit_on_tape(&mut tape, yv, indexes, rank, mode, false)?.extract(&tape)
}

/// Loss nodes and the pieces the ANAE metrics need.
struct SplitForward {
    recon: Var,
    lin: Option<Var>,
    pred: Option<Var>,
    recon_out: Var,
    encoded_kept: Option<Var>,
    evolved: Option<Var>,
    pred_out: Option<Var>,
    kept: Vec<usize>,
}

/// States `x` (`d x n`, scaled) at internal `indexes`. Linearity and
/// prediction skip index 0, whose prediction is just the projection of the
/// base state.
fn split_forward(
    tape: &mut Tape,
    ae: &BoundAutoencoder,
    fit: &FitVars,
    x: Var,
    encoded: Var,
    indexes: &[f64],
) -> Result<SplitForward> {
    let recon_out = ae.decoder.forward(tape, encoded)?;
    let recon = tape.mse(recon_out, x)?;
    let kept: Vec<usize> = (0..indexes.len()).filter(|&k| indexes[k] != 0.0).collect();
    if kept.is_empty() {
        return Ok(SplitForward {
            recon,
            lin: None,
            pred: None,
            recon_out,
            encoded_kept: None,
            evolved: None,
            pred_out: None,
            kept,
        });
    }
    let idx: Vec<f64> = kept.iter().map(|&k| indexes[k]).collect();
    let coeffs = tape.complex_exp_evolve(fit.omega, fit.b, &idx)?;
    let evolved_c = tape.matmul(fit.w, coeffs)?;
    let evolved = tape.real_part(evolved_c)?;
    let encoded_kept = tape.select_columns(encoded, &kept)?;
    let lin = tape.mse(encoded_kept, evolved)?;
    let pred_out = ae.decoder.forward(tape, evolved)?;
    let x_kept = tape.select_columns(x, &kept)?;
    let pred = tape.mse(pred_out, x_kept)?;
    Ok(SplitForward {
        recon,
        lin: Some(lin),
        pred: Some(pred),
        recon_out,
        encoded_kept: Some(encoded_kept),
        evolved: Some(evolved),
        pred_out: Some(pred_out),
        kept,
    })
}

/// A split prepared for evaluation: scaled states as columns, the raw
/// states as columns, and internal indexes.
struct PreparedSplit {
    x_scaled: RMatrix,
    x_raw: RMatrix,
    indexes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatePred {
    pub config: StatePredConfig,
    pub autoencoder: Autoencoder,
    pub scaler: Scaler,
    pub index_map: IndexMap,
    /// Fit from the current parameters; `None` until trained.
    pub eigen: Option<KoopmanEigen>,
    #[serde(skip)]
    pub stats: RunStats,
}

impl StatePred {
    /// Initializes the network from the config seed and fits the scaler to
    /// the training split.
    pub fn new(ds: &SnapshotDataset, config: StatePredConfig) -> Result<Self> {
        config.validate()?;
        let (enc, dec) = config.specs(ds.dim());
        let autoencoder = build_autoencoder(&enc, &dec, config.seed)?;
        let (prev, _) = consecutive_pairs(&ds.train_indexes);
        if config.rank > prev.len() {
            return Err(Error::RankTooLarge {
                requested: config.rank,
                available: prev.len(),
            });
        }
        let scaler = if config.scale_features {
            Scaler::fit([&ds.train.x])?
        } else {
            Scaler::identity(ds.dim())
        };
        Ok(StatePred {
            config,
            autoencoder,
            scaler,
            index_map: ds.index_map,
            eigen: None,
            stats: RunStats::default(),
        })
    }

    fn prepare(&self, s: &Snapshots, indexes: Vec<f64>) -> Result<PreparedSplit> {
        Ok(PreparedSplit {
            x_scaled: self.scaler.transform(&s.x)?.transpose(),
            x_raw: s.x.transpose(),
            indexes,
        })
    }

    fn prepare_train(&self, ds: &SnapshotDataset) -> Result<PreparedSplit> {
        let idx = ds.train_indexes.iter().map(|&i| i as f64).collect();
        self.prepare(&ds.train, idx)
    }

    fn prepare_mapped(&self, s: &Snapshots) -> Result<PreparedSplit> {
        let idx = s.t.iter().map(|&t| self.index_map.map(t)).collect();
        self.prepare(s, idx)
    }

    /// One forward pass; returns the total loss, per-term nodes and the fit.
    fn training_forward(
        &self,
        tape: &mut Tape,
        ae: &BoundAutoencoder,
        train: &PreparedSplit,
        train_indexes: &[i64],
    ) -> Result<(Var, SplitForward, FitVars)> {
        let x = tape.constant(train.x_scaled.clone());
        let encoded = ae.encoder.forward(tape, x)?;
        let fit = fit_on_tape(
            tape,
            encoded,
            train_indexes,
            self.config.rank,
            self.config.eigvec_mode,
            self.config.detach_eig_gradient,
        )?;
        let f = split_forward(tape, ae, &fit, x, encoded, &train.indexes)?;
        let total = self.total(tape, ae, &fit, &f)?;
        Ok((total, f, fit))
    }

    fn total(
        &self,
        tape: &mut Tape,
        ae: &BoundAutoencoder,
        fit: &FitVars,
        f: &SplitForward,
    ) -> Result<Var> {
        let nan = || RMatrix::from_vec(1, 1, vec![f64::NAN]);
        let lin = match f.lin {
            Some(v) => v,
            None => tape.constant(nan()?),
        };
        let pred = match f.pred {
            Some(v) => v,
            None => tape.constant(nan()?),
        };
        let terms = LossTerms {
            recon: f.recon,
            lin,
            pred,
            ae_decay: ae.weight_decay(tape)?,
            k_decay: k_regularizer(tape, ModelKind::StatePred, fit.k)?,
        };
        total_loss(tape, terms, self.config.weights())
    }

    fn metrics(
        &self,
        tape: &mut Tape,
        total: Var,
        f: &SplitForward,
        split: &PreparedSplit,
    ) -> Result<SplitMetrics> {
        let thr = self.config.anae_zero_threshold;
        let val = |tape: &Tape, v: Option<Var>| -> Result<f64> {
            v.map_or(Ok(f64::NAN), |v| tape.scalar(v))
        };
        let unscale = |m: &RMatrix| -> Result<RMatrix> {
            Ok(self.scaler.inverse(&m.transpose())?.transpose())
        };
        let recon_anae = anae_or_nan(&split.x_raw, &unscale(tape.real(f.recon_out)?)?, thr)?;
        let (lin_anae, pred_anae) = match (f.encoded_kept, f.evolved, f.pred_out) {
            (Some(e), Some(ev), Some(p)) => {
                let x_kept = split.x_raw.select_columns(&f.kept)?;
                (
                    anae_or_nan(tape.real(e)?, tape.real(ev)?, thr)?,
                    anae_or_nan(&x_kept, &unscale(tape.real(p)?)?, thr)?,
                )
            }
            _ => (f64::NAN, f64::NAN),
        };
        Ok(SplitMetrics {
            recon_loss: tape.scalar(f.recon)?,
            lin_loss: val(tape, f.lin)?,
            pred_loss: val(tape, f.pred)?,
            total_loss: tape.scalar(total)?,
            recon_anae,
            lin_anae,
            pred_anae,
        })
    }

    /// Metrics of a split against a fixed fit, without gradients.
    fn evaluate_split(&self, ke: &KoopmanEigen, split: &PreparedSplit) -> Result<SplitMetrics> {
        let mut tape = Tape::new();
        let ae = self.autoencoder.bind(&mut tape, false);
        let fit = FitVars::constants(&mut tape, ke);
        let x = tape.constant(split.x_scaled.clone());
        let encoded = ae.encoder.forward(&mut tape, x)?;
        let f = split_forward(&mut tape, &ae, &fit, x, encoded, &split.indexes)?;
        let total = self.total(&mut tape, &ae, &fit, &f)?;
        self.metrics(&mut tape, total, &f, split)
    }

    /// Refits the operator to the current parameters without gradients.
    fn refit(&self, train: &PreparedSplit, train_indexes: &[i64]) -> Result<KoopmanEigen> {
        let mut tape = Tape::new();
        let ae = self.autoencoder.bind(&mut tape, false);
        let x = tape.constant(train.x_scaled.clone());
        let encoded = ae.encoder.forward(&mut tape, x)?;
        let fit = fit_on_tape(
            &mut tape,
            encoded,
            train_indexes,
            self.config.rank,
            self.config.eigvec_mode,
            false,
        )?;
        fit.extract(&tape)
    }

    /// Runs `numepochs` epochs of full-batch training. Each epoch takes one
    /// optimizer step and then records metrics of the updated parameters.
    pub fn train_net(&mut self, ds: &SnapshotDataset) -> Result<&RunStats> {
        let train = self.prepare_train(ds)?;
        let val = ds
            .val
            .as_ref()
            .map(|s| self.prepare_mapped(s))
            .transpose()?;
        let mut opt = Adam::new(self.config.learning_rate, &self.autoencoder.tensors());
        self.stats = RunStats::default();
        self.eigen = Some(
            self.refit(&train, &ds.train_indexes)
                .map_err(|e| e.at_epoch(0))?,
        );
        for epoch in 1..=self.config.numepochs {
            self.epoch(&mut opt, &train, val.as_ref(), &ds.train_indexes)
                .map_err(|e| e.at_epoch(epoch))
                .map(|(ke, train_m, val_m)| {
                    self.eigen = Some(ke);
                    self.stats.epochs.push(EpochMetrics {
                        epoch,
                        train: train_m,
                        val: val_m,
                    });
                })?;
            if epoch % 100 == 0 || epoch == self.config.numepochs {
                let m = &self.stats.epochs[epoch - 1].train;
                debug!(
                    "epoch {epoch}: loss {:.4e}, pred ANAE {:.3}%",
                    m.total_loss, m.pred_anae
                );
            }
        }
        Ok(&self.stats)
    }

    fn epoch(
        &mut self,
        opt: &mut Adam,
        train: &PreparedSplit,
        val: Option<&PreparedSplit>,
        train_indexes: &[i64],
    ) -> Result<(KoopmanEigen, SplitMetrics, Option<SplitMetrics>)> {
        let grads = self.gradients(train, train_indexes)?;
        let grad_refs: Vec<&RMatrix> = grads.iter().collect();
        opt.step(&mut self.autoencoder.tensors_mut(), &grad_refs)?;

        let mut tape = Tape::new();
        let ae = self.autoencoder.bind(&mut tape, false);
        let (total, f, fit) = self.training_forward(&mut tape, &ae, train, train_indexes)?;
        let train_m = self.metrics(&mut tape, total, &f, train)?;
        let ke = fit.extract(&tape)?;
        let val_m = val.map(|v| self.evaluate_split(&ke, v)).transpose()?;
        Ok((ke, train_m, val_m))
    }

    /// Loss gradient for every autoencoder tensor, in `tensors()` order.
    fn gradients(&self, train: &PreparedSplit, train_indexes: &[i64]) -> Result<Vec<RMatrix>> {
        let mut tape = Tape::new();
        let ae = self.autoencoder.bind(&mut tape, true);
        let (total, _, _) = self.training_forward(&mut tape, &ae, train, train_indexes)?;
        let loss = tape.scalar(total)?;
        if !loss.is_finite() {
            return Err(Error::NonScalarLoss(format!("loss is {loss}")));
        }
        let g = tape.backward(total)?;
        ae.vars().into_iter().map(|v| g.real(v).cloned()).collect()
    }

    /// Training loss of the current parameters.
    fn loss(&self, train: &PreparedSplit, train_indexes: &[i64]) -> Result<f64> {
        let mut tape = Tape::new();
        let ae = self.autoencoder.bind(&mut tape, false);
        let (total, _, _) = self.training_forward(&mut tape, &ae, train, train_indexes)?;
        tape.scalar(total)
    }

    /// Training loss of the current parameters, with the spectral fit taken
    /// on the same forward pass.
    pub fn training_loss(&self, ds: &SnapshotDataset) -> Result<f64> {
        self.loss(&self.prepare_train(ds)?, &ds.train_indexes)
    }

    /// Gradient of `training_loss` for every autoencoder tensor, in
    /// `Autoencoder::tensors` order.
    pub fn training_gradients(&self, ds: &SnapshotDataset) -> Result<Vec<RMatrix>> {
        self.gradients(&self.prepare_train(ds)?, &ds.train_indexes)
    }

    /// Metrics of the trained model on the test split.
    pub fn test_net(&self, ds: &SnapshotDataset) -> Result<SplitMetrics> {
        let ke = self.eigen.as_ref().ok_or(Error::NotTrained)?;
        let test = ds.test.as_ref().ok_or(Error::NoTestSplit)?;
        self.evaluate_split(ke, &self.prepare_mapped(test)?)
    }

    /// Predicted states (one row each) at user indexes `t`, which may lie
    /// between, before or after the training indexes.
    pub fn predict_new(&self, t: &[f64]) -> Result<RMatrix> {
        let ke = self.eigen.as_ref().ok_or(Error::NotTrained)?;
        let idx: Vec<f64> = t.iter().map(|&x| self.index_map.map(x)).collect();
        let encoded = ke.evolve(&idx);
        let decoded = self.autoencoder.decoder.forward(&encoded)?;
        self.scaler.inverse(&decoded.transpose())
    }

    /// Encoded-space evolution at user indexes, as columns.
    pub fn predict_encoded(&self, t: &[f64]) -> Result<RMatrix> {
        let ke = self.eigen.as_ref().ok_or(Error::NotTrained)?;
        let idx: Vec<f64> = t.iter().map(|&x| self.index_map.map(x)).collect();
        Ok(ke.evolve(&idx))
    }

    /// Builds and trains in one call.
    pub fn fit(ds: &SnapshotDataset, config: StatePredConfig) -> Result<StatePred> {
        let mut model = StatePred::new(ds, config)?;
        model.train_net(ds)?;
        Ok(model)
    }
}

/// Complex scalar helper for tests and callers building eigen data by hand.
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
