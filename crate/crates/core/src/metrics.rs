//! Loss terms, the composite training loss, and the average normalized
//! absolute error (ANAE).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::RMatrix;

/// Mean of squared elementwise differences.
pub fn mse(p: &RMatrix, q: &RMatrix) -> Result<f64> {
    p.check_same_shape(q, "mse")?;
    let n = p.len().max(1) as f64;
    let sum: f64 = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

/// ANAE in percent between reference `p` and prediction `q`, both
/// flattened. Elements with `p_i == 0` are skipped.
pub fn anae(p: &[f64], q: &[f64]) -> Result<f64> {
    anae_with_threshold(p, q, 0.0)
}

/// ANAE over elements with `|p_i| > zero_threshold`. A threshold of zero is
/// the exact `p_i != 0` test.
pub fn anae_with_threshold(p: &[f64], q: &[f64], zero_threshold: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "anae: {} reference vs {} predicted elements",
            p.len(),
            q.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&a, &b) in p.iter().zip(q) {
        let qualifies = if zero_threshold > 0.0 {
            a.abs() > zero_threshold
        } else {
            a != 0.0
        };
        if qualifies {
            sum += (a - b).abs() / a.abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::AllReferenceZero);
    }
    Ok(100.0 * sum / count as f64)
}

pub(crate) fn anae_matrix(p: &RMatrix, q: &RMatrix, zero_threshold: f64) -> Result<f64> {
    p.check_same_shape(q, "anae")?;
    anae_with_threshold(p.as_slice(), q.as_slice(), zero_threshold)
}

/// Coefficients of the composite loss
/// `L = L_lin + alpha (L_recon + L_pred) + beta L_autoencoder + gamma L_K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the decoder outputs (reconstruction and prediction).
    pub alpha: f64,
    /// Autoencoder weight decay.
    pub beta: f64,
    /// Koopman operator penalty.
    pub gamma: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The scalar loss nodes combined by [`total_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub recon: Var,
    pub lin: Var,
    pub pred: Var,
    pub ae_decay: Var,
    pub k_decay: Var,
}

pub fn total_loss(tape: &mut Tape, t: LossTerms, w: LossWeights) -> Result<Var> {
    let decoder = tape.add(t.recon, t.pred)?;
    let decoder = tape.scale(decoder, w.alpha);
    let ae = tape.scale(t.ae_decay, w.beta);
    let k = tape.scale(t.k_decay, w.gamma);
    let l = tape.add(t.lin, decoder)?;
    let l = tape.add(l, ae)?;
    tape.add(l, k)
}

/// Which Koopman model a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    StatePred,
    TrajPred,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::StatePred => "statepred",
            ModelKind::TrajPred => "trajpred",
        }
    }
}

/// Penalty on the Koopman operator: mean absolute entry for the
/// SVD-fitted operator, sum of squares (weight decay) for the linear layer.
pub fn k_regularizer(tape: &mut Tape, kind: ModelKind, k: Var) -> Result<Var> {
    match kind {
        ModelKind::StatePred => tape.l1_mean(k),
        ModelKind::TrajPred => Ok(tape.sum_squares(k)),
    }
}

/// Base metric names, in stats-file column order.
pub const METRIC_NAMES: [&str; 6] = [
    "recon_loss",
    "lin_loss",
    "pred_loss",
    "recon_anae",
    "lin_anae",
    "pred_anae",
];

/// Split suffixes used in column names and sort keys.
pub const SPLIT_SUFFIXES: [&str; 2] = ["tr", "va"];

/// Losses and ANAEs (percent) of one model evaluation on one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub recon_loss: f64,
    pub lin_loss: f64,
    pub pred_loss: f64,
    pub total_loss: f64,
    pub recon_anae: f64,
    pub lin_anae: f64,
    pub pred_anae: f64,
}

impl SplitMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "recon_loss" => self.recon_loss,
            "lin_loss" => self.lin_loss,
            "pred_loss" => self.pred_loss,
            "total_loss" => self.total_loss,
            "recon_anae" => self.recon_anae,
            "lin_anae" => self.lin_anae,
            "pred_anae" => self.pred_anae,
            _ => return None,
        })
    }

    fn from_fields(values: &[f64; 6]) -> Self {
        SplitMetrics {
            recon_loss: values[0],
            lin_loss: values[1],
            pred_loss: values[2],
            total_loss: f64::NAN,
            recon_anae: values[3],
            lin_anae: values[4],
            pred_anae: values[5],
        }
    }
}

/// ANAE that reports NaN instead of failing when no reference element is
/// nonzero, so one degenerate split does not abort a run.
pub(crate) fn anae_or_nan(p: &RMatrix, q: &RMatrix, zero_threshold: f64) -> Result<f64> {
    match anae_matrix(p, q, zero_threshold) {
        Ok(v) => Ok(v),
        Err(Error::AllReferenceZero) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train: SplitMetrics,
    pub val: Option<SplitMetrics>,
}

/// Everything recorded during one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub epochs: Vec<EpochMetrics>,
    pub test: Option<SplitMetrics>,
}

impl RunStats {
    /// Value of a sort key such as `avg_pred_anae_va` or
    /// `final_recon_loss_tr`. `None` if the key is malformed; NaN if the
    /// metric was never recorded.
    pub fn summary(&self, key: &str) -> Option<f64> {
        let (agg, rest) = key.split_once('_')?;
        let (metric, split) = rest.rsplit_once('_')?;
        if !METRIC_NAMES.contains(&metric) {
            return None;
        }
        let pick = |e: &EpochMetrics| -> Option<f64> {
            match split {
                "tr" => e.train.get(metric),
                "va" => e.val.as_ref().and_then(|v| v.get(metric)),
                _ => None,
            }
        };
        if !SPLIT_SUFFIXES.contains(&split) {
            return None;
        }
        match agg {
            "final" => Some(self.epochs.last().and_then(pick).unwrap_or(f64::NAN)),
            "avg" => {
                let vals: Vec<f64> = self.epochs.iter().filter_map(pick).collect();
                if vals.is_empty() {
                    Some(f64::NAN)
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            }
            _ => None,
        }
    }

    /// Every sort key, in a fixed order.
    pub fn sort_keys() -> Vec<String> {
        let mut keys = Vec::new();
        for agg in ["final", "avg"] {
            for split in SPLIT_SUFFIXES {
                for m in METRIC_NAMES {
                    keys.push(format!("{agg}_{m}_{split}"));
                }
            }
        }
        keys
    }

    /// Column names of the stats CSV.
    pub fn stats_header() -> Vec<String> {
        let mut h = vec!["epoch".to_string()];
        for split in SPLIT_SUFFIXES {
            for m in METRIC_NAMES {
                h.push(format!("{m}_{split}"));
            }
        }
        h
    }

    /// One row per epoch; validation columns are empty when absent.
    pub fn write_stats_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(Self::stats_header()).map_err(csv_err)?;
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string()];
            for split in [Some(&e.train), e.val.as_ref()] {
                for m in METRIC_NAMES {
                    row.push(match split {
                        Some(s) => format_float(s.get(m).expect("known metric")),
                        None => String::new(),
                    });
                }
            }
            wtr.write_record(&row).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Parses a stats CSV back into per-epoch metrics (total loss is not
    /// part of the file and comes back as NaN).
    pub fn read_stats_csv<R: Read>(r: R) -> Result<Vec<EpochMetrics>> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        if header != Self::stats_header() {
            return Err(Error::ParseError(format!(
                "unexpected stats header: {}",
                header.join(",")
            )));
        }
        let mut out = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let epoch = rec[0]
                .parse()
                .map_err(|_| Error::ParseError(format!("row {}: bad epoch", line + 1)))?;
            let mut splits: [Option<[f64; 6]>; 2] = [None, None];
            for (si, slot) in splits.iter_mut().enumerate() {
                let cells: Vec<&str> = (0..6).map(|k| &rec[1 + si * 6 + k]).collect();
                if cells.iter().all(|c| c.is_empty()) {
                    continue;
                }
                let mut vals = [0.0; 6];
                for (k, c) in cells.iter().enumerate() {
                    vals[k] = c.parse().map_err(|_| {
                        Error::ParseError(format!("row {}: bad number `{c}`", line + 1))
                    })?;
                }
                *slot = Some(vals);
            }
            let train = splits[0].ok_or_else(|| {
                Error::ParseError(format!("row {}: missing training metrics", line + 1))
            })?;
            out.push(EpochMetrics {
                epoch,
                train: SplitMetrics::from_fields(&train),
                val: splits[1].as_ref().map(SplitMetrics::from_fields),
            });
        }
        Ok(out)
    }
}

/// Shortest representation that parses back to the same bits.
pub(crate) fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:?}")
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::ParseError(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn anae_worked_example() {
        let p = [-0.1, 0.2, 0.0, 100.0, 200.0, 300.0];
        let q = [-0.11, 0.15, 0.01, 105.0, 210.0, 285.0];
        assert!((anae(&p, &q).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn anae_identity_and_degenerate() {
        let x = [1.0, -2.0, 3.5];
        assert_eq!(anae(&x, &x).unwrap(), 0.0);
        assert!(matches!(
            anae(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]),
            Err(Error::AllReferenceZero)
        ));
    }

    #[test]
    fn anae_threshold_skips_small_references() {
        let p = [1e-9, 1.0];
        let q = [1.0, 1.1];
        assert!(anae(&p, &q).unwrap() > 1e8);
        assert!((anae_with_threshold(&p, &q, 1e-6).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mse_examples() {
        let x = RMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        let z = RMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let o = RMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(mse(&z, &o).unwrap(), 1.0);
        assert!(mse(&x, &RMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn mse_matches_compensated_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let p = RMatrix::from_fn(n, 1, |_, _| rng.random_range(-10.0..10.0));
        let q = RMatrix::from_fn(n, 1, |_, _| rng.random_range(-10.0..10.0));
        // Kahan-compensated sum of squared differences.
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for i in 0..n {
            let d = p[(i, 0)] - q[(i, 0)];
            let y = d * d - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        let reference = sum / n as f64;
        assert!((mse(&p, &q).unwrap() - reference).abs() <= 1e-12 * reference.max(1.0));
    }

    fn scalar(tape: &mut Tape, v: f64) -> Var {
        tape.param(RMatrix::from_vec(1, 1, vec![v]).unwrap())
    }

    #[test]
    fn total_loss_examples() {
        let mut tape = Tape::new();
        let terms = LossTerms {
            recon: scalar(&mut tape, 1.0),
            lin: scalar(&mut tape, 0.0),
            pred: scalar(&mut tape, 1.0),
            ae_decay: scalar(&mut tape, 3.0),
            k_decay: scalar(&mut tape, 5.0),
        };
        let w = LossWeights {
            alpha: 0.1,
            beta: 0.0,
            gamma: 0.0,
        };
        let l = total_loss(&mut tape, terms, w).unwrap();
        assert!((tape.scalar(l).unwrap() - 0.2).abs() < 1e-15);

        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let l0 = total_loss(&mut tape, terms, zero).unwrap();
        assert_eq!(tape.scalar(l0).unwrap(), tape.scalar(terms.lin).unwrap());
    }

    #[test]
    fn total_loss_gradient_is_the_coefficients() {
        let mut tape = Tape::new();
        let terms = LossTerms {
            recon: scalar(&mut tape, 0.3),
            lin: scalar(&mut tape, 0.7),
            pred: scalar(&mut tape, 1.1),
            ae_decay: scalar(&mut tape, 2.0),
            k_decay: scalar(&mut tape, 4.0),
        };
        let w = LossWeights {
            alpha: 0.25,
            beta: 1e-3,
            gamma: 7.0,
        };
        let l = total_loss(&mut tape, terms, w).unwrap();
        let g = tape.backward(l).unwrap();
        let d = |v| g.real(v).unwrap()[(0, 0)];
        assert_eq!(d(terms.lin), 1.0);
        assert_eq!(d(terms.recon), 0.25);
        assert_eq!(d(terms.pred), 0.25);
        assert_eq!(d(terms.ae_decay), 1e-3);
        assert_eq!(d(terms.k_decay), 7.0);
    }

    #[test]
    fn k_regularizer_examples() {
        let mut tape = Tape::new();
        let zero = tape.constant(RMatrix::zeros(2, 2));
        let r = k_regularizer(&mut tape, ModelKind::StatePred, zero).unwrap();
        assert_eq!(tape.scalar(r).unwrap(), 0.0);

        let k = tape.constant(RMatrix::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.0]]).unwrap());
        let r = k_regularizer(&mut tape, ModelKind::StatePred, k).unwrap();
        assert_eq!(tape.scalar(r).unwrap(), 1.0);

        let eye = tape.constant(RMatrix::identity(2));
        let r = k_regularizer(&mut tape, ModelKind::TrajPred, eye).unwrap();
        assert_eq!(tape.scalar(r).unwrap(), 2.0);
    }

    #[test]
    fn summary_keys() {
        let m = |v: f64| SplitMetrics {
            recon_loss: v,
            lin_loss: v,
            pred_loss: v,
            total_loss: v,
            recon_anae: v,
            lin_anae: v,
            pred_anae: v,
        };
        let stats = RunStats {
            epochs: vec![
                EpochMetrics {
                    epoch: 1,
                    train: m(1.0),
                    val: Some(m(4.0)),
                },
                EpochMetrics {
                    epoch: 2,
                    train: m(3.0),
                    val: Some(m(2.0)),
                },
            ],
            test: None,
        };
        assert_eq!(stats.summary("avg_pred_anae_va"), Some(3.0));
        assert_eq!(stats.summary("final_recon_loss_tr"), Some(3.0));
        assert_eq!(stats.summary("best_pred_anae_va"), None);
        assert_eq!(stats.summary("avg_total_loss_va"), None);
        assert_eq!(RunStats::sort_keys().len(), 24);
    }

    #[test]
    fn stats_csv_keeps_columns_without_validation() {
        let m = SplitMetrics {
            recon_loss: 0.5,
            lin_loss: 0.25,
            pred_loss: 1.0 / 3.0,
            total_loss: 1.0,
            recon_anae: 12.0,
            lin_anae: 1.5,
            pred_anae: 7.0,
        };
        let stats = RunStats {
            epochs: vec![EpochMetrics {
                epoch: 1,
                train: m,
                val: None,
            }],
            test: None,
        };
        let mut buf = Vec::new();
        stats.write_stats_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap().split(',').count(), 13);
        assert!(text.lines().nth(1).unwrap().ends_with(",,,,,,"));
        let back = RunStats::read_stats_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0].train.pred_loss, 1.0 / 3.0);
        assert!(back[0].val.is_none());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
            prop::collection::vec((0.01f64..100.0, -100.0f64..100.0), 1..40).prop_flat_map(|v| {
                let n = v.len();
                (Just(v), prop::collection::vec(any::<bool>(), n)).prop_map(|(v, s)| {
                    v.into_iter()
                        .zip(s)
                        .map(|((a, b), neg)| (if neg { -a } else { a }, b))
                        .collect()
                })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn scale_equivariant(v in pairs(), c in prop_oneof![0.001f64..1000.0, -1000.0f64..-0.001]) {
                let (p, q): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
                let base = anae(&p, &q).unwrap();
                let sp: Vec<f64> = p.iter().map(|x| c * x).collect();
                let sq: Vec<f64> = q.iter().map(|x| c * x).collect();
                let scaled = anae(&sp, &sq).unwrap();
                prop_assert!((scaled - base).abs() <= 1e-9 * base.max(1.0));
            }

            #[test]
            fn zero_references_are_ignored(v in pairs(), at in any::<prop::sample::Index>(), junk in -5.0f64..5.0) {
                let (mut p, mut q): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
                let base = anae(&p, &q).unwrap();
                let i = at.index(p.len() + 1);
                p.insert(i, 0.0);
                q.insert(i, junk);
                prop_assert_eq!(anae(&p, &q).unwrap(), base);
            }

            #[test]
            fn nonnegative_and_zero_at_identity(v in pairs()) {
                let (p, q): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
                prop_assert!(anae(&p, &q).unwrap() >= 0.0);
                prop_assert_eq!(anae(&p, &p).unwrap(), 0.0);
            }
        }
    }
}
