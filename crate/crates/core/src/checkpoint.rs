//! Trained models as a versioned JSON envelope. Metadata (config, shapes,
//! scaler, index map) is plain JSON; every weight matrix is a base64 payload
//! of little-endian `f64`s, so a loaded model predicts bit-for-bit as the
//! saved one did.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ModelKind;
use crate::statepred::StatePred;
use crate::trajpred::TrajPred;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum Model {
    StatePred(Box<StatePred>),
    TrajPred(Box<TrajPred>),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::StatePred(_) => ModelKind::StatePred,
            Model::TrajPred(_) => ModelKind::TrajPred,
        }
    }
}

impl From<StatePred> for Model {
    fn from(m: StatePred) -> Self {
        Model::StatePred(Box::new(m))
    }
}

impl From<TrajPred> for Model {
    fn from(m: TrajPred) -> Self {
        Model::TrajPred(Box::new(m))
    }
}

#[derive(Serialize)]
struct EnvelopeRef<'a> {
    schema_version: u32,
    #[serde(flatten)]
    model: &'a Model,
}

#[derive(Deserialize)]
struct Envelope {
    #[serde(flatten)]
    model: Model,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

pub fn to_json(model: &Model) -> Result<String> {
    let env = EnvelopeRef {
        schema_version: SCHEMA_VERSION,
        model,
    };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| Error::Checkpoint(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<Model> {
    let probe: VersionProbe =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    match probe.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::Checkpoint(format!(
                "unsupported schema version {v} (this build reads {SCHEMA_VERSION})"
            )))
        }
        None => return Err(Error::Checkpoint("missing schema_version".into())),
    }
    let env: Envelope = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(env.model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SnapshotDataset, TrajectoryDataset};
    use crate::datagen::{gen_linear_snapshots, gen_linear_system};
    use crate::statepred::StatePredConfig;
    use crate::tensor::RMatrix;
    use crate::trajpred::TrajPredConfig;

    fn statepred() -> StatePred {
        let a = RMatrix::from_rows(&[vec![0.9, -0.2], vec![0.2, 0.9]]).unwrap();
        let s = gen_linear_snapshots(&a, &[1.0, 0.5], 9, 0.0, 0.5).unwrap();
        let ds = SnapshotDataset::new(s, None, None).unwrap();
        let mut cfg = StatePredConfig::new(2, 3);
        cfg.encoder_hidden_layers = vec![4];
        cfg.numepochs = 3;
        StatePred::fit(&ds, cfg).unwrap()
    }

    fn trajpred() -> TrajPred {
        let x0 = RMatrix::from_rows(&[vec![1.0, 0.0], vec![0.3, -0.7], vec![-0.5, 0.2]]).unwrap();
        let t = gen_linear_system(&RMatrix::diag(&[0.9, 0.7]), &x0, 6).unwrap();
        let ds = TrajectoryDataset::new(t, None, None).unwrap();
        let mut cfg = TrajPredConfig::new(2);
        cfg.numepochs = 3;
        TrajPred::fit(&ds, cfg).unwrap()
    }

    #[test]
    fn statepred_round_trip_predicts_identically() {
        let m = statepred();
        let t = [0.0, 1.25, 3.75, 21.0, -2.0];
        let before = m.predict_new(&t).unwrap();
        let text = to_json(&m.into()).unwrap();
        let Model::StatePred(back) = from_json(&text).unwrap() else {
            panic!("wrong kind")
        };
        assert_eq!(back.predict_new(&t).unwrap(), before);
        assert_eq!(to_json(&Model::StatePred(back)).unwrap(), text);
    }

    #[test]
    fn trajpred_round_trip_predicts_identically() {
        let m = trajpred();
        let x0 = RMatrix::from_rows(&[vec![0.1, 0.2], vec![-0.4, 0.4]]).unwrap();
        let before = m.predict_new(&x0, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&m.into(), &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.kind(), ModelKind::TrajPred);
        let Model::TrajPred(back) = back else {
            unreachable!()
        };
        assert_eq!(back.predict_new(&x0, 7).unwrap(), before);
    }

    #[test]
    fn version_and_payload_are_checked() {
        let text = to_json(&trajpred().into()).unwrap();
        let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
        assert!(matches!(from_json(&bumped), Err(Error::Checkpoint(m)) if m.contains("99")));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut obj = v.as_object().unwrap().clone();
        obj.remove("schema_version");
        assert!(from_json(&serde_json::Value::Object(obj).to_string()).is_err());
        assert!(from_json("{\"schema_version\": 1, \"kind\": \"other\"}").is_err());
        assert!(from_json("not json").is_err());
    }

    #[test]
    fn envelope_is_inspectable() {
        let text = to_json(&statepred().into()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["kind"], "statepred");
        assert_eq!(v["model"]["config"]["rank"], 2);
        assert_eq!(v["model"]["index_map"]["dt"], 0.5);
    }
}
