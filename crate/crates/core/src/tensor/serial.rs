//! Serde support for matrices: shape, element kind and the entries as
//! base64-encoded little-endian `f64` (real/imaginary interleaved for
//! complex), so values round-trip bit-exactly through JSON.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::matrix::{Matrix, Scalar, ScalarKind};

#[derive(Serialize, Deserialize)]
struct Encoded {
    rows: usize,
    cols: usize,
    kind: String,
    data: String,
}

fn parts_per_element(kind: ScalarKind) -> usize {
    match kind {
        ScalarKind::Real => 1,
        ScalarKind::Complex => 2,
    }
}

pub(crate) fn encode_f64s(values: impl IntoIterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

pub(crate) fn decode_f64s(text: &str) -> Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!(
            "payload length {} is not a multiple of 8",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl<T: Scalar> Serialize for Matrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let complex = T::KIND == ScalarKind::Complex;
        let flat = self.as_slice().iter().flat_map(|x| {
            let z = x.to_complex();
            if complex {
                vec![z.re, z.im]
            } else {
                vec![z.re]
            }
        });
        Encoded {
            rows: self.rows(),
            cols: self.cols(),
            kind: T::KIND.name().to_string(),
            data: encode_f64s(flat),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Matrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let enc = Encoded::deserialize(d)?;
        if enc.kind != T::KIND.name() {
            return Err(D::Error::custom(format!(
                "expected {} matrix, found {}",
                T::KIND.name(),
                enc.kind
            )));
        }
        let raw = decode_f64s(&enc.data).map_err(D::Error::custom)?;
        let per = parts_per_element(T::KIND);
        let data: Vec<T> = raw
            .chunks(per)
            .map(|c| T::from_complex(super::C64::new(c[0], c.get(1).copied().unwrap_or(0.0))))
            .collect();
        Matrix::from_vec(enc.rows, enc.cols, data).map_err(|e| D::Error::custom(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{CMatrix, RMatrix, C64};

    #[test]
    fn real_and_complex_round_trip_bit_exactly() {
        let r = RMatrix::from_fn(2, 3, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        let back: RMatrix = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let c = CMatrix::from_fn(2, 2, |i, j| {
            C64::new(1.0 / 3.0 + i as f64, -(j as f64) / 7.0)
        });
        let back: CMatrix = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn kind_and_shape_are_checked() {
        let r = RMatrix::identity(2);
        let text = serde_json::to_string(&r).unwrap();
        assert!(serde_json::from_str::<CMatrix>(&text).is_err());
        let bad = text.replace("\"rows\":2", "\"rows\":3");
        assert!(serde_json::from_str::<RMatrix>(&bad).is_err());
    }
}
