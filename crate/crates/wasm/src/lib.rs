//! Browser bindings. Each operation is a plain function returning JSON text
//! (usable and testable natively) with a thin `wasm_bindgen` wrapper.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use koopman_core::datagen::{gen_linear_snapshots, poly_embedding, PolyManifoldParams};
use koopman_core::metrics::anae;
use koopman_core::statepred::{koopman_fit, EigvecMode};
use koopman_core::{Error, RMatrix, Result};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Numbers separated by commas or whitespace.
pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::ParseError(format!("`{s}`: {e}")))
        })
        .collect()
}

/// Rows separated by `;` or newlines.
pub fn parse_matrix(text: &str) -> Result<RMatrix> {
    let rows = text
        .split([';', '\n'])
        .filter(|r| !r.trim().is_empty())
        .map(parse_list)
        .collect::<Result<Vec<_>>>()?;
    RMatrix::from_rows(&rows)
}

fn pairs(m: &RMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// ANAE in percent of `predicted` against `reference`.
pub fn anae_json(reference: &str, predicted: &str) -> Result<Value> {
    let v = anae(&parse_list(reference)?, &parse_list(predicted)?)?;
    Ok(json!({ "anae": v }))
}

/// DMD spectrum of `steps + 1` snapshots of `x_{i+1} = A x_i`, plus the fitted
/// evolution on a half-step grid next to the data.
pub fn dmd_json(matrix: &str, x0: &str, steps: usize, rank: usize, exact: bool) -> Result<Value> {
    let a = parse_matrix(matrix)?;
    let s = gen_linear_snapshots(&a, &parse_list(x0)?, steps, 0.0, 1.0)?;
    let indexes: Vec<i64> = (0..=steps as i64).collect();
    let mode = if exact {
        EigvecMode::Exact
    } else {
        EigvecMode::Projected
    };
    let ke = koopman_fit(&s.x.transpose(), &indexes, rank, mode)?;
    let grid: Vec<f64> = (0..=2 * steps).map(|k| k as f64 / 2.0).collect();
    let evolved = ke.evolve(&grid).transpose();
    Ok(json!({
        "eigenvalues": ke.lambda.as_slice().iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "data": pairs(&s.x),
        "grid": grid,
        "evolved": pairs(&evolved),
    }))
}

/// One trajectory of the polynomial-manifold system, and the same trajectory
/// evolved linearly by a DMD fit in the `(x1, x2, x1^2)` embedding.
pub fn poly_json(mu: f64, lambda: f64, dt: f64, steps: usize, x1: f64, x2: f64) -> Result<Value> {
    let p = PolyManifoldParams {
        mu,
        lambda,
        dt,
        steps,
        ..Default::default()
    };
    p.validate()?;
    let tr = p.trajectory([x1, x2]);
    let y = RMatrix::from_fn(3, steps + 1, |r, c| poly_embedding(tr.row(c))[r]);
    let indexes: Vec<i64> = (0..=steps as i64).collect();
    let linear = match koopman_fit(&y, &indexes, 3, EigvecMode::Projected) {
        Ok(ke) => {
            let idx: Vec<f64> = indexes.iter().map(|&i| i as f64).collect();
            let ev = ke.evolve(&idx);
            Value::from(
                (0..=steps)
                    .map(|c| vec![ev[(0, c)], ev[(1, c)]])
                    .collect::<Vec<_>>(),
            )
        }
        // A trajectory on the x2 axis spans fewer than three directions.
        Err(_) => Value::Null,
    };
    Ok(json!({ "states": pairs(&tr), "linear": linear }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsError> {
    r.map(|v| v.to_string())
        .map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn anae_percent(reference: &str, predicted: &str) -> std::result::Result<String, JsError> {
    to_js(anae_json(reference, predicted))
}

#[wasm_bindgen]
pub fn dmd_spectrum(
    matrix: &str,
    x0: &str,
    steps: usize,
    rank: usize,
    exact: bool,
) -> std::result::Result<String, JsError> {
    to_js(dmd_json(matrix, x0, steps, rank, exact))
}

#[wasm_bindgen]
pub fn poly_manifold(
    mu: f64,
    lambda: f64,
    dt: f64,
    steps: usize,
    x1: f64,
    x2: f64,
) -> std::result::Result<String, JsError> {
    to_js(poly_json(mu, lambda, dt, steps, x1, x2))
}
