//! Browser bindings for the demo page in `www/`. Each export is a thin
//! wrapper over a plain function so the numerics can be tested natively.

use esh::asymptotics::Influence;
use esh::loss::LossParams;
use esh::univariate::{fit_univariate, FitConfig};
use esh::{EshError, Result};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn grid(from: f64, to: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !(to > from) || !from.is_finite() || !to.is_finite() {
        return Err(EshError::Config(format!("bad grid [{from}, {to}] with {count} points")));
    }
    let h = (to - from) / (count - 1) as f64;
    Ok((0..count).map(|i| from + i as f64 * h).collect())
}

/// Rows (u, ρ, ψ, w), flattened.
pub fn loss_rows(c1: f64, c2: f64, eps: f64, from: f64, to: f64, count: usize) -> Result<Vec<f64>> {
    let p = LossParams::new(c1, c2, eps)?;
    Ok(grid(from, to, count)?.into_iter().flat_map(|u| [u, p.rho(u), p.psi(u), p.weight(u)]).collect())
}

/// Rows (x, IF_θ, IF_σ, IF_ε, ‖IF‖), flattened; the model is ESN(0, σ, ε).
pub fn influence_rows(c1: f64, c2: f64, eps: f64, sigma: f64, from: f64, to: f64, count: usize) -> Result<Vec<f64>> {
    let inf = Influence::new(&LossParams::new(c1, c2, eps)?, sigma)?;
    Ok(grid(from, to, count)?
        .into_iter()
        .flat_map(|x| {
            let v = inf.at(x);
            [x, v[0], v[1], v[2], v.norm()]
        })
        .collect())
}

/// Numbers separated by commas, whitespace or semicolons.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(EshError::DegenerateSample(format!("not a number: {t:?}"))),
        })
        .collect()
}

pub fn fit_json(text: &str, c1: f64, c2: f64) -> Result<String> {
    let data = parse_numbers(text)?;
    let f = fit_univariate(&data, &FitConfig::new(LossParams::new(c1, c2, 0.0)?))?;
    Ok(json!({
        "n": data.len(),
        "theta": f.theta,
        "sigma": f.sigma,
        "eps": f.eps,
        "converged": f.converged,
        "iterations": f.iterations,
        "weights": f.weights,
    })
    .to_string())
}

fn js(e: EshError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn loss_curve(c1: f64, c2: f64, eps: f64, from: f64, to: f64, count: usize) -> std::result::Result<Vec<f64>, JsError> {
    loss_rows(c1, c2, eps, from, to, count).map_err(js)
}

#[wasm_bindgen]
pub fn influence_curve(
    c1: f64,
    c2: f64,
    eps: f64,
    sigma: f64,
    from: f64,
    to: f64,
    count: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    influence_rows(c1, c2, eps, sigma, from, to, count).map_err(js)
}

#[wasm_bindgen]
pub fn fit_data(text: &str, c1: f64, c2: f64) -> std::result::Result<String, JsError> {
    fit_json(text, c1, c2).map_err(js)
}
