//! Browser bindings for the demo page. Each exported function takes plain
//! numbers or strings and returns a JSON string; the logic lives in the
//! `*_json` functions so it can be tested natively.

use ela_core::attention::{AttentionMode, LayerStack, StackGeometry};
use ela_core::divergence::DivergenceSeries;
use ela_core::io::RunConfig;
use ela_core::mapping::map_scores;
use ela_core::pruning::{flop_estimate, mask_from_scores, PruneMask};
use ela_core::special::{beta_cdf, BetaParams};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Curve {
    x: Vec<f64>,
    y: Vec<f64>,
}

pub fn beta_curve_json(alpha: f64, beta: f64, points: usize) -> Result<String, String> {
    let p = BetaParams::new(alpha, beta).map_err(|e| e.to_string())?;
    let n = points.clamp(2, 2001);
    let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let y = x
        .iter()
        .map(|&v| beta_cdf(v, p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    to_json(&Curve { x, y })
}

#[derive(Serialize)]
struct Explored {
    divergences: Vec<f64>,
    scores: Vec<f64>,
    selected: Vec<usize>,
    mask: String,
    pruned_layers: Vec<usize>,
}

fn parse_series(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect()
}

/// Maps a comma-separated divergence series and thresholds it.
#[allow(clippy::too_many_arguments)]
pub fn explore_json(
    series: &str,
    mapper: &str,
    gamma: f64,
    alpha: f64,
    beta: f64,
    lambda: f64,
    fixed_k: usize,
    tau: f64,
) -> Result<String, String> {
    let values = parse_series(series)?;
    let cfg = RunConfig {
        mapper: mapper.to_string(),
        gamma,
        alpha,
        beta,
        lambda,
        fixed_k,
        ..RunConfig::default()
    };
    let mc = cfg.mapper_config().map_err(|e| e.to_string())?;
    let s = DivergenceSeries::from_values(values.clone()).map_err(|e| e.to_string())?;
    let scored = map_scores(&s, mc).map_err(|e| e.to_string())?;
    let mask = mask_from_scores(&scored, tau, values.len() + 1).map_err(|e| e.to_string())?;
    let pruned_layers = mask
        .bits
        .iter()
        .enumerate()
        .filter(|(_, &b)| !b)
        .map(|(i, _)| i + 1)
        .collect();
    to_json(&Explored {
        divergences: values,
        scores: scored.values,
        selected: scored.selected,
        mask: mask.to_bit_string(),
        pruned_layers,
    })
}

#[derive(Serialize)]
struct ForwardDemo {
    /// Head-averaged weights per layer; empty for pruned layers.
    attention: Vec<Vec<f64>>,
    mask: String,
    attention_flops_full: u64,
    attention_flops_masked: u64,
    logits: Vec<f64>,
}

/// Runs a seeded toy stack under the mask `bits` (e.g. "110101").
pub fn masked_forward_json(bits: &str, dim: usize, heads: usize, seed: u64) -> Result<String, String> {
    let parsed = bits
        .trim()
        .chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(format!("mask characters must be 0 or 1, got {other:?}")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mask = PruneMask::from_bits(parsed).map_err(|e| e.to_string())?;
    let geometry = StackGeometry {
        layers: mask.len(),
        dim,
        heads,
        classes: 3,
    };
    let mut stack = LayerStack::new(geometry, AttentionMode::Ela, seed).map_err(|e| e.to_string())?;
    stack.set_mask(mask.clone()).map_err(|e| e.to_string())?;
    let x: Vec<f64> = (0..dim).map(|i| ((i as f64 + 1.0) * 0.7).sin()).collect();
    let trace = stack.forward(&x).map_err(|e| e.to_string())?;
    let attention = (1..=geometry.layers)
        .map(|l| trace.layer_distribution(l).map(|d| d.weights).unwrap_or_default())
        .collect();
    to_json(&ForwardDemo {
        attention,
        mask: mask.to_bit_string(),
        attention_flops_full: flop_estimate(&geometry, &PruneMask::all_ones(geometry.layers)).attention,
        attention_flops_masked: flop_estimate(&geometry, &mask).attention,
        logits: trace.logits,
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn beta_curve(alpha: f64, beta: f64, points: usize) -> Result<String, JsValue> {
    beta_curve_json(alpha, beta, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn explore(
    series: &str,
    mapper: &str,
    gamma: f64,
    alpha: f64,
    beta: f64,
    lambda: f64,
    fixed_k: usize,
    tau: f64,
) -> Result<String, JsValue> {
    explore_json(series, mapper, gamma, alpha, beta, lambda, fixed_k, tau).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn masked_forward(bits: &str, dim: usize, heads: usize, seed: u64) -> Result<String, JsValue> {
    masked_forward_json(bits, dim, heads, seed).map_err(|e| JsValue::from_str(&e))
}
