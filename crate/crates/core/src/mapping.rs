//! Score mappers: Enhanced Beta Quantile Mapping and the ablation baselines.
//!
//! Every CDF-based mapper runs the same pipeline over a divergence series:
//! take the nearest-rank γ-quantile, keep the values at or below it, min–max
//! normalize the kept values, and push them through a monotone transform.
//! Values outside the quantile set are mapped to 1.0 so they survive any
//! threshold below 1.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSeries;
use crate::error::{ElaError, Result};
use crate::special::{
    beta_cdf, beta_inv_cdf, exp_cdf, exp_inv_cdf, gamma_cdf, gamma_inv_cdf, normal_cdf, normal_inv_cdf,
    BetaParams, ExpParams, GammaParams,
};

/// Normalized value assigned when every selected divergence is equal.
pub const DEGENERATE_NORMALIZED: f64 = 0.5;

/// Spreads at or below this are round-off and count as all-equal.
pub const DEGENERATE_SPAN: f64 = 1e-12;

/// Which transform turns divergences into scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mapper {
    Ebqm(BetaParams),
    Gqm(GammaParams),
    Eqm(ExpParams),
    Normal,
    Softmax,
    Sigmoid,
    RawThreshold,
    FixedCount { k: usize },
}

impl Mapper {
    pub fn name(&self) -> &'static str {
        match self {
            Mapper::Ebqm(_) => "ebqm",
            Mapper::Gqm(_) => "gqm",
            Mapper::Eqm(_) => "eqm",
            Mapper::Normal => "normal",
            Mapper::Softmax => "softmax",
            Mapper::Sigmoid => "sigmoid",
            Mapper::RawThreshold => "raw",
            Mapper::FixedCount { .. } => "fixed",
        }
    }
}

impl fmt::Display for Mapper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperConfig {
    pub mapper: Mapper,
    /// γ in (0, 1]: fraction of the smallest divergences that are candidates.
    pub gamma_quantile: f64,
}

impl MapperConfig {
    pub fn new(mapper: Mapper, gamma_quantile: f64) -> Result<Self> {
        let cfg = MapperConfig { mapper, gamma_quantile };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ebqm(alpha: f64, beta: f64, gamma_quantile: f64) -> Result<Self> {
        Self::new(Mapper::Ebqm(BetaParams::new(alpha, beta)?), gamma_quantile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_quantile > 0.0 && self.gamma_quantile <= 1.0) {
            return Err(ElaError::Config(format!(
                "gamma quantile must lie in (0, 1], got {}",
                self.gamma_quantile
            )));
        }
        match self.mapper {
            Mapper::Ebqm(p) => p.validate(),
            Mapper::Gqm(p) => p.validate(),
            Mapper::Eqm(p) => p.validate(),
            _ => Ok(()),
        }
    }
}

/// Mapped scores ã, one per divergence, each in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedScores {
    pub values: Vec<f64>,
    /// Indices (into the series) of the pruning candidates, ascending.
    pub selected: Vec<usize>,
    pub config: MapperConfig,
}

impl MappedScores {
    pub fn is_selected(&self, i: usize) -> bool {
        self.selected.binary_search(&i).is_ok()
    }
}

/// Empirical CDF p(x_i) = #{j : x_j ≤ x_i} / n.
pub fn empirical_cdf(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(ElaError::Structural("empirical CDF of an empty set".into()));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(ElaError::Domain("empirical CDF input contains NaN".into()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    Ok(xs
        .iter()
        .map(|&x| sorted.partition_point(|&v| v <= x) as f64 / n)
        .collect())
}

/// Target distribution for [`quantile_map`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum QuantileTarget {
    Beta(BetaParams),
    Gamma(GammaParams),
    Exp(ExpParams),
    Normal,
}

impl QuantileTarget {
    /// Looks a target up by name; `a`, `b` are the shape/scale (or rate) values.
    pub fn from_name(name: &str, a: f64, b: f64) -> Result<Self> {
        match name {
            "beta" => Ok(QuantileTarget::Beta(BetaParams::new(a, b)?)),
            "gamma" => Ok(QuantileTarget::Gamma(GammaParams::new(a, b)?)),
            "exp" | "exponential" => Ok(QuantileTarget::Exp(ExpParams::new(a)?)),
            "normal" => Ok(QuantileTarget::Normal),
            other => Err(ElaError::Config(format!("unsupported quantile-mapping target `{other}`"))),
        }
    }

    pub fn inv_cdf(&self, prob: f64) -> Result<f64> {
        match *self {
            QuantileTarget::Beta(p) => beta_inv_cdf(prob, p),
            QuantileTarget::Gamma(p) => gamma_inv_cdf(prob, p),
            QuantileTarget::Exp(p) => exp_inv_cdf(prob, p),
            QuantileTarget::Normal => normal_inv_cdf(prob),
        }
    }
}

/// Classic quantile mapping x′ = F⁻¹(p(x)), with p clamped to n/(n+1) so the
/// largest value stays finite under unbounded targets.
pub fn quantile_map(xs: &[f64], target: QuantileTarget) -> Result<Vec<f64>> {
    let n = xs.len() as f64;
    let cap = n / (n + 1.0);
    empirical_cdf(xs)?
        .into_iter()
        .map(|p| target.inv_cdf(p.min(cap)))
        .collect()
}

/// Nearest-rank γ-quantile: the smallest value whose empirical CDF is ≥ γ.
pub fn nearest_rank_quantile(values: &[f64], gamma_quantile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(ElaError::Structural("quantile of an empty series".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    for &v in &sorted {
        let cdf = sorted.partition_point(|&x| x <= v) as f64 / n;
        if cdf >= gamma_quantile {
            return Ok(v);
        }
    }
    Ok(sorted[sorted.len() - 1])
}

/// Indices of the values at or below the γ-quantile, ascending.
pub fn quantile_selection(values: &[f64], gamma_quantile: f64) -> Result<Vec<usize>> {
    let q = nearest_rank_quantile(values, gamma_quantile)?;
    Ok(values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= q)
        .map(|(i, _)| i)
        .collect())
}

/// Min–max normalization; input whose spread is within [`DEGENERATE_SPAN`]
/// maps to [`DEGENERATE_NORMALIZED`].
pub fn min_max_normalize(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > DEGENERATE_SPAN) {
        return vec![DEGENERATE_NORMALIZED; xs.len()];
    }
    xs.iter().map(|&x| ((x - lo) / span).clamp(0.0, 1.0)).collect()
}

fn check_series(series: &DivergenceSeries) -> Result<()> {
    if series.values.is_empty() {
        return Err(ElaError::Structural("cannot map an empty divergence series".into()));
    }
    series.validate()
}

/// Shared quantile-select / normalize / transform pipeline.
fn quantile_pipeline<F>(series: &DivergenceSeries, cfg: MapperConfig, transform: F) -> Result<MappedScores>
where
    F: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    check_series(series)?;
    cfg.validate()?;
    let selected = quantile_selection(&series.values, cfg.gamma_quantile)?;
    let picked: Vec<f64> = selected.iter().map(|&i| series.values[i]).collect();
    let normalized = min_max_normalize(&picked);
    let mapped = transform(&normalized)?;
    let mut values = vec![1.0; series.values.len()];
    for (&i, v) in selected.iter().zip(mapped) {
        values[i] = v.clamp(0.0, 1.0);
    }
    Ok(MappedScores {
        values,
        selected,
        config: cfg,
    })
}

fn wrong_kind(cfg: &MapperConfig, want: &str) -> ElaError {
    ElaError::Config(format!("mapper `{}` passed where `{want}` was expected", cfg.mapper.name()))
}

fn expect_kind(cfg: &MapperConfig, want: &str) -> Result<()> {
    if cfg.mapper.name() != want {
        return Err(wrong_kind(cfg, want));
    }
    Ok(())
}

/// Enhanced Beta Quantile Mapping.
pub fn ebqm(series: &DivergenceSeries, cfg: MapperConfig) -> Result<MappedScores> {
    let Mapper::Ebqm(p) = cfg.mapper else {
        return Err(wrong_kind(&cfg, "ebqm"));
    };
    quantile_pipeline(series, cfg, |xs| xs.iter().map(|&x| beta_cdf(x, p)).collect())
}

/// Gamma-CDF variant.
pub fn gqm(series: &DivergenceSeries, cfg: MapperConfig) -> Result<MappedScores> {
    let Mapper::Gqm(p) = cfg.mapper else {
        return Err(wrong_kind(&cfg, "gqm"));
    };
    quantile_pipeline(series, cfg, |xs| xs.iter().map(|&x| gamma_cdf(x, p)).collect())
}

/// Exponential-CDF variant.
pub fn eqm(series: &DivergenceSeries, cfg: MapperConfig) -> Result<MappedScores> {
    let Mapper::Eqm(p) = cfg.mapper else {
        return Err(wrong_kind(&cfg, "eqm"));
    };
    quantile_pipeline(series, cfg, |xs| xs.iter().map(|&x| exp_cdf(x, p)).collect())
}

/// Standard normal CDF applied to the standardized normalized values.
pub fn normal_map(series: &DivergenceSeries, cfg: MapperConfig) -> Result<MappedScores> {
    expect_kind(&cfg, "normal")?;
    quantile_pipeline(series, cfg, |xs| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(xs
            .iter()
            .map(|&x| {
                let z = if std > 0.0 { (x - mean) / std } else { 0.0 };
                normal_cdf(z)
            })
            .collect())
    })
}

/// Softmax over the selected values, rescaled so the largest score is 1.
pub fn softmax_map(series: &DivergenceSeries, cfg: MapperConfig) -> Result<MappedScores> {
    expect_kind(&cfg, "softmax")?;
    quantile_pipeline(series, cfg, |xs| {
        // softmax(x)_j / max_k softmax(x)_k = exp(x_j − max x)
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(xs.iter().map(|&x| (x - m).exp()).collect())
    })
}

/// Logistic function applied to the normalized values.
pub fn sigmoid_map(series: &DivergenceSeries, cfg: MapperConfig) -> Result<MappedScores> {
    expect_kind(&cfg, "sigmoid")?;
    quantile_pipeline(series, cfg, |xs| Ok(xs.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect()))
}

/// Global min–max normalization of the raw series, no quantile step and no
/// transform. Every layer is a candidate.
pub fn raw_threshold_scores(series: &DivergenceSeries, cfg: MapperConfig) -> Result<MappedScores> {
    expect_kind(&cfg, "raw")?;
    check_series(series)?;
    Ok(MappedScores {
        values: min_max_normalize(&series.values),
        selected: (0..series.values.len()).collect(),
        config: cfg,
    })
}

/// The `k` smallest divergences score 0, all others 1; ties go to the lower index.
pub fn fixed_count_scores(series: &DivergenceSeries, cfg: MapperConfig) -> Result<MappedScores> {
    let Mapper::FixedCount { k } = cfg.mapper else {
        return Err(wrong_kind(&cfg, "fixed"));
    };
    check_series(series)?;
    let n = series.values.len();
    if k > n {
        return Err(ElaError::Config(format!("fixed count {k} exceeds the {n} candidate layers")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| series.values[a].total_cmp(&series.values[b]).then(a.cmp(&b)));
    let mut selected: Vec<usize> = order[..k].to_vec();
    selected.sort_unstable();
    let mut values = vec![1.0; n];
    for &i in &selected {
        values[i] = 0.0;
    }
    Ok(MappedScores {
        values,
        selected,
        config: cfg,
    })
}

/// Dispatches on the configured mapper.
pub fn map_scores(series: &DivergenceSeries, cfg: MapperConfig) -> Result<MappedScores> {
    match cfg.mapper {
        Mapper::Ebqm(_) => ebqm(series, cfg),
        Mapper::Gqm(_) => gqm(series, cfg),
        Mapper::Eqm(_) => eqm(series, cfg),
        Mapper::Normal => normal_map(series, cfg),
        Mapper::Softmax => softmax_map(series, cfg),
        Mapper::Sigmoid => sigmoid_map(series, cfg),
        Mapper::RawThreshold => raw_threshold_scores(series, cfg),
        Mapper::FixedCount { .. } => fixed_count_scores(series, cfg),
    }
}
