//! Attention weights as probability distributions and the padded KL
//! divergence between adjacent layers.

use serde::{Deserialize, Serialize};

use crate::error::{ElaError, Result};

/// Default padding mass appended to the shorter distribution.
pub const DEFAULT_EPSILON: f64 = 1e-10;
/// Largest admissible padding mass.
pub const MAX_EPSILON: f64 = 1e-6;
/// Weights below this are floored before divergences are taken.
pub const PROBABILITY_FLOOR: f64 = 1e-12;
/// Allowed deviation of a weight vector's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// One layer's attention over the value slots of layers `1..=layer_index`.
///
/// Slots belonging to pruned layers carry weight 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDistribution {
    pub layer_index: usize,
    /// 0 for a head-averaged distribution.
    pub head_index: usize,
    pub weights: Vec<f64>,
}

impl AttentionDistribution {
    pub fn new(layer_index: usize, head_index: usize, weights: Vec<f64>) -> Result<Self> {
        let d = AttentionDistribution {
            layer_index,
            head_index,
            weights,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_index == 0 {
            return Err(ElaError::Structural("layer_index is 1-based".into()));
        }
        if self.weights.len() != self.layer_index {
            return Err(ElaError::Structural(format!(
                "layer {} needs {} weights, got {}",
                self.layer_index,
                self.layer_index,
                self.weights.len()
            )));
        }
        check_simplex(&self.weights).map_err(|msg| {
            ElaError::Validation(format!("layer {} head {}: {msg}", self.layer_index, self.head_index))
        })
    }

    /// Arithmetic mean over heads of the same layer; the result is tagged head 0.
    pub fn head_average(heads: &[AttentionDistribution]) -> Result<AttentionDistribution> {
        let first = heads
            .first()
            .ok_or_else(|| ElaError::Structural("head_average of zero heads".into()))?;
        let mut acc = vec![0.0; first.weights.len()];
        for h in heads {
            if h.layer_index != first.layer_index || h.weights.len() != acc.len() {
                return Err(ElaError::Structural(format!(
                    "cannot average heads of layers {} and {}",
                    first.layer_index, h.layer_index
                )));
            }
            for (a, w) in acc.iter_mut().zip(&h.weights) {
                *a += w;
            }
        }
        let n = heads.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(AttentionDistribution {
            layer_index: first.layer_index,
            head_index: 0,
            weights: acc,
        })
    }

    /// Weights over the slots in `active` that do not exceed this layer,
    /// floored at [`PROBABILITY_FLOOR`] and renormalized when anything changed.
    pub fn restricted_to(&self, active: &[usize]) -> Vec<f64> {
        let mut changed = false;
        let mut out = Vec::with_capacity(active.len());
        for (slot, &w) in self.weights.iter().enumerate() {
            if active.binary_search(&(slot + 1)).is_ok() {
                if w < PROBABILITY_FLOOR {
                    out.push(PROBABILITY_FLOOR);
                    changed = true;
                } else {
                    out.push(w);
                }
            } else if w > 0.0 {
                changed = true;
            }
        }
        if changed {
            let s: f64 = out.iter().sum();
            out.iter_mut().for_each(|w| *w /= s);
        }
        out
    }
}

fn check_simplex(w: &[f64]) -> std::result::Result<(), String> {
    if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(format!("weight {bad} is not a finite nonnegative number"));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(format!("weights sum to {s}, expected 1"));
    }
    Ok(())
}

/// KL(p ‖ q) in nats. Returns `f64::INFINITY` when some `q_i = 0 < p_i`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(ElaError::Structural(format!(
            "KL needs equal lengths, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_simplex(p).map_err(|m| ElaError::Validation(format!("p: {m}")))?;
    check_simplex(q).map_err(|m| ElaError::Validation(format!("q: {m}")))?;
    Ok(kl_terms(p, q))
}

fn kl_terms(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        acc += pi * (pi / qi).ln();
    }
    acc
}

/// Padded KL between a layer's weights `p` (length l) and the next layer's
/// `p_next` (length l + 1). `p` is extended with `epsilon` and not renormalized.
pub fn padded_kl(p: &[f64], p_next: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= MAX_EPSILON) {
        return Err(ElaError::Domain(format!(
            "epsilon must lie in (0, {MAX_EPSILON}], got {epsilon}"
        )));
    }
    if p_next.len() != p.len() + 1 {
        return Err(ElaError::Structural(format!(
            "padded KL needs the later distribution one slot longer: {} vs {}",
            p.len(),
            p_next.len()
        )));
    }
    let head = kl_terms(p, &p_next[..p.len()]);
    let last = p_next[p.len()];
    if last == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(head + epsilon * (epsilon / last).ln())
}

/// Padded KL between the distributions of layers `l` and `l + 1`.
pub fn padded_adjacent_kl(
    p: &AttentionDistribution,
    p_next: &AttentionDistribution,
    epsilon: f64,
) -> Result<f64> {
    if p_next.layer_index != p.layer_index + 1 {
        return Err(ElaError::Structural(format!(
            "adjacent KL needs consecutive layers, got {} and {}",
            p.layer_index, p_next.layer_index
        )));
    }
    padded_kl(&p.weights, &p_next.weights, epsilon)
}

/// Adjacent-layer divergences a_1..a_{n-1} over a set of active layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSeries {
    pub values: Vec<f64>,
    /// Inclusive epoch range the values were collected over.
    pub epoch_window: (u32, u32),
    pub stage_id: u32,
    /// Layer indices, ascending; `values[k]` compares `active_layers[k]`
    /// with `active_layers[k + 1]`.
    pub active_layers: Vec<usize>,
}

impl DivergenceSeries {
    /// Builds a series from raw values over layers `1..=values.len() + 1`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let active_layers = (1..=values.len() + 1).collect();
        let s = DivergenceSeries {
            values,
            epoch_window: (0, 0),
            stage_id: 0,
            active_layers,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_provenance(mut self, epoch_window: (u32, u32), stage_id: u32) -> Self {
        self.epoch_window = epoch_window;
        self.stage_id = stage_id;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ElaError::Numerical(format!("divergence {v} is not finite and nonnegative")));
        }
        if self.active_layers.len() != self.values.len() + 1 {
            return Err(ElaError::Structural(format!(
                "{} divergences need {} active layers, got {}",
                self.values.len(),
                self.values.len() + 1,
                self.active_layers.len()
            )));
        }
        Ok(())
    }
}

/// Padded KL between every pair of consecutive distributions.
///
/// `distros` must be one distribution per active layer in ascending layer
/// order. Each distribution is restricted to the active slots it can see,
/// so consecutive active layers always differ by exactly one slot.
pub fn series_from_stack(distros: &[AttentionDistribution], epsilon: f64) -> Result<DivergenceSeries> {
    if distros.len() < 2 {
        return Err(ElaError::Structural(format!(
            "a divergence series needs at least 2 layers, got {}",
            distros.len()
        )));
    }
    let active: Vec<usize> = distros.iter().map(|d| d.layer_index).collect();
    if active.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ElaError::Structural(format!(
            "distributions must be in strictly ascending layer order, got {active:?}"
        )));
    }
    if active[0] != 1 {
        return Err(ElaError::Structural("layer 1 is always active and must lead the series".into()));
    }
    let restricted: Vec<Vec<f64>> = distros.iter().map(|d| d.restricted_to(&active)).collect();
    let values = restricted
        .windows(2)
        .map(|w| padded_kl(&w[0], &w[1], epsilon))
        .collect::<Result<Vec<_>>>()?;
    let s = DivergenceSeries {
        values,
        epoch_window: (0, 0),
        stage_id: 0,
        active_layers: active,
    };
    s.validate()?;
    Ok(s)
}

/// Elementwise mean of series that share stage and active layers.
pub fn average_series(series_list: &[DivergenceSeries]) -> Result<DivergenceSeries> {
    let first = series_list
        .first()
        .ok_or_else(|| ElaError::Structural("cannot average zero series".into()))?;
    let mut acc = vec![0.0; first.values.len()];
    let (mut lo, mut hi) = first.epoch_window;
    for s in series_list {
        if s.values.len() != acc.len() || s.stage_id != first.stage_id || s.active_layers != first.active_layers {
            return Err(ElaError::Structural(
                "series to average must share length, stage and active layers".into(),
            ));
        }
        for (a, v) in acc.iter_mut().zip(&s.values) {
            *a += v;
        }
        lo = lo.min(s.epoch_window.0);
        hi = hi.max(s.epoch_window.1);
    }
    let n = series_list.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(DivergenceSeries {
        values: acc,
        epoch_window: (lo, hi),
        stage_id: first.stage_id,
        active_layers: first.active_layers.clone(),
    })
}
