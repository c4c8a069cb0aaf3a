//! Retrieval masks, the staged pruning schedule and the cost model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attention::{LayerStack, StackGeometry};
use crate::divergence::{average_series, series_from_stack, AttentionDistribution, DivergenceSeries};
use crate::error::{ElaError, Result};
use crate::mapping::{map_scores, MappedScores, MapperConfig};

/// Binary retrieval mask m_1..m_L; bit `l − 1` gates layer `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub bits: Vec<bool>,
    pub stage_id: u32,
    pub threshold_used: f64,
}

impl PruneMask {
    pub fn all_ones(layers: usize) -> Self {
        PruneMask {
            bits: vec![true; layers],
            stage_id: 0,
            threshold_used: 0.0,
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        let m = PruneMask {
            bits,
            stage_id: 0,
            threshold_used: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self.bits.first() {
            None => Err(ElaError::Structural("a mask needs at least one layer".into())),
            Some(false) => Err(ElaError::Structural("the first layer can never be pruned".into())),
            Some(true) => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_all_ones(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// 1-based indices of the unmasked layers.
    pub fn active_layers(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn pruned_count(&self) -> usize {
        self.bits.iter().filter(|&&b| !b).count()
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ElaError::Config(format!("threshold tau must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

/// m_1 = 1 and m_{l+1} = 1[ã_l ≥ τ].
pub fn mask_from_scores(scores: &MappedScores, tau: f64, layer_count: usize) -> Result<PruneMask> {
    check_tau(tau)?;
    if layer_count == 0 || scores.values.len() + 1 != layer_count {
        return Err(ElaError::Structural(format!(
            "{} scores cannot gate {layer_count} layers",
            scores.values.len()
        )));
    }
    let mut bits = Vec::with_capacity(layer_count);
    bits.push(true);
    bits.extend(scores.values.iter().map(|&a| a >= tau));
    Ok(PruneMask {
        bits,
        stage_id: 0,
        threshold_used: tau,
    })
}

/// Mask over all `layer_count` layers from scores computed over `active`
/// layers only. Layers outside `active` keep bit 1 here; merging with the
/// previous mask keeps them pruned.
pub fn mask_from_active_scores(
    scores: &MappedScores,
    active: &[usize],
    tau: f64,
    layer_count: usize,
) -> Result<PruneMask> {
    if active.len() != scores.values.len() + 1 {
        return Err(ElaError::Structural(format!(
            "{} scores do not fit {} active layers",
            scores.values.len(),
            active.len()
        )));
    }
    let mut full = vec![1.0; layer_count.saturating_sub(1)];
    for (k, &a) in scores.values.iter().enumerate() {
        let layer = active[k + 1];
        if layer < 2 || layer > layer_count {
            return Err(ElaError::Structural(format!("active layer {layer} outside 2..={layer_count}")));
        }
        full[layer - 2] = a;
    }
    let expanded = MappedScores {
        values: full,
        selected: scores.selected.iter().map(|&k| active[k + 1] - 2).collect(),
        config: scores.config,
    };
    mask_from_scores(&expanded, tau, layer_count)
}

/// Bitwise AND; later stages can only prune more.
pub fn merge_masks(prev: &PruneMask, new: &PruneMask) -> Result<PruneMask> {
    if prev.len() != new.len() {
        return Err(ElaError::Structural(format!(
            "cannot merge masks of length {} and {}",
            prev.len(),
            new.len()
        )));
    }
    if new.stage_id <= prev.stage_id {
        return Err(ElaError::Structural(format!(
            "stage {} cannot follow stage {}",
            new.stage_id, prev.stage_id
        )));
    }
    Ok(PruneMask {
        bits: prev.bits.iter().zip(&new.bits).map(|(a, b)| *a && *b).collect(),
        stage_id: new.stage_id,
        threshold_used: new.threshold_used,
    })
}

/// One pruning stage: average divergences over `epochs`, map, threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub stage_id: u32,
    /// Inclusive epoch range.
    pub epochs: (u32, u32),
    pub mapper: MapperConfig,
    pub tau: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stages: Vec<Stage>,
}

impl StageSchedule {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        let s = StageSchedule { stages };
        s.validate()?;
        Ok(s)
    }

    /// Windows are nonempty, disjoint and increasing; stage ids increase from 1.
    pub fn validate(&self) -> Result<()> {
        let mut last_epoch = 0u32;
        let mut last_id = 0u32;
        for s in &self.stages {
            if s.epochs.0 == 0 || s.epochs.0 > s.epochs.1 {
                return Err(ElaError::Config(format!(
                    "stage {} has an invalid epoch window {:?}",
                    s.stage_id, s.epochs
                )));
            }
            if s.epochs.0 <= last_epoch {
                return Err(ElaError::Config(format!(
                    "stage {} window {:?} overlaps or precedes the previous one",
                    s.stage_id, s.epochs
                )));
            }
            if s.stage_id <= last_id {
                return Err(ElaError::Config(format!("stage ids must increase, got {}", s.stage_id)));
            }
            check_tau(s.tau)?;
            s.mapper.validate()?;
            last_epoch = s.epochs.1;
            last_id = s.stage_id;
        }
        Ok(())
    }

    /// The stage whose window ends at `epoch`, if any.
    pub fn stage_ending_at(&self, epoch: u32) -> Option<&Stage> {
        self.stages.iter().find(|s| s.epochs.1 == epoch)
    }

    pub fn in_window(&self, epoch: u32) -> bool {
        self.stages.iter().any(|s| s.epochs.0 <= epoch && epoch <= s.epochs.1)
    }
}

/// Audit entry for one executed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAudit {
    pub stage_id: u32,
    pub series: DivergenceSeries,
    pub scores: MappedScores,
    /// Mask after merging with every earlier stage.
    pub mask: PruneMask,
}

/// Supplies per-epoch, head-averaged attention distributions.
pub trait TraceSource {
    /// Epochs in `window` for which no data exists.
    fn missing_epochs(&self, window: (u32, u32)) -> Vec<u32>;

    /// One distribution per active layer of `stack`, ascending.
    fn distributions(&mut self, epoch: u32, stack: &LayerStack) -> Result<Vec<AttentionDistribution>>;
}

/// Distributions recorded offline, keyed by epoch and layer.
#[derive(Debug, Clone, Default)]
pub struct RecordedTrace {
    by_epoch: BTreeMap<u32, BTreeMap<usize, Vec<AttentionDistribution>>>,
}

impl RecordedTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one head's distribution for `epoch`.
    pub fn insert(&mut self, epoch: u32, dist: AttentionDistribution) {
        self.by_epoch
            .entry(epoch)
            .or_default()
            .entry(dist.layer_index)
            .or_default()
            .push(dist);
    }

    pub fn epochs(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_epoch.keys().copied()
    }

    /// Largest layer index present anywhere in the trace.
    pub fn layer_count(&self) -> usize {
        self.by_epoch
            .values()
            .filter_map(|m| m.keys().next_back().copied())
            .max()
            .unwrap_or(0)
    }

    /// Head-averaged distributions of `layers` at `epoch`, in order.
    pub fn layers(&self, epoch: u32, layers: &[usize]) -> Result<Vec<AttentionDistribution>> {
        layers.iter().map(|&l| self.layer(epoch, l)).collect()
    }

    /// Head-averaged distribution of `layer` at `epoch`.
    pub fn layer(&self, epoch: u32, layer: usize) -> Result<AttentionDistribution> {
        let heads = self
            .by_epoch
            .get(&epoch)
            .and_then(|m| m.get(&layer))
            .ok_or_else(|| ElaError::Ingestion(format!("no trace data for layer {layer} at epoch {epoch}")))?;
        AttentionDistribution::head_average(heads)
    }
}

impl TraceSource for RecordedTrace {
    fn missing_epochs(&self, window: (u32, u32)) -> Vec<u32> {
        (window.0..=window.1)
            .filter(|e| !self.by_epoch.contains_key(e))
            .collect()
    }

    fn distributions(&mut self, epoch: u32, stack: &LayerStack) -> Result<Vec<AttentionDistribution>> {
        self.layers(epoch, &stack.active_layers())
    }
}

/// Measures distributions on a fixed probe set with the stack's current
/// parameters; every epoch sees the same data.
#[derive(Debug, Clone)]
pub struct LiveProbe<'a> {
    pub inputs: &'a [Vec<f64>],
}

impl TraceSource for LiveProbe<'_> {
    fn missing_epochs(&self, _window: (u32, u32)) -> Vec<u32> {
        Vec::new()
    }

    fn distributions(&mut self, _epoch: u32, stack: &LayerStack) -> Result<Vec<AttentionDistribution>> {
        probe_distributions(stack, self.inputs)
    }
}

/// Head-averaged distributions of every active layer, averaged over `inputs`.
pub fn probe_distributions(stack: &LayerStack, inputs: &[Vec<f64>]) -> Result<Vec<AttentionDistribution>> {
    if inputs.is_empty() {
        return Err(ElaError::Ingestion("probe set is empty".into()));
    }
    let active = stack.active_layers();
    let mut acc: Vec<Vec<f64>> = active.iter().map(|&l| vec![0.0; l]).collect();
    for x in inputs {
        let trace = stack.forward(x)?;
        for (slot, &l) in active.iter().enumerate() {
            let d = trace
                .layer_distribution(l)
                .ok_or_else(|| ElaError::Structural(format!("active layer {l} produced no distribution")))?;
            for (a, w) in acc[slot].iter_mut().zip(&d.weights) {
                *a += w;
            }
        }
    }
    let n = inputs.len() as f64;
    Ok(active
        .iter()
        .zip(acc)
        .map(|(&l, mut w)| {
            w.iter_mut().for_each(|v| *v /= n);
            AttentionDistribution {
                layer_index: l,
                head_index: 0,
                weights: w,
            }
        })
        .collect())
}

/// Runs one stage on already-collected per-epoch distributions and applies
/// the merged mask to `stack`.
pub fn run_stage(
    stack: &mut LayerStack,
    stage: &Stage,
    per_epoch: &[(u32, Vec<AttentionDistribution>)],
    epsilon: f64,
) -> Result<StageAudit> {
    let audit = advance_mask(stack.mask(), stage, per_epoch, epsilon)?;
    stack.set_mask(audit.mask.clone())?;
    Ok(audit)
}

/// One stage applied to `prev`: divergences per epoch, averaged, mapped,
/// thresholded and AND-merged. `per_epoch` holds one distribution per
/// active layer of `prev`.
pub fn advance_mask(
    prev: &PruneMask,
    stage: &Stage,
    per_epoch: &[(u32, Vec<AttentionDistribution>)],
    epsilon: f64,
) -> Result<StageAudit> {
    let layer_count = prev.len();
    let active = prev.active_layers();

    if active.len() < 2 {
        // Nothing left to compare; the stage leaves the mask as is.
        let mut mask = prev.clone();
        mask.stage_id = stage.stage_id;
        mask.threshold_used = stage.tau;
        return Ok(StageAudit {
            stage_id: stage.stage_id,
            series: DivergenceSeries {
                values: Vec::new(),
                epoch_window: stage.epochs,
                stage_id: stage.stage_id,
                active_layers: active,
            },
            scores: MappedScores {
                values: Vec::new(),
                selected: Vec::new(),
                config: stage.mapper,
            },
            mask,
        });
    }
    if per_epoch.is_empty() {
        return Err(ElaError::Ingestion(format!("stage {} received no distributions", stage.stage_id)));
    }

    let series_list = per_epoch
        .iter()
        .map(|(epoch, distros)| {
            Ok(series_from_stack(distros, epsilon)?.with_provenance((*epoch, *epoch), stage.stage_id))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = series_list.iter().find(|s| s.active_layers != active) {
        return Err(ElaError::Structural(format!(
            "trace covers layers {:?} but the active set is {active:?}",
            bad.active_layers
        )));
    }
    let mut series = average_series(&series_list)?;
    series.epoch_window = stage.epochs;
    series.stage_id = stage.stage_id;
    let scores = map_scores(&series, stage.mapper)?;
    let mut fresh = mask_from_active_scores(&scores, &active, stage.tau, layer_count)?;
    fresh.stage_id = stage.stage_id;
    let mask = merge_masks(prev, &fresh)?;
    Ok(StageAudit {
        stage_id: stage.stage_id,
        series,
        scores,
        mask,
    })
}

/// Runs `schedule` offline over a recorded trace for a `layer_count`-layer
/// network, starting from the all-ones mask.
pub fn analyze_trace(
    trace: &RecordedTrace,
    layer_count: usize,
    schedule: &StageSchedule,
    epsilon: f64,
) -> Result<Vec<StageAudit>> {
    schedule.validate()?;
    let mut mask = PruneMask::all_ones(layer_count);
    mask.validate()?;
    let mut audits = Vec::with_capacity(schedule.stages.len());
    for stage in &schedule.stages {
        let missing = trace.missing_epochs(stage.epochs);
        if !missing.is_empty() {
            return Err(missing_error(stage, &missing));
        }
        let active = mask.active_layers();
        let per_epoch = (stage.epochs.0..=stage.epochs.1)
            .map(|e| Ok((e, trace.layers(e, &active)?)))
            .collect::<Result<Vec<_>>>()?;
        let audit = advance_mask(&mask, stage, &per_epoch, epsilon)?;
        mask = audit.mask.clone();
        audits.push(audit);
    }
    Ok(audits)
}

fn missing_error(stage: &Stage, missing: &[u32]) -> ElaError {
    ElaError::Ingestion(format!(
        "stage {} window {}-{} has no trace data for epochs {missing:?}",
        stage.stage_id, stage.epochs.0, stage.epochs.1
    ))
}

/// Executes every stage of `schedule` against `source`, updating the
/// stack's mask as it goes.
pub fn run_schedule(
    stack: &mut LayerStack,
    schedule: &StageSchedule,
    source: &mut dyn TraceSource,
    epsilon: f64,
) -> Result<Vec<StageAudit>> {
    schedule.validate()?;
    let mut audits = Vec::with_capacity(schedule.stages.len());
    for stage in &schedule.stages {
        let missing = source.missing_epochs(stage.epochs);
        if !missing.is_empty() {
            return Err(missing_error(stage, &missing));
        }
        let per_epoch = (stage.epochs.0..=stage.epochs.1)
            .map(|e| Ok((e, source.distributions(e, stack)?)))
            .collect::<Result<Vec<_>>>()?;
        audits.push(run_stage(stack, stage, &per_epoch, epsilon)?);
    }
    Ok(audits)
}

/// Multiply–add counts of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub attention: u64,
    pub total: u64,
}

/// Cost model: an active layer pays 3d² for its q/k/v projections plus 2·s·d
/// for scoring and mixing its `s` visible slots; a pruned layer pays
/// nothing. Backbones add d² per layer and the classifier c·d.
pub fn flop_estimate(geometry: &StackGeometry, mask: &PruneMask) -> FlopCount {
    let d = geometry.dim as u64;
    let mut attention = 0u64;
    let mut visible = 0u64;
    for &bit in mask.bits.iter().take(geometry.layers) {
        if bit {
            visible += 1;
            attention += 3 * d * d + 2 * visible * d;
        }
    }
    let backbone = geometry.layers as u64 * d * d;
    let head = geometry.classes as u64 * d;
    FlopCount {
        attention,
        total: attention + backbone + head,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::Mapper;

    fn scores(v: &[f64]) -> MappedScores {
        MappedScores {
            values: v.to_vec(),
            selected: (0..v.len()).collect(),
            config: MapperConfig::new(Mapper::RawThreshold, 1.0).unwrap(),
        }
    }

    fn bits(m: &PruneMask) -> Vec<u8> {
        m.bits.iter().map(|&b| b as u8).collect()
    }

    #[test]
    fn mask_examples() {
        let m = mask_from_scores(&scores(&[0.5, 0.1, 0.9]), 0.3, 4).unwrap();
        assert_eq!(bits(&m), vec![1, 1, 0, 1]);
        let m = mask_from_scores(&scores(&[0.5, 0.4, 0.9]), 0.3, 4).unwrap();
        assert!(m.is_all_ones());
        let m = mask_from_scores(&scores(&[0.1, 0.2, 0.0]), 0.3, 4).unwrap();
        assert_eq!(bits(&m), vec![1, 0, 0, 0]);
        // Ties keep the layer.
        let m = mask_from_scores(&scores(&[0.3]), 0.3, 2).unwrap();
        assert_eq!(bits(&m), vec![1, 1]);
        assert!(matches!(
            mask_from_scores(&scores(&[0.3]), 0.3, 3),
            Err(ElaError::Structural(_))
        ));
        assert!(mask_from_scores(&scores(&[0.3]), 1.0, 2).is_err());
    }

    #[test]
    fn merge_examples() {
        let ones = PruneMask::all_ones(4);
        let mut m = PruneMask::from_bits(vec![true, true, false, true]).unwrap();
        m.stage_id = 1;
        assert_eq!(merge_masks(&ones, &m).unwrap().bits, m.bits);
        let mut later_ones = PruneMask::all_ones(4);
        later_ones.stage_id = 2;
        assert_eq!(merge_masks(&m, &later_ones).unwrap().bits, m.bits);
        let mut b = PruneMask::from_bits(vec![true, false, true, true]).unwrap();
        b.stage_id = 2;
        assert_eq!(bits(&merge_masks(&m, &b).unwrap()), vec![1, 0, 0, 1]);
        assert!(merge_masks(&m, &PruneMask::all_ones(3)).is_err());
        assert!(merge_masks(&b, &m).is_err());
    }

    #[test]
    fn active_scores_scatter_onto_layers() {
        let m = mask_from_active_scores(&scores(&[0.9, 0.1]), &[1, 2, 4], 0.3, 4).unwrap();
        assert_eq!(bits(&m), vec![1, 1, 1, 0]);
    }

    #[test]
    fn schedule_validation() {
        let mapper = MapperConfig::ebqm(5.0, 1.0, 0.5).unwrap();
        let st = |id, a, b| Stage {
            stage_id: id,
            epochs: (a, b),
            mapper,
            tau: 0.3,
        };
        assert!(StageSchedule::new(vec![st(1, 1, 3), st(2, 45, 48), st(3, 91, 93)]).is_ok());
        assert!(StageSchedule::new(vec![st(1, 1, 3), st(2, 3, 5)]).is_err());
        assert!(StageSchedule::new(vec![st(1, 4, 3)]).is_err());
        assert!(StageSchedule::new(vec![st(2, 1, 3), st(1, 5, 6)]).is_err());
        let mut bad_tau = st(1, 1, 2);
        bad_tau.tau = 0.0;
        assert!(StageSchedule::new(vec![bad_tau]).is_err());
    }

    #[test]
    fn flop_examples() {
        let g = StackGeometry {
            layers: 4,
            dim: 8,
            heads: 1,
            classes: 2,
        };
        let full = flop_estimate(&g, &PruneMask::all_ones(4));
        // Σ_l (3·64 + 2·l·8) for l = 1..4
        assert_eq!(full.attention, 4 * 192 + 16 * (1 + 2 + 3 + 4));
        assert_eq!(full.total, full.attention + 4 * 64 + 16);
        let one = StackGeometry { layers: 1, ..g };
        assert_eq!(flop_estimate(&one, &PruneMask::all_ones(1)).attention, 192 + 16);
    }
}
