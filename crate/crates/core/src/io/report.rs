//! Per-layer-pair CSV reports and the JSON run summary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic::write_atomic;
use super::config::RunConfig;
use crate::error::{ElaError, Result};
use crate::mapping::Mapper;
use crate::pruning::{FlopCount, PruneMask, StageAudit};

/// One compared layer pair of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub stage_id: u32,
    /// `"a-b"`: the earlier and later active layer.
    pub layer_pair: String,
    /// The later layer, whose retrieval the score gates.
    pub layer: usize,
    /// Averaged padded divergence.
    pub raw: f64,
    /// Mapped score.
    pub mapped: f64,
    pub selected: u8,
    /// Bit of `layer` in the mask after this stage.
    pub mask_bit: u8,
}

pub fn report_rows(audits: &[StageAudit]) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for a in audits {
        let active = &a.series.active_layers;
        for (j, (&raw, &mapped)) in a.series.values.iter().zip(&a.scores.values).enumerate() {
            let layer = active[j + 1];
            rows.push(ReportRow {
                stage_id: a.stage_id,
                layer_pair: format!("{}-{}", active[j], layer),
                layer,
                raw,
                mapped,
                selected: u8::from(a.scores.is_selected(j)),
                mask_bit: u8::from(a.mask.bits[layer - 1]),
            });
        }
    }
    rows
}

pub fn report_csv_bytes(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["stage_id", "layer_pair", "layer", "raw", "mapped", "selected", "mask_bit"])
        .map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| ElaError::Validation(format!("csv: {e}")))
}

fn csv_error(e: csv::Error) -> ElaError {
    ElaError::Validation(format!("csv: {e}"))
}

pub fn write_report_rows(rows: &[ReportRow], path: &Path) -> Result<()> {
    write_atomic(path, &report_csv_bytes(rows)?)
}

pub fn read_report_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let bytes = fs::read(path).map_err(|e| ElaError::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| ElaError::Ingestion(format!("{}: row {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Everything needed to re-derive a mask from its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub mapper: String,
    pub epsilon: f64,
    pub gamma: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub fixed_k: Option<usize>,
    pub tau: f64,
    pub seed: u64,
}

impl Provenance {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let mc = cfg.mapper_config()?;
        let (alpha, beta, lambda, fixed_k) = match mc.mapper {
            Mapper::Ebqm(p) => (Some(p.alpha), Some(p.beta), None, None),
            Mapper::Gqm(p) => (Some(p.alpha), Some(p.beta), None, None),
            Mapper::Eqm(p) => (None, None, Some(p.lambda), None),
            Mapper::FixedCount { k } => (None, None, None, Some(k)),
            _ => (None, None, None, None),
        };
        Ok(Provenance {
            config_hash: cfg.hash(),
            mapper: mc.mapper.name().into(),
            epsilon: cfg.epsilon,
            gamma: mc.gamma_quantile,
            alpha,
            beta,
            lambda,
            fixed_k,
            tau: cfg.tau,
            seed: cfg.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage_id: u32,
    pub epochs: (u32, u32),
    pub tau: f64,
    pub active_layers: Vec<usize>,
    /// Layers whose retrieval this stage removed.
    pub newly_pruned: Vec<usize>,
    pub mask: String,
}

impl StageSummary {
    pub fn from_audits(audits: &[StageAudit]) -> Vec<Self> {
        let mut prev: Option<&PruneMask> = None;
        audits
            .iter()
            .map(|a| {
                let newly_pruned = a
                    .mask
                    .bits
                    .iter()
                    .enumerate()
                    .filter(|&(i, &b)| !b && prev.map_or(true, |p| p.bits[i]))
                    .map(|(i, _)| i + 1)
                    .collect();
                prev = Some(&a.mask);
                StageSummary {
                    stage_id: a.stage_id,
                    epochs: a.series.epoch_window,
                    tau: a.mask.threshold_used,
                    active_layers: a.series.active_layers.clone(),
                    newly_pruned,
                    mask: a.mask.to_bit_string(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub test_accuracy: f64,
    pub final_loss: f64,
    pub flops_unpruned: FlopCount,
    pub flops_final: FlopCount,
    /// 1 − final/unpruned attention multiply–adds.
    pub attention_flop_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub layers: usize,
    pub provenance: Provenance,
    pub stages: Vec<StageSummary>,
    pub final_mask: String,
    pub train: Option<TrainSummary>,
}

impl RunSummary {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes =
            serde_json::to_vec_pretty(self).map_err(|e| ElaError::Validation(format!("summary: {e}")))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| ElaError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| ElaError::Ingestion(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(layer: usize, raw: f64) -> ReportRow {
        ReportRow {
            stage_id: 1,
            layer_pair: format!("{}-{layer}", layer - 1),
            layer,
            raw,
            mapped: 0.5,
            selected: 1,
            mask_bit: 0,
        }
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![row(2, 0.1), row(3, 1.0 / 3.0)];
        write_report_rows(&rows, &p).unwrap();
        assert_eq!(read_report_rows(&p).unwrap(), rows);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("stage_id,layer_pair,layer,raw,mapped,selected,mask_bit\n1,1-2,2,0.1,0.5,1,0\n"));
    }

    #[test]
    fn empty_report_keeps_its_header() {
        let bytes = report_csv_bytes(&[]).unwrap();
        assert_eq!(bytes, b"stage_id,layer_pair,layer,raw,mapped,selected,mask_bit\n");
    }
}
