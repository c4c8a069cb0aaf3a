//! Attention traces: one JSON object per line with keys `epoch`,
//! `layer_index`, `head_index`, `weights`, in that order.

use std::collections::HashSet;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic::write_atomic;
use crate::divergence::{AttentionDistribution, SUM_TOLERANCE};
use crate::error::{ElaError, Result};
use crate::pruning::RecordedTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub epoch: u32,
    pub layer_index: usize,
    pub head_index: usize,
    pub weights: Vec<f64>,
}

impl TraceRecord {
    pub fn validate(&self) -> Result<()> {
        let key = self.key_label();
        if self.epoch == 0 || self.layer_index == 0 {
            return Err(ElaError::Validation(format!("{key}: epoch and layer index start at 1")));
        }
        if self.weights.len() != self.layer_index {
            return Err(ElaError::Validation(format!(
                "{key}: expected {} weights, found {}",
                self.layer_index,
                self.weights.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(ElaError::Validation(format!("{key}: weight {w} is not a finite nonnegative number")));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ElaError::Validation(format!("{key}: weights sum to {sum}, not 1")));
        }
        Ok(())
    }

    fn key(&self) -> (u32, usize, usize) {
        (self.epoch, self.layer_index, self.head_index)
    }

    fn key_label(&self) -> String {
        format!(
            "record (epoch {}, layer {}, head {})",
            self.epoch, self.layer_index, self.head_index
        )
    }
}

fn check_unique(seen: &mut HashSet<(u32, usize, usize)>, r: &TraceRecord) -> Result<()> {
    if !seen.insert(r.key()) {
        return Err(ElaError::Validation(format!("duplicate {}", r.key_label())));
    }
    Ok(())
}

/// Parses and validates records from any line source. Blank lines are skipped.
pub fn read_trace_from<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| ElaError::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| {
            ElaError::Ingestion(format!("{}:{lineno}: malformed record: {e}", origin.display()))
        })?;
        let located = |e: ElaError| match e {
            ElaError::Validation(m) => ElaError::Validation(format!("{}:{lineno}: {m}", origin.display())),
            other => other,
        };
        rec.validate().map_err(located)?;
        check_unique(&mut seen, &rec).map_err(located)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = fs::File::open(path).map_err(|e| ElaError::io(path, e))?;
    read_trace_from(std::io::BufReader::new(file), path)
}

/// Canonical bytes for `records`, validating every record first.
pub fn write_trace_to(records: &[TraceRecord]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    for r in records {
        r.validate()?;
        check_unique(&mut seen, r)?;
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| ElaError::Validation(format!("cannot serialize: {e}")))?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_trace(records: &[TraceRecord], path: &Path) -> Result<()> {
    let bytes = write_trace_to(records)?;
    write_atomic(path, &bytes)
}

/// Groups records by epoch and layer; heads are averaged on lookup.
pub fn records_to_trace(records: &[TraceRecord]) -> RecordedTrace {
    let mut trace = RecordedTrace::new();
    for r in records {
        trace.insert(
            r.epoch,
            AttentionDistribution {
                layer_index: r.layer_index,
                head_index: r.head_index,
                weights: r.weights.clone(),
            },
        );
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: u32, layer: usize, head: usize, weights: Vec<f64>) -> TraceRecord {
        TraceRecord {
            epoch,
            layer_index: layer,
            head_index: head,
            weights,
        }
    }

    #[test]
    fn empty_input_gives_no_records() {
        let got = read_trace_from(&b""[..], Path::new("t")).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn key_order_is_fixed() {
        let bytes = write_trace_to(&[rec(1, 2, 0, vec![0.25, 0.75])]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "{\"epoch\":1,\"layer_index\":2,\"head_index\":0,\"weights\":[0.25,0.75]}\n"
        );
    }

    #[test]
    fn bad_sum_is_rejected_with_line_number() {
        let text = "{\"epoch\":1,\"layer_index\":1,\"head_index\":0,\"weights\":[1.0]}\n\
                    {\"epoch\":1,\"layer_index\":2,\"head_index\":0,\"weights\":[0.4,0.5]}\n";
        let err = read_trace_from(text.as_bytes(), Path::new("t.jsonl")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ElaError::Validation(_)));
        assert!(msg.contains("t.jsonl:2") && msg.contains("layer 2"), "{msg}");
    }

    #[test]
    fn duplicates_are_rejected() {
        let r = rec(1, 1, 0, vec![1.0]);
        assert!(matches!(write_trace_to(&[r.clone(), r]), Err(ElaError::Validation(_))));
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = read_trace_from(&b"{\"epoch\":1}\n"[..], Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("x:1"));
    }
}
