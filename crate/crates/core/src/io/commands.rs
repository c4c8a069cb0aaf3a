//! The four run modes. Each writes its outputs into `cfg.out`.

use std::fs;
use std::path::{Path, PathBuf};

use super::atomic::write_atomic;
use super::config::{RunConfig, RunMode};
use super::report::{
    read_report_rows, report_rows, write_report_rows, Provenance, ReportRow, RunSummary, StageSummary, TrainSummary,
};
use super::svg::{bar_chart, line_chart, ChartBar};
use super::trace::{read_trace, records_to_trace, write_trace, TraceRecord};
use crate::attention::{train_toy, Dataset, LayerStack, AttentionMode, TrainReport};
use crate::error::{ElaError, Result};
use crate::pruning::{analyze_trace, PruneMask, StageAudit, StageSchedule};

pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const TRACE_FILE: &str = "trace.jsonl";

/// What a command produced, besides the files.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub audits: Vec<StageAudit>,
    pub rows: Vec<ReportRow>,
    pub summary: Option<RunSummary>,
    pub written: Vec<PathBuf>,
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.mode {
        RunMode::Analyze => cmd_analyze(cfg),
        RunMode::Simulate => cmd_simulate(cfg),
        RunMode::Train => cmd_train(cfg),
        RunMode::Report => cmd_report(cfg),
    }
}

fn summary(cfg: &RunConfig, layers: usize, audits: &[StageAudit], train: Option<TrainSummary>) -> Result<RunSummary> {
    let final_mask = audits
        .last()
        .map(|a| a.mask.clone())
        .unwrap_or_else(|| PruneMask::all_ones(layers));
    Ok(RunSummary {
        mode: format!("{:?}", cfg.mode).to_lowercase(),
        layers,
        provenance: Provenance::from_config(cfg)?,
        stages: StageSummary::from_audits(audits),
        final_mask: final_mask.to_bit_string(),
        train,
    })
}

fn write_reports(cfg: &RunConfig, audits: Vec<StageAudit>, summary: RunSummary) -> Result<RunOutput> {
    let rows = report_rows(&audits);
    let report = cfg.out.join(REPORT_FILE);
    let summary_path = cfg.out.join(SUMMARY_FILE);
    write_report_rows(&rows, &report)?;
    summary.write(&summary_path)?;
    let mut written = vec![report, summary_path];
    if cfg.plots {
        written.extend(render_charts(&cfg.out, &rows, Some(&summary), cfg.tau)?);
    }
    Ok(RunOutput {
        audits,
        rows,
        summary: Some(summary),
        written,
    })
}

/// Scores a recorded trace under the configured schedule.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<RunOutput> {
    let path = cfg
        .trace
        .as_deref()
        .ok_or_else(|| ElaError::Config("analyze mode needs a trace file".into()))?;
    let records = read_trace(path)?;
    analyze_records(cfg, &records)
}

fn analyze_records(cfg: &RunConfig, records: &[TraceRecord]) -> Result<RunOutput> {
    let trace = records_to_trace(records);
    let layers = trace.layer_count();
    if layers == 0 {
        return Err(ElaError::Ingestion("trace holds no records".into()));
    }
    let audits = analyze_trace(&trace, layers, &cfg.schedule()?, cfg.epsilon)?;
    let s = summary(cfg, layers, &audits, None)?;
    write_reports(cfg, audits, s)
}

/// Trains an unpruned toy stack, records its per-epoch attention as a
/// trace, then analyzes that trace.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<RunOutput> {
    let last = cfg.stages.iter().map(|w| w.end).max().unwrap_or(0);
    let data = Dataset::generate(&cfg.dataset, cfg.stack.dim)?;
    let mut stack = LayerStack::new(cfg.stack, AttentionMode::MrlaB, cfg.seed)?;
    let mut tc = cfg.train_config();
    tc.epochs = tc.epochs.max(last);
    tc.record_all_epochs = true;
    let report = train_toy(&mut stack, &data, &StageSchedule::default(), &tc)?;
    let records: Vec<TraceRecord> = report
        .recorded
        .iter()
        .flat_map(|(epoch, distros)| {
            distros.iter().map(move |d| TraceRecord {
                epoch: *epoch,
                layer_index: d.layer_index,
                head_index: d.head_index,
                weights: d.weights.clone(),
            })
        })
        .collect();
    let trace_path = cfg.out.join(TRACE_FILE);
    write_trace(&records, &trace_path)?;
    let mut out = analyze_records(cfg, &records)?;
    out.written.insert(0, trace_path);
    Ok(out)
}

fn train_summary(report: &TrainReport) -> TrainSummary {
    let before = report.flops_unpruned.attention as f64;
    let after = report.flops_final.attention as f64;
    TrainSummary {
        test_accuracy: report.test_accuracy,
        final_loss: report.epochs.last().map_or(f64::NAN, |e| e.loss),
        flops_unpruned: report.flops_unpruned,
        flops_final: report.flops_final,
        attention_flop_reduction: if before > 0.0 { 1.0 - after / before } else { 0.0 },
    }
}

/// Trains the toy stack with the schedule applied.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunOutput> {
    let data = Dataset::generate(&cfg.dataset, cfg.stack.dim)?;
    let mut stack = LayerStack::new(cfg.stack, AttentionMode::Ela, cfg.seed)?;
    let report = train_toy(&mut stack, &data, &cfg.schedule()?, &cfg.train_config())?;
    let mut loss = String::from("epoch,loss,train_accuracy\n");
    for e in &report.epochs {
        loss.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.train_accuracy));
    }
    let loss_path = cfg.out.join(LOSS_FILE);
    write_atomic(&loss_path, loss.as_bytes())?;
    let s = summary(cfg, cfg.stack.layers, &report.audits, Some(train_summary(&report)))?;
    let mut out = write_reports(cfg, report.audits, s)?;
    out.written.push(loss_path);
    Ok(out)
}

/// Renders charts from the report files already in `cfg.out`.
pub fn cmd_report(cfg: &RunConfig) -> Result<RunOutput> {
    let report = cfg.out.join(REPORT_FILE);
    if !report.is_file() {
        return Err(ElaError::io(
            &report,
            std::io::Error::new(std::io::ErrorKind::NotFound, "report file not found; run analyze or train first"),
        ));
    }
    let rows = read_report_rows(&report)?;
    let summary_path = cfg.out.join(SUMMARY_FILE);
    let summary = if summary_path.is_file() {
        Some(RunSummary::read(&summary_path)?)
    } else {
        None
    };
    let tau = summary.as_ref().map_or(cfg.tau, |s| s.provenance.tau);
    let written = render_charts(&cfg.out, &rows, summary.as_ref(), tau)?;
    Ok(RunOutput {
        audits: Vec::new(),
        rows,
        summary,
        written,
    })
}

fn row_label(r: &ReportRow) -> String {
    format!("s{} {}", r.stage_id, r.layer_pair)
}

/// Writes `scores.svg`, `divergence.svg` and, for training runs, `flops.svg`.
pub fn render_charts(dir: &Path, rows: &[ReportRow], summary: Option<&RunSummary>, tau: f64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| ElaError::io(dir, e))?;
    let bars: Vec<ChartBar> = rows
        .iter()
        .map(|r| ChartBar {
            label: row_label(r),
            value: r.mapped,
            highlight: r.mask_bit == 0,
        })
        .collect();
    let labels: Vec<String> = rows.iter().map(row_label).collect();
    let raw: Vec<f64> = rows.iter().map(|r| r.raw).collect();
    let mut out = Vec::new();
    let scores = dir.join("scores.svg");
    write_atomic(&scores, bar_chart("Mapped scores (pruned in red)", &bars, Some(tau)).as_bytes())?;
    out.push(scores);
    let div = dir.join("divergence.svg");
    write_atomic(&div, line_chart("Adjacent-layer divergence", &labels, &raw).as_bytes())?;
    out.push(div);
    if let Some(t) = summary.and_then(|s| s.train.as_ref()) {
        let bars = [
            ChartBar {
                label: "unpruned".into(),
                value: t.flops_unpruned.attention as f64,
                highlight: false,
            },
            ChartBar {
                label: "pruned".into(),
                value: t.flops_final.attention as f64,
                highlight: true,
            },
        ];
        let flops = dir.join("flops.svg");
        write_atomic(&flops, bar_chart("Attention multiply-adds per sample", &bars, None).as_bytes())?;
        out.push(flops);
    }
    Ok(out)
}
