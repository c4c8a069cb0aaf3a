//! File formats and run configuration: JSON-lines attention traces, TOML
//! run configs, CSV/JSON reports and SVG charts.

mod atomic;
pub mod commands;
pub mod config;
pub mod report;
pub mod svg;
pub mod trace;

pub use atomic::write_atomic;
pub use commands::{run, RunOutput};
pub use config::{RunConfig, RunMode, ScheduleFile, StageWindow, TrainSettings};
pub use report::{
    read_report_rows, report_csv_bytes, report_rows, write_report_rows, Provenance, ReportRow, RunSummary, StageSummary, TrainSummary,
};
pub use svg::{bar_chart, line_chart, ChartBar};
pub use trace::{read_trace, read_trace_from, records_to_trace, write_trace, write_trace_to, TraceRecord};
