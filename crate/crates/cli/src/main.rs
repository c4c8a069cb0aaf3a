use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ela_core::io::{commands, RunConfig, RunMode, ScheduleFile};
use ela_core::{ElaError, Result};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Analyze,
    Simulate,
    Train,
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MapperName {
    Ebqm,
    Gqm,
    Eqm,
    Normal,
    Softmax,
    Sigmoid,
    Raw,
    Fixed,
}

/// Scores adjacent-layer attention redundancy and prunes layer retrievals.
#[derive(Debug, Parser)]
#[command(name = "ela", version)]
struct Args {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Base settings: cifar, imagenet or detection.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mapper: Option<MapperName>,
    /// Candidate quantile.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Exponential rate for the eqm mapper.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    fixed_k: Option<usize>,
    /// TOML file of [[stage]] windows; replaces the configured schedule.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// JSON-lines attention trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    layers: Option<usize>,
    /// Render SVG charts after the run.
    #[arg(long)]
    plots: bool,
}

fn build_config(args: &Args) -> Result<RunConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(path) = &args.schedule {
        cfg.stages = ScheduleFile::load(path)?.stage;
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            Mode::Analyze => RunMode::Analyze,
            Mode::Simulate => RunMode::Simulate,
            Mode::Train => RunMode::Train,
            Mode::Report => RunMode::Report,
        };
    }
    if let Some(m) = args.mapper {
        cfg.mapper = format!("{m:?}").to_lowercase();
    }
    macro_rules! set {
        ($($field:ident => $target:expr),*) => {
            $(if let Some(v) = args.$field.clone() { $target = v; })*
        };
    }
    set!(gamma => cfg.gamma, alpha => cfg.alpha, beta => cfg.beta, lambda => cfg.lambda, tau => cfg.tau,
        epsilon => cfg.epsilon, fixed_k => cfg.fixed_k, out => cfg.out, seed => cfg.seed,
        epochs => cfg.train.epochs, layers => cfg.stack.layers);
    if let Some(t) = &args.trace {
        cfg.trace = Some(t.clone());
    }
    cfg.plots |= args.plots;
    Ok(cfg)
}

fn execute(args: &Args) -> Result<()> {
    let cfg = build_config(args)?;
    let out = commands::run(&cfg)?;
    if let Some(s) = &out.summary {
        for st in &s.stages {
            println!(
                "stage {} (epochs {}-{}): mask {} pruned {:?}",
                st.stage_id, st.epochs.0, st.epochs.1, st.mask, st.newly_pruned
            );
        }
        println!("final mask {}", s.final_mask);
        if let Some(t) = &s.train {
            println!(
                "test accuracy {:.4}, attention multiply-adds {} -> {} ({:.1}% fewer)",
                t.test_accuracy,
                t.flops_unpruned.attention,
                t.flops_final.attention,
                100.0 * t.attention_flop_reduction
            );
        }
    }
    for p in &out.written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &ElaError) -> u8 {
    e.exit_code() as u8
}
