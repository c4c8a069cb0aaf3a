//! Run configuration, loaded from TOML and overridable field by field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{DatasetSpec, StackGeometry, TrainConfig};
use crate::divergence::{DEFAULT_EPSILON, MAX_EPSILON};
use crate::error::{ElaError, Result};
use crate::mapping::{Mapper, MapperConfig};
use crate::pruning::{Stage, StageSchedule};
use crate::special::{BetaParams, ExpParams, GammaParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Score a recorded trace.
    Analyze,
    /// Train an unpruned toy stack, record its attention trace, then analyze it.
    Simulate,
    /// Train the toy stack with the schedule applied.
    Train,
    /// Render charts from an existing report.
    Report,
}

/// Inclusive epoch window of one stage; `tau` overrides the run-wide threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageWindow {
    pub start: u32,
    pub end: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

/// Standalone schedule file: a list of `[[stage]]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    #[serde(default)]
    pub stage: Vec<StageWindow>,
}

impl ScheduleFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ElaError::io(path, e))?;
        toml::from_str(&text).map_err(|e| ElaError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub probe_size: usize,
    /// `[source, target]`: layer `target` replays layer `source`'s retrieval.
    pub tied_layers: Option<(usize, usize)>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            probe_size: t.probe_size,
            tied_layers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    /// Mapper name: ebqm, gqm, eqm, normal, softmax, sigmoid, raw or fixed.
    pub mapper: String,
    /// Candidate quantile γ.
    pub gamma: f64,
    /// Beta α for ebqm, Gamma shape for gqm.
    pub alpha: f64,
    /// Beta β for ebqm, Gamma scale for gqm.
    pub beta: f64,
    /// Exponential rate for eqm.
    pub lambda: f64,
    /// Number of layers pruned by the fixed-count mapper.
    pub fixed_k: usize,
    pub tau: f64,
    pub epsilon: f64,
    #[serde(rename = "stage")]
    pub stages: Vec<StageWindow>,
    pub stack: StackGeometry,
    pub dataset: DatasetSpec,
    pub train: TrainSettings,
    pub trace: Option<PathBuf>,
    pub out: PathBuf,
    /// Also render SVG charts after analyze, simulate and train.
    pub plots: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::cifar()
    }
}

fn windows(ws: &[(u32, u32)]) -> Vec<StageWindow> {
    ws.iter()
        .map(|&(start, end)| StageWindow { start, end, tau: None })
        .collect()
}

impl RunConfig {
    /// α = 5, β = 1, τ = 0.3; windows 1–3, 45–48 and 91–93 of 180 epochs.
    pub fn cifar() -> Self {
        RunConfig {
            mode: RunMode::Analyze,
            mapper: "ebqm".into(),
            gamma: 0.5,
            alpha: 5.0,
            beta: 1.0,
            lambda: 1.0,
            fixed_k: 1,
            tau: 0.3,
            epsilon: DEFAULT_EPSILON,
            stages: windows(&[(1, 3), (45, 48), (91, 93)]),
            stack: StackGeometry {
                layers: 6,
                dim: 8,
                heads: 2,
                classes: 3,
            },
            dataset: DatasetSpec::default(),
            train: TrainSettings {
                epochs: 180,
                ..TrainSettings::default()
            },
            trace: None,
            out: PathBuf::from("ela-out"),
            plots: false,
            seed: 0,
        }
    }

    /// α = 2, β = 5, τ = 0.25; windows 1–3 and 51–53 of 100 epochs.
    pub fn imagenet() -> Self {
        let mut c = Self::cifar();
        c.alpha = 2.0;
        c.beta = 5.0;
        c.tau = 0.25;
        c.stages = windows(&[(1, 3), (51, 53)]);
        c.train.epochs = 100;
        c
    }

    /// α = 2, β = 5, τ = 0.2; measured at epochs 1 and 7 of 12.
    pub fn detection() -> Self {
        let mut c = Self::cifar();
        c.alpha = 2.0;
        c.beta = 5.0;
        c.tau = 0.2;
        c.stages = windows(&[(1, 1), (7, 7)]);
        c.train.epochs = 12;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "cifar" => Ok(Self::cifar()),
            "imagenet" => Ok(Self::imagenet()),
            "detection" => Ok(Self::detection()),
            other => Err(ElaError::Config(format!(
                "unknown preset {other:?} (expected cifar, imagenet or detection)"
            ))),
        }
    }

    /// Parses TOML; absent fields keep the cifar defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ElaError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ElaError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            ElaError::Config(m) => ElaError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn mapper_config(&self) -> Result<MapperConfig> {
        let mapper = match self.mapper.as_str() {
            "ebqm" => Mapper::Ebqm(BetaParams::new(self.alpha, self.beta)?),
            "gqm" => Mapper::Gqm(GammaParams::new(self.alpha, self.beta)?),
            "eqm" => Mapper::Eqm(ExpParams::new(self.lambda)?),
            "normal" => Mapper::Normal,
            "softmax" => Mapper::Softmax,
            "sigmoid" => Mapper::Sigmoid,
            "raw" => Mapper::RawThreshold,
            "fixed" => Mapper::FixedCount { k: self.fixed_k },
            other => {
                return Err(ElaError::Config(format!(
                    "unknown mapper {other:?} (expected ebqm, gqm, eqm, normal, softmax, sigmoid, raw or fixed)"
                )))
            }
        };
        MapperConfig::new(mapper, self.gamma)
    }

    pub fn schedule(&self) -> Result<StageSchedule> {
        let mapper = self.mapper_config()?;
        let stages = self
            .stages
            .iter()
            .enumerate()
            .map(|(i, w)| Stage {
                stage_id: i as u32 + 1,
                epochs: (w.start, w.end),
                mapper,
                tau: w.tau.unwrap_or(self.tau),
            })
            .collect();
        StageSchedule::new(stages)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            seed: self.seed,
            epsilon: self.epsilon,
            probe_size: self.train.probe_size,
            record_all_epochs: false,
            tied_layers: self.train.tied_layers,
        }
    }

    /// Checks ranges and the fields the chosen mode needs.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(ElaError::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= MAX_EPSILON) {
            return Err(ElaError::Config(format!(
                "epsilon must lie in (0, {MAX_EPSILON}], got {}",
                self.epsilon
            )));
        }
        self.schedule()?;
        self.stack.validate()?;
        match self.mode {
            RunMode::Analyze if self.trace.is_none() => {
                Err(ElaError::Config("analyze mode needs a trace file".into()))
            }
            RunMode::Train if self.stages.iter().any(|w| w.end > self.train.epochs) => Err(ElaError::Config(format!(
                "a stage window ends after the last training epoch ({})",
                self.train.epochs
            ))),
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The output
    /// directory and plot switch do not affect results and are left out.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.plots = false;
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_their_hyperparameters() {
        let c = RunConfig::cifar();
        assert_eq!((c.alpha, c.beta, c.tau, c.train.epochs), (5.0, 1.0, 0.3, 180));
        assert_eq!(c.schedule().unwrap().stages.len(), 3);
        let i = RunConfig::imagenet();
        assert_eq!((i.alpha, i.beta, i.tau, i.train.epochs), (2.0, 5.0, 0.25, 100));
        let d = RunConfig::detection();
        assert_eq!(d.tau, 0.2);
        assert_eq!(d.schedule().unwrap().stages[1].epochs, (7, 7));
    }

    #[test]
    fn toml_overrides_only_given_fields() {
        let c = RunConfig::from_toml(
            "mode = \"train\"\ntau = 0.4\n[[stage]]\nstart = 2\nend = 3\ntau = 0.1\n[train]\nepochs = 5\n",
        )
        .unwrap();
        assert_eq!(c.mode, RunMode::Train);
        assert_eq!(c.alpha, 5.0);
        let s = c.schedule().unwrap();
        assert_eq!(s.stages.len(), 1);
        assert_eq!(s.stages[0].tau, 0.1);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_mappers_are_rejected() {
        assert!(RunConfig::from_toml("colour = 1").is_err());
        let c = RunConfig {
            mapper: "median".into(),
            ..RunConfig::cifar()
        };
        assert!(matches!(c.mapper_config(), Err(ElaError::Config(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::cifar();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.tau = 0.31;
        assert_ne!(a.hash(), b.hash());
        b.tau = a.tau;
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
    }
}
