//! Toy trainer: SGD on a synthetic classification task with the staged
//! pruning schedule wired into the epoch loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::backward::{backward, softmax_cross_entropy, Gradients};
use super::network::{AttentionMode, LayerStack};
use crate::divergence::{AttentionDistribution, DEFAULT_EPSILON};
use crate::error::{ElaError, Result};
use crate::pruning::{flop_estimate, probe_distributions, run_stage, FlopCount, PruneMask, StageAudit, StageSchedule};

/// Gaussian-blob classification task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    /// Training samples; an equally sized test split is drawn alongside.
    pub samples: usize,
    /// Standard deviation of the per-sample noise around each class center.
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            classes: 3,
            samples: 240,
            noise: 0.35,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<usize>,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec, dim: usize) -> Result<Self> {
        if spec.classes < 2 || spec.samples == 0 || dim == 0 || !(spec.noise >= 0.0) {
            return Err(ElaError::Config(format!("invalid dataset parameters: {spec:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let centers: Vec<Vec<f64>> = (0..spec.classes)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect();
        let mut draw = |n: usize| {
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % spec.classes;
                let x: Vec<f64> = centers[c]
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + spec.noise * z
                    })
                    .collect();
                xs.push(x);
                ys.push(c);
            }
            (xs, ys)
        };
        let (train_x, train_y) = draw(spec.samples);
        let (test_x, test_y) = draw(spec.samples);
        Ok(Dataset {
            train_x,
            train_y,
            test_x,
            test_y,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// Training samples used to measure attention distributions.
    pub probe_size: usize,
    /// Record distributions every epoch, not only inside schedule windows.
    pub record_all_epochs: bool,
    /// `(source, target)`: layer `target` replays the retrieval of layer
    /// `source` (see `LayerStack::tie_retrieval`).
    pub tied_layers: Option<(usize, usize)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            probe_size: 64,
            record_all_epochs: false,
            tied_layers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub audits: Vec<StageAudit>,
    pub final_mask: PruneMask,
    pub test_accuracy: f64,
    pub flops_unpruned: FlopCount,
    pub flops_final: FlopCount,
    /// Head-averaged distributions per recorded epoch.
    #[serde(skip)]
    pub recorded: Vec<(u32, Vec<AttentionDistribution>)>,
}

/// Fraction of `xs` the stack classifies correctly.
pub fn accuracy(stack: &LayerStack, xs: &[Vec<f64>], ys: &[usize]) -> Result<f64> {
    if xs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        let t = stack.forward(x)?;
        let pred = t
            .logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        hits += usize::from(pred == y);
    }
    Ok(hits as f64 / xs.len() as f64)
}

/// Trains `stack` on `data`, running each schedule stage when its epoch
/// window closes.
pub fn train_toy(
    stack: &mut LayerStack,
    data: &Dataset,
    schedule: &StageSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    schedule.validate()?;
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(ElaError::Config("batch size and learning rate must be positive".into()));
    }
    if data.train_x.is_empty() {
        return Err(ElaError::Config("empty training set".into()));
    }
    if let Some(x) = data.train_x.first() {
        if x.len() != stack.geometry.dim {
            return Err(ElaError::Structural(format!(
                "features have {} components, stack dim is {}",
                x.len(),
                stack.geometry.dim
            )));
        }
    }
    if !schedule.stages.is_empty() {
        match stack.mode {
            AttentionMode::MrlaL => {
                return Err(ElaError::Config("pruning schedules need softmax attention".into()));
            }
            AttentionMode::MrlaB => stack.set_mode(AttentionMode::Ela),
            AttentionMode::Ela => {}
        }
    }
    if let Some((source, target)) = cfg.tied_layers {
        stack.tie_retrieval(source, target)?;
    }

    let flops_unpruned = flop_estimate(&stack.geometry, &PruneMask::all_ones(stack.geometry.layers));
    let probe: Vec<Vec<f64>> = data.train_x.iter().take(cfg.probe_size.max(1)).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train_x.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs as usize);
    let mut audits = Vec::new();
    let mut recorded: Vec<(u32, Vec<AttentionDistribution>)> = Vec::new();
    let mut window: Vec<(u32, Vec<AttentionDistribution>)> = Vec::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(stack);
            for &i in batch {
                let trace = stack.forward(&data.train_x[i])?;
                let (loss, g_logits) = softmax_cross_entropy(&trace.logits, data.train_y[i]);
                loss_sum += loss;
                let pred = trace
                    .logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                hits += usize::from(pred == data.train_y[i]);
                acc.accumulate(&backward(stack, &trace, &g_logits)?);
            }
            acc.scale(1.0 / batch.len() as f64);
            stack.apply_sgd(&acc, cfg.learning_rate);
        }
        let loss = loss_sum / data.train_x.len() as f64;
        if !loss.is_finite() {
            return Err(ElaError::Numerical(format!(
                "training diverged at epoch {epoch}: mean loss is {loss}"
            )));
        }
        epochs.push(EpochRecord {
            epoch,
            loss,
            train_accuracy: hits as f64 / data.train_x.len() as f64,
        });

        let in_window = schedule.in_window(epoch);
        if in_window || cfg.record_all_epochs {
            let distros = probe_distributions(stack, &probe)?;
            if in_window {
                window.push((epoch, distros.clone()));
            }
            recorded.push((epoch, distros));
        }
        if let Some(stage) = schedule.stage_ending_at(epoch) {
            let collected = std::mem::take(&mut window);
            audits.push(run_stage(stack, stage, &collected, cfg.epsilon)?);
        }
    }

    let final_mask = stack.mask().clone();
    Ok(TrainReport {
        test_accuracy: accuracy(stack, &data.test_x, &data.test_y)?,
        flops_final: flop_estimate(&stack.geometry, &final_mask),
        flops_unpruned,
        final_mask,
        epochs,
        audits,
        recorded,
    })
}
