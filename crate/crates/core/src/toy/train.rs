//! Mini-batch gradient descent with a linear warmup / linear decay
//! schedule, recording training dynamics at every checkpoint.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{Split, SyntheticDataset};
use super::model::{ToyModel, ToyModelSpec};
use crate::dynamics::{InstanceId, InstanceRecord, TrainingDynamics};
use crate::error::{Error, Result};
use crate::fmt::fixed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub checkpoint_every: usize,
    /// Decoupled weight decay, applied as `params -= lr * wd * params`.
    pub weight_decay: f64,
    pub seed: u64,
    /// Train ids batches are drawn from; all train ids when absent.
    pub subset: Option<BTreeSet<InstanceId>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 480,
            batch_size: 32,
            peak_lr: 0.5,
            warmup_fraction: 0.10,
            checkpoint_every: 40,
            weight_decay: 0.0,
            seed: 0,
            subset: None,
        }
    }
}

impl TrainConfig {
    pub fn num_checkpoints(&self) -> usize {
        self.max_steps / self.checkpoint_every.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::invalid("max_steps, batch_size and checkpoint_every must be positive"));
        }
        if self.checkpoint_every > self.max_steps {
            return Err(Error::invalid("checkpoint_every must not exceed max_steps"));
        }
        if self.num_checkpoints() < 2 {
            return Err(Error::invalid(format!(
                "{} steps with a checkpoint every {} give fewer than 2 checkpoints",
                self.max_steps, self.checkpoint_every
            )));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::invalid("peak_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction must be in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LinearSchedule {
        LinearSchedule {
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_fraction * self.max_steps as f64,
            max_steps: self.max_steps as f64,
        }
    }
}

/// Linear ramp from 0 to `peak_lr` over the warmup, then linear decay to 0
/// at `max_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub peak_lr: f64,
    pub warmup_steps: f64,
    pub max_steps: f64,
}

impl LinearSchedule {
    pub fn lr(&self, step: f64) -> f64 {
        if step < self.warmup_steps {
            self.peak_lr * step / self.warmup_steps
        } else if step >= self.max_steps {
            0.0
        } else {
            self.peak_lr * (self.max_steps - step) / (self.max_steps - self.warmup_steps)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    /// Optimizer steps completed when the checkpoint was taken.
    pub step: usize,
    pub id_accuracy: f64,
    pub hard_slice_accuracy: f64,
    pub params_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub model: ToyModelSpec,
    pub num_params: usize,
    pub dynamics: TrainingDynamics,
    pub checkpoint_metrics: Vec<CheckpointMetrics>,
    pub checkpoint_params: Vec<Vec<f64>>,
    pub final_params_digest: String,
    pub steps_trained: usize,
    /// True when a monitor halted training before `max_steps`.
    pub stopped_early: bool,
}

impl RunResult {
    pub fn hard_slice_curve(&self) -> Vec<f64> {
        self.checkpoint_metrics.iter().map(|m| m.hard_slice_accuracy).collect()
    }

    pub fn id_curve(&self) -> Vec<f64> {
        self.checkpoint_metrics.iter().map(|m| m.id_accuracy).collect()
    }

    pub fn write_metrics_csv<W: Write>(&self, sink: W) -> Result<()> {
        write_metrics_csv(&self.checkpoint_metrics, sink)
    }
}

/// `checkpoint,id_accuracy,hard_slice_accuracy`.
pub fn write_metrics_csv<W: Write>(metrics: &[CheckpointMetrics], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["checkpoint", "id_accuracy", "hard_slice_accuracy"])?;
    for (i, m) in metrics.iter().enumerate() {
        w.write_record([i.to_string(), fixed(m.id_accuracy, 6), fixed(m.hard_slice_accuracy, 6)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn params_digest(params: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for p in params {
        hasher.update(p.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

fn accuracy(model: &ToyModel, params: &[f64], ds: &SyntheticDataset, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let correct = model
        .predict_many(params, &ds.features, rows)
        .iter()
        .zip(rows)
        .filter(|(p, &r)| argmax(p) == ds.labels[r])
        .count();
    correct as f64 / rows.len() as f64
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Decides after each checkpoint whether training continues.
pub trait CheckpointMonitor {
    fn keep_going(&mut self, index: usize, metrics: &CheckpointMetrics) -> bool;
}

impl<F: FnMut(usize, &CheckpointMetrics) -> bool> CheckpointMonitor for F {
    fn keep_going(&mut self, index: usize, metrics: &CheckpointMetrics) -> bool {
        self(index, metrics)
    }
}

/// Trains for the full `max_steps`.
pub fn train(ds: &SyntheticDataset, spec: ToyModelSpec, config: &TrainConfig, run_id: &str) -> Result<RunResult> {
    train_with_monitor(ds, spec, config, run_id, &mut |_: usize, _: &CheckpointMetrics| true)
}

/// Reference run: always the full training set.
pub fn run_reference(ds: &SyntheticDataset, spec: ToyModelSpec, config: &TrainConfig, run_id: &str) -> Result<RunResult> {
    let config = TrainConfig { subset: None, ..config.clone() };
    train(ds, spec, &config, run_id)
}

/// Trains until `max_steps` or until `monitor` declines to continue.
///
/// Every `checkpoint_every` steps the whole train split is scored with a
/// dedicated forward pass (instances outside the subset included) and
/// both evaluation splits are measured.
pub fn train_with_monitor(
    ds: &SyntheticDataset,
    spec: ToyModelSpec,
    config: &TrainConfig,
    run_id: &str,
    monitor: &mut dyn CheckpointMonitor,
) -> Result<RunResult> {
    config.validate()?;
    let model = ToyModel::new(spec, ds.dim, ds.num_classes)?;
    let train_rows = ds.rows_in(Split::Train);
    if train_rows.is_empty() {
        return Err(Error::invalid("dataset has no training instances"));
    }
    let id_rows = ds.rows_in(Split::IdEval);
    let hard_rows = ds.rows_in(Split::HardSliceEval);

    let mut pool: Vec<usize> = match &config.subset {
        None => train_rows.clone(),
        Some(subset) => {
            let mut rows = Vec::with_capacity(subset.len());
            for id in subset {
                let r = id.0 as usize;
                if r >= ds.len() || ds.splits[r] != Split::Train {
                    return Err(Error::invalid(format!("subset id {id} is not a training instance")));
                }
                rows.push(r);
            }
            rows
        }
    };
    if pool.is_empty() {
        return Err(Error::invalid("training subset is empty"));
    }

    let mut params = model.init_params(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5eed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let schedule = config.schedule();
    let total_checkpoints = config.num_checkpoints();

    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(total_checkpoints); train_rows.len()];
    let mut metrics = Vec::with_capacity(total_checkpoints);
    let mut snapshots = Vec::with_capacity(total_checkpoints);
    let mut cursor = pool.len();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut steps_trained = 0;
    let mut stopped_early = false;

    for step in 0..config.max_steps {
        // cycle through a fresh shuffle each epoch; the last batch may be short
        if cursor >= pool.len() {
            pool.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(pool.len());
        batch.clear();
        batch.extend_from_slice(&pool[cursor..end]);
        cursor = end;

        let (loss, grad) = model.loss_and_grad(&params, &ds.features, &ds.labels, &batch);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        let lr = schedule.lr(step as f64);
        let decay = 1.0 - lr * config.weight_decay;
        for (p, g) in params.iter_mut().zip(&grad) {
            *p = *p * decay - lr * g;
        }
        steps_trained = step + 1;

        if steps_trained % config.checkpoint_every == 0 && metrics.len() < total_checkpoints {
            let probs = model.predict_many(&params, &ds.features, &train_rows);
            for ((s, p), &r) in series.iter_mut().zip(&probs).zip(&train_rows) {
                s.push(p[ds.labels[r]]);
            }
            let m = CheckpointMetrics {
                step: steps_trained,
                id_accuracy: accuracy(&model, &params, ds, &id_rows),
                hard_slice_accuracy: accuracy(&model, &params, ds, &hard_rows),
                params_digest: params_digest(&params),
            };
            let index = metrics.len();
            let go_on = monitor.keep_going(index, &m);
            metrics.push(m);
            snapshots.push(params.clone());
            if !go_on {
                stopped_early = steps_trained < config.max_steps;
                break;
            }
        }
    }

    let checkpoints = metrics.len();
    if checkpoints < 2 {
        return Err(Error::invalid(format!(
            "run {run_id} stopped after {checkpoints} checkpoint(s); dynamics need at least 2"
        )));
    }
    let records = train_rows
        .iter()
        .zip(series)
        .map(|(&r, p_true)| InstanceRecord {
            id: InstanceId(r as u64),
            gold: ds.labels[r] as u32,
            p_true,
        })
        .collect();
    let dynamics = TrainingDynamics::new(
        run_id,
        spec.name(),
        model.num_params() as u64,
        ds.name(),
        checkpoints,
        records,
    )?;

    Ok(RunResult {
        model: spec,
        num_params: model.num_params(),
        dynamics,
        checkpoint_metrics: metrics,
        checkpoint_params: snapshots,
        final_params_digest: params_digest(&params),
        steps_trained,
        stopped_early,
    })
}
