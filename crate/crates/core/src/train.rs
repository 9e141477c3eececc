//! Selective optimization of the trainable component registry with the
//! composite loss L = L_pred + lambda * L_align, plus the lambda-sensitivity
//! sweep and the task-mode/metric ablation harness.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor};
use crate::data::WindowPair;
use crate::error::{Error, Result};
use crate::eval::{evaluate_conventional, zero_shot_transfer, Scale};
use crate::model::{ForecastModel, ModelConfig, TaskMode};
use crate::params::{BoundParams, ParamStore};
use crate::prompt::SimilarityMetric;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            lr: 1e-4,
            max_epochs: 20,
            batch_size: 16,
            early_stop_patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Mean squared error between normalized forecast and normalized truth.
pub fn pred_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    crate::eval::mse(target, pred)
}

/// Alignment loss over the selected-prototype similarity scores.
pub fn align_loss(scores: &[f64], metric: SimilarityMetric) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::DegenerateSelection);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(match metric {
        SimilarityMetric::Cosine => 1.0 - mean,
        // scores carry negated distances
        SimilarityMetric::Euclidean => -mean,
    })
}

pub fn total_loss(pred_l: f64, align_l: f64, lambda: f64) -> Result<f64> {
    if !(pred_l.is_finite() && align_l.is_finite() && lambda.is_finite()) {
        return Err(Error::NonFinite("loss inputs".into()));
    }
    Ok(pred_l + lambda * align_l)
}

/// Adaptive moment estimation over the trainable registry only.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, grad) in grads {
            let p = params.get_mut(name);
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub pred_loss: f64,
    pub align_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: usize,
}

pub fn write_curve_csv(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "pred_loss", "align_loss"])?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.pred_loss.to_string(),
            r.align_loss.to_string(),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

fn batch_values(
    model: &ForecastModel,
    windows: &[WindowPair],
    lambda: f64,
) -> Result<(f64, f64, f64)> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &model.params);
    let ctx = model.graph_context(&mut g);
    let loss = model.batch_loss(&mut g, &bound, &ctx, windows, lambda)?;
    Ok((
        g.value(loss.total).data[0],
        g.value(loss.pred).data[0],
        g.value(loss.align).data[0],
    ))
}

fn validation_loss(
    model: &ForecastModel,
    windows: &[WindowPair],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for chunk in windows.chunks(cfg.batch_size) {
        let (t, _, _) = batch_values(model, chunk, cfg.lambda)?;
        total += t * chunk.len() as f64;
        n += chunk.len();
    }
    Ok(total / n as f64)
}

/// One gradient step on a batch; returns (total, pred, align) loss values.
pub fn train_step(
    model: &mut ForecastModel,
    opt: &mut Adam,
    batch: &[WindowPair],
    lambda: f64,
    step: usize,
) -> Result<(f64, f64, f64)> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &model.params);
    let ctx = model.graph_context(&mut g);
    let loss = model.batch_loss(&mut g, &bound, &ctx, batch, lambda)?;
    let total = g.value(loss.total).data[0];
    if !total.is_finite() {
        return Err(Error::Divergence { step });
    }
    let pred = g.value(loss.pred).data[0];
    let align = g.value(loss.align).data[0];
    g.backward(loss.total);
    let mut grads = BTreeMap::new();
    for (name, id) in bound.ids() {
        if model.policy.is_trainable(name) {
            grads.insert(name.to_string(), g.grad(id).to_vec());
        }
    }
    opt.step(&mut model.params, &grads);
    Ok((total, pred, align))
}

/// Full training loop: shuffled mini-batches, per-epoch validation, best-
/// checkpoint selection, early stopping. Mutates the model in place and
/// leaves it at the best-validation parameters.
pub fn train(
    model: &mut ForecastModel,
    train_windows: &[WindowPair],
    val_windows: &[WindowPair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut curve = Vec::new();
    let mut best_params = model.params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total_sum = 0.0;
        let mut pred_sum = 0.0;
        let mut align_sum = 0.0;
        let mut n = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<WindowPair> =
                chunk.iter().map(|&i| train_windows[i].clone()).collect();
            step += 1;
            let (t, p, a) = train_step(model, &mut opt, &batch, cfg.lambda, step)?;
            total_sum += t * batch.len() as f64;
            pred_sum += p * batch.len() as f64;
            align_sum += a * batch.len() as f64;
            n += batch.len();
        }
        let val = validation_loss(model, val_windows, cfg)?;
        if !val.is_finite() {
            return Err(Error::Divergence { step });
        }
        curve.push(EpochRecord {
            epoch,
            train_loss: total_sum / n as f64,
            val_loss: val,
            pred_loss: pred_sum / n as f64,
            align_loss: align_sum / n as f64,
        });
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best_params = model.params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    model.params = best_params;
    Ok(TrainOutcome { curve, best_epoch, best_val_loss: best_val, steps: step })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub sum_mse: f64,
    pub sum_mae: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "sum_mse", "sum_mae"])?;
    for r in rows {
        w.write_record([r.lambda.to_string(), r.sum_mse.to_string(), r.sum_mae.to_string()])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// One full train + zero-shot-transfer cycle per lambda on the grid, with
/// identical seeds across cells.
pub fn sensitivity_sweep<F>(
    factory: F,
    train_windows: &[WindowPair],
    val_windows: &[WindowPair],
    transfer: &[(u64, Vec<WindowPair>)],
    base: &TrainConfig,
    grid: &[f64],
    scale: Scale,
) -> Result<Vec<SweepRow>>
where
    F: Fn() -> Result<ForecastModel>,
{
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut model = factory()?;
        let cfg = TrainConfig { lambda, ..base.clone() };
        train(&mut model, train_windows, val_windows, &cfg)?;
        let report = zero_shot_transfer(&model, &model.cfg, transfer, scale)?;
        rows.push(SweepRow { lambda, sum_mse: report.sum_mse, sum_mae: report.sum_mae });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationCell {
    pub task_mode: TaskMode,
    pub metric: SimilarityMetric,
    pub mse: f64,
    pub mae: f64,
}

/// 2x2 grid over learning framework and similarity metric, shared seeds.
pub fn ablation_run(
    base_cfg: &ModelConfig,
    train_windows: &[WindowPair],
    val_windows: &[WindowPair],
    test_windows: &[WindowPair],
    tcfg: &TrainConfig,
    scale: Scale,
) -> Result<Vec<AblationCell>> {
    let cells = [
        (TaskMode::Mtl, SimilarityMetric::Cosine),
        (TaskMode::Mtl, SimilarityMetric::Euclidean),
        (TaskMode::Single, SimilarityMetric::Cosine),
        (TaskMode::Single, SimilarityMetric::Euclidean),
    ];
    let mut out = Vec::with_capacity(4);
    for (task_mode, metric) in cells {
        let mut cfg = base_cfg.clone();
        cfg.task_mode = task_mode;
        cfg.metric = metric;
        let mut model = ForecastModel::new_toy(cfg)?;
        train(&mut model, train_windows, val_windows, tcfg)?;
        let (mse, mae) = evaluate_conventional(&model, test_windows, scale)?;
        out.push(AblationCell { task_mode, metric, mse, mae });
    }
    Ok(out)
}

pub fn write_ablation_csv(path: &Path, cells: &[AblationCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["task_mode", "metric", "mse", "mae"])?;
    for c in cells {
        let mode = match c.task_mode {
            TaskMode::Mtl => "mtl",
            TaskMode::Single => "single",
        };
        w.write_record([mode.to_string(), c.metric.to_string(), c.mse.to_string(), c.mae.to_string()])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}
