//! Metrics, conventional test-set evaluation, the cross-household zero-shot
//! transfer harness, and comparison against externally supplied baselines.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::data::WindowPair;
use crate::error::{Error, Result};
use crate::model::{ForecastModel, ModelConfig, Prediction, CHANNELS};
use crate::revin::{standardize_channel, window_stats, DEFAULT_EPSILON};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Normalized,
    Physical,
}

/// Anything that maps an input window to a forecast. Lets external baseline
/// predictions run through the same harness without reimplementing them.
pub trait Predictor {
    fn predict_window(&self, window: &WindowPair) -> Result<Prediction>;
}

impl Predictor for ForecastModel {
    fn predict_window(&self, window: &WindowPair) -> Result<Prediction> {
        self.predict(window)
    }
}

pub fn mse(y: &Tensor, yhat: &Tensor) -> Result<f64> {
    check_shapes(y, yhat)?;
    let n = y.len() as f64;
    Ok(y.data.iter().zip(&yhat.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

pub fn mae(y: &Tensor, yhat: &Tensor) -> Result<f64> {
    check_shapes(y, yhat)?;
    let n = y.len() as f64;
    Ok(y.data.iter().zip(&yhat.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

fn check_shapes(y: &Tensor, yhat: &Tensor) -> Result<()> {
    if y.shape() != yhat.shape() {
        return Err(Error::Shape {
            expected: format!("{:?}", y.shape()),
            actual: format!("{:?}", yhat.shape()),
        });
    }
    Ok(())
}

/// Target on the per-window standardized scale: each channel standardized by
/// the *input* window's statistics, matching how forecasts are produced.
pub fn normalized_target(window: &WindowPair) -> Tensor {
    let stats = window_stats(&window.input);
    let horizon = window.target.rows;
    let mut out = Tensor::zeros(horizon, CHANNELS);
    for c in 0..CHANNELS {
        let col: Vec<f64> = (0..horizon).map(|t| window.target.get(t, c)).collect();
        let z = standardize_channel(&col, stats.mu[c], stats.var[c], DEFAULT_EPSILON);
        for t in 0..horizon {
            out.set(t, c, z[t]);
        }
    }
    out
}

fn window_metrics<P: Predictor>(model: &P, w: &WindowPair, scale: Scale) -> Result<(f64, f64)> {
    let pred = model.predict_window(w)?;
    let (truth, yhat) = match scale {
        Scale::Normalized => (normalized_target(w), pred.zscale),
        Scale::Physical => (w.target.clone(), pred.physical),
    };
    Ok((mse(&truth, &yhat)?, mae(&truth, &yhat)?))
}

/// Mean MSE/MAE over the test windows of the training household.
pub fn evaluate_conventional<P: Predictor>(
    model: &P,
    windows: &[WindowPair],
    scale: Scale,
) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut mse_sum = 0.0;
    let mut mae_sum = 0.0;
    for w in windows {
        let (m, a) = window_metrics(model, w, scale)?;
        mse_sum += m;
        mae_sum += a;
    }
    let n = windows.len() as f64;
    Ok((mse_sum / n, mae_sum / n))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HouseholdMetrics {
    pub mse: f64,
    pub mae: f64,
    pub windows: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_household: BTreeMap<u64, HouseholdMetrics>,
    /// Households skipped, with the reason (e.g. no complete window).
    pub excluded: Vec<(u64, String)>,
    pub sum_mse: f64,
    pub sum_mae: f64,
    pub scale: Scale,
    pub config: ModelConfig,
}

impl EvalReport {
    /// Sum fields must equal the per-household sums within 1e-9.
    pub fn validate(&self) -> Result<()> {
        let s_mse: f64 = self.per_household.values().map(|h| h.mse).sum();
        let s_mae: f64 = self.per_household.values().map(|h| h.mae).sum();
        if (s_mse - self.sum_mse).abs() > 1e-9 || (s_mae - self.sum_mae).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "report sums inconsistent: {} vs {}, {} vs {}",
                self.sum_mse, s_mse, self.sum_mae, s_mae
            )));
        }
        for (&hid, m) in &self.per_household {
            if !(m.mse.is_finite() && m.mae.is_finite()) {
                return Err(Error::NonFinite(format!("household {hid} metrics")));
            }
            if m.mse < 0.0 || m.mae < 0.0 {
                return Err(Error::Config(format!("household {hid} negative metric")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

/// Inference-only evaluation across held-out households. Per-household
/// metrics are means over that household's windows; Sum_ metrics add the
/// per-household means. Households without windows are excluded with a
/// reported reason rather than failing the whole run.
pub fn zero_shot_transfer<P: Predictor>(
    model: &P,
    config: &ModelConfig,
    households: &[(u64, Vec<WindowPair>)],
    scale: Scale,
) -> Result<EvalReport> {
    if households.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut per_household = BTreeMap::new();
    let mut excluded = Vec::new();
    for (hid, windows) in households {
        if windows.is_empty() {
            excluded.push((*hid, "no complete input/target window".to_string()));
            continue;
        }
        let (m, a) = evaluate_conventional(model, windows, scale)?;
        per_household.insert(*hid, HouseholdMetrics { mse: m, mae: a, windows: windows.len() });
    }
    if per_household.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let sum_mse = per_household.values().map(|h| h.mse).sum();
    let sum_mae = per_household.values().map(|h| h.mae).sum();
    let report = EvalReport {
        per_household,
        excluded,
        sum_mse,
        sum_mae,
        scale,
        config: config.clone(),
    };
    report.validate()?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub name: String,
    pub sum_mse: Option<f64>,
    pub sum_mae: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub baseline_mse: Option<f64>,
    pub baseline_mae: Option<f64>,
    /// (baseline - ours) / baseline, in percent; positive means we improve.
    pub delta_mse_pct: Option<f64>,
    pub delta_mae_pct: Option<f64>,
    pub note: Option<String>,
}

/// Percentage deltas against externally supplied baseline sums. Baselines
/// are never reimplemented here; missing entries produce an annotated row.
pub fn compare_external(report: &EvalReport, baselines: &[BaselineEntry]) -> Vec<ComparisonRow> {
    baselines
        .iter()
        .map(|b| {
            let delta = |base: Option<f64>, ours: f64| base.map(|v| (v - ours) / v * 100.0);
            let note = if b.sum_mse.is_none() || b.sum_mae.is_none() {
                Some("baseline entry incomplete".to_string())
            } else {
                None
            };
            ComparisonRow {
                name: b.name.clone(),
                baseline_mse: b.sum_mse,
                baseline_mae: b.sum_mae,
                delta_mse_pct: delta(b.sum_mse, report.sum_mse),
                delta_mae_pct: delta(b.sum_mae, report.sum_mae),
                note,
            }
        })
        .collect()
}
