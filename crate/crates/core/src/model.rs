//! End-to-end forecasting model: instance normalization, in-graph seasonal-
//! trend decomposition, patch meta-tokens, shared projection, prototype
//! alignment, frozen backbone, and reconstruction head.
//!
//! Each of the three load channels runs as its own task pass through the
//! same backbone; the multi-task coupling lives in the shared projection.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, VarId};
use crate::backbone::{self, BackboneConfig};
use crate::data::WindowPair;
use crate::decompose::DecompositionMatrices;
use crate::error::{Error, Result};
use crate::params::{BoundParams, FreezePolicy, ParamStore};
use crate::prompt::{graph_prototype_scores, meta_token_index_map, rank_descending, SimilarityMetric};
use crate::revin::{standardize_channel, window_stats, NormParams, NormStats, DEFAULT_EPSILON};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Mtl,
    Single,
}

pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_len: usize,
    pub horizon: usize,
    pub period: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
    pub k_proto: usize,
    pub m_prefix: usize,
    pub metric: SimilarityMetric,
    pub task_mode: TaskMode,
    pub backbone: BackboneConfig,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-size defaults on the toy backbone.
    pub fn toy_default() -> Self {
        ModelConfig {
            input_len: 512,
            horizon: 96,
            period: 48,
            patch_len: 16,
            patch_stride: 8,
            k_proto: 32,
            m_prefix: 8,
            metric: SimilarityMetric::Cosine,
            task_mode: TaskMode::Mtl,
            backbone: BackboneConfig::toy(),
            seed: 0,
        }
    }

    /// Small dimensions for fast tests and gradient checks.
    pub fn toy_small() -> Self {
        let mut cfg = ModelConfig::toy_default();
        cfg.input_len = 96;
        cfg.horizon = 8;
        cfg.period = 12;
        cfg.patch_len = 8;
        cfg.patch_stride = 4;
        cfg.k_proto = 16;
        cfg.m_prefix = 4;
        cfg.backbone.d_prime = 16;
        cfg.backbone.n_heads = 2;
        cfg.backbone.vocab_size = 32;
        cfg.backbone.max_positions = 64;
        cfg
    }

    pub fn n_patches(&self) -> usize {
        crate::decompose::patch_count(self.input_len, self.patch_len, self.patch_stride)
    }

    pub fn prompt_len(&self) -> usize {
        self.m_prefix + self.n_patches()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len < 2 * self.period {
            return Err(Error::InsufficientCycles { n: self.input_len, period: self.period });
        }
        if self.patch_len > self.input_len {
            return Err(Error::PatchTooLong { patch_len: self.patch_len, n: self.input_len });
        }
        if self.m_prefix > self.k_proto {
            return Err(Error::Config(format!(
                "m_prefix {} exceeds k_proto {}",
                self.m_prefix, self.k_proto
            )));
        }
        if self.prompt_len() > self.backbone.max_positions {
            return Err(Error::ContextLength {
                len: self.prompt_len(),
                max_positions: self.backbone.max_positions,
            });
        }
        Ok(())
    }
}

/// One channel pass through the pipeline.
pub struct TaskForward {
    /// (1, horizon) forecast on the gamma/beta-normalized scale.
    pub yhat: VarId,
    /// (1, m_prefix) similarity scores of the selected prototypes.
    pub selected_scores: Option<VarId>,
    pub selected: Vec<usize>,
    /// (1, horizon) target on the same normalized scale, when requested.
    pub target_norm: Option<VarId>,
}

pub struct WindowForward {
    pub tasks: Vec<TaskForward>,
    pub stats: NormStats,
}

pub struct BatchLoss {
    pub total: VarId,
    pub pred: VarId,
    pub align: VarId,
}

/// Physical-unit and standardized forecasts for one window.
pub struct Prediction {
    /// (horizon, 3) in kW.
    pub physical: Tensor,
    /// (horizon, 3) on the per-window standardized (z) scale.
    pub zscale: Tensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub run_id: String,
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

pub struct ForecastModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub policy: FreezePolicy,
    dec: DecompositionMatrices,
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).unwrap();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

impl ForecastModel {
    /// Seed-initialized model on the toy backbone.
    pub fn new_toy(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        backbone::init_toy(&mut params, &cfg.backbone, cfg.seed);
        Self::init_non_backbone(&mut params, &cfg);
        Self::assemble(cfg, params)
    }

    /// Model around a GPT-2-layout safetensors checkpoint. Non-backbone
    /// parameters are seed-initialized; backbone dims override the config.
    pub fn new_pretrained(mut cfg: ModelConfig, weights: &Path) -> Result<Self> {
        let mut params = ParamStore::new();
        let loaded = backbone::load_pretrained(weights, &mut params)?;
        cfg.backbone = BackboneConfig {
            layers_used: cfg.backbone.layers_used,
            ..loaded
        };
        cfg.validate()?;
        Self::init_non_backbone(&mut params, &cfg);
        Self::assemble(cfg, params)
    }

    fn init_non_backbone(params: &mut ParamStore, cfg: &ModelConfig) {
        // offset so toy backbone init (same seed) stays decoupled
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b9));
        let d = cfg.backbone.d_prime;
        let in_w = 3 * cfg.patch_len;
        params.insert("revin.gamma", Tensor::row(vec![1.0; CHANNELS]));
        params.insert("revin.beta", Tensor::row(vec![0.0; CHANNELS]));
        let w = randn(&mut rng, in_w, d, 1.0 / (in_w as f64).sqrt());
        let b = Tensor::zeros(1, d);
        match cfg.task_mode {
            TaskMode::Mtl => {
                params.insert("proj.shared.w", w);
                params.insert("proj.shared.b", b);
            }
            TaskMode::Single => {
                // identical initialization across the three task copies
                for c in 0..CHANNELS {
                    params.insert(format!("proj.task{c}.w"), w.clone());
                    params.insert(format!("proj.task{c}.b"), b.clone());
                }
            }
        }
        for c in 0..CHANNELS {
            params.insert(
                format!("extract.task{c}.w"),
                randn(&mut rng, cfg.k_proto, cfg.backbone.vocab_size, 1.0 / (cfg.backbone.vocab_size as f64).sqrt()),
            );
        }
        let flat = cfg.n_patches() * d;
        params.insert("head.w", randn(&mut rng, flat, 3 * cfg.horizon, 1.0 / (flat as f64).sqrt()));
        params.insert("head.b", Tensor::zeros(1, 3 * cfg.horizon));
    }

    fn assemble(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let dec = DecompositionMatrices::build(cfg.input_len, cfg.period)?;
        let policy = Self::build_policy(&cfg);
        Ok(ForecastModel { cfg, params, policy, dec })
    }

    /// The selective-training registry: shared projection, prototype
    /// extractors, backbone position embeddings, backbone layer norms,
    /// reconstruction head, plus the normalization affine parameters.
    fn build_policy(cfg: &ModelConfig) -> FreezePolicy {
        let mut trainable = backbone::trainable_backbone_names(&cfg.backbone);
        trainable.insert("revin.gamma".into());
        trainable.insert("revin.beta".into());
        match cfg.task_mode {
            TaskMode::Mtl => {
                trainable.insert("proj.shared.w".into());
                trainable.insert("proj.shared.b".into());
            }
            TaskMode::Single => {
                for c in 0..CHANNELS {
                    trainable.insert(format!("proj.task{c}.w"));
                    trainable.insert(format!("proj.task{c}.b"));
                }
            }
        }
        for c in 0..CHANNELS {
            trainable.insert(format!("extract.task{c}.w"));
        }
        trainable.insert("head.w".into());
        trainable.insert("head.b".into());
        FreezePolicy { trainable }
    }

    /// Registry grouped by the five trainable components (plus gamma/beta).
    pub fn registry_components(&self) -> Vec<(&'static str, Vec<String>)> {
        let mut proj = Vec::new();
        match self.cfg.task_mode {
            TaskMode::Mtl => {
                proj.push("proj.shared.w".to_string());
                proj.push("proj.shared.b".to_string());
            }
            TaskMode::Single => {
                for c in 0..CHANNELS {
                    proj.push(format!("proj.task{c}.w"));
                    proj.push(format!("proj.task{c}.b"));
                }
            }
        }
        let extract = (0..CHANNELS).map(|c| format!("extract.task{c}.w")).collect();
        let mut lns = Vec::new();
        for i in 0..self.cfg.backbone.n_layers {
            for s in ["ln1.weight", "ln1.bias", "ln2.weight", "ln2.bias"] {
                lns.push(format!("backbone.h{i}.{s}"));
            }
        }
        lns.push("backbone.lnf.weight".into());
        lns.push("backbone.lnf.bias".into());
        vec![
            ("shared_projection", proj),
            ("prototype_extractors", extract),
            ("position_embedding", vec!["backbone.wpe".to_string()]),
            ("layer_norms", lns),
            ("reconstruction_head", vec!["head.w".to_string(), "head.b".to_string()]),
            ("norm_affine", vec!["revin.gamma".to_string(), "revin.beta".to_string()]),
        ]
    }

    pub fn norm_params(&self) -> NormParams {
        NormParams {
            gamma: self.params.get("revin.gamma").data.clone(),
            beta: self.params.get("revin.beta").data.clone(),
            epsilon: DEFAULT_EPSILON,
        }
    }

    fn proj_names(&self, channel: usize) -> (String, String) {
        match self.cfg.task_mode {
            TaskMode::Mtl => ("proj.shared.w".into(), "proj.shared.b".into()),
            TaskMode::Single => {
                (format!("proj.task{channel}.w"), format!("proj.task{channel}.b"))
            }
        }
    }

    /// Insert the decomposition operators into a graph once per batch.
    pub fn graph_context(&self, g: &mut Graph) -> GraphContext {
        GraphContext {
            trend_m: g.constant(self.dec.trend.clone()),
            seasonal_m: g.constant(self.dec.seasonal.clone()),
            meta_idx: meta_token_index_map(self.cfg.input_len, self.cfg.patch_len, self.cfg.patch_stride),
        }
    }

    /// Run one window (all three channel tasks) through the pipeline.
    pub fn forward_window(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        ctx: &GraphContext,
        window: &WindowPair,
        with_target: bool,
    ) -> Result<WindowForward> {
        let cfg = &self.cfg;
        if window.input.shape() != (cfg.input_len, CHANNELS) {
            return Err(Error::Shape {
                expected: format!("({}, {CHANNELS}) input", cfg.input_len),
                actual: format!("{:?}", window.input.shape()),
            });
        }
        if !window.input.is_finite() {
            return Err(Error::NonFinite("window input".into()));
        }
        let stats = window_stats(&window.input);
        let n = cfg.input_len;
        let n_p = cfg.n_patches();
        let d = cfg.backbone.d_prime;
        let gamma = bound.id("revin.gamma");
        let beta = bound.id("revin.beta");

        let mut tasks = Vec::with_capacity(CHANNELS);
        for c in 0..CHANNELS {
            let col: Vec<f64> = (0..n).map(|t| window.input.get(t, c)).collect();
            let z = standardize_channel(&col, stats.mu[c], stats.var[c], DEFAULT_EPSILON);
            let z = g.constant(Tensor::column(z));
            let g_c = g.slice_cols(gamma, c, c + 1);
            let b_c = g.slice_cols(beta, c, c + 1);
            let xhat = g.mul_bscalar(z, g_c);
            let xhat = g.add_bscalar(xhat, b_c);

            let trend = g.matmul(ctx.trend_m, xhat);
            let seasonal = g.matmul(ctx.seasonal_m, xhat);
            let ts = g.add(trend, seasonal);
            let residual = g.sub(xhat, ts);
            let comp = g.concat_rows(&[trend, seasonal, residual]);
            let meta = g.index_select(comp, ctx.meta_idx.clone(), n_p, 3 * cfg.patch_len);

            let (wname, bname) = self.proj_names(c);
            let pw = bound.id(&wname);
            let pb = bound.id(&bname);
            let body = g.matmul(meta, pw);
            let body = g.add_row(body, pb);

            let (prompt, selected, selected_scores) = if cfg.m_prefix > 0 {
                let ex = bound.id(&format!("extract.task{c}.w"));
                let wte = bound.id("backbone.wte");
                let protos = g.matmul(ex, wte);
                let scores = graph_prototype_scores(g, body, protos, cfg.metric);
                let order = rank_descending(&g.value(scores).data);
                let selected: Vec<usize> = order[..cfg.m_prefix].to_vec();
                let mut row_idx = Vec::with_capacity(cfg.m_prefix * d);
                for &j in &selected {
                    for col_ix in 0..d {
                        row_idx.push(j * d + col_ix);
                    }
                }
                let prefix = g.index_select(protos, row_idx, cfg.m_prefix, d);
                let sel_scores = g.index_select(scores, selected.clone(), 1, cfg.m_prefix);
                let prompt = g.concat_rows(&[prefix, body]);
                (prompt, selected, Some(sel_scores))
            } else {
                (body, Vec::new(), None)
            };

            let hidden = backbone::forward(g, bound, &cfg.backbone, prompt)?;
            let body_hidden = g.slice_rows(hidden, cfg.m_prefix, cfg.m_prefix + n_p);
            let flat = g.reshape(body_hidden, 1, n_p * d);
            let hw = bound.id("head.w");
            let hb = bound.id("head.b");
            let y = g.matmul(flat, hw);
            let y = g.add_row(y, hb);
            let y_t = g.slice_cols(y, 0, cfg.horizon);
            let y_s = g.slice_cols(y, cfg.horizon, 2 * cfg.horizon);
            let y_r = g.slice_cols(y, 2 * cfg.horizon, 3 * cfg.horizon);
            let ts_sum = g.add(y_t, y_s);
            let yhat = g.add(ts_sum, y_r);

            let target_norm = if with_target {
                let tcol: Vec<f64> = (0..cfg.horizon).map(|t| window.target.get(t, c)).collect();
                let zt = standardize_channel(&tcol, stats.mu[c], stats.var[c], DEFAULT_EPSILON);
                let zt = g.constant(Tensor::row(zt));
                let tn = g.mul_bscalar(zt, g_c);
                Some(g.add_bscalar(tn, b_c))
            } else {
                None
            };

            tasks.push(TaskForward { yhat, selected_scores, selected, target_norm });
        }
        Ok(WindowForward { tasks, stats })
    }

    /// Composite loss over a batch of windows: mean squared prediction error
    /// on the normalized scale plus lambda times the alignment term.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        ctx: &GraphContext,
        windows: &[WindowPair],
        lambda: f64,
    ) -> Result<BatchLoss> {
        assert!(!windows.is_empty(), "batch must be non-empty");
        if lambda != 0.0 && self.cfg.m_prefix == 0 {
            return Err(Error::DegenerateSelection);
        }
        let mut sq_sum: Option<VarId> = None;
        let mut score_sum: Option<VarId> = None;
        let mut n_scores = 0usize;
        for w in windows {
            let fwd = self.forward_window(g, bound, ctx, w, true)?;
            for task in &fwd.tasks {
                let target = task.target_norm.expect("targets requested");
                let diff = g.sub(task.yhat, target);
                let sq = g.sqr(diff);
                let s = g.sum_all(sq);
                sq_sum = Some(match sq_sum {
                    Some(acc) => g.add(acc, s),
                    None => s,
                });
                if let Some(scores) = task.selected_scores {
                    let s = g.sum_all(scores);
                    score_sum = Some(match score_sum {
                        Some(acc) => g.add(acc, s),
                        None => s,
                    });
                    n_scores += self.cfg.m_prefix;
                }
            }
        }
        let n_pred = windows.len() * CHANNELS * self.cfg.horizon;
        let pred = g.scale(sq_sum.expect("non-empty batch"), 1.0 / n_pred as f64);
        let align = match score_sum {
            Some(acc) => {
                let mean = g.scale(acc, 1.0 / n_scores as f64);
                match self.cfg.metric {
                    // 1 - mean cosine score
                    SimilarityMetric::Cosine => {
                        let neg = g.scale(mean, -1.0);
                        g.add_scalar(neg, 1.0)
                    }
                    // mean distance (scores are negated distances)
                    SimilarityMetric::Euclidean => g.scale(mean, -1.0),
                }
            }
            None => g.constant(Tensor::scalar(0.0)),
        };
        let weighted = g.scale(align, lambda);
        let total = g.add(pred, weighted);
        Ok(BatchLoss { total, pred, align })
    }

    /// Inference on one window: physical-unit and z-scale forecasts.
    pub fn predict(&self, window: &WindowPair) -> Result<Prediction> {
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &self.params);
        let ctx = self.graph_context(&mut g);
        let fwd = self.forward_window(&mut g, &bound, &ctx, window, false)?;
        let np = self.norm_params();
        let horizon = self.cfg.horizon;
        let mut physical = Tensor::zeros(horizon, CHANNELS);
        let mut zscale = Tensor::zeros(horizon, CHANNELS);
        for (c, task) in fwd.tasks.iter().enumerate() {
            if np.gamma[c] == 0.0 {
                return Err(Error::NonInvertibleScale { channel: c });
            }
            let vals = &g.value(task.yhat).data;
            let denom = (fwd.stats.var[c] + np.epsilon).sqrt();
            for t in 0..horizon {
                let z = (vals[t] - np.beta[c]) / np.gamma[c];
                zscale.set(t, c, z);
                physical.set(t, c, z * denom + fwd.stats.mu[c]);
            }
        }
        Ok(Prediction { physical, zscale })
    }

    pub fn checkpoint(&self, run_id: &str) -> Checkpoint {
        Checkpoint {
            format_version: 1,
            run_id: run_id.to_string(),
            cfg: self.cfg.clone(),
            params: self.params.clone(),
        }
    }

    pub fn save(&self, path: &Path, run_id: &str) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.checkpoint(run_id))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(ck)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.cfg.validate()?;
        for name in backbone::all_backbone_names(&ck.cfg.backbone) {
            if !ck.params.contains(&name) {
                return Err(Error::Checkpoint(format!("missing parameter {name}")));
            }
        }
        Self::assemble(ck.cfg, ck.params)
    }
}

pub struct GraphContext {
    pub trend_m: VarId,
    pub seasonal_m: VarId,
    pub meta_idx: Vec<usize>,
}
