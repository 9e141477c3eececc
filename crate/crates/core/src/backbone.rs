//! Transformer backbone behind the prompt pipeline. Continuous prompt
//! vectors enter the stack directly (no token-embedding lookup); only the
//! position embeddings and layer-norm parameters are ever trainable, the
//! attention and feed-forward weights stay frozen.
//!
//! Two variants satisfy the same contract: a seed-initialized toy stack small
//! enough for finite-difference checks, and an adapter that loads a
//! GPT-2-layout safetensors checkpoint.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, VarId};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneVariant {
    Pretrained,
    Toy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d_prime: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub variant: BackboneVariant,
    /// Use only the first m blocks; `None` means the full stack.
    pub layers_used: Option<usize>,
    /// Disabled only by degenerate-weight tests.
    pub layer_norm: bool,
}

impl BackboneConfig {
    pub fn toy() -> Self {
        BackboneConfig {
            d_prime: 64,
            n_layers: 2,
            n_heads: 4,
            vocab_size: 256,
            max_positions: 256,
            variant: BackboneVariant::Toy,
            layers_used: None,
            layer_norm: true,
        }
    }

    pub fn effective_layers(&self) -> usize {
        self.layers_used.unwrap_or(self.n_layers).min(self.n_layers)
    }
}

/// Parameter names for one block.
fn block_names(i: usize) -> Vec<String> {
    let mut v = Vec::new();
    for p in [
        "ln1.weight", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv",
        "attn.bv", "attn.wo", "attn.bo", "ln2.weight", "ln2.bias", "mlp.wfc", "mlp.bfc",
        "mlp.wproj", "mlp.bproj",
    ] {
        v.push(format!("backbone.h{i}.{p}"));
    }
    v
}

/// Backbone parameter names that the freeze policy allows to train:
/// position embeddings plus every layer-norm scale/shift.
pub fn trainable_backbone_names(cfg: &BackboneConfig) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    set.insert("backbone.wpe".to_string());
    if cfg.layer_norm {
        for i in 0..cfg.n_layers {
            set.insert(format!("backbone.h{i}.ln1.weight"));
            set.insert(format!("backbone.h{i}.ln1.bias"));
            set.insert(format!("backbone.h{i}.ln2.weight"));
            set.insert(format!("backbone.h{i}.ln2.bias"));
        }
        set.insert("backbone.lnf.weight".to_string());
        set.insert("backbone.lnf.bias".to_string());
    }
    set
}

/// All backbone parameter names under the given config.
pub fn all_backbone_names(cfg: &BackboneConfig) -> Vec<String> {
    let mut v = vec!["backbone.wte".to_string(), "backbone.wpe".to_string()];
    for i in 0..cfg.n_layers {
        v.extend(block_names(i));
    }
    v.push("backbone.lnf.weight".to_string());
    v.push("backbone.lnf.bias".to_string());
    v
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).unwrap();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

/// Insert seed-initialized toy backbone parameters into the store.
pub fn init_toy(store: &mut ParamStore, cfg: &BackboneConfig, seed: u64) {
    let d = cfg.d_prime;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    store.insert("backbone.wte", randn(&mut rng, cfg.vocab_size, d, 0.5));
    store.insert("backbone.wpe", randn(&mut rng, cfg.max_positions, d, 0.02));
    for i in 0..cfg.n_layers {
        let std = 0.02;
        store.insert(format!("backbone.h{i}.ln1.weight"), Tensor::from_vec(1, d, vec![1.0; d]));
        store.insert(format!("backbone.h{i}.ln1.bias"), Tensor::zeros(1, d));
        store.insert(format!("backbone.h{i}.attn.wq"), randn(&mut rng, d, d, std));
        store.insert(format!("backbone.h{i}.attn.bq"), Tensor::zeros(1, d));
        store.insert(format!("backbone.h{i}.attn.wk"), randn(&mut rng, d, d, std));
        store.insert(format!("backbone.h{i}.attn.bk"), Tensor::zeros(1, d));
        store.insert(format!("backbone.h{i}.attn.wv"), randn(&mut rng, d, d, std));
        store.insert(format!("backbone.h{i}.attn.bv"), Tensor::zeros(1, d));
        store.insert(format!("backbone.h{i}.attn.wo"), randn(&mut rng, d, d, std));
        store.insert(format!("backbone.h{i}.attn.bo"), Tensor::zeros(1, d));
        store.insert(format!("backbone.h{i}.ln2.weight"), Tensor::from_vec(1, d, vec![1.0; d]));
        store.insert(format!("backbone.h{i}.ln2.bias"), Tensor::zeros(1, d));
        store.insert(format!("backbone.h{i}.mlp.wfc"), randn(&mut rng, d, 4 * d, std));
        store.insert(format!("backbone.h{i}.mlp.bfc"), Tensor::zeros(1, 4 * d));
        store.insert(format!("backbone.h{i}.mlp.wproj"), randn(&mut rng, 4 * d, d, std));
        store.insert(format!("backbone.h{i}.mlp.bproj"), Tensor::zeros(1, d));
    }
    store.insert("backbone.lnf.weight", Tensor::from_vec(1, d, vec![1.0; d]));
    store.insert("backbone.lnf.bias", Tensor::zeros(1, d));
}

/// Run the transformer stack over a (L, d') prompt node. Returns the (L, d')
/// hidden state of the last used layer.
pub fn forward(
    g: &mut Graph,
    bound: &BoundParams,
    cfg: &BackboneConfig,
    prompt: VarId,
) -> Result<VarId> {
    let len = g.value(prompt).rows;
    if len > cfg.max_positions {
        return Err(Error::ContextLength { len, max_positions: cfg.max_positions });
    }
    let d = cfg.d_prime;
    assert_eq!(g.value(prompt).cols, d, "prompt width must match d'");
    let heads = cfg.n_heads;
    let hd = d / heads;

    let wpe = bound.id("backbone.wpe");
    let pos = g.slice_rows(wpe, 0, len);
    let mut h = g.add(prompt, pos);

    // additive causal mask
    let mut mask = Tensor::zeros(len, len);
    for i in 0..len {
        for j in i + 1..len {
            mask.set(i, j, -1e9);
        }
    }
    let mask = g.constant(mask);

    for i in 0..cfg.effective_layers() {
        let p = |s: &str| format!("backbone.h{i}.{s}");
        let a = if cfg.layer_norm {
            let lg = bound.id(&p("ln1.weight"));
            let lb = bound.id(&p("ln1.bias"));
            g.layer_norm(h, lg, lb, LN_EPS)
        } else {
            h
        };
        let wq = bound.id(&p("attn.wq"));
        let bq = bound.id(&p("attn.bq"));
        let wk = bound.id(&p("attn.wk"));
        let bk = bound.id(&p("attn.bk"));
        let wv = bound.id(&p("attn.wv"));
        let bv = bound.id(&p("attn.bv"));
        let q = g.matmul(a, wq);
        let q = g.add_row(q, bq);
        let k = g.matmul(a, wk);
        let k = g.add_row(k, bk);
        let v = g.matmul(a, wv);
        let v = g.add_row(v, bv);
        let mut head_outputs = Vec::with_capacity(heads);
        for hix in 0..heads {
            let (c0, c1) = (hix * hd, (hix + 1) * hd);
            let qh = g.slice_cols(q, c0, c1);
            let kh = g.slice_cols(k, c0, c1);
            let vh = g.slice_cols(v, c0, c1);
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, 1.0 / (hd as f64).sqrt());
            let scores = g.add(scores, mask);
            let attn = g.softmax_rows(scores);
            head_outputs.push(g.matmul(attn, vh));
        }
        let merged = g.concat_cols(&head_outputs);
        let wo = bound.id(&p("attn.wo"));
        let bo = bound.id(&p("attn.bo"));
        let o = g.matmul(merged, wo);
        let o = g.add_row(o, bo);
        h = g.add(h, o);

        let a2 = if cfg.layer_norm {
            let lg = bound.id(&p("ln2.weight"));
            let lb = bound.id(&p("ln2.bias"));
            g.layer_norm(h, lg, lb, LN_EPS)
        } else {
            h
        };
        let wfc = bound.id(&p("mlp.wfc"));
        let bfc = bound.id(&p("mlp.bfc"));
        let wproj = bound.id(&p("mlp.wproj"));
        let bproj = bound.id(&p("mlp.bproj"));
        let m = g.matmul(a2, wfc);
        let m = g.add_row(m, bfc);
        let m = g.gelu(m);
        let m = g.matmul(m, wproj);
        let m = g.add_row(m, bproj);
        h = g.add(h, m);
    }

    if cfg.layer_norm {
        let lg = bound.id("backbone.lnf.weight");
        let lb = bound.id("backbone.lnf.bias");
        h = g.layer_norm(h, lg, lb, LN_EPS);
    }
    Ok(h)
}

fn tensor_from_view(view: &safetensors::tensor::TensorView<'_>) -> Result<Tensor> {
    use safetensors::Dtype;
    let shape = view.shape();
    if shape.len() > 2 {
        return Err(Error::Checkpoint(format!("unsupported tensor rank {}", shape.len())));
    }
    let (rows, cols) = match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => (1, 1),
    };
    let bytes = view.data();
    let data: Vec<f64> = match view.dtype() {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect(),
        other => {
            return Err(Error::Checkpoint(format!("unsupported dtype {other:?}")));
        }
    };
    if data.len() != rows * cols {
        return Err(Error::Checkpoint("tensor byte length mismatch".into()));
    }
    Ok(Tensor::from_vec(rows, cols, data))
}

/// Load a GPT-2-layout safetensors checkpoint ("wte.weight", "wpe.weight",
/// "h.{i}.ln_1...", combined "attn.c_attn" qkv, "ln_f"). Returns the derived
/// config and fills `store` only on success, so a failed load leaves no
/// partial state.
pub fn load_pretrained(path: &Path, store: &mut ParamStore) -> Result<BackboneConfig> {
    let bytes = std::fs::read(path)?;
    let st = safetensors::SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;

    let names: Vec<String> = st.names().iter().map(|s| s.to_string()).collect();
    let strip = |n: &str| n.strip_prefix("transformer.").unwrap_or(n).to_string();
    let find = |want: &str| -> Result<Tensor> {
        for n in &names {
            if strip(n) == want {
                let view = st
                    .tensor(n)
                    .map_err(|e| Error::Checkpoint(format!("tensor {want}: {e}")))?;
                return tensor_from_view(&view);
            }
        }
        Err(Error::Checkpoint(format!("missing tensor {want}")))
    };

    let wte = find("wte.weight")?;
    let wpe = find("wpe.weight")?;
    let d = wte.cols;
    if wpe.cols != d {
        return Err(Error::Shape {
            expected: format!("wpe width {d}"),
            actual: format!("{}", wpe.cols),
        });
    }
    let n_layers = (0..)
        .take_while(|i| names.iter().any(|n| strip(n).starts_with(&format!("h.{i}."))))
        .count();
    if n_layers == 0 {
        return Err(Error::Checkpoint("no transformer blocks found".into()));
    }

    let mut fresh = ParamStore::new();
    fresh.insert("backbone.wte", wte.clone());
    fresh.insert("backbone.wpe", wpe.clone());
    for i in 0..n_layers {
        let ln1w = find(&format!("h.{i}.ln_1.weight"))?;
        let ln1b = find(&format!("h.{i}.ln_1.bias"))?;
        let c_attn_w = find(&format!("h.{i}.attn.c_attn.weight"))?; // (d, 3d) Conv1D layout
        let c_attn_b = find(&format!("h.{i}.attn.c_attn.bias"))?;
        if c_attn_w.rows != d || c_attn_w.cols != 3 * d {
            return Err(Error::Shape {
                expected: format!("c_attn weight ({d}, {})", 3 * d),
                actual: format!("({}, {})", c_attn_w.rows, c_attn_w.cols),
            });
        }
        let split = |c0: usize| -> Tensor {
            let mut t = Tensor::zeros(d, d);
            for r in 0..d {
                for c in 0..d {
                    t.set(r, c, c_attn_w.get(r, c0 + c));
                }
            }
            t
        };
        let split_b = |c0: usize| -> Tensor {
            Tensor::row(c_attn_b.data[c0..c0 + d].to_vec())
        };
        fresh.insert(format!("backbone.h{i}.ln1.weight"), ln1w);
        fresh.insert(format!("backbone.h{i}.ln1.bias"), ln1b);
        fresh.insert(format!("backbone.h{i}.attn.wq"), split(0));
        fresh.insert(format!("backbone.h{i}.attn.bq"), split_b(0));
        fresh.insert(format!("backbone.h{i}.attn.wk"), split(d));
        fresh.insert(format!("backbone.h{i}.attn.bk"), split_b(d));
        fresh.insert(format!("backbone.h{i}.attn.wv"), split(2 * d));
        fresh.insert(format!("backbone.h{i}.attn.bv"), split_b(2 * d));
        fresh.insert(format!("backbone.h{i}.attn.wo"), find(&format!("h.{i}.attn.c_proj.weight"))?);
        fresh.insert(format!("backbone.h{i}.attn.bo"), find(&format!("h.{i}.attn.c_proj.bias"))?);
        fresh.insert(format!("backbone.h{i}.ln2.weight"), find(&format!("h.{i}.ln_2.weight"))?);
        fresh.insert(format!("backbone.h{i}.ln2.bias"), find(&format!("h.{i}.ln_2.bias"))?);
        fresh.insert(format!("backbone.h{i}.mlp.wfc"), find(&format!("h.{i}.mlp.c_fc.weight"))?);
        fresh.insert(format!("backbone.h{i}.mlp.bfc"), find(&format!("h.{i}.mlp.c_fc.bias"))?);
        fresh.insert(format!("backbone.h{i}.mlp.wproj"), find(&format!("h.{i}.mlp.c_proj.weight"))?);
        fresh.insert(format!("backbone.h{i}.mlp.bproj"), find(&format!("h.{i}.mlp.c_proj.bias"))?);
    }
    fresh.insert("backbone.lnf.weight", find("ln_f.weight")?);
    fresh.insert("backbone.lnf.bias", find("ln_f.bias")?);

    for (name, tensor) in fresh.iter() {
        let owned = tensor.clone();
        store.insert(name.to_string(), owned);
    }
    Ok(BackboneConfig {
        d_prime: d,
        n_layers,
        n_heads: 12.min(d / 64).max(1),
        vocab_size: wte.rows,
        max_positions: wpe.rows,
        variant: BackboneVariant::Pretrained,
        layers_used: None,
        layer_norm: true,
    })
}
