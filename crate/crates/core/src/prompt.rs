//! Time series prompt generation: meta-tokens from decomposition patches,
//! shared linear projection, prototype extraction from the backbone
//! vocabulary, similarity alignment, and prefix-prompt assembly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, VarId};
use crate::decompose::PatchSet;
use crate::error::{Error, Result};

pub const DEFAULT_K_PROTO: usize = 1000;
pub const DEFAULT_M_PREFIX: usize = 8;

/// Norm guard used by the in-graph cosine path.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMetric {
    Cosine,
    Euclidean,
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimilarityMetric::Cosine => write!(f, "cosine"),
            SimilarityMetric::Euclidean => write!(f, "euclidean"),
        }
    }
}

impl FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimilarityMetric::Cosine),
            "euclidean" => Ok(SimilarityMetric::Euclidean),
            other => Err(Error::Config(format!("unknown similarity metric {other:?}"))),
        }
    }
}

/// Prefix prototypes concatenated with projected patch embeddings, ready for
/// the backbone.
#[derive(Clone, Debug)]
pub struct PromptSequence {
    /// (m_prefix + n_p, d') matrix; prefix rows come first.
    pub tokens: Tensor,
    pub prefix_len: usize,
    pub task_id: usize,
}

impl PromptSequence {
    pub fn len(&self) -> usize {
        self.tokens.rows
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows == 0
    }
}

/// Meta-token i = concat(trend patch i, seasonal patch i, residual patch i).
pub fn build_meta_tokens(trend: &PatchSet, seasonal: &PatchSet, residual: &PatchSet) -> Result<Tensor> {
    if trend.count != seasonal.count
        || trend.count != residual.count
        || trend.patch_len != seasonal.patch_len
        || trend.patch_len != residual.patch_len
    {
        return Err(Error::Shape {
            expected: format!("matching patch sets ({} x {})", trend.count, trend.patch_len),
            actual: format!(
                "{}x{}/{}x{}/{}x{}",
                trend.count, trend.patch_len, seasonal.count, seasonal.patch_len,
                residual.count, residual.patch_len
            ),
        });
    }
    let l = trend.patch_len;
    let mut out = Tensor::zeros(trend.count, 3 * l);
    for i in 0..trend.count {
        for j in 0..l {
            out.set(i, j, trend.patches[i][j]);
            out.set(i, l + j, seasonal.patches[i][j]);
            out.set(i, 2 * l + j, residual.patches[i][j]);
        }
    }
    Ok(out)
}

/// Flat index map turning the stacked component vector concat[t; s; r]
/// (length 3n) into the (n_p, 3l) meta-token matrix. Used to run the same
/// construction inside the autodiff graph.
pub fn meta_token_index_map(n: usize, l: usize, s_h: usize) -> Vec<usize> {
    let n_p = crate::decompose::patch_count(n, l, s_h);
    let mut idx = Vec::with_capacity(n_p * 3 * l);
    for i in 0..n_p {
        for comp in 0..3 {
            for j in 0..l {
                idx.push(comp * n + i * s_h + j);
            }
        }
    }
    idx
}

/// Affine projection of meta-tokens: E = M * W + b, identical weights for all
/// feature tasks. `weight` is (3l, d'), `bias` (1, d').
pub fn shared_project(meta: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if meta.cols != weight.rows || bias.cols != weight.cols {
        return Err(Error::Shape {
            expected: format!("meta width {} and bias width {}", weight.rows, weight.cols),
            actual: format!("{} and {}", meta.cols, bias.cols),
        });
    }
    let mut out = meta.matmul(weight);
    for r in 0..out.rows {
        for c in 0..out.cols {
            let v = out.get(r, c) + bias.get(0, c);
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Prototypes = W_t * vocab, learned linear combinations of token embeddings.
/// `extractor` is (k_proto, V), `vocab` (V, d').
pub fn extract_prototypes(vocab: &Tensor, extractor: &Tensor) -> Result<Tensor> {
    if extractor.cols != vocab.rows {
        return Err(Error::Shape {
            expected: format!("extractor width {}", vocab.rows),
            actual: format!("{}", extractor.cols),
        });
    }
    Ok(extractor.matmul(vocab))
}

/// Pairwise similarity. Euclidean distance is negated so larger is always
/// more similar under both metrics.
pub fn similarity(e: &[f64], v: &[f64], metric: SimilarityMetric) -> Result<f64> {
    if e.len() != v.len() {
        return Err(Error::Shape {
            expected: format!("vectors of length {}", e.len()),
            actual: format!("{}", v.len()),
        });
    }
    match metric {
        SimilarityMetric::Cosine => {
            let ne: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if ne == 0.0 || nv == 0.0 {
                return Err(Error::ZeroNorm);
            }
            let dot: f64 = e.iter().zip(v).map(|(a, b)| a * b).sum();
            Ok(dot / (ne * nv))
        }
        SimilarityMetric::Euclidean => {
            let d2: f64 = e.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(-d2.sqrt())
        }
    }
}

/// Score every prototype by its mean similarity to all patch embeddings and
/// return the `m_prefix` top scorers in descending order, ties broken by
/// lower prototype index.
pub fn select_prototypes(
    body: &Tensor,
    prototypes: &Tensor,
    m_prefix: usize,
    metric: SimilarityMetric,
) -> Result<(Vec<usize>, Vec<f64>)> {
    assert!(m_prefix <= prototypes.rows, "m_prefix exceeds prototype count");
    let k = prototypes.rows;
    let d = prototypes.cols;
    let mut scores = vec![0.0; k];
    for j in 0..k {
        let proto = &prototypes.data[j * d..(j + 1) * d];
        let mut acc = 0.0;
        for i in 0..body.rows {
            let e = &body.data[i * d..(i + 1) * d];
            acc += similarity(e, proto, metric)?;
        }
        scores[j] = acc / body.rows as f64;
    }
    let order = rank_descending(&scores);
    let selected: Vec<usize> = order[..m_prefix].to_vec();
    let selected_scores = selected.iter().map(|&j| scores[j]).collect();
    Ok((selected, selected_scores))
}

/// Indices sorted by score descending, ties by lower index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Prefix tokens first, body after.
pub fn build_prompt(prefix: &Tensor, body: &Tensor, task_id: usize) -> Result<PromptSequence> {
    if prefix.rows > 0 && prefix.cols != body.cols {
        return Err(Error::Shape {
            expected: format!("prefix width {}", body.cols),
            actual: format!("{}", prefix.cols),
        });
    }
    let mut data = Vec::with_capacity((prefix.rows + body.rows) * body.cols);
    data.extend_from_slice(&prefix.data);
    data.extend_from_slice(&body.data);
    Ok(PromptSequence {
        tokens: Tensor::from_vec(prefix.rows + body.rows, body.cols, data),
        prefix_len: prefix.rows,
        task_id,
    })
}

/// In-graph prototype scores: (1, k) mean similarity of each prototype to all
/// body embeddings. The cosine path guards zero norms with [`NORM_EPS`].
pub fn graph_prototype_scores(
    g: &mut Graph,
    body: VarId,
    prototypes: VarId,
    metric: SimilarityMetric,
) -> VarId {
    match metric {
        SimilarityMetric::Cosine => {
            let bn = g.row_norms(body, NORM_EPS);
            let bi = g.recip(bn);
            let bhat = g.mul_col(body, bi);
            let pn = g.row_norms(prototypes, NORM_EPS);
            let pi = g.recip(pn);
            let phat = g.mul_col(prototypes, pi);
            let sims = g.matmul_nt(bhat, phat); // (n_p, k)
            g.mean_cols(sims)
        }
        SimilarityMetric::Euclidean => {
            let k = g.value(prototypes).rows;
            // ||e - v||^2 = ||e||^2 + ||v||^2 - 2 e.v
            let cross = g.matmul_nt(body, prototypes);
            let cross = g.scale(cross, -2.0);
            let bsq = g.sqr(body);
            let bs = g.sum_rows(bsq); // (n_p, 1)
            let psq = g.sqr(prototypes);
            let ps = g.sum_rows(psq); // (k, 1)
            let ps_row = g.reshape(ps, 1, k);
            let d2 = g.add_col(cross, bs);
            let d2 = g.add_row(d2, ps_row);
            let d2 = g.add_scalar(d2, NORM_EPS);
            let dist = g.sqrt(d2);
            let mean = g.mean_cols(dist);
            g.scale(mean, -1.0)
        }
    }
}
