//! Minimal reverse-mode automatic differentiation over dense f64 matrices.
//!
//! The model forward pass is expressed as a tape of operations on a [`Graph`];
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients for
//! every node. Parameters enter the graph as leaves and their gradients are
//! read back by id after the backward pass.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix. Vectors are (n, 1) columns or (1, n) rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor { rows: n, cols: 1, data }
    }

    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor { rows: 1, cols: n, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// C = A * B, plain triple loop in i-k-j order.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Tensor::from_vec(m, n, out)
    }

    /// C = A * B^T.
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += arow[p] * brow[p];
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::from_vec(m, n, out)
    }

    /// C = A^T * B.
    pub fn matmul_tn(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows, other.rows, "matmul_tn inner dimension mismatch");
        let (m, k, n) = (self.cols, self.rows, other.cols);
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = arow[i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Tensor::from_vec(m, n, out)
    }
}

pub type VarId = usize;

type BackOp = Box<dyn Fn(&[Tensor], &mut [Vec<f64>])>;

/// Computation tape. Values are stored per node; gradients are materialized
/// by [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Tensor>,
    backward_ops: Vec<Option<BackOp>>,
    grads: Vec<Vec<f64>>,
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, back: Option<BackOp>) -> VarId {
        self.nodes.push(value);
        self.backward_ops.push(back);
        self.nodes.len() - 1
    }

    /// Insert a node that does not propagate gradients further.
    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(t, None)
    }

    /// Insert a leaf whose gradient will be read back after `backward`.
    /// Identical to `constant` mechanically; the distinction is for callers.
    pub fn leaf(&mut self, t: Tensor) -> VarId {
        self.push(t, None)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id]
    }

    pub fn grad(&self, id: VarId) -> &[f64] {
        &self.grads[id]
    }

    pub fn grad_tensor(&self, id: VarId) -> Tensor {
        let t = &self.nodes[id];
        Tensor::from_vec(t.rows, t.cols, self.grads[id].clone())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (&self.nodes[a], &self.nodes[b]);
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for (ga, gi) in grads[a].iter_mut().zip(&g) {
                    *ga += gi;
                }
                for (gb, gi) in grads[b].iter_mut().zip(&g) {
                    *gb += gi;
                }
            })),
        )
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (&self.nodes[a], &self.nodes[b]);
        assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for (ga, gi) in grads[a].iter_mut().zip(&g) {
                    *ga += gi;
                }
                for (gb, gi) in grads[b].iter_mut().zip(&g) {
                    *gb -= gi;
                }
            })),
        )
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (&self.nodes[a], &self.nodes[b]);
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let g = grads[id].clone();
                for i in 0..g.len() {
                    grads[a][i] += g[i] * vals[b].data[i];
                    grads[b][i] += g[i] * vals[a].data[i];
                }
            })),
        )
    }

    pub fn scale(&mut self, a: VarId, s: f64) -> VarId {
        let ta = &self.nodes[a];
        let data = ta.data.iter().map(|x| x * s).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for (ga, gi) in grads[a].iter_mut().zip(&g) {
                    *ga += s * gi;
                }
            })),
        )
    }

    pub fn add_scalar(&mut self, a: VarId, s: f64) -> VarId {
        let ta = &self.nodes[a];
        let data = ta.data.iter().map(|x| x + s).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for (ga, gi) in grads[a].iter_mut().zip(&g) {
                    *ga += gi;
                }
            })),
        )
    }

    /// Multiply every element of `a` by the (1,1) node `s`.
    pub fn mul_bscalar(&mut self, a: VarId, s: VarId) -> VarId {
        assert_eq!(self.nodes[s].shape(), (1, 1), "mul_bscalar expects (1,1) scalar");
        let sv = self.nodes[s].data[0];
        let ta = &self.nodes[a];
        let data = ta.data.iter().map(|x| x * sv).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let g = grads[id].clone();
                let sv = vals[s].data[0];
                let mut ds = 0.0;
                for i in 0..g.len() {
                    grads[a][i] += sv * g[i];
                    ds += g[i] * vals[a].data[i];
                }
                grads[s][0] += ds;
            })),
        )
    }

    /// Add the (1,1) node `s` to every element of `a`.
    pub fn add_bscalar(&mut self, a: VarId, s: VarId) -> VarId {
        assert_eq!(self.nodes[s].shape(), (1, 1), "add_bscalar expects (1,1) scalar");
        let sv = self.nodes[s].data[0];
        let ta = &self.nodes[a];
        let data = ta.data.iter().map(|x| x + sv).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                let mut ds = 0.0;
                for i in 0..g.len() {
                    grads[a][i] += g[i];
                    ds += g[i];
                }
                grads[s][0] += ds;
            })),
        )
    }

    pub fn sqr(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a];
        let data = ta.data.iter().map(|x| x * x).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let g = grads[id].clone();
                for i in 0..g.len() {
                    grads[a][i] += 2.0 * vals[a].data[i] * g[i];
                }
            })),
        )
    }

    pub fn sqrt(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a];
        let data: Vec<f64> = ta.data.iter().map(|x| x.sqrt()).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let g = grads[id].clone();
                for i in 0..g.len() {
                    let y = vals[id].data[i];
                    if y > 0.0 {
                        grads[a][i] += 0.5 / y * g[i];
                    }
                }
            })),
        )
    }

    pub fn recip(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a];
        let data: Vec<f64> = ta.data.iter().map(|x| 1.0 / x).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let g = grads[id].clone();
                for i in 0..g.len() {
                    let y = vals[id].data[i];
                    grads[a][i] += -y * y * g[i];
                }
            })),
        )
    }

    pub fn gelu(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a];
        let data: Vec<f64> = ta.data.iter().map(|&x| gelu(x)).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let g = grads[id].clone();
                for i in 0..g.len() {
                    grads[a][i] += gelu_grad(vals[a].data[i]) * g[i];
                }
            })),
        )
    }

    // ---- matrix products ----

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let out = self.nodes[a].matmul(&self.nodes[b]);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (m, n) = (vals[id].rows, vals[id].cols);
                let gc = Tensor::from_vec(m, n, grads[id].clone());
                // dA += dC * B^T ; dB += A^T * dC
                let da = gc.matmul_nt(&vals[b]);
                for (ga, gi) in grads[a].iter_mut().zip(&da.data) {
                    *ga += gi;
                }
                let db = vals[a].matmul_tn(&gc);
                for (gb, gi) in grads[b].iter_mut().zip(&db.data) {
                    *gb += gi;
                }
            })),
        )
    }

    /// C = A * B^T.
    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> VarId {
        let out = self.nodes[a].matmul_nt(&self.nodes[b]);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let (m, n) = (vals[id].rows, vals[id].cols);
                let gc = Tensor::from_vec(m, n, grads[id].clone());
                // dA += dC * B ; dB += dC^T * A
                let da = gc.matmul(&vals[b]);
                for (ga, gi) in grads[a].iter_mut().zip(&da.data) {
                    *ga += gi;
                }
                let db = gc.matmul_tn(&vals[a]);
                for (gb, gi) in grads[b].iter_mut().zip(&db.data) {
                    *gb += gi;
                }
            })),
        )
    }

    // ---- reshaping and indexing ----

    pub fn reshape(&mut self, a: VarId, rows: usize, cols: usize) -> VarId {
        let ta = &self.nodes[a];
        assert_eq!(ta.len(), rows * cols, "reshape element count mismatch");
        let out = Tensor::from_vec(rows, cols, ta.data.clone());
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for (ga, gi) in grads[a].iter_mut().zip(&g) {
                    *ga += gi;
                }
            })),
        )
    }

    /// Gather by flat index: out[j] = a.flat[idx[j]], reshaped to (rows, cols).
    pub fn index_select(&mut self, a: VarId, idx: Vec<usize>, rows: usize, cols: usize) -> VarId {
        assert_eq!(idx.len(), rows * cols, "index_select shape mismatch");
        let ta = &self.nodes[a];
        let data: Vec<f64> = idx.iter().map(|&i| ta.data[i]).collect();
        let out = Tensor::from_vec(rows, cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for (j, &i) in idx.iter().enumerate() {
                    grads[a][i] += g[j];
                }
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0]].cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = &self.nodes[p];
            assert_eq!(t.cols, cols, "concat_rows column mismatch");
            rows += t.rows;
            data.extend_from_slice(&t.data);
        }
        let out = Tensor::from_vec(rows, cols, data);
        let parts: Vec<VarId> = parts.to_vec();
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let g = grads[id].clone();
                let mut off = 0;
                for &p in &parts {
                    let n = vals[p].len();
                    for (gp, gi) in grads[p].iter_mut().zip(&g[off..off + n]) {
                        *gp += gi;
                    }
                    off += n;
                }
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].rows;
        let widths: Vec<usize> = parts.iter().map(|&p| self.nodes[p].cols).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = &self.nodes[p];
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                data[r * total + off..r * total + off + w]
                    .copy_from_slice(&t.data[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let out = Tensor::from_vec(rows, total, data);
        let parts: Vec<VarId> = parts.to_vec();
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    for r in 0..rows {
                        for c in 0..w {
                            grads[p][r * w + c] += g[r * total + off + c];
                        }
                    }
                    off += w;
                }
            })),
        )
    }

    pub fn slice_rows(&mut self, a: VarId, r0: usize, r1: usize) -> VarId {
        let ta = &self.nodes[a];
        assert!(r0 <= r1 && r1 <= ta.rows, "slice_rows out of range");
        let cols = ta.cols;
        let data = ta.data[r0 * cols..r1 * cols].to_vec();
        let out = Tensor::from_vec(r1 - r0, cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for (j, gi) in g.iter().enumerate() {
                    grads[a][r0 * cols + j] += gi;
                }
            })),
        )
    }

    pub fn slice_cols(&mut self, a: VarId, c0: usize, c1: usize) -> VarId {
        let ta = &self.nodes[a];
        assert!(c0 <= c1 && c1 <= ta.cols, "slice_cols out of range");
        let (rows, cols) = ta.shape();
        let w = c1 - c0;
        let mut data = vec![0.0; rows * w];
        for r in 0..rows {
            data[r * w..(r + 1) * w].copy_from_slice(&ta.data[r * cols + c0..r * cols + c1]);
        }
        let out = Tensor::from_vec(rows, w, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for r in 0..rows {
                    for c in 0..w {
                        grads[a][r * cols + c0 + c] += g[r * w + c];
                    }
                }
            })),
        )
    }

    // ---- broadcast ops ----

    /// matrix + row vector, broadcast over rows.
    pub fn add_row(&mut self, a: VarId, row: VarId) -> VarId {
        let (ta, tr) = (&self.nodes[a], &self.nodes[row]);
        assert_eq!(tr.rows, 1, "add_row expects a row vector");
        assert_eq!(ta.cols, tr.cols, "add_row width mismatch");
        let (rows, cols) = ta.shape();
        let mut data = ta.data.clone();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += tr.data[c];
            }
        }
        let out = Tensor::from_vec(rows, cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for (ga, gi) in grads[a].iter_mut().zip(&g) {
                    *ga += gi;
                }
                for r in 0..rows {
                    for c in 0..cols {
                        grads[row][c] += g[r * cols + c];
                    }
                }
            })),
        )
    }

    /// matrix * row vector, broadcast over rows.
    pub fn mul_row(&mut self, a: VarId, row: VarId) -> VarId {
        let (ta, tr) = (&self.nodes[a], &self.nodes[row]);
        assert_eq!(tr.rows, 1, "mul_row expects a row vector");
        assert_eq!(ta.cols, tr.cols, "mul_row width mismatch");
        let (rows, cols) = ta.shape();
        let mut data = ta.data.clone();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] *= tr.data[c];
            }
        }
        let out = Tensor::from_vec(rows, cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let g = grads[id].clone();
                for r in 0..rows {
                    for c in 0..cols {
                        grads[a][r * cols + c] += g[r * cols + c] * vals[row].data[c];
                        grads[row][c] += g[r * cols + c] * vals[a].data[r * cols + c];
                    }
                }
            })),
        )
    }

    /// matrix - column vector, broadcast over columns.
    pub fn sub_col(&mut self, a: VarId, col: VarId) -> VarId {
        let (ta, tc) = (&self.nodes[a], &self.nodes[col]);
        assert_eq!(tc.cols, 1, "sub_col expects a column vector");
        assert_eq!(ta.rows, tc.rows, "sub_col height mismatch");
        let (rows, cols) = ta.shape();
        let mut data = ta.data.clone();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] -= tc.data[r];
            }
        }
        let out = Tensor::from_vec(rows, cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for r in 0..rows {
                    for c in 0..cols {
                        grads[a][r * cols + c] += g[r * cols + c];
                        grads[col][r] -= g[r * cols + c];
                    }
                }
            })),
        )
    }

    /// matrix + column vector, broadcast over columns.
    pub fn add_col(&mut self, a: VarId, col: VarId) -> VarId {
        let (ta, tc) = (&self.nodes[a], &self.nodes[col]);
        assert_eq!(tc.cols, 1, "add_col expects a column vector");
        assert_eq!(ta.rows, tc.rows, "add_col height mismatch");
        let (rows, cols) = ta.shape();
        let mut data = ta.data.clone();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += tc.data[r];
            }
        }
        let out = Tensor::from_vec(rows, cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for r in 0..rows {
                    for c in 0..cols {
                        grads[a][r * cols + c] += g[r * cols + c];
                        grads[col][r] += g[r * cols + c];
                    }
                }
            })),
        )
    }

    /// matrix * column vector, broadcast over columns.
    pub fn mul_col(&mut self, a: VarId, col: VarId) -> VarId {
        let (ta, tc) = (&self.nodes[a], &self.nodes[col]);
        assert_eq!(tc.cols, 1, "mul_col expects a column vector");
        assert_eq!(ta.rows, tc.rows, "mul_col height mismatch");
        let (rows, cols) = ta.shape();
        let mut data = ta.data.clone();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] *= tc.data[r];
            }
        }
        let out = Tensor::from_vec(rows, cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let g = grads[id].clone();
                for r in 0..rows {
                    for c in 0..cols {
                        grads[a][r * cols + c] += g[r * cols + c] * vals[col].data[r];
                        grads[col][r] += g[r * cols + c] * vals[a].data[r * cols + c];
                    }
                }
            })),
        )
    }

    // ---- reductions ----

    /// Sum of each row -> (rows, 1).
    pub fn sum_rows(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a];
        let (rows, cols) = ta.shape();
        let data: Vec<f64> = (0..rows)
            .map(|r| ta.data[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let out = Tensor::from_vec(rows, 1, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                for r in 0..rows {
                    for c in 0..cols {
                        grads[a][r * cols + c] += g[r];
                    }
                }
            })),
        )
    }

    /// Mean over rows -> (1, cols).
    pub fn mean_cols(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a];
        let (rows, cols) = ta.shape();
        let mut data = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c] += ta.data[r * cols + c];
            }
        }
        for v in data.iter_mut() {
            *v /= rows as f64;
        }
        let out = Tensor::from_vec(1, cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id].clone();
                let inv = 1.0 / rows as f64;
                for r in 0..rows {
                    for c in 0..cols {
                        grads[a][r * cols + c] += g[c] * inv;
                    }
                }
            })),
        )
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a];
        let s: f64 = ta.data.iter().sum();
        let n = ta.len();
        let out = Tensor::scalar(s);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |_vals, grads| {
                let g = grads[id][0];
                for i in 0..n {
                    grads[a][i] += g;
                }
            })),
        )
    }

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let n = self.nodes[a].len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    // ---- softmax ----

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a];
        let (rows, cols) = ta.shape();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &ta.data[r * cols..(r + 1) * cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..cols {
                let e = (row[c] - mx).exp();
                data[r * cols + c] = e;
                z += e;
            }
            for c in 0..cols {
                data[r * cols + c] /= z;
            }
        }
        let out = Tensor::from_vec(rows, cols, data);
        let id = self.nodes.len();
        self.push(
            out,
            Some(Box::new(move |vals, grads| {
                let g = grads[id].clone();
                let y = &vals[id].data;
                for r in 0..rows {
                    let mut dot = 0.0;
                    for c in 0..cols {
                        dot += g[r * cols + c] * y[r * cols + c];
                    }
                    for c in 0..cols {
                        grads[a][r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
                    }
                }
            })),
        )
    }

    // ---- composites ----

    /// Layer normalization over each row with scale/shift row vectors.
    pub fn layer_norm(&mut self, a: VarId, gamma: VarId, beta: VarId, eps: f64) -> VarId {
        let cols = self.nodes[a].cols;
        let m = self.sum_rows(a);
        let m = self.scale(m, 1.0 / cols as f64);
        let xc = self.sub_col(a, m);
        let sq = self.sqr(xc);
        let v = self.sum_rows(sq);
        let v = self.scale(v, 1.0 / cols as f64);
        let v = self.add_scalar(v, eps);
        let sd = self.sqrt(v);
        let inv = self.recip(sd);
        let xn = self.mul_col(xc, inv);
        let y = self.mul_row(xn, gamma);
        self.add_row(y, beta)
    }

    /// L2 norm of each row -> (rows, 1), guarded by `eps` inside the root.
    pub fn row_norms(&mut self, a: VarId, eps: f64) -> VarId {
        let sq = self.sqr(a);
        let s = self.sum_rows(sq);
        let s = self.add_scalar(s, eps);
        self.sqrt(s)
    }

    /// Run reverse accumulation from `loss` (must be (1,1)).
    pub fn backward(&mut self, loss: VarId) {
        assert_eq!(self.nodes[loss].shape(), (1, 1), "loss must be scalar");
        self.grads = self.nodes.iter().map(|t| vec![0.0; t.len()]).collect();
        self.grads[loss][0] = 1.0;
        for i in (0..=loss).rev() {
            if let Some(op) = self.backward_ops[i].take() {
                op(&self.nodes, &mut self.grads);
                self.backward_ops[i] = Some(op);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite-difference check of a scalar-valued graph builder.
    fn fd_check<F>(build: F, input: Tensor, tol: f64)
    where
        F: Fn(&mut Graph, VarId) -> VarId,
    {
        let mut g = Graph::new();
        let x = g.leaf(input.clone());
        let loss = build(&mut g, x);
        g.backward(loss);
        let analytic = g.grad(x).to_vec();

        let h = 1e-6;
        for i in 0..input.len() {
            let mut lo = input.clone();
            lo.data[i] -= h;
            let mut hi = input.clone();
            hi.data[i] += h;
            let mut gl = Graph::new();
            let xl = gl.constant(lo);
            let ll = build(&mut gl, xl);
            let mut gh = Graph::new();
            let xh = gh.constant(hi);
            let lh = build(&mut gh, xh);
            let fd = (gh.value(lh).data[0] - gl.value(ll).data[0]) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                (analytic[i] - fd).abs() / denom < tol,
                "grad mismatch at {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn matmul_matches_hand_product() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
        assert_eq!(a.matmul_nt(&Tensor::from_vec(2, 3, b.data.clone()[..6].to_vec())).shape(), (2, 2));
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, 4, 3);
        let b = rand_tensor(&mut rng, 3, 5);
        let c = a.matmul(&b);
        // transpose b by hand and check matmul_nt
        let mut bt = Tensor::zeros(5, 3);
        for r in 0..3 {
            for cix in 0..5 {
                bt.set(cix, r, b.get(r, cix));
            }
        }
        let c2 = a.matmul_nt(&bt);
        for (x, y) in c.data.iter().zip(&c2.data) {
            assert!((x - y).abs() < 1e-12);
        }
        // transpose a and check matmul_tn
        let mut at = Tensor::zeros(3, 4);
        for r in 0..4 {
            for cix in 0..3 {
                at.set(cix, r, a.get(r, cix));
            }
        }
        let c3 = at.matmul_tn(&b);
        for (x, y) in c.data.iter().zip(&c3.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_elementwise_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, 3, 2);
        fd_check(
            |g, x| {
                let a = g.sqr(x);
                let b = g.scale(a, 0.3);
                let c = g.add_scalar(b, 1.0);
                let d = g.sqrt(c);
                let e = g.recip(d);
                let f = g.gelu(e);
                g.mean_all(f)
            },
            x,
            1e-5,
        );
    }

    #[test]
    fn grad_matmul_and_broadcast() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, 3, 4);
        let w = rand_tensor(&mut rng, 4, 2);
        let b = rand_tensor(&mut rng, 1, 2);
        fd_check(
            move |g, x| {
                let w = g.constant(w.clone());
                let b = g.constant(b.clone());
                let y = g.matmul(x, w);
                let y = g.add_row(y, b);
                let y = g.sqr(y);
                g.sum_all(y)
            },
            x,
            1e-5,
        );
    }

    #[test]
    fn grad_softmax_and_layernorm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, 2, 5);
        let gamma = rand_tensor(&mut rng, 1, 5);
        let beta = rand_tensor(&mut rng, 1, 5);
        fd_check(
            move |g, x| {
                let ga = g.constant(gamma.clone());
                let be = g.constant(beta.clone());
                let y = g.layer_norm(x, ga, be, 1e-5);
                let s = g.softmax_rows(y);
                let s = g.sqr(s);
                g.sum_all(s)
            },
            x,
            1e-4,
        );
    }

    #[test]
    fn grad_indexing_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, 4, 3);
        fd_check(
            |g, x| {
                let sel = g.index_select(x, vec![0, 2, 5, 5, 11, 7], 2, 3);
                let sl = g.slice_rows(sel, 0, 2);
                let sc = g.slice_cols(sl, 1, 3);
                let cat = g.concat_rows(&[sc, sc]);
                let cat2 = g.concat_cols(&[cat, cat]);
                let m = g.mean_cols(cat2);
                let m = g.sqr(m);
                g.sum_all(m)
            },
            x,
            1e-5,
        );
    }

    #[test]
    fn grad_broadcast_scalar_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, 1, 1);
        let base = rand_tensor(&mut rng, 3, 3);
        fd_check(
            move |g, s| {
                let a = g.constant(base.clone());
                let y = g.mul_bscalar(a, s);
                let y = g.add_bscalar(y, s);
                let n = g.row_norms(y, 1e-12);
                g.sum_all(n)
            },
            x,
            1e-5,
        );
    }

    #[test]
    fn grad_col_broadcasts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, 3, 2);
        let col = rand_tensor(&mut rng, 3, 1);
        fd_check(
            move |g, x| {
                let c = g.constant(col.clone());
                let a = g.add_col(x, c);
                let b = g.sub_col(a, c);
                let d = g.mul_col(b, c);
                let e = g.mul(d, d);
                let f = g.sub(e, d);
                let s = g.sum_rows(f);
                g.mean_all(s)
            },
            x,
            1e-5,
        );
    }
}
