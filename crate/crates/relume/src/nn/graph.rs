//! The autodiff tape: eager forward evaluation, exact reverse-mode sweep.

use crate::patches::{fold_into, resample_into, resample_taps, unfold_into, PatchGrid};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    AddRow(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Affine(TensorId, f64),
    MatMul(TensorId, TensorId),
    MatMulNt(TensorId, TensorId),
    LeakyRelu(TensorId, f64),
    Gelu(TensorId),
    Softplus(TensorId),
    Sigmoid(TensorId),
    Log(TensorId),
    Abs(TensorId),
    SumAll(TensorId),
    MeanAll(TensorId),
    SoftmaxRows(TensorId),
    LayerNormRows { x: TensorId, gamma: TensorId, beta: TensorId, eps: f64 },
    Conv2d { x: TensorId, w: TensorId, bias: Option<TensorId>, stride: usize, pad: usize },
    Unfold { x: TensorId, grid: PatchGrid, channels: usize },
    Fold { seq: TensorId, grid: PatchGrid, channels: usize },
    Resample { x: TensorId, out_h: usize, out_w: usize },
    ConcatRows(TensorId, TensorId),
    SliceRows { x: TensorId, start: usize, rows: usize },
    ConcatCols(Vec<TensorId>),
    SliceCols { x: TensorId, start: usize, cols: usize },
    GatherRows { table: TensorId, indices: Vec<usize> },
    Reshape(TensorId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Gelu(..) => "gelu",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LayerNormRows { .. } => "layer_norm_rows",
            Op::Conv2d { .. } => "conv2d",
            Op::Unfold { .. } => "unfold",
            Op::Fold { .. } => "fold",
            Op::Resample { .. } => "resample_bilinear",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Append-only computation tape.
pub struct Graph {
    nodes: Vec<Node>,
    nan_guard: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), nan_guard: true }
    }

    /// Disables the per-op finite check (it costs one scan per op output).
    pub fn without_nan_guard(mut self) -> Self {
        self.nan_guard = false;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Reads a scalar node.
    pub fn value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(numel(&self.nodes[id.0].shape), 1);
        self.nodes[id.0].data[0]
    }

    /// Gradient of the last backward target w.r.t. this node, if tracked.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len(), "{} shape/data mismatch", op.name());
        if self.nan_guard && !data.iter().all(|v| v.is_finite()) {
            panic!(
                "nn graph aborted: non-finite value produced by `{}` (node {})",
                op.name(),
                self.nodes.len()
            );
        }
        self.nodes.push(Node { shape, data, grad: None, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn track(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn leaf(&mut self, shape: &[usize], data: Vec<f64>, requires_grad: bool) -> TensorId {
        self.push(shape.to_vec(), data, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> TensorId {
        self.leaf(shape, data, false)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.constant(&[1], vec![v])
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.track(&[a, b]);
        self.push(shape, data, rg, Op::Add(a, b))
    }

    /// `[rows, cols] + [cols]`, broadcasting the vector over rows.
    pub fn add_row(&mut self, x: TensorId, row: TensorId) -> TensorId {
        let (shape, cols) = {
            let s = self.shape(x);
            assert_eq!(s.len(), 2, "add_row: matrix expected");
            (s.to_vec(), s[1])
        };
        assert_eq!(self.shape(row), &[cols], "add_row: row length mismatch");
        let mut data = self.data(x).to_vec();
        let r = self.data(row);
        for chunk in data.chunks_exact_mut(cols) {
            for (v, b) in chunk.iter_mut().zip(r) {
                *v += b;
            }
        }
        let rg = self.track(&[x, row]);
        self.push(shape, data, rg, Op::AddRow(x, row))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.track(&[a, b]);
        self.push(shape, data, rg, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.track(&[a, b]);
        self.push(shape, data, rg, Op::Mul(a, b))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: TensorId, scale: f64, shift: f64) -> TensorId {
        let data = self.data(x).iter().map(|v| scale * v + shift).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.track(&[x]);
        self.push(shape, data, rg, Op::Affine(x, scale))
    }

    pub fn neg(&mut self, x: TensorId) -> TensorId {
        self.affine(x, -1.0, 0.0)
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = mat_dims(self.shape(a), "matmul lhs");
        let (k2, n) = mat_dims(self.shape(b), "matmul rhs");
        assert_eq!(k, k2, "matmul: inner dimensions differ");
        let data = matmul_ff(self.data(a), self.data(b), m, k, n);
        let rg = self.track(&[a, b]);
        self.push(vec![m, n], data, rg, Op::MatMul(a, b))
    }

    /// `[m, k] x [n, k]^T` (the attention-score shape).
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = mat_dims(self.shape(a), "matmul_nt lhs");
        let (n, k2) = mat_dims(self.shape(b), "matmul_nt rhs");
        assert_eq!(k, k2, "matmul_nt: inner dimensions differ");
        let data = matmul_nt(self.data(a), self.data(b), m, k, n);
        let rg = self.track(&[a, b]);
        self.push(vec![m, n], data, rg, Op::MatMulNt(a, b))
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: f64) -> TensorId {
        let data = self
            .data(x)
            .iter()
            .map(|v| if *v > 0.0 { *v } else { slope * v })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.track(&[x]);
        self.push(shape, data, rg, Op::LeakyRelu(x, slope))
    }

    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|v| gelu_value(*v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.track(&[x]);
        self.push(shape, data, rg, Op::Gelu(x))
    }

    pub fn softplus(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|v| softplus_value(*v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.track(&[x]);
        self.push(shape, data, rg, Op::Softplus(x))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|v| sigmoid_value(*v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.track(&[x]);
        self.push(shape, data, rg, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.track(&[x]);
        self.push(shape, data, rg, Op::Log(x))
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|v| v.abs()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.track(&[x]);
        self.push(shape, data, rg, Op::Abs(x))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.data(x).iter().sum();
        let rg = self.track(&[x]);
        self.push(vec![1], vec![s], rg, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.data(x).len();
        assert!(n > 0, "mean_all of an empty tensor");
        let s: f64 = self.data(x).iter().sum();
        let rg = self.track(&[x]);
        self.push(vec![1], vec![s / n as f64], rg, Op::MeanAll(x))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, x: TensorId) -> TensorId {
        let (rows, cols) = mat_dims(self.shape(x), "softmax_rows");
        let mut data = self.data(x).to_vec();
        for row in data.chunks_exact_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let rg = self.track(&[x]);
        self.push(vec![rows, cols], data, rg, Op::SoftmaxRows(x))
    }

    /// Per-row layer normalization with affine parameters.
    pub fn layer_norm_rows(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> TensorId {
        let (rows, cols) = mat_dims(self.shape(x), "layer_norm_rows");
        assert_eq!(self.shape(gamma), &[cols], "layer_norm: gamma length");
        assert_eq!(self.shape(beta), &[cols], "layer_norm: beta length");
        let mut data = vec![0f64; rows * cols];
        {
            let xd = self.data(x);
            let g = self.data(gamma);
            let b = self.data(beta);
            for r in 0..rows {
                let row = &xd[r * cols..(r + 1) * cols];
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                for c in 0..cols {
                    data[r * cols + c] = (row[c] - mean) * rstd * g[c] + b[c];
                }
            }
        }
        let rg = self.track(&[x, gamma, beta]);
        self.push(vec![rows, cols], data, rg, Op::LayerNormRows { x, gamma, beta, eps })
    }

    /// 2D convolution over `[batch, cin, h, w]` with kernel
    /// `[cout, cin, kh, kw]`, symmetric zero padding `pad`, square stride.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        pad: usize,
    ) -> TensorId {
        assert!(stride >= 1, "conv2d: stride must be >= 1");
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d: input must be [b, c, h, w]");
        assert_eq!(ws.len(), 4, "conv2d: kernel must be [cout, cin, kh, kw]");
        assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
        if let Some(b) = bias {
            assert_eq!(self.shape(b), &[ws[0]], "conv2d: bias length");
        }
        let (bsz, cin, h, w_in) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert!(h + 2 * pad >= kh && w_in + 2 * pad >= kw, "conv2d: kernel larger than input");
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w_in + 2 * pad - kw) / stride + 1;
        let mut out = vec![0f64; bsz * cout * oh * ow];
        {
            let xd = self.data(x);
            let wd = self.data(w);
            let bd = bias.map(|b| self.data(b).to_vec());
            conv2d_forward(
                xd, wd, bd.as_deref(), &mut out, bsz, cin, h, w_in, cout, kh, kw, stride, pad,
            );
        }
        let rg = self.track(&[x, w]) || bias.map(|b| self.track(&[b])).unwrap_or(false);
        self.push(vec![bsz, cout, oh, ow], out, rg, Op::Conv2d { x, w, bias, stride, pad })
    }

    /// Overlapped patch extraction of a `[c, h, w]` map into `[N, c*ph*pw]`.
    pub fn unfold(&mut self, x: TensorId, grid: &PatchGrid) -> TensorId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "unfold: input must be [c, h, w]");
        assert_eq!((xs[1], xs[2]), (grid.in_h, grid.in_w), "unfold: grid dims mismatch");
        let channels = xs[0];
        let mut out = vec![0f64; grid.n_patches() * grid.patch_len(channels)];
        unfold_into(self.data(x), channels, grid, &mut out);
        let rg = self.track(&[x]);
        self.push(
            vec![grid.n_patches(), grid.patch_len(channels)],
            out,
            rg,
            Op::Unfold { x, grid: *grid, channels },
        )
    }

    /// Summed recomposition of `[N, c*ph*pw]` rows into a `[c, h, w]` map.
    pub fn fold(&mut self, seq: TensorId, grid: &PatchGrid, channels: usize) -> TensorId {
        let ss = self.shape(seq).to_vec();
        assert_eq!(ss.len(), 2, "fold: input must be [n, patch_len]");
        assert_eq!(ss[0], grid.n_patches(), "fold: patch count mismatch");
        assert_eq!(ss[1], grid.patch_len(channels), "fold: patch length mismatch");
        let mut out = vec![0f64; channels * grid.in_h * grid.in_w];
        fold_into(self.data(seq), channels, grid, &mut out);
        let rg = self.track(&[seq]);
        self.push(
            vec![channels, grid.in_h, grid.in_w],
            out,
            rg,
            Op::Fold { seq, grid: *grid, channels },
        )
    }

    /// Corner-aligned bilinear resampling of a `[c, h, w]` map.
    pub fn resample_bilinear(&mut self, x: TensorId, out_h: usize, out_w: usize) -> TensorId {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "resample: input must be [c, h, w]");
        assert!(out_h >= 1 && out_w >= 1, "resample: output dims must be >= 1");
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let mut out = vec![0f64; c * out_h * out_w];
        resample_into(self.data(x), c, h, w, out_h, out_w, &mut out);
        let rg = self.track(&[x]);
        self.push(vec![c, out_h, out_w], out, rg, Op::Resample { x, out_h, out_w })
    }

    /// Stacks two matrices with equal column counts.
    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ra, ca) = mat_dims(self.shape(a), "concat_rows lhs");
        let (rb, cb) = mat_dims(self.shape(b), "concat_rows rhs");
        assert_eq!(ca, cb, "concat_rows: column mismatch");
        let mut data = Vec::with_capacity((ra + rb) * ca);
        data.extend_from_slice(self.data(a));
        data.extend_from_slice(self.data(b));
        let rg = self.track(&[a, b]);
        self.push(vec![ra + rb, ca], data, rg, Op::ConcatRows(a, b))
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, rows: usize) -> TensorId {
        let (r, c) = mat_dims(self.shape(x), "slice_rows");
        assert!(start + rows <= r, "slice_rows: out of range");
        let data = self.data(x)[start * c..(start + rows) * c].to_vec();
        let rg = self.track(&[x]);
        self.push(vec![rows, c], data, rg, Op::SliceRows { x, start, rows })
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = mat_dims(self.shape(parts[0]), "concat_cols").0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (r, c) = mat_dims(self.shape(*p), "concat_cols");
                assert_eq!(r, rows, "concat_cols: row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0f64; rows * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let src = self.data(*p);
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rg = self.track(parts);
        self.push(vec![rows, total], data, rg, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, cols: usize) -> TensorId {
        let (r, c) = mat_dims(self.shape(x), "slice_cols");
        assert!(start + cols <= c, "slice_cols: out of range");
        let src = self.data(x);
        let mut data = vec![0f64; r * cols];
        for row in 0..r {
            data[row * cols..(row + 1) * cols]
                .copy_from_slice(&src[row * c + start..row * c + start + cols]);
        }
        let rg = self.track(&[x]);
        self.push(vec![r, cols], data, rg, Op::SliceCols { x, start, cols })
    }

    /// Gathers rows of `table` (`[t, d]`) by index; gradients scatter-add.
    pub fn gather_rows(&mut self, table: TensorId, indices: &[usize]) -> TensorId {
        let (t, d) = mat_dims(self.shape(table), "gather_rows");
        assert!(indices.iter().all(|i| *i < t), "gather_rows: index out of range");
        let src = self.data(table);
        let mut data = vec![0f64; indices.len() * d];
        for (o, idx) in indices.iter().enumerate() {
            data[o * d..(o + 1) * d].copy_from_slice(&src[idx * d..(idx + 1) * d]);
        }
        let rg = self.track(&[table]);
        self.push(
            vec![indices.len(), d],
            data,
            rg,
            Op::GatherRows { table, indices: indices.to_vec() },
        )
    }

    /// Reinterprets the data with a new shape of equal element count.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> TensorId {
        assert_eq!(numel(self.shape(x)), numel(shape), "reshape: element count mismatch");
        let data = self.data(x).to_vec();
        let rg = self.track(&[x]);
        self.push(shape.to_vec(), data, rg, Op::Reshape(x))
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into
    /// every tracked node; leaves keep them for readout.
    pub fn backward(&mut self, loss: TensorId) {
        assert_eq!(numel(self.shape(loss)), 1, "backward target must be scalar");
        for node in &mut self.nodes {
            node.grad = if node.requires_grad {
                Some(vec![0f64; node.data.len()])
            } else {
                None
            };
        }
        if !self.nodes[loss.0].requires_grad {
            return; // nothing upstream is tracked
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let g = self.take_grad(i);
                    self.accumulate(a, |ga| add_assign(ga, &g));
                    self.accumulate(b, |gb| add_assign(gb, &g));
                    self.restore_grad(i, g);
                }
                Op::AddRow(x, row) => {
                    let g = self.take_grad(i);
                    let cols = self.nodes[row.0].data.len();
                    self.accumulate(x, |gx| add_assign(gx, &g));
                    self.accumulate(row, |gr| {
                        for chunk in g.chunks_exact(cols) {
                            for (o, v) in gr.iter_mut().zip(chunk) {
                                *o += v;
                            }
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::Sub(a, b) => {
                    let g = self.take_grad(i);
                    self.accumulate(a, |ga| add_assign(ga, &g));
                    self.accumulate(b, |gb| {
                        for (o, v) in gb.iter_mut().zip(&g) {
                            *o -= v;
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::Mul(a, b) => {
                    let g = self.take_grad(i);
                    self.with_grad(a, |s, ga| {
                        for ((o, v), x) in ga.iter_mut().zip(&g).zip(&s.nodes[b.0].data) {
                            *o += v * x;
                        }
                    });
                    self.with_grad(b, |s, gb| {
                        for ((o, v), x) in gb.iter_mut().zip(&g).zip(&s.nodes[a.0].data) {
                            *o += v * x;
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::Affine(x, scale) => {
                    let g = self.take_grad(i);
                    self.accumulate(x, |gx| {
                        for (o, v) in gx.iter_mut().zip(&g) {
                            *o += scale * v;
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::MatMul(a, b) => {
                    let g = self.take_grad(i);
                    let (m, k) = mat_dims(&self.nodes[a.0].shape, "");
                    let n = self.nodes[b.0].shape[1];
                    // dA += g * B^T ; dB += A^T * g
                    let da = matmul_nt(&g, &self.nodes[b.0].data, m, n, k);
                    let db = matmul_tn(&self.nodes[a.0].data, &g, m, k, n);
                    self.accumulate(a, |ga| add_assign(ga, &da));
                    self.accumulate(b, |gb| add_assign(gb, &db));
                    self.restore_grad(i, g);
                }
                Op::MatMulNt(a, b) => {
                    let g = self.take_grad(i);
                    let (m, k) = mat_dims(&self.nodes[a.0].shape, "");
                    let n = self.nodes[b.0].shape[0];
                    // C = A B^T: dA += g * B ; dB += g^T * A
                    let da = matmul_ff(&g, &self.nodes[b.0].data, m, n, k);
                    let db = matmul_tn(&g, &self.nodes[a.0].data, m, n, k);
                    self.accumulate(a, |ga| add_assign(ga, &da));
                    self.accumulate(b, |gb| add_assign(gb, &db));
                    self.restore_grad(i, g);
                }
                Op::LeakyRelu(x, slope) => {
                    let g = self.take_grad(i);
                    self.with_grad(x, |s, gx| {
                        for ((o, v), xv) in gx.iter_mut().zip(&g).zip(&s.nodes[x.0].data) {
                            *o += if *xv > 0.0 { *v } else { slope * v };
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::Gelu(x) => {
                    let g = self.take_grad(i);
                    self.with_grad(x, |s, gx| {
                        for ((o, v), xv) in gx.iter_mut().zip(&g).zip(&s.nodes[x.0].data) {
                            *o += gelu_derivative(*xv) * v;
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::Softplus(x) => {
                    let g = self.take_grad(i);
                    self.with_grad(x, |s, gx| {
                        for ((o, v), xv) in gx.iter_mut().zip(&g).zip(&s.nodes[x.0].data) {
                            *o += sigmoid_value(*xv) * v;
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::Sigmoid(x) => {
                    let g = self.take_grad(i);
                    self.with_grad(x, |s, gx| {
                        for ((o, v), y) in gx.iter_mut().zip(&g).zip(&s.nodes[i].data) {
                            *o += y * (1.0 - y) * v;
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::Log(x) => {
                    let g = self.take_grad(i);
                    self.with_grad(x, |s, gx| {
                        for ((o, v), xv) in gx.iter_mut().zip(&g).zip(&s.nodes[x.0].data) {
                            *o += v / xv;
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::Abs(x) => {
                    let g = self.take_grad(i);
                    self.with_grad(x, |s, gx| {
                        for ((o, v), xv) in gx.iter_mut().zip(&g).zip(&s.nodes[x.0].data) {
                            *o += v * signum_zero(*xv);
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::SumAll(x) => {
                    let g = self.take_grad(i)[0];
                    self.accumulate(x, |gx| {
                        for o in gx.iter_mut() {
                            *o += g;
                        }
                    });
                    self.nodes[i].grad = Some(vec![g]);
                }
                Op::MeanAll(x) => {
                    let g = self.take_grad(i)[0];
                    let n = self.nodes[x.0].data.len() as f64;
                    self.accumulate(x, |gx| {
                        for o in gx.iter_mut() {
                            *o += g / n;
                        }
                    });
                    self.nodes[i].grad = Some(vec![g]);
                }
                Op::SoftmaxRows(x) => {
                    let g = self.take_grad(i);
                    let cols = self.nodes[i].shape[1];
                    self.with_grad(x, |s, gx| {
                        let p = &s.nodes[i].data;
                        for ((grow, prow), orow) in g
                            .chunks_exact(cols)
                            .zip(p.chunks_exact(cols))
                            .zip(gx.chunks_exact_mut(cols))
                        {
                            let dot: f64 = grow.iter().zip(prow).map(|(a, b)| a * b).sum();
                            for ((o, gv), pv) in orow.iter_mut().zip(grow).zip(prow) {
                                *o += pv * (gv - dot);
                            }
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::LayerNormRows { x, gamma, beta, eps } => {
                    let g = self.take_grad(i);
                    let xd = &self.nodes[x.0].data;
                    let gd = &self.nodes[gamma.0].data;
                    let cols = self.nodes[gamma.0].data.len();
                    let rows = xd.len() / cols;
                    let mut dx = vec![0f64; xd.len()];
                    let mut dgamma = vec![0f64; cols];
                    let mut dbeta = vec![0f64; cols];
                    for r in 0..rows {
                        let row = &xd[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let mean = row.iter().sum::<f64>() / cols as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                        let rstd = 1.0 / (var + eps).sqrt();
                        let mut mean_h = 0.0;
                        let mut mean_hx = 0.0;
                        for c in 0..cols {
                            let xhat = (row[c] - mean) * rstd;
                            let h = gd[c] * grow[c];
                            mean_h += h;
                            mean_hx += h * xhat;
                            dgamma[c] += grow[c] * xhat;
                            dbeta[c] += grow[c];
                        }
                        mean_h /= cols as f64;
                        mean_hx /= cols as f64;
                        for c in 0..cols {
                            let xhat = (row[c] - mean) * rstd;
                            dx[r * cols + c] =
                                rstd * (gd[c] * grow[c] - mean_h - xhat * mean_hx);
                        }
                    }
                    self.accumulate(x, |gx| add_assign(gx, &dx));
                    self.accumulate(gamma, |gg| add_assign(gg, &dgamma));
                    self.accumulate(beta, |gb| add_assign(gb, &dbeta));
                    self.restore_grad(i, g);
                }
                Op::Conv2d { x, w, bias, stride, pad } => {
                    let g = self.take_grad(i);
                    let (dx, dw, db) = conv2d_backward(
                        &g,
                        &self.nodes[x.0].data,
                        &self.nodes[w.0].data,
                        &self.nodes[x.0].shape,
                        &self.nodes[w.0].shape,
                        &self.nodes[i].shape,
                        stride,
                        pad,
                    );
                    self.accumulate(x, |gx| add_assign(gx, &dx));
                    self.accumulate(w, |gw| add_assign(gw, &dw));
                    if let Some(b) = bias {
                        self.accumulate(b, |gb| add_assign(gb, &db));
                    }
                    self.restore_grad(i, g);
                }
                Op::Unfold { x, grid, channels } => {
                    // Fold is the exact adjoint of unfold.
                    let g = self.take_grad(i);
                    let mut dx = vec![0f64; channels * grid.in_h * grid.in_w];
                    fold_into(&g, channels, &grid, &mut dx);
                    self.accumulate(x, |gx| add_assign(gx, &dx));
                    self.restore_grad(i, g);
                }
                Op::Fold { seq, grid, channels } => {
                    let g = self.take_grad(i);
                    let mut dseq = vec![0f64; grid.n_patches() * grid.patch_len(channels)];
                    unfold_into(&g, channels, &grid, &mut dseq);
                    self.accumulate(seq, |gs| add_assign(gs, &dseq));
                    self.restore_grad(i, g);
                }
                Op::Resample { x, out_h, out_w } => {
                    let g = self.take_grad(i);
                    let xs = self.nodes[x.0].shape.clone();
                    let (c, in_h, in_w) = (xs[0], xs[1], xs[2]);
                    let mut dx = vec![0f64; c * in_h * in_w];
                    let in_plane = in_h * in_w;
                    let out_plane = out_h * out_w;
                    for y in 0..out_h {
                        let (y0, y1, wy0) = resample_taps(out_h, in_h, y);
                        for xo in 0..out_w {
                            let (x0, x1, wx0) = resample_taps(out_w, in_w, xo);
                            for ch in 0..c {
                                let gv = g[ch * out_plane + y * out_w + xo];
                                let p = &mut dx[ch * in_plane..(ch + 1) * in_plane];
                                p[y0 * in_w + x0] += wy0 * wx0 * gv;
                                p[y0 * in_w + x1] += wy0 * (1.0 - wx0) * gv;
                                p[y1 * in_w + x0] += (1.0 - wy0) * wx0 * gv;
                                p[y1 * in_w + x1] += (1.0 - wy0) * (1.0 - wx0) * gv;
                            }
                        }
                    }
                    self.accumulate(x, |gx| add_assign(gx, &dx));
                    self.restore_grad(i, g);
                }
                Op::ConcatRows(a, b) => {
                    let g = self.take_grad(i);
                    let na = self.nodes[a.0].data.len();
                    self.accumulate(a, |ga| add_assign(ga, &g[..na]));
                    self.accumulate(b, |gb| add_assign(gb, &g[na..]));
                    self.restore_grad(i, g);
                }
                Op::SliceRows { x, start, rows } => {
                    let g = self.take_grad(i);
                    let cols = self.nodes[x.0].shape[1];
                    self.accumulate(x, |gx| {
                        add_assign(&mut gx[start * cols..(start + rows) * cols], &g);
                    });
                    self.restore_grad(i, g);
                }
                Op::ConcatCols(parts) => {
                    let g = self.take_grad(i);
                    let total = self.nodes[i].shape[1];
                    let rows = self.nodes[i].shape[0];
                    let mut offset = 0;
                    for p in &parts {
                        let w = self.nodes[p.0].shape[1];
                        let mut dp = vec![0f64; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(*p, |gp| add_assign(gp, &dp));
                        offset += w;
                    }
                    self.restore_grad(i, g);
                }
                Op::SliceCols { x, start, cols } => {
                    let g = self.take_grad(i);
                    let full = self.nodes[x.0].shape[1];
                    let rows = self.nodes[i].shape[0];
                    self.accumulate(x, |gx| {
                        for r in 0..rows {
                            add_assign(
                                &mut gx[r * full + start..r * full + start + cols],
                                &g[r * cols..(r + 1) * cols],
                            );
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::GatherRows { table, indices } => {
                    let g = self.take_grad(i);
                    let d = self.nodes[table.0].shape[1];
                    self.accumulate(table, |gt| {
                        for (o, idx) in indices.iter().enumerate() {
                            add_assign(&mut gt[idx * d..(idx + 1) * d], &g[o * d..(o + 1) * d]);
                        }
                    });
                    self.restore_grad(i, g);
                }
                Op::Reshape(x) => {
                    let g = self.take_grad(i);
                    self.accumulate(x, |gx| add_assign(gx, &g));
                    self.restore_grad(i, g);
                }
            }
        }
    }

    fn take_grad(&mut self, i: usize) -> Vec<f64> {
        self.nodes[i].grad.take().expect("grad present for tracked node")
    }

    /// Temporarily removes a node's gradient buffer so the closure can
    /// accumulate into it while reading the rest of the graph.
    fn with_grad(&mut self, id: TensorId, f: impl FnOnce(&Self, &mut [f64])) {
        if let Some(mut g) = self.nodes[id.0].grad.take() {
            f(self, &mut g);
            self.nodes[id.0].grad = Some(g);
        }
    }

    fn restore_grad(&mut self, i: usize, g: Vec<f64>) {
        self.nodes[i].grad = Some(g);
    }

    fn accumulate(&mut self, id: TensorId, f: impl FnOnce(&mut [f64])) {
        if let Some(g) = self.nodes[id.0].grad.as_mut() {
            f(g);
        }
    }
}

fn mat_dims(shape: &[usize], ctx: &str) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "{ctx}: matrix expected, got shape {shape:?}");
    (shape[0], shape[1])
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn signum_zero(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_value(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_S: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_Q: f64 = 0.044715;

fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_S * (x + GELU_Q * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_S * (x + GELU_Q * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_S * (1.0 + 3.0 * GELU_Q * x * x)
}

/// `A[m,k] * B[k,n]`.
fn matmul_ff(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0f64; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, av) in arow.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `A[m,k] * B[n,k]^T`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0f64; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `A[m,k]^T * B[m,n]` -> `[k,n]`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0f64; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, av) in arow.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Output range `[lo, hi)` whose sampled input coordinate stays inside
/// `[0, size)` for a given kernel offset.
fn conv_valid_range(out_size: usize, size: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // in = out*stride + k - pad must satisfy 0 <= in < size.
    let lo = pad.saturating_sub(k).div_ceil(stride);
    let hi = if size + pad > k {
        ((size + pad - k - 1) / stride + 1).min(out_size)
    } else {
        0
    };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    out: &mut [f64],
    bsz: usize,
    cin: usize,
    h: usize,
    win: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (win + 2 * pad - kw) / stride + 1;
    for b in 0..bsz {
        for co in 0..cout {
            let oplane = &mut out[((b * cout + co) * oh) * ow..((b * cout + co) * oh + oh) * ow];
            if let Some(bd) = bias {
                oplane.fill(bd[co]);
            }
            for ci in 0..cin {
                let xplane = &x[(b * cin + ci) * h * win..(b * cin + ci + 1) * h * win];
                let wplane = &w[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
                // Shift-and-accumulate: per kernel tap, run over the output
                // range whose input samples are in bounds.
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = conv_valid_range(oh, h, ky, stride, pad);
                    for kx in 0..kw {
                        let wv = wplane[ky * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox_lo, ox_hi) = conv_valid_range(ow, win, kx, stride, pad);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let xrow = &xplane[iy * win..(iy + 1) * win];
                            let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let ix0 = ox_lo + kx - pad;
                                let n = ox_hi - ox_lo;
                                for (o, xv) in
                                    orow[ox_lo..ox_hi].iter_mut().zip(&xrow[ix0..ix0 + n])
                                {
                                    *o += wv * xv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * xrow[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    g: &[f64],
    x: &[f64],
    w: &[f64],
    xs: &[usize],
    ws: &[usize],
    os: &[usize],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (bsz, cin, h, win) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let (oh, ow) = (os[2], os[3]);
    let mut dx = vec![0f64; x.len()];
    let mut dw = vec![0f64; w.len()];
    let mut db = vec![0f64; cout];
    for b in 0..bsz {
        for co in 0..cout {
            let gplane = &g[((b * cout + co) * oh) * ow..((b * cout + co) * oh + oh) * ow];
            db[co] += gplane.iter().sum::<f64>();
            for ci in 0..cin {
                let xoff = (b * cin + ci) * h * win;
                let woff = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = conv_valid_range(oh, h, ky, stride, pad);
                    for kx in 0..kw {
                        let wv = w[woff + ky * kw + kx];
                        let mut dw_acc = 0.0;
                        let (ox_lo, ox_hi) = conv_valid_range(ow, win, kx, stride, pad);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            let xrow_off = xoff + iy * win;
                            if stride == 1 {
                                let ix0 = ox_lo + kx - pad;
                                for (i, gv) in grow[ox_lo..ox_hi].iter().enumerate() {
                                    let xi = xrow_off + ix0 + i;
                                    dx[xi] += gv * wv;
                                    dw_acc += gv * x[xi];
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let xi = xrow_off + ox * stride + kx - pad;
                                    let gv = grow[ox];
                                    dx[xi] += gv * wv;
                                    dw_acc += gv * x[xi];
                                }
                            }
                        }
                        dw[woff + ky * kw + kx] += dw_acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
