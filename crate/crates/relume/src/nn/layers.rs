//! Layer assemblies on top of the graph: attention, transformer blocks,
//! strided downsampling stacks and Bernoulli-head helpers.

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, TensorId};
use super::params::{Binding, ParamSet};

/// Negative-side slope shared by every Leaky ReLU in the model zoo.
pub const LEAKY_SLOPE: f64 = 0.2;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `x @ w + b` for `x: [rows, d_in]`, `w: [d_in, d_out]`, `b: [d_out]`.
pub fn linear(g: &mut Graph, x: TensorId, w: TensorId, b: TensorId) -> TensorId {
    let xw = g.matmul(x, w);
    g.add_row(xw, b)
}

/// Scaled dot-product attention.
///
/// With a bias and `bias_inside_scale`, the logits are `(Q K^T + B) / sqrt(d)`
/// (bias shares the scaling); otherwise the bias is added after scaling.
pub fn attention(
    g: &mut Graph,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    bias: Option<TensorId>,
    bias_inside_scale: bool,
) -> TensorId {
    attention_with_probs(g, q, k, v, bias, bias_inside_scale).0
}

/// Like [`attention`] but also returns the row-softmax probability node.
pub fn attention_with_probs(
    g: &mut Graph,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    bias: Option<TensorId>,
    bias_inside_scale: bool,
) -> (TensorId, TensorId) {
    let d = g.shape(q)[1];
    let scale = 1.0 / (d as f64).sqrt();
    let mut scores = g.matmul_nt(q, k);
    scores = match (bias, bias_inside_scale) {
        (Some(b), true) => {
            let biased = g.add(scores, b);
            g.affine(biased, scale, 0.0)
        }
        (Some(b), false) => {
            let scaled = g.affine(scores, scale, 0.0);
            g.add(scaled, b)
        }
        (None, _) => g.affine(scores, scale, 0.0),
    };
    let probs = g.softmax_rows(scores);
    (g.matmul(probs, v), probs)
}

/// Relative-position-bias configuration for an attention layer.
#[derive(Debug, Clone, Copy)]
pub struct RpbSpec {
    /// Row/column offsets are clamped to `[-max_offset, max_offset]`.
    pub max_offset: usize,
    /// Whether the bias shares the `1/sqrt(d)` scaling with the logits.
    pub inside_scale: bool,
}

impl RpbSpec {
    pub fn table_len(&self) -> usize {
        let side = 2 * self.max_offset + 1;
        side * side
    }

    /// Flat table index for a token pair with grid offsets
    /// `(d_row, d_col)`.
    pub fn index(&self, d_row: isize, d_col: isize) -> usize {
        let m = self.max_offset as isize;
        let r = d_row.clamp(-m, m) + m;
        let c = d_col.clamp(-m, m) + m;
        (r * (2 * m + 1) + c) as usize
    }
}

/// Multi-head self-attention with optional per-head relative position bias.
pub struct MultiHeadAttention {
    prefix: String,
    pub d_model: usize,
    pub n_heads: usize,
    pub rpb: Option<RpbSpec>,
}

impl MultiHeadAttention {
    pub fn register(
        set: &mut ParamSet,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        rpb: Option<RpbSpec>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(n_heads >= 1 && d_model % n_heads == 0, "d_model must divide by n_heads");
        for name in ["wq", "wk", "wv", "wo"] {
            set.add_uniform(&format!("{prefix}.{name}"), &[d_model, d_model], d_model, rng);
        }
        for name in ["bq", "bk", "bv", "bo"] {
            set.add_zeros(&format!("{prefix}.{name}"), &[d_model]);
        }
        if let Some(spec) = rpb {
            for h in 0..n_heads {
                set.add_table(&format!("{prefix}.rpb.h{h}"), &[spec.table_len(), 1], rng);
            }
        }
        Self { prefix: prefix.to_string(), d_model, n_heads, rpb }
    }

    /// `z: [n, d_model]` -> `[n, d_model]`. `rel_indices` must hold the
    /// flattened `n*n` bias-table lookups when RPB is enabled. Each head's
    /// attention matrix is appended to `probs_sink` when provided.
    pub fn forward(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        binding: &Binding,
        z: TensorId,
        rel_indices: Option<&[usize]>,
        probs_sink: Option<&mut Vec<Vec<f64>>>,
    ) -> TensorId {
        let n = g.shape(z)[0];
        let p = |name: &str| format!("{}.{name}", self.prefix);
        let wq = set.id(binding, &p("wq"));
        let wk = set.id(binding, &p("wk"));
        let wv = set.id(binding, &p("wv"));
        let wo = set.id(binding, &p("wo"));
        let bq = set.id(binding, &p("bq"));
        let bk = set.id(binding, &p("bk"));
        let bv = set.id(binding, &p("bv"));
        let bo = set.id(binding, &p("bo"));

        let q = linear(g, z, wq, bq);
        let k = linear(g, z, wk, bk);
        let v = linear(g, z, wv, bv);

        let d_head = self.d_model / self.n_heads;
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut sink = probs_sink;
        for h in 0..self.n_heads {
            let qh = g.slice_cols(q, h * d_head, d_head);
            let kh = g.slice_cols(k, h * d_head, d_head);
            let vh = g.slice_cols(v, h * d_head, d_head);
            let bias = self.rpb.map(|_| {
                let table = set.id(binding, &p(&format!("rpb.h{h}")));
                let indices = rel_indices.expect("rel_indices required when RPB is enabled");
                debug_assert_eq!(indices.len(), n * n);
                let flat = g.gather_rows(table, indices);
                g.reshape(flat, &[n, n])
            });
            let inside = self.rpb.map(|s| s.inside_scale).unwrap_or(true);
            let (out, probs) = attention_with_probs(g, qh, kh, vh, bias, inside);
            if let Some(sink) = sink.as_deref_mut() {
                sink.push(g.data(probs).to_vec());
            }
            heads.push(out);
        }
        let merged = g.concat_cols(&heads);
        linear(g, merged, wo, bo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpActivation {
    Gelu,
    LeakyRelu,
}

impl MlpActivation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gelu" => Some(Self::Gelu),
            "leaky_relu" => Some(Self::LeakyRelu),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Gelu => "gelu",
            Self::LeakyRelu => "leaky_relu",
        }
    }

    fn apply(&self, g: &mut Graph, x: TensorId) -> TensorId {
        match self {
            Self::Gelu => g.gelu(x),
            Self::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
        }
    }
}

/// Pre-norm residual transformer block: attention then a 4x-wide MLP,
/// each behind its own layer norm and skip connection.
pub struct TransformerBlock {
    prefix: String,
    pub attn: MultiHeadAttention,
    activation: MlpActivation,
}

impl TransformerBlock {
    pub fn register(
        set: &mut ParamSet,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        activation: MlpActivation,
        rpb: Option<RpbSpec>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        set.add_ones(&format!("{prefix}.ln1.g"), &[d_model]);
        set.add_zeros(&format!("{prefix}.ln1.b"), &[d_model]);
        set.add_ones(&format!("{prefix}.ln2.g"), &[d_model]);
        set.add_zeros(&format!("{prefix}.ln2.b"), &[d_model]);
        let attn =
            MultiHeadAttention::register(set, &format!("{prefix}.attn"), d_model, n_heads, rpb, rng);
        let hidden = 4 * d_model;
        set.add_uniform(&format!("{prefix}.mlp.w1"), &[d_model, hidden], d_model, rng);
        set.add_zeros(&format!("{prefix}.mlp.b1"), &[hidden]);
        set.add_uniform(&format!("{prefix}.mlp.w2"), &[hidden, d_model], hidden, rng);
        set.add_zeros(&format!("{prefix}.mlp.b2"), &[d_model]);
        Self { prefix: prefix.to_string(), attn, activation }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        binding: &Binding,
        z: TensorId,
        rel_indices: Option<&[usize]>,
        probs_sink: Option<&mut Vec<Vec<f64>>>,
    ) -> TensorId {
        let p = |name: &str| format!("{}.{name}", self.prefix);
        let ln1g = set.id(binding, &p("ln1.g"));
        let ln1b = set.id(binding, &p("ln1.b"));
        let normed = g.layer_norm_rows(z, ln1g, ln1b, LAYER_NORM_EPS);
        let attended = self.attn.forward(g, set, binding, normed, rel_indices, probs_sink);
        let z_mid = g.add(attended, z);

        let ln2g = set.id(binding, &p("ln2.g"));
        let ln2b = set.id(binding, &p("ln2.b"));
        let normed2 = g.layer_norm_rows(z_mid, ln2g, ln2b, LAYER_NORM_EPS);
        let w1 = set.id(binding, &p("mlp.w1"));
        let b1 = set.id(binding, &p("mlp.b1"));
        let w2 = set.id(binding, &p("mlp.w2"));
        let b2 = set.id(binding, &p("mlp.b2"));
        let hidden = linear(g, normed2, w1, b1);
        let activated = self.activation.apply(g, hidden);
        let projected = linear(g, activated, w2, b2);
        g.add(projected, z_mid)
    }
}

/// Three 3x3 convolutions with Leaky ReLU, stride 2 in the second layer;
/// halves the spatial dimensions.
pub struct DownsampleBlock {
    prefix: String,
    pub c_in: usize,
    pub c_out: usize,
}

impl DownsampleBlock {
    pub fn register(
        set: &mut ParamSet,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan1 = c_in * 9;
        let fan = c_out * 9;
        set.add_uniform(&format!("{prefix}.c1.w"), &[c_out, c_in, 3, 3], fan1, rng);
        set.add_zeros(&format!("{prefix}.c1.b"), &[c_out]);
        set.add_uniform(&format!("{prefix}.c2.w"), &[c_out, c_out, 3, 3], fan, rng);
        set.add_zeros(&format!("{prefix}.c2.b"), &[c_out]);
        set.add_uniform(&format!("{prefix}.c3.w"), &[c_out, c_out, 3, 3], fan, rng);
        set.add_zeros(&format!("{prefix}.c3.b"), &[c_out]);
        Self { prefix: prefix.to_string(), c_in, c_out }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        binding: &Binding,
        x: TensorId,
    ) -> TensorId {
        let p = |name: &str| format!("{}.{name}", self.prefix);
        let conv = |g: &mut Graph, x, name: &str, stride| {
            let w = set.id(binding, &p(&format!("{name}.w")));
            let b = set.id(binding, &p(&format!("{name}.b")));
            let y = g.conv2d(x, w, Some(b), stride, 1);
            g.leaky_relu(y, LEAKY_SLOPE)
        };
        let a = conv(g, x, "c1", 1);
        let b = conv(g, a, "c2", 2);
        conv(g, b, "c3", 1)
    }
}

/// Log-probability of Bernoulli actions under push logits.
///
/// `actions` holds 1.0 for push, 0.0 for keep, one entry per logit.
pub fn bernoulli_log_prob(g: &mut Graph, logits: TensorId, actions: &[f64]) -> TensorId {
    let shape = g.shape(logits).to_vec();
    assert_eq!(shape.iter().product::<usize>(), actions.len());
    let a = g.constant(&shape, actions.to_vec());
    let one_minus_a = g.affine(a, -1.0, 1.0);
    let neg_logits = g.neg(logits);
    let sp_neg = g.softplus(neg_logits); // -log sigmoid(l)
    let sp_pos = g.softplus(logits); // -log sigmoid(-l)
    let push_term = g.mul(a, sp_neg);
    let keep_term = g.mul(one_minus_a, sp_pos);
    let total = g.add(push_term, keep_term);
    g.neg(total)
}

/// Entropy of the Bernoulli distribution defined by each logit.
pub fn bernoulli_entropy(g: &mut Graph, logits: TensorId) -> TensorId {
    let sig = g.sigmoid(logits);
    let one_minus = g.affine(sig, -1.0, 1.0);
    let neg_logits = g.neg(logits);
    let sp_neg = g.softplus(neg_logits);
    let sp_pos = g.softplus(logits);
    let a = g.mul(sig, sp_neg);
    let b = g.mul(one_minus, sp_pos);
    g.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_attention_returns_value() {
        let mut g = Graph::new();
        let q = g.constant(&[1, 4], vec![0.3, -2.0, 5.0, 0.1]);
        let k = g.constant(&[1, 4], vec![1.0, 1.0, 1.0, 1.0]);
        let v = g.constant(&[1, 4], vec![9.0, -3.0, 0.5, 2.0]);
        let out = attention(&mut g, q, k, v, None, true);
        assert_eq!(g.data(out), g.data(v));
    }

    #[test]
    fn zero_bias_matches_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let data: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = g.constant(&[3, 4], data.clone());
        let k = g.constant(&[3, 4], data.iter().map(|v| v * 0.5).collect());
        let v = g.constant(&[3, 4], data.iter().map(|v| v + 0.1).collect());
        let zero = g.constant(&[3, 3], vec![0.0; 9]);
        let with_bias = attention(&mut g, q, k, v, Some(zero), true);
        let plain = attention(&mut g, q, k, v, None, true);
        for (a, b) in g.data(with_bias).iter().zip(g.data(plain)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_token_attention_manual_oracle() {
        // Hand-computed 2x2 case with d = 2.
        let mut g = Graph::new();
        let q = g.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let k = g.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let v = g.constant(&[2, 2], vec![2.0, 0.0, 0.0, 4.0]);
        let out = attention(&mut g, q, k, v, None, true);
        // logits row 0: [1,0]/sqrt(2); p = softmax -> [e^s, 1]/(e^s+1), s=1/sqrt(2)
        let s = 1.0 / (2.0f64).sqrt();
        let p0 = s.exp() / (s.exp() + 1.0);
        let expect = [p0 * 2.0, (1.0 - p0) * 4.0, (1.0 - p0) * 2.0, p0 * 4.0];
        for (a, b) in g.data(out).iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let mk = |g: &mut Graph, rng: &mut ChaCha8Rng| {
            let data: Vec<f64> = (0..5 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
            g.constant(&[5, 3], data)
        };
        let q = mk(&mut g, &mut rng);
        let k = mk(&mut g, &mut rng);
        let v = mk(&mut g, &mut rng);
        let out = attention(&mut g, q, k, v, None, true);
        let vd = g.data(v);
        for col in 0..3 {
            let lo = (0..5).map(|r| vd[r * 3 + col]).fold(f64::INFINITY, f64::min);
            let hi = (0..5).map(|r| vd[r * 3 + col]).fold(f64::NEG_INFINITY, f64::max);
            for row in 0..5 {
                let o = g.data(out)[row * 3 + col];
                assert!(o >= lo - 1e-9 && o <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn zeroed_projections_make_block_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut set = ParamSet::new();
        let block =
            TransformerBlock::register(&mut set, "blk", 8, 2, MlpActivation::Gelu, None, &mut rng);
        // Zero the attention output projection and the MLP second linear.
        for name in ["blk.attn.wo", "blk.mlp.w2"] {
            let n = set.get(name).data.len();
            set.set_data(name, vec![0.0; n]);
        }
        let mut g = Graph::new();
        let binding = set.bind(&mut g, false);
        let zdata: Vec<f64> = (0..3 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = g.constant(&[3, 8], zdata.clone());
        let out = block.forward(&mut g, &set, &binding, z, None, None);
        assert_eq!(g.shape(out), &[3, 8]);
        for (a, b) in g.data(out).iter().zip(&zdata) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn downsample_halves_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut set = ParamSet::new();
        let block = DownsampleBlock::register(&mut set, "down", 3, 6, &mut rng);
        let mut g = Graph::new();
        let binding = set.bind(&mut g, false);
        let x = g.constant(&[1, 3, 64, 64], vec![0.1; 3 * 64 * 64]);
        let y = block.forward(&mut g, &set, &binding, x);
        assert_eq!(g.shape(y), &[1, 6, 32, 32]);
    }

    #[test]
    fn bernoulli_entropy_at_half_is_ln2() {
        let mut g = Graph::new();
        let logits = g.constant(&[2, 1], vec![0.0, 0.0]);
        let h = bernoulli_entropy(&mut g, logits);
        for v in g.data(h) {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn bernoulli_log_prob_matches_direct() {
        let mut g = Graph::new();
        let logits = g.constant(&[2, 1], vec![0.7, -1.3]);
        let lp = bernoulli_log_prob(&mut g, logits, &[1.0, 0.0]);
        let p0 = 1.0 / (1.0 + (-0.7f64).exp());
        let p1 = 1.0 / (1.0 + (1.3f64).exp());
        assert!((g.data(lp)[0] - p0.ln()).abs() < 1e-12);
        assert!((g.data(lp)[1] - (1.0 - p1).ln()).abs() < 1e-12);
    }
}
