//! Network assembly: per-frame multiscale embeddings, token concatenation
//! of current and reference frame, a stack of pre-norm transformer blocks,
//! summed fold, bilinear upsampling and convolutional refinement.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{HdrFrame, LdrFrame, PixelFrame, SatMask};
use crate::nn::{
    Binding, DownsampleBlock, Graph, MlpActivation, ParamSet, Record, TensorId, TransformerBlock,
};
use crate::nn::{RpbSpec, LEAKY_SLOPE};
use crate::patches::PatchGrid;

/// Which reconstruction terms the training loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Mask-only: the L1 term over the corrupted area alone.
    Mol,
    /// Masked plus unmasked L1 terms.
    Full,
}

impl LossMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mol" => Some(Self::Mol),
            "full" => Some(Self::Full),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mol => "mol",
            Self::Full => "full",
        }
    }
}

/// Architecture and loss configuration of the hallucination network.
#[derive(Debug, Clone)]
pub struct HallucConfig {
    pub n_blocks: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    /// 1 (single scale) or 3 (multiscale embeddings).
    pub n_scales: usize,
    /// Feature channels produced by each embedding scale.
    pub embed_channels: usize,
    pub n_heads: usize,
    pub refine_channels: usize,
    pub use_rpb: bool,
    /// Eq-verbatim scaling: the relative bias shares the 1/sqrt(d) factor.
    pub rpb_inside_scale: bool,
    pub max_rel_offset: usize,
    /// Side length of the absolute-position table (used when RPB is off).
    pub max_grid: usize,
    pub mlp_activation: MlpActivation,
    pub lambda_rec: f64,
    pub lambda_adv: f64,
    pub loss_mode: LossMode,
}

impl Default for HallucConfig {
    fn default() -> Self {
        Self {
            n_blocks: 8,
            patch_h: 7,
            patch_w: 7,
            stride_h: 3,
            stride_w: 3,
            n_scales: 3,
            embed_channels: 4,
            n_heads: 4,
            refine_channels: 16,
            use_rpb: false,
            rpb_inside_scale: true,
            max_rel_offset: 8,
            max_grid: 32,
            mlp_activation: MlpActivation::Gelu,
            lambda_rec: 1.0,
            lambda_adv: 0.01,
            loss_mode: LossMode::Mol,
        }
    }
}

impl HallucConfig {
    /// Token width: concatenated feature channels times the patch area.
    pub fn d_model(&self) -> usize {
        self.embed_channels * self.n_scales * self.patch_h * self.patch_w
    }

    pub fn feature_channels(&self) -> usize {
        self.embed_channels * self.n_scales
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks < 1 {
            return Err(Error::Config("halluc: n_blocks must be >= 1".into()));
        }
        if self.n_scales != 1 && self.n_scales != 3 {
            return Err(Error::Config("halluc: n_scales must be 1 or 3".into()));
        }
        if self.stride_h == 0
            || self.stride_w == 0
            || self.stride_h > self.patch_h
            || self.stride_w > self.patch_w
        {
            return Err(Error::Config("halluc: stride must satisfy 1 <= stride <= patch".into()));
        }
        if self.d_model() % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "halluc: d_model {} not divisible by n_heads {}",
                self.d_model(),
                self.n_heads
            )));
        }
        Ok(())
    }
}

/// Attention probabilities captured during one forward pass, one matrix per
/// (block, head), each over the 2N-token sequence.
pub struct AttentionTrace {
    /// Tokens belonging to the current frame (the first rows/columns).
    pub n_cur: usize,
    pub n_total: usize,
    pub probs: Vec<Vec<f64>>,
}

pub struct HallucNet {
    pub config: HallucConfig,
    pub params: ParamSet,
    embed: DownsampleBlock,
    down: Vec<DownsampleBlock>,
    blocks: Vec<TransformerBlock>,
}

impl HallucNet {
    pub fn new(config: HallucConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let embed =
            DownsampleBlock::register(&mut params, "embed", 3, config.embed_channels, &mut rng);
        let mut down = Vec::new();
        if config.n_scales == 3 {
            for i in 0..2 {
                down.push(DownsampleBlock::register(
                    &mut params,
                    &format!("down{}", i + 1),
                    config.embed_channels,
                    config.embed_channels,
                    &mut rng,
                ));
            }
        }

        let d_model = config.d_model();
        // Tokens from the two frames are only distinguishable through this
        // learned pair of embeddings.
        params.add_table("frame.emb", &[2, d_model], &mut rng);
        if !config.use_rpb {
            params.add_table("pos.table", &[config.max_grid * config.max_grid, d_model], &mut rng);
        }
        let rpb = config.use_rpb.then_some(RpbSpec {
            max_offset: config.max_rel_offset,
            inside_scale: config.rpb_inside_scale,
        });
        let blocks = (0..config.n_blocks)
            .map(|i| {
                TransformerBlock::register(
                    &mut params,
                    &format!("blk{i}"),
                    d_model,
                    config.n_heads,
                    config.mlp_activation,
                    rpb,
                    &mut rng,
                )
            })
            .collect();

        let c_feat = config.feature_channels();
        let rc = config.refine_channels;
        params.add_uniform("refine.c1.w", &[rc, c_feat, 3, 3], c_feat * 9, &mut rng);
        params.add_zeros("refine.c1.b", &[rc]);
        params.add_uniform("refine.c2.w", &[rc, rc, 3, 3], rc * 9, &mut rng);
        params.add_zeros("refine.c2.b", &[rc]);
        params.add_uniform("refine.out.w", &[3, rc, 3, 3], rc * 9, &mut rng);
        params.add_zeros("refine.out.b", &[3]);

        Ok(Self { config, params, embed, down, blocks })
    }

    /// Per-frame feature extraction: embedding block (which halves the
    /// resolution), optional further downsampling, resize back and channel
    /// concat. Returns `[c_feat, h2, w2]`.
    fn features(
        &self,
        g: &mut Graph,
        binding: &Binding,
        frame: &LdrFrame,
    ) -> TensorId {
        let (w, h) = (frame.width(), frame.height());
        let data: Vec<f64> = to_chw_f64(frame);
        let x = g.constant(&[1, 3, h, w], data);
        let e0 = self.embed.forward(g, &self.params, binding, x);
        let (h2, w2) = (g.shape(e0)[2], g.shape(e0)[3]);
        let c = self.config.embed_channels;
        let e0 = g.reshape(e0, &[c, h2, w2]);
        if self.config.n_scales == 1 {
            return e0;
        }
        let e0b = g.reshape(e0, &[1, c, h2, w2]);
        let e1 = self.down[0].forward(g, &self.params, binding, e0b);
        let (h4, w4) = (g.shape(e1)[2], g.shape(e1)[3]);
        let e1 = g.reshape(e1, &[c, h4, w4]);
        let e1b = g.reshape(e1, &[1, c, h4, w4]);
        let e2 = self.down[1].forward(g, &self.params, binding, e1b);
        let (h8, w8) = (g.shape(e2)[2], g.shape(e2)[3]);
        let e2 = g.reshape(e2, &[c, h8, w8]);

        let e1r = g.resample_bilinear(e1, h2, w2);
        let e2r = g.resample_bilinear(e2, h2, w2);
        // Channel concat via the row axis of [c, h*w] views.
        let a = g.reshape(e0, &[c, h2 * w2]);
        let b = g.reshape(e1r, &[c, h2 * w2]);
        let cc = g.reshape(e2r, &[c, h2 * w2]);
        let ab = g.concat_rows(a, b);
        let abc = g.concat_rows(ab, cc);
        g.reshape(abc, &[3 * c, h2, w2])
    }

    /// Builds the full forward graph. Returns the `[3, h, w]` prediction
    /// node, the parameter binding, and optionally the attention trace.
    pub fn forward_tensor(
        &self,
        g: &mut Graph,
        cur: &LdrFrame,
        reference: &LdrFrame,
        trainable: bool,
        record_attention: bool,
    ) -> Result<(TensorId, Binding, Option<AttentionTrace>)> {
        if !cur.same_dims(reference) {
            return Err(Error::invalid("hallucinator inputs must share dimensions"));
        }
        if cur.channels() != 3 {
            return Err(Error::invalid("hallucinator expects 3-channel frames"));
        }
        let binding = self.params.bind(g, trainable);
        let (h, w) = (cur.height(), cur.width());

        let feat_cur = self.features(g, &binding, cur);
        let feat_ref = self.features(g, &binding, reference);
        let (c_feat, h2, w2) = {
            let s = g.shape(feat_cur);
            (s[0], s[1], s[2])
        };

        let grid = PatchGrid::build(
            h2,
            w2,
            self.config.patch_h.min(h2),
            self.config.patch_w.min(w2),
            self.config.stride_h.min(self.config.patch_h.min(h2)),
            self.config.stride_w.min(self.config.patch_w.min(w2)),
        )?;
        let d_model = c_feat * grid.patch_h * grid.patch_w;
        if grid.patch_h != self.config.patch_h || grid.patch_w != self.config.patch_w {
            return Err(Error::invalid(format!(
                "input {w}x{h} too small for the configured patch grid",
            )));
        }
        debug_assert_eq!(d_model, self.config.d_model());

        let tok_cur = g.unfold(feat_cur, &grid);
        let tok_ref = g.unfold(feat_ref, &grid);
        let n = grid.n_patches();
        let mut z = g.concat_rows(tok_cur, tok_ref);

        // Frame-membership embedding.
        let frame_table = self.params.id(&binding, "frame.emb");
        let mut frame_idx = vec![0usize; n];
        frame_idx.extend(std::iter::repeat_n(1usize, n));
        let femb = g.gather_rows(frame_table, &frame_idx);
        z = g.add(z, femb);

        let rel_indices = if self.config.use_rpb {
            let spec = RpbSpec {
                max_offset: self.config.max_rel_offset,
                inside_scale: self.config.rpb_inside_scale,
            };
            Some(relative_indices(&grid, n, &spec))
        } else {
            // Absolute position table, clamped to the trained grid extent.
            let table = self.params.id(&binding, "pos.table");
            let side = self.config.max_grid;
            let mut idx = Vec::with_capacity(2 * n);
            for half in 0..2 {
                let _ = half;
                for k in 0..n {
                    let (r, c) = grid.position(k);
                    idx.push(r.min(side - 1) * side + c.min(side - 1));
                }
            }
            let pos = g.gather_rows(table, &idx);
            z = g.add(z, pos);
            None
        };

        let mut trace = record_attention.then(|| AttentionTrace {
            n_cur: n,
            n_total: 2 * n,
            probs: Vec::new(),
        });
        for block in &self.blocks {
            let sink = trace.as_mut().map(|t| &mut t.probs);
            z = block.forward(g, &self.params, &binding, z, rel_indices.as_deref(), sink);
        }

        let cur_tokens = g.slice_rows(z, 0, n);
        let folded = g.fold(cur_tokens, &grid, c_feat);
        let up = g.resample_bilinear(folded, h, w);
        let up = g.reshape(up, &[1, c_feat, h, w]);

        let conv = |g: &mut Graph, x, name: &str, act: bool| {
            let wname = format!("refine.{name}.w");
            let bname = format!("refine.{name}.b");
            let wid = self.params.id(&binding, &wname);
            let bid = self.params.id(&binding, &bname);
            let y = g.conv2d(x, wid, Some(bid), 1, 1);
            if act {
                g.leaky_relu(y, LEAKY_SLOPE)
            } else {
                y
            }
        };
        let r1 = conv(g, up, "c1", true);
        let r2 = conv(g, r1, "c2", true);
        let out = conv(g, r2, "out", false);
        let out = g.reshape(out, &[3, h, w]);
        Ok((out, binding, trace))
    }

    /// Inference entry point: runs the graph and clamps the unbounded
    /// output at zero to form a valid radiance frame.
    pub fn hallucinate_frame(&self, cur: &LdrFrame, reference: &LdrFrame) -> Result<HdrFrame> {
        let mut g = Graph::new();
        let (out, _, _) = self.forward_tensor(&mut g, cur, reference, false, false)?;
        tensor_to_hdr(&g, out, cur.width(), cur.height())
    }

    pub fn to_records(&self) -> Vec<Record> {
        self.params.to_records()
    }

    pub fn load_records(&mut self, records: &[Record]) -> Result<()> {
        self.params.load_records(records)
    }
}

impl super::Hallucinator for HallucNet {
    fn hallucinate(
        &self,
        cur: &LdrFrame,
        reference: &LdrFrame,
        _mask: &SatMask,
    ) -> Result<HdrFrame> {
        self.hallucinate_frame(cur, reference)
    }
}

/// RPB lookup indices for the 2N-token sequence; offsets are grid-relative
/// and frame-agnostic.
fn relative_indices(grid: &PatchGrid, n: usize, spec: &RpbSpec) -> Vec<usize> {
    let total = 2 * n;
    let mut out = Vec::with_capacity(total * total);
    let pos = |i: usize| {
        let (r, c) = grid.position(i % n);
        (r as isize, c as isize)
    };
    for i in 0..total {
        let (ri, ci) = pos(i);
        for j in 0..total {
            let (rj, cj) = pos(j);
            out.push(spec.index(ri - rj, ci - cj));
        }
    }
    out
}

/// CHW-ordered f64 copy of an interleaved frame.
pub(crate) fn to_chw_f64(frame: &impl PixelFrame) -> Vec<f64> {
    let (w, h, ch) = (frame.width(), frame.height(), frame.channels());
    let data = frame.data();
    let mut out = vec![0f64; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out[c * h * w + y * w + x] = data[(y * w + x) * ch + c] as f64;
            }
        }
    }
    out
}

/// Interleaved HDR frame from a `[3, h, w]` graph node, clamped at zero.
pub(crate) fn tensor_to_hdr(g: &Graph, id: TensorId, w: usize, h: usize) -> Result<HdrFrame> {
    let chw = g.data(id);
    let mut data = vec![0f32; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(y * w + x) * 3 + c] = (chw[c * h * w + y * w + x].max(0.0)) as f32;
            }
        }
    }
    HdrFrame::new(w, h, 3, data)
}

/// Patchwise convolutional discriminator: four strided convolutions with
/// Leaky ReLU between them, ending in a 1-channel logit map.
pub struct Discriminator {
    pub params: ParamSet,
    channels: Vec<usize>,
}

impl Discriminator {
    pub fn new(seed: u64) -> Self {
        Self::with_channels(&[8, 16, 32], seed)
    }

    /// `hidden` lists the channel widths of the first three strided convs;
    /// the fourth strided conv maps to the single logit channel.
    pub fn with_channels(hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut channels = vec![3];
        channels.extend_from_slice(hidden);
        channels.push(1);
        for i in 0..channels.len() - 1 {
            let (cin, cout) = (channels[i], channels[i + 1]);
            params.add_uniform(&format!("d.c{i}.w"), &[cout, cin, 3, 3], cin * 9, &mut rng);
            params.add_zeros(&format!("d.c{i}.b"), &[cout]);
        }
        Self { params, channels }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        self.params.bind(g, trainable)
    }

    /// `x: [3, h, w]` -> flat logit column `[n, 1]`.
    pub fn forward(&self, g: &mut Graph, binding: &Binding, x: TensorId) -> TensorId {
        let s = g.shape(x).to_vec();
        assert_eq!(s.len(), 3, "discriminator expects [3, h, w]");
        let mut cur = g.reshape(x, &[1, s[0], s[1], s[2]]);
        let n_layers = self.channels.len() - 1;
        for i in 0..n_layers {
            let w = self.params.id(binding, &format!("d.c{i}.w"));
            let b = self.params.id(binding, &format!("d.c{i}.b"));
            cur = g.conv2d(cur, w, Some(b), 2, 1);
            if i + 1 < n_layers {
                cur = g.leaky_relu(cur, LEAKY_SLOPE);
            }
        }
        let os = g.shape(cur).to_vec();
        g.reshape(cur, &[os[2] * os[3], 1])
    }
}

/// Fraction of attention probability mass that lands on reference-frame
/// tokens, averaged over blocks, heads and query rows.
pub fn attention_balance(net: &HallucNet, cur: &LdrFrame, reference: &LdrFrame) -> Result<f64> {
    let mut g = Graph::new();
    let (_, _, trace) = net.forward_tensor(&mut g, cur, reference, false, true)?;
    let trace = trace.expect("attention trace requested");
    let n_total = trace.n_total;
    let n_cur = trace.n_cur;
    let mut total_mass = 0.0;
    let mut rows = 0usize;
    for probs in &trace.probs {
        debug_assert_eq!(probs.len(), n_total * n_total);
        for r in 0..n_total {
            let row = &probs[r * n_total..(r + 1) * n_total];
            total_mass += row[n_cur..].iter().sum::<f64>();
            rows += 1;
        }
    }
    Ok(total_mass / rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn toy_config() -> HallucConfig {
        HallucConfig {
            n_blocks: 2,
            patch_h: 4,
            patch_w: 4,
            stride_h: 2,
            stride_w: 2,
            n_scales: 1,
            embed_channels: 2,
            n_heads: 4,
            refine_channels: 6,
            ..HallucConfig::default()
        }
    }

    fn random_ldr(rng: &mut ChaCha8Rng, w: usize, h: usize) -> LdrFrame {
        let data = (0..w * h * 3).map(|_| rng.random_range(0.0..=1.0)).collect();
        LdrFrame::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn output_shape_matches_input_shape() {
        let net = HallucNet::new(toy_config(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for size in [48usize, 96] {
            let cur = random_ldr(&mut rng, size, size);
            let reference = random_ldr(&mut rng, size, size);
            let out = net.hallucinate_frame(&cur, &reference).unwrap();
            assert_eq!(out.width(), size);
            assert_eq!(out.height(), size);
            assert!(out.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn multiscale_triples_token_width_but_not_output_shape() {
        let single = HallucNet::new(toy_config(), 3).unwrap();
        let multi = HallucNet::new(HallucConfig { n_scales: 3, ..toy_config() }, 3).unwrap();
        assert_eq!(multi.config.d_model(), 3 * single.config.d_model());
        assert!(multi.params.n_scalars() > single.params.n_scalars());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cur = random_ldr(&mut rng, 24, 24);
        let reference = random_ldr(&mut rng, 24, 24);
        let a = single.hallucinate_frame(&cur, &reference).unwrap();
        let b = multi.hallucinate_frame(&cur, &reference).unwrap();
        assert!(a.same_dims(&b));
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let net = HallucNet::new(toy_config(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cur = random_ldr(&mut rng, 16, 16);
        let reference = random_ldr(&mut rng, 16, 16);
        let mut g = Graph::new();
        let (out, binding, _) = net.forward_tensor(&mut g, &cur, &reference, true, false).unwrap();
        // A weighted sum so that symmetric cancellations cannot zero the
        // gradient by accident.
        let weights: Vec<f64> =
            (0..g.data(out).len()).map(|_| rng.random_range(0.5..1.5)).collect();
        let wshape = g.shape(out).to_vec();
        let w = g.constant(&wshape, weights);
        let prod = g.mul(out, w);
        let loss = g.sum_all(prod);
        g.backward(loss);
        let grads = net.params.grads(&g, &binding);
        for (param, grad) in net.params.entries().iter().zip(&grads) {
            let nonzero = grad.iter().any(|v| *v != 0.0);
            assert!(nonzero, "parameter {} received no gradient", param.name);
        }
    }

    #[test]
    fn rpb_variant_runs_and_differs_from_abs_pos() {
        let cfg_rpb = HallucConfig { use_rpb: true, ..toy_config() };
        let net = HallucNet::new(cfg_rpb, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cur = random_ldr(&mut rng, 16, 16);
        let reference = random_ldr(&mut rng, 16, 16);
        let out = net.hallucinate_frame(&cur, &reference).unwrap();
        assert_eq!(out.width(), 16);
    }

    #[test]
    fn uniform_attention_balance_is_reference_fraction() {
        // With a fresh network the attention is near-uniform only by
        // accident, so instead check the hard bounds and the exact value on
        // a constructed trace.
        let trace = AttentionTrace {
            n_cur: 3,
            n_total: 6,
            probs: vec![vec![1.0 / 6.0; 36]],
        };
        let mut mass = 0.0;
        for r in 0..6 {
            mass += trace.probs[0][r * 6 + 3..(r + 1) * 6].iter().sum::<f64>();
        }
        let balance = mass / 6.0;
        assert!((balance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn attention_balance_in_unit_interval() {
        let net = HallucNet::new(toy_config(), 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cur = random_ldr(&mut rng, 16, 16);
        let reference = random_ldr(&mut rng, 16, 16);
        let b = attention_balance(&net, &cur, &reference).unwrap();
        assert!((0.0..=1.0).contains(&b), "balance {b}");
    }

    #[test]
    fn discriminator_outputs_finite_logits() {
        let disc = Discriminator::new(9);
        let mut g = Graph::new();
        let binding = disc.bind(&mut g, false);
        let x = g.constant(&[3, 24, 24], vec![0.5; 3 * 24 * 24]);
        let logits = disc.forward(&mut g, &binding, x);
        assert_eq!(g.shape(logits)[1], 1);
        assert!(g.data(logits).iter().all(|v| v.is_finite()));
    }
}
