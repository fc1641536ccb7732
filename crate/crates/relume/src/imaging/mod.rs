//! Linear-domain HDR/LDR frames and the operations that connect them.
//!
//! All pixel data is stored interleaved (`RGBRGB...`), row-major, `f32`.
//! HDR values are linear radiance, non-negative and unbounded above; LDR
//! values live in `[0, 1]`.

mod metrics;
mod pfm;
mod pngio;

pub use metrics::{mse, psnr, ssim, PSNR_CAP_DB};
pub use pfm::{read_pfm, write_pfm};
pub use pngio::{read_ldr_png, read_mask_png, write_ldr_png, write_mask_png, PngDepth};

use crate::error::{Error, Result};

/// Linear-radiance frame, values finite and `>= 0`, unbounded above.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrFrame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Display-referred or normalized-linear frame, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdrFrame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Per-pixel overexposure mask; `true` marks an invalid (saturated) pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SatMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

/// Shared read access to frame geometry and raw samples.
pub trait PixelFrame {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn channels(&self) -> usize;
    fn data(&self) -> &[f32];

    fn same_dims(&self, other: &impl PixelFrame) -> bool {
        self.width() == other.width()
            && self.height() == other.height()
            && self.channels() == other.channels()
    }
}

macro_rules! impl_pixel_frame {
    ($ty:ty) => {
        impl PixelFrame for $ty {
            fn width(&self) -> usize {
                self.width
            }
            fn height(&self) -> usize {
                self.height
            }
            fn channels(&self) -> usize {
                self.channels
            }
            fn data(&self) -> &[f32] {
                &self.data
            }
        }
    };
}

impl_pixel_frame!(HdrFrame);
impl_pixel_frame!(LdrFrame);

impl HdrFrame {
    /// Validates that `data` holds `width * height * channels` finite,
    /// non-negative samples.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid("frame dimensions must be non-zero"));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "HDR data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::invalid("HDR values must be finite and >= 0"));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("constant frame is valid")
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

impl LdrFrame {
    /// Validates that every sample lies in `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid("frame dimensions must be non-zero"));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "LDR data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("LDR values must lie in [0, 1]"));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("constant frame is valid")
    }

    pub fn black(width: usize, height: usize, channels: usize) -> Self {
        Self::constant(width, height, channels, 0.0)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Per-pixel mean over channels, used as the luminance proxy.
    pub fn luminance(&self) -> Vec<f32> {
        luminance_of(self)
    }
}

impl SatMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "mask length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn all_false(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Number of masked pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|m| **m).count()
    }

    /// Masked fraction of the frame, in `[0, 1]`.
    pub fn area(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn matches(&self, frame: &impl PixelFrame) -> bool {
        self.width == frame.width() && self.height == frame.height()
    }
}

fn luminance_of(frame: &impl PixelFrame) -> Vec<f32> {
    let c = frame.channels();
    frame
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().sum::<f32>() / c as f32)
        .collect()
}

/// Clipping parameters for the LDR/ground-truth pair generation.
#[derive(Debug, Clone, Copy)]
pub struct ClipParams {
    /// Percentile of the pooled pixel values that maps to LDR white (default 85).
    pub ldr_percentile: f64,
    /// Percentile that caps the ground truth (default 95).
    pub gt_percentile: f64,
    /// A pixel is saturated when any channel reaches `1 - saturation_eps`.
    pub saturation_eps: f32,
}

impl Default for ClipParams {
    fn default() -> Self {
        Self { ldr_percentile: 85.0, gt_percentile: 95.0, saturation_eps: 1e-3 }
    }
}

impl ClipParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ldr_percentile > 0.0
            && self.ldr_percentile <= self.gt_percentile
            && self.gt_percentile <= 100.0)
        {
            return Err(Error::invalid(
                "clip percentiles must satisfy 0 < ldr <= gt <= 100",
            ));
        }
        if !(self.saturation_eps > 0.0 && self.saturation_eps < 1.0) {
            return Err(Error::invalid("saturation_eps must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Applies the camera response inverse `y' = y^gamma` channel-wise.
pub fn linearize(img: &LdrFrame, gamma: f32) -> Result<LdrFrame> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::invalid("gamma must be finite and > 0"));
    }
    let data = img.data.iter().map(|v| v.powf(gamma)).collect();
    LdrFrame::new(img.width, img.height, img.channels, data)
}

/// Inverse of [`linearize`]: `y' = y^(1/gamma)`.
pub fn delinearize(img: &LdrFrame, gamma: f32) -> Result<LdrFrame> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::invalid("gamma must be finite and > 0"));
    }
    let inv = 1.0 / gamma;
    let data = img.data.iter().map(|v| v.powf(inv)).collect();
    LdrFrame::new(img.width, img.height, img.channels, data)
}

/// Multiplies every sample by the exposure factor `e > 0`.
///
/// In the linear domain an exposure change is exactly this multiplication.
pub fn apply_exposure(img: &HdrFrame, e: f32) -> Result<HdrFrame> {
    if !e.is_finite() || e <= 0.0 {
        return Err(Error::invalid("exposure factor must be finite and > 0"));
    }
    let data = img.data.iter().map(|v| v * e).collect();
    HdrFrame::new(img.width, img.height, img.channels, data)
}

/// Nearest-rank percentile: for sorted values `v[1..=n]` returns
/// `v[ceil(p * n / 100)]`.
pub fn percentile(values: &[f32], p: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty collection"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::invalid("percentile rank must lie in (0, 100]"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("percentile input must be finite"));
    }
    let n = values.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    let mut buf = values.to_vec();
    let (_, nth, _) = buf.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    Ok(*nth)
}

/// Output of [`make_ldr_pair`].
#[derive(Debug, Clone)]
pub struct LdrPair {
    pub cur: LdrFrame,
    pub reference: LdrFrame,
    pub mask: SatMask,
    /// Ground truth normalized by the same divisor as the LDR pair, so its
    /// values exceed 1 exactly where the input was clipped.
    pub gt: HdrFrame,
}

/// Clips an HDR pair into its LDR inputs, saturation mask and ground truth.
///
/// Both frames are divided by the `ldr_percentile` of their pooled samples
/// and clamped to `[0, 1]`; the ground truth is the current frame capped at
/// the `gt_percentile` of the same pool, divided by the same normalizer.
pub fn make_ldr_pair(cur: &HdrFrame, reference: &HdrFrame, params: &ClipParams) -> Result<LdrPair> {
    params.validate()?;
    if !cur.same_dims(reference) {
        return Err(Error::invalid("make_ldr_pair: dimension mismatch"));
    }
    let mut pool = Vec::with_capacity(cur.data.len() + reference.data.len());
    pool.extend_from_slice(&cur.data);
    pool.extend_from_slice(&reference.data);
    let ldr_clip = percentile(&pool, params.ldr_percentile)?;
    let gt_clip = percentile(&pool, params.gt_percentile)?;
    if ldr_clip <= 0.0 {
        return Err(Error::invalid(
            "make_ldr_pair: degenerate pool (LDR clip level is zero)",
        ));
    }

    let to_ldr = |frame: &HdrFrame| -> Vec<f32> {
        frame.data.iter().map(|v| v.min(ldr_clip) / ldr_clip).collect()
    };
    let cur_ldr = LdrFrame::new(cur.width, cur.height, cur.channels, to_ldr(cur))?;
    let ref_ldr = LdrFrame::new(cur.width, cur.height, cur.channels, to_ldr(reference))?;
    let gt_data = cur.data.iter().map(|v| v.min(gt_clip) / ldr_clip).collect();
    let gt = HdrFrame::new(cur.width, cur.height, cur.channels, gt_data)?;
    let mask = saturation_mask(&cur_ldr, params.saturation_eps);
    Ok(LdrPair { cur: cur_ldr, reference: ref_ldr, mask, gt })
}

/// Marks pixels whose maximum channel reaches `1 - eps`.
pub fn saturation_mask(frame: &LdrFrame, eps: f32) -> SatMask {
    let threshold = 1.0 - eps;
    let data = frame
        .data
        .chunks_exact(frame.channels)
        .map(|px| px.iter().any(|v| *v >= threshold))
        .collect();
    SatMask { width: frame.width, height: frame.height, data }
}

/// Keeps valid LDR pixels and substitutes the hallucination inside the mask.
pub fn composite_output(ldr: &LdrFrame, halluc: &HdrFrame, mask: &SatMask) -> Result<HdrFrame> {
    if !ldr.same_dims(halluc) || !mask.matches(ldr) {
        return Err(Error::invalid("composite_output: dimension mismatch"));
    }
    let c = ldr.channels;
    let mut data = Vec::with_capacity(ldr.data.len());
    for (i, masked) in mask.data.iter().enumerate() {
        for k in 0..c {
            let j = i * c + k;
            data.push(if *masked { halluc.data[j].max(0.0) } else { ldr.data[j] });
        }
    }
    HdrFrame::new(ldr.width, ldr.height, c, data)
}

/// Linear crossfade between the outputs generated with the new and the old
/// reference frame, used to hide reference switches.
///
/// `alpha = min(t_since_switch / ramp, 1)` weights the new-reference output.
pub fn blend_on_switch(
    out_new_ref: &HdrFrame,
    out_old_ref: &HdrFrame,
    t_since_switch: usize,
    ramp: usize,
) -> Result<HdrFrame> {
    if ramp == 0 {
        return Err(Error::invalid("blend_on_switch: ramp must be >= 1"));
    }
    if !out_new_ref.same_dims(out_old_ref) {
        return Err(Error::invalid("blend_on_switch: dimension mismatch"));
    }
    let alpha = (t_since_switch as f32 / ramp as f32).min(1.0);
    let data = out_new_ref
        .data
        .iter()
        .zip(&out_old_ref.data)
        .map(|(n, o)| alpha * n + (1.0 - alpha) * o)
        .collect();
    HdrFrame::new(out_new_ref.width, out_new_ref.height, out_new_ref.channels, data)
}

/// One EMA step toward `target`: `prev + beta * (target - prev)`.
pub fn smooth_tonemap_param(prev: f64, target: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid("smoothing beta must lie in (0, 1]"));
    }
    Ok(prev + beta * (target - prev))
}
