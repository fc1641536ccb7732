//! Autoexposure simulation and synthetic episode generation.
//!
//! A first-order controller drives the exposure toward the value that puts
//! the frame's mean luminance at a setpoint; an illumination schedule with
//! random step changes produces the over/underexposure oscillations the
//! frame-selection policy learns to exploit.

mod scene;

pub use scene::{synthesize_scene, SceneParams};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::error::{Error, Result};
use crate::imaging::{percentile, saturation_mask, HdrFrame, LdrFrame, PixelFrame, SatMask};

/// First-order autoexposure controller.
#[derive(Debug, Clone, Copy)]
pub struct AutoExposureModel {
    /// Time constant in frames.
    pub tau: f64,
    /// Target mean luminance of the exposed frame, fraction of full scale.
    pub setpoint: f64,
    pub e_min: f64,
    pub e_max: f64,
}

impl Default for AutoExposureModel {
    fn default() -> Self {
        Self { tau: 4.0, setpoint: 0.4, e_min: 1.0 / 64.0, e_max: 64.0 }
    }
}

impl AutoExposureModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid("autoexposure tau must be > 0"));
        }
        if !(self.setpoint > 0.0 && self.setpoint < 1.0) {
            return Err(Error::invalid("autoexposure setpoint must lie in (0, 1)"));
        }
        if !(self.e_min > 0.0 && self.e_min < self.e_max) {
            return Err(Error::invalid("exposure bounds must satisfy 0 < e_min < e_max"));
        }
        Ok(())
    }

    /// Exposure that would put the frame mean at the setpoint, clamped to
    /// the bounds. A zero-luminance frame pins the target at `e_max`.
    pub fn target_exposure(&self, frame: &HdrFrame) -> f64 {
        let mean: f64 =
            frame.data().iter().map(|v| *v as f64).sum::<f64>() / frame.data().len() as f64;
        if mean <= 0.0 {
            return self.e_max;
        }
        (self.setpoint / mean).clamp(self.e_min, self.e_max)
    }

    /// One controller step: exponential approach to the target with rate
    /// `exp(-1/tau)` per frame.
    pub fn step_exposure(&self, e_prev: f64, frame: &HdrFrame) -> f64 {
        let target = self.target_exposure(frame);
        let decay = (-1.0 / self.tau).exp();
        (target + (e_prev - target) * decay).clamp(self.e_min, self.e_max)
    }
}

/// Illumination schedule parameters: piecewise-constant multipliers with
/// exponentially distributed gaps between change points.
#[derive(Debug, Clone, Copy)]
pub struct IllumParams {
    pub mean_gap: f64,
    pub mult_min: f64,
    pub mult_max: f64,
}

impl Default for IllumParams {
    fn default() -> Self {
        Self { mean_gap: 20.0, mult_min: 1.0 / 6.0, mult_max: 6.0 }
    }
}

/// Everything needed to rebuild one episode deterministically.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub length: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub illum: IllumParams,
    pub scene: SceneParams,
    /// Saturation threshold used for the per-frame masks.
    pub saturation_eps: f32,
    /// Ground truth is capped at this percentile of each frame's values,
    /// 100 disables the cap.
    pub gt_percentile: f64,
}

impl EpisodeSpec {
    pub fn new(seed: u64, length: usize, width: usize, height: usize) -> Self {
        Self {
            length,
            width,
            height,
            seed,
            illum: IllumParams::default(),
            scene: SceneParams::default(),
            saturation_eps: 1e-3,
            gt_percentile: 95.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 4 {
            return Err(Error::invalid("episode length must be >= 4"));
        }
        Ok(())
    }
}

/// One corrupted frame. Ground truth lives in the frame's own exposed
/// units, capped at the 95th percentile (never below 1), so that
/// `ldr = clamp(gt_uncapped, 0, 1)` holds exactly and hallucination errors
/// stay on a comparable scale across exposures.
#[derive(Debug, Clone)]
pub struct EpisodeFrame {
    pub ldr: LdrFrame,
    pub gt: HdrFrame,
    pub mask: SatMask,
    pub exposure: f64,
    pub illumination: f64,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub frames: Vec<EpisodeFrame>,
    pub seed: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].ldr.width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].ldr.height()
    }
}

/// Samples the piecewise-constant illumination multipliers for `length`
/// frames. Each change point redraws until the level moves by at least 2x
/// in either direction (bounded retries), so every change is a real
/// brightening or darkening event.
pub fn illumination_schedule(params: &IllumParams, length: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ln_lo = params.mult_min.ln();
    let ln_hi = params.mult_max.ln();
    let min_jump = (2.0f64).ln().min((ln_hi - ln_lo) / 2.0);
    let mut schedule = Vec::with_capacity(length);
    let mut current = 1.0f64;
    let mut next_change = sample_gap(params.mean_gap, rng);
    for t in 0..length {
        if t == next_change {
            let prev = current;
            for _ in 0..8 {
                let draw = (ln_lo + rng.random_range(0.0..1.0) * (ln_hi - ln_lo)).exp();
                current = draw;
                if (draw / prev).ln().abs() >= min_jump {
                    break;
                }
            }
            next_change = t + sample_gap(params.mean_gap, rng);
        }
        schedule.push(current);
    }
    schedule
}

fn sample_gap(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    (-mean * u.ln()).round().max(1.0) as usize
}

/// Applies the illumination schedule and the autoexposure controller to a
/// scene, producing the corrupted LDR stream plus ground truth.
pub fn corrupt_sequence(
    scene: &[HdrFrame],
    model: &AutoExposureModel,
    spec: &EpisodeSpec,
) -> Result<Episode> {
    model.validate()?;
    spec.validate()?;
    if scene.len() != spec.length {
        return Err(Error::invalid("scene length does not match episode spec"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let schedule = illumination_schedule(&spec.illum, spec.length, &mut rng);

    let mut frames = Vec::with_capacity(spec.length);
    let mut exposure = None;
    for (frame, illum) in scene.iter().zip(&schedule) {
        let lit = crate::imaging::apply_exposure(frame, *illum as f32)?;
        let e = match exposure {
            None => model.target_exposure(&lit),
            Some(prev) => model.step_exposure(prev, &lit),
        };
        exposure = Some(e);

        let exposed = crate::imaging::apply_exposure(&lit, e as f32)?;
        let ldr_data: Vec<f32> = exposed.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let ldr = LdrFrame::new(lit.width(), lit.height(), lit.channels(), ldr_data)?;
        let mask = saturation_mask(&ldr, spec.saturation_eps);

        let gt = if spec.gt_percentile >= 100.0 {
            exposed
        } else {
            // The cap never drops below LDR white, so unmasked pixels keep
            // gt == ldr exactly.
            let cap = percentile(exposed.data(), spec.gt_percentile)?.max(1.0);
            let data = exposed.data().iter().map(|v| v.min(cap)).collect();
            HdrFrame::new(lit.width(), lit.height(), lit.channels(), data)?
        };

        frames.push(EpisodeFrame { ldr, gt, mask, exposure: e, illumination: *illum });
    }
    Ok(Episode { frames, seed: spec.seed })
}

/// Scene synthesis plus corruption in one call.
pub fn synthesize_episode(spec: &EpisodeSpec, model: &AutoExposureModel) -> Result<Episode> {
    let scene = synthesize_scene(&spec.scene, spec.seed, spec.length, spec.width, spec.height);
    corrupt_sequence(&scene, model, spec)
}
