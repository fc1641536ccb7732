//! Procedural HDR scene synthesis: multi-octave value-noise background, a
//! bright emitter well above any clip level, a smooth camera pan and an
//! optional moving occluder. Deterministic in the seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::imaging::HdrFrame;

/// Knobs for the synthetic scenes. Radiance spans at least two decades
/// between `background_lo` and the emitter.
#[derive(Debug, Clone, Copy)]
pub struct SceneParams {
    pub background_lo: f32,
    pub background_hi: f32,
    pub emitter_lo: f32,
    pub emitter_hi: f32,
    /// Emitter radius as a fraction of the frame diagonal.
    pub emitter_radius_frac: (f32, f32),
    /// Pan amplitude bounds in pixels (per axis).
    pub pan_amplitude: (f32, f32),
    /// Pan period bounds in frames.
    pub pan_period: (f32, f32),
    pub occluder_probability: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            background_lo: 0.02,
            background_hi: 1.5,
            emitter_lo: 10.0,
            emitter_hi: 25.0,
            emitter_radius_frac: (0.05, 0.10),
            pan_amplitude: (3.0, 8.0),
            pan_period: (40.0, 160.0),
            occluder_probability: 0.7,
        }
    }
}

const PAN_MARGIN: usize = 32;

struct ValueNoise {
    cell: f32,
    grid_w: usize,
    values: Vec<f32>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, world_w: usize, world_h: usize, cell: f32) -> Self {
        let grid_w = (world_w as f32 / cell).ceil() as usize + 2;
        let grid_h = (world_h as f32 / cell).ceil() as usize + 2;
        let values = (0..grid_w * grid_h).map(|_| rng.random_range(0.0..1.0)).collect();
        Self { cell, grid_w, values }
    }

    fn sample(&self, x: f32, y: f32) -> f32 {
        let gx = x / self.cell;
        let gy = y / self.cell;
        let x0 = gx.floor() as usize;
        let y0 = gy.floor() as usize;
        let fx = gx - x0 as f32;
        let fy = gy - y0 as f32;
        let at = |xx: usize, yy: usize| self.values[yy * self.grid_w + xx];
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
        let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

struct Occluder {
    w: f32,
    h: f32,
    pos: (f32, f32),
    vel: (f32, f32),
    radiance: [f32; 3],
}

/// Deterministic-in-seed HDR sequence with panning camera.
pub fn synthesize_scene(
    params: &SceneParams,
    seed: u64,
    length: usize,
    width: usize,
    height: usize,
) -> Vec<HdrFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world_w = width + 2 * PAN_MARGIN;
    let world_h = height + 2 * PAN_MARGIN;

    // Background: three octaves of value noise mapped onto a log radiance
    // range, with a per-channel tint field.
    let coarse = ValueNoise::new(&mut rng, world_w, world_h, 24.0);
    let medium = ValueNoise::new(&mut rng, world_w, world_h, 9.0);
    let fine = ValueNoise::new(&mut rng, world_w, world_h, 3.0);
    let tint = [
        ValueNoise::new(&mut rng, world_w, world_h, 31.0),
        ValueNoise::new(&mut rng, world_w, world_h, 29.0),
        ValueNoise::new(&mut rng, world_w, world_h, 27.0),
    ];
    let ln_lo = params.background_lo.ln();
    let ln_hi = params.background_hi.ln();

    // Emitter disk, placed inside the central part of the camera window so
    // the pan keeps it in view.
    let diag = ((width * width + height * height) as f32).sqrt();
    let emitter_r = diag * rng.random_range(params.emitter_radius_frac.0..params.emitter_radius_frac.1);
    let emitter_x = PAN_MARGIN as f32 + width as f32 * rng.random_range(0.3..0.7);
    let emitter_y = PAN_MARGIN as f32 + height as f32 * rng.random_range(0.3..0.7);
    let emitter_base = rng.random_range(params.emitter_lo..params.emitter_hi);
    let emitter_rgb = [
        emitter_base * rng.random_range(0.85..1.0),
        emitter_base * rng.random_range(0.85..1.0),
        emitter_base * rng.random_range(0.7..1.0),
    ];

    let mut world = vec![0f32; world_w * world_h * 3];
    for y in 0..world_h {
        for x in 0..world_w {
            let xf = x as f32;
            let yf = y as f32;
            let n = 0.55 * coarse.sample(xf, yf) + 0.3 * medium.sample(xf, yf)
                + 0.15 * fine.sample(xf, yf);
            let base = (ln_lo + n * (ln_hi - ln_lo)).exp();
            let d = ((xf - emitter_x).powi(2) + (yf - emitter_y).powi(2)).sqrt();
            for c in 0..3 {
                let mult = 0.6 + 0.8 * tint[c].sample(xf, yf);
                let mut v = base * mult;
                if d < emitter_r {
                    // 2px linear feather at the rim.
                    let blend = ((emitter_r - d) / 2.0).clamp(0.0, 1.0);
                    v = v * (1.0 - blend) + emitter_rgb[c] * blend;
                }
                world[(y * world_w + x) * 3 + c] = v;
            }
        }
    }

    // Smooth pan: per-axis sinusoids with independent phases.
    let amp_x = rng.random_range(params.pan_amplitude.0..params.pan_amplitude.1);
    let amp_y = rng.random_range(params.pan_amplitude.0..params.pan_amplitude.1);
    let period_x = rng.random_range(params.pan_period.0..params.pan_period.1);
    let period_y = rng.random_range(params.pan_period.0..params.pan_period.1);
    let phase_x = rng.random_range(0.0..std::f32::consts::TAU);
    let phase_y = rng.random_range(0.0..std::f32::consts::TAU);

    let occluder = if rng.random_bool(params.occluder_probability) {
        let w = rng.random_range(width as f32 * 0.15..width as f32 * 0.35);
        let h = rng.random_range(height as f32 * 0.15..height as f32 * 0.35);
        Some(Occluder {
            w,
            h,
            pos: (
                rng.random_range(0.0..(world_w as f32 - w)),
                rng.random_range(0.0..(world_h as f32 - h)),
            ),
            vel: (rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)),
            radiance: [
                rng.random_range(0.03..0.1),
                rng.random_range(0.03..0.1),
                rng.random_range(0.03..0.1),
            ],
        })
    } else {
        None
    };

    let sample_world = |x: f32, y: f32, c: usize| -> f32 {
        let x = x.clamp(0.0, (world_w - 2) as f32);
        let y = y.clamp(0.0, (world_h - 2) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let at = |xx: usize, yy: usize| world[(yy * world_w + xx) * 3 + c];
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
        let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    };

    let mut frames = Vec::with_capacity(length);
    for t in 0..length {
        let tf = t as f32;
        let ox = PAN_MARGIN as f32 + amp_x * (std::f32::consts::TAU * tf / period_x + phase_x).sin();
        let oy = PAN_MARGIN as f32 + amp_y * (std::f32::consts::TAU * tf / period_y + phase_y).sin();

        // Occluder rectangle bounces inside the world.
        let occ_rect = occluder.as_ref().map(|o| {
            let range_x = world_w as f32 - o.w;
            let range_y = world_h as f32 - o.h;
            let px = bounce(o.pos.0 + o.vel.0 * tf, range_x);
            let py = bounce(o.pos.1 + o.vel.1 * tf, range_y);
            (px, py, o)
        });

        let mut data = vec![0f32; width * height * 3];
        for y in 0..height {
            for x in 0..width {
                let wx = ox + x as f32;
                let wy = oy + y as f32;
                let occluded = occ_rect.as_ref().and_then(|(px, py, o)| {
                    (wx >= *px && wx < px + o.w && wy >= *py && wy < py + o.h)
                        .then_some(o.radiance)
                });
                for c in 0..3 {
                    data[(y * width + x) * 3 + c] = match occluded {
                        Some(r) => r[c],
                        None => sample_world(wx, wy, c),
                    };
                }
            }
        }
        frames.push(HdrFrame::new(width, height, 3, data).expect("synthesized frame is valid"));
    }
    frames
}

fn bounce(v: f32, range: f32) -> f32 {
    if range <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * range;
    let m = v.rem_euclid(period);
    if m < range {
        m
    } else {
        period - m
    }
}
