//! Closed-form copy-paste hallucinator.
//!
//! Estimates a single exposure ratio between the current and reference
//! frame from pixels valid in both, then pastes the rescaled reference into
//! the masked area. Orders of magnitude faster than the network, which is
//! what makes it usable as the per-step reward model in RL episodes, while
//! preserving the trade-off that matters for reference selection: a recent,
//! well-exposed reference recovers the signal, a stale or co-saturated one
//! does not.

use super::Hallucinator;
use crate::error::{Error, Result};
use crate::imaging::{HdrFrame, LdrFrame, PixelFrame, SatMask};

#[derive(Debug, Clone, Copy)]
pub struct OracleHallucinator {
    /// Channel threshold `1 - eps` above which a pixel counts as saturated.
    pub saturation_eps: f32,
}

impl Default for OracleHallucinator {
    fn default() -> Self {
        Self { saturation_eps: 1e-3 }
    }
}

impl Hallucinator for OracleHallucinator {
    fn hallucinate(
        &self,
        cur: &LdrFrame,
        reference: &LdrFrame,
        mask: &SatMask,
    ) -> Result<HdrFrame> {
        oracle_hallucinate_with_eps(cur, reference, mask, self.saturation_eps)
    }
}

/// [`oracle_hallucinate_with_eps`] at the default saturation threshold.
pub fn oracle_hallucinate(
    cur: &LdrFrame,
    reference: &LdrFrame,
    mask: &SatMask,
) -> Result<HdrFrame> {
    oracle_hallucinate_with_eps(cur, reference, mask, 1e-3)
}

fn oracle_hallucinate_with_eps(
    cur: &LdrFrame,
    reference: &LdrFrame,
    mask: &SatMask,
    eps: f32,
) -> Result<HdrFrame> {
    if !cur.same_dims(reference) || !mask.matches(cur) {
        return Err(Error::invalid("oracle_hallucinate: dimension mismatch"));
    }
    let ch = cur.channels();
    let threshold = 1.0 - eps;
    let n_px = cur.width() * cur.height();

    let pixel_saturated = |frame: &LdrFrame, i: usize| -> bool {
        frame.data()[i * ch..(i + 1) * ch].iter().any(|v| *v >= threshold)
    };

    // Exposure ratio from pixels unsaturated in both frames, channels pooled.
    let mut ratios = Vec::new();
    for i in 0..n_px {
        if mask.data()[i] || pixel_saturated(cur, i) || pixel_saturated(reference, i) {
            continue;
        }
        for c in 0..ch {
            let r = reference.data()[i * ch + c];
            if r > 1e-6 {
                ratios.push(cur.data()[i * ch + c] / r);
            }
        }
    }
    let ratio = median(&mut ratios).unwrap_or(1.0);

    let mut out = Vec::with_capacity(n_px * ch);
    for i in 0..n_px {
        if !mask.data()[i] {
            out.extend_from_slice(&cur.data()[i * ch..(i + 1) * ch]);
        } else if !pixel_saturated(reference, i) {
            for c in 0..ch {
                out.push((ratio * reference.data()[i * ch + c]).max(0.0));
            }
        } else {
            // Saturated in both frames: no information to recover.
            out.extend(std::iter::repeat_n(1.0f32, ch));
        }
    }
    HdrFrame::new(cur.width(), cur.height(), ch, out)
}

/// Lower median; `None` on empty input.
fn median(values: &mut [f32]) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    Some(*m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exposure_ratio_exactly() {
        // Reference at half the exposure of the current frame; values are
        // powers of two so the ratio arithmetic is exact in f32.
        let w = 4;
        let cur_data: Vec<f32> = (0..w * w * 3)
            .map(|i| match i % 4 {
                0 => 0.25,
                1 => 0.5,
                2 => 0.125,
                _ => 0.0625,
            })
            .collect();
        let ref_data: Vec<f32> = cur_data.iter().map(|v| v * 0.5).collect();
        let cur = LdrFrame::new(w, w, 3, cur_data.clone()).unwrap();
        let reference = LdrFrame::new(w, w, 3, ref_data).unwrap();
        // Mask the left half.
        let mask_data: Vec<bool> = (0..w * w).map(|i| i % w < w / 2).collect();
        let mask = SatMask::new(w, w, mask_data).unwrap();
        let out = oracle_hallucinate(&cur, &reference, &mask).unwrap();
        for (o, c) in out.data().iter().zip(&cur_data) {
            assert_eq!(o, c);
        }
    }

    #[test]
    fn degenerate_reference_fills_with_one() {
        // Reference identical to the saturated current frame: masked areas
        // are saturated in both, so the fill is the flat 1.0 fallback.
        let mut data = vec![0.3f32; 4 * 4 * 3];
        for c in 0..3 {
            data[c] = 1.0; // pixel (0,0) saturated
        }
        let cur = LdrFrame::new(4, 4, 3, data.clone()).unwrap();
        let reference = LdrFrame::new(4, 4, 3, data).unwrap();
        let mut mask_data = vec![false; 16];
        mask_data[0] = true;
        let mask = SatMask::new(4, 4, mask_data).unwrap();
        let out = oracle_hallucinate(&cur, &reference, &mask).unwrap();
        for c in 0..3 {
            assert_eq!(out.get(0, 0, c), 1.0);
        }
        assert_eq!(out.get(1, 0, 0), 0.3);
    }

    #[test]
    fn no_co_unsaturated_pixels_falls_back_to_unit_ratio() {
        let cur = LdrFrame::constant(2, 2, 3, 1.0);
        let reference = LdrFrame::constant(2, 2, 3, 0.5);
        let mask = SatMask::new(2, 2, vec![true; 4]).unwrap();
        // Every cur pixel is saturated -> no ratio samples -> r = 1.
        let out = oracle_hallucinate(&cur, &reference, &mask).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn well_exposed_reference_beats_black_reference() {
        // Paired evaluation over synthetic frames with known ground truth.
        use crate::autoexposure::{synthesize_scene, SceneParams};
        use crate::imaging::{composite_output, mse, saturation_mask};

        let params = SceneParams::default();
        let mut better = 0usize;
        let mut total = 0usize;
        for seed in 0..25 {
            let scene = synthesize_scene(&params, seed, 4, 32, 32);
            let gt = &scene[0];
            // Overexposed current frame, well-exposed recent reference.
            let cur_e = 2.0f32;
            let ref_e = 0.25f32;
            let to_ldr = |f: &HdrFrame, e: f32| {
                let data = f.data().iter().map(|v| (v * e).clamp(0.0, 1.0)).collect();
                LdrFrame::new(f.width(), f.height(), 3, data).unwrap()
            };
            let cur = to_ldr(gt, cur_e);
            let reference = to_ldr(&scene[1], ref_e);
            let mask = saturation_mask(&cur, 1e-3);
            if mask.count() == 0 {
                continue;
            }
            let black = LdrFrame::black(32, 32, 3);

            let eval = |r: &LdrFrame| {
                let fill = oracle_hallucinate(&cur, r, &mask).unwrap();
                let out = composite_output(&cur, &fill, &mask).unwrap();
                // Compare in scene units at the fixed exposure 1.0.
                let scaled = crate::imaging::apply_exposure(&out, 1.0 / cur_e).unwrap();
                mse(&scaled, gt).unwrap()
            };
            total += 1;
            if eval(&reference) < eval(&black) {
                better += 1;
            }
        }
        assert!(total >= 20, "not enough saturated test frames ({total})");
        assert_eq!(better, total, "oracle with real reference lost to black reference");
    }
}
