//! Overlapped patch extraction (unfold), summed recomposition (fold) and
//! bilinear resampling over `C x H x W` feature maps stored as flat `f64`
//! slices.
//!
//! Fold is the exact adjoint of unfold, which is what makes the pair usable
//! as a differentiable front/back end for the transformer.

use crate::error::{Error, Result};

/// Geometry of an overlapped patch decomposition.
///
/// Padding is symmetric zero padding, sized so that the far edge of the last
/// patch reaches at least the image edge in each direction; every pixel is
/// covered when `stride <= patch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Unpadded source dimensions the grid was built for.
    pub in_h: usize,
    pub in_w: usize,
}

impl PatchGrid {
    /// Builds the grid covering an `in_h x in_w` map.
    pub fn build(
        in_h: usize,
        in_w: usize,
        patch_h: usize,
        patch_w: usize,
        stride_h: usize,
        stride_w: usize,
    ) -> Result<Self> {
        if in_h == 0 || in_w == 0 {
            return Err(Error::invalid("patch grid over an empty image"));
        }
        if patch_h == 0 || patch_w == 0 {
            return Err(Error::invalid("patch size must be >= 1"));
        }
        if !(1..=patch_h).contains(&stride_h) || !(1..=patch_w).contains(&stride_w) {
            return Err(Error::invalid("stride must satisfy 1 <= stride <= patch size"));
        }
        let axis = |size: usize, patch: usize, stride: usize| {
            let n = if size <= patch { 1 } else { (size - patch).div_ceil(stride) + 1 };
            let span = (n - 1) * stride + patch;
            let pad_before = (span - size) / 2;
            (n, pad_before)
        };
        let (n_rows, pad_top) = axis(in_h, patch_h, stride_h);
        let (n_cols, pad_left) = axis(in_w, patch_w, stride_w);
        Ok(Self {
            patch_h,
            patch_w,
            stride_h,
            stride_w,
            pad_top,
            pad_left,
            n_rows,
            n_cols,
            in_h,
            in_w,
        })
    }

    /// Total patch count `N`.
    pub fn n_patches(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Flattened length of one patch for a `channels`-deep map.
    pub fn patch_len(&self, channels: usize) -> usize {
        channels * self.patch_h * self.patch_w
    }

    /// Grid coordinates of patch `k` in row-major scan order.
    pub fn position(&self, k: usize) -> (usize, usize) {
        (k / self.n_cols, k % self.n_cols)
    }

    /// How many patches cover each pixel of the unpadded map.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cover = vec![0u32; self.in_h * self.in_w];
        for pr in 0..self.n_rows {
            for pc in 0..self.n_cols {
                for dy in 0..self.patch_h {
                    let y = (pr * self.stride_h + dy) as isize - self.pad_top as isize;
                    if y < 0 || y as usize >= self.in_h {
                        continue;
                    }
                    for dx in 0..self.patch_w {
                        let x = (pc * self.stride_w + dx) as isize - self.pad_left as isize;
                        if x < 0 || x as usize >= self.in_w {
                            continue;
                        }
                        cover[y as usize * self.in_w + x as usize] += 1;
                    }
                }
            }
        }
        cover
    }
}

/// A sequence of flattened patch windows: row `k` holds the `C*ph*pw` values
/// of grid position `k` (channel-major, then row, then column).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub grid: PatchGrid,
    pub channels: usize,
    /// `n_patches x patch_len`, row-major.
    pub rows: Vec<f64>,
}

impl PatchSequence {
    pub fn row(&self, k: usize) -> &[f64] {
        let len = self.grid.patch_len(self.channels);
        &self.rows[k * len..(k + 1) * len]
    }
}

/// Extracts every overlapped window of `img` (`channels x in_h x in_w`,
/// flat) into a [`PatchSequence`]. Out-of-image samples read as zero.
pub fn unfold(img: &[f64], channels: usize, grid: &PatchGrid) -> Result<PatchSequence> {
    if img.len() != channels * grid.in_h * grid.in_w {
        return Err(Error::invalid("unfold: image length inconsistent with grid"));
    }
    let len = grid.patch_len(channels);
    let mut rows = vec![0f64; grid.n_patches() * len];
    unfold_into(img, channels, grid, &mut rows);
    Ok(PatchSequence { grid: *grid, channels, rows })
}

/// Core unfold kernel; `out` must have `n_patches * patch_len` entries.
pub(crate) fn unfold_into(img: &[f64], channels: usize, grid: &PatchGrid, out: &mut [f64]) {
    let plane = grid.in_h * grid.in_w;
    let len = grid.patch_len(channels);
    for pr in 0..grid.n_rows {
        for pc in 0..grid.n_cols {
            let k = pr * grid.n_cols + pc;
            let base = k * len;
            let mut o = base;
            for c in 0..channels {
                for dy in 0..grid.patch_h {
                    let y = (pr * grid.stride_h + dy) as isize - grid.pad_top as isize;
                    for dx in 0..grid.patch_w {
                        let x = (pc * grid.stride_w + dx) as isize - grid.pad_left as isize;
                        out[o] = if y >= 0
                            && (y as usize) < grid.in_h
                            && x >= 0
                            && (x as usize) < grid.in_w
                        {
                            img[c * plane + y as usize * grid.in_w + x as usize]
                        } else {
                            0.0
                        };
                        o += 1;
                    }
                }
            }
        }
    }
}

/// Recomposes a patch sequence into a feature map by summing every patch
/// entry onto the pixel it covers; the padding region is discarded.
pub fn fold(seq: &PatchSequence) -> Result<Vec<f64>> {
    let grid = &seq.grid;
    let len = grid.patch_len(seq.channels);
    if seq.rows.len() != grid.n_patches() * len {
        return Err(Error::invalid("fold: sequence length inconsistent with grid"));
    }
    let mut img = vec![0f64; seq.channels * grid.in_h * grid.in_w];
    fold_into(&seq.rows, seq.channels, grid, &mut img);
    Ok(img)
}

/// Core fold kernel, accumulating into `img` (`channels * in_h * in_w`).
pub(crate) fn fold_into(rows: &[f64], channels: usize, grid: &PatchGrid, img: &mut [f64]) {
    let plane = grid.in_h * grid.in_w;
    let len = grid.patch_len(channels);
    for pr in 0..grid.n_rows {
        for pc in 0..grid.n_cols {
            let k = pr * grid.n_cols + pc;
            let base = k * len;
            let mut o = base;
            for c in 0..channels {
                for dy in 0..grid.patch_h {
                    let y = (pr * grid.stride_h + dy) as isize - grid.pad_top as isize;
                    for dx in 0..grid.patch_w {
                        let x = (pc * grid.stride_w + dx) as isize - grid.pad_left as isize;
                        if y >= 0 && (y as usize) < grid.in_h && x >= 0 && (x as usize) < grid.in_w
                        {
                            img[c * plane + y as usize * grid.in_w + x as usize] += rows[o];
                        }
                        o += 1;
                    }
                }
            }
        }
    }
}

/// Corner-aligned bilinear resampling of a `channels x in_h x in_w` map.
pub fn resample_bilinear(
    img: &[f64],
    channels: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f64>> {
    if img.len() != channels * in_h * in_w {
        return Err(Error::invalid("resample: image length mismatch"));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resample: output dims must be >= 1"));
    }
    let mut out = vec![0f64; channels * out_h * out_w];
    resample_into(img, channels, in_h, in_w, out_h, out_w, &mut out);
    Ok(out)
}

/// Source coordinate and the two-tap weights for corner-aligned sampling.
pub(crate) fn resample_taps(out_size: usize, in_size: usize, i: usize) -> (usize, usize, f64) {
    if out_size == 1 || in_size == 1 {
        return (0, 0, 1.0);
    }
    let scale = (in_size - 1) as f64 / (out_size - 1) as f64;
    let src = i as f64 * scale;
    let lo = (src.floor() as usize).min(in_size - 1);
    let hi = (lo + 1).min(in_size - 1);
    let frac = src - lo as f64;
    (lo, hi, 1.0 - frac)
}

pub(crate) fn resample_into(
    img: &[f64],
    channels: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    out: &mut [f64],
) {
    let in_plane = in_h * in_w;
    let out_plane = out_h * out_w;
    for y in 0..out_h {
        let (y0, y1, wy0) = resample_taps(out_h, in_h, y);
        for x in 0..out_w {
            let (x0, x1, wx0) = resample_taps(out_w, in_w, x);
            for c in 0..channels {
                let p = &img[c * in_plane..(c + 1) * in_plane];
                let v = wy0 * (wx0 * p[y0 * in_w + x0] + (1.0 - wx0) * p[y0 * in_w + x1])
                    + (1.0 - wy0) * (wx0 * p[y1 * in_w + x0] + (1.0 - wx0) * p[y1 * in_w + x1]);
                out[c * out_plane + y * out_w + x] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn unfold_enumerates_windows() {
        // 1x3x3 map, patch 2x2, stride 1, no padding needed.
        let img: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let grid = PatchGrid::build(3, 3, 2, 2, 1, 1).unwrap();
        assert_eq!(grid.pad_top, 0);
        assert_eq!(grid.n_patches(), 4);
        let seq = unfold(&img, 1, &grid).unwrap();
        let expected: [[f64; 4]; 4] = [
            [1.0, 2.0, 4.0, 5.0],
            [2.0, 3.0, 5.0, 6.0],
            [4.0, 5.0, 7.0, 8.0],
            [5.0, 6.0, 8.0, 9.0],
        ];
        for (k, want) in expected.iter().enumerate() {
            assert_eq!(seq.row(k), want, "patch {k}");
        }
    }

    #[test]
    fn single_patch_when_patch_equals_image() {
        let img: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let grid = PatchGrid::build(2, 2, 2, 2, 1, 1).unwrap();
        assert_eq!(grid.n_patches(), 1);
        let seq = unfold(&img, 3, &grid).unwrap();
        assert_eq!(seq.row(0), &img[..]);
        // fold of a single total-coverage patch restores the image.
        assert_eq!(fold(&seq).unwrap(), img);
    }

    #[test]
    fn constant_image_gives_identical_rows() {
        let img = vec![0.75f64; 16];
        let grid = PatchGrid::build(4, 4, 2, 2, 2, 2).unwrap();
        let seq = unfold(&img, 1, &grid).unwrap();
        for k in 1..grid.n_patches() {
            assert_eq!(seq.row(k), seq.row(0));
        }
    }

    #[test]
    fn coverage_map_3x3_patch2_stride1() {
        let grid = PatchGrid::build(3, 3, 2, 2, 1, 1).unwrap();
        let expect = [1u32, 2, 1, 2, 4, 2, 1, 2, 1];
        assert_eq!(grid.coverage(), expect);
    }

    #[test]
    fn fold_unfold_weights_by_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let grid = PatchGrid::build(5, 6, 3, 3, 2, 2).unwrap();
        let img = random_map(&mut rng, 2 * 5 * 6);
        let folded = fold(&unfold(&img, 2, &grid).unwrap()).unwrap();
        let cover = grid.coverage();
        for c in 0..2 {
            for p in 0..30 {
                let want = img[c * 30 + p] * cover[p] as f64;
                assert!((folded[c * 30 + p] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resample_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let img = random_map(&mut rng, 3 * 4 * 5);
        let same = resample_bilinear(&img, 3, 4, 5, 4, 5).unwrap();
        for (a, b) in img.iter().zip(&same) {
            assert!((a - b).abs() < 1e-12);
        }
        let flat = vec![0.3f64; 2 * 3 * 3];
        let up = resample_bilinear(&flat, 2, 3, 3, 6, 6).unwrap();
        assert!(up.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn resample_ramp_linearity() {
        // 1D ramp [0, 1] upsampled to 3 samples -> [0, 0.5, 1].
        let img = vec![0.0, 1.0];
        let out = resample_bilinear(&img, 1, 1, 2, 1, 3).unwrap();
        assert_eq!(out, vec![0.0, 0.5, 1.0]);
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    proptest! {
        // <unfold(x), y> == <x, fold(y)>: fold is the exact transpose of
        // unfold, which doubles as the gradient-correctness argument.
        #[test]
        fn fold_is_adjoint_of_unfold(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let configs = [(7usize, 9usize, 3usize, 3usize, 2usize, 2usize, 2usize),
                           (8, 8, 2, 2, 1, 1, 1),
                           (10, 12, 4, 3, 2, 3, 3)];
            for (h, w, ph, pw, sh, sw, ch) in configs {
                let grid = PatchGrid::build(h, w, ph, pw, sh, sw).unwrap();
                let x = random_map(&mut rng, ch * h * w);
                let y = random_map(&mut rng, grid.n_patches() * grid.patch_len(ch));
                let ux = unfold(&x, ch, &grid).unwrap();
                let fy = fold(&PatchSequence { grid, channels: ch, rows: y.clone() }).unwrap();
                let lhs = dot(&ux.rows, &y);
                let rhs = dot(&x, &fy);
                prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
            }
        }

        #[test]
        fn unfold_is_injective(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4242));
            let grid = PatchGrid::build(6, 6, 3, 3, 2, 2).unwrap();
            let x = random_map(&mut rng, 36);
            let mut y = x.clone();
            let idx = rng.random_range(0..36);
            y[idx] += 0.5;
            let ux = unfold(&x, 1, &grid).unwrap();
            let uy = unfold(&y, 1, &grid).unwrap();
            prop_assert_ne!(ux.rows, uy.rows);
        }

        #[test]
        fn resample_preserves_bounds(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_map(&mut rng, 5 * 7);
            let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = resample_bilinear(&img, 1, 5, 7, 11, 4).unwrap();
            for v in out {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
