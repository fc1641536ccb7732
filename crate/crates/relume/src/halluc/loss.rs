//! Reconstruction and adversarial losses.

use super::net::LossMode;
use crate::imaging::{HdrFrame, PixelFrame, SatMask};
use crate::nn::{Graph, TensorId};

/// Result of [`loss_rec`].
pub struct RecLoss {
    pub id: TensorId,
    pub mask_elems: usize,
    /// Set when MOL was requested with an empty mask: the loss is a
    /// gradient-free zero.
    pub empty_mask_warning: bool,
}

/// L1 reconstruction loss. The masked term is normalized by the number of
/// masked elements (and the unmasked term by its own count), so the
/// magnitude does not depend on the mask size.
pub fn loss_rec(
    g: &mut Graph,
    pred: TensorId,
    gt: &HdrFrame,
    mask: &SatMask,
    mode: LossMode,
) -> RecLoss {
    let n = gt.data().len();
    assert_eq!(g.data(pred).len(), n, "loss_rec: prediction length mismatch");
    let channels = gt.channels();
    // The prediction node is CHW; build the targets in the same layout.
    let (w, h) = (gt.width(), gt.height());
    let mut gt_chw = vec![0f64; n];
    let mut mask_chw = vec![0f64; n];
    for y in 0..h {
        for x in 0..w {
            let m = mask.get(x, y);
            for c in 0..channels {
                let dst = c * h * w + y * w + x;
                gt_chw[dst] = gt.get(x, y, c) as f64;
                mask_chw[dst] = if m { 1.0 } else { 0.0 };
            }
        }
    }
    let mask_elems = mask.count() * channels;
    let out_elems = n - mask_elems;

    let pred_flat = g.reshape(pred, &[n]);
    let gt_t = g.constant(&[n], gt_chw);
    let diff = g.sub(gt_t, pred_flat);

    let masked_term = |g: &mut Graph, weights: Vec<f64>, count: usize| -> TensorId {
        let w = g.constant(&[n], weights);
        let masked = g.mul(diff, w);
        let l1 = g.abs(masked);
        let total = g.sum_all(l1);
        g.affine(total, 1.0 / count.max(1) as f64, 0.0)
    };

    match mode {
        LossMode::Mol => {
            if mask_elems == 0 {
                return RecLoss { id: g.scalar(0.0), mask_elems, empty_mask_warning: true };
            }
            let id = masked_term(g, mask_chw, mask_elems);
            RecLoss { id, mask_elems, empty_mask_warning: false }
        }
        LossMode::Full => {
            let inv: Vec<f64> = mask_chw.iter().map(|m| 1.0 - m).collect();
            let l_mask = if mask_elems > 0 {
                Some(masked_term(g, mask_chw, mask_elems))
            } else {
                None
            };
            let l_out = if out_elems > 0 {
                Some(masked_term(g, inv, out_elems))
            } else {
                None
            };
            let id = match (l_mask, l_out) {
                (Some(a), Some(b)) => g.add(a, b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => g.scalar(0.0),
            };
            RecLoss { id, mask_elems, empty_mask_warning: false }
        }
    }
}

/// Generator adversarial loss: minimizes `-E[log D(pred)]`, written with
/// the numerically stable softplus form.
pub fn loss_adv(g: &mut Graph, fake_logits: TensorId) -> TensorId {
    let neg = g.neg(fake_logits);
    let sp = g.softplus(neg);
    g.mean_all(sp)
}

/// Discriminator loss: minimizes
/// `-E[log D(real)] - E[log(1 - D(fake))]`.
pub fn loss_disc(g: &mut Graph, real_logits: TensorId, fake_logits: TensorId) -> TensorId {
    let neg_real = g.neg(real_logits);
    let sp_real = g.softplus(neg_real);
    let real_term = g.mean_all(sp_real);
    let sp_fake = g.softplus(fake_logits);
    let fake_term = g.mean_all(sp_fake);
    g.add(real_term, fake_term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::LdrFrame;
    use crate::nn::Graph;

    fn hdr(w: usize, h: usize, data: Vec<f32>) -> HdrFrame {
        HdrFrame::new(w, h, 3, data).unwrap()
    }

    fn chw_const(g: &mut Graph, w: usize, h: usize, v: f64) -> TensorId {
        g.leaf(&[3, h, w], vec![v; 3 * h * w], true)
    }

    #[test]
    fn perfect_prediction_is_zero_loss() {
        let gt = hdr(2, 2, vec![0.5; 12]);
        let mask = SatMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let mut g = Graph::new();
        let pred = chw_const(&mut g, 2, 2, 0.5);
        for mode in [LossMode::Mol, LossMode::Full] {
            let loss = loss_rec(&mut g, pred, &gt, &mask, mode);
            assert_eq!(g.value(loss.id), 0.0);
        }
    }

    #[test]
    fn all_true_mask_makes_full_equal_mol() {
        let gt = hdr(2, 2, (0..12).map(|v| v as f32 * 0.1).collect());
        let mask = SatMask::new(2, 2, vec![true; 4]).unwrap();
        let mut g = Graph::new();
        let pred = chw_const(&mut g, 2, 2, 0.3);
        let mol = loss_rec(&mut g, pred, &gt, &mask, LossMode::Mol);
        let full = loss_rec(&mut g, pred, &gt, &mask, LossMode::Full);
        assert!((g.value(mol.id) - g.value(full.id)).abs() < 1e-12);
    }

    #[test]
    fn half_mask_hand_case() {
        // 2x2 frame, left column masked. gt = 1.0, pred = 0.25 under the
        // mask and 0.75 outside.
        let gt = hdr(2, 2, vec![1.0; 12]);
        let mask = SatMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let mut g = Graph::new();
        let mut data = vec![0f64; 12];
        for y in 0..2 {
            for x in 0..2 {
                for c in 0..3 {
                    data[c * 4 + y * 2 + x] = if x == 0 { 0.25 } else { 0.75 };
                }
            }
        }
        let pred = g.leaf(&[3, 2, 2], data, true);
        let mol = loss_rec(&mut g, pred, &gt, &mask, LossMode::Mol);
        assert_eq!(mol.mask_elems, 6);
        // |1 - 0.25| = 0.75 on every masked element.
        assert!((g.value(mol.id) - 0.75).abs() < 1e-12);
        let full = loss_rec(&mut g, pred, &gt, &mask, LossMode::Full);
        // masked 0.75 + unmasked 0.25
        assert!((g.value(full.id) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_mol_warns_without_gradient() {
        let gt = hdr(2, 2, vec![1.0; 12]);
        let mask = SatMask::all_false(2, 2);
        let mut g = Graph::new();
        let pred = chw_const(&mut g, 2, 2, 0.0);
        let loss = loss_rec(&mut g, pred, &gt, &mask, LossMode::Mol);
        assert!(loss.empty_mask_warning);
        assert_eq!(g.value(loss.id), 0.0);
        g.backward(loss.id);
        assert!(g.grad(pred).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mol_gradient_vanishes_exactly_outside_mask() {
        let gt = hdr(3, 2, (0..18).map(|v| 0.05 * v as f32).collect());
        let mask = SatMask::new(3, 2, vec![true, false, false, true, true, false]).unwrap();
        let mut g = Graph::new();
        let pred = chw_const(&mut g, 3, 2, 0.4);
        let loss = loss_rec(&mut g, pred, &gt, &mask, LossMode::Mol);
        g.backward(loss.id);
        let grad = g.grad(pred).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                for c in 0..3 {
                    let v = grad[c * 6 + y * 3 + x];
                    if mask.get(x, y) {
                        assert!(v != 0.0, "masked pixel without gradient");
                    } else {
                        assert_eq!(v, 0.0, "unmasked pixel leaked gradient");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_logits_give_ln2_losses() {
        let mut g = Graph::new();
        let logits = g.constant(&[4, 1], vec![0.0; 4]);
        let adv = loss_adv(&mut g, logits);
        // -log D = -log(0.5) = ln 2 per element.
        assert!((g.value(adv) - std::f64::consts::LN_2).abs() < 1e-12);
        let d = loss_disc(&mut g, logits, logits);
        assert!((g.value(d) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_discriminator_drives_loss_to_zero() {
        let mut g = Graph::new();
        let real = g.constant(&[2, 1], vec![30.0, 30.0]);
        let fake = g.constant(&[2, 1], vec![-30.0, -30.0]);
        let d = loss_disc(&mut g, real, fake);
        assert!(g.value(d) < 1e-10);
    }

    #[test]
    fn adv_gradient_matches_finite_differences() {
        // Tiny discriminator: logit = sum of inputs * 0.3.
        let mut g = Graph::new();
        let pred = g.leaf(&[4], vec![0.2, -0.4, 0.9, 0.1], true);
        let w = g.constant(&[4], vec![0.3; 4]);
        let weighted = g.mul(pred, w);
        let s = g.sum_all(weighted);
        let logit = g.reshape(s, &[1, 1]);
        let adv = loss_adv(&mut g, logit);
        g.backward(adv);
        let analytic = g.grad(pred).unwrap().to_vec();

        let f = |vals: &[f64]| -> f64 {
            let z: f64 = vals.iter().map(|v| v * 0.3).sum();
            // softplus(-z)
            (-z).max(0.0) + (-(-z).abs()).exp().ln_1p()
        };
        let base = [0.2, -0.4, 0.9, 0.1];
        for i in 0..4 {
            let mut hi = base;
            let mut lo = base;
            hi[i] += 1e-5;
            lo[i] -= 1e-5;
            let fd = (f(&hi) - f(&lo)) / 2e-5;
            assert!((analytic[i] - fd).abs() < 1e-7, "{} vs {}", analytic[i], fd);
        }
    }

    #[test]
    fn composited_output_untouched_outside_mask() {
        // Compositing contract: whatever the network emits, unmasked pixels
        // pass the LDR through bit-exactly.
        let ldr = LdrFrame::new(2, 2, 3, (0..12).map(|v| v as f32 / 12.0).collect()).unwrap();
        let halluc = HdrFrame::constant(2, 2, 3, 7.0);
        let mask = SatMask::new(2, 2, vec![false, true, false, false]).unwrap();
        let out = crate::imaging::composite_output(&ldr, &halluc, &mask).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                for c in 0..3 {
                    if !mask.get(x, y) {
                        assert_eq!(out.get(x, y, c), ldr.get(x, y, c));
                    }
                }
            }
        }
    }
}
