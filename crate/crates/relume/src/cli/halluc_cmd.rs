//! Causal end-to-end pass: per frame, policy decision, hallucination,
//! compositing and blend-on-switch, never reading ahead of the current
//! frame.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::frame_select::{ActionPolicy, BaselineKind, BaselinePolicy, EnvState, ReferenceMode};
use crate::imaging::{
    blend_on_switch, composite_output, read_ldr_png, saturation_mask, write_pfm, HdrFrame,
    LdrFrame, PixelFrame,
};
use crate::nn::load_checkpoint;
use crate::policy::{LearnedPolicy, PolicyNet};

pub struct HallucinateOptions {
    pub input_dir: PathBuf,
    pub policy: String,
    pub policy_checkpoint: Option<PathBuf>,
    pub halluc_checkpoint: Option<PathBuf>,
}

/// Sorted PNG frames with contiguous trailing indices. Files are grouped by
/// their name prefix; with several families present (an episode directory
/// also holds masks) the `ldr_` family is used.
fn ordered_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut families: std::collections::BTreeMap<String, Vec<(u64, PathBuf)>> = Default::default();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        let Some(stem) = name.strip_suffix(".png") else { continue };
        let digits: String =
            stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            return Err(Error::invalid(format!(
                "frame {name:?} has no trailing index"
            )));
        }
        let prefix = stem[..stem.len() - digits.len()].to_string();
        let index: u64 = digits
            .chars()
            .rev()
            .collect::<String>()
            .parse()
            .map_err(|_| Error::invalid(format!("frame {name:?}: bad index")))?;
        families.entry(prefix).or_default().push((index, path));
    }
    let mut indexed = match families.len() {
        0 => return Err(Error::invalid(format!("no PNG frames in {dir:?}"))),
        1 => families.into_values().next().unwrap(),
        _ => families.remove("ldr_").ok_or_else(|| {
            Error::invalid(format!(
                "multiple frame families in {dir:?} and none named ldr_*"
            ))
        })?,
    };
    indexed.sort();
    let first = indexed[0].0;
    for (offset, (index, path)) in indexed.iter().enumerate() {
        if *index != first + offset as u64 {
            return Err(Error::invalid(format!(
                "frame indices not contiguous at {path:?} (expected {})",
                first + offset as u64
            )));
        }
    }
    Ok(indexed.into_iter().map(|(_, p)| p).collect())
}

fn build_policy(config: &RunConfig, options: &HallucinateOptions) -> Result<Box<dyn ActionPolicy>> {
    if options.policy == "learned" {
        let path = options.policy_checkpoint.as_ref().ok_or_else(|| {
            Error::invalid("--policy learned requires --policy-checkpoint")
        })?;
        let records = load_checkpoint(path)?;
        let mut net = PolicyNet::new(config.policy_config(), config.u("seed"))?;
        net.load_records(&records)?;
        return Ok(Box::new(LearnedPolicy::new(net)));
    }
    let kind = BaselineKind::parse(&options.policy).ok_or_else(|| {
        Error::invalid(format!(
            "unknown policy {:?} (expected no-reference | no-push | every-<k> | random-<p> | always-push | learned)",
            options.policy
        ))
    })?;
    Ok(Box::new(BaselinePolicy::new(kind, config.u("seed"))))
}

pub fn cmd_hallucinate(config: &RunConfig, out: &Path, options: &HallucinateOptions) -> Result<()> {
    let frames = ordered_frames(&options.input_dir)?;
    let gamma = config.f("png.gamma") as f32;
    let sat_eps = config.f("clip.saturation_eps") as f32;
    let ramp = config.usize("blend.ramp_frames");
    let halluc = super::eval_cmds::build_hallucinator(config, options.halluc_checkpoint.as_deref())?;
    let mut policy = build_policy(config, options)?;
    policy.begin_episode();
    let black_reference = policy.reference_mode() == ReferenceMode::AlwaysBlack;

    // Causal state: loaded frames so far (the policy only ever needs the
    // last three plus the reference, but reference indices reach back).
    let mut history: Vec<Rc<LdrFrame>> = Vec::new();
    let mut reference: usize = 0;
    let mut prev_reference: usize = 0;
    let mut t_since_switch: usize = usize::MAX;
    let mut decisions = String::from("t,action,reference_age,mask_area,blend_alpha\n");

    for (t, path) in frames.iter().enumerate() {
        let ldr = Rc::new(read_ldr_png(path, gamma)?);
        if let Some(first) = history.first() {
            if !first.same_dims(ldr.as_ref()) {
                return Err(Error::invalid(format!("{path:?}: frame dimensions changed")));
            }
        }
        history.push(ldr.clone());

        // Decision (only once the history buffer is full), pushing the
        // current frame before it is processed as part of the stream.
        let mut action = false;
        if t >= 2 {
            let black = LdrFrame::black(ldr.width(), ldr.height(), 3);
            let state = EnvState {
                cur: &history[t],
                prev1: &history[t - 1],
                prev2: &history[t - 2],
                reference: if black_reference { &black } else { &history[reference] },
                frame_index: t,
            };
            action = policy.act(&state);
            if action && reference != t {
                prev_reference = reference;
                reference = t;
                t_since_switch = 0;
            }
        }

        let mask = saturation_mask(&ldr, sat_eps);
        let black = LdrFrame::black(ldr.width(), ldr.height(), 3);
        let ref_frame = |idx: usize| -> &LdrFrame {
            if black_reference {
                &black
            } else {
                &history[idx]
            }
        };
        let compose = |reference: &LdrFrame| -> Result<HdrFrame> {
            let filled = halluc.hallucinate(&ldr, reference, &mask)?;
            composite_output(&ldr, &filled, &mask)
        };

        let out_new = compose(ref_frame(reference))?;
        let (output, alpha) = if t_since_switch < ramp && prev_reference != reference {
            // Blend the outputs generated with the new and old reference.
            let out_old = compose(ref_frame(prev_reference))?;
            let alpha = (t_since_switch as f64 / ramp as f64).min(1.0);
            (blend_on_switch(&out_new, &out_old, t_since_switch, ramp)?, alpha)
        } else {
            (out_new, 1.0)
        };
        t_since_switch = t_since_switch.saturating_add(1);

        write_pfm(&output, out.join(format!("frame_{t:06}.pfm")))?;
        let _ = writeln!(
            decisions,
            "{t},{},{},{},{alpha}",
            action as u8,
            t.saturating_sub(reference),
            mask.area()
        );
    }
    std::fs::write(out.join("decisions.csv"), decisions)?;
    println!("hallucinated {} frames", frames.len());
    Ok(())
}
