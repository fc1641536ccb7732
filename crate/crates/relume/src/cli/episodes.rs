//! Episode synthesis to disk and loading back.
//!
//! Layout per episode: `episode_NNNN/` holding `gt_NNNNNN.pfm`,
//! `ldr_NNNNNN.png` (16-bit, delinearized), `mask_NNNNNN.png` (1-bit) and a
//! `manifest.txt` with exactly one line per frame:
//! `index exposure illumination gt ldr mask`. The top-level `episodes.txt`
//! lists `dir seed length width height` per episode.

use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;

use crate::autoexposure::{synthesize_episode, Episode, EpisodeFrame};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::imaging::{
    read_ldr_png, read_mask_png, read_pfm, write_ldr_png, write_mask_png, write_pfm, PngDepth,
};

pub fn cmd_synth_episodes(config: &RunConfig, out: &Path) -> Result<()> {
    let count = config.u("episode.count");
    let seed = config.u("seed");
    let model = config.ae_model();
    let gamma = config.f("png.gamma") as f32;

    let mut index = String::new();
    for i in 0..count {
        let spec = config.episode_spec(seed.wrapping_add(i));
        let episode = synthesize_episode(&spec, &model)?;
        let dir_name = format!("episode_{i:04}");
        let dir = out.join(&dir_name);
        std::fs::create_dir_all(&dir)?;
        let mut manifest = String::new();
        for (t, frame) in episode.frames.iter().enumerate() {
            let gt_name = format!("gt_{t:06}.pfm");
            let ldr_name = format!("ldr_{t:06}.png");
            let mask_name = format!("mask_{t:06}.png");
            write_pfm(&frame.gt, dir.join(&gt_name))?;
            write_ldr_png(&frame.ldr, dir.join(&ldr_name), PngDepth::Sixteen, gamma)?;
            write_mask_png(&frame.mask, dir.join(&mask_name))?;
            let _ = writeln!(
                manifest,
                "{t} {} {} {gt_name} {ldr_name} {mask_name}",
                frame.exposure, frame.illumination
            );
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        let _ = writeln!(
            index,
            "{dir_name} {} {} {} {}",
            spec.seed, spec.length, spec.width, spec.height
        );
        println!("wrote {dir_name} ({} frames)", episode.len());
    }
    std::fs::write(out.join("episodes.txt"), index)?;
    Ok(())
}

/// Loads one episode directory written by [`cmd_synth_episodes`].
pub fn load_episode_dir(dir: &Path, gamma: f32) -> Result<Episode> {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))
        .map_err(|e| Error::Format(format!("{dir:?}: missing manifest.txt ({e})")))?;
    let mut frames = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!(
                "{dir:?} manifest line {}: expected 6 fields",
                lineno + 1
            )));
        }
        let exposure: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Format("bad exposure in manifest".into()))?;
        let illumination: f64 = fields[2]
            .parse()
            .map_err(|_| Error::Format("bad illumination in manifest".into()))?;
        let gt = read_pfm(dir.join(fields[3]))?;
        let ldr = read_ldr_png(dir.join(fields[4]), gamma)?;
        let mask = read_mask_png(dir.join(fields[5]))?;
        frames.push(EpisodeFrame { ldr, gt, mask, exposure, illumination });
    }
    if frames.is_empty() {
        return Err(Error::Format(format!("{dir:?}: empty episode")));
    }
    Ok(Episode { frames, seed: 0 })
}

/// Loads every episode listed in `episodes.txt`, in listed order.
pub fn load_episodes(root: &Path, gamma: f32) -> Result<Vec<Rc<Episode>>> {
    let index = std::fs::read_to_string(root.join("episodes.txt"))
        .map_err(|e| Error::Format(format!("{root:?}: missing episodes.txt ({e})")))?;
    let mut episodes = Vec::new();
    for line in index.lines() {
        let dir_name = line
            .split_whitespace()
            .next()
            .ok_or_else(|| Error::Format("empty episodes.txt line".into()))?;
        episodes.push(Rc::new(load_episode_dir(&root.join(dir_name), gamma)?));
    }
    if episodes.is_empty() {
        return Err(Error::Format(format!("{root:?}: no episodes listed")));
    }
    Ok(episodes)
}
