//! Training commands: checkpoints, JSONL logs, best-step markers, resume.

use std::io::Write as _;
use std::path::Path;
use std::rc::Rc;

use crate::a2c::{evaluate_policy, train_policy_with_hooks};
use crate::autoexposure::synthesize_episode;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::halluc::{
    Discriminator, HallucNet, HallucTrainer, HdrPairSource, InpaintPairSource, PairSource,
    TrainPair,
};
use crate::halluc::{Hallucinator, OracleHallucinator};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::policy::PolicyNet;

fn append_jsonl(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(value)
        .map_err(|e| Error::Runtime(format!("log serialization: {e}")))?;
    writeln!(file, "{line}")?;
    Ok(())
}

pub fn cmd_train_halluc(config: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<()> {
    let seed = config.u("seed");
    let halluc_config = config.halluc_config()?;
    let adversarial = halluc_config.lambda_adv > 0.0;
    let net = HallucNet::new(halluc_config, seed)?;
    let disc = adversarial.then(|| Discriminator::new(seed ^ 0xd15c));
    let schedule = config.train_schedule();
    let mut trainer = HallucTrainer::new(net, disc, schedule.clone());

    if let Some(path) = resume {
        let records = load_checkpoint(path)?;
        trainer.load_records(&records)?;
        println!("resumed from {path:?} at step {}", trainer.step);
    }

    let res = config.usize("train_halluc.resolution");
    let pool_scenes = config.usize("train_halluc.pool_scenes");
    let pool_frames = config.usize("train_halluc.pool_frames");
    let jitter = (
        config.f("halluc.exposure_jitter_min"),
        config.f("halluc.exposure_jitter_max"),
    );
    let mut phase1 = InpaintPairSource::new(seed, pool_scenes, pool_frames, res, res);
    phase1.exposure_range = jitter;
    let mut phase2 = HdrPairSource::new(seed, pool_scenes, pool_frames, res, res);
    phase2.exposure_range = jitter;
    phase2.clip = config.clip_params();

    // Held-out validation pairs drawn from a disjoint seed range.
    let mut val_source = HdrPairSource::new(seed ^ 0x7a11, 4, pool_frames, res, res);
    val_source.clip = config.clip_params();
    let val_pairs: Vec<TrainPair> = (0..config.u("train_halluc.val_pairs"))
        .map(|i| val_source.pair(i))
        .collect();

    let log_path = out.join("train_log.jsonl");
    let ckpt_interval = config.u("train_halluc.checkpoint_interval").max(1);
    let total = schedule.total_steps();
    println!(
        "training hallucinator: {total} steps ({} + {}), adversarial = {adversarial}",
        schedule.phase1_steps, schedule.phase2_steps
    );

    loop {
        let before = trainer.step;
        if before >= total || trainer.aborted() {
            break;
        }
        let (phase, _) = trainer.schedule.at(before);
        let pair = if phase == 1 { phase1.pair(before) } else { phase2.pair(before) };
        let Some(mut entry) = trainer.train_step(&pair)? else {
            break;
        };
        let validate = trainer.schedule.val_interval > 0
            && !val_pairs.is_empty()
            && (trainer.step % trainer.schedule.val_interval == 0 || trainer.step == total);
        if validate {
            entry.val_l_rec = Some(trainer.validate(&val_pairs)?);
        }
        append_jsonl(&log_path, &entry)?;
        if entry.step % 100 == 0 {
            println!(
                "step {:>6} phase {} l_rec {:.6}{}",
                entry.step,
                entry.phase,
                entry.l_rec,
                entry.val_l_rec.map(|v| format!(" val {v:.6}")).unwrap_or_default()
            );
        }
        if trainer.step % ckpt_interval == 0 {
            let path = out.join(format!("ckpt_step{:06}.bin", trainer.step));
            save_checkpoint(&path, &trainer.to_records())?;
            save_checkpoint(out.join("ckpt_latest.bin"), &trainer.to_records())?;
        }
    }
    let outcome = crate::halluc::TrainOutcome {
        steps_done: trainer.step,
        best_val: trainer.best().map(|(v, _)| v),
        best_val_step: trainer.best().map(|(_, s)| s),
        aborted_nan: trainer.aborted(),
    };

    save_checkpoint(out.join("ckpt_latest.bin"), &trainer.to_records())?;
    if let Some(best) = trainer.best_records() {
        save_checkpoint(out.join("ckpt_best.bin"), best)?;
    } else {
        // No validation ran: the final parameters are the best known.
        save_checkpoint(out.join("ckpt_best.bin"), &trainer.net.to_records())?;
    }
    let marker = match trainer.best() {
        Some((val, step)) => format!("step {step} val_l_rec {val}\n"),
        None => format!("step {} val_l_rec unknown\n", outcome.steps_done),
    };
    std::fs::write(out.join("best.txt"), marker)?;

    if outcome.aborted_nan {
        return Err(Error::Runtime(
            "training aborted on a non-finite loss; last good checkpoint retained".into(),
        ));
    }
    println!("done: {} steps, best {:?}", outcome.steps_done, trainer.best());
    Ok(())
}

pub fn cmd_train_policy(config: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<()> {
    let seed = config.u("seed");
    let mut policy = PolicyNet::new(config.policy_config(), seed)?;
    let a2c_config = config.a2c_config();
    let halluc: Rc<dyn Hallucinator> = Rc::new(OracleHallucinator {
        saturation_eps: config.f("clip.saturation_eps") as f32,
    });

    let model = config.ae_model();
    let episode_config = config.clone();
    let gen = move |idx: u64| {
        let spec = episode_config.episode_spec(seed.wrapping_add(idx));
        synthesize_episode(&spec, &model).expect("episode synthesis")
    };
    let validation: Vec<_> = (0..config.u("a2c.val_episodes"))
        .map(|i| {
            let spec = config.episode_spec(seed.wrapping_add(50_000 + i));
            Ok(Rc::new(synthesize_episode(&spec, &model)?))
        })
        .collect::<Result<_>>()?;

    let resume_records = match resume {
        Some(path) => {
            let records = load_checkpoint(path)?;
            println!("resuming from {path:?}");
            Some(records)
        }
        None => None,
    };

    let log_path = out.join("train_log.jsonl");
    println!(
        "training policy: {} updates ({} env steps), {} envs",
        a2c_config.updates(),
        a2c_config.total_steps,
        a2c_config.n_envs
    );
    let outcome = train_policy_with_hooks(
        &mut policy,
        &gen,
        halluc.clone(),
        &validation,
        &a2c_config,
        resume_records.as_deref(),
        |log| {
            let _ = append_jsonl(&log_path, log);
            if log.update % 50 == 0 || log.val_mse.is_some() {
                println!(
                    "update {:>5} reward {:>9.5} push {:.3}{}",
                    log.update,
                    log.mean_reward,
                    log.push_rate,
                    log.val_mse.map(|v| format!(" val {v:.6}")).unwrap_or_default()
                );
            }
        },
        |ckpt| {
            let _ = save_checkpoint(out.join("ckpt_latest.bin"), &ckpt.records);
        },
    )?;

    // The returned policy carries the best-validation parameters.
    save_checkpoint(out.join("policy_best.bin"), &policy.to_records())?;
    let marker = match (outcome.best_val_mse, outcome.best_update) {
        (Some(val), Some(update)) => format!("update {update} val_mse {val}\n"),
        _ => format!("update {} val_mse unknown\n", outcome.updates_done),
    };
    std::fs::write(out.join("best.txt"), marker)?;

    if !validation.is_empty() {
        let final_val = evaluate_policy(&policy, &validation, halluc)?;
        println!(
            "done: {} updates, best val {:?} (returned policy scores {final_val:.6})",
            outcome.updates_done, outcome.best_val_mse
        );
    }
    if outcome.diverged {
        println!("note: run stopped early by the divergence guard");
    }
    Ok(())
}
