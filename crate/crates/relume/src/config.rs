//! Plain-text key/value run configuration.
//!
//! A config file holds `key = value` lines (`#` starts a comment). Every
//! key is validated against the schema below; unknown keys are rejected so
//! typos fail loudly. Every tunable default of the pipeline lives here.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::autoexposure::{AutoExposureModel, EpisodeSpec, IllumParams};
use crate::error::{Error, Result};
use crate::halluc::{HallucConfig, LossMode, TrainSchedule};
use crate::imaging::ClipParams;
use crate::nn::MlpActivation;
use crate::a2c::A2cConfig;
use crate::policy::PolicyConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Value {
    U(u64),
    F(f64),
    B(bool),
    S(&'static str),
}

struct SchemaEntry {
    key: &'static str,
    default: Value,
    help: &'static str,
}

/// Full schema: one entry per tunable, defaults as documented.
const SCHEMA: &[SchemaEntry] = &[
    SchemaEntry { key: "seed", default: Value::U(0), help: "master seed; all randomness derives from it" },
    // imaging / clipping
    SchemaEntry { key: "clip.ldr_percentile", default: Value::F(85.0), help: "pooled percentile mapped to LDR white" },
    SchemaEntry { key: "clip.gt_percentile", default: Value::F(95.0), help: "pooled percentile capping the ground truth" },
    SchemaEntry { key: "clip.saturation_eps", default: Value::F(1e-3), help: "channel threshold 1-eps marks saturation" },
    SchemaEntry { key: "blend.ramp_frames", default: Value::U(5), help: "linear blend length after a reference switch" },
    SchemaEntry { key: "tonemap.smooth_beta", default: Value::F(0.2), help: "EMA coefficient for tone-map parameters" },
    SchemaEntry { key: "png.gamma", default: Value::F(2.0), help: "display gamma used for PNG storage" },
    // hallucination network
    SchemaEntry { key: "halluc.n_blocks", default: Value::U(8), help: "transformer depth" },
    SchemaEntry { key: "halluc.patch", default: Value::U(7), help: "square patch size" },
    SchemaEntry { key: "halluc.stride", default: Value::U(3), help: "patch stride (patch-overlap = patch-stride)" },
    SchemaEntry { key: "halluc.n_scales", default: Value::U(3), help: "1 = single scale, 3 = multiscale embeddings" },
    SchemaEntry { key: "halluc.embed_channels", default: Value::U(4), help: "feature channels per embedding scale" },
    SchemaEntry { key: "halluc.n_heads", default: Value::U(4), help: "attention heads" },
    SchemaEntry { key: "halluc.refine_channels", default: Value::U(16), help: "refinement conv width" },
    SchemaEntry { key: "halluc.use_rpb", default: Value::B(false), help: "relative position bias instead of absolute" },
    SchemaEntry { key: "halluc.rpb_inside_scale", default: Value::B(true), help: "bias shares the 1/sqrt(d) scaling" },
    SchemaEntry { key: "halluc.max_rel_offset", default: Value::U(8), help: "relative offset clamp" },
    SchemaEntry { key: "halluc.max_grid", default: Value::U(32), help: "absolute position table side" },
    SchemaEntry { key: "halluc.mlp_activation", default: Value::S("gelu"), help: "gelu | leaky_relu" },
    SchemaEntry { key: "halluc.lambda_rec", default: Value::F(1.0), help: "reconstruction loss weight" },
    SchemaEntry { key: "halluc.lambda_adv", default: Value::F(0.01), help: "adversarial loss weight (0 disables the GAN)" },
    SchemaEntry { key: "halluc.loss_mode", default: Value::S("mol"), help: "mol | full" },
    SchemaEntry { key: "halluc.exposure_jitter_min", default: Value::F(0.25), help: "training exposure jitter, low end" },
    SchemaEntry { key: "halluc.exposure_jitter_max", default: Value::F(4.0), help: "training exposure jitter, high end" },
    // hallucination training
    SchemaEntry { key: "train_halluc.resolution", default: Value::U(32), help: "training crop resolution" },
    SchemaEntry { key: "train_halluc.phase1_steps", default: Value::U(600), help: "inpainting pretraining steps" },
    SchemaEntry { key: "train_halluc.phase1_lr", default: Value::F(1e-4), help: "pretraining learning rate" },
    SchemaEntry { key: "train_halluc.phase2_steps", default: Value::U(200), help: "HDR fine-tuning steps" },
    SchemaEntry { key: "train_halluc.phase2_lr", default: Value::F(1e-5), help: "fine-tuning learning rate" },
    SchemaEntry { key: "train_halluc.disc_lr", default: Value::F(1e-4), help: "discriminator learning rate" },
    SchemaEntry { key: "train_halluc.val_interval", default: Value::U(100), help: "steps between validation passes" },
    SchemaEntry { key: "train_halluc.val_pairs", default: Value::U(8), help: "held-out validation pairs" },
    SchemaEntry { key: "train_halluc.checkpoint_interval", default: Value::U(200), help: "steps between checkpoints" },
    SchemaEntry { key: "train_halluc.pool_scenes", default: Value::U(8), help: "synthetic scenes in the training pool" },
    SchemaEntry { key: "train_halluc.pool_frames", default: Value::U(6), help: "frames per pooled scene" },
    // autoexposure + episodes
    SchemaEntry { key: "ae.tau", default: Value::F(4.0), help: "autoexposure time constant, frames" },
    SchemaEntry { key: "ae.setpoint", default: Value::F(0.4), help: "target mean luminance" },
    SchemaEntry { key: "ae.e_min", default: Value::F(1.0 / 64.0), help: "exposure lower bound" },
    SchemaEntry { key: "ae.e_max", default: Value::F(64.0), help: "exposure upper bound" },
    SchemaEntry { key: "illum.mean_gap", default: Value::F(20.0), help: "mean frames between illumination changes" },
    SchemaEntry { key: "illum.mult_min", default: Value::F(0.16666666666666666), help: "illumination multiplier, low end" },
    SchemaEntry { key: "illum.mult_max", default: Value::F(6.0), help: "illumination multiplier, high end" },
    SchemaEntry { key: "episode.length", default: Value::U(150), help: "frames per episode" },
    SchemaEntry { key: "episode.width", default: Value::U(64), help: "frame width" },
    SchemaEntry { key: "episode.height", default: Value::U(64), help: "frame height" },
    SchemaEntry { key: "episode.count", default: Value::U(4), help: "episodes written by synth-episodes" },
    // policy network
    SchemaEntry { key: "policy.input_res", default: Value::U(64), help: "policy input resolution (luminance)" },
    SchemaEntry { key: "policy.conv1", default: Value::U(4), help: "encoder stage 1 channels" },
    SchemaEntry { key: "policy.conv2", default: Value::U(8), help: "encoder stage 2 channels" },
    SchemaEntry { key: "policy.conv3", default: Value::U(16), help: "encoder stage 3 channels" },
    SchemaEntry { key: "policy.trunk_width", default: Value::U(128), help: "shared trunk width" },
    // a2c
    SchemaEntry { key: "a2c.n_envs", default: Value::U(8), help: "parallel environments" },
    SchemaEntry { key: "a2c.learning_rate", default: Value::F(7e-5), help: "RMS-style optimizer learning rate" },
    SchemaEntry { key: "a2c.n_steps", default: Value::U(5), help: "rollout length per environment" },
    SchemaEntry { key: "a2c.gamma", default: Value::F(0.99), help: "discount" },
    SchemaEntry { key: "a2c.gae_lambda", default: Value::F(1.0), help: "1.0 reduces GAE to n-step returns" },
    SchemaEntry { key: "a2c.value_coef", default: Value::F(0.5), help: "value loss weight" },
    SchemaEntry { key: "a2c.entropy_coef", default: Value::F(0.0), help: "entropy bonus weight" },
    SchemaEntry { key: "a2c.max_grad_norm", default: Value::F(0.5), help: "global gradient clip" },
    SchemaEntry { key: "a2c.total_steps", default: Value::U(40_000), help: "total environment steps" },
    SchemaEntry { key: "a2c.eval_interval", default: Value::U(50), help: "updates between validations" },
    SchemaEntry { key: "a2c.val_episodes", default: Value::U(10), help: "held-out validation episodes" },
    // evaluation
    SchemaEntry { key: "eval.episodes", default: Value::U(20), help: "evaluation episode count" },
    SchemaEntry { key: "eval.episode_offset", default: Value::U(100_000), help: "seed offset of the evaluation set" },
    SchemaEntry { key: "eval.every_k", default: Value::U(10), help: "k of the every-k baseline" },
    SchemaEntry { key: "eval.random_p", default: Value::F(0.5), help: "p of the random-push baseline" },
    SchemaEntry { key: "eval.apost_window", default: Value::U(0), help: "a-posteriori window; 0 = full past" },
    SchemaEntry { key: "eval.hallucinator", default: Value::S("oracle"), help: "oracle | network" },
];

/// Parsed, schema-validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: HashMap<String, Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = SCHEMA.iter().map(|e| (e.key.to_string(), e.default)).collect();
        Self { values }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        Self::from_str_content(&text)
    }

    pub fn from_str_content(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Sets one key from its textual form, enforcing the schema type.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let entry = SCHEMA
            .iter()
            .find(|e| e.key == key)
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        let parsed = match entry.default {
            Value::U(_) => Value::U(
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: expected an unsigned integer")))?,
            ),
            Value::F(_) => Value::F(
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: expected a number")))?,
            ),
            Value::B(_) => Value::B(
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: expected true/false")))?,
            ),
            Value::S(_) => {
                let leaked: &'static str = Box::leak(value.to_string().into_boxed_str());
                Value::S(leaked)
            }
        };
        self.values.insert(key.to_string(), parsed);
        Ok(())
    }

    pub fn u(&self, key: &str) -> u64 {
        match self.values.get(key) {
            Some(Value::U(v)) => *v,
            other => panic!("config key {key}: not an integer ({other:?})"),
        }
    }

    pub fn usize(&self, key: &str) -> usize {
        self.u(key) as usize
    }

    pub fn f(&self, key: &str) -> f64 {
        match self.values.get(key) {
            Some(Value::F(v)) => *v,
            Some(Value::U(v)) => *v as f64,
            other => panic!("config key {key}: not a number ({other:?})"),
        }
    }

    pub fn b(&self, key: &str) -> bool {
        match self.values.get(key) {
            Some(Value::B(v)) => *v,
            other => panic!("config key {key}: not a bool ({other:?})"),
        }
    }

    pub fn s(&self, key: &str) -> &str {
        match self.values.get(key) {
            Some(Value::S(v)) => v,
            other => panic!("config key {key}: not a string ({other:?})"),
        }
    }

    /// Cross-field validation beyond per-key types.
    pub fn validate(&self) -> Result<()> {
        self.clip_params().validate()?;
        self.halluc_config()?.validate()?;
        self.ae_model().validate()?;
        self.policy_config().validate()?;
        if self.usize("episode.length") < 4 {
            return Err(Error::Config("episode.length must be >= 4".into()));
        }
        if self.u("blend.ramp_frames") == 0 {
            return Err(Error::Config("blend.ramp_frames must be >= 1".into()));
        }
        match self.s("eval.hallucinator") {
            "oracle" | "network" => {}
            other => {
                return Err(Error::Config(format!(
                    "eval.hallucinator must be oracle or network, got {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn clip_params(&self) -> ClipParams {
        ClipParams {
            ldr_percentile: self.f("clip.ldr_percentile"),
            gt_percentile: self.f("clip.gt_percentile"),
            saturation_eps: self.f("clip.saturation_eps") as f32,
        }
    }

    pub fn halluc_config(&self) -> Result<HallucConfig> {
        let activation = MlpActivation::parse(self.s("halluc.mlp_activation"))
            .ok_or_else(|| Error::Config("halluc.mlp_activation must be gelu or leaky_relu".into()))?;
        let loss_mode = LossMode::parse(self.s("halluc.loss_mode"))
            .ok_or_else(|| Error::Config("halluc.loss_mode must be mol or full".into()))?;
        Ok(HallucConfig {
            n_blocks: self.usize("halluc.n_blocks"),
            patch_h: self.usize("halluc.patch"),
            patch_w: self.usize("halluc.patch"),
            stride_h: self.usize("halluc.stride"),
            stride_w: self.usize("halluc.stride"),
            n_scales: self.usize("halluc.n_scales"),
            embed_channels: self.usize("halluc.embed_channels"),
            n_heads: self.usize("halluc.n_heads"),
            refine_channels: self.usize("halluc.refine_channels"),
            use_rpb: self.b("halluc.use_rpb"),
            rpb_inside_scale: self.b("halluc.rpb_inside_scale"),
            max_rel_offset: self.usize("halluc.max_rel_offset"),
            max_grid: self.usize("halluc.max_grid"),
            mlp_activation: activation,
            lambda_rec: self.f("halluc.lambda_rec"),
            lambda_adv: self.f("halluc.lambda_adv"),
            loss_mode,
        })
    }

    pub fn train_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            phase1_steps: self.u("train_halluc.phase1_steps"),
            phase1_lr: self.f("train_halluc.phase1_lr"),
            phase2_steps: self.u("train_halluc.phase2_steps"),
            phase2_lr: self.f("train_halluc.phase2_lr"),
            val_interval: self.u("train_halluc.val_interval"),
            disc_lr: self.f("train_halluc.disc_lr"),
        }
    }

    pub fn ae_model(&self) -> AutoExposureModel {
        AutoExposureModel {
            tau: self.f("ae.tau"),
            setpoint: self.f("ae.setpoint"),
            e_min: self.f("ae.e_min"),
            e_max: self.f("ae.e_max"),
        }
    }

    pub fn illum_params(&self) -> IllumParams {
        IllumParams {
            mean_gap: self.f("illum.mean_gap"),
            mult_min: self.f("illum.mult_min"),
            mult_max: self.f("illum.mult_max"),
        }
    }

    /// Episode spec for a given seed, carrying all schedule parameters.
    pub fn episode_spec(&self, seed: u64) -> EpisodeSpec {
        let mut spec = EpisodeSpec::new(
            seed,
            self.usize("episode.length"),
            self.usize("episode.width"),
            self.usize("episode.height"),
        );
        spec.illum = self.illum_params();
        spec.saturation_eps = self.f("clip.saturation_eps") as f32;
        spec.gt_percentile = self.f("clip.gt_percentile");
        spec
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            input_res: self.usize("policy.input_res"),
            conv_channels: [
                self.usize("policy.conv1"),
                self.usize("policy.conv2"),
                self.usize("policy.conv3"),
            ],
            trunk_width: self.usize("policy.trunk_width"),
        }
    }

    pub fn a2c_config(&self) -> A2cConfig {
        A2cConfig {
            n_envs: self.usize("a2c.n_envs"),
            learning_rate: self.f("a2c.learning_rate"),
            n_steps: self.usize("a2c.n_steps"),
            gamma: self.f("a2c.gamma"),
            gae_lambda: self.f("a2c.gae_lambda"),
            value_coef: self.f("a2c.value_coef"),
            entropy_coef: self.f("a2c.entropy_coef"),
            max_grad_norm: self.f("a2c.max_grad_norm"),
            total_steps: self.u("a2c.total_steps"),
            eval_interval: self.u("a2c.eval_interval"),
            seed: self.u("seed"),
        }
    }

    /// Renders the full configuration (defaults plus overrides) as a config
    /// file, one commented entry per key in schema order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for entry in SCHEMA {
            let value = self.values.get(entry.key).unwrap_or(&entry.default);
            let text = match value {
                Value::U(v) => v.to_string(),
                Value::F(v) => format!("{v}"),
                Value::B(v) => v.to_string(),
                Value::S(v) => v.to_string(),
            };
            let _ = writeln!(out, "# {}", entry.help);
            let _ = writeln!(out, "{} = {}", entry.key, text);
        }
        out
    }
}
