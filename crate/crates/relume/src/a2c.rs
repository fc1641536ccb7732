//! Synchronous advantage actor-critic over a pool of independent
//! frame-selection environments: n-step rollouts, bootstrapped returns,
//! advantage baseline, combined policy/value/entropy loss, global-norm
//! clipping and an RMS-style adaptive optimizer.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autoexposure::Episode;
use crate::error::Result;
use crate::frame_select::{FrameSelectEnv, ReferenceMode};
use crate::halluc::Hallucinator;
use crate::nn::{
    bernoulli_entropy, bernoulli_log_prob, clip_global_norm, Graph, Record, RmsProp,
};
use crate::policy::{preprocess, sigmoid, PolicyInput, PolicyNet};

#[derive(Debug, Clone)]
pub struct A2cConfig {
    pub n_envs: usize,
    pub learning_rate: f64,
    /// Rollout length per environment between updates.
    pub n_steps: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Total environment steps across all environments.
    pub total_steps: u64,
    /// Updates between validation passes.
    pub eval_interval: u64,
    pub seed: u64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        // The published setup runs 40 environments with learning rate 7e-5
        // and stock synchronous-actor-critic defaults; 8 environments is
        // the desk-scale default.
        Self {
            n_envs: 8,
            learning_rate: 7e-5,
            n_steps: 5,
            gamma: 0.99,
            gae_lambda: 1.0,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            total_steps: 40_000,
            eval_interval: 50,
            seed: 0,
        }
    }
}

impl A2cConfig {
    pub fn updates(&self) -> u64 {
        (self.total_steps / (self.n_envs as u64 * self.n_steps as u64)).max(1)
    }
}

/// One transition as seen by the learner.
#[derive(Debug, Clone)]
pub struct RolloutEntry {
    pub input: PolicyInput,
    pub action: bool,
    pub reward: f64,
    pub value: f64,
    pub log_prob: f64,
    pub done: bool,
}

/// `entries[env][step]`, plus the bootstrap value of each environment's
/// state after the last step.
pub struct Rollout {
    pub entries: Vec<Vec<RolloutEntry>>,
    pub bootstrap: Vec<f64>,
}

/// n-step discounted returns with value bootstrap plus advantages;
/// `gae_lambda = 1` reduces the estimator to plain n-step returns minus the
/// value baseline. Episode boundaries stop both recursions.
pub fn compute_returns_and_advantages(
    rollout: &Rollout,
    config: &A2cConfig,
) -> Vec<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(rollout.entries.len());
    for (env, entries) in rollout.entries.iter().enumerate() {
        let mut pairs = vec![(0.0, 0.0); entries.len()];
        let mut next_value = rollout.bootstrap[env];
        let mut adv = 0.0;
        for (t, e) in entries.iter().enumerate().rev() {
            let nonterminal = if e.done { 0.0 } else { 1.0 };
            let delta = e.reward + config.gamma * next_value * nonterminal - e.value;
            adv = delta + config.gamma * config.gae_lambda * nonterminal * adv;
            pairs[t] = (adv + e.value, adv);
            next_value = e.value;
        }
        out.push(pairs);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    pub post_clip_norm: f64,
    pub push_rate: f64,
    pub mean_reward: f64,
    /// Set when non-finite gradients forced the step to be skipped.
    pub skipped: bool,
}

/// One gradient step on a complete rollout.
pub fn a2c_update(
    policy: &mut PolicyNet,
    opt: &mut RmsProp,
    rollout: &Rollout,
    returns_adv: &[Vec<(f64, f64)>],
    config: &A2cConfig,
) -> UpdateStats {
    let mut inputs = Vec::new();
    let mut actions = Vec::new();
    let mut advantages = Vec::new();
    let mut returns = Vec::new();
    let mut reward_sum = 0.0;
    for (entries, ra) in rollout.entries.iter().zip(returns_adv) {
        for (e, (ret, adv)) in entries.iter().zip(ra) {
            inputs.push(e.input.clone());
            actions.push(if e.action { 1.0 } else { 0.0 });
            advantages.push(*adv);
            returns.push(*ret);
            reward_sum += e.reward;
        }
    }
    let batch = inputs.len();
    let push_rate = actions.iter().sum::<f64>() / batch as f64;
    let mean_reward = reward_sum / batch as f64;

    let mut g = Graph::new().without_nan_guard();
    let (values, logits, binding) = policy.forward_batch(&mut g, &inputs, true);

    let logp = bernoulli_log_prob(&mut g, logits, &actions);
    let adv_const = g.constant(&[batch, 1], advantages);
    let weighted = g.mul(logp, adv_const);
    let weighted_mean = g.mean_all(weighted);
    let pg_loss = g.neg(weighted_mean);

    let ret_const = g.constant(&[batch, 1], returns);
    let diff = g.sub(ret_const, values);
    let sq = g.mul(diff, diff);
    let value_loss = g.mean_all(sq);

    let ent = bernoulli_entropy(&mut g, logits);
    let entropy = g.mean_all(ent);

    let value_term = g.affine(value_loss, config.value_coef, 0.0);
    let ent_term = g.affine(entropy, -config.entropy_coef, 0.0);
    let partial = g.add(pg_loss, value_term);
    let total = g.add(partial, ent_term);

    let stats_nan = UpdateStats {
        policy_loss: g.value(pg_loss),
        value_loss: g.value(value_loss),
        entropy: g.value(entropy),
        grad_norm: 0.0,
        post_clip_norm: 0.0,
        push_rate,
        mean_reward,
        skipped: true,
    };
    if !g.value(total).is_finite() {
        return stats_nan;
    }
    g.backward(total);
    let mut grads = policy.params.grads(&g, &binding);
    if grads.iter().flatten().any(|v| !v.is_finite()) {
        return stats_nan;
    }
    let grad_norm = clip_global_norm(&mut grads, config.max_grad_norm);
    let post_clip_norm =
        grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    opt.step(&mut policy.params, &grads);

    UpdateStats {
        policy_loss: stats_nan.policy_loss,
        value_loss: stats_nan.value_loss,
        entropy: stats_nan.entropy,
        grad_norm,
        post_clip_norm,
        push_rate,
        mean_reward,
        skipped: false,
    }
}

/// Deterministic episode stream for the environment pool.
pub trait EpisodeGen {
    fn episode(&self, idx: u64) -> Episode;
}

impl<F: Fn(u64) -> Episode> EpisodeGen for F {
    fn episode(&self, idx: u64) -> Episode {
        self(idx)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UpdateLog {
    pub update: u64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub push_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_mse: Option<f64>,
}

#[derive(Debug)]
pub struct A2cOutcome {
    pub updates_done: u64,
    pub best_val_mse: Option<f64>,
    pub best_update: Option<u64>,
    pub diverged: bool,
    pub skipped_updates: u64,
    /// Mean stochastic-policy episode reward per update, for trend checks.
    pub reward_curve: Vec<f64>,
}

/// Mean per-step hallucination MSE of the deterministic policy over a set
/// of episodes.
pub fn evaluate_policy(
    policy: &PolicyNet,
    episodes: &[Rc<Episode>],
    halluc: Rc<dyn Hallucinator>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut rows = 0usize;
    for episode in episodes {
        let mut env = FrameSelectEnv::new(episode.clone(), halluc.clone(), ReferenceMode::Normal)?;
        loop {
            let input = {
                let state = env.state();
                preprocess(&state, policy.config.input_res)
            };
            let action = policy.forward(&input).deterministic_action();
            let result = env.step(action)?;
            total += result.mse;
            rows += 1;
            if result.done {
                break;
            }
        }
    }
    Ok(total / rows.max(1) as f64)
}

/// Serialized A2C trainer state: policy parameters, optimizer state and
/// counters, ready for the checkpoint format.
pub struct A2cCheckpoint {
    pub update: u64,
    pub episode_counter: u64,
    pub records: Vec<Record>,
}

fn trainer_records(
    policy: &PolicyNet,
    opt: &RmsProp,
    update: u64,
    episode_counter: u64,
) -> Vec<Record> {
    let mut records = policy.to_records();
    records.push(Record { name: "a2c.update".into(), shape: vec![1], data: vec![update as f64] });
    records.push(Record {
        name: "a2c.episode_counter".into(),
        shape: vec![1],
        data: vec![episode_counter as f64],
    });
    records.extend(opt.state_records(&policy.params));
    records
}

/// On-policy training over parallel environments. Returns the policy with
/// the best validation MSE loaded back in. `resume` restores a checkpoint
/// produced by the `on_checkpoint` hook: the run continues to the same
/// total step count (environments restart on fresh episodes).
#[allow(clippy::too_many_arguments)]
pub fn train_policy_with_hooks(
    policy: &mut PolicyNet,
    gen: &dyn EpisodeGen,
    halluc: Rc<dyn Hallucinator>,
    validation: &[Rc<Episode>],
    config: &A2cConfig,
    resume: Option<&[Record]>,
    mut on_update: impl FnMut(&UpdateLog),
    mut on_checkpoint: impl FnMut(&A2cCheckpoint),
) -> Result<A2cOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = RmsProp::new(&policy.params, config.learning_rate);
    let mut episode_counter = 0u64;
    let mut start_update = 0u64;
    if let Some(records) = resume {
        policy.load_records(records)?;
        opt.load_state(&policy.params, records);
        for r in records {
            match r.name.as_str() {
                "a2c.update" => start_update = r.data[0] as u64,
                "a2c.episode_counter" => episode_counter = r.data[0] as u64,
                _ => {}
            }
        }
    }
    fn pull(gen: &dyn EpisodeGen, counter: &mut u64) -> Rc<Episode> {
        let e = gen.episode(*counter);
        *counter += 1;
        Rc::new(e)
    }
    let mut envs: Vec<FrameSelectEnv> = (0..config.n_envs)
        .map(|_| {
            FrameSelectEnv::new(
                pull(gen, &mut episode_counter),
                halluc.clone(),
                ReferenceMode::Normal,
            )
        })
        .collect::<Result<_>>()?;

    let res = policy.config.input_res;
    let updates = config.updates();
    let mut best: Option<(f64, u64, Vec<Record>)> = None;
    let mut initial_val: Option<f64> = None;
    let mut consecutive_bad = 0u32;
    let mut diverged = false;
    let mut skipped = 0u64;
    let mut reward_curve = Vec::with_capacity(updates as usize);

    let mut updates_done = start_update;
    for update in start_update..updates {
        // Collect one synchronous rollout.
        let mut entries: Vec<Vec<RolloutEntry>> =
            (0..config.n_envs).map(|_| Vec::with_capacity(config.n_steps)).collect();
        for _ in 0..config.n_steps {
            let inputs: Vec<PolicyInput> =
                envs.iter().map(|env| preprocess(&env.state(), res)).collect();
            let mut g = Graph::new();
            let (values, logits, _) = policy.forward_batch(&mut g, &inputs, false);
            let values = g.data(values).to_vec();
            let logits = g.data(logits).to_vec();
            for (i, env) in envs.iter_mut().enumerate() {
                let p = sigmoid(logits[i]);
                let action = rng.random_range(0.0..1.0) < p;
                let log_prob = if action { p.max(1e-12).ln() } else { (1.0 - p).max(1e-12).ln() };
                let result = env.step(action)?;
                entries[i].push(RolloutEntry {
                    input: inputs[i].clone(),
                    action,
                    reward: result.reward,
                    value: values[i],
                    log_prob,
                    done: result.done,
                });
                if result.done {
                    env.reset(pull(gen, &mut episode_counter))?;
                }
            }
        }
        let inputs: Vec<PolicyInput> =
            envs.iter().map(|env| preprocess(&env.state(), res)).collect();
        let mut g = Graph::new();
        let (values, _, _) = policy.forward_batch(&mut g, &inputs, false);
        let bootstrap = g.data(values).to_vec();

        let rollout = Rollout { entries, bootstrap };
        let returns_adv = compute_returns_and_advantages(&rollout, config);
        let stats = a2c_update(policy, &mut opt, &rollout, &returns_adv, config);
        if stats.skipped {
            skipped += 1;
        }
        updates_done = update + 1;
        reward_curve.push(stats.mean_reward);

        let mut log = UpdateLog {
            update,
            mean_reward: stats.mean_reward,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            push_rate: stats.push_rate,
            val_mse: None,
        };

        let eval_now = !validation.is_empty()
            && config.eval_interval > 0
            && (updates_done % config.eval_interval == 0 || updates_done == updates);
        if eval_now {
            let val = evaluate_policy(policy, validation, halluc.clone())?;
            log.val_mse = Some(val);
            if initial_val.is_none() {
                initial_val = Some(val);
            }
            if best.as_ref().map(|(b, _, _)| val < *b).unwrap_or(true) {
                best = Some((val, update, policy.to_records()));
            }
            on_checkpoint(&A2cCheckpoint {
                update: updates_done,
                episode_counter,
                records: trainer_records(policy, &opt, updates_done, episode_counter),
            });
            // Divergence guard: consistently worse than twice the first
            // measurement ends the run early.
            if val > 2.0 * initial_val.unwrap() {
                consecutive_bad += 1;
                if consecutive_bad >= 5 {
                    diverged = true;
                    on_update(&log);
                    break;
                }
            } else {
                consecutive_bad = 0;
            }
        }
        on_update(&log);
    }

    if let Some((_, _, records)) = &best {
        policy.load_records(records)?;
    }
    Ok(A2cOutcome {
        updates_done,
        best_val_mse: best.as_ref().map(|(v, _, _)| *v),
        best_update: best.as_ref().map(|(_, u, _)| *u),
        diverged,
        skipped_updates: skipped,
        reward_curve,
    })
}

/// [`train_policy_with_hooks`] without resume or checkpoint plumbing.
pub fn train_policy(
    policy: &mut PolicyNet,
    gen: &dyn EpisodeGen,
    halluc: Rc<dyn Hallucinator>,
    validation: &[Rc<Episode>],
    config: &A2cConfig,
    on_update: impl FnMut(&UpdateLog),
) -> Result<A2cOutcome> {
    train_policy_with_hooks(policy, gen, halluc, validation, config, None, on_update, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_select::{rigged_episode, RiggedKind};
    use crate::halluc::OracleHallucinator;
    use crate::policy::PolicyConfig;

    fn dummy_input(res: usize, fill: f64) -> PolicyInput {
        PolicyInput { planes: vec![fill; 4 * res * res], res }
    }

    fn entry(reward: f64, value: f64, done: bool) -> RolloutEntry {
        RolloutEntry {
            input: dummy_input(16, 0.1),
            action: true,
            reward,
            value,
            log_prob: -0.7,
            done,
        }
    }

    #[test]
    fn zero_gamma_collapses_returns_to_rewards() {
        let rollout = Rollout {
            entries: vec![vec![entry(1.0, 0.3, false), entry(-2.0, 0.1, false)]],
            bootstrap: vec![5.0],
        };
        let cfg = A2cConfig { gamma: 0.0, ..A2cConfig::default() };
        let ra = compute_returns_and_advantages(&rollout, &cfg);
        assert!((ra[0][0].0 - 1.0).abs() < 1e-12);
        assert!((ra[0][0].1 - (1.0 - 0.3)).abs() < 1e-12);
        assert!((ra[0][1].0 - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn hand_recursion_oracle() {
        // r = 1 everywhere, gamma 0.99, V = 0, bootstrap 0, horizon 3.
        let rollout = Rollout {
            entries: vec![vec![
                entry(1.0, 0.0, false),
                entry(1.0, 0.0, false),
                entry(1.0, 0.0, false),
            ]],
            bootstrap: vec![0.0],
        };
        let cfg = A2cConfig { gamma: 0.99, gae_lambda: 1.0, ..A2cConfig::default() };
        let ra = compute_returns_and_advantages(&rollout, &cfg);
        let expect = [2.9701, 1.99, 1.0];
        for (got, want) in ra[0].iter().zip(expect) {
            assert!((got.0 - want).abs() < 1e-9, "{} vs {want}", got.0);
        }
    }

    #[test]
    fn done_isolates_episode_boundaries() {
        let rollout = Rollout {
            entries: vec![vec![
                entry(1.0, 0.0, false),
                entry(10.0, 0.0, true),
                entry(-1.0, 0.0, false),
            ]],
            bootstrap: vec![100.0],
        };
        let cfg = A2cConfig { gamma: 0.9, gae_lambda: 1.0, ..A2cConfig::default() };
        let ra = compute_returns_and_advantages(&rollout, &cfg);
        // Step 1 terminates: nothing from step 2 or the bootstrap leaks in.
        assert!((ra[0][1].0 - 10.0).abs() < 1e-12);
        assert!((ra[0][0].0 - (1.0 + 0.9 * 10.0)).abs() < 1e-12);
        // Step 2 bootstraps from the post-rollout value.
        assert!((ra[0][2].0 - (-1.0 + 0.9 * 100.0)).abs() < 1e-12);
    }

    #[test]
    fn forward_and_reverse_recursions_agree() {
        let entries: Vec<RolloutEntry> = (0..7)
            .map(|i| entry((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos() * 0.2, i == 3))
            .collect();
        let rollout = Rollout { entries: vec![entries.clone()], bootstrap: vec![0.42] };
        let cfg = A2cConfig { gamma: 0.97, gae_lambda: 1.0, ..A2cConfig::default() };
        let ra = compute_returns_and_advantages(&rollout, &cfg);
        // Forward definition: R_t = sum_k gamma^k r_{t+k} up to the first
        // done, bootstrapping V at the rollout end.
        for t in 0..entries.len() {
            let mut ret = 0.0;
            let mut discount = 1.0;
            let mut k = t;
            loop {
                ret += discount * entries[k].reward;
                if entries[k].done {
                    break;
                }
                discount *= cfg.gamma;
                k += 1;
                if k == entries.len() {
                    ret += discount * 0.42;
                    break;
                }
            }
            assert!((ra[0][t].0 - ret).abs() < 1e-9, "t={t}: {} vs {ret}", ra[0][t].0);
        }
    }

    fn tiny_policy(seed: u64) -> PolicyNet {
        PolicyNet::new(
            PolicyConfig { input_res: 16, conv_channels: [2, 3, 4], trunk_width: 8 },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_advantage_leaves_only_value_loss_gradient() {
        let mut policy = tiny_policy(1);
        let mut opt = RmsProp::new(&policy.params, 1e-3);
        let rollout = Rollout {
            entries: vec![vec![entry(0.0, 0.0, false)]],
            bootstrap: vec![0.0],
        };
        let ra = vec![vec![(1.5, 0.0)]]; // return 1.5, advantage 0
        let cfg = A2cConfig::default();
        let before = policy.params.get("action.w").data.clone();
        let stats = a2c_update(&mut policy, &mut opt, &rollout, &ra, &cfg);
        assert!(!stats.skipped);
        assert!((stats.policy_loss).abs() < 1e-12);
        // Zero-initialized action head + zero advantage: no policy-gradient
        // signal reaches it.
        assert_eq!(policy.params.get("action.w").data, before);
        assert!(stats.value_loss > 0.0);
    }

    #[test]
    fn entropy_of_fresh_policy_is_ln2() {
        let mut policy = tiny_policy(2);
        let mut opt = RmsProp::new(&policy.params, 1e-4);
        let rollout =
            Rollout { entries: vec![vec![entry(0.0, 0.0, false)]], bootstrap: vec![0.0] };
        let ra = vec![vec![(0.0, 0.0)]];
        let stats = a2c_update(&mut policy, &mut opt, &rollout, &ra, &A2cConfig::default());
        assert!((stats.entropy - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn positive_advantage_increases_push_probability() {
        let mut policy = tiny_policy(3);
        let mut opt = RmsProp::new(&policy.params, 1e-3);
        let input = dummy_input(16, 0.4);
        let before = policy.forward(&input).push_prob;
        let rollout = Rollout {
            entries: vec![vec![RolloutEntry {
                input: input.clone(),
                action: true,
                reward: 1.0,
                value: 0.0,
                log_prob: 0.5f64.ln(),
                done: true,
            }]],
            bootstrap: vec![0.0],
        };
        let ra = vec![vec![(1.0, 1.0)]];
        let cfg = A2cConfig { learning_rate: 1e-3, ..A2cConfig::default() };
        for _ in 0..5 {
            a2c_update(&mut policy, &mut opt, &rollout, &ra, &cfg);
        }
        let after = policy.forward(&input).push_prob;
        assert!(after > before, "push prob did not rise: {before} -> {after}");
    }

    #[test]
    fn gradient_clipping_bounds_post_clip_norm() {
        let mut policy = tiny_policy(4);
        let mut opt = RmsProp::new(&policy.params, 1e-3);
        let rollout = Rollout {
            entries: vec![vec![RolloutEntry {
                input: dummy_input(16, 0.9),
                action: true,
                reward: -100.0,
                value: 50.0,
                log_prob: 0.5f64.ln(),
                done: true,
            }]],
            bootstrap: vec![0.0],
        };
        let ra = vec![vec![(-100.0, -150.0)]];
        let cfg = A2cConfig { max_grad_norm: 0.5, ..A2cConfig::default() };
        let stats = a2c_update(&mut policy, &mut opt, &rollout, &ra, &cfg);
        assert!(stats.grad_norm > 0.5, "test should trigger clipping");
        assert!(stats.post_clip_norm <= 0.5 + 1e-6);
    }

    #[test]
    fn collected_log_probs_match_recomputation() {
        // On-policy purity: the parameters that generated the rollout are
        // the ones the update sees.
        let mut policy = tiny_policy(5);
        let halluc: Rc<dyn Hallucinator> = Rc::new(OracleHallucinator::default());
        let gen = |idx: u64| rigged_episode(RiggedKind::PushAlwaysOptimal, idx, 8, 16, 16);
        let cfg = A2cConfig {
            n_envs: 2,
            n_steps: 3,
            total_steps: 6,
            eval_interval: 0,
            seed: 11,
            ..A2cConfig::default()
        };
        // Run one update and capture the rollout through the log hook by
        // replicating the collection manually instead.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut envs: Vec<FrameSelectEnv> = (0..cfg.n_envs)
            .map(|i| {
                FrameSelectEnv::new(
                    Rc::new(gen(i as u64)),
                    halluc.clone(),
                    ReferenceMode::Normal,
                )
                .unwrap()
            })
            .collect();
        let mut stored = Vec::new();
        for _ in 0..cfg.n_steps {
            let inputs: Vec<PolicyInput> =
                envs.iter().map(|env| preprocess(&env.state(), 16)).collect();
            let mut g = Graph::new();
            let (_, logits, _) = policy.forward_batch(&mut g, &inputs, false);
            let logits = g.data(logits).to_vec();
            for (i, env) in envs.iter_mut().enumerate() {
                let p = sigmoid(logits[i]);
                let action = rng.random_range(0.0..1.0) < p;
                let log_prob = if action { p.ln() } else { (1.0 - p).ln() };
                stored.push((inputs[i].clone(), action, log_prob));
                env.step(action).unwrap();
            }
        }
        for (input, action, log_prob) in stored {
            let p = policy.forward(&input).push_prob;
            let lp = if action { p.ln() } else { (1.0 - p).ln() };
            assert!((lp - log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_reproducible_under_seed() {
        let halluc: Rc<dyn Hallucinator> = Rc::new(OracleHallucinator::default());
        let gen = |idx: u64| rigged_episode(RiggedKind::PushAlwaysOptimal, idx, 8, 16, 16);
        let run = || {
            let mut policy = tiny_policy(6);
            let cfg = A2cConfig {
                n_envs: 2,
                n_steps: 3,
                total_steps: 60,
                eval_interval: 0,
                seed: 7,
                learning_rate: 1e-3,
                ..A2cConfig::default()
            };
            let mut curve = Vec::new();
            train_policy(&mut policy, &gen, halluc.clone(), &[], &cfg, |log| {
                curve.push((log.mean_reward, log.policy_loss, log.push_rate));
            })
            .unwrap();
            curve
        };
        assert_eq!(run(), run());
    }
}
