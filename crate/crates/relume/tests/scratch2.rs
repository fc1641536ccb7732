// Scratch: rigged-environment sign tests at desk learning rates.

use std::rc::Rc;

use relume::a2c::{evaluate_policy, train_policy, A2cConfig};
use relume::autoexposure::Episode;
use relume::frame_select::{rigged_episode, RiggedKind};
use relume::halluc::{Hallucinator, OracleHallucinator};
use relume::policy::{preprocess, PolicyConfig, PolicyNet};

fn push_rate(policy: &PolicyNet, episodes: &[Rc<Episode>]) -> f64 {
    use relume::frame_select::{FrameSelectEnv, ReferenceMode};
    let oracle: Rc<dyn Hallucinator> = Rc::new(OracleHallucinator::default());
    let mut pushes = 0usize;
    let mut total = 0usize;
    for ep in episodes {
        let mut env = FrameSelectEnv::new(ep.clone(), oracle.clone(), ReferenceMode::Normal)
            .unwrap();
        loop {
            let action = {
                let state = env.state();
                let input = preprocess(&state, policy.config.input_res);
                policy.forward(&input).deterministic_action()
            };
            pushes += action as usize;
            total += 1;
            if env.step(action).unwrap().done {
                break;
            }
        }
    }
    pushes as f64 / total as f64
}

fn run_rigged(kind: RiggedKind, lr: f64, total_steps: u64) -> (f64, f64) {
    let gen = move |idx: u64| rigged_episode(kind, idx, 40, 32, 32);
    let validation: Vec<Rc<Episode>> =
        (500..504u64).map(|s| Rc::new(rigged_episode(kind, s, 40, 32, 32))).collect();
    let oracle: Rc<dyn Hallucinator> = Rc::new(OracleHallucinator::default());
    let mut policy = PolicyNet::new(
        PolicyConfig { input_res: 32, conv_channels: [3, 6, 12], trunk_width: 32 },
        7,
    )
    .unwrap();
    let cfg = A2cConfig {
        n_envs: 8,
        n_steps: 5,
        learning_rate: lr,
        total_steps,
        eval_interval: 20,
        seed: 3,
        ..A2cConfig::default()
    };
    let t0 = std::time::Instant::now();
    train_policy(&mut policy, &gen, oracle.clone(), &validation, &cfg, |_| {}).unwrap();
    let rate = push_rate(&policy, &validation);
    let mse = evaluate_policy(&policy, &validation, oracle).unwrap();
    println!("{kind:?} lr {lr}: push rate {rate:.3}, val mse {mse:.6}, took {:?}", t0.elapsed());
    (rate, mse)
}

#[test]
#[ignore]
fn rigged_sign_probe() {
    for lr in [1e-3, 3e-3] {
        let (up, _) = run_rigged(RiggedKind::PushAlwaysOptimal, lr, 12_000);
        let (down, _) = run_rigged(RiggedKind::PushAlwaysHarmful, lr, 12_000);
        println!("lr {lr}: optimal {up:.3} harmful {down:.3}");
    }
    panic!("probe done");
}
