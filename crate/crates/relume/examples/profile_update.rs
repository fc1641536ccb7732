// quick timing probe
use std::time::Instant;
fn main() {
    use relume::policy::{PolicyConfig, PolicyNet, PolicyInput};
    use relume::a2c::*;
    let policy = PolicyNet::new(PolicyConfig::default(), 1).unwrap();
    let inputs: Vec<PolicyInput> = (0..40).map(|i| PolicyInput { planes: vec![0.3 + i as f64 * 0.001; 4*64*64], res: 64 }).collect();
    let t0 = Instant::now();
    for _ in 0..5 {
        let mut g = relume::nn::Graph::new();
        let (v, l, binding) = policy.forward_batch(&mut g, &inputs, true);
        let sv = g.sum_all(v); let sl = g.sum_all(l); let tot = g.add(sv, sl);
        g.backward(tot);
        let _ = policy.params.grads(&g, &binding);
    }
    println!("fwd+bwd batch40: {:?}/iter", t0.elapsed() / 5);
}
