//! Optimizers and gradient clipping.

use super::params::ParamSet;

/// Rescales `grads` so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Adam with bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let m = params.entries().iter().map(|p| vec![0.0; p.data.len()]).collect();
        let v = params.entries().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m, v }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut deltas = Vec::with_capacity(grads.len());
        for ((m, v), g) in self.m.iter_mut().zip(&mut self.v).zip(grads) {
            let mut d = vec![0.0; g.len()];
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                d[i] = -self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            deltas.push(d);
        }
        params.apply_deltas(&deltas);
    }

    /// Serializes moments + step counter as checkpoint records, so training
    /// can resume bit-for-bit.
    pub fn state_records(&self, params: &ParamSet) -> Vec<super::Record> {
        let mut records = Vec::new();
        records.push(super::Record {
            name: "opt.adam.t".into(),
            shape: vec![1],
            data: vec![self.t as f64],
        });
        for (p, (m, v)) in params.entries().iter().zip(self.m.iter().zip(&self.v)) {
            records.push(super::Record {
                name: format!("opt.adam.m.{}", p.name),
                shape: p.shape.clone(),
                data: m.clone(),
            });
            records.push(super::Record {
                name: format!("opt.adam.v.{}", p.name),
                shape: p.shape.clone(),
                data: v.clone(),
            });
        }
        records
    }

    pub fn load_state(&mut self, params: &ParamSet, records: &[super::Record]) {
        for rec in records {
            if rec.name == "opt.adam.t" {
                self.t = rec.data[0] as u64;
            } else if let Some(name) = rec.name.strip_prefix("opt.adam.m.") {
                if let Some(i) = params.entries().iter().position(|p| p.name == name) {
                    self.m[i] = rec.data.clone();
                }
            } else if let Some(name) = rec.name.strip_prefix("opt.adam.v.") {
                if let Some(i) = params.entries().iter().position(|p| p.name == name) {
                    self.v[i] = rec.data.clone();
                }
            }
        }
    }
}

/// RMSprop as used by stock synchronous actor-critic setups:
/// square-average with `alpha`, no momentum, epsilon outside the root.
pub struct RmsProp {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    sq: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let sq = params.entries().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self { lr, alpha: 0.99, eps: 1e-5, sq }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        let mut deltas = Vec::with_capacity(grads.len());
        for (sq, g) in self.sq.iter_mut().zip(grads) {
            let mut d = vec![0.0; g.len()];
            for i in 0..g.len() {
                sq[i] = self.alpha * sq[i] + (1.0 - self.alpha) * g[i] * g[i];
                d[i] = -self.lr * g[i] / (sq[i].sqrt() + self.eps);
            }
            deltas.push(d);
        }
        params.apply_deltas(&deltas);
    }

    pub fn state_records(&self, params: &ParamSet) -> Vec<super::Record> {
        params
            .entries()
            .iter()
            .zip(&self.sq)
            .map(|(p, sq)| super::Record {
                name: format!("opt.rms.sq.{}", p.name),
                shape: p.shape.clone(),
                data: sq.clone(),
            })
            .collect()
    }

    pub fn load_state(&mut self, params: &ParamSet, records: &[super::Record]) {
        for rec in records {
            if let Some(name) = rec.name.strip_prefix("opt.rms.sq.") {
                if let Some(i) = params.entries().iter().position(|p| p.name == name) {
                    self.sq[i] = rec.data.clone();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_reduces_norm() {
        let mut grads = vec![vec![3.0, 4.0]]; // norm 5
        let pre = clip_global_norm(&mut grads, 0.5);
        assert!((pre - 5.0).abs() < 1e-12);
        let post: f64 = grads[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((post - 0.5).abs() < 1e-9);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut grads = vec![vec![0.1, 0.1]];
        clip_global_norm(&mut grads, 1.0);
        assert_eq!(grads[0], vec![0.1, 0.1]);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut params = ParamSet::new();
        params.add("x", &[1], vec![5.0]);
        let mut opt = Adam::new(&params, 0.1);
        for _ in 0..500 {
            let x = params.get("x").data[0];
            let grad = vec![vec![2.0 * x]]; // d/dx x^2
            opt.step(&mut params, &grad);
        }
        assert!(params.get("x").data[0].abs() < 0.05);
    }
}
