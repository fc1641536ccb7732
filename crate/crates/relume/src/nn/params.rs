//! Named parameter storage, seeded initialization and graph binding.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Record;
use super::graph::{Graph, TensorId};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Insertion-ordered set of named parameters. The order is the contract:
/// bindings, gradients and optimizer state all line up with it.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Tensor ids of one [`ParamSet::bind`] call, in entry order.
pub struct Binding {
    pub ids: Vec<TensorId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "param {name}: shape/data mismatch"
        );
        assert!(
            !self.index.contains_key(name),
            "param {name} registered twice"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param { name: name.to_string(), shape: shape.to_vec(), data });
    }

    /// Uniform init in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, shape, data);
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![0.0; n]);
    }

    pub fn add_ones(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![1.0; n]);
    }

    /// Small-scale init for embedding tables.
    pub fn add_table(&mut self, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-0.02..0.02)).collect();
        self.add(name, shape, data);
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown param {name}"))
    }

    pub fn get(&self, name: &str) -> &Param {
        &self.entries[self.index_of(name)]
    }

    /// Overwrites one parameter's values in place.
    pub fn set_data(&mut self, name: &str, data: Vec<f64>) {
        let i = self.index_of(name);
        assert_eq!(self.entries[i].data.len(), data.len(), "set_data: length mismatch");
        self.entries[i].data = data;
    }

    pub fn entries(&self) -> &[Param] {
        &self.entries
    }

    /// Inserts every parameter as a leaf of `g`, in entry order.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let ids = self
            .entries
            .iter()
            .map(|p| g.leaf(&p.shape, p.data.clone(), trainable))
            .collect();
        Binding { ids }
    }

    /// Tensor id of `name` inside `binding`.
    pub fn id(&self, binding: &Binding, name: &str) -> TensorId {
        binding.ids[self.index_of(name)]
    }

    /// Reads the gradients of one binding back out, aligned with entries.
    /// Missing gradients (untracked binding) come back as zeros.
    pub fn grads(&self, g: &Graph, binding: &Binding) -> Vec<Vec<f64>> {
        binding
            .ids
            .iter()
            .zip(&self.entries)
            .map(|(id, p)| g.grad(*id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; p.data.len()]))
            .collect()
    }

    /// Applies `delta` entry-wise: `data[i] += delta[i]` per parameter.
    pub fn apply_deltas(&mut self, deltas: &[Vec<f64>]) {
        assert_eq!(deltas.len(), self.entries.len());
        for (p, d) in self.entries.iter_mut().zip(deltas) {
            for (v, dv) in p.data.iter_mut().zip(d) {
                *v += dv;
            }
        }
    }

    pub fn to_records(&self) -> Vec<Record> {
        self.entries
            .iter()
            .map(|p| Record { name: p.name.clone(), shape: p.shape.clone(), data: p.data.clone() })
            .collect()
    }

    /// Restores parameter values from checkpoint records. Every parameter
    /// must be present with a matching shape; extra records are ignored.
    pub fn load_records(&mut self, records: &[Record]) -> Result<()> {
        let by_name: HashMap<&str, &Record> =
            records.iter().map(|r| (r.name.as_str(), r)).collect();
        for p in &mut self.entries {
            let rec = by_name.get(p.name.as_str()).ok_or_else(|| {
                Error::Format(format!("checkpoint is missing parameter {:?}", p.name))
            })?;
            if rec.shape != p.shape {
                return Err(Error::Format(format!(
                    "checkpoint shape mismatch for {:?}: {:?} vs {:?}",
                    p.name, rec.shape, p.shape
                )));
            }
            p.data = rec.data.clone();
        }
        Ok(())
    }
}
