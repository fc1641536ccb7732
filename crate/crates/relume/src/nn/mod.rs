//! Minimal f64 tensor algebra with reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape: every operation computes its value
//! eagerly and records what it needs for the backward sweep. Parameters
//! live outside the graph in a [`ParamSet`] and are bound as leaves at the
//! start of each forward pass; after [`Graph::backward`] their gradients
//! are read back out through the [`Binding`].
//!
//! Everything is single-threaded and allocation-order deterministic:
//! identical seeds produce bit-identical trajectories.

mod checkpoint;
mod graph;
mod layers;
mod optim;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Record, CHECKPOINT_MAGIC};
pub use graph::{Graph, TensorId};
pub use layers::{
    attention, attention_with_probs, bernoulli_entropy, bernoulli_log_prob, linear,
    DownsampleBlock, MlpActivation, MultiHeadAttention, RpbSpec, TransformerBlock, LEAKY_SLOPE,
};
pub use optim::{clip_global_norm, Adam, RmsProp};
pub use params::{Binding, ParamSet};
