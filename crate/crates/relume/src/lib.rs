//! Online hallucination of overexposed pixels in LDR video streams.
//!
//! The pipeline works in the linear radiance domain end to end:
//!
//! * [`imaging`] — HDR/LDR frame types, exposure arithmetic, percentile
//!   clipping, saturation masks, compositing and quality metrics.
//! * [`patches`] — overlapped patch extraction (unfold), summed
//!   recomposition (fold) and bilinear resampling.
//! * [`nn`] — a small f64 tensor graph with reverse-mode differentiation
//!   and the layer set used by the networks.
//! * [`halluc`] — the reference-based multiscale transformer that fills
//!   saturated regions, its losses, training loop and a closed-form
//!   copy-paste stand-in used as the fast reward model.
//! * [`autoexposure`] — a first-order autoexposure simulator plus a
//!   procedural scene generator that together synthesize training and
//!   evaluation episodes.
//! * [`frame_select`] — the reference-frame-selection decision process:
//!   buffers, push/no-push transitions, rewards, baseline policies and
//!   the offline exhaustive search.
//! * [`policy`] — the frame-selection network (shared conv encoder,
//!   128-wide trunk, value and push-probability heads).
//! * [`a2c`] — synchronous advantage actor-critic training over a pool
//!   of independent environments.
//! * [`config`] / [`cli`] — key/value run configuration and the command
//!   line entry points.

pub mod a2c;
pub mod autoexposure;
pub mod cli;
pub mod config;
pub mod error;
pub mod frame_select;
pub mod halluc;
pub mod imaging;
pub mod nn;
pub mod patches;
pub mod policy;

pub use error::{Error, Result};
