//! The reference-based hallucination network and everything around it:
//! losses, adversarial pair, training loop, and the closed-form copy-paste
//! stand-in used as the fast reward model inside RL episodes.

mod loss;
mod net;
mod oracle;
mod train;

pub use loss::{loss_adv, loss_disc, loss_rec, RecLoss};
pub use net::{
    attention_balance, AttentionTrace, Discriminator, HallucConfig, HallucNet, LossMode,
};
pub use oracle::{oracle_hallucinate, OracleHallucinator};
pub use train::{
    overfit_pair, predict_frame, train_hallucinator, FixedPairSource, HallucTrainer,
    HdrPairSource, InpaintPairSource, PairSource, TrainLogEntry, TrainOutcome, TrainPair,
    TrainSchedule,
};

use crate::error::Result;
use crate::imaging::{HdrFrame, LdrFrame, SatMask};

/// Anything that can fill the masked region of a frame from a reference.
pub trait Hallucinator {
    fn hallucinate(
        &self,
        cur: &LdrFrame,
        reference: &LdrFrame,
        mask: &SatMask,
    ) -> Result<HdrFrame>;
}
