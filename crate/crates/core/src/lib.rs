//! Vessel trajectory prediction with a masked patch encoder, a frozen
//! language-model prompt channel fused through cross-attention, and a
//! kinematics-guided self-paced training loop.

pub mod autograd;
pub mod data;
pub mod error;
pub mod forecaster;
pub mod fusion;
pub mod harness;
pub mod kinematics;
pub mod ksl_trainer;
pub mod masked_encoder;
pub mod nn;
pub mod prompt_lm;

pub use error::{Error, Result};
