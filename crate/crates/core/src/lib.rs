//! Cross-prompt universal adversarial perturbations against a small
//! memory-based promptable video segmenter.

pub mod attack;
pub mod autograd;
pub mod cli;
pub mod defenses;
pub mod error;
pub mod evalharness;
pub mod fsutil;
pub mod losses;
pub mod mask;
pub mod prompts;
pub mod segmodel;
pub mod synthclip;
pub mod tensor;

pub use error::{Error, Result};
