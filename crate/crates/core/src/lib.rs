//! Attention-guided image-token selection, attention masking and contrastive
//! decoding with an adaptive plausibility constraint, run on a tiny
//! deterministic decoder, plus POPE / MME / CHAIR metrics and attention heatmaps.

pub mod decoder;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod selection;
pub mod taxonomy;
pub mod viz;

pub use error::{Error, Result};
