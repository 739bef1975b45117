//! Multi-antenna automatic modulation recognition toolkit.
//!
//! The crate covers the full chain from waveform synthesis to evaluation:
//!
//! * [`modem`]: baseband modulators for the twelve supported modulation types.
//! * [`channel`]: per-antenna phase rotation and AWGN at a calibrated SNR.
//! * [`datagen`]: IQ extraction, multi-antenna splicing, labeled dataset
//!   generation and the binary dataset format.
//! * [`augment`]: antenna-exchange and I/Q flip augmentation.
//! * [`nn`]: a small CPU convolutional network library (ResNet56 and a
//!   desk-scale CNN) with explicit backward passes and Adam.
//! * [`pipeline`]: single-antenna, voting, weighted-average and spliced-IQ
//!   recognition strategies plus the evaluation reports.
//! * [`complexity`]: closed-form and layer-wise FLOPs/parameter accounting.

pub mod augment;
pub mod channel;
pub mod complexity;
pub mod datagen;
pub mod error;
pub mod modem;
pub mod nn;
pub mod pipeline;
mod par;

pub use error::{Error, Result};
pub use par::with_threads;
