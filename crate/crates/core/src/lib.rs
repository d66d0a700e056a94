//! Video rain removal by superpixel alignment and a small CNN that restores
//! detail lost by temporal averaging.
//!
//! The per-frame pipeline: segment the current frame into superpixels, align
//! each one against neighbouring frames, detect rain from temporal
//! fluctuation, build the feature stack and predict the derained patch.

pub mod alignment;
pub mod cnn;
pub mod error;
pub mod eval;
pub mod features;
pub mod frame_io;
pub mod pipeline;
pub mod rainmask;
pub mod superpixel;
pub mod synth;

pub use error::{Error, Result};
