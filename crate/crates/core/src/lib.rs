//! Rotary position embeddings with a side-information axis for
//! multi-reference, multi-shot attention.
//!
//! * [`rope`]: plane schedules, block rotations, relative-score oracle.
//! * [`sideinfo`]: presence vectors, side distances and phase codes.
//! * [`layout`]: sequence packing, token coordinates, prompt parsing.
//! * [`attention`]: rotated self-attention and masked cross-attention.
//! * [`diagnostics`]: shot-to-reference attention aggregation.
//! * [`harness`]: synthetic reference-confusion benchmark and a trainable
//!   single-head layer.

pub mod attention;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod io;
pub mod layout;
pub mod matrix;
pub mod rng;
pub mod rope;
pub mod sideinfo;

pub use error::{Error, Result};

/// Version stamp written into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
