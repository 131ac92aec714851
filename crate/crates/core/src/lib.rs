//! Goal-conditioned planning over replay-buffer segments.
//!
//! A learned value function gives a temporal distance, an encoder turns it
//! into a metric embedding, and retrieval stitches real logged segments into
//! long-horizon plans over a sparse roadmap.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod buffer;
mod codec;
pub mod env;
pub mod embed;
pub mod error;
pub mod harness;
pub mod nn;
pub mod per;
pub mod planners;
pub mod policy;
pub mod qlearn;
pub mod refine;
pub mod util;

pub use error::{Error, Result};
