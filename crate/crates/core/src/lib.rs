#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fit;
pub mod graph;
pub mod inference;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod modifiers;
pub mod simulator;
pub mod sparse;
pub mod spline;
pub mod stats;

pub use error::{Error, Result};
