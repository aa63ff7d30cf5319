//! Data loading, benchmarks, training and grid search on top of `gradpack-core`.
//!
//! Every command produces a [`record::RunRecord`]; the `gradpack` binary is a
//! thin argument parser over these functions.

pub mod bench;
pub mod data;
pub mod grid;
pub mod record;
pub mod timing;
pub mod train;
