//! reidrank: a self-contained deep ranking engine for person
//! re-identification.
//!
//! The crate trains a part-based convolutional network from scratch under a
//! large adaptive margin loss, generates anchor-based pair mini-batches, and
//! evaluates rankings with CMC curves and mean average precision. Everything
//! runs on the CPU in double precision; no autograd framework is involved —
//! every backward pass is hand-composed and validated against central finite
//! differences.
//!
//! Start with the runnable examples (`cargo run --example train_synthetic`)
//! or the `reidrank` binary, which exposes the same functionality as
//! subcommands.

pub mod cli;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod margin_loss;
pub mod network;
pub mod sampler;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
