//! Search-based image enhancement engine.
//!
//! Enhances an image by searching sequences of discrete editing operations
//! with a Monte Carlo Tree Search guided by a trainable policy-value
//! evaluator, and reports the operator sequence alongside each result.
//!
//! Modules:
//! - [`image`]: the `[0, 1]` RGB raster, color conversions, resizing.
//! - [`io`]: PNG / PPM load and save.
//! - [`ops`]: the operator catalogs and their application.
//! - [`filter`]: spatial filters used by the catalog.
//! - [`metrics`]: terminal return, MSE, PSNR, SSIM, delta E.
//! - [`evaluator`]: the trainable policy-value network.
//! - [`mcts`]: the tree search.
//! - [`pipeline`]: training rounds and the three inference strategies.

pub mod error;
pub mod evaluator;
pub mod filter;
pub mod image;
pub mod io;
pub mod mcts;
pub mod metrics;
pub mod ops;
pub mod pipeline;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use image::Image;
