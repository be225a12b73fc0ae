//! Extended off-policy proximal policy optimization.
//!
//! The crate bundles everything needed to train and analyse the method on
//! desk-scale problems:
//!
//! * [`diffcore`]: dense networks with exact reverse-mode gradients and an
//!   adaptive optimizer.
//! * [`policy`]: categorical and Gaussian policies, ratios and KL.
//! * [`envs`]: toy environments and a vectorized pool.
//! * [`advantage`]: generalized advantage estimation.
//! * [`buffer`]: the generation replay buffer.
//! * [`objective`]: the extended-ratio and clipped surrogates.
//! * [`trainer`]: online and offline training loops.
//! * [`verifier`]: exact tabular checks of the improvement lower bounds.

pub mod advantage;
pub mod buffer;
pub mod checkpoint;
pub mod dataset;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod objective;
pub mod policy;
pub mod trainer;
pub mod verifier;

pub use error::{Error, Result};
