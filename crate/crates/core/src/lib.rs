//! Projected Wasserstein gradient flows on two-layer ReLU pushforward maps in one dimension.

pub mod dynamics;
pub mod error;
pub mod functionals;
pub mod metric;
pub mod network;
pub mod oracles;
pub mod reference;
pub mod samples;

pub use error::{Result, WgfError};
pub use network::{NetworkParams, Subset};
pub use reference::{Barenblatt, ReferenceDensity, StandardGaussian};
