//! Knowledge base completion with a weighted graph convolutional encoder and a
//! translational convolutional decoder, trained 1-N and evaluated by filtered
//! ranking.

pub mod baselines;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod nn;
pub mod real;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use real::{Dtype, Real};
