//! Desk-scale laboratory for in-context learning of n-gram Markov chains with
//! a two-attention-layer disentangled transformer.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`, which is what the training
//! drivers and the CLI use.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod exp;
pub mod gih;
pub mod info;
pub mod markov;
pub mod model;
pub mod scalar;
pub mod subsets;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use subsets::{Subset, SubsetTable};

pub type Kernel = markov::TransitionKernel<f64>;
pub type Params = model::ModelParams<f64>;
pub type Trace = model::ForwardTrace<f64>;
