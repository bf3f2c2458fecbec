#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod operators;
pub mod parabolic;
pub mod spectral;
pub mod stationary;
pub mod validation;
pub mod waves;

pub use error::{Error, Result};
