// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dem;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gmm;
pub mod io;
pub mod one_shot;
pub mod partition;
pub mod pca;
pub mod seed;

pub use error::{Error, Result};
