#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod boxmin;
mod dense;
pub mod design;
pub mod error;
pub mod fit;
pub mod formula;
pub mod inference;
pub mod lmm;
mod math;
pub mod pairs;
pub mod pairwise;
pub mod reference;
pub mod sample;
pub mod stats;

pub use error::{Error, Result};
