// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod experiment;
pub mod fock;
pub mod lock;
pub mod node;
pub mod optics;
pub mod polarization;
pub mod serde_util;

pub use error::{Error, Result};
