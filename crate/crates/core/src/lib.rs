// Negated comparisons are how NaN inputs get rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod jensen;
pub mod loss;
pub mod noise_models;
pub mod oracle;
pub mod search;
pub mod tonemap;
pub mod trainer;

pub use error::{Error, Result};
pub use tonemap::ToneMap;
