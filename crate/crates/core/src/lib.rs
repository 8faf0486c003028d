#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluate;
pub mod eventstudy;
pub mod features;
pub mod filings;
pub mod learn;
pub mod linalg;
pub mod marketdata;
pub mod pipeline;
pub mod strata;
pub mod synth;

pub use error::{Error, Result};
