//! Instance-wise influential feature discovery for tabular data.
//!
//! A base classifier is pretrained, feature-level influence functions measure
//! how each feature of each training row moves the validation loss, and a
//! self-attention selector learns per-row feature masks that minimise the
//! influence-weighted selection loss. The base model is then retrained on the
//! masked data.
//!
//! Modules follow that flow: [`dataset`] → [`basenet`] → [`influence`] →
//! [`selector`] → [`pipeline`], with [`harness`] providing metrics and the
//! experiment drivers.

pub mod basenet;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod influence;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod selector;

pub use error::{Error, ErrorKind, Result};
