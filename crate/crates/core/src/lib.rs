//! Delayed-feedback conversion-rate prediction with elapsed-time sampling.
//!
//! The crate is organised along the data path: [`datagen`] produces click
//! streams, [`relabel`] turns them into what each training method observes,
//! [`learner`] is the CVR model, [`weighters`] supplies importance weights and
//! their estimators, [`methods`] wires the compared methods together and
//! [`protocol`] runs the hourly train/evaluate loop and computes metrics.

pub mod datagen;
pub mod error;
pub mod learner;
pub mod methods;
pub mod protocol;
pub mod relabel;
pub mod weighters;

pub use error::{Error, Result};
