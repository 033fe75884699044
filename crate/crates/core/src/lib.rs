//! Multi-agent trajectory prediction with evolving pair-wise and group-wise
//! relational reasoning.
//!
//! The pipeline: [`data`] scenes are cut into sliding windows, the
//! [`encoder`] infers relation graphs and hypergraphs, [`evolution`] carries
//! them across windows and the [`decoder`] rolls out Gaussian futures.
//! [`train`] fits a [`model::Model`], [`sim`] generates synthetic group
//! scenes with known memberships and [`metrics`] scores predictions.

pub mod ablation;
pub mod data;
pub mod decoder;
pub mod diff;
pub mod encoder;
pub mod error;
pub mod evolution;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
