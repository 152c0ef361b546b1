//! Adversarial edge masking over feature-enriched graphs for node
//! classification under structural domain shift.
//!
//! A mask network scores every edge of an enriched graph (original edges
//! plus kNN and spectral-cluster edges derived from node features); a
//! mask-aware graph attention classifier is trained to stay accurate while
//! the mask network searches for sparse masks that hurt it most.

pub mod enrich;
pub mod error;
pub mod fixtures;
pub mod grad;
pub mod graph;
pub mod masknet;
pub mod params;
pub mod synth;
pub mod tape;
pub mod tasknet;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
