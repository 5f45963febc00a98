//! Distantly-supervised relation extraction with multi-instance learning.
//!
//! Sentences mentioning the same entity pair are grouped into bags, bags sharing a
//! relation label into superbags, and a piecewise-CNN encoder is trained through one of
//! three selective-attention aggregators (`ATT`, `CRSA`, `C2SA`). All gradients are
//! written out by hand and checked against central finite differences.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
