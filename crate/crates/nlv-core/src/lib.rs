//! Estimation toolkit for two-level nested logit choice models whose
//! utilities include a latent construct scored by a single-factor
//! confirmatory factor analysis.
//!
//! The pipeline: ingest long-format choice data and an indicator panel
//! ([`data`]), fit and score the factor model ([`cfa`]), maximize the nested
//! logit likelihood ([`estimate`]) on top of the pure probability engine
//! ([`engine`]), then replicate market shares and run what-if sweeps or
//! generate synthetic datasets with known truth ([`simulate`]).

pub mod cfa;
pub mod data;
pub mod engine;
pub mod error;
pub mod estimate;
pub mod model;
pub mod optim;
pub mod report;
pub mod simulate;

pub use error::{NlvError, Result};
