//! Library surface of the CLI: dataset ingestion and the experiment harness.
//!
//! The `ksd` binary is a thin argument-parsing layer over these modules; they
//! are exposed so integration tests can drive ingestion and experiments
//! directly.

pub mod dataset;
pub mod experiment;
