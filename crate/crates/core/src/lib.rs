//! Estimation toolkit for the cost of MEV transaction re-ordering.
//!
//! The crate joins finalized block data with mempool first-sighting times,
//! fits daily ordered-probit models of where a transaction lands in its
//! block, turns the fitted marginal effects into gas and USD costs, and runs
//! the sandwich-attack and builder-concentration analyses. A seeded
//! generator produces complete synthetic bundles in the ingest formats.

pub mod concentration;
pub mod dataset;
pub mod effects;
pub mod error;
pub mod ingest;
pub mod labels;
pub mod normal;
pub mod pipeline;
pub mod position;
pub mod probit;
mod reduce;
pub mod sandwich;
pub mod stats;
pub mod synth;
pub mod types;
pub mod units;
pub mod validate;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use labels::{classify_address, Label, LabelRegistry, LabelSet};
pub use types::{
    Address, BlockMeta, DateWindow, MempoolObs, PriceRow, PriceTable, SandwichRecord, TxHash,
    TxRecord,
};
pub use units::{Eth, Gwei, Wei};
pub use validate::{validate_dataset, ValidationReport};
