//! Crop-mask intercomparison toolkit.
//!
//! Binarizes land-cover products into crop/non-crop masks, scores them against
//! labeled reference points with standard errors, and measures how much the
//! products agree with each other.
//!
//! | module | what it covers |
//! |---|---|
//! | [`grid`] | raster model, GeoTIFF and GeoJSON input, resampling, polygon burn-in, clipping |
//! | [`productmap`] | product registry, binarization rules, mode compositing, point extraction |
//! | [`reference`] | reference datasets, label consolidation, uniform and stratified sampling |
//! | [`assess`] | error matrices, accuracy/precision/recall/F1 with standard errors |
//! | [`consensus`] | vote counts, majority-vote ensembles, agreement summaries and matrices |
//! | [`analysis`] | correlation against resolution and temporal mismatch, masked index time series |
//! | [`cli`] | the JSON-configured pipeline behind the `cropeval` binary |
//!
//! Runnable walkthroughs for each area live in the crate's `examples/` directory.

pub mod analysis;
pub mod assess;
pub mod cli;
pub mod consensus;
pub mod error;
pub mod grid;
pub mod productmap;
pub mod reference;
pub mod report;
pub mod synthetic;

pub use error::{Error, Result};
