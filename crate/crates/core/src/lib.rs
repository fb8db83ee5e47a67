//! Functional ordinary kriging with split-conformal prediction bands.

pub mod basis;
pub mod bootstrap;
pub mod conformal;
pub mod error;
pub mod fdata;
pub mod kriging;
pub mod metrics;
mod optim;
pub mod rng;
pub mod simulate;
pub mod variogram;

pub use conformal::{conformal_predict, Case, CaseConfig, PredictionBand};
pub use error::{Error, Result, Stage};
pub use fdata::{Curve, Site, SpatialFunctionalDataset, TimeGrid};
pub use kriging::krige;
pub use variogram::{ModelFitter, VariogramModel, VariogramSettings};
