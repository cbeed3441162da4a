//! Spatial balance of survey samples.
//!
//! Measures how well a sample is spread over a planar population with three
//! indices (the normalized Moran index `I_B`, the classical Moran's I of the
//! sample indicator, and the Voronoi `B` index), and provides the sampling
//! designs and point-process populations needed to study them by simulation.

pub mod designs;
pub mod error;
pub mod frame;
pub mod genpop;
pub mod indices;
pub mod simharness;
pub mod spatial;
pub mod weights;

pub use designs::{DesignSpec, RngStream, SampleSelection, Sampler};
pub use error::{Error, Result};
pub use frame::{PopulationFrame, SizeVariable};
pub use indices::{
    moran_i, moran_normalized, spatial_balance_ib, spatial_balance_voronoi, BalanceReport,
};
pub use weights::WeightsMatrix;
