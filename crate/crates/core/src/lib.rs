//! Stochastic Volterra/Kautz identification of a cracked Duffing oscillator
//! and novelty-based damage detection.
//!
//! The pipeline: [`plant`] simulates realizations of an uncertain oscillator,
//! [`montecarlo`] identifies one Volterra model per realization on
//! [`kautz`] bases, and [`detection`] compares models against a healthy
//! reference ensemble.

pub mod detection;
pub mod error;
pub mod kautz;
pub mod montecarlo;
pub mod optim;
pub mod plant;
pub mod signals;
pub mod volterra;

pub use detection::{DetectionReport, FeatureKind, FeatureMatrix, Kde, Verdict};
pub use error::{Error, Result};
pub use kautz::{KautzBasis, KautzPoleSpec};
pub use montecarlo::{EnsembleConfig, ModelEnsemble};
pub use plant::{GammaParams, ModalEstimate, PlantParams, SimConfig, StochasticPlantSpec};
pub use signals::TimeSeries;
pub use volterra::{IdentificationSetup, PoleRelations, VolterraModel};
