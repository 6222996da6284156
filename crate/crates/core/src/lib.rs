//! Multifidelity risk estimation for in-vehicle signage (IVS) technology.
//!
//! The crate turns low-fidelity driving-simulator speeds and high-fidelity
//! roadside counts into per-condition fatality risk:
//!
//! 1. [`data`] ingests and validates speed records, binned traffic counts and
//!    fatality curve points, and can generate a calibrated synthetic world.
//! 2. [`density`] fits Gaussian kernel density estimates and discretizes them.
//! 3. [`infotheory`] measures how well the simulator baseline approximates the
//!    real-world baseline (entropy, K-L divergence, approximation efficiency).
//! 4. [`model`] fits the quadratic baseline-to-condition speed model with
//!    k-fold cross-validation.
//! 5. [`fatality`] fits probit fatality curves per crash type.
//! 6. [`risk`] builds the per-condition speed distributions and runs the
//!    Monte-Carlo expected-value simulation.
//! 7. [`pipeline`] wires the stages together and writes artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod density;
pub mod error;
pub mod fatality;
pub mod infotheory;
pub mod model;
pub mod pipeline;
pub mod risk;
pub mod rng;

pub use data::{BinnedZoneCount, Condition, Fidelity, SpeedRecord, TechGroup};
pub use density::{Density, DiscreteDistribution};
pub use error::{Error, Result};
pub use fatality::{CrashType, CurvePoint, FatalityCurve};
pub use infotheory::FidelityReport;
pub use model::{Coefficients, ModelWeights, TrainingRow};
pub use pipeline::RunConfig;
pub use risk::{ConditionDistributions, RiskEstimate, ZoneMarginal};
