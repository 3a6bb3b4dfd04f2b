//! System identification for hydraulically driven soft actuators.
//!
//! Pressure is modelled as a function of injected volume `v` and flow `v̇`
//! (optionally with lagged inputs). The crate loads and segments recorded
//! cycles, fits exponential, polynomial and neural-network families, ranks
//! them by RMSE, adjusted R², AICc and BIC, and derives stiffness, damping,
//! structural-break tests and external-force estimates from the winner. A
//! simulator with a known ground truth backs every fitting routine.

pub mod applications;
pub mod dataset;
pub mod domain;
pub mod fitting;
pub mod models;
pub mod selection;
pub mod simulator;
pub mod stats;

pub use domain::{Dataset, Phase, Sample, Trajectory};
pub use fitting::{fit, FitConfig, FitError};
pub use models::{Family, FittedModel, ModelSpec};
pub use selection::{evaluate, FitReport, GridResult, Weights};
