//! Differentially private Cox regression: input, intermediate and output
//! perturbation of survival data, with the simulation harness used to measure
//! their utility.

pub mod cox;
pub mod data;
pub mod error;
pub mod glm;
mod linalg;
pub mod mechanisms;
pub mod metrics;
pub mod perturbation;
pub mod registry;
pub mod sim;
pub mod stats;

pub use cox::{fit_cox, fit_cox_design, CoxFit, FitOptions};
pub use data::{Design, SurvivalDataset};
pub use error::{Error, Result};
pub use mechanisms::Epsilon;
pub use perturbation::PerturbationMethod;
pub use sim::{SimulationPlan, SimulationRecord};
