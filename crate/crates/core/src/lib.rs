//! Pseudo empirical likelihood inference for the average treatment effect.

pub mod bootstrap;
pub mod data;
pub mod error;
pub mod glm;
pub mod inference;
mod linalg;
pub mod pel;
pub mod simulation;
pub mod weighting;

pub use data::{Arm, ColumnSet, Dataset, SeedSpec};
pub use error::{PelError, Result};
pub use glm::{LinearFit, LogisticFit, ModelFits, ModelSpec};
pub use pel::{PelConfig, PelInterval, PelSolution};
pub use weighting::{
    ConfidenceInterval, EstimateReport, Estimator, Method, NormalizedWeights, PointEstimate,
};
pub use bootstrap::{BootstrapPlan, BootstrapResult, BootstrapTarget};
pub use inference::{estimate_with_fits, run_estimate, InferenceOptions, IntervalKind};
pub use simulation::{DgpParams, MetricsRow, Scenario, ScenarioConfig, SimMethod};
