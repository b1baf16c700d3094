//! Dual- and triple-system population size estimation with stratified
//! Poisson loglinear models, fixed and mixed (Laplace) fits, closed-form
//! estimators, and a simulation harness for comparing them.
//!
//! The numerical core is generic over [`Scalar`] (`f32`, `f64`); the
//! aliases below fix it to `f64`. Simulation is `f64` only.

pub mod error;
pub mod estimators;
pub mod glm_fit;
pub mod glmm_fit;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod scalar;
pub mod scenario;
pub mod simgen;
pub mod table_io;
pub mod table_model;

pub use error::{Error, Result};
pub use estimators::{
    chapman, fienberg_triple, lincoln_petersen, nhat_from_fixed_fit, nhat_from_mixed_fit, stratified_estimate,
    stratified_fienberg, ClosedForm, Method, PopulationEstimate, StratumEstimate,
};
pub use glm_fit::{deviance, fit_fixed, fit_fixed_with, poisson_deviance, FixedFit, IrlsOptions};
pub use glmm_fit::{
    conditional_modes, fit_mixed, fit_mixed_with, laplace_gradient, laplace_objective, predict_missing_mixed,
    ConditionalModes, MixedFit, MixedFitOptions, MixedModel, VarianceComponents,
};
pub use metrics::{anova_vca, cv, marb, mse, AnovaComponents, MetricsSummary, ReplicateGrid};
pub use scalar::Scalar;
pub use scenario::{run_scenario, Probabilities, Scenario, ScenarioConfig, ScenarioResult, StudyMethod};
pub use table_model::{
    design_matrix, observed_total, CellPattern, Design, DualStratumCounts, Lists, ModelSpec, Parameterization,
    RandomTerm, StratifiedTable, Term, TripleStratumCounts,
};

pub type Real = f64;
pub type Table = StratifiedTable<f64>;
pub type DualCounts = DualStratumCounts<f64>;
pub type TripleCounts = TripleStratumCounts<f64>;
pub type Fixed = FixedFit<f64>;
pub type Mixed = MixedFit<f64>;
pub type Estimate = PopulationEstimate<f64>;
pub type Grid = ReplicateGrid<f64>;
pub type Summary = MetricsSummary<f64>;
