//! Iterated perturbed random walks on a general branching process tree.
//!
//! Simulation of generation counts `N_j(t)`, grid numerics for the renewal
//! function and the convolution powers `V_j = E N_j`, the alpha-stable limit
//! process, and the Monte Carlo comparisons between them.

pub mod branching;
pub mod error;
pub mod experiments;
pub mod models;
pub mod normalization;
pub mod renewal_numerics;
pub mod sampling;
pub mod stable_limit;

pub use branching::{simulate_counts, DecompositionSample, GenerationCounts, SimOptions};
pub use error::{Error, Result};
pub use experiments::{ExperimentConfig, ExperimentReport, Mode};
pub use models::{
    classify_conditions, make_model, ConditionReport, Dependence, EtaFamily, ModelSpec, Regime,
    SlowlyVarying, XiFamily,
};
pub use normalization::{JFunction, NormalizationPlan};
pub use renewal_numerics::{BoundConstants, GridFunction, MeanTables};
pub use sampling::{stream_for, Role, Stream, StreamKey};
pub use stable_limit::{LimitSample, StablePath, StableSpec};
