//! Fixtures shared by the benchmarks.

use prwlab::{make_model, Dependence, EtaFamily, ModelSpec, XiFamily};

/// Pareto(1.5) increments with exponential perturbations.
pub fn heavy_model() -> ModelSpec {
    make_model(
        XiFamily::Pareto { alpha: 1.5, x_m: 50.0 },
        EtaFamily::Exponential { rate: 1.0 },
        Dependence::Independent,
        None,
    )
    .expect("valid fixture")
}

/// Exponential increments and perturbations with a common rate.
pub fn exp_model() -> ModelSpec {
    make_model(
        XiFamily::Exponential { rate: 1.0 },
        EtaFamily::Exponential { rate: 1.0 },
        Dependence::Independent,
        None,
    )
    .expect("valid fixture")
}
