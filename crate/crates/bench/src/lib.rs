//! Shared fixtures for the kernel benchmarks.

use regime_iter_core::model::zero_field;
use regime_iter_core::{
    GbmRegimeModel, GeneratorMatrix, Payoff, ProblemSpec, SpatialDomain,
};

pub fn two_regime_model() -> GbmRegimeModel {
    let q = GeneratorMatrix::constant(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
    GbmRegimeModel::new(q, vec![0.05, 0.05], vec![0.15, 0.25], vec![0.0, 0.0]).unwrap()
}

pub fn call_problem() -> ProblemSpec {
    ProblemSpec::initial_value(1.0, SpatialDomain::HalfLine, Payoff::call(1.0), zero_field())
        .unwrap()
}
