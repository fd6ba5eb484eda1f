use thiserror::Error;

/// Errors shared across the solver, sampler and bound modules.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A regime with zero total exit rate has no jump destination.
    #[error("regime {regime} is absorbing at x = {state}: total exit rate is zero")]
    AbsorbingRegime { regime: usize, state: f64 },

    /// A state-dependent rate exceeded the declared bound during thinning.
    #[error("rate bound violated at t = {time}, x = {state}: rate {rate} > declared bound {bound}")]
    RateBoundViolated {
        time: f64,
        state: f64,
        rate: f64,
        bound: f64,
    },

    /// A user-supplied field returned NaN or infinity.
    #[error("non-finite value: {context}")]
    NonFiniteValue { context: String },

    /// The sandwich hypothesis fails: no valid hard bounds at this iteration.
    #[error("hard bounds unavailable: M_r upper extremum {m_upper} >= 1")]
    SandwichUnavailable { m_upper: f64 },

    /// A tridiagonal solve encountered a vanishing pivot.
    #[error("singular tridiagonal system at time level {level}, row {row} (pivot {pivot:e})")]
    SingularSystem { level: usize, row: usize, pivot: f64 },

    /// Query point outside the lattice hull.
    #[error("point (t = {time}, x = {state}) lies outside the lattice hull")]
    OutOfHull { time: f64, state: f64 },

    /// A simulated path left the problem domain where the problem forbids it.
    #[error("path left the domain at t = {time}, x = {state} in an initial value problem")]
    DomainExit { time: f64, state: f64 },

    /// Construction-time validation failure.
    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFiniteValue {
            context: context.into(),
        }
    }
}
