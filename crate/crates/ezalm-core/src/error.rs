//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Configuration file could not be parsed. Names the offending key and line.
    #[error("config parse error (line {line}, key `{key}`): {msg}")]
    Parse { line: usize, key: String, msg: String },

    /// A parameter violates a model invariant.
    #[error("invalid parameter `{name}`: {msg}")]
    InvalidParameter { name: &'static str, msg: String },

    /// The Monte Carlo evidence cannot certify `1 - E[int H alpha phi] > 0`.
    /// Either the parameter set violates the integrability requirements or the
    /// path count is too small.
    #[error(
        "positivity certificate failed for `{term}`: 1 - mean = {margin:.6e} is not above 3 * SE = {three_se:.6e}"
    )]
    PositivityViolation { term: &'static str, margin: f64, three_se: f64 },

    /// Initial wealth does not exceed the liability present value, so the
    /// optimal strategy is undefined.
    #[error("hypothesis violated: initial wealth {x} must exceed the liability value {liability_value}")]
    HypothesisViolation { x: f64, liability_value: f64 },

    /// The exponential-quadratic moment bound diverges before the horizon.
    #[error("moment bound explodes: horizon {horizon} >= critical time {t_critical}")]
    MomentExplosion { horizon: f64, t_critical: f64 },

    /// Asset covariance matrix is singular (bond volatility vanished), so the
    /// stock/bond split is undefined.
    #[error("singular asset covariance at t = {t} (bond volatility {sigma_b})")]
    SingularSigma { t: f64, sigma_b: f64 },

    /// A path accumulator became NaN. Paths are never silently dropped since
    /// that would bias the estimators.
    #[error("NaN in path accumulator `{what}` on path {path} at step {step}")]
    SimulationNan { what: &'static str, path: u64, step: usize },

    /// A fixed-point accumulator was fed a value outside its representable range.
    #[error("accumulator overflow: |{value:.3e}| exceeds the fixed-point range")]
    AccumulatorOverflow { value: f64 },
}

impl CoreError {
    pub fn invalid(name: &'static str, msg: impl Into<String>) -> Self {
        CoreError::InvalidParameter { name, msg: msg.into() }
    }

    /// True for failures of a numerical gate (as opposed to bad input).
    pub fn is_numerical_gate(&self) -> bool {
        matches!(
            self,
            CoreError::PositivityViolation { .. }
                | CoreError::HypothesisViolation { .. }
                | CoreError::MomentExplosion { .. }
                | CoreError::SimulationNan { .. }
                | CoreError::AccumulatorOverflow { .. }
        )
    }
}
