use thiserror::Error;

use crate::network::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The adaptive step collapsed below its floor. `partial` holds every
    /// step accepted before the failure.
    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure {
        t: f64,
        reason: String,
        partial: Box<Trajectory>,
    },

    #[error("fixed-point map is not a contraction: max weighted column sum {column_sum} >= {bound}")]
    NotAContraction { column_sum: f64, bound: f64 },

    #[error("sensitivity matrix is numerically singular")]
    SingularSensitivity,

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}
