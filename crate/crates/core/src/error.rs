use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {family} distribution: {reason}")]
    InvalidDistribution {
        family: &'static str,
        reason: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("variance unavailable: need at least 2 values, got {0}")]
    VarianceUnavailable(usize),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rank-deficient design: basis columns {} are collinear with preceding columns", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("unsupported regression dimension {0} (supported: 1 to 3)")]
    UnsupportedDimension(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("non-finite log-density at {0:?}")]
    NonFiniteDensity(Vec<f64>),

    #[error("posterior run failed at quadrature point {point}: {source}")]
    Posterior {
        point: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("preposterior variance {sigma2} exceeds Var(INB^phi) {var_phi} beyond the 5% Monte Carlo slack; increase M or Q to reduce the noise in the expected posterior variance")]
    VarianceBound { sigma2: f64, var_phi: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("budget exceeded after {completed} of {requested} outer iterations")]
    BudgetExceeded { completed: usize, requested: usize },

    #[error("unknown model `{name}`; registered models: {}", .available.join(", "))]
    UnknownModel {
        name: String,
        available: Vec<String>,
    },

    #[error("unknown design `{name}` for model `{model}`; available designs: {}", .available.join(", "))]
    UnknownDesign {
        name: String,
        model: String,
        available: Vec<String>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps the error with the name of the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the root cause is bad input rather than a failed
    /// computation.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Stage { source, .. } | Error::Posterior { source, .. } => source.is_config(),
            Error::InvalidDistribution { .. }
            | Error::Config(_)
            | Error::Schema(_)
            | Error::UnknownModel { .. }
            | Error::UnknownDesign { .. } => true,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_are_found_through_stages() {
        let e = Error::Config("Q must be at least 1".into()).at_stage("quadrature");
        assert!(e.is_config());
        assert_eq!(
            e.to_string(),
            "quadrature stage failed: invalid configuration: Q must be at least 1"
        );
        assert!(!Error::DegenerateModel("x".into())
            .at_stage("psa")
            .is_config());
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
