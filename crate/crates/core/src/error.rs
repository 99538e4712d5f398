use thiserror::Error;

/// Errors raised anywhere in the estimation and testing pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SdtError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must share a shape (support, dimension) do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numerical evaluation produced a non-finite or otherwise invalid value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Input data do not fit the model (e.g. observations outside the support).
    #[error("data error: {0}")]
    Data(String),

    /// The operation is not available for the given model.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// A constraint set could not be built or satisfied.
    #[error("constraint error: {0}")]
    Constraint(String),

    /// The optimizer failed on every start.
    #[error("no convergence after {iterations} iterations (best gradient norm {grad_norm:.3e}, theta {theta:?})")]
    Convergence {
        iterations: usize,
        grad_norm: f64,
        theta: Vec<f64>,
    },

    /// Dense linear algebra failed (singular or indefinite matrix).
    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),

    /// Numerical integration did not reach the requested accuracy.
    #[error("integration error: {0}")]
    Integration(String),

    /// Wraps an error with the pipeline stage that produced it.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SdtError>,
    },
}

impl SdtError {
    pub fn at(self, stage: &'static str) -> Self {
        SdtError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, SdtError>;

/// Extension for tagging a result with the stage it came from.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
