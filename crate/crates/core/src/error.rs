use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular geometry: zero separation between Rydberg excitations")]
    SingularGeometry,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("superoperator of dimension {dim} exceeds cap {cap}; use the matrix-free path")]
    Capacity { dim: usize, cap: usize },

    #[error("numerical instability at step {step}: {reason}")]
    NumericalInstability { step: usize, reason: String },

    #[error("steady state is not unique ({0})")]
    NonUniqueSteadyState(String),

    #[error("steady state did not converge: residual {residual:e} after t = {time}")]
    NotConverged { residual: f64, time: f64 },

    #[error("matrix is not hermitian (max deviation {0:e})")]
    Hermiticity(f64),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(&'static str),

    #[error("state vector is not normalized (norm {0})")]
    Normalization(f64),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("at delta_c = {delta_c}: {source}")]
    AtDetuning {
        delta_c: f64,
        #[source]
        source: Box<FitError>,
    },

    #[error("at cell {cell}: {source}")]
    AtCell {
        cell: usize,
        #[source]
        source: Box<FitError>,
    },
}

impl FitError {
    pub fn at_detuning(self, delta_c: f64) -> Self {
        FitError::AtDetuning { delta_c, source: Box::new(self) }
    }

    pub fn at_cell(self, cell: usize) -> Self {
        FitError::AtCell { cell, source: Box::new(self) }
    }

    /// Innermost error, with sweep/cell annotations removed.
    pub fn root(&self) -> &FitError {
        match self {
            FitError::AtDetuning { source, .. } | FitError::AtCell { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            FitError::Config(_)
                | FitError::Dimension { .. }
                | FitError::SingularGeometry
                | FitError::Capacity { .. }
                | FitError::DivisionByZero(_)
                | FitError::Normalization(_)
                | FitError::Hermiticity(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, FitError>;
