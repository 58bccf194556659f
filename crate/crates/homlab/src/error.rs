//! Error type shared across the crate.

use thiserror::Error;

/// Pipeline stage that produced a failure, used by the sweep harness to tag
/// partial results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Geometry,
    Mesh,
    Fem,
    Corrector,
    Solver,
    Config,
    Io,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Geometry => "geometry",
            Stage::Mesh => "mesh",
            Stage::Fem => "fem",
            Stage::Corrector => "corrector",
            Stage::Solver => "solver",
            Stage::Config => "config",
            Stage::Io => "io",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum HomlabError {
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("[{stage}] {message}")]
    Stage { stage: Stage, message: String },

    #[error("solver did not converge: {message}")]
    NoConvergence {
        message: String,
        /// Trailing relative residual history of the failed solve.
        residuals: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl HomlabError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        HomlabError::Invalid(msg.into())
    }

    pub fn stage(stage: Stage, msg: impl Into<String>) -> Self {
        HomlabError::Stage {
            stage,
            message: msg.into(),
        }
    }

    /// Stage tag if this error carries one.
    pub fn stage_tag(&self) -> Option<Stage> {
        match self {
            HomlabError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
