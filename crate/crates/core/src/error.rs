use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("point maps to the horizon (|w| = {w:e})")]
    HorizonSingularity { w: f64 },

    #[error("matrix is singular (det = {det:e})")]
    Singular { det: f64 },

    #[error("every frame in the batch fell below the coverage floor ({dropped} dropped)")]
    DegenerateBatch { dropped: usize },

    #[error("alignment diverged in {stage} stage at epoch {epoch}: {detail}")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        detail: String,
    },

    #[error("frame has no overlap with the panorama (best coverage {coverage:.4})")]
    NoOverlap { coverage: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("missing input: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("parse error in {}: line {line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 for argument and input problems, 2 for
    /// numerical or degenerate failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_)
            | Error::MissingPath(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Image(_) => 1,
            Error::HorizonSingularity { .. }
            | Error::Singular { .. }
            | Error::DegenerateBatch { .. }
            | Error::Divergence { .. }
            | Error::NoOverlap { .. }
            | Error::Degenerate(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
