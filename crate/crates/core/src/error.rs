use thiserror::Error;

/// Errors raised by the tracking library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid catheter design: {0}")]
    InvalidDesign(String),

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("stacked projector is rank deficient (rank {rank} < 3)")]
    RankDeficient { rank: usize },

    #[error("base tangent undefined: base bands coincide")]
    DegenerateBase,

    #[error("roll is unobservable without intermediate markers")]
    RollUnobservable,

    #[error("shape is not identifiable: {rows} residual rows for {params} coefficients")]
    NotIdentifiable { rows: usize, params: usize },

    #[error("marker labeling failed: {0}")]
    Labeling(String),

    #[error("missing-marker assignment failed: {0}")]
    Assignment(String),

    #[error("markers outside the image bounds: {0:?}")]
    OutOfBounds(Vec<usize>),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("configuration sampling exceeded {0} rejections")]
    RejectionOverflow(usize),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tags an error with the pipeline stage that raised it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors that come from the numerical stages rather than
    /// from inputs or the filesystem.
    pub fn is_numerical(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::DegenerateBase
                | Error::RollUnobservable
                | Error::NotIdentifiable { .. }
                | Error::Labeling(_)
                | Error::Assignment(_)
                | Error::RejectionOverflow(_)
                | Error::Domain(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
