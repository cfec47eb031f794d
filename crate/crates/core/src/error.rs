use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("image {width}x{height} is smaller than a single {patch}px patch")]
    EmptyGrid {
        width: usize,
        height: usize,
        patch: usize,
    },

    #[error("data is rank deficient: rank {rank}, need at least {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("no prototype left in cluster {cluster} (both pools exhausted)")]
    EmptyPools { cluster: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
