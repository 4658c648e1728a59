use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("area resize cannot upscale {from_w}x{from_h} to {to_w}x{to_h}; use resize_bilinear")]
    Upscale {
        from_w: usize,
        from_h: usize,
        to_w: usize,
        to_h: usize,
    },

    #[error("image format error: {0}")]
    Format(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("training data contains a single class ({0}); at least two are required")]
    SingleClass(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite feature value")]
    NonFiniteFeature,

    #[error("model error: {0}")]
    Model(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
