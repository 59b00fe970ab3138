use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("negative value: {0}")]
    Negative(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("camera at ({x}, {y}, {z}) is outside the grid or inside geometry")]
    CameraPlacement { x: f64, y: f64, z: f64 },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("optimization diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Loss trace up to (not including) the failing epoch.
        trace: Vec<crate::optim::TraceRow>,
    },

    #[error("malformed {format} data at byte {offset}: {message}")]
    Format {
        format: &'static str,
        offset: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
