use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("ray z-component {ray_z} is at or above the horizon")]
    Horizon { ray_z: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed pyramid file at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("no confidence cell survives the ground-region mask")]
    EmptyRegion,

    #[error("point is not visible in any camera")]
    NotVisible,

    #[error("degenerate residual system: only {active} active points")]
    DegenerateSystem { active: usize },

    #[error("singular damped Hessian (condition estimate {condition:e})")]
    SingularHessian { condition: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
