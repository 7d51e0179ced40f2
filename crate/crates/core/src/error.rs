use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("malformed rally `{rally_id}`: {reason}")]
    MalformedRally { rally_id: String, reason: String },

    #[error("degenerate court range on {axis} axis: [{min}, {max}]")]
    DegenerateCourt { axis: &'static str, min: f64, max: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("invalid position ({x}, {y})")]
    InvalidPosition { x: f64, y: f64 },

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown player `{0}`")]
    UnknownPlayer(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty experience sequence")]
    EmptyExperience,

    #[error("invalid encoder output: {0}")]
    InvalidEncoderOutput(String),

    #[error("infeasible CTC alignment: {frames} frames cannot emit {required} required symbols")]
    InfeasibleAlignment { frames: usize, required: usize },

    #[error("undefined normalization: random and rule-based scores are equal ({0})")]
    UndefinedNormalization(f64),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("stale artifact: expected dataset hash {expected}, found {found}")]
    StaleArtifact { expected: String, found: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("agent failure: {0}")]
    Agent(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(String),
}
