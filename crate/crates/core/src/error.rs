use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry config: {0}")]
    InvalidGeometry(String),

    #[error("arc-length {s} out of range [0, {length}] for lane {lane}")]
    ArcLengthOutOfRange { lane: u32, s: f64, length: f64 },

    #[error("cannot place {requested} surrounding vehicles, capacity is {capacity}")]
    SpawnCapacity { requested: u32, capacity: u32 },

    #[error("invalid config value: {0}")]
    InvalidConfig(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("episode already terminated (outcome {0})")]
    EpisodeTerminated(String),

    #[error("non-finite loss in PPO update (epoch {epoch}, minibatch {minibatch})")]
    NonFiniteLoss { epoch: usize, minibatch: usize },

    #[error("non-finite parameter detected in {0}")]
    NonFiniteParam(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("episode {episode} beyond configured total {total}")]
    EpisodeBeyondTotal { episode: u64, total: u64 },

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint corrupted: {0}")]
    CheckpointCorrupt(String),

    #[error("replay log line {line}: {msg}")]
    ReplayLog { line: usize, msg: String },

    #[error("invalid filter parameters: window {window}, poly order {order}")]
    InvalidFilter { window: usize, order: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
