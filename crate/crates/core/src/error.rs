use std::io;
use std::sync::Arc;

/// Errors produced by the runtime.
///
/// Cloneable because a request's completion outcome is observed by every
/// waiter and by the owning schedule.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("rank {rank} is out of range for a world of {size} ranks")]
    InvalidRank { rank: u32, size: u32 },
    #[error("count of {count} elements does not fit a {capacity}-byte region")]
    InvalidCount { count: usize, capacity: usize },
    #[error("length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("context id {0} is reserved (user contexts start at 16)")]
    ReservedContext(u32),
    #[error("request is already active")]
    AlreadyActive,
    #[error("request is owned by schedule {0}")]
    OwnedBySchedule(u64),
    #[error("request is still active")]
    StillActive,
    #[error("invalid (freed) request handle")]
    InvalidHandle,
    #[error("operation not valid in the request's current state")]
    InvalidState,
    #[error("schedule is already committed")]
    AlreadyCommitted,
    #[error("request is already owned by schedule {0}")]
    RequestOwned(u64),
    #[error("request is active and cannot be added to a schedule")]
    RequestActive,
    #[error("schedule has no operations")]
    EmptySchedule,
    #[error("reset point would follow the completion point")]
    InvalidMark,
    #[error("reduce operands overlap")]
    OverlappingBuffers,
    #[error("schedule was already freed")]
    DoubleFree,
    #[error("schedule has been freed")]
    ScheduleFreed,
    #[error("message of {received} bytes truncated into a {capacity}-byte receive buffer")]
    Truncated { received: usize, capacity: usize },
    #[error("transport to rank {0} is closed")]
    TransportClosed(u32),
    #[error("progress engine has shut down")]
    EngineShutDown,
    #[error("world aborted after a rank failure")]
    Aborted,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("i/o error: {0}")]
    Io(Arc<io::Error>),
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(Arc::new(err))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure of a world launch.
#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error("failed to bind or connect: {0}")]
    BindFailure(String),
    #[error("rank {rank} panicked: {message}")]
    PanicInRank { rank: u32, message: String },
    #[error("rank {rank} failed: {message}")]
    RankFailed { rank: u32, message: String },
}

impl WorldError {
    pub fn rank(&self) -> Option<u32> {
        match self {
            WorldError::PanicInRank { rank, .. } | WorldError::RankFailed { rank, .. } => Some(*rank),
            _ => None,
        }
    }
}

pub(crate) fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_owned()
    }
}
