use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("linear system is singular (chain may be reducible)")]
    SingularSystem,

    #[error("not computable: {0}")]
    NotComputable(String),

    #[error("arm enumeration cap exceeded: P({resources},{users}) = {count} > {cap}")]
    CapExceeded {
        users: usize,
        resources: usize,
        count: u128,
        cap: u128,
    },

    #[error("policy not initialized: pair ({user},{resource}) has never been played")]
    NotInitialized { user: usize, resource: usize },

    #[error("every arm is optimal; minimum gap is undefined")]
    AllArmsOptimal,

    #[error("exploration constant {l} is below the threshold {threshold}")]
    ThresholdViolated { l: f64, threshold: f64 },

    #[error("schedule never reaches {target} below step {cap}")]
    DivergenceCapExceeded { target: f64, cap: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
