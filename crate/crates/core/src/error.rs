use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A field or coefficient vector does not match the grid it is used with.
    #[error("conformity error: expected {expected} values, found {found}")]
    Conformity { expected: usize, found: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical blow-up at step {step} (t = {t}): {detail}")]
    BlowUp { step: usize, t: f64, detail: String },

    #[error("replica (env {env}, noise {noise}) failed: {source}")]
    Replica {
        env: usize,
        noise: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("divergence-free check failed: {0}")]
    NotDivergenceFree(String),

    #[error("stale input: {0}")]
    StaleInput(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Parse { path: String, detail: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
