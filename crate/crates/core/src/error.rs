use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric overflow in {context} at iteration {iteration} (argument {argument})")]
    Overflow {
        context: String,
        iteration: usize,
        argument: f64,
    },

    #[error("absolute continuity violated at (s={state}, a={action}): P={p}, Q=0")]
    AbsoluteContinuity { state: usize, action: usize, p: f64 },

    #[error("coverage assumption violated at {0} pair(s), first at (s={1}, a={2})")]
    Coverage(usize, usize, usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attaches an iteration index to an overflow raised deep inside an objective.
    pub fn at_iteration(self, it: usize) -> Self {
        match self {
            Error::Overflow { context, argument, .. } => Error::Overflow {
                context,
                iteration: it,
                argument,
            },
            other => other,
        }
    }
}
