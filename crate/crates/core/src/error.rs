use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem instance: {}", .0.join("; "))]
    InvalidInstance(Vec<String>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("time grid: {0}")]
    Grid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("control weight R is not positive definite")]
    SingularControlWeight,

    #[error("Riccati solution lost positive semidefiniteness at t = {t} (min eigenvalue {eigenvalue:e})")]
    RiccatiInstability { t: f64, eigenvalue: f64 },

    #[error("CFL condition violated: dt = {dt:e} exceeds the stable step {required:e}")]
    Cfl { dt: f64, required: f64 },

    #[error("decoupling field diverged at time step {step}")]
    FieldDivergence { step: usize },

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("infinite running cost in episode {episode}")]
    InfiniteCost { episode: usize },

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from bad input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidInstance(_)
            | Error::Dimension(_)
            | Error::Grid(_)
            | Error::InvalidArgument(_)
            | Error::Unsupported(_)
            | Error::Config(_)
            | Error::Cfl { .. } => true,
            Error::Episode { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn in_episode(self, episode: usize) -> Error {
        Error::Episode {
            episode,
            source: Box::new(self),
        }
    }
}
