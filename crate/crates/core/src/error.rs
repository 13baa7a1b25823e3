use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input outside the domain of an operation (site not on the lattice,
    /// unnormalized state, unsorted weights, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Shapes, supports or families that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// Ground state degenerate (or nearly so) at the given path parameter.
    #[error("gap closed{}: E1 - E0 = {gap:.3e}", .s.map(|s| format!(" at s = {s}")).unwrap_or_default())]
    GapClosed { s: Option<f64>, gap: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    /// No radius in the scanned range brings f_A(R) + 2 e(R) down to 1/2.
    #[error("no feasible R0: f_A(R) + 2 e(R) > 1/2 for every tabulated R")]
    NoFeasibleR0,

    #[error("eigensolver failed: {0}")]
    Linalg(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing upstream artifact {path}: run `{stage}` first")]
    Dependency { stage: String, path: String },

    #[error("stale artifact {path}: config hash {found} does not match {expected}")]
    StaleCache {
        path: String,
        found: String,
        expected: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }
}
