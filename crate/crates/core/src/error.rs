use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("strong convexity violated: {name} = {value} ({reason})")]
    Convexity {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("singular point: separation {distance:e} is below the guard radius {guard:e}")]
    SingularPoint { distance: f64, guard: f64 },

    #[error("point ({x1}, {x2}, {x3}) lies outside the half-space x3 <= 0")]
    AboveSurface { x1: f64, x2: f64, x3: f64 },

    #[error("h{index} domain error{}: {reason}", corner.map(|c| format!(" at corner {c}")).unwrap_or_default())]
    HDomain {
        index: usize,
        corner: Option<usize>,
        reason: &'static str,
    },

    #[error("evaluation point lies on the dislocation surface (distance {distance:e})")]
    OnSurface { distance: f64 },

    #[error("evaluation point too close to the surface: distance {distance:e} < required {required:e}")]
    TooClose { distance: f64, required: f64 },

    #[error("{what} did not converge: {detail}")]
    NonConvergence { what: &'static str, detail: String },

    #[error("linear solver stopped after {iterations} iterations at relative residual {:e}", history.last().copied().unwrap_or(f64::NAN))]
    SolverStalled { iterations: usize, history: Vec<f64> },

    #[error("normal vector must have unit length, got |n| = {0}")]
    NonUnitNormal(f64),

    #[error("degenerate ladder: {0}")]
    DegenerateLadder(String),

    #[error("invalid rectangle: {0}")]
    InvalidRect(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate facet {facet}: area {area:e}")]
    DegenerateFacet { facet: usize, area: f64 },

    #[error("unsupported quadrature order {0}")]
    UnsupportedOrder(usize),

    #[error("invalid slip field: {0}")]
    InvalidSlip(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("normal equations are rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
