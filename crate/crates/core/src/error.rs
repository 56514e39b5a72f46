use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid level system: {}", .0.join("; "))]
    LevelSystem(Vec<String>),

    #[error("level index {index} out of range for {n} levels")]
    LevelIndex { index: usize, n: usize },

    #[error("invalid phase lattice: {0}")]
    Lattice(String),

    #[error("levels ({m},{n}) resonate with two harmonics {first:?} and {second:?}")]
    AmbiguousResonance {
        m: usize,
        n: usize,
        first: Vec<i64>,
        second: Vec<i64>,
    },

    #[error("division on resonant mode: levels ({m},{n}), alpha1 = {alpha1:?}, kappa = 1")]
    ResonantDivision { m: usize, n: usize, alpha1: Vec<i64> },

    #[error("mode {mode} is {class}, expected {expected}")]
    ModeClass {
        mode: String,
        class: String,
        expected: &'static str,
    },

    #[error("averaging window S = {s} is shorter than two grid steps of {step}")]
    ShortWindow { s: f64, step: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time step {dt} exceeds the stability bound {max}")]
    Cfl { dt: f64, max: f64 },

    #[error("non-finite value in {what} at t = {t}")]
    NonFinite { what: String, t: f64 },

    #[error("prepared data must have zero coherences")]
    PreparedCoherence,

    #[error("coherence ({m},{n}) at harmonic {beta:?} resonates with no lattice harmonic")]
    NonLiftable { m: usize, n: usize, beta: Vec<i64> },

    #[error("invalid profile data: {0}")]
    Profile(String),

    #[error("slope fit needs at least three points, got {0}")]
    TooFewPoints(usize),

    #[error("no decay signal: {0}")]
    NoSignal(String),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
