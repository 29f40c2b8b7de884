use thiserror::Error;

/// Every failure mode surfaced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} is not supported (expected 2 or 3)")]
    InvalidDimension(usize),
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),
    #[error("potential leaks past the boundary: {0}")]
    SupportViolation(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(
        "discrete Helmholtz operator is near singular (smallest gap {gap:.3e}, condition estimate {condition:.3e})"
    )]
    NearSingular { gap: f64, condition: f64 },
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("mode {mode}: {source}")]
    ModeFailure {
        mode: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("separable oracle is resonant (sin(mu) = 0)")]
    ResonantMode,
    #[error("boundary trace tail energy {fraction:.3} exceeds the allowed {limit:.3}")]
    TailTooLarge { fraction: f64, limit: f64 },

    #[error("low band needs an orthogonal triple, impossible in dimension {0} for r > 0")]
    UnsupportedDimension(usize),
    #[error("r = {r} outside the valid range of the {band} band: {detail}")]
    BandViolation { r: f64, band: &'static str, detail: String },
    #[error("{fraction:.4} of lattice modes lie inside the symbol regularization shell")]
    SymbolDegenerate { fraction: f64 },
    #[error("|xi| = {xi_norm:.4} below the contraction threshold {threshold:.4}")]
    ContractionViolated { xi_norm: f64, threshold: f64 },
    #[error("fixed-point iteration failed to converge after {iterations} iterations (last update {update:.3e}, |xi| = {xi_norm:.4})")]
    NoConvergence {
        iterations: usize,
        update: f64,
        xi_norm: f64,
    },

    #[error("DN maps or trace vectors do not share a basis: {0}")]
    BasisMismatch(String),
    #[error("cutoff T = {t} below the low band edge {edge}")]
    CutoffBelowBand { t: f64, edge: f64 },

    #[error("DN gap {0:.4e} exceeds 1/e")]
    GapTooLarge(f64),
    #[error("k^2 = {k2:.4} below the admissible 1/(C1 M) = {min:.4}")]
    FrequencyTooLow { k2: f64, min: f64 },
    #[error("no Fourier sample within half a cell of lattice frequency {0:?}")]
    CoverageGap(Vec<f64>),
    #[error("missing constant: {0}")]
    MissingConstant(&'static str),
    #[error("invalid constants ledger: {0}")]
    InvalidLedger(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
