//! Crate-wide error type.

/// Errors produced by solvers, field operations, and file parsers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite field")]
    NonFiniteField,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("trajectory needs at least {need} snapshots, has {have}")]
    TooFewSnapshots { need: usize, have: usize },
    #[error("energy undefined after blow-up")]
    EnergyAfterBlowup,
    #[error("phi({x}) = {value} is negative; pass a negative-phi mode to the Hamiltonian")]
    NegativePotential { x: f64, value: f64 },
    #[error("tail ansatz invalid: f must be positive, got {0}")]
    NonPositiveTailValue(f64),
    #[error("decay too slow for series bound: fitted alpha = {0} <= 5")]
    DecayTooSlow(f64),
    #[error("no global seeds")]
    NoGlobalSeeds,
    #[error("horizon bound must be nonnegative, got {0}")]
    NegativeBound(f64),
    #[error("blow-up before t = {t} at h = {h}")]
    BlowupInStudy { t: f64, h: f64 },
    #[error("eigenmix direction requires >= 2 positive eigenvalues, found {0}")]
    NotEnoughUnstableDirections(usize),
    #[error("no bracket: same verdict at both probe endpoints")]
    NoBracket,
    #[error("funnel breach: confinement violated by {0:.3e}")]
    FunnelBreach(f64),
    #[error("fence sign condition violated: {0}")]
    FenceSign(String),
    #[error("seed refinement failed: {0}")]
    SeedRefinement(String),
    #[error("tabulated profile ends differ from declared limit by {0:.3e}")]
    TabulatedLimitMismatch(f64),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
