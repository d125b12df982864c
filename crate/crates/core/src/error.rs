use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid size {0}: need a power of two >= 8")]
    InvalidGrid(usize),
    #[error("grid mismatch: {0} vs {1}")]
    GridMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("forcing shell {min}..={max} contains no modes")]
    EmptyShell { min: u64, max: u64 },
    #[error("observation geometry rejected: gamma = r/h = {gamma} must lie in (0,1)")]
    GammaOutOfRange { gamma: f64 },
    #[error("observation network: {0}")]
    BadNetwork(String),
    #[error("measurement count {got} does not match network size {want}")]
    MeasurementLength { got: usize, want: usize },
    #[error("solution blew up at t = {time} (|u_k| > {threshold:e})")]
    BlowUp { time: f64, threshold: f64 },
    #[error("all {0} ensemble members diverged")]
    AllDiverged(usize),
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("empty sample set")]
    EmptySamples,
    #[error("window [{lo}, {hi}] contains no data")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
