//! Error type shared across the toolkit.

/// Errors raised by simulation, clock, and estimation code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model function returned a non-finite value.
    #[error("model evaluation failure at x = {x}: {what}")]
    ModelEval { x: f64, what: String },

    /// An SDE recursion left the representable range.
    #[error("simulation blow-up at step {step}")]
    BlowUp { step: usize },

    /// An inverse clock level was not reached inside the simulated span.
    #[error("clock overrun: level {needed} not reached within span {span}")]
    ClockOverrun { needed: f64, span: f64 },

    /// Invalid configuration (missing derivative, bad constant, unknown name, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A rate fit was asked for on non-positive means.
    #[error("degenerate rate point: {0}")]
    DegenerateRatePoint(String),

    /// A path was queried outside its span.
    #[error("path query t = {t} outside span [{lo}, {hi}]")]
    OutOfSpan { t: f64, lo: f64, hi: f64 },

    /// Too many replicates were dropped by clock overruns.
    #[error("excessive replicate drops: {dropped} of {total}")]
    ExcessiveDrops { dropped: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
