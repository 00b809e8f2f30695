use std::fmt;

/// Errors surfaced by the plant, controllers and the simulation runner.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// State reached a region where the model equations stop making sense
    /// (e.g. DC-link voltage below the division guard while power flows).
    NonPhysicalState(String),
    /// Observer was stepped while disabled.
    ObserverDisabled,
    /// Gain synthesis was asked for an impossible target (non-positive
    /// settling time, zero ratio, ...).
    InvalidTarget(String),
    /// Reference generation received an unusable input (e.g. zero PCC
    /// voltage magnitude).
    InvalidReference(String),
    /// The feedback-linearization law lost its division guard
    /// (|v_p| estimate collapsed); the supervisor holds the last output.
    DivisionGuard(String),
    /// The steady-state voltage expression has no real solution at the
    /// requested operating point (voltage collapse region).
    NoOperatingPoint { p: f64, q: f64 },
    /// A mode transition was requested out of order.
    SequenceError(String),
    /// Scenario file could not be parsed or validated.
    Scenario(String),
    /// An error raised during a simulation run, with timestamp context.
    Sim { t: f64, source: Box<Error> },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonPhysicalState(msg) => write!(f, "non-physical state: {msg}"),
            Error::ObserverDisabled => write!(f, "observer stepped while disabled"),
            Error::InvalidTarget(msg) => write!(f, "invalid synthesis target: {msg}"),
            Error::InvalidReference(msg) => write!(f, "invalid reference: {msg}"),
            Error::DivisionGuard(msg) => write!(f, "division guard tripped: {msg}"),
            Error::NoOperatingPoint { p, q } => {
                write!(f, "no steady-state operating point at p={p} W, q={q} var")
            }
            Error::SequenceError(msg) => write!(f, "mode sequence error: {msg}"),
            Error::Scenario(msg) => write!(f, "scenario error: {msg}"),
            Error::Sim { t, source } => write!(f, "at t={t:.6} s: {source}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    /// Wrap an error with the simulation timestamp at which it occurred.
    pub fn at_time(self, t: f64) -> Error {
        Error::Sim {
            t,
            source: Box::new(self),
        }
    }
}
