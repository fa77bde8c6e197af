use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Mismatched or invalid tensor/PMF shapes.
    #[error("shape error: {0}")]
    Shape(String),
    /// A length that must be a power of two is not.
    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    /// An FFT length beyond the configured capacity.
    #[error("fft length {len} exceeds capacity 2^{max_log_n}")]
    FftCapacity { len: usize, max_log_n: u8 },
    /// A scalar argument outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent or unknown variable labels.
    #[error("label error: {0}")]
    Label(String),
    /// A message whose axis count does not match the expectation.
    #[error("arity error: {0}")]
    Arity(String),
    /// The model and the evidence admit no joint configuration.
    #[error("contradiction: {0}")]
    Contradiction(String),
    /// A message was requested before its inputs were available.
    #[error("not ready: {0}")]
    NotReady(String),
    /// A scheduler was run on a graph of the wrong shape.
    #[error("topology error: {0}")]
    Topology(String),
    /// A message with no mass anywhere.
    #[error("degenerate message: {0}")]
    Degenerate(String),
    /// A deliberately bounded computation exceeded its guard.
    #[error("capacity guard exceeded: {0}")]
    Capacity(String),
    /// A model description that cannot be compiled to a graph.
    #[error("build error: {0}")]
    Build(String),
    /// A model file that cannot be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
