//! Error types shared across the simulator.

use thiserror::Error;

/// Errors raised by the racetrack device model itself.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    /// A shift would push the access-port window off the nanowire ends.
    #[error("shift past overhead: head {head} + delta {delta} leaves legal range [{min}, {max}]")]
    OverheadExceeded {
        head: i32,
        delta: i32,
        min: i32,
        max: i32,
    },

    /// A row access landed on an overhead domain instead of a data domain.
    #[error("misaligned access: {what} over domain index {index} (data rows span 0..{rows})")]
    Misaligned {
        what: &'static str,
        index: i32,
        rows: u32,
    },

    /// Geometry that the model cannot represent.
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

/// Errors raised by the CIM unit and microcode executor.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error(transparent)]
    Device(#[from] DeviceError),

    /// Predication may only be sourced from row-buffer bits 0, 31 or 47 of a lane.
    #[error("illegal predicate source position {0} (legal: 0, 31, 47)")]
    IllegalPredicateSource(u32),

    /// Lane width must divide the row and the operand field must fit it.
    #[error("lane packing error: {0}")]
    LanePackingError(String),

    /// The adder takes at most five addend rows (plus the two reserved carry rows).
    #[error("too many operands: {got} (limit {limit})")]
    TooManyOperands { got: usize, limit: usize },

    /// Transverse read requires exactly the TRD-row window of live operands.
    #[error("operand count {0} does not fit the transverse-read window")]
    BadOperandCount(usize),

    /// A microprogram referenced CIM signals before any transverse read ran.
    #[error("no transverse read latched before signal use at op {0}")]
    NoSignals(usize),

    /// Text-format microprogram could not be parsed.
    #[error("microprogram parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Error wrapper carrying the failing op index in a program run.
    #[error("op {index} ({op}): {source}")]
    At {
        index: usize,
        op: String,
        #[source]
        source: Box<ExecError>,
    },
}

/// Errors raised by the kernel layer (conv / pool / update helpers).
#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Exec(#[from] ExecError),

    /// maxPool's bitwise elimination is only order-preserving for non-negative inputs.
    #[error("maxPool input lane {lane} is negative ({value:#010x}); pool inputs must be non-negative")]
    NegativeMaxPoolInput { lane: usize, value: u32 },

    /// Input validation rejected a non-finite encoding (NaN / infinity).
    #[error("non-finite operand {value:#010x} in lane {lane}")]
    NonFiniteInput { lane: usize, value: u32 },

    /// Layer description the mapper does not understand.
    #[error("unsupported layer: {0}")]
    UnsupportedLayer(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Errors raised while loading configs, nets, tensors or reports.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid config: {0}")]
    Invalid(String),

    /// Every cost parameter must say where its value comes from.
    #[error("parameter `{0}` is missing a provenance string")]
    MissingProvenance(&'static str),
}
