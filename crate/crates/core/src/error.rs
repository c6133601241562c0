use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: invalid `{field}`: {message}")]
    Validation {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("failed to encode record: {0}")]
    Encode(#[source] serde_json::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VmError {
    #[error("undecodable opcode {opcode:#04x} at pc {pc:#x}")]
    Fault { pc: u64, opcode: u8 },
    #[error("step budget of {budget} exceeded")]
    Budget { budget: u64 },
    #[error("IN at pc {pc:#x} with no input values left")]
    InputExhausted { pc: u64 },
    #[error("machine is halted")]
    Halted,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct AsmError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CfgError {
    #[error(
        "instruction at {addr:#x} re-observed with different bytes in phase {phase} (trace pos {pos})"
    )]
    Inconsistent { addr: u64, phase: usize, pos: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SliceError {
    #[error("position {pos} out of range for trace of length {len}")]
    OutOfRange { pos: usize, len: usize },
    #[error("no marker found in trace")]
    MarkerNotFound,
    #[error("marker at {marker} is after slicing criterion {criterion}")]
    MarkerAfterCriterion { marker: usize, criterion: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaintError {
    #[error("no taint sources: trace has no taint_source records and none were given")]
    NoSources,
    #[error("source position {pos} out of range for trace of length {len}")]
    OutOfRange { pos: usize, len: usize },
}

/// Any analysis failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Taint(#[from] TaintError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
