use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape for {op}: {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; build a fresh graph with a new forward pass")]
    GraphConsumed,
    #[error("no token interval covers characters {start}..{end}")]
    Alignment { start: usize, end: usize },
    #[error("line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: loss={loss}, lr={lr}, grad_norm={grad_norm}")]
    NonFinite {
        step: u64,
        loss: f64,
        lr: f64,
        grad_norm: f64,
    },
}
