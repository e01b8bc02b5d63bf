use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("degenerate embedding (zero norm) at row {row}")]
    DegenerateEmbedding { row: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("non-deterministic function: two identical evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
