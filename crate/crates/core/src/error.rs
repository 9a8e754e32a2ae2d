use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}", join_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("{what} out of domain: {value} (expected {expected})")]
    Domain {
        what: &'static str,
        value: f64,
        expected: String,
    },

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("consumer index {0} out of range")]
    Index(usize),

    #[error("quadratic program: {0}")]
    Qp(String),

    #[error("quadratic program is infeasible")]
    Infeasible,

    #[error("branch limit exceeded: {branches} branches > limit {limit}")]
    BranchLimit { branches: u64, limit: u64 },

    #[error("{method} supports at most {max} consumers, scenario has {got}")]
    TooManyConsumers {
        method: &'static str,
        max: usize,
        got: usize,
    },

    #[error("grid oracle budget exceeded: {points} grid points > cap {cap}")]
    OracleBudget { points: u64, cap: u64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serialize(String),
}

impl Error {
    /// True when the only problem is that the target cannot be met by the
    /// consumers' combined baseline.
    pub fn is_infeasible_target(&self) -> bool {
        match self {
            Error::Invalid(v) => {
                !v.is_empty()
                    && v.iter()
                        .all(|v| v.kind == crate::model::ViolationKind::TargetExceedsBaseline)
            }
            Error::Infeasible => true,
            _ => false,
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
