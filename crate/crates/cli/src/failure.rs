//! Exit-code classification.

use std::fmt;

use camforge_core::Error;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;

/// A command failure: bad input (exit 2) or a failed computation (exit 3).
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Compute(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => EXIT_INPUT,
            Failure::Compute(_) => EXIT_COMPUTE,
        }
    }

    /// Sorts an engine error raised while computing.
    pub fn from_core(e: Error) -> Self {
        match e {
            Error::SolverDivergence { .. } | Error::AllPixelsMasked | Error::Oracle(_) | Error::Io(_) => {
                Failure::Compute(e.into())
            }
            other => Failure::Input(other.into()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(e) | Failure::Compute(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for Failure {}

pub type CliResult<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn input(self) -> CliResult<T>;
    fn compute(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> CliResult<T> {
        self.map_err(|e| Failure::Input(e.into()))
    }

    fn compute(self) -> CliResult<T> {
        self.map_err(|e| Failure::Compute(e.into()))
    }
}
