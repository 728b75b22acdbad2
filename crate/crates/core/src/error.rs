use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fixed-point format: {0}")]
    Format(String),

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("symbol index {0} out of range 0..=53")]
    SymbolIndex(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("preamble not detected (best metric {best_metric:.3})")]
    Detection { best_metric: f64 },

    #[error("filter design did not converge after {iterations} iterations (residual {residual:.3e})")]
    Design { iterations: usize, residual: f64 },

    #[error("{0}")]
    Contract(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Length {
            what,
            expected,
            got,
        })
    }
}
