//! Error type shared by every module in the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operand shapes cannot be combined by the named operation.
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An axis argument does not address a valid dimension.
    InvalidAxis { axis: usize, rank: usize },
    /// A structural parameter is out of its legal range.
    Config(String),
    /// A row fed to cosine addressing has (numerically) zero norm.
    DegenerateInput { row: usize },
    /// The caller violated an operation's contract.
    Usage(String),
    /// A function handed to `grad_check` produced two different values for
    /// the same input.
    NonDeterministic { first: f64, second: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::InvalidAxis { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::DegenerateInput { row } => {
                write!(f, "row {row} has zero norm; cosine similarity undefined")
            }
            Error::Usage(msg) => write!(f, "{msg}"),
            Error::NonDeterministic { first, second } => write!(
                f,
                "function is not deterministic: {first} != {second} on identical input"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
