use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands have incompatible shapes.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A temporal convolution received fewer frames than its filter width.
    SequenceTooShort { len: usize, width: usize },
    /// A precondition on an operation's input was violated.
    Contract(String),
    /// A token id is not present in the vocabulary or embedding table.
    UnknownToken { id: usize, vocab_size: usize },
    /// A parameter expected to carry a gradient had none.
    MissingGrad(String),
    /// A loss became NaN or infinite during training.
    NonFinite { epoch: usize, batch: usize, what: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::SequenceTooShort { len, width } => {
                write!(f, "sequence of length {len} is shorter than filter width {width}")
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::UnknownToken { id, vocab_size } => {
                write!(f, "unknown token id {id} (vocabulary size {vocab_size})")
            }
            Error::MissingGrad(name) => write!(f, "parameter `{name}` has no gradient"),
            Error::NonFinite { epoch, batch, what } => {
                write!(f, "non-finite {what} at epoch {epoch}, batch {batch}")
            }
        }
    }
}

impl core::error::Error for Error {}
