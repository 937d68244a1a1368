use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {dimension} expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        dimension: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("inverse DFT left an imaginary residue of {residue:e} (limit {limit:e})")]
    ImaginaryResidue { residue: f64, limit: f64 },

    #[error("CFL bound violated: {bound} = {value} exceeds {limit}")]
    Cfl {
        bound: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("label {label} out of range at record {index}")]
    LabelOutOfRange { index: usize, label: usize },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, dimension: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            context,
            dimension,
            expected,
            actual,
        })
    }
}
