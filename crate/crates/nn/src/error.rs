use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("backward called on {0} without a recorded forward pass")]
    NotRecorded(&'static str),
    #[error("missing tensor `{0}` in state")]
    MissingTensor(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn check_shape(context: &'static str, expected: &[usize], found: &[usize]) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch {
            context,
            expected: expected.to_vec(),
            found: found.to_vec(),
        })
    }
}
