use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("label {label} is not valid for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("label {label} skips ahead of the {classes} known classes")]
    LabelGap { label: usize, classes: usize },

    #[error("class capacity of {0} exceeded")]
    Capacity(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("training did not converge (first epoch loss {first}, last epoch loss {last})")]
    Convergence {
        first: f64,
        last: f64,
        loss_curve: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            actual,
        })
    }
}
