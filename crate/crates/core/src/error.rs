use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A layer, network, or kernel was configured with values that cannot work.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The operation is not available on this layer.
    #[error("`{op}` is not supported by layer `{layer}`")]
    Unsupported { layer: String, op: String },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("damping error: {0}")]
    Damping(String),

    #[error("solver error in layer {layer}: {reason}")]
    Solver { layer: usize, reason: String },

    /// Wraps an error raised while processing a specific layer.
    #[error("layer {index} ({name}): {source}")]
    AtLayer {
        index: usize,
        name: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn unsupported(layer: impl Into<String>, op: impl Into<String>) -> Self {
        Error::Unsupported {
            layer: layer.into(),
            op: op.into(),
        }
    }

    pub(crate) fn at_layer(self, index: usize, name: &'static str) -> Self {
        match self {
            e @ Error::AtLayer { .. } => e,
            other => Error::AtLayer {
                index,
                name,
                source: Box::new(other),
            },
        }
    }

    /// Strips any [`Error::AtLayer`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLayer { source, .. } => source.root(),
            other => other,
        }
    }
}
