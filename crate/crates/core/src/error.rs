use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// One violated invariant, tagged with the field it concerns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

/// Every invariant a constructor found violated, in check order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl ValidationError {
    pub fn single(field: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationError {
            violations: vec![Violation {
                field: field.into(),
                message: message.into(),
            }],
        }
    }

    /// Prefixes every field name, e.g. `local_map.width` -> `pred[3].local_map.width`.
    pub fn nested(mut self, prefix: &str) -> Self {
        for v in &mut self.violations {
            v.field = format!("{prefix}.{}", v.field);
        }
        self
    }

    pub fn fields(&self) -> impl Iterator<Item = &str> {
        self.violations.iter().map(|v| v.field.as_str())
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "validation failed: ")?;
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

/// Accumulates violations so constructors can report all of them at once.
#[derive(Debug, Default)]
pub(crate) struct Checker(Vec<Violation>);

impl Checker {
    pub fn check(&mut self, ok: bool, field: &str, message: impl FnOnce() -> String) {
        if !ok {
            self.0.push(Violation {
                field: field.to_string(),
                message: message(),
            });
        }
    }

    pub fn absorb(&mut self, result: Result<(), ValidationError>, prefix: &str) {
        if let Err(e) = result {
            self.0.extend(e.nested(prefix).violations);
        }
    }

    pub fn finish(self) -> Result<(), ValidationError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations: self.0 })
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Validation(#[from] ValidationError),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("dangling file references: {}", .0.join(", "))]
    DanglingReferences(Vec<String>),

    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),

    #[error("missing {what} for instances {ids:?}")]
    MissingScore { what: &'static str, ids: Vec<u64> },

    #[error("no images")]
    NoImages,

    #[error("infeasible synthesis request: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
