use std::fmt;

use vismem_core::ErrorCategory;

/// Error carrying the exit-status class it should produce.
#[derive(Debug)]
pub struct CliError {
    pub category: ErrorCategory,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, anyhow::Error>;

fn tagged(category: ErrorCategory, message: impl Into<String>) -> anyhow::Error {
    CliError {
        category,
        message: message.into(),
    }
    .into()
}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    tagged(ErrorCategory::Usage, message)
}

pub fn format_error(message: impl Into<String>) -> anyhow::Error {
    tagged(ErrorCategory::Format, message)
}

pub fn invariant(message: impl Into<String>) -> anyhow::Error {
    tagged(ErrorCategory::Invariant, message)
}

pub fn exit_code(category: ErrorCategory) -> i32 {
    match category {
        ErrorCategory::Usage => 2,
        ErrorCategory::Format => 3,
        ErrorCategory::Invariant => 4,
        ErrorCategory::Io => 5,
    }
}

/// Category of the first classifiable error in the chain.
pub fn categorize(err: &anyhow::Error) -> ErrorCategory {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.category;
        }
        if let Some(e) = cause.downcast_ref::<vismem_core::Error>() {
            return e.category();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ErrorCategory::Io;
        }
        if let Some(e) = cause.downcast_ref::<serde_json::Error>() {
            return if e.is_io() { ErrorCategory::Io } else { ErrorCategory::Format };
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if e.is_io_error() { ErrorCategory::Io } else { ErrorCategory::Format };
        }
    }
    ErrorCategory::Invariant
}
