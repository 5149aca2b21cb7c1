//! Exit-code classification.

use std::fmt;

/// A problem with the invocation or its inputs rather than with computing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// 2 for missing files, schema violations and bad arguments; 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let is_usage = err.chain().any(|cause| {
        cause.is::<UsageError>()
            || cause.is::<serde_json::Error>()
            || cause
                .downcast_ref::<gmmd_io::IoError>()
                .is_some_and(gmmd_io::IoError::is_input_error)
            || matches!(
                cause.downcast_ref::<gmmd_core::Error>(),
                Some(gmmd_core::Error::InvalidInput(_))
            )
    });
    if is_usage {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}
