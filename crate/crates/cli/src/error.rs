use std::fmt;

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NUMERIC: u8 = 2;
pub const EXIT_CHECK: u8 = 3;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            msg: msg.into(),
        }
    }

    pub fn check(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CHECK,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<edgemask_core::Error> for CliError {
    fn from(e: edgemask_core::Error) -> Self {
        CliError {
            code: if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_CONFIG
            },
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::config(e.to_string())
    }
}
