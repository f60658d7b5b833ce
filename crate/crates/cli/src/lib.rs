//! Error type and file formats shared by the `hmt` binary.

pub mod io;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            kind: "data",
            message: message.into(),
        }
    }
}

impl From<hmt_core::Error> for CliError {
    fn from(e: hmt_core::Error) -> Self {
        use hmt_core::Error as E;
        let (code, kind) = if e.is_numeric() {
            (EXIT_NUMERIC, "numeric")
        } else if matches!(e, E::Config(_) | E::Mode(_)) {
            (EXIT_USAGE, "usage")
        } else {
            (EXIT_DATA, "data")
        };
        CliError {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}
