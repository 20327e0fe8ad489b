use std::fmt::Display;

/// Data could not be processed in full; some outputs may exist.
pub const EXIT_DATA: u8 = 1;
/// Invalid invocation, configuration or input file.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Display) -> Self {
        CliError { code: EXIT_USAGE, message: message.to_string() }
    }

    pub fn data(message: impl Display) -> Self {
        CliError { code: EXIT_DATA, message: message.to_string() }
    }

    /// Configuration and protocol errors are usage errors; everything else
    /// is a data failure.
    pub fn classify(err: mesti_core::Error) -> Self {
        use mesti_core::Error as E;
        match err {
            E::Config(_) | E::Protocol(_) | E::InvalidArgument(_) => CliError::usage(err),
            E::Fold { ref source, .. } if matches!(**source, E::Config(_) | E::Protocol(_)) => CliError::usage(err),
            _ => CliError::data(err),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
