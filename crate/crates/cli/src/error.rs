use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] dtstream::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for bad input data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use dtstream::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                E::InvalidLambda(_)
                | E::InvalidFraction(_)
                | E::InvalidConfig(_)
                | E::TooFewObservations { .. } => 2,
                E::Parse { .. }
                | E::DimensionMismatch { .. }
                | E::LabelOutOfRange { .. }
                | E::TaskMismatch(_) => 3,
                _ => 1,
            },
            CliError::Io { .. } => 1,
        }
    }
}
