use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] biam::Error),

    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use biam::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Verify(_) => 4,
            CliError::Core(e) => match e {
                E::Config(_) | E::Parameter(_) => 2,
                E::Dimension(_)
                | E::Dataset { .. }
                | E::Format { .. }
                | E::Embedding(_)
                | E::Label(_)
                | E::Io { .. }
                | E::Json { .. } => 3,
                E::Numeric(_) | E::DegenerateBatch(_) | E::Metric(_) => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_classes() {
        assert_eq!(config_err("x").exit_code(), 2);
        assert_eq!(CliError::Verify("grad/matmul".into()).exit_code(), 4);
        assert_eq!(CliError::from(biam::Error::Parameter("k".into())).exit_code(), 2);
        let data = biam::Error::Dataset {
            image_id: "a".into(),
            message: "b".into(),
        };
        assert_eq!(CliError::from(data).exit_code(), 3);
        assert_eq!(CliError::from(biam::Error::Embedding("e".into())).exit_code(), 3);
    }
}
