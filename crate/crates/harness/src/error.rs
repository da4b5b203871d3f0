use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("cannot parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error(transparent)]
    Core(#[from] fahmc_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("reference sample file {path} not found; generate it with `fahmc run --config <reference config>` and point [reference] at the written samples.bin")]
    MissingReference { path: PathBuf },
    #[error("did not converge: {0}")]
    NonConvergence(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 divergence, 4 non-convergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use fahmc_core::Error as E;
        match self {
            Self::Config { .. } | Self::ConfigParse { .. } | Self::MissingReference { .. } => 2,
            Self::Core(e) if e.is_divergence() => 3,
            Self::Core(
                E::InvalidConfig(_)
                | E::InvalidSchedule(_)
                | E::UnsupportedNoise { .. }
                | E::DimensionMismatch { .. }
                | E::DegenerateSchedule
                | E::InvalidContraction(_),
            ) => 2,
            Self::NonConvergence(_) => 4,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::config("a", "b").exit_code(), 2);
        let div = fahmc_core::Error::Diverged {
            step: 3,
            iteration: Some(1),
            node: Some(0),
        };
        assert_eq!(HarnessError::from(div).exit_code(), 3);
        assert_eq!(HarnessError::NonConvergence("x".into()).exit_code(), 4);
        assert_eq!(
            HarnessError::from(fahmc_core::Error::Contract("x".into())).exit_code(),
            1
        );
    }
}
