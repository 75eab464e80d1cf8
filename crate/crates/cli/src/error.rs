use std::path::PathBuf;

/// Failure of a CLI invocation; [`CliError::exit_code`] maps it onto the
/// process exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source:#}")]
    Stage {
        stage: String,
        #[source]
        source: anyhow::Error,
    },
    #[error("stage {stage} needs {}; run `{run_first}` first", missing.display())]
    Upstream {
        stage: String,
        missing: PathBuf,
        run_first: String,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Stage { .. } => 4,
            CliError::Upstream { .. } => 5,
        }
    }

    pub fn stage(stage: &str, source: impl Into<anyhow::Error>) -> Self {
        CliError::Stage {
            stage: stage.to_string(),
            source: source.into(),
        }
    }

    /// One-line JSON rendering for standard error.
    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Stage { .. } => "stage",
            CliError::Upstream { .. } => "upstream-missing",
        };
        let mut v = serde_json::json!({
            "error": kind,
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            CliError::Stage { stage, .. } => v["stage"] = stage.as_str().into(),
            CliError::Upstream { stage, run_first, .. } => {
                v["stage"] = stage.as_str().into();
                v["run_first"] = run_first.as_str().into();
            }
            _ => {}
        }
        v
    }
}

pub type CliResult<T> = Result<T, CliError>;
