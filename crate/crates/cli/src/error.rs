use serde_json::{json, Value};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_INVARIANT: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<u64>,
        message: String,
    },
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] kernel_pool::Error),
    #[error("{0}")]
    Invariant(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn parse(path: &str, line: Option<u64>, message: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::Core(e) if e.is_consistency() => EXIT_INVARIANT,
            _ => EXIT_INPUT,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "parse",
            CliError::Input(_) => "input",
            CliError::Io { .. } => "io",
            CliError::Core(e) if e.is_consistency() => "invariant",
            CliError::Core(_) => "input",
            CliError::Invariant(_) => "invariant",
        }
    }

    /// The machine-readable record written to stderr.
    pub fn to_json(&self) -> Value {
        let message = match self {
            CliError::Parse { message, .. } => message.clone(),
            CliError::Io { source, .. } => source.to_string(),
            other => other.to_string(),
        };
        let mut v = json!({
            "error": self.kind(),
            "message": message,
        });
        match self {
            CliError::Parse { path, line, .. } => {
                v["file"] = json!(path);
                if let Some(l) = line {
                    v["line"] = json!(l);
                }
            }
            CliError::Io { path, .. } => v["file"] = json!(path),
            _ => {}
        }
        v
    }
}
