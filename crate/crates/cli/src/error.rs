use forge_strategist::StrategistError;
use thiserror::Error;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const GENERIC: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const STRATEGIST: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const IO: i32 = 5;
    pub const NO_PLAN: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] forge_core::Error),
    #[error(transparent)]
    Strategist(#[from] StrategistError),
}

impl CliError {
    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        use forge_core::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io(_) => exit::IO,
            CliError::Core(e) => match e {
                E::Config(_) | E::Plan(_) | E::Parse(_) => exit::CONFIG,
                E::Divergence(_) => exit::DIVERGENCE,
                E::Io(_) | E::Checkpoint(_) => exit::IO,
                _ => exit::GENERIC,
            },
            CliError::Strategist(e) => match e {
                StrategistError::NoPlan(_) => exit::NO_PLAN,
                StrategistError::Io(_) => exit::IO,
                StrategistError::Render(_) => exit::GENERIC,
                _ => exit::STRATEGIST,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
