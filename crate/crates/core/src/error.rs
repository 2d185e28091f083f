use thiserror::Error;

/// Errors raised by the DRAM command model.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DramError {
    #[error("timing violation: {param} requires cycle >= {earliest}, got {cycle}")]
    TimingViolation {
        param: &'static str,
        earliest: u64,
        cycle: u64,
    },
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("address out of range: bank {bank}, row {row}")]
    AddressOutOfRange { bank: usize, row: u32 },
}

/// Configuration and input validation failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("invalid template: {0}")]
    Template(String),
    #[error("invalid bin configuration: {0}")]
    Bins(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Error)]
pub enum CharacterizeError {
    #[error("victim row {row} in bank {bank} has no neighbor on both sides")]
    EdgeVictim { bank: usize, row: u32 },
    #[error(transparent)]
    Dram(#[from] DramError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed record: {0}")]
    Malformed(String),
}

impl IoError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Dram(#[from] DramError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid trace: {0}")]
    Trace(String),
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty k range [{lo}, {hi}]")]
    EmptyKRange { lo: usize, hi: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
}
