use std::fmt;

use segxai::aggregate::AggregateError;
use segxai::attribution::AttributionError;
use segxai::container::ContainerError;
use segxai::metrics::MetricError;
use segxai::model::ModelError;
use segxai::outlier::OutlierError;
use segxai::volume::VolumeError;
use serde::Serialize;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Config,
    Transport,
    Model,
    Data,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 1,
            Kind::Transport | Kind::Model => 2,
            Kind::Data => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Data, message: message.into() }
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind,
            "exit_code": self.kind.exit_code(),
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match &e {
            ModelError::Transport(_) => Kind::Transport,
            ModelError::DimMismatch { .. } | ModelError::ClassOutOfRange { .. } | ModelError::Volume(_) => Kind::Data,
            _ => Kind::Model,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<VolumeError> for CliError {
    fn from(e: VolumeError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<AttributionError> for CliError {
    fn from(e: AttributionError) -> Self {
        match e {
            AttributionError::Model(m) => m.into(),
            AttributionError::Volume(v) => v.into(),
            AttributionError::InvalidParam(msg) => CliError::config(msg),
            e @ AttributionError::Singular { .. } => CliError { kind: Kind::Model, message: e.to_string() },
        }
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => CliError::config(io.to_string()),
            e => CliError::data(e.to_string()),
        }
    }
}

impl From<AggregateError> for CliError {
    fn from(e: AggregateError) -> Self {
        match e {
            AggregateError::InvalidParam(msg) => CliError::config(msg),
            e => CliError::data(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Attribution(a) => a.into(),
            MetricError::Model(m) => m.into(),
            MetricError::InvalidParam(msg) => CliError::config(msg),
        }
    }
}

impl From<OutlierError> for CliError {
    fn from(e: OutlierError) -> Self {
        match e {
            OutlierError::InvalidParam(msg) => CliError::config(msg),
            e => CliError::data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(e.to_string())
    }
}
