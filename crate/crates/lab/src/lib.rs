//! Experiment harness around `regretlab-core`: instance and config files,
//! seeded sweeps with CSV traces, post-hoc analyses and classification
//! reports.

use std::io;
use std::path::Path;

use thiserror::Error;

pub mod analyze;
pub mod config;
pub mod harness;
pub mod instance;
pub mod report;
pub mod traces;

pub use config::{AlgorithmSpec, AnalysisSpec, EnvConfig, ExperimentConfig, Learner, SeedSpec};
pub use harness::{run_experiment, Manifest, SweepOptions};
pub use instance::{AmbientFile, InstanceFile};

/// Environment variable overriding the output root of every experiment.
pub const OUT_ENV: &str = "REGRETLAB_OUT";

#[derive(Debug, Error)]
pub enum LabError {
    /// Bad user input; the message names the offending field.
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: regretlab_core::learner::LearnError,
    },
    #[error(transparent)]
    Mdp(#[from] regretlab_core::MdpError),
    #[error(transparent)]
    Env(#[from] regretlab_core::envs::EnvError),
    #[error(transparent)]
    Metrics(#[from] regretlab_core::metrics::MetricsError),
    #[error(transparent)]
    Analysis(#[from] regretlab_core::analysis::AnalysisError),
}

impl LabError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        Self::Csv {
            path: path.display().to_string(),
            source,
        }
    }

    /// Whether the error comes from user input rather than a failed run.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Self::Invalid(_) | Self::Json { .. } | Self::Mdp(_) | Self::Env(_))
    }
}

/// Floats in every CSV: 17 significant digits, round-trip exact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
