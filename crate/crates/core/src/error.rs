use std::path::PathBuf;

use thiserror::Error;

use crate::scenario::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse scenario {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid scenario: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("random walk start {x0} outside [{lower}, {upper}]")]
    Bounds { x0: f64, lower: f64, upper: f64 },

    /// Local electrical demand cannot be met from all sources combined.
    #[error("infeasible demand at t={t}: {unmet:.6} MW of local demand cannot be served")]
    InfeasibleDemand { t: usize, unmet: f64 },

    #[error("sweep configuration error: {0}")]
    Sweep(String),

    #[error("normalization group {group} has no positive value")]
    Degenerate { group: usize },

    #[error("output error: {0}")]
    Output(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("{} ({}): {}", v.code, v.path, v.message))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
