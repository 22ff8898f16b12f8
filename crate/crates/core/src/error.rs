use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while building event streams, loading panels or fitting models.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown region `{region}` ({context})")]
    UnknownRegion { region: String, context: String },

    #[error("unknown species `{species}` ({context})")]
    UnknownSpecies { species: String, context: String },

    #[error("native-region record: species `{species}` recorded in its native region `{region}` ({context})")]
    NativeRegionRecord {
        species: String,
        region: String,
        context: String,
    },

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("panel `{panel}` has no value for {key} in year {year}")]
    PanelGap {
        panel: &'static str,
        key: String,
        year: i32,
    },

    #[error("proportions exceed 1 for region `{region}` in year {year} (cropland {cropland} + pasture {pasture} + urban {urban})")]
    ProportionsExceedOne {
        region: String,
        year: i32,
        cropland: f64,
        pasture: f64,
        urban: f64,
    },

    #[error("non-finite value in covariate column `{column}` at time {time}")]
    NonFiniteCovariate { column: String, time: f64 },

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("Newton iterations did not converge after {iterations} iterations (max |gradient| = {gradient_norm:e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        /// Log-likelihood after each accepted iterate.
        trace: Vec<f64>,
    },

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. } | Error::NonConvergence { .. } | Error::NonFiniteCovariate { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
