//! Run manifests: config hash, decisions in force, inputs and outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rem_core::ingest::Provenance;
use serde::{Deserialize, Serialize};

use crate::config::{LoadedConfig, RunConfig};
use crate::output::{sha256_file, sha256_str, OutputSet};

/// Fixed conventions of the engine, recorded with every run.
pub const DECISIONS: &[&str] = &[
    "risk set: every species-region dyad not occupied at t-; species are at risk from the window start",
    "events sharing a time form one stratum; ties handled by the configured rule",
    "trade between two regions is the sum of flows in both directions; dyads never reported count as zero",
    "trade gaps: leading zeros kept when the first observation is zero, otherwise log-linear fit of log(value + 1) on year",
    "land cover: linear interpolation between decadal anchors, held constant outside them, clamped to [0, 1]",
    "temperature gaps are an error",
    "sampling effort: distinct species native to or recorded in a region up to the cutoff year, over all taxa",
    "species set: species with at least one first record of the selected taxon",
    "variance components: Laplace approximation, coordinate-wise Brent search on log sigma",
    "mixed-model log-likelihood reported as the Laplace integrated value",
    "scaled Schoenfeld residuals include the coefficient estimate",
    "proportional-hazards test: exact score test of beta_j(t) = beta_j + gamma_j g(t)",
    "R-squared: 1 - exp(-(2/n)(l_model - l_null)) with n the number of events",
    "simulation: rates refreshed at integer years, baseline breaks, period starts and after each event",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    /// Directory the config's relative paths refer to.
    pub base_dir: PathBuf,
    pub config: RunConfig,
    /// The config file verbatim.
    pub config_source: String,
    pub decisions: Vec<String>,
    pub seed: u64,
    /// Command-specific settings, such as the fit file diagnosed.
    pub arguments: Vec<(String, String)>,
    pub inputs: Vec<Provenance>,
    pub outputs: Vec<OutputEntry>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &LoadedConfig) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_str(&cfg.source),
            base_dir: cfg.base_dir.clone(),
            config: cfg.config.clone(),
            config_source: cfg.source.clone(),
            decisions: DECISIONS.iter().map(|s| s.to_string()).collect(),
            seed: cfg.config.seed,
            arguments: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Hashes the outputs (paths relative to `root`) and writes the manifest to `path`.
    pub fn finish(mut self, outputs: &OutputSet, root: &Path, path: &Path) -> Result<()> {
        for f in &outputs.files {
            let rel = f.strip_prefix(root).unwrap_or(f);
            self.outputs.push(OutputEntry { file: rel.display().to_string(), sha256: sha256_file(f)? });
        }
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))
    }

    /// The config recorded in the manifest, resolved against its original directory.
    pub fn loaded_config(&self) -> Result<LoadedConfig> {
        let config: RunConfig = toml::from_str(&self.config_source).context("invalid config in manifest")?;
        Ok(LoadedConfig { config, base_dir: self.base_dir.clone(), source: self.config_source.clone() })
    }
}
