//! The run configuration, read from a TOML file.
//!
//! ```toml
//! output = "out"
//! seed = 7
//!
//! [data]
//! taxon = "mammals"          # a taxon label, or "all"
//! window = [1880, 2005]
//!
//! [data.files]
//! first_records = "data/first_records.csv"
//! natives = "data/natives.csv"
//! distance = "data/distance.csv"
//!
//! [model]
//! covariates = [{ kind = "distance", effect = "piecewise" }]
//!
//! [fit]
//! dyadic_forms = ["ordered", "symmetric"]
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rem_core::diagnostics::{CorrelationRows, TimeTransform};
use rem_core::estimator::{MixedOptions, NewtonOptions};
use rem_core::ingest::{DataPaths, LoadConfig};
use rem_core::simulator::{Baseline, FrailtySigmas, GenerativeSpec, WorldConfig};
use rem_core::{DyadicForm, ModelSpec, Window};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory receiving every output.
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
    pub simulate: Option<SimulateSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub files: DataPaths,
    #[serde(default = "all_taxa")]
    pub taxon: String,
    pub window: [f64; 2],
    #[serde(default = "effort_cutoff")]
    pub effort_cutoff: f64,
}

fn all_taxa() -> String {
    "all".into()
}

fn effort_cutoff() -> f64 {
    1880.0
}

impl DataSection {
    pub fn window(&self) -> Result<Window> {
        Ok(Window::new(self.window[0], self.window[1])?)
    }

    pub fn load_config(&self) -> Result<LoadConfig> {
        let taxon = (!self.taxon.eq_ignore_ascii_case("all")).then(|| self.taxon.clone());
        Ok(LoadConfig { window: self.window()?, taxon, effort_cutoff: self.effort_cutoff })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Fit once per listed dyadic form; empty uses the model as declared.
    pub dyadic_forms: Vec<DyadicForm>,
    pub newton: NewtonOptions,
    pub mixed: MixedOptions,
    /// Entries per direction in the frailty rankings.
    pub top_k: usize,
    /// Keep every risk set in memory; by default only when it is small.
    pub materialize: Option<bool>,
    /// Covariate change used in the hazard-ratio report, by column or covariate name.
    pub hazard_ratio_deltas: BTreeMap<String, f64>,
    pub ci_level: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            dyadic_forms: Vec::new(),
            newton: NewtonOptions::default(),
            mixed: MixedOptions::default(),
            top_k: 5,
            materialize: None,
            hazard_ratio_deltas: BTreeMap::new(),
            ci_level: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub transform: TimeTransform,
    pub correlation_threshold: f64,
    pub correlation_rows: CorrelationRows,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection { transform: TimeTransform::default(), correlation_threshold: 0.7, correlation_rows: CorrelationRows::Events }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default)]
    pub world: WorldConfig,
    /// Seed of the synthetic world; the run seed when absent.
    #[serde(default)]
    pub world_seed: Option<u64>,
    pub beta_true: Vec<f64>,
    pub baseline: Baseline,
    #[serde(default)]
    pub sigmas: FrailtySigmas,
    pub window: [f64; 2],
    #[serde(default)]
    pub max_events: Option<usize>,
    #[serde(default = "custom_taxon")]
    pub taxon: String,
    /// Generative model; the `[model]` section when absent.
    #[serde(default)]
    pub model: Option<ModelSpec>,
}

fn custom_taxon() -> String {
    "custom".into()
}

impl SimulateSection {
    pub fn generative_spec(&self, model: &ModelSpec) -> Result<GenerativeSpec> {
        let spec = GenerativeSpec {
            model: self.model.clone().unwrap_or_else(|| model.clone()),
            beta_true: self.beta_true.clone(),
            baseline: self.baseline.clone(),
            sigmas: self.sigmas,
            window: Window::new(self.window[0], self.window[1])?,
            max_events: self.max_events,
            top_members: None,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A parsed config with the directory its relative paths refer to.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    /// Bytes the config was parsed from.
    pub source: String,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&source).with_context(|| format!("invalid config {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir, source })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.config.output)
    }

    pub fn data(&self) -> Result<&DataSection> {
        match &self.config.data {
            Some(d) => Ok(d),
            None => bail!("the config has no [data] section"),
        }
    }

    pub fn simulate(&self) -> Result<&SimulateSection> {
        match &self.config.simulate {
            Some(s) => Ok(s),
            None => bail!("the config has no [simulate] section"),
        }
    }

    /// Input files with relative paths resolved, checked for existence.
    pub fn data_paths(&self) -> Result<DataPaths> {
        let paths = self.data()?.files.clone().relative_to(&self.base_dir);
        let mut required = vec![&paths.first_records, &paths.natives, &paths.distance];
        required.extend(
            [&paths.regions, &paths.aliases, &paths.trade, &paths.temperature, &paths.landcover, &paths.empires, &paths.sampling_effort]
                .into_iter()
                .flatten(),
        );
        for p in required {
            if !p.exists() {
                bail!("input file {} does not exist", p.display());
            }
        }
        Ok(paths)
    }

    pub fn transform(&self) -> TimeTransform {
        self.config.diagnose.transform
    }
}
