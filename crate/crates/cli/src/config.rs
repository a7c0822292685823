//! Run configuration: a single TOML file naming the data, schema, model,
//! analysis, and simulation settings. The seed is mandatory; commands never
//! fall back to wall-clock entropy.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use panelprobit::data::SchemaConfig;
use panelprobit::error::{Error, Result};
use panelprobit::gibbs::ChainConfig;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    /// Hex SHA-256 of the config file text, for provenance metadata.
    #[serde(skip)]
    pub config_hash: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    /// Records strictly after this date form the holdout set.
    pub cutoff_date: Option<chrono::NaiveDate>,
    pub schema: Option<SchemaConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct ModelSection {
    #[serde(default)]
    pub kind: ModelKind,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub store_person_effects: bool,
    // Discrete-mixture settings.
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_true")]
    pub atom_prior_precision: bool,
    #[serde(default)]
    pub weights_person_counts: bool,
    // Binomial-mixture settings.
    #[serde(default = "default_binmix_j")]
    pub mixture_components: usize,
    #[serde(default = "default_one")]
    pub beta_a: f64,
    #[serde(default = "default_one")]
    pub beta_b: f64,
    pub weight_concentration: Option<f64>,
}

fn default_thin() -> usize {
    1
}
fn default_chains() -> usize {
    1
}
fn default_components() -> usize {
    30
}
fn default_binmix_j() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_one() -> f64 {
    1.0
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Gaussian,
            iterations: None,
            burn_in: None,
            thin: 1,
            chains: 1,
            store_person_effects: false,
            components: 30,
            atom_prior_precision: true,
            weights_person_counts: false,
            mixture_components: 5,
            beta_a: 1.0,
            beta_b: 1.0,
            weight_concentration: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Gaussian,
    Discrete,
    BinomialMixture,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Gaussian => "gaussian",
            ModelKind::Discrete => "discrete",
            ModelKind::BinomialMixture => "binomial_mixture",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_schemes")]
    pub schemes: Vec<String>,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_alpha")]
    pub interval_alpha: f64,
    #[serde(default = "default_flag_threshold")]
    pub flag_threshold: f64,
    #[serde(default = "default_certainty_grid")]
    pub certainty_grid: Vec<f64>,
    #[serde(default = "default_cutoff_grid")]
    pub cutoff_grid: Vec<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_grid_halfwidth")]
    pub grid_halfwidth: f64,
    #[serde(default)]
    pub custom_thresholds: Vec<f64>,
}

fn default_schemes() -> Vec<String> {
    vec!["psa_midpoint".into(), "psa_sized".into(), "clustered".into()]
}
fn default_groups() -> usize {
    6
}
fn default_alpha() -> f64 {
    0.05
}
fn default_flag_threshold() -> f64 {
    0.25
}
fn default_certainty_grid() -> Vec<f64> {
    vec![0.8, 0.9, 0.95, 0.99]
}
fn default_cutoff_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.05).collect()
}
fn default_grid_points() -> usize {
    401
}
fn default_grid_halfwidth() -> f64 {
    8.0
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            schemes: default_schemes(),
            groups: default_groups(),
            interval_alpha: default_alpha(),
            flag_threshold: default_flag_threshold(),
            certainty_grid: default_certainty_grid(),
            cutoff_grid: default_cutoff_grid(),
            grid_points: default_grid_points(),
            grid_halfwidth: default_grid_halfwidth(),
            custom_thresholds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_p0")]
    pub p0: f64,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_eval_points")]
    pub eval_points: Vec<usize>,
    #[serde(default = "default_cohort")]
    pub cohort_size: usize,
}

fn default_p0() -> f64 {
    0.2
}
fn default_taus() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.45, 0.6]
}
fn default_replicates() -> usize {
    1000
}
fn default_eval_points() -> Vec<usize> {
    vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]
}
fn default_cohort() -> usize {
    60
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            p0: default_p0(),
            taus: default_taus(),
            replicates: default_replicates(),
            eval_points: default_eval_points(),
            cohort_size: default_cohort(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("config parse: {e}")))?;
        config.config_hash = format!("{:x}", Sha256::digest(text.as_bytes()));
        // Paths are resolved relative to the config file's directory.
        if let Some(base) = path.parent() {
            if config.data.path.is_relative() {
                config.data.path = base.join(&config.data.path);
            }
            if config.output_dir.is_relative() {
                config.output_dir = base.join(&config.output_dir);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(Error::config("seed is mandatory (no wall-clock default)"));
        }
        if !self.data.path.exists() {
            return Err(Error::config(format!(
                "data path {} does not exist",
                self.data.path.display()
            )));
        }
        if self.model.kind != ModelKind::BinomialMixture && self.data.schema.is_none() {
            return Err(Error::config("data.schema is required for panel models"));
        }
        if !(self.analysis.interval_alpha > 0.0 && self.analysis.interval_alpha < 1.0) {
            return Err(Error::config("analysis.interval_alpha must lie in (0,1)"));
        }
        if self.analysis.grid_points < 3 || !(self.analysis.grid_halfwidth > 0.0) {
            return Err(Error::config("analysis grid settings invalid"));
        }
        Ok(())
    }

    /// Chain plan with the model-appropriate default iteration counts.
    pub fn chain_config(&self) -> Result<ChainConfig> {
        let mut cc = match self.model.kind {
            ModelKind::Discrete => ChainConfig::new_discrete(self.seed()),
            _ => ChainConfig::new(self.seed()),
        };
        if let Some(iterations) = self.model.iterations {
            let burn_in = self.model.burn_in.unwrap_or(iterations / 4);
            cc = cc.with_iterations(iterations, burn_in);
        } else if let Some(burn_in) = self.model.burn_in {
            cc.burn_in = burn_in;
        }
        cc = cc.with_thin(self.model.thin).with_chains(self.model.chains);
        cc.store_person_effects = self.model.store_person_effects;
        cc.validate()?;
        Ok(cc)
    }
}
