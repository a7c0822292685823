//! Blocked data-augmentation Gibbs samplers and their stored draws.

pub mod discrete;
pub mod gaussian;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Iteration plan for one fit. The seed is mandatory; there is no
/// wall-clock default anywhere in the crate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    /// Persist per-person effects alongside the global draws. Off by
    /// default: the person dimension is large.
    pub store_person_effects: bool,
}

impl ChainConfig {
    /// Paper-default plan for the Gaussian model: 20k iterations, 5k burn-in.
    pub fn new(seed: u64) -> Self {
        ChainConfig {
            iterations: 20_000,
            burn_in: 5_000,
            thin: 1,
            seed,
            chains: 1,
            store_person_effects: false,
        }
    }

    /// Paper-default plan for the discrete-mixture model: 80k/40k.
    pub fn new_discrete(seed: u64) -> Self {
        ChainConfig {
            iterations: 80_000,
            burn_in: 40_000,
            ..ChainConfig::new(seed)
        }
    }

    pub fn with_iterations(mut self, iterations: usize, burn_in: usize) -> Self {
        self.iterations = iterations;
        self.burn_in = burn_in;
        self
    }

    pub fn with_chains(mut self, chains: usize) -> Self {
        self.chains = chains;
        self
    }

    pub fn with_thin(mut self, thin: usize) -> Self {
        self.thin = thin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::config("burn_in must be smaller than iterations"));
        }
        if self.thin == 0 {
            return Err(Error::config("thin must be positive"));
        }
        if self.chains == 0 {
            return Err(Error::config("chain count must be positive"));
        }
        Ok(())
    }

    /// Number of stored draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Which random-effect specification produced a set of draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Gaussian,
    Discrete,
}

/// One stored draw of the global parameters.
#[derive(Clone, Debug)]
pub enum GlobalDraw {
    Gaussian {
        mu: f64,
        tau: f64,
        beta: Vec<f64>,
    },
    Discrete {
        beta: Vec<f64>,
        atoms: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl GlobalDraw {
    pub fn beta(&self) -> &[f64] {
        match self {
            GlobalDraw::Gaussian { beta, .. } => beta,
            GlobalDraw::Discrete { beta, .. } => beta,
        }
    }
}

/// Post-burn-in draws from one or more chains, plus enough metadata to
/// reproduce and to serialize them.
#[derive(Clone, Debug)]
pub struct ChainDraws {
    pub model: ModelTag,
    pub p: usize,
    /// Mixture size for the discrete model, 0 otherwise.
    pub k: usize,
    pub chains: usize,
    pub chain_of_draw: Vec<u32>,
    pub iteration_of_draw: Vec<u32>,
    pub globals: Vec<GlobalDraw>,
    /// Per-person effect per stored draw (θ_i for the Gaussian model, the
    /// assigned atom for the discrete model); stored only on request.
    pub person_effects: Option<Vec<Vec<f64>>>,
    /// Occupied component count per stored draw (discrete model only).
    pub occupancy: Option<Vec<u32>>,
    pub covariate_names: Vec<String>,
    pub config: ChainConfig,
}

/// JSON sidecar written next to every chain CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainMeta {
    pub model: ModelTag,
    pub p: usize,
    pub k: usize,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub store_person_effects: bool,
    pub n_persons: usize,
    pub covariate_names: Vec<String>,
    pub columns: Vec<String>,
}

impl ChainDraws {
    pub fn n_draws(&self) -> usize {
        self.globals.len()
    }

    /// Column names of the CSV serialization, in order.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["chain".to_string(), "iteration".to_string()];
        match self.model {
            ModelTag::Gaussian => {
                cols.push("mu".into());
                cols.push("tau".into());
            }
            ModelTag::Discrete => {
                cols.push("q".into());
            }
        }
        for j in 0..self.p {
            cols.push(format!("beta_{}", j + 1));
        }
        if self.model == ModelTag::Discrete {
            for k in 0..self.k {
                cols.push(format!("atom_{}", k + 1));
            }
            for k in 0..self.k {
                cols.push(format!("weight_{}", k + 1));
            }
        }
        if let Some(effects) = &self.person_effects {
            let m = effects.first().map_or(0, Vec::len);
            for i in 0..m {
                cols.push(format!("effect_{}", i + 1));
            }
        }
        cols
    }

    pub fn meta(&self, n_persons: usize) -> ChainMeta {
        ChainMeta {
            model: self.model,
            p: self.p,
            k: self.k,
            chains: self.chains,
            iterations: self.config.iterations,
            burn_in: self.config.burn_in,
            thin: self.config.thin,
            seed: self.config.seed,
            store_person_effects: self.config.store_person_effects,
            n_persons,
            covariate_names: self.covariate_names.clone(),
            columns: self.columns(),
        }
    }

    /// Columnar CSV, one row per stored draw. Floats use Rust's shortest
    /// round-trip formatting so serialization is lossless and byte-stable.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", self.columns().join(","))?;
        let mut line = String::new();
        for d in 0..self.n_draws() {
            line.clear();
            line.push_str(&self.chain_of_draw[d].to_string());
            line.push(',');
            line.push_str(&self.iteration_of_draw[d].to_string());
            match &self.globals[d] {
                GlobalDraw::Gaussian { mu, tau, beta } => {
                    line.push_str(&format!(",{mu},{tau}"));
                    for b in beta {
                        line.push_str(&format!(",{b}"));
                    }
                }
                GlobalDraw::Discrete { beta, atoms, weights } => {
                    let q = self.occupancy.as_ref().map_or(0, |o| o[d]);
                    line.push_str(&format!(",{q}"));
                    for b in beta {
                        line.push_str(&format!(",{b}"));
                    }
                    for a in atoms {
                        line.push_str(&format!(",{a}"));
                    }
                    for v in weights {
                        line.push_str(&format!(",{v}"));
                    }
                }
            }
            if let Some(effects) = &self.person_effects {
                for e in &effects[d] {
                    line.push_str(&format!(",{e}"));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>, n_persons: usize) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(csv_path, buf)?;
        let meta = serde_json::to_string_pretty(&self.meta(n_persons))
            .map_err(|e| Error::Sampler(format!("metadata serialization failed: {e}")))?;
        std::fs::write(meta_path, meta)?;
        Ok(())
    }

    /// Load draws previously written by [`ChainDraws::save`].
    pub fn load(csv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<ChainDraws> {
        let meta: ChainMeta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)
            .map_err(|e| Error::data(format!("chain metadata: {e}")))?;
        let file = std::io::BufReader::new(std::fs::File::open(csv_path)?);
        let mut lines = file.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::data("chain csv: empty file"))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols != meta.columns.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::data("chain csv: header does not match metadata"));
        }
        let mut chain_of_draw = Vec::new();
        let mut iteration_of_draw = Vec::new();
        let mut globals = Vec::new();
        let mut occupancy = if meta.model == ModelTag::Discrete { Some(Vec::new()) } else { None };
        let mut person_effects = if meta.store_person_effects { Some(Vec::new()) } else { None };
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next_f64 = || -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| Error::data("chain csv: short row"))?
                    .parse::<f64>()
                    .map_err(|e| Error::data(format!("chain csv: {e}")))
            };
            chain_of_draw.push(next_f64()? as u32);
            iteration_of_draw.push(next_f64()? as u32);
            match meta.model {
                ModelTag::Gaussian => {
                    let mu = next_f64()?;
                    let tau = next_f64()?;
                    let beta = (0..meta.p).map(|_| next_f64()).collect::<Result<_>>()?;
                    globals.push(GlobalDraw::Gaussian { mu, tau, beta });
                }
                ModelTag::Discrete => {
                    let q = next_f64()? as u32;
                    occupancy.as_mut().unwrap().push(q);
                    let beta = (0..meta.p).map(|_| next_f64()).collect::<Result<_>>()?;
                    let atoms = (0..meta.k).map(|_| next_f64()).collect::<Result<_>>()?;
                    let weights = (0..meta.k).map(|_| next_f64()).collect::<Result<_>>()?;
                    globals.push(GlobalDraw::Discrete { beta, atoms, weights });
                }
            }
            if let Some(effects) = person_effects.as_mut() {
                let row = (0..meta.n_persons).map(|_| next_f64()).collect::<Result<_>>()?;
                effects.push(row);
            }
        }
        let config = ChainConfig {
            iterations: meta.iterations,
            burn_in: meta.burn_in,
            thin: meta.thin,
            seed: meta.seed,
            chains: meta.chains,
            store_person_effects: meta.store_person_effects,
        };
        Ok(ChainDraws {
            model: meta.model,
            p: meta.p,
            k: meta.k,
            chains: meta.chains,
            chain_of_draw,
            iteration_of_draw,
            globals,
            person_effects,
            occupancy,
            covariate_names: meta.covariate_names,
            config,
        })
    }

    /// Series of one named scalar summary per draw, for diagnostics.
    /// Discrete mixture columns are reported through label-invariant
    /// functionals of the mixing law rather than raw component labels.
    pub fn parameter_series(&self) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = Vec::new();
        match self.model {
            ModelTag::Gaussian => {
                out.push(("mu".into(), self.globals.iter().map(|g| match g {
                    GlobalDraw::Gaussian { mu, .. } => *mu,
                    _ => unreachable!(),
                }).collect()));
                out.push(("tau".into(), self.globals.iter().map(|g| match g {
                    GlobalDraw::Gaussian { tau, .. } => *tau,
                    _ => unreachable!(),
                }).collect()));
            }
            ModelTag::Discrete => {
                out.push(("mix_mean".into(), self.globals.iter().map(|g| match g {
                    GlobalDraw::Discrete { atoms, weights, .. } => {
                        atoms.iter().zip(weights).map(|(a, w)| a * w).sum()
                    }
                    _ => unreachable!(),
                }).collect()));
                out.push(("mix_sd".into(), self.globals.iter().map(|g| match g {
                    GlobalDraw::Discrete { atoms, weights, .. } => {
                        let mean: f64 = atoms.iter().zip(weights).map(|(a, w)| a * w).sum();
                        let second: f64 = atoms.iter().zip(weights).map(|(a, w)| a * a * w).sum();
                        (second - mean * mean).max(0.0).sqrt()
                    }
                    _ => unreachable!(),
                }).collect()));
            }
        }
        for j in 0..self.p {
            let name = self
                .covariate_names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("beta_{}", j + 1));
            out.push((
                format!("beta[{name}]"),
                self.globals.iter().map(|g| g.beta()[j]).collect(),
            ));
        }
        out
    }

    /// The same series split by chain, for split-R̂/ESS.
    pub fn series_by_chain(&self, series: &[f64]) -> Vec<Vec<f64>> {
        let mut per_chain = vec![Vec::new(); self.chains];
        for (d, &c) in self.chain_of_draw.iter().enumerate() {
            per_chain[c as usize].push(series[d]);
        }
        per_chain
    }
}

/// Precomputed factorization of X'X + (1/prior_var) I, shared by both
/// samplers; X is fixed so this happens once per fit.
pub(crate) struct DesignCache {
    pub chol: Cholesky,
}

impl DesignCache {
    pub fn new(data: &PanelDataset, beta_prior_var: f64) -> Result<Self> {
        let p = data.n_covariates();
        let n = data.n_obs();
        let mut xtx = vec![0.0; p * p];
        for r in 0..n {
            let row = data.x_row(r);
            for i in 0..p {
                for j in 0..=i {
                    xtx[i * p + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..p {
            for j in (i + 1)..p {
                xtx[i * p + j] = xtx[j * p + i];
            }
            xtx[i * p + i] += 1.0 / beta_prior_var;
        }
        Ok(DesignCache {
            chol: Cholesky::factor(&xtx, p)?,
        })
    }
}

/// X'v for a residual vector with one entry per row.
pub(crate) fn xt_times(data: &PanelDataset, v: &[f64]) -> Vec<f64> {
    let p = data.n_covariates();
    let mut out = vec![0.0; p];
    for (r, &vr) in v.iter().enumerate() {
        let row = data.x_row(r);
        for j in 0..p {
            out[j] += row[j] * vr;
        }
    }
    out
}
