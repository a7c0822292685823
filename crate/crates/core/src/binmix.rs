//! Binomial random-effect models with a discrete mixing distribution:
//! collapsed Gibbs over latent classes via beta-binomial marginals, Beta
//! posterior draws for the support points, and the Beta mixing-distribution
//! marginal likelihood.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::ChainConfig;
use crate::kernels::{
    log_beta_fn, ln_choose, sample_beta, sample_categorical_from_logweights, sample_dirichlet,
};
use crate::rng::{RngStream, StreamKey};

const STEP_Z: u64 = 21;
const STEP_WEIGHTS: u64 = 22;
const STEP_SUPPORT: u64 = 23;

/// One grouped count: y successes out of n trials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinomialObservation {
    pub successes: u64,
    pub trials: u64,
}

impl BinomialObservation {
    pub fn new(successes: u64, trials: u64) -> Result<Self> {
        if trials == 0 || successes > trials {
            return Err(Error::domain(format!(
                "binomial observation: need 0 <= y <= n with n >= 1, got y={successes} n={trials}"
            )));
        }
        Ok(BinomialObservation { successes, trials })
    }
}

/// Beta(a, b) prior shared by all support points.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BetaHyper {
    pub a: f64,
    pub b: f64,
}

impl BetaHyper {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::domain(format!("beta hyperparameters must be positive, got ({a}, {b})")));
        }
        Ok(BetaHyper { a, b })
    }
}

/// Full mixture state: support points, weights, assignments.
#[derive(Clone, Debug)]
pub struct BinMixState {
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
    pub z: Vec<usize>,
}

/// log P[y | n, a, b] under the beta-binomial.
pub fn beta_binomial_log_pmf(y: u64, n: u64, a: f64, b: f64) -> Result<f64> {
    if n == 0 || y > n {
        return Err(Error::domain(format!("beta_binomial_log_pmf: invalid (y={y}, n={n})")));
    }
    let hyper = BetaHyper::new(a, b)?;
    Ok(ln_choose(n, y)
        + log_beta_fn(hyper.a + y as f64, hyper.b + (n - y) as f64)?
        - log_beta_fn(hyper.a, hyper.b)?)
}

/// Success/trial totals per component, excluding one observation.
fn totals_excluding(
    data: &[BinomialObservation],
    z: &[usize],
    components: usize,
    skip: usize,
) -> Vec<(f64, f64)> {
    let mut totals = vec![(0.0, 0.0); components];
    for (i, (obs, &zi)) in data.iter().zip(z).enumerate() {
        if i != skip {
            totals[zi].0 += obs.successes as f64;
            totals[zi].1 += obs.trials as f64;
        }
    }
    totals
}

/// Collapsed log-weights for one observation: log w_j plus the log ratio of
/// Beta functions of component j's totals with and without the observation.
/// Empty components reduce to the prior-predictive beta-binomial.
pub fn collapsed_z_logweights(
    obs: BinomialObservation,
    totals_excl: &[(f64, f64)],
    weights: &[f64],
    hyper: BetaHyper,
) -> Result<Vec<f64>> {
    let y = obs.successes as f64;
    let n = obs.trials as f64;
    totals_excl
        .iter()
        .zip(weights)
        .map(|(&(yj, tj), &w)| {
            let fj = tj - yj;
            Ok(w.ln()
                + log_beta_fn(hyper.a + yj + y, hyper.b + fj + (n - y))?
                - log_beta_fn(hyper.a + yj, hyper.b + fj)?)
        })
        .collect()
}

/// Draw a new assignment for observation `i` given everyone else's.
pub fn collapsed_z_update(
    i: usize,
    data: &[BinomialObservation],
    z: &[usize],
    weights: &[f64],
    hyper: BetaHyper,
    rng: &mut RngStream,
) -> Result<usize> {
    let totals = totals_excluding(data, z, weights.len(), i);
    let logw = collapsed_z_logweights(data[i], &totals, weights, hyper)?;
    sample_categorical_from_logweights(&logw, rng)
}

/// Conjugate Beta parameters of support point j given assignments.
pub fn support_point_params(
    data: &[BinomialObservation],
    z: &[usize],
    j: usize,
    hyper: BetaHyper,
) -> (f64, f64) {
    let mut y = 0.0;
    let mut f = 0.0;
    for (obs, &zi) in data.iter().zip(z) {
        if zi == j {
            y += obs.successes as f64;
            f += (obs.trials - obs.successes) as f64;
        }
    }
    (hyper.a + y, hyper.b + f)
}

/// Draw all support points; empty components draw from the Beta(a,b) prior.
pub fn update_support_points(
    data: &[BinomialObservation],
    z: &[usize],
    components: usize,
    hyper: BetaHyper,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    (0..components)
        .map(|j| {
            let (a, b) = support_point_params(data, z, j, hyper);
            sample_beta(a, b, rng)
        })
        .collect()
}

/// Log marginal likelihood under the Beta mixing distribution, binomial
/// coefficients included so values are comparable across models.
pub fn beta_marginal_log_likelihood(data: &[BinomialObservation], hyper: BetaHyper) -> Result<f64> {
    let mut acc = 0.0;
    for obs in data {
        acc += beta_binomial_log_pmf(obs.successes, obs.trials, hyper.a, hyper.b)?;
    }
    Ok(acc)
}

/// Mixture-fit settings.
#[derive(Clone, Debug)]
pub struct BinMixOptions {
    /// Number of support points J.
    pub components: usize,
    pub hyper: BetaHyper,
    /// Symmetric Dirichlet concentration for the weights; defaults to 1/J,
    /// matching the overfitted-mixture convention.
    pub weight_concentration: Option<f64>,
}

impl BinMixOptions {
    pub fn new(components: usize, hyper: BetaHyper) -> Self {
        BinMixOptions { components, hyper, weight_concentration: None }
    }

    fn concentration(&self) -> f64 {
        self.weight_concentration
            .unwrap_or(1.0 / self.components as f64)
    }
}

/// Stored draws from the binomial mixture sampler.
#[derive(Clone, Debug)]
pub struct BinMixDraws {
    pub components: usize,
    pub weights: Vec<Vec<f64>>,
    pub support: Vec<Vec<f64>>,
    pub assignments: Vec<Vec<u32>>,
    pub occupied: Vec<u32>,
}

impl BinMixDraws {
    pub fn n_draws(&self) -> usize {
        self.weights.len()
    }

    /// Posterior frequencies of the occupied-component count.
    pub fn occupied_histogram(&self) -> std::collections::BTreeMap<u32, usize> {
        let mut hist = std::collections::BTreeMap::new();
        for &q in &self.occupied {
            *hist.entry(q).or_insert(0) += 1;
        }
        hist
    }

    /// Columnar CSV mirroring the probit chain format.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut cols = vec!["iteration".to_string(), "occupied".to_string()];
        for j in 0..self.components {
            cols.push(format!("w_{}", j + 1));
        }
        for j in 0..self.components {
            cols.push(format!("pi_{}", j + 1));
        }
        writeln!(w, "{}", cols.join(","))?;
        for d in 0..self.n_draws() {
            let mut line = format!("{},{}", d, self.occupied[d]);
            for v in &self.weights[d] {
                line.push_str(&format!(",{v}"));
            }
            for v in &self.support[d] {
                line.push_str(&format!(",{v}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

/// Read (y, n) pairs from a CSV with columns named y and n.
pub fn read_counts_csv(path: impl AsRef<Path>) -> Result<Vec<BinomialObservation>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let y_col = headers
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::config("counts csv: missing 'y' column"))?;
    let n_col = headers
        .iter()
        .position(|h| h == "n")
        .ok_or_else(|| Error::config("counts csv: missing 'n' column"))?;
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |field: Option<&str>, what: &str| -> Result<u64> {
            field
                .map(str::trim)
                .and_then(|f| f.parse::<u64>().ok())
                .ok_or_else(|| Error::data(format!("counts csv line {}: bad {what}", idx + 2)))
        };
        out.push(BinomialObservation::new(
            parse(record.get(y_col), "y")?,
            parse(record.get(n_col), "n")?,
        )?);
    }
    Ok(out)
}

/// Collapsed Gibbs over assignments, Dirichlet weight updates, and Beta
/// support-point draws for reporting. Assignment sweeps are sequential
/// within an iteration; the collapsed weights depend on the other
/// assignments through the component totals.
pub fn fit_binomial_mixture(
    data: &[BinomialObservation],
    options: &BinMixOptions,
    config: &ChainConfig,
) -> Result<BinMixDraws> {
    config.validate()?;
    let j = options.components;
    if j < 1 {
        return Err(Error::config("binomial mixture: J must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::data("binomial mixture: empty dataset"));
    }
    if j > data.len() {
        return Err(Error::config(format!(
            "binomial mixture: J={j} exceeds the number of observations {}",
            data.len()
        )));
    }
    let n = data.len();
    let conc = options.concentration();
    let hyper = options.hyper;

    // Initial assignments spread round-robin; weights uniform.
    let mut state = BinMixState {
        support: vec![0.5; j],
        weights: vec![1.0 / j as f64; j],
        z: (0..n).map(|i| i % j).collect(),
    };
    // Running totals per component: (successes, trials, members).
    let mut totals: Vec<(f64, f64, f64)> = vec![(0.0, 0.0, 0.0); j];
    for (obs, &zi) in data.iter().zip(&state.z) {
        totals[zi].0 += obs.successes as f64;
        totals[zi].1 += obs.trials as f64;
        totals[zi].2 += 1.0;
    }

    let mut draws = BinMixDraws {
        components: j,
        weights: Vec::with_capacity(config.draws_per_chain()),
        support: Vec::with_capacity(config.draws_per_chain()),
        assignments: Vec::with_capacity(config.draws_per_chain()),
        occupied: Vec::with_capacity(config.draws_per_chain()),
    };

    let mut excl = vec![(0.0, 0.0); j];
    for iter in 0..config.iterations {
        let iter_key = iter as u64 + 1;
        // Collapsed assignment sweep.
        for i in 0..n {
            let zi = state.z[i];
            totals[zi].0 -= data[i].successes as f64;
            totals[zi].1 -= data[i].trials as f64;
            totals[zi].2 -= 1.0;
            for (e, t) in excl.iter_mut().zip(&totals) {
                *e = (t.0, t.1);
            }
            let logw = collapsed_z_logweights(data[i], &excl, &state.weights, hyper)?;
            let mut rng =
                RngStream::new(config.seed, StreamKey::new(0, iter_key, i as u64)).substream(STEP_Z);
            let new_z = sample_categorical_from_logweights(&logw, &mut rng)?;
            state.z[i] = new_z;
            totals[new_z].0 += data[i].successes as f64;
            totals[new_z].1 += data[i].trials as f64;
            totals[new_z].2 += 1.0;
        }
        // Weight update: Dirichlet with assignment counts.
        let concs: Vec<f64> = totals.iter().map(|t| conc + t.2).collect();
        let mut rng =
            RngStream::new(config.seed, StreamKey::new(0, iter_key, 0)).substream(STEP_WEIGHTS);
        state.weights = sample_dirichlet(&concs, &mut rng)?;
        // Support points for reporting.
        let mut rng =
            RngStream::new(config.seed, StreamKey::new(0, iter_key, 0)).substream(STEP_SUPPORT);
        state.support = update_support_points(data, &state.z, j, hyper, &mut rng)?;

        if iter >= config.burn_in && (iter - config.burn_in) % config.thin == 0 {
            draws.weights.push(state.weights.clone());
            draws.support.push(state.support.clone());
            draws.assignments.push(state.z.iter().map(|&x| x as u32).collect());
            draws.occupied.push(totals.iter().filter(|t| t.2 > 0.0).count() as u32);
        }
    }
    Ok(draws)
}
