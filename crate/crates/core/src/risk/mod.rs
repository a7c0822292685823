//! Partial-information predictive probabilities: global parameters stay
//! conditioned on the training data while each person's random effect is
//! re-conditioned on that person's accumulated history, occasion by
//! occasion. Produces the per-occasion sample sets of P*ᵢⱼ (before seeing
//! the occasion's outcome) and Pᵢⱼ (after).

pub mod reports;
pub mod schemes;

use rayon::prelude::*;

use crate::data::PanelDataset;
use crate::diagnostics::quantile_sorted;
use crate::error::{Error, Result};
use crate::gibbs::{ChainDraws, GlobalDraw};
use crate::kernels::{log_phi, phi};
use crate::rng::{RngStream, StreamKey};

const STEP_PSTAR: u64 = 31;
const STEP_POST: u64 = 32;

/// Fixed quadrature grid for the one-dimensional random-effect posterior.
#[derive(Clone, Debug)]
pub struct ThetaGrid {
    points: Vec<f64>,
    step: f64,
}

impl ThetaGrid {
    /// Equally spaced grid on [lo, hi].
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || n < 3 {
            return Err(Error::config("theta grid: need hi > lo and at least 3 points"));
        }
        let step = (hi - lo) / (n - 1) as f64;
        Ok(ThetaGrid {
            points: (0..n).map(|g| lo + g as f64 * step).collect(),
            step,
        })
    }

    /// 401 points on [−8, 8].
    pub fn standard() -> Self {
        ThetaGrid::new(-8.0, 8.0, 401).expect("valid default grid")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

/// A normalized density over a [`ThetaGrid`], with cell masses for
/// piecewise-linear CDF inversion.
#[derive(Clone, Debug)]
pub struct GridPosterior {
    points: Vec<f64>,
    step: f64,
    /// Point densities normalized to unit trapezoid integral.
    density: Vec<f64>,
    /// Cumulative mass at each grid point; last entry is exactly 1.
    cdf: Vec<f64>,
}

impl GridPosterior {
    /// Build from unnormalized log-density values at the grid points.
    pub fn from_log_density(grid: &ThetaGrid, logd: Vec<f64>) -> GridPosterior {
        let max = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut density: Vec<f64> = logd.iter().map(|l| (l - max).exp()).collect();
        let n = density.len();
        let mut cdf = vec![0.0; n];
        let mut acc = 0.0;
        for g in 1..n {
            acc += 0.5 * (density[g - 1] + density[g]) * grid.step;
            cdf[g] = acc;
        }
        let total = acc;
        for d in density.iter_mut() {
            *d /= total;
        }
        for c in cdf.iter_mut() {
            *c /= total;
        }
        cdf[n - 1] = 1.0;
        GridPosterior {
            points: grid.points.clone(),
            step: grid.step,
            density,
            cdf,
        }
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Total trapezoid mass; 1 by construction.
    pub fn total_mass(&self) -> f64 {
        let n = self.density.len();
        let mut acc = 0.0;
        for g in 1..n {
            acc += 0.5 * (self.density[g - 1] + self.density[g]) * self.step;
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x)
    }

    /// Trapezoid expectation of f(θ).
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        let n = self.density.len();
        let mut acc = 0.0;
        for g in 0..n {
            let w = if g == 0 || g == n - 1 { 0.5 } else { 1.0 };
            acc += w * self.step * self.density[g] * f(self.points[g]);
        }
        acc
    }

    /// Piecewise-linear CDF inversion.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let idx = self.cdf.partition_point(|&c| c < p);
        if idx == 0 {
            return self.points[0];
        }
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let mass = c1 - c0;
        if mass <= 0.0 {
            return self.points[idx];
        }
        self.points[idx - 1] + self.step * (p - c0) / mass
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        self.quantile(rng.next_unit_open())
    }
}

/// Conditional posterior of one person's scaled random effect θ given their
/// history, under fixed globals: density ∝ N(θ; 0, 1) ∏ₛ Φ(lpₛ)^yₛ Φ(−lpₛ)^(1−yₛ)
/// where lpₛ = μ + τθ + xₛβ. History entries carry the xβ part already.
pub fn theta_conditional_posterior(
    grid: &ThetaGrid,
    history: &[(f64, u8)],
    mu: f64,
    tau: f64,
) -> GridPosterior {
    let logd: Vec<f64> = grid
        .points
        .iter()
        .map(|&theta| {
            let mut acc = -0.5 * theta * theta;
            for &(xb, y) in history {
                let lp = mu + tau * theta + xb;
                acc += if y == 1 { log_phi(lp) } else { log_phi(-lp) };
            }
            acc
        })
        .collect();
    GridPosterior::from_log_density(grid, logd)
}

/// Conditional posterior over mixture atoms given a person's history:
/// P[k] ∝ ν_k ∏ₛ Φ(θ_k + xₛβ)^yₛ Φ(−·)^(1−yₛ).
pub fn atom_conditional_posterior(atoms: &[f64], weights: &[f64], history: &[(f64, u8)]) -> Vec<f64> {
    let logw: Vec<f64> = atoms
        .iter()
        .zip(weights)
        .map(|(&atom, &w)| {
            let mut acc = w.ln();
            for &(xb, y) in history {
                let lp = atom + xb;
                acc += if y == 1 { log_phi(lp) } else { log_phi(-lp) };
            }
            acc
        })
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    probs
}

/// Predictive sample sets for one (person, occasion).
#[derive(Clone, Debug)]
pub struct OccasionPrediction {
    pub person_id: String,
    pub person: usize,
    pub row: usize,
    pub occasion: u32,
    pub outcome: u8,
    pub external_risk_group: Option<u8>,
    /// Number of occasions observed before this one (training plus earlier
    /// holdout).
    pub prior_observations: usize,
    /// One P*ᵢⱼ sample per stored global draw (history through j−1).
    pub pstar: Vec<f64>,
    /// One Pᵢⱼ sample per stored global draw (history through j).
    pub post: Vec<f64>,
}

impl OccasionPrediction {
    /// P̂*ᵢⱼ: the point estimate used for risk grouping.
    pub fn point_estimate(&self) -> f64 {
        self.pstar.iter().sum::<f64>() / self.pstar.len() as f64
    }

    pub fn post_mean(&self) -> f64 {
        self.post.iter().sum::<f64>() / self.post.len() as f64
    }

    fn sorted_post(&self) -> Vec<f64> {
        let mut s = self.post.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s
    }

    pub fn post_median(&self) -> f64 {
        quantile_sorted(&self.sorted_post(), 0.5)
    }

    /// Equal-tailed central (1 − alpha) interval of the Pᵢⱼ samples.
    pub fn post_interval(&self, alpha: f64) -> (f64, f64) {
        let s = self.sorted_post();
        (
            quantile_sorted(&s, alpha / 2.0),
            quantile_sorted(&s, 1.0 - alpha / 2.0),
        )
    }
}

/// All predictions for a selected set of occasions.
#[derive(Clone, Debug)]
pub struct PredictiveSummary {
    pub occasions: Vec<OccasionPrediction>,
    pub n_draws: usize,
}

/// Draw (P*, P) sample pairs for the given rows of `full`, one sample per
/// stored global draw. `full` must contain every occasion of each person
/// (training and holdout), standardized with the training parameters; the
/// history for occasion j is every row of the person with occasion < j
/// (respectively ≤ j for P).
pub fn predict_occasions(
    draws: &ChainDraws,
    full: &PanelDataset,
    rows: &[usize],
    grid: &ThetaGrid,
    seed: u64,
) -> Result<PredictiveSummary> {
    if draws.n_draws() == 0 {
        return Err(Error::data("predict_occasions: no stored draws"));
    }
    let occasions: Vec<OccasionPrediction> = rows
        .par_iter()
        .map(|&row| predict_one(draws, full, row, grid, seed))
        .collect::<Result<_>>()?;
    Ok(PredictiveSummary {
        occasions,
        n_draws: draws.n_draws(),
    })
}

/// Sample sets for a single (person, occasion), by person index and
/// 1-based occasion number.
pub fn predictive_samples(
    draws: &ChainDraws,
    full: &PanelDataset,
    person: usize,
    occasion: u32,
    grid: &ThetaGrid,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let row = full
        .rows_of_person(person)
        .find(|&r| full.occasion(r) == occasion)
        .ok_or_else(|| {
            Error::data(format!(
                "person {person} has no occasion {occasion} (out of range)"
            ))
        })?;
    let pred = predict_one(draws, full, row, grid, seed)?;
    Ok((pred.pstar, pred.post))
}

fn predict_one(
    draws: &ChainDraws,
    full: &PanelDataset,
    row: usize,
    grid: &ThetaGrid,
    seed: u64,
) -> Result<OccasionPrediction> {
    let person = full.person_of_row(row);
    let occasion = full.occasion(row);
    let history_rows: Vec<usize> = full
        .rows_of_person(person)
        .filter(|&r| full.occasion(r) < occasion)
        .collect();
    let n_draws = draws.n_draws();
    let mut pstar = Vec::with_capacity(n_draws);
    let mut post = Vec::with_capacity(n_draws);
    // Reusable buffers: xβ of history rows and of the target row, per draw.
    let mut history: Vec<(f64, u8)> = Vec::with_capacity(history_rows.len() + 1);
    for (d, global) in draws.globals.iter().enumerate() {
        let beta = global.beta();
        history.clear();
        for &r in &history_rows {
            let xb: f64 = full.x_row(r).iter().zip(beta).map(|(x, b)| x * b).sum();
            history.push((xb, full.outcome(r)));
        }
        let xb_target: f64 = full.x_row(row).iter().zip(beta).map(|(x, b)| x * b).sum();
        let mut rng_star = RngStream::new(seed, StreamKey::new(d as u64, 0, row as u64))
            .substream(STEP_PSTAR);
        let mut rng_post = RngStream::new(seed, StreamKey::new(d as u64, 0, row as u64))
            .substream(STEP_POST);
        match global {
            GlobalDraw::Gaussian { mu, tau, .. } => {
                // Pre-outcome: θ | history through j−1.
                let theta_star = if history.is_empty() {
                    crate::kernels::inv_phi(rng_star.next_unit_open())
                } else {
                    theta_conditional_posterior(grid, &history, *mu, *tau).sample(&mut rng_star)
                };
                pstar.push(phi(mu + tau * theta_star + xb_target));
                // Post-outcome: include occasion j itself.
                history.push((xb_target, full.outcome(row)));
                let theta_post =
                    theta_conditional_posterior(grid, &history, *mu, *tau).sample(&mut rng_post);
                post.push(phi(mu + tau * theta_post + xb_target));
            }
            GlobalDraw::Discrete { atoms, weights, .. } => {
                let probs_star = atom_conditional_posterior(atoms, weights, &history);
                let k_star = sample_from_probs(&probs_star, &mut rng_star);
                pstar.push(phi(atoms[k_star] + xb_target));
                history.push((xb_target, full.outcome(row)));
                let probs_post = atom_conditional_posterior(atoms, weights, &history);
                let k_post = sample_from_probs(&probs_post, &mut rng_post);
                post.push(phi(atoms[k_post] + xb_target));
            }
        }
    }
    Ok(OccasionPrediction {
        person_id: full.person_id(person).to_string(),
        person,
        row,
        occasion,
        outcome: full.outcome(row),
        external_risk_group: full.risk_group(row),
        prior_observations: history_rows.len(),
        pstar,
        post,
    })
}

fn sample_from_probs(probs: &[f64], rng: &mut RngStream) -> usize {
    let mut target = rng.next_unit_open();
    for (k, &p) in probs.iter().enumerate() {
        target -= p;
        if target <= 0.0 {
            return k;
        }
    }
    probs.len() - 1
}
