//! Simulation studies of credible-interval width: interval length as a
//! function of the number of observations per person across τ values, and
//! the signal/noise scenario grid. Globals are held fixed and the
//! one-dimensional random-effect posterior is computed by quadrature, so
//! the only Monte Carlo variation is in the simulated outcomes.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{inv_phi, log_phi, phi, sample_bernoulli, sample_std_normal};
use crate::risk::{GridPosterior, ThetaGrid};
use crate::rng::{RngStream, StreamKey};

/// Settings for the interval-length-versus-n study. The individual's true
/// probability is p0 with covariates fully explaining it (zero random
/// effect), τ and the covariate effect are held fixed, and the unknown is
/// the scaled random effect with its N(0,1) prior.
#[derive(Clone, Debug)]
pub struct SimulationScenario {
    pub p0: f64,
    pub taus: Vec<f64>,
    pub replicates: usize,
    pub eval_points: Vec<usize>,
    pub alpha: f64,
    pub seed: u64,
}

impl SimulationScenario {
    pub fn new(seed: u64) -> Self {
        SimulationScenario {
            p0: 0.2,
            taus: vec![0.1, 0.2, 0.3, 0.45, 0.6],
            replicates: 1000,
            eval_points: vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000],
            alpha: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::config("simulation: p0 must lie in (0,1)"));
        }
        if self.replicates == 0 || self.taus.is_empty() || self.eval_points.is_empty() {
            return Err(Error::config("simulation: empty replicate/tau/n settings"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("simulation: alpha must lie in (0,1)"));
        }
        Ok(())
    }
}

/// Mean interval length at one (τ, n) cell, with its Monte Carlo standard
/// error over replicates.
#[derive(Clone, Debug)]
pub struct IntervalCurvePoint {
    pub tau: f64,
    pub n: usize,
    pub mean_length: f64,
    pub se: f64,
    pub replicates: usize,
}

/// Interval length of P = Φ(a + τθ) under the exact grid posterior of θ
/// given k successes in n trials.
fn interval_length_exact(
    grid: &ThetaGrid,
    log_prior: &[f64],
    log_pos: &[f64],
    log_neg: &[f64],
    a: f64,
    tau: f64,
    n: usize,
    k: usize,
    alpha: f64,
) -> f64 {
    let logd: Vec<f64> = (0..grid.len())
        .map(|g| log_prior[g] + k as f64 * log_pos[g] + (n - k) as f64 * log_neg[g])
        .collect();
    let post = GridPosterior::from_log_density(grid, logd);
    let lo = post.quantile(alpha / 2.0);
    let hi = post.quantile(1.0 - alpha / 2.0);
    (phi(a + tau * hi) - phi(a + tau * lo)).abs()
}

/// Average 95% interval length by (τ, n): for each replicate a Bernoulli(p0)
/// sequence is simulated and the posterior of P given the first n outcomes
/// is computed by quadrature; lengths are averaged over replicates.
pub fn interval_length_curve(
    scenario: &SimulationScenario,
    grid: &ThetaGrid,
) -> Result<Vec<IntervalCurvePoint>> {
    scenario.validate()?;
    let a = inv_phi(scenario.p0);
    let n_max = *scenario.eval_points.iter().max().unwrap();
    let mut eval_sorted = scenario.eval_points.clone();
    eval_sorted.sort_unstable();
    eval_sorted.dedup();

    let per_tau: Vec<Vec<IntervalCurvePoint>> = scenario
        .taus
        .par_iter()
        .enumerate()
        .map(|(tau_idx, &tau)| {
            let log_prior: Vec<f64> = grid.points().iter().map(|&t| -0.5 * t * t).collect();
            let log_pos: Vec<f64> = grid.points().iter().map(|&t| log_phi(a + tau * t)).collect();
            let log_neg: Vec<f64> = grid.points().iter().map(|&t| log_phi(-a - tau * t)).collect();
            // Replicates only enter through the success count, so lengths
            // are cached by (n, k).
            let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
            let mut sums = vec![0.0f64; eval_sorted.len()];
            let mut sums2 = vec![0.0f64; eval_sorted.len()];
            for rep in 0..scenario.replicates {
                let mut rng = RngStream::new(
                    scenario.seed,
                    StreamKey::new(1, tau_idx as u64, rep as u64),
                );
                let mut successes = 0usize;
                let mut next_eval = 0usize;
                for t in 1..=n_max {
                    successes += sample_bernoulli(scenario.p0, &mut rng) as usize;
                    if next_eval < eval_sorted.len() && eval_sorted[next_eval] == t {
                        let len = *cache.entry((t, successes)).or_insert_with(|| {
                            interval_length_exact(
                                grid, &log_prior, &log_pos, &log_neg, a, tau, t, successes,
                                scenario.alpha,
                            )
                        });
                        sums[next_eval] += len;
                        sums2[next_eval] += len * len;
                        next_eval += 1;
                    }
                }
            }
            let r = scenario.replicates as f64;
            eval_sorted
                .iter()
                .enumerate()
                .map(|(e, &n)| {
                    let mean = sums[e] / r;
                    let var = (sums2[e] / r - mean * mean).max(0.0);
                    IntervalCurvePoint {
                        tau,
                        n,
                        mean_length: mean,
                        se: (var / r).sqrt(),
                        replicates: scenario.replicates,
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_tau.into_iter().flatten().collect())
}

/// Signal strength of the covariate strata.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalLevel {
    /// Φ(Xβ) strata at 0.05, 0.15, 0.25.
    Low,
    /// Φ(Xβ) strata at 0.01, 0.25, 0.50.
    High,
}

impl SignalLevel {
    pub fn strata(self) -> [f64; 3] {
        match self {
            SignalLevel::Low => [0.05, 0.15, 0.25],
            SignalLevel::High => [0.01, 0.25, 0.50],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SignalLevel::Low => "low",
            SignalLevel::High => "high",
        }
    }
}

/// One individual's posterior interval in the scenario grid.
#[derive(Clone, Debug)]
pub struct SignalNoiseInterval {
    pub stratum: usize,
    pub stratum_p: f64,
    pub individual: usize,
    pub outcome: u8,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

#[derive(Clone, Debug)]
pub struct SignalNoiseReport {
    pub signal: SignalLevel,
    pub tau: f64,
    pub intervals: Vec<SignalNoiseInterval>,
    /// For each stratum pair (a, b): fraction of cross pairs whose
    /// intervals overlap.
    pub overlap_fractions: Vec<(usize, usize, f64)>,
}

/// One observation per individual across the three covariate strata, with
/// exact posterior intervals for P; reports the per-pair overlap fractions
/// that show whether strata are statistically separable.
pub fn signal_noise_intervals(
    signal: SignalLevel,
    tau: f64,
    cohort_size: usize,
    alpha: f64,
    seed: u64,
    grid: &ThetaGrid,
) -> Result<SignalNoiseReport> {
    if cohort_size == 0 {
        return Err(Error::config("signal/noise: cohort size must be positive"));
    }
    let strata = signal.strata();
    let mut intervals = Vec::with_capacity(3 * cohort_size);
    for (s, &p_s) in strata.iter().enumerate() {
        let a_s = inv_phi(p_s);
        for individual in 0..cohort_size {
            let mut rng = RngStream::new(
                seed,
                StreamKey::new(2, s as u64, individual as u64),
            );
            let theta_true = sample_std_normal(&mut rng);
            let y = sample_bernoulli(phi(a_s + tau * theta_true), &mut rng);
            // Posterior of θ given this one outcome; xβ enters as history.
            let post = crate::risk::theta_conditional_posterior(grid, &[(a_s, y)], 0.0, tau);
            let lo_t = post.quantile(alpha / 2.0);
            let hi_t = post.quantile(1.0 - alpha / 2.0);
            let med_t = post.quantile(0.5);
            intervals.push(SignalNoiseInterval {
                stratum: s + 1,
                stratum_p: p_s,
                individual,
                outcome: y,
                lower: phi(a_s + tau * lo_t),
                median: phi(a_s + tau * med_t),
                upper: phi(a_s + tau * hi_t),
            });
        }
    }
    let mut overlap_fractions = Vec::new();
    for s1 in 1..=3usize {
        for s2 in (s1 + 1)..=3usize {
            let group1: Vec<&SignalNoiseInterval> =
                intervals.iter().filter(|i| i.stratum == s1).collect();
            let group2: Vec<&SignalNoiseInterval> =
                intervals.iter().filter(|i| i.stratum == s2).collect();
            let mut overlapping = 0usize;
            for i1 in &group1 {
                for i2 in &group2 {
                    if i1.lower <= i2.upper && i2.lower <= i1.upper {
                        overlapping += 1;
                    }
                }
            }
            overlap_fractions.push((
                s1,
                s2,
                overlapping as f64 / (group1.len() * group2.len()) as f64,
            ));
        }
    }
    Ok(SignalNoiseReport {
        signal,
        tau,
        intervals,
        overlap_fractions,
    })
}

pub fn write_interval_curve_csv(points: &[IntervalCurvePoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "tau,n,mean_interval_length,mc_se,replicates")?;
    for p in points {
        writeln!(w, "{},{},{},{},{}", p.tau, p.n, p.mean_length, p.se, p.replicates)?;
    }
    Ok(())
}

pub fn write_signal_noise_csv(report: &SignalNoiseReport, mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "signal,tau,stratum,stratum_p,individual,outcome,lower,median,upper"
    )?;
    for i in &report.intervals {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            report.signal.label(),
            report.tau,
            i.stratum,
            i.stratum_p,
            i.individual,
            i.outcome,
            i.lower,
            i.median,
            i.upper
        )?;
    }
    Ok(())
}

pub fn write_overlap_csv(report: &SignalNoiseReport, mut w: impl Write) -> Result<()> {
    writeln!(w, "signal,tau,stratum_a,stratum_b,fraction_overlapping")?;
    for (a, b, f) in &report.overlap_fractions {
        writeln!(w, "{},{},{a},{b},{f}", report.signal.label(), report.tau)?;
    }
    Ok(())
}
