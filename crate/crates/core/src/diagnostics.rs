//! Convergence summaries: split-R̂, effective sample size, and Table-style
//! posterior summaries (mean, central 95% interval) per global parameter.

use serde::Serialize;

use crate::gibbs::ChainDraws;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Quantile by linear interpolation of order statistics on a sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&sorted, p)
}

/// Split each chain in half and compute the potential scale reduction
/// factor over the split halves (the Stan convention; an odd middle draw is
/// dropped).
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut split: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        if half == 0 {
            return f64::NAN;
        }
        split.push(&c[..half]);
        split.push(&c[c.len() - half..]);
    }
    let n = split.iter().map(|c| c.len()).min().unwrap() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = split.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = split.iter().map(|c| sample_variance(c)).collect();
    let w = mean(&vars);
    let b = n * sample_variance(&means);
    if w <= 0.0 {
        // Constant chains: identical halves give Rhat 1 by convention.
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    ((b / w + n - 1.0) / n).sqrt()
}

/// Effective sample size by Geyer's initial positive sequence on the
/// chain-averaged autocorrelations.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return f64::NAN;
    }
    let m = chains.len();
    let total = (m * n) as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let chain_vars: Vec<f64> = chains.iter().map(|c| sample_variance(&c[..n])).collect();
    let w = mean(&chain_vars);
    let var_plus = w * (n as f64 - 1.0) / n as f64
        + if m > 1 { sample_variance(&chain_means) } else { 0.0 };
    if var_plus <= 0.0 {
        return f64::NAN;
    }
    // Averaged autocovariance at each lag.
    let max_lag = n - 1;
    let mut rho_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 1usize;
    while lag + 1 <= max_lag {
        let rho_a = 1.0 - (w - avg_autocov(chains, &chain_means, n, lag)) / var_plus;
        let rho_b = 1.0 - (w - avg_autocov(chains, &chain_means, n, lag + 1)) / var_plus;
        let mut pair = rho_a + rho_b;
        if pair < 0.0 {
            break;
        }
        // Initial monotone sequence: enforce non-increasing pair sums.
        pair = pair.min(prev_pair);
        prev_pair = pair;
        rho_sum += pair;
        lag += 2;
    }
    total / (1.0 + 2.0 * rho_sum).max(1.0 / total)
}

fn avg_autocov(chains: &[Vec<f64>], chain_means: &[f64], n: usize, lag: usize) -> f64 {
    let mut acc = 0.0;
    for (c, &cm) in chains.iter().zip(chain_means) {
        let mut s = 0.0;
        for t in 0..(n - lag) {
            s += (c[t] - cm) * (c[t + lag] - cm);
        }
        acc += s / n as f64;
    }
    acc / chains.len() as f64
}

/// One row of the convergence/summary report.
#[derive(Clone, Debug, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess: f64,
}

/// Posterior mean, central 95% interval, split-R̂ and ESS for every global
/// parameter series in the draws.
pub fn summarize(draws: &ChainDraws) -> Vec<ParamSummary> {
    draws
        .parameter_series()
        .into_iter()
        .map(|(name, series)| {
            let by_chain = draws.series_by_chain(&series);
            let mut sorted = series.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ParamSummary {
                name,
                mean: mean(&series),
                q025: quantile_sorted(&sorted, 0.025),
                q975: quantile_sorted(&sorted, 0.975),
                rhat: split_rhat(&by_chain),
                ess: effective_sample_size(&by_chain),
            }
        })
        .collect()
}

/// Standard error of a chain mean accounting for autocorrelation.
pub fn mc_standard_error(chains: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let ess = effective_sample_size(chains);
    (sample_variance(&all) / ess).sqrt()
}
