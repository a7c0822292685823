//! Risk-group threshold schemes over probability point estimates: PSA
//! midpoints, PSA-sized equal counts, exact 1-D k-means clusters, and
//! custom thresholds, plus the binning rule itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a scheme's thresholds were derived, and how occasions are assigned
/// to groups under it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Thresholds at midpoints between the empirical rates of the external
    /// instrument's groups; occasions are assigned by the recorded score.
    PsaMidpoint,
    /// Equal-count bins sized like the external groups; assigned by point
    /// estimate.
    PsaSized,
    /// Exact 1-D k-means clusters; assigned by point estimate.
    Clustered,
    Custom,
}

impl SchemeKind {
    /// PSA groups are taken from the data column rather than by binning.
    pub fn assigns_by_external_score(self) -> bool {
        matches!(self, SchemeKind::PsaMidpoint)
    }

    pub fn label(self) -> &'static str {
        match self {
            SchemeKind::PsaMidpoint => "psa_midpoint",
            SchemeKind::PsaSized => "psa_sized",
            SchemeKind::Clustered => "clustered",
            SchemeKind::Custom => "custom",
        }
    }
}

/// Ordered thresholds c₁ < … < c_{G−1} on the probability scale defining G
/// right-open bins [c_{k−1}, c_k), with c₀ = 0 and the top bin closed at 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiskGroupScheme {
    pub kind: SchemeKind,
    pub thresholds: Vec<f64>,
}

impl RiskGroupScheme {
    pub fn new(kind: SchemeKind, thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::config("risk scheme: need at least one threshold"));
        }
        for pair in thresholds.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::config(format!(
                    "risk scheme: thresholds must be strictly increasing, got {pair:?}"
                )));
            }
        }
        if thresholds[0] <= 0.0 || *thresholds.last().unwrap() >= 1.0 {
            return Err(Error::config(
                "risk scheme: thresholds must lie strictly inside (0, 1)",
            ));
        }
        Ok(RiskGroupScheme { kind, thresholds })
    }

    pub fn custom(thresholds: Vec<f64>) -> Result<Self> {
        RiskGroupScheme::new(SchemeKind::Custom, thresholds)
    }

    pub fn n_groups(&self) -> usize {
        self.thresholds.len() + 1
    }

    /// 1-based group label of a point estimate: the k with
    /// c_{k−1} ≤ estimate < c_k; estimates at a threshold go to the upper
    /// bin, and 1.0 lands in the top bin.
    pub fn bin(&self, estimate: f64) -> usize {
        debug_assert!((0.0..=1.0).contains(&estimate));
        self.thresholds.partition_point(|&c| c <= estimate) + 1
    }
}

/// Midpoints between the empirical outcome rates of the external groups.
/// Requires every group 1..=G to be present with monotone rates; inverted
/// or tied rates make the midpoints non-increasing, which is an error
/// instructing manual thresholds.
pub fn thresholds_psa_midpoint(groups: &[u8], outcomes: &[u8]) -> Result<RiskGroupScheme> {
    if groups.len() != outcomes.len() || groups.is_empty() {
        return Err(Error::data("psa midpoint: empty or mismatched inputs"));
    }
    let g_max = *groups.iter().max().unwrap() as usize;
    if g_max < 2 {
        return Err(Error::data("psa midpoint: need at least two groups"));
    }
    let mut counts = vec![0usize; g_max];
    let mut successes = vec![0usize; g_max];
    for (&g, &y) in groups.iter().zip(outcomes) {
        if g == 0 {
            return Err(Error::data("psa midpoint: group labels are 1-based"));
        }
        counts[g as usize - 1] += 1;
        successes[g as usize - 1] += y as usize;
    }
    let mut rates = Vec::with_capacity(g_max);
    for (g, (&c, &s)) in counts.iter().zip(&successes).enumerate() {
        if c == 0 {
            return Err(Error::data(format!("psa midpoint: group {} is empty", g + 1)));
        }
        rates.push(s as f64 / c as f64);
    }
    for pair in rates.windows(2) {
        if pair[1] < pair[0] {
            return Err(Error::data(format!(
                "psa midpoint: empirical rates invert between adjacent groups ({:.4} then {:.4}); \
                 supply manual thresholds instead",
                pair[0], pair[1]
            )));
        }
    }
    let thresholds: Vec<f64> = rates.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    RiskGroupScheme::new(SchemeKind::PsaMidpoint, thresholds).map_err(|_| {
        Error::data(
            "psa midpoint: tied adjacent rates give non-increasing thresholds; \
             supply manual thresholds instead"
                .to_string(),
        )
    })
}

/// Thresholds that reproduce the reference group sizes over the given
/// point estimates: boundaries at the cumulative sizes of the sorted
/// values, placed midway between the adjacent order statistics. Ties are
/// broken by pushing the boundary after the last tied value.
pub fn thresholds_equal_count(values: &[f64], reference_sizes: &[usize]) -> Result<RiskGroupScheme> {
    let n = values.len();
    if reference_sizes.iter().sum::<usize>() != n {
        return Err(Error::data(format!(
            "equal count: reference sizes sum to {} but there are {n} values",
            reference_sizes.iter().sum::<usize>()
        )));
    }
    if reference_sizes.len() < 2 {
        return Err(Error::data("equal count: need at least two groups"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.first() == sorted.last() {
        return Err(Error::data("equal count: all point estimates are equal"));
    }
    let mut thresholds = Vec::with_capacity(reference_sizes.len() - 1);
    let mut boundary = 0usize;
    for &size in &reference_sizes[..reference_sizes.len() - 1] {
        boundary += size;
        let mut b = boundary;
        // Boundary lands inside a tie run: move past the last tied value.
        while b < n && sorted[b] == sorted[b - 1] {
            b += 1;
        }
        if b >= n {
            return Err(Error::data(
                "equal count: tie run reaches the top of the distribution",
            ));
        }
        thresholds.push(0.5 * (sorted[b - 1] + sorted[b]));
    }
    RiskGroupScheme::new(SchemeKind::PsaSized, thresholds)
}

/// Result of exact 1-D k-means on sorted values.
#[derive(Clone, Debug)]
pub struct Kmeans1d {
    /// Start index of each cluster in the sorted order.
    pub starts: Vec<usize>,
    pub centers: Vec<f64>,
    /// Globally minimal within-cluster sum of squares.
    pub wcss: f64,
    pub sorted: Vec<f64>,
}

/// Exact 1-D k-means by dynamic programming over the sorted values
/// (contiguity of optimal clusters makes the O(K·n²) scan exact, unlike
/// Lloyd iterations).
pub fn kmeans_1d(values: &[f64], k: usize) -> Result<Kmeans1d> {
    let n = values.len();
    if k == 0 || n == 0 {
        return Err(Error::data("kmeans: empty input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let distinct = {
        let mut d = 1;
        for pair in sorted.windows(2) {
            if pair[0] != pair[1] {
                d += 1;
            }
        }
        d
    };
    if distinct < k {
        return Err(Error::data(format!(
            "kmeans: only {distinct} distinct values for {k} clusters"
        )));
    }
    // Prefix sums for O(1) segment cost.
    let mut ps = vec![0.0; n + 1];
    let mut ps2 = vec![0.0; n + 1];
    for (i, &v) in sorted.iter().enumerate() {
        ps[i + 1] = ps[i] + v;
        ps2[i + 1] = ps2[i] + v * v;
    }
    let cost = |lo: usize, hi: usize| -> f64 {
        // Segment [lo, hi): sum of squared deviations from the mean.
        let len = (hi - lo) as f64;
        let s = ps[hi] - ps[lo];
        let s2 = ps2[hi] - ps2[lo];
        (s2 - s * s / len).max(0.0)
    };
    // dp[c][j]: cost of clustering the first j values into c+1 clusters.
    let mut dp = vec![vec![f64::INFINITY; n + 1]; k];
    let mut arg = vec![vec![0usize; n + 1]; k];
    for j in 1..=n {
        dp[0][j] = cost(0, j);
    }
    for c in 1..k {
        for j in (c + 1)..=n {
            for split in c..j {
                let v = dp[c - 1][split] + cost(split, j);
                if v < dp[c][j] {
                    dp[c][j] = v;
                    arg[c][j] = split;
                }
            }
        }
    }
    // Reconstruct cluster boundaries.
    let mut starts = vec![0usize; k];
    let mut j = n;
    for c in (1..k).rev() {
        let split = arg[c][j];
        starts[c] = split;
        j = split;
    }
    let mut centers = Vec::with_capacity(k);
    for c in 0..k {
        let lo = starts[c];
        let hi = if c + 1 < k { starts[c + 1] } else { n };
        centers.push((ps[hi] - ps[lo]) / (hi - lo) as f64);
    }
    Ok(Kmeans1d {
        starts,
        centers,
        wcss: dp[k - 1][n],
        sorted,
    })
}

/// Thresholds at the midpoints between adjacent k-means cluster boundaries.
pub fn thresholds_kmeans_1d(values: &[f64], k: usize) -> Result<RiskGroupScheme> {
    let fit = kmeans_1d(values, k)?;
    let mut thresholds = Vec::with_capacity(k - 1);
    for c in 1..k {
        let last_below = fit.sorted[fit.starts[c] - 1];
        let first_above = fit.sorted[fit.starts[c]];
        thresholds.push(0.5 * (last_below + first_above));
    }
    RiskGroupScheme::new(SchemeKind::Clustered, thresholds)
}
