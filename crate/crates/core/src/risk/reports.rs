//! Downstream analyses over predictive sample sets: calibration tables,
//! wrong-bin matrices, credible-interval reports, and certainty-threshold
//! flagging, with plot-ready CSV exports.

use std::io::Write;

use crate::diagnostics::quantile_sorted;
use crate::error::Result;
use crate::risk::schemes::RiskGroupScheme;
use crate::risk::{OccasionPrediction, PredictiveSummary};

/// 1-based group label per occasion; None marks occasions excluded from the
/// scheme (e.g. missing external score under the PSA grouping).
#[derive(Clone, Debug)]
pub struct GroupAssignments {
    pub labels: Vec<Option<usize>>,
    pub n_groups: usize,
}

/// Assign each occasion to a group: by the recorded external score for the
/// PSA scheme, by binning the P̂* point estimate otherwise.
pub fn assign_groups(summary: &PredictiveSummary, scheme: &RiskGroupScheme) -> GroupAssignments {
    let n_groups = scheme.n_groups();
    let labels = summary
        .occasions
        .iter()
        .map(|occ| {
            if scheme.kind.assigns_by_external_score() {
                occ.external_risk_group.and_then(|g| {
                    let g = g as usize;
                    (g >= 1 && g <= n_groups).then_some(g)
                })
            } else {
                Some(scheme.bin(occ.point_estimate()))
            }
        })
        .collect();
    GroupAssignments { labels, n_groups }
}

/// One row of the calibration table.
#[derive(Clone, Debug)]
pub struct CalibrationRow {
    pub group: usize,
    pub size: usize,
    pub mean_pstar: f64,
    pub mean_post: f64,
    pub empirical_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Empty group or a degenerate (zero-width) confidence interval.
    pub flagged: bool,
}

/// Group-wise average P̂*, average P̂, empirical outcome rate, and the
/// classical normal-approximation 95% interval for the rate.
pub fn calibration_table(
    summary: &PredictiveSummary,
    assignments: &GroupAssignments,
) -> Vec<CalibrationRow> {
    let g = assignments.n_groups;
    let mut rows = Vec::with_capacity(g);
    for group in 1..=g {
        let members: Vec<&OccasionPrediction> = summary
            .occasions
            .iter()
            .zip(&assignments.labels)
            .filter(|(_, l)| **l == Some(group))
            .map(|(o, _)| o)
            .collect();
        let size = members.len();
        if size == 0 {
            rows.push(CalibrationRow {
                group,
                size,
                mean_pstar: f64::NAN,
                mean_post: f64::NAN,
                empirical_rate: f64::NAN,
                ci_low: f64::NAN,
                ci_high: f64::NAN,
                flagged: true,
            });
            continue;
        }
        let nf = size as f64;
        let mean_pstar = members.iter().map(|o| o.point_estimate()).sum::<f64>() / nf;
        let mean_post = members.iter().map(|o| o.post_mean()).sum::<f64>() / nf;
        let rate = members.iter().map(|o| o.outcome as f64).sum::<f64>() / nf;
        let half = 1.959964 * (rate * (1.0 - rate) / nf).sqrt();
        rows.push(CalibrationRow {
            group,
            size,
            mean_pstar,
            mean_post,
            empirical_rate: rate,
            ci_low: rate - half,
            ci_high: rate + half,
            flagged: half == 0.0,
        });
    }
    rows
}

/// Posterior wrong-bin probabilities.
#[derive(Clone, Debug)]
pub struct WrongBinMatrix {
    /// probs[k−1][k'−1] = average over occasions assigned to k of
    /// P[Pᵢⱼ ∈ bin k']; rows of empty groups are NaN.
    pub probs: Vec<Vec<f64>>,
    pub group_sizes: Vec<usize>,
    /// Occasion-weighted probability that Pᵢⱼ lies in the assigned bin.
    pub diagonal_mass: f64,
}

pub fn wrong_bin_matrix(
    summary: &PredictiveSummary,
    scheme: &RiskGroupScheme,
    assignments: &GroupAssignments,
) -> WrongBinMatrix {
    let g = assignments.n_groups;
    let mut acc = vec![vec![0.0f64; g]; g];
    let mut sizes = vec![0usize; g];
    let mut diag_sum = 0.0;
    let mut diag_count = 0usize;
    for (occ, label) in summary.occasions.iter().zip(&assignments.labels) {
        let Some(k) = *label else { continue };
        sizes[k - 1] += 1;
        let mut frac = vec![0.0f64; g];
        for &p in &occ.post {
            frac[scheme.bin(p) - 1] += 1.0;
        }
        let total = occ.post.len() as f64;
        for (a, f) in acc[k - 1].iter_mut().zip(&frac) {
            *a += f / total;
        }
        diag_sum += frac[k - 1] / total;
        diag_count += 1;
    }
    let probs = acc
        .into_iter()
        .zip(&sizes)
        .map(|(row, &s)| {
            if s == 0 {
                vec![f64::NAN; g]
            } else {
                row.into_iter().map(|v| v / s as f64).collect()
            }
        })
        .collect();
    WrongBinMatrix {
        probs,
        group_sizes: sizes,
        diagonal_mass: if diag_count == 0 { f64::NAN } else { diag_sum / diag_count as f64 },
    }
}

/// One exported credible interval, in the paper's sorted display order.
#[derive(Clone, Debug)]
pub struct SortedInterval {
    pub position: usize,
    pub person_id: String,
    pub occasion: u32,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
    pub outcome: u8,
    /// Interval does not cross the display threshold.
    pub flagged: bool,
}

/// Average interval length cross-tabulated by external risk group and
/// prior-observation count.
#[derive(Clone, Debug)]
pub struct IntervalLengthCell {
    pub external_group: Option<u8>,
    pub prior_observations: usize,
    pub mean_length: f64,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct IntervalReport {
    pub alpha: f64,
    pub threshold: f64,
    pub cells: Vec<IntervalLengthCell>,
    pub sorted_intervals: Vec<SortedInterval>,
    /// Fraction of intervals that do not cross the threshold.
    pub flagged_fraction: f64,
}

/// Interval-length table plus the sorted-interval export. Intervals whose
/// posterior median falls in the bottom half of all medians are sorted by
/// their upper end; the rest by their lower end, matching the display rule
/// of the interval figure. The flag marks intervals that do not cross the
/// threshold.
pub fn interval_report(summary: &PredictiveSummary, alpha: f64, threshold: f64) -> IntervalReport {
    struct Item {
        idx: usize,
        lower: f64,
        median: f64,
        upper: f64,
    }
    let items: Vec<Item> = summary
        .occasions
        .iter()
        .enumerate()
        .map(|(idx, occ)| {
            let (lower, upper) = occ.post_interval(alpha);
            Item { idx, lower, median: occ.post_median(), upper }
        })
        .collect();

    // Cross-tab of mean interval length.
    use std::collections::BTreeMap;
    let mut table: BTreeMap<(Option<u8>, usize), (f64, usize)> = BTreeMap::new();
    for item in &items {
        let occ = &summary.occasions[item.idx];
        let cell = table
            .entry((occ.external_risk_group, occ.prior_observations))
            .or_insert((0.0, 0));
        cell.0 += item.upper - item.lower;
        cell.1 += 1;
    }
    let cells = table
        .into_iter()
        .map(|((external_group, prior_observations), (total, count))| IntervalLengthCell {
            external_group,
            prior_observations,
            mean_length: total / count as f64,
            count,
        })
        .collect();

    // Median-split display order.
    let mut medians: Vec<f64> = items.iter().map(|i| i.median).collect();
    medians.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let split = if medians.is_empty() { 0.0 } else { quantile_sorted(&medians, 0.5) };
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        let (ia, ib) = (&items[a], &items[b]);
        let low_a = ia.median <= split;
        let low_b = ib.median <= split;
        match (low_a, low_b) {
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            (true, true) => ia.upper.partial_cmp(&ib.upper).unwrap(),
            (false, false) => ia.lower.partial_cmp(&ib.lower).unwrap(),
        }
    });
    let mut flagged_count = 0usize;
    let sorted_intervals: Vec<SortedInterval> = order
        .iter()
        .enumerate()
        .map(|(position, &i)| {
            let item = &items[i];
            let occ = &summary.occasions[item.idx];
            let flagged = item.lower > threshold || item.upper < threshold;
            flagged_count += usize::from(flagged);
            SortedInterval {
                position,
                person_id: occ.person_id.clone(),
                occasion: occ.occasion,
                lower: item.lower,
                median: item.median,
                upper: item.upper,
                outcome: occ.outcome,
                flagged,
            }
        })
        .collect();
    let flagged_fraction = if sorted_intervals.is_empty() {
        0.0
    } else {
        flagged_count as f64 / sorted_intervals.len() as f64
    };
    IntervalReport {
        alpha,
        threshold,
        cells,
        sorted_intervals,
        flagged_fraction,
    }
}

/// Histogram densities of the posterior P samples (pooled over a group's
/// occasions) and of the P̂* point estimates, per group — the plot-ready
/// form of the group-wise density figure.
#[derive(Clone, Debug)]
pub struct GroupDensityRow {
    pub group: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    /// Pooled posterior density of Pᵢⱼ over the group's occasions.
    pub post_density: f64,
    /// Density of the P̂*ᵢⱼ point estimates in the group.
    pub pstar_density: f64,
}

pub fn group_density_table(
    summary: &PredictiveSummary,
    assignments: &GroupAssignments,
    bins: usize,
) -> Vec<GroupDensityRow> {
    assert!(bins > 0);
    let width = 1.0 / bins as f64;
    let mut rows = Vec::with_capacity(assignments.n_groups * bins);
    for group in 1..=assignments.n_groups {
        let members: Vec<&OccasionPrediction> = summary
            .occasions
            .iter()
            .zip(&assignments.labels)
            .filter(|(_, l)| **l == Some(group))
            .map(|(o, _)| o)
            .collect();
        let mut post_counts = vec![0.0f64; bins];
        let mut pstar_counts = vec![0.0f64; bins];
        let mut n_post = 0.0f64;
        for occ in &members {
            for &p in &occ.post {
                post_counts[((p / width) as usize).min(bins - 1)] += 1.0;
                n_post += 1.0;
            }
            pstar_counts[((occ.point_estimate() / width) as usize).min(bins - 1)] += 1.0;
        }
        let n_pstar = members.len() as f64;
        for b in 0..bins {
            rows.push(GroupDensityRow {
                group,
                bin_lo: b as f64 * width,
                bin_hi: (b + 1) as f64 * width,
                post_density: if n_post > 0.0 { post_counts[b] / (n_post * width) } else { f64::NAN },
                pstar_density: if n_pstar > 0.0 {
                    pstar_counts[b] / (n_pstar * width)
                } else {
                    f64::NAN
                },
            });
        }
    }
    rows
}

/// Flag occasions whose predictive certainty P[P* > c] meets the bar h.
pub fn flag_by_certainty(summary: &PredictiveSummary, c: f64, h: f64) -> (Vec<bool>, f64) {
    let flags: Vec<bool> = summary
        .occasions
        .iter()
        .map(|occ| {
            let exceed = occ.pstar.iter().filter(|&&p| p > c).count() as f64;
            exceed / occ.pstar.len() as f64 >= h
        })
        .collect();
    let proportion = if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    };
    (flags, proportion)
}

/// Proportion flagged over a (cutoff, certainty) grid.
pub fn flag_proportion_grid(
    summary: &PredictiveSummary,
    cutoffs: &[f64],
    certainties: &[f64],
) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(cutoffs.len() * certainties.len());
    for &h in certainties {
        for &c in cutoffs {
            let (_, proportion) = flag_by_certainty(summary, c, h);
            out.push((c, h, proportion));
        }
    }
    out
}

// CSV exports. Headers are part of the documented interface.

pub fn write_calibration_csv(rows: &[CalibrationRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "group,size,mean_pstar,mean_post,empirical_rate,ci_low,ci_high,flagged")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.group, r.size, r.mean_pstar, r.mean_post, r.empirical_rate, r.ci_low, r.ci_high,
            r.flagged
        )?;
    }
    Ok(())
}

pub fn write_wrong_bin_csv(matrix: &WrongBinMatrix, mut w: impl Write) -> Result<()> {
    let g = matrix.probs.len();
    let mut header = String::from("assigned_group,size");
    for k in 1..=g {
        header.push_str(&format!(",p_bin_{k}"));
    }
    writeln!(w, "{header}")?;
    for (k, row) in matrix.probs.iter().enumerate() {
        let mut line = format!("{},{}", k + 1, matrix.group_sizes[k]);
        for v in row {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn write_interval_cells_csv(report: &IntervalReport, mut w: impl Write) -> Result<()> {
    writeln!(w, "external_group,prior_observations,mean_interval_length,count")?;
    for cell in &report.cells {
        writeln!(
            w,
            "{},{},{},{}",
            cell.external_group.map_or(String::new(), |g| g.to_string()),
            cell.prior_observations,
            cell.mean_length,
            cell.count
        )?;
    }
    Ok(())
}

pub fn write_sorted_intervals_csv(report: &IntervalReport, mut w: impl Write) -> Result<()> {
    writeln!(w, "position,person_id,occasion,lower,median,upper,outcome,flagged")?;
    for s in &report.sorted_intervals {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.position, s.person_id, s.occasion, s.lower, s.median, s.upper, s.outcome, s.flagged
        )?;
    }
    Ok(())
}

pub fn write_group_density_csv(rows: &[GroupDensityRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "group,bin_lo,bin_hi,post_density,pstar_density")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.group, r.bin_lo, r.bin_hi, r.post_density, r.pstar_density
        )?;
    }
    Ok(())
}

pub fn write_flag_grid_csv(grid: &[(f64, f64, f64)], mut w: impl Write) -> Result<()> {
    writeln!(w, "cutoff,certainty,proportion_flagged")?;
    for (c, h, p) in grid {
        writeln!(w, "{c},{h},{p}")?;
    }
    Ok(())
}

pub fn write_predictions_csv(summary: &PredictiveSummary, alpha: f64, mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "person_id,occasion,prior_observations,outcome,external_group,pstar_hat,post_mean,post_median,post_lower,post_upper"
    )?;
    for occ in &summary.occasions {
        let (lo, hi) = occ.post_interval(alpha);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            occ.person_id,
            occ.occasion,
            occ.prior_observations,
            occ.outcome,
            occ.external_risk_group.map_or(String::new(), |g| g.to_string()),
            occ.point_estimate(),
            occ.post_mean(),
            occ.post_median(),
            lo,
            hi
        )?;
    }
    Ok(())
}
