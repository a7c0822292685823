//! Command implementations: fit, predict, analyze, simulate, diagnose.
//! Every artifact is written atomically (temp file + rename) together with
//! metadata sufficient to reproduce it; no command mutates its inputs.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use panelprobit::binmix::{fit_binomial_mixture, read_counts_csv, BetaHyper, BinMixOptions};
use panelprobit::data::{ingest_csv, PanelDataset};
use panelprobit::diagnostics::{summarize, ParamSummary};
use panelprobit::error::{Error, Result};
use panelprobit::gibbs::discrete::{run_chain_discrete_with_progress, DiscreteConfig};
use panelprobit::gibbs::gaussian::{run_chain_with_progress, GaussianHyperParams};
use panelprobit::gibbs::ChainDraws;
use panelprobit::risk::reports::{
    assign_groups, calibration_table, flag_proportion_grid, group_density_table, interval_report,
    wrong_bin_matrix, write_calibration_csv, write_flag_grid_csv, write_group_density_csv,
    write_interval_cells_csv, write_predictions_csv, write_sorted_intervals_csv,
    write_wrong_bin_csv,
};
use panelprobit::risk::schemes::{
    thresholds_equal_count, thresholds_kmeans_1d, thresholds_psa_midpoint, RiskGroupScheme,
};
use panelprobit::risk::{predict_occasions, PredictiveSummary, ThetaGrid};
use panelprobit::sim::{
    interval_length_curve, signal_noise_intervals, write_interval_curve_csv, write_overlap_csv,
    write_signal_noise_csv, SignalLevel, SimulationScenario,
};

use crate::config::{ModelKind, RunConfig};

pub const CHAIN_CSV: &str = "chain.csv";
pub const CHAIN_META: &str = "chain_meta.json";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const OCCUPANCY_CSV: &str = "occupancy.csv";
pub const RUN_META: &str = "run_meta.json";
pub const PREDICTIONS_CSV: &str = "predictions.csv";

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: &'a str,
    model: &'a str,
}

/// Write bytes atomically: temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|f| f.to_string_lossy()).unwrap_or_default()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_run_meta(config: &RunConfig, command: &str) -> Result<()> {
    let meta = RunMeta {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed(),
        config_hash: &config.config_hash,
        model: config.model.kind.label(),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Sampler(format!("metadata serialization: {e}")))?;
    atomic_write(&config.output_dir.join(RUN_META), json.as_bytes())
}

/// Panel data prepared for fitting and prediction: the training subset and
/// the full panel standardized with the training parameters.
pub struct PreparedData {
    pub train: PanelDataset,
    pub full: PanelDataset,
    pub holdout_rows: Vec<usize>,
}

pub fn prepare_panel(config: &RunConfig) -> Result<PreparedData> {
    let schema = config
        .data
        .schema
        .as_ref()
        .ok_or_else(|| Error::config("data.schema is required"))?;
    let (raw, report) = ingest_csv(&config.data.path, schema)?;
    for w in &report.warnings {
        eprintln!("ingest: {w}");
    }
    eprintln!(
        "ingest: {} rows parsed, {} dropped, {} persons, {} observations",
        report.rows_parsed,
        report.rows_dropped,
        raw.n_persons(),
        raw.n_obs()
    );
    let hist = raw.release_count_histogram();
    let shown: Vec<String> = hist
        .iter()
        .take(6)
        .map(|(k, c)| format!("{k}x{c}"))
        .collect();
    eprintln!("panel sizes (appearances x persons): {}", shown.join(" "));
    let (train_raw, holdout_raw) = match config.data.cutoff_date {
        Some(cutoff) => raw.split_train_holdout(cutoff)?,
        None => (raw.clone(), raw.filter_rows(|_| false)),
    };
    let (train, params, warnings) = train_raw.standardize(None, true)?;
    for w in &warnings {
        eprintln!("standardize: {w}");
    }
    let (full, _, _) = raw.standardize(Some(&params), true)?;
    let holdout_rows: Vec<usize> = match config.data.cutoff_date {
        Some(cutoff) => (0..full.n_obs()).filter(|&r| full.date(r) > cutoff).collect(),
        None => Vec::new(),
    };
    eprintln!(
        "split: {} training rows, {} holdout rows",
        train.n_obs(),
        holdout_rows.len()
    );
    let _ = holdout_raw;
    Ok(PreparedData { train, full, holdout_rows })
}

fn print_summaries(summaries: &[ParamSummary]) {
    println!(
        "{:<24} {:>10} {:>10} {:>10} {:>8} {:>10}",
        "parameter", "mean", "2.5%", "97.5%", "rhat", "ess"
    );
    for s in summaries {
        println!(
            "{:<24} {:>10.4} {:>10.4} {:>10.4} {:>8.3} {:>10.1}",
            s.name, s.mean, s.q025, s.q975, s.rhat, s.ess
        );
    }
}

fn convergence_csv(summaries: &[ParamSummary]) -> Vec<u8> {
    let mut buf = Vec::new();
    writeln!(buf, "parameter,mean,q025,q975,rhat,ess").unwrap();
    for s in summaries {
        writeln!(buf, "{},{},{},{},{},{}", s.name, s.mean, s.q025, s.q975, s.rhat, s.ess).unwrap();
    }
    buf
}

pub fn cmd_fit(config: &RunConfig) -> Result<()> {
    match config.model.kind {
        ModelKind::Gaussian | ModelKind::Discrete => cmd_fit_panel(config),
        ModelKind::BinomialMixture => cmd_fit_binmix(config),
    }
}

fn cmd_fit_panel(config: &RunConfig) -> Result<()> {
    let prepared = prepare_panel(config)?;
    let chain_config = config.chain_config()?;
    let progress = |done: usize, total: usize| {
        if done % 5000 == 0 || done == total {
            eprintln!("sampling: {done}/{total}");
        }
    };
    let (draws, occupancy) = match config.model.kind {
        ModelKind::Gaussian => (
            run_chain_with_progress(
                &prepared.train,
                GaussianHyperParams::default(),
                &chain_config,
                progress,
            )?,
            None,
        ),
        ModelKind::Discrete => {
            let dc = DiscreteConfig {
                components: config.model.components,
                atom_prior_precision: config.model.atom_prior_precision,
                weights_person_counts: config.model.weights_person_counts,
                beta_prior_var: 9.0,
            };
            let (draws, occ) =
                run_chain_discrete_with_progress(&prepared.train, dc, &chain_config, progress)?;
            (draws, Some(occ))
        }
        ModelKind::BinomialMixture => unreachable!(),
    };

    let mut chain_buf = Vec::new();
    draws.write_csv(&mut chain_buf)?;
    atomic_write(&config.output_dir.join(CHAIN_CSV), &chain_buf)?;
    let meta_json = serde_json::to_string_pretty(&draws.meta(prepared.train.n_persons()))
        .map_err(|e| Error::Sampler(format!("metadata serialization: {e}")))?;
    atomic_write(&config.output_dir.join(CHAIN_META), meta_json.as_bytes())?;

    let summaries = summarize(&draws);
    atomic_write(&config.output_dir.join(CONVERGENCE_CSV), &convergence_csv(&summaries))?;
    print_summaries(&summaries);
    for s in &summaries {
        if s.rhat.is_finite() && s.rhat > 1.01 {
            eprintln!("warning: split-rhat {:.3} for {} exceeds 1.01", s.rhat, s.name);
        }
    }

    if let Some(occ) = occupancy {
        let mut buf = Vec::new();
        writeln!(buf, "q,count").unwrap();
        for (q, count) in &occ.frequency {
            writeln!(buf, "{q},{count}").unwrap();
        }
        atomic_write(&config.output_dir.join(OCCUPANCY_CSV), &buf)?;
        println!("occupancy: P[Q > 20] = {:.5}", occ.prob_q_exceeds(20));
    }
    write_run_meta(config, "fit")
}

fn cmd_fit_binmix(config: &RunConfig) -> Result<()> {
    let data = read_counts_csv(&config.data.path)?;
    let hyper = BetaHyper::new(config.model.beta_a, config.model.beta_b)?;
    let mut options = BinMixOptions::new(config.model.mixture_components, hyper);
    options.weight_concentration = config.model.weight_concentration;
    let mut chain_config = config.chain_config()?;
    if config.model.iterations.is_none() {
        // The probit default of 20k/5k applies here too, but mixtures on
        // grouped counts are cheap; keep the same plan.
        chain_config = chain_config.with_iterations(20_000, 5_000);
    }
    let draws = fit_binomial_mixture(&data, &options, &chain_config)?;
    let mut buf = Vec::new();
    draws.write_csv(&mut buf)?;
    atomic_write(&config.output_dir.join(CHAIN_CSV), &buf)?;
    let mut occ_buf = Vec::new();
    writeln!(occ_buf, "q,count").unwrap();
    for (q, count) in draws.occupied_histogram() {
        writeln!(occ_buf, "{q},{count}").unwrap();
    }
    atomic_write(&config.output_dir.join(OCCUPANCY_CSV), &occ_buf)?;
    println!(
        "binomial mixture: {} observations, J = {}, {} stored draws",
        data.len(),
        config.model.mixture_components,
        draws.n_draws()
    );
    write_run_meta(config, "fit")
}

fn load_chain(config: &RunConfig) -> Result<ChainDraws> {
    let csv_path = config.output_dir.join(CHAIN_CSV);
    let meta_path = config.output_dir.join(CHAIN_META);
    if !csv_path.exists() || !meta_path.exists() {
        return Err(Error::config(format!(
            "no fitted chain in {} (run `panelprobit fit` first)",
            config.output_dir.display()
        )));
    }
    ChainDraws::load(csv_path, meta_path)
}

fn holdout_predictions(config: &RunConfig, prepared: &PreparedData) -> Result<PredictiveSummary> {
    let draws = load_chain(config)?;
    let grid = theta_grid(config)?;
    if prepared.holdout_rows.is_empty() {
        return Err(Error::data(
            "no holdout rows; set data.cutoff_date to define a holdout period",
        ));
    }
    predict_occasions(&draws, &prepared.full, &prepared.holdout_rows, &grid, config.seed())
}

fn theta_grid(config: &RunConfig) -> Result<ThetaGrid> {
    ThetaGrid::new(
        -config.analysis.grid_halfwidth,
        config.analysis.grid_halfwidth,
        config.analysis.grid_points,
    )
}

pub fn cmd_predict(config: &RunConfig) -> Result<()> {
    let prepared = prepare_panel(config)?;
    let summary = holdout_predictions(config, &prepared)?;
    let mut buf = Vec::new();
    write_predictions_csv(&summary, config.analysis.interval_alpha, &mut buf)?;
    atomic_write(&config.output_dir.join(PREDICTIONS_CSV), &buf)?;
    println!(
        "predictions: {} occasions x {} draws",
        summary.occasions.len(),
        summary.n_draws
    );
    write_run_meta(config, "predict")
}

/// Training-set point estimates, used to place thresholds.
fn training_point_estimates(
    config: &RunConfig,
    prepared: &PreparedData,
    draws: &ChainDraws,
) -> Result<Vec<(f64, Option<u8>)>> {
    let grid = theta_grid(config)?;
    let cutoff = config
        .data
        .cutoff_date
        .ok_or_else(|| Error::config("analysis requires data.cutoff_date"))?;
    let train_rows: Vec<usize> = (0..prepared.full.n_obs())
        .filter(|&r| prepared.full.date(r) <= cutoff)
        .collect();
    let summary = predict_occasions(draws, &prepared.full, &train_rows, &grid, config.seed())?;
    Ok(summary
        .occasions
        .iter()
        .map(|o| (o.point_estimate(), o.external_risk_group))
        .collect())
}

pub fn cmd_analyze(config: &RunConfig) -> Result<()> {
    if config.model.kind == ModelKind::BinomialMixture {
        return Err(Error::config("analyze applies to the panel models only"));
    }
    let prepared = prepare_panel(config)?;
    let draws = load_chain(config)?;
    let summary = holdout_predictions(config, &prepared)?;

    // Threshold schemes from the training data / holdout instrument scores.
    let mut schemes: Vec<RiskGroupScheme> = Vec::new();
    let mut train_points: Option<Vec<(f64, Option<u8>)>> = None;
    for name in &config.analysis.schemes {
        match name.as_str() {
            "psa_midpoint" => {
                let pairs: Vec<(u8, u8)> = summary
                    .occasions
                    .iter()
                    .filter_map(|o| o.external_risk_group.map(|g| (g, o.outcome)))
                    .collect();
                if pairs.is_empty() {
                    eprintln!("warning: no external risk groups; skipping psa_midpoint outputs");
                    continue;
                }
                let groups: Vec<u8> = pairs.iter().map(|p| p.0).collect();
                let outcomes: Vec<u8> = pairs.iter().map(|p| p.1).collect();
                schemes.push(thresholds_psa_midpoint(&groups, &outcomes)?);
            }
            "psa_sized" => {
                let points = match &train_points {
                    Some(p) => p,
                    None => {
                        train_points = Some(training_point_estimates(config, &prepared, &draws)?);
                        train_points.as_ref().unwrap()
                    }
                };
                let with_groups: Vec<(f64, u8)> = points
                    .iter()
                    .filter_map(|(v, g)| g.map(|g| (*v, g)))
                    .collect();
                if with_groups.is_empty() {
                    eprintln!("warning: no external risk groups; skipping psa_sized outputs");
                    continue;
                }
                let mut sizes = vec![0usize; config.analysis.groups];
                for &(_, g) in &with_groups {
                    let g = g as usize;
                    if g >= 1 && g <= config.analysis.groups {
                        sizes[g - 1] += 1;
                    }
                }
                let values: Vec<f64> = with_groups.iter().map(|(v, _)| *v).collect();
                schemes.push(thresholds_equal_count(&values, &sizes)?);
            }
            "clustered" => {
                let points = match &train_points {
                    Some(p) => p,
                    None => {
                        train_points = Some(training_point_estimates(config, &prepared, &draws)?);
                        train_points.as_ref().unwrap()
                    }
                };
                let values: Vec<f64> = points.iter().map(|(v, _)| *v).collect();
                schemes.push(thresholds_kmeans_1d(&values, config.analysis.groups)?);
            }
            "custom" => {
                if config.analysis.custom_thresholds.is_empty() {
                    return Err(Error::config(
                        "scheme 'custom' requires analysis.custom_thresholds",
                    ));
                }
                schemes.push(RiskGroupScheme::custom(
                    config.analysis.custom_thresholds.clone(),
                )?);
            }
            other => {
                return Err(Error::config(format!("unknown scheme '{other}'")));
            }
        }
    }

    for scheme in &schemes {
        let label = scheme.kind.label();
        let assignments = assign_groups(&summary, scheme);
        let table = calibration_table(&summary, &assignments);
        let mut buf = Vec::new();
        write_calibration_csv(&table, &mut buf)?;
        atomic_write(&config.output_dir.join(format!("calibration_{label}.csv")), &buf)?;
        let matrix = wrong_bin_matrix(&summary, scheme, &assignments);
        let mut buf = Vec::new();
        write_wrong_bin_csv(&matrix, &mut buf)?;
        atomic_write(&config.output_dir.join(format!("wrong_bin_{label}.csv")), &buf)?;
        let densities = group_density_table(&summary, &assignments, 50);
        let mut buf = Vec::new();
        write_group_density_csv(&densities, &mut buf)?;
        atomic_write(&config.output_dir.join(format!("density_{label}.csv")), &buf)?;
        println!("{label}: diagonal mass {:.3}", matrix.diagonal_mass);
    }

    let report = interval_report(
        &summary,
        config.analysis.interval_alpha,
        config.analysis.flag_threshold,
    );
    let mut buf = Vec::new();
    write_interval_cells_csv(&report, &mut buf)?;
    atomic_write(&config.output_dir.join("interval_lengths.csv"), &buf)?;
    let mut buf = Vec::new();
    write_sorted_intervals_csv(&report, &mut buf)?;
    atomic_write(&config.output_dir.join("intervals_sorted.csv"), &buf)?;
    println!(
        "intervals: {} occasions, {:.1}% outside the {:.2} threshold",
        report.sorted_intervals.len(),
        100.0 * report.flagged_fraction,
        report.threshold
    );

    let grid = flag_proportion_grid(
        &summary,
        &config.analysis.cutoff_grid,
        &config.analysis.certainty_grid,
    );
    let mut buf = Vec::new();
    write_flag_grid_csv(&grid, &mut buf)?;
    atomic_write(&config.output_dir.join("flagging.csv"), &buf)?;

    let mut buf = Vec::new();
    write_predictions_csv(&summary, config.analysis.interval_alpha, &mut buf)?;
    atomic_write(&config.output_dir.join(PREDICTIONS_CSV), &buf)?;
    write_run_meta(config, "analyze")
}

pub fn cmd_simulate(config: &RunConfig) -> Result<()> {
    let grid = theta_grid(config)?;
    let scenario = SimulationScenario {
        p0: config.simulation.p0,
        taus: config.simulation.taus.clone(),
        replicates: config.simulation.replicates,
        eval_points: config.simulation.eval_points.clone(),
        alpha: config.analysis.interval_alpha,
        seed: config.seed(),
    };
    let curve = interval_length_curve(&scenario, &grid)?;
    let mut buf = Vec::new();
    write_interval_curve_csv(&curve, &mut buf)?;
    atomic_write(&config.output_dir.join("interval_curve.csv"), &buf)?;
    for point in curve.iter().filter(|p| p.n == 1) {
        println!(
            "tau {:.2}: mean interval length at n=1 is {:.4}",
            point.tau, point.mean_length
        );
    }

    let mut overlap_buf = Vec::new();
    writeln!(overlap_buf, "signal,tau,stratum_a,stratum_b,fraction_overlapping").unwrap();
    for signal in [SignalLevel::Low, SignalLevel::High] {
        for tau in [0.45, 0.10] {
            let report = signal_noise_intervals(
                signal,
                tau,
                config.simulation.cohort_size,
                config.analysis.interval_alpha,
                config.seed(),
                &grid,
            )?;
            let mut buf = Vec::new();
            write_signal_noise_csv(&report, &mut buf)?;
            atomic_write(
                &config
                    .output_dir
                    .join(format!("signal_noise_{}_{tau}.csv", signal.label())),
                &buf,
            )?;
            let mut pair_buf = Vec::new();
            write_overlap_csv(&report, &mut pair_buf)?;
            // Skip the header line when appending.
            let text = String::from_utf8_lossy(&pair_buf);
            for line in text.lines().skip(1) {
                writeln!(overlap_buf, "{line}").unwrap();
            }
        }
    }
    atomic_write(&config.output_dir.join("overlaps.csv"), &overlap_buf)?;
    write_run_meta(config, "simulate")
}

pub fn cmd_diagnose(chain: &Path, meta: &Path, out: Option<&PathBuf>) -> Result<()> {
    let draws = ChainDraws::load(chain, meta)?;
    let summaries = summarize(&draws);
    print_summaries(&summaries);
    if let Some(path) = out {
        atomic_write(path, &convergence_csv(&summaries))?;
    }
    Ok(())
}
