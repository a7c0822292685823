//! Synthetic panel generators used by validation suites and examples.
//! Each generator is fully keyed: the same seed always produces the same
//! dataset.

use chrono::NaiveDate;

use crate::data::{ObservationRecord, PanelDataset};
use crate::kernels::{phi, sample_bernoulli, sample_index, sample_std_normal};
use crate::rng::{RngStream, StreamKey};

/// True parameters for a Gaussian random-effects panel. Defaults echo the
/// regime studied in the acceptance suite: a 20% base rate with τ = 0.45.
#[derive(Clone, Debug)]
pub struct GaussianTruth {
    pub mu: f64,
    pub tau: f64,
    pub beta: Vec<f64>,
}

impl Default for GaussianTruth {
    fn default() -> Self {
        GaussianTruth {
            // Probit of 0.2.
            mu: -0.841_621_233_572_914_3,
            tau: 0.45,
            beta: vec![0.3, -0.2, 0.1, 0.05, -0.25],
        }
    }
}

/// True parameters for a discrete-mixture panel.
#[derive(Clone, Debug)]
pub struct DiscreteTruth {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Default for DiscreteTruth {
    fn default() -> Self {
        DiscreteTruth {
            atoms: vec![-1.8, -0.6, 0.6],
            weights: vec![0.3, 0.45, 0.25],
            beta: vec![0.25, -0.15],
        }
    }
}

fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2016, 1, 1).unwrap()
}

/// Panel with m persons, panel sizes uniform on 1..=max_n, standard normal
/// covariates, and outcomes from the Gaussian random-effects probit law.
pub fn gaussian_panel(truth: &GaussianTruth, m: usize, max_n: usize, seed: u64) -> PanelDataset {
    let p = truth.beta.len();
    let mut records = Vec::new();
    for i in 0..m {
        let mut rng = RngStream::new(seed, StreamKey::new(0, 0, i as u64));
        let n_i = 1 + sample_index(max_n, &mut rng);
        let theta = sample_std_normal(&mut rng);
        for j in 0..n_i {
            let covariates: Vec<f64> = (0..p).map(|_| sample_std_normal(&mut rng)).collect();
            let lp = truth.mu
                + truth.tau * theta
                + covariates.iter().zip(&truth.beta).map(|(x, b)| x * b).sum::<f64>();
            let y = sample_bernoulli(phi(lp), &mut rng);
            records.push(ObservationRecord {
                person_id: format!("p{i:06}"),
                occasion: 0, // re-derived from dates
                date: base_date() + chrono::Days::new(j as u64),
                covariates,
                outcome: y,
                external_risk_group: None,
            });
        }
    }
    PanelDataset::from_records(records, (0..p).map(|j| format!("x{}", j + 1)).collect()).unwrap()
}

/// Panel from the discrete-mixture law: each person draws an atom, outcomes
/// follow the probit of atom + xβ.
pub fn discrete_panel(truth: &DiscreteTruth, m: usize, max_n: usize, seed: u64) -> PanelDataset {
    let p = truth.beta.len();
    let mut records = Vec::new();
    for i in 0..m {
        let mut rng = RngStream::new(seed, StreamKey::new(0, 1, i as u64));
        let n_i = 1 + sample_index(max_n, &mut rng);
        let u = rng.next_unit_open();
        let mut acc = 0.0;
        let mut atom = *truth.atoms.last().unwrap();
        for (a, w) in truth.atoms.iter().zip(&truth.weights) {
            acc += w;
            if u < acc {
                atom = *a;
                break;
            }
        }
        for j in 0..n_i {
            let covariates: Vec<f64> = (0..p).map(|_| sample_std_normal(&mut rng)).collect();
            let lp = atom + covariates.iter().zip(&truth.beta).map(|(x, b)| x * b).sum::<f64>();
            let y = sample_bernoulli(phi(lp), &mut rng);
            records.push(ObservationRecord {
                person_id: format!("p{i:06}"),
                occasion: 0,
                date: base_date() + chrono::Days::new(j as u64),
                covariates,
                outcome: y,
                external_risk_group: None,
            });
        }
    }
    PanelDataset::from_records(records, (0..p).map(|j| format!("x{}", j + 1)).collect()).unwrap()
}

/// One person, one row, zero covariate, fixed outcome.
pub fn single_row_dataset(y: u8) -> PanelDataset {
    PanelDataset::from_records(
        vec![ObservationRecord {
            person_id: "p0".into(),
            occasion: 0,
            date: base_date(),
            covariates: vec![0.0],
            outcome: y,
            external_risk_group: None,
        }],
        vec!["x1".into()],
    )
    .unwrap()
}

/// One person with n identical zero-covariate rows.
pub fn constant_rows_dataset(n: usize) -> PanelDataset {
    let records = (0..n)
        .map(|j| ObservationRecord {
            person_id: "p0".into(),
            occasion: 0,
            date: base_date() + chrono::Days::new(j as u64),
            covariates: vec![0.0],
            outcome: (j % 2) as u8,
            external_risk_group: None,
        })
        .collect();
    PanelDataset::from_records(records, vec!["x1".into()]).unwrap()
}

/// n single-observation persons whose only covariate is identically zero.
pub fn zero_design_dataset(n: usize) -> PanelDataset {
    let records = (0..n)
        .map(|i| ObservationRecord {
            person_id: format!("p{i}"),
            occasion: 0,
            date: base_date(),
            covariates: vec![0.0],
            outcome: (i % 2) as u8,
            external_risk_group: None,
        })
        .collect();
    PanelDataset::from_records(records, vec!["x1".into()]).unwrap()
}

/// Two single-observation persons with X = I₂ (orthonormal design).
pub fn orthonormal_design_dataset() -> PanelDataset {
    let records = vec![
        ObservationRecord {
            person_id: "p0".into(),
            occasion: 0,
            date: base_date(),
            covariates: vec![1.0, 0.0],
            outcome: 1,
            external_risk_group: None,
        },
        ObservationRecord {
            person_id: "p1".into(),
            occasion: 0,
            date: base_date(),
            covariates: vec![0.0, 1.0],
            outcome: 0,
            external_risk_group: None,
        },
    ];
    PanelDataset::from_records(records, vec!["x1".into(), "x2".into()]).unwrap()
}
