use chrono::NaiveDate;
use panelprobit::data::{ObservationRecord, PanelDataset};
use panelprobit::diagnostics::{effective_sample_size, quantile};
use panelprobit::gibbs::gaussian::{run_chain, GaussianHyperParams};
use panelprobit::gibbs::{ChainConfig, GlobalDraw};
use panelprobit::kernels::sample_bernoulli;
use panelprobit::rng::{RngStream, StreamKey};

fn main() {
    // Pure GLM data at p = 0.5, many repeats per person.
    let (m, n_i) = (400usize, 80usize);
    let mut records = Vec::new();
    for i in 0..m {
        let mut rng = RngStream::new(555, StreamKey::new(0, 0, i as u64));
        for j in 0..n_i {
            records.push(ObservationRecord {
                person_id: format!("p{i}"),
                occasion: 0,
                date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap() + chrono::Days::new(j as u64),
                covariates: vec![if j % 2 == 0 { 1.0 } else { -1.0 }],
                outcome: sample_bernoulli(0.5, &mut rng),
                external_risk_group: None,
            });
        }
    }
    let data = PanelDataset::from_records(records, vec!["x1".into()]).unwrap();
    let config = ChainConfig::new(66).with_iterations(16_000, 4_000);
    let draws = run_chain(&data, GaussianHyperParams::default(), &config).unwrap();
    let taus: Vec<f64> = draws.globals.iter().map(|g| match g {
        GlobalDraw::Gaussian { tau, .. } => *tau, _ => unreachable!() }).collect();
    println!("q975 {:.4} median {:.4} ess {:.0}", quantile(&taus, 0.975), quantile(&taus, 0.5),
        effective_sample_size(&[taus.clone()]));
}
