//! Gibbs sampler for the overfitted discrete-mixture random-effects probit
//! model: K atoms with N(0,1) priors, Dir(1/K,...,1/K) weights, and latent
//! class assignments updated marginally of the augmentation variables.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::kernels::{
    log_phi, sample_categorical_from_logweights, sample_dirichlet, sample_std_normal,
    sample_truncated_normal, TruncationSide,
};
use crate::rng::{RngStream, StreamKey};

use super::{ChainConfig, ChainDraws, DesignCache, GlobalDraw, ModelTag, xt_times};

const STEP_Z: u64 = 11;
const STEP_OMEGA: u64 = 12;
const STEP_BETA: u64 = 13;
const STEP_ATOMS: u64 = 14;
const STEP_WEIGHTS: u64 = 15;
const STEP_INIT: u64 = 16;

/// Mixture-specific settings.
#[derive(Clone, Copy, Debug)]
pub struct DiscreteConfig {
    /// Number of mixture components K.
    pub components: usize,
    /// Include the N(0,1) prior precision in the atom update, the conjugate
    /// form s_k = (Σ n_i + 1)⁻¹. The alternative drops the +1 as the
    /// appendix formula literally reads, with empty components drawn from
    /// the prior either way.
    pub atom_prior_precision: bool,
    /// Concentrate the weight update by person counts instead of
    /// observation counts (sensitivity analysis switch).
    pub weights_person_counts: bool,
    pub beta_prior_var: f64,
}

impl Default for DiscreteConfig {
    fn default() -> Self {
        DiscreteConfig {
            components: 30,
            atom_prior_precision: true,
            weights_person_counts: false,
            beta_prior_var: 9.0,
        }
    }
}

/// Full Gibbs state for the discrete model.
#[derive(Clone, Debug)]
pub struct DiscreteState {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
    /// Component assignment per person.
    pub z: Vec<usize>,
    pub beta: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Posterior frequency of the occupied-component count Q.
#[derive(Clone, Debug, Default)]
pub struct OccupancySummary {
    pub q_per_draw: Vec<u32>,
    pub frequency: BTreeMap<u32, usize>,
}

impl OccupancySummary {
    pub fn from_draws(q_per_draw: Vec<u32>) -> Self {
        let mut frequency = BTreeMap::new();
        for &q in &q_per_draw {
            *frequency.entry(q).or_insert(0) += 1;
        }
        OccupancySummary { q_per_draw, frequency }
    }

    /// P[Q > threshold] over the stored draws.
    pub fn prob_q_exceeds(&self, threshold: u32) -> f64 {
        if self.q_per_draw.is_empty() {
            return 0.0;
        }
        self.q_per_draw.iter().filter(|&&q| q > threshold).count() as f64
            / self.q_per_draw.len() as f64
    }
}

pub struct DiscreteSampler<'a> {
    data: &'a PanelDataset,
    config: DiscreteConfig,
    cache: DesignCache,
    seed: u64,
    chain: u64,
    xb: Vec<f64>,
}

impl<'a> DiscreteSampler<'a> {
    pub fn new(data: &'a PanelDataset, config: DiscreteConfig, seed: u64, chain: u64) -> Result<Self> {
        if config.components == 0 {
            return Err(Error::config("discrete sampler: K must be positive"));
        }
        if data.n_obs() == 0 {
            return Err(Error::data("discrete sampler: empty dataset"));
        }
        let cache = DesignCache::new(data, config.beta_prior_var)?;
        Ok(DiscreteSampler {
            data,
            config,
            cache,
            seed,
            chain,
            xb: vec![0.0; data.n_obs()],
        })
    }

    fn stream(&self, iteration: u64, entity: u64, step: u64) -> RngStream {
        RngStream::new(self.seed, StreamKey::new(self.chain, iteration, entity)).substream(step)
    }

    /// Re-derive the cached Xβ values for an externally supplied state.
    pub fn update_beta_cache(&mut self, state: &DiscreteState) {
        self.refresh_xb(&state.beta);
    }

    fn refresh_xb(&mut self, beta: &[f64]) {
        let p = self.data.n_covariates();
        for r in 0..self.data.n_obs() {
            let row = self.data.x_row(r);
            let mut acc = 0.0;
            for j in 0..p {
                acc += row[j] * beta[j];
            }
            self.xb[r] = acc;
        }
    }

    /// Atoms from the prior, uniform weights, uniform random assignments,
    /// β = 0, ω from the second update.
    pub fn initial_state(&mut self, iteration: u64) -> DiscreteState {
        let k = self.config.components;
        let m = self.data.n_persons();
        let mut init_rng = self.stream(iteration, 0, STEP_INIT);
        let atoms: Vec<f64> = (0..k).map(|_| sample_std_normal(&mut init_rng)).collect();
        let z: Vec<usize> = (0..m)
            .map(|i| {
                let mut rng = self.stream(iteration, i as u64, STEP_INIT);
                crate::kernels::sample_index(k, &mut rng)
            })
            .collect();
        let mut state = DiscreteState {
            atoms,
            weights: vec![1.0 / k as f64; k],
            z,
            beta: vec![0.0; self.data.n_covariates()],
            omega: vec![0.0; self.data.n_obs()],
        };
        self.refresh_xb(&state.beta);
        self.update_omega(&mut state, iteration);
        state
    }

    /// Log-weights of the assignment conditional for one person, marginal
    /// of ω: log ν_k + Σ_j [y log Φ(θ_k + xβ) + (1−y) log Φ(−θ_k − xβ)].
    pub fn z_logweights(&self, state: &DiscreteState, person: usize) -> Vec<f64> {
        let range = self.data.rows_of_person(person);
        state
            .atoms
            .iter()
            .zip(&state.weights)
            .map(|(&atom, &w)| {
                let mut acc = w.ln();
                for r in range.clone() {
                    let lp = atom + self.xb[r];
                    acc += if self.data.outcome(r) == 1 {
                        log_phi(lp)
                    } else {
                        log_phi(-lp)
                    };
                }
                acc
            })
            .collect()
    }

    /// Step 1: z_i marginal of ω, independent across persons.
    pub fn update_z(&self, state: &mut DiscreteState, iteration: u64) -> Result<()> {
        let data = self.data;
        let seed = self.seed;
        let chain = self.chain;
        let atoms = &state.atoms;
        let weights = &state.weights;
        let xb = &self.xb;
        let new_z: Vec<Result<usize>> = (0..data.n_persons())
            .into_par_iter()
            .map(|i| {
                let range = data.rows_of_person(i);
                let logw: Vec<f64> = atoms
                    .iter()
                    .zip(weights)
                    .map(|(&atom, &w)| {
                        let mut acc = w.ln();
                        for r in range.clone() {
                            let lp = atom + xb[r];
                            acc += if data.outcome(r) == 1 { log_phi(lp) } else { log_phi(-lp) };
                        }
                        acc
                    })
                    .collect();
                let mut rng =
                    RngStream::new(seed, StreamKey::new(chain, iteration, i as u64)).substream(STEP_Z);
                sample_categorical_from_logweights(&logw, &mut rng)
            })
            .collect();
        for (i, z) in new_z.into_iter().enumerate() {
            state.z[i] = z?;
        }
        Ok(())
    }

    /// Step 2: ω_ij around θ_{z_i} + xβ, truncated by the outcome.
    pub fn update_omega(&self, state: &mut DiscreteState, iteration: u64) {
        let data = self.data;
        let seed = self.seed;
        let chain = self.chain;
        let atoms = &state.atoms;
        let z = &state.z;
        let xb = &self.xb;
        state.omega.par_iter_mut().enumerate().for_each(|(r, w)| {
            let mean = atoms[z[data.person_of_row(r)]] + xb[r];
            let side = TruncationSide::from_outcome(data.outcome(r));
            let mut rng =
                RngStream::new(seed, StreamKey::new(chain, iteration, r as u64)).substream(STEP_OMEGA);
            *w = sample_truncated_normal(mean, 1.0, side, &mut rng).expect("unit sd");
        });
    }

    /// Conditional mean of β: S_β X'(ω − θ) with θ the per-row assigned atom.
    pub fn beta_conditional_mean(&self, state: &DiscreteState) -> Vec<f64> {
        let data = self.data;
        let resid: Vec<f64> = (0..data.n_obs())
            .map(|r| state.omega[r] - state.atoms[state.z[data.person_of_row(r)]])
            .collect();
        self.cache.chol.solve(&xt_times(data, &resid))
    }

    /// Step 3: β.
    pub fn update_beta(&mut self, state: &mut DiscreteState, iteration: u64) {
        let alpha = self.beta_conditional_mean(state);
        let p = state.beta.len();
        let mut rng = self.stream(iteration, 0, STEP_BETA);
        let z: Vec<f64> = (0..p).map(|_| sample_std_normal(&mut rng)).collect();
        let noise = self.cache.chol.solve_lt(&z);
        for j in 0..p {
            state.beta[j] = alpha[j] + noise[j];
        }
        self.refresh_xb(&state.beta);
    }

    /// Conditional for atom k. With the conjugate form the empty-component
    /// case reduces exactly to the N(0,1) prior; with the literal form an
    /// empty component is drawn from the prior explicitly.
    pub fn atom_conditional(&self, state: &DiscreteState, k: usize) -> (f64, f64) {
        let data = self.data;
        let mut total_n = 0.0;
        let mut total_resid = 0.0;
        for i in 0..data.n_persons() {
            if state.z[i] == k {
                let range = data.rows_of_person(i);
                total_n += range.len() as f64;
                for r in range {
                    total_resid += state.omega[r] - self.xb[r];
                }
            }
        }
        if self.config.atom_prior_precision {
            let s = 1.0 / (total_n + 1.0);
            (s * total_resid, s)
        } else if total_n == 0.0 {
            (0.0, 1.0)
        } else {
            let s = 1.0 / total_n;
            (s * total_resid, s)
        }
    }

    /// Step 4: all atoms, independent across components.
    pub fn update_atoms(&self, state: &mut DiscreteState, iteration: u64) {
        let conditionals: Vec<(f64, f64)> = (0..self.config.components)
            .map(|k| self.atom_conditional(state, k))
            .collect();
        state.atoms.par_iter_mut().enumerate().for_each(|(k, atom)| {
            let (alpha, s) = conditionals[k];
            let mut rng = RngStream::new(self.seed, StreamKey::new(self.chain, iteration, k as u64))
                .substream(STEP_ATOMS);
            *atom = alpha + s.sqrt() * sample_std_normal(&mut rng);
        });
    }

    /// Concentrations of the weight update: 1/K plus, per component, the
    /// total observation count of its members (or the member count under
    /// the sensitivity switch).
    pub fn weight_concentrations(&self, state: &DiscreteState) -> Vec<f64> {
        let k = self.config.components;
        let mut conc = vec![1.0 / k as f64; k];
        for i in 0..self.data.n_persons() {
            let add = if self.config.weights_person_counts {
                1.0
            } else {
                self.data.n_occasions(i) as f64
            };
            conc[state.z[i]] += add;
        }
        conc
    }

    /// Step 5: ν.
    pub fn update_weights(&self, state: &mut DiscreteState, iteration: u64) -> Result<()> {
        let conc = self.weight_concentrations(state);
        let mut rng = self.stream(iteration, 0, STEP_WEIGHTS);
        state.weights = sample_dirichlet(&conc, &mut rng)?;
        Ok(())
    }

    /// Number of occupied components.
    pub fn occupancy(&self, state: &DiscreteState) -> u32 {
        let mut seen = vec![false; self.config.components];
        for &z in &state.z {
            seen[z] = true;
        }
        seen.iter().filter(|&&s| s).count() as u32
    }

    /// One full scan in the appendix order: z, ω, β, atoms, ν.
    pub fn sweep(&mut self, state: &mut DiscreteState, iteration: u64) -> Result<()> {
        self.update_z(state, iteration)?;
        self.update_omega(state, iteration);
        self.update_beta(state, iteration);
        self.update_atoms(state, iteration);
        self.update_weights(state, iteration)?;
        Ok(())
    }

    pub fn config(&self) -> &DiscreteConfig {
        &self.config
    }
}

/// Run the discrete-mixture sampler. Defaults in [`ChainConfig::new_discrete`]
/// follow the 80k/40k plan; reduced plans are routinely used on desk-scale
/// data.
pub fn run_chain_discrete(
    data: &PanelDataset,
    config: DiscreteConfig,
    chain_config: &ChainConfig,
) -> Result<(ChainDraws, OccupancySummary)> {
    run_chain_discrete_with_progress(data, config, chain_config, |_, _| {})
}

pub fn run_chain_discrete_with_progress(
    data: &PanelDataset,
    config: DiscreteConfig,
    chain_config: &ChainConfig,
    progress: impl Fn(usize, usize) + Sync,
) -> Result<(ChainDraws, OccupancySummary)> {
    chain_config.validate()?;
    let chain_ids: Vec<u64> = (0..chain_config.chains as u64).collect();
    let per_chain: Vec<Result<DiscreteChainOutput>> = chain_ids
        .par_iter()
        .map(|&chain| run_single_chain(data, config, chain_config, chain, &progress))
        .collect();

    let mut chain_of_draw = Vec::new();
    let mut iteration_of_draw = Vec::new();
    let mut globals = Vec::new();
    let mut occupancy = Vec::new();
    let mut person_effects = chain_config.store_person_effects.then(Vec::new);
    for (chain, out) in per_chain.into_iter().enumerate() {
        let out = out.map_err(|e| Error::sampler(format!("chain {chain}: {e}")))?;
        for ((it, g), q) in out.iterations.into_iter().zip(out.globals).zip(out.occupancy) {
            chain_of_draw.push(chain as u32);
            iteration_of_draw.push(it);
            globals.push(g);
            occupancy.push(q);
        }
        if let Some(effects) = person_effects.as_mut() {
            effects.extend(out.person_effects);
        }
    }
    let summary = OccupancySummary::from_draws(occupancy.clone());
    Ok((
        ChainDraws {
            model: ModelTag::Discrete,
            p: data.n_covariates(),
            k: config.components,
            chains: chain_config.chains,
            chain_of_draw,
            iteration_of_draw,
            globals,
            person_effects,
            occupancy: Some(occupancy),
            covariate_names: data.covariate_names().to_vec(),
            config: chain_config.clone(),
        },
        summary,
    ))
}

struct DiscreteChainOutput {
    iterations: Vec<u32>,
    globals: Vec<GlobalDraw>,
    occupancy: Vec<u32>,
    person_effects: Vec<Vec<f64>>,
}

fn run_single_chain(
    data: &PanelDataset,
    config: DiscreteConfig,
    chain_config: &ChainConfig,
    chain: u64,
    progress: &(impl Fn(usize, usize) + Sync),
) -> Result<DiscreteChainOutput> {
    let mut sampler = DiscreteSampler::new(data, config, chain_config.seed, chain)?;
    let mut state = sampler.initial_state(0);
    let mut out = DiscreteChainOutput {
        iterations: Vec::with_capacity(chain_config.draws_per_chain()),
        globals: Vec::with_capacity(chain_config.draws_per_chain()),
        occupancy: Vec::with_capacity(chain_config.draws_per_chain()),
        person_effects: Vec::new(),
    };
    for iter in 0..chain_config.iterations {
        sampler
            .sweep(&mut state, iter as u64 + 1)
            .map_err(|e| Error::sampler(format!("iteration {iter}: {e}")))?;
        if iter >= chain_config.burn_in && (iter - chain_config.burn_in) % chain_config.thin == 0 {
            out.iterations.push(iter as u32);
            out.globals.push(GlobalDraw::Discrete {
                beta: state.beta.clone(),
                atoms: state.atoms.clone(),
                weights: state.weights.clone(),
            });
            out.occupancy.push(sampler.occupancy(&state));
            if chain_config.store_person_effects {
                out.person_effects
                    .push(state.z.iter().map(|&z| state.atoms[z]).collect());
            }
        }
        if (iter + 1) % 1000 == 0 {
            progress(iter + 1, chain_config.iterations);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn tiny() -> PanelDataset {
        synthetic::discrete_panel(&synthetic::DiscreteTruth::default(), 25, 3, 41)
    }

    #[test]
    fn z_dominated_by_matching_atom() {
        // One person with y = 1 on every occasion and x = 0.
        let records: Vec<_> = (0..3)
            .map(|j| crate::data::ObservationRecord {
                person_id: "p0".into(),
                occasion: 0,
                date: chrono::NaiveDate::from_ymd_opt(2016, 1, 1).unwrap() + chrono::Days::new(j),
                covariates: vec![0.0],
                outcome: 1,
                external_risk_group: None,
            })
            .collect();
        let data_ones =
            crate::data::PanelDataset::from_records(records, vec!["x1".into()]).unwrap();
        let mut sampler = DiscreteSampler::new(
            &data_ones,
            DiscreteConfig { components: 2, ..Default::default() },
            7,
            0,
        )
        .unwrap();
        let mut state = sampler.initial_state(0);
        state.atoms = vec![-10.0, 10.0];
        state.weights = vec![0.5, 0.5];
        sampler.refresh_xb(&state.beta);
        for iter in 1..100 {
            sampler.update_z(&mut state, iter).unwrap();
            assert_eq!(state.z[0], 1);
        }
    }

    #[test]
    fn z_point_mass_weights_pin_assignment() {
        let data = tiny();
        let mut sampler = DiscreteSampler::new(
            &data,
            DiscreteConfig { components: 3, ..Default::default() },
            8,
            0,
        )
        .unwrap();
        let mut state = sampler.initial_state(0);
        state.weights = vec![1.0, 0.0, 0.0];
        sampler.refresh_xb(&state.beta);
        sampler.update_z(&mut state, 5).unwrap();
        assert!(state.z.iter().all(|&z| z == 0));
    }

    #[test]
    fn z_frequencies_match_enumerated_weights() {
        let data = tiny();
        let mut sampler = DiscreteSampler::new(
            &data,
            DiscreteConfig { components: 3, ..Default::default() },
            9,
            0,
        )
        .unwrap();
        let mut state = sampler.initial_state(0);
        sampler.sweep(&mut state, 1).unwrap();
        let person = 0usize;
        let logw = sampler.z_logweights(&state, person);
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
        let redraws = 100_000;
        let mut counts = vec![0usize; 3];
        for iter in 0..redraws {
            let mut st = state.clone();
            sampler.update_z(&mut st, iter as u64 + 10).unwrap();
            counts[st.z[person]] += 1;
        }
        for k in 0..3 {
            let freq = counts[k] as f64 / redraws as f64;
            let se = (probs[k] * (1.0 - probs[k]) / redraws as f64).sqrt();
            assert!(
                (freq - probs[k]).abs() <= 3.0 * se + 1e-9,
                "component {k}: {freq} vs {} (se {se})",
                probs[k]
            );
        }
    }

    #[test]
    fn omega_respects_outcome_sign() {
        let data = tiny();
        let mut sampler = DiscreteSampler::new(&data, DiscreteConfig::default(), 10, 0).unwrap();
        let mut state = sampler.initial_state(0);
        for iter in 1..30 {
            sampler.sweep(&mut state, iter).unwrap();
            for r in 0..data.n_obs() {
                if data.outcome(r) == 1 {
                    assert!(state.omega[r] > 0.0);
                } else {
                    assert!(state.omega[r] <= 0.0);
                }
            }
            let total: f64 = state.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(state.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn atom_conditional_empty_component_is_prior() {
        let data = tiny();
        let mut sampler = DiscreteSampler::new(
            &data,
            DiscreteConfig { components: 5, ..Default::default() },
            11,
            0,
        )
        .unwrap();
        let mut state = sampler.initial_state(0);
        sampler.sweep(&mut state, 1).unwrap();
        // Empty out component 4.
        for z in state.z.iter_mut() {
            if *z == 4 {
                *z = 0;
            }
        }
        assert_eq!(sampler.atom_conditional(&state, 4), (0.0, 1.0));
        // Literal variant also draws the prior when empty.
        let mut literal = DiscreteSampler::new(
            &data,
            DiscreteConfig { components: 5, atom_prior_precision: false, ..Default::default() },
            11,
            0,
        )
        .unwrap();
        literal.refresh_xb(&state.beta);
        assert_eq!(literal.atom_conditional(&state, 4), (0.0, 1.0));
    }

    #[test]
    fn atom_conditional_single_member() {
        // One member with n_i = 1 and residual r: conjugate N(r/2, 1/2),
        // literal N(r, 1).
        let data = synthetic::single_row_dataset(1);
        let make = |prior: bool| {
            DiscreteSampler::new(
                &data,
                DiscreteConfig {
                    components: 2,
                    atom_prior_precision: prior,
                    ..Default::default()
                },
                12,
                0,
            )
            .unwrap()
        };
        let mut sampler = make(true);
        let mut state = sampler.initial_state(0);
        state.z[0] = 0;
        state.beta.iter_mut().for_each(|b| *b = 0.0);
        sampler.refresh_xb(&state.beta);
        state.omega[0] = 1.8;
        let (a, s) = sampler.atom_conditional(&state, 0);
        assert!((s - 0.5).abs() < 1e-15 && (a - 0.9).abs() < 1e-15);
        let mut literal = make(false);
        literal.refresh_xb(&state.beta);
        let (a2, s2) = literal.atom_conditional(&state, 0);
        assert!((s2 - 1.0).abs() < 1e-15 && (a2 - 1.8).abs() < 1e-15);
    }

    #[test]
    fn atom_conditional_two_members_literal_formula() {
        // Two members whose residuals sum to zero with total n = 4:
        // the literal update gives α = 0, s = 1/4.
        let records: Vec<_> = (0..2)
            .flat_map(|i| {
                (0..2).map(move |j| crate::data::ObservationRecord {
                    person_id: format!("p{i}"),
                    occasion: 0,
                    date: chrono::NaiveDate::from_ymd_opt(2016, 1, 1).unwrap()
                        + chrono::Days::new(j),
                    covariates: vec![0.0],
                    outcome: 1,
                    external_risk_group: None,
                })
            })
            .collect();
        let data = crate::data::PanelDataset::from_records(records, vec!["x1".into()]).unwrap();
        let mut sampler = DiscreteSampler::new(
            &data,
            DiscreteConfig { components: 2, atom_prior_precision: false, ..Default::default() },
            13,
            0,
        )
        .unwrap();
        let mut state = sampler.initial_state(0);
        state.z = vec![0, 0];
        state.beta.iter_mut().for_each(|b| *b = 0.0);
        sampler.refresh_xb(&state.beta);
        state.omega = vec![0.4, 0.6, -0.3, -0.7];
        let (a, s) = sampler.atom_conditional(&state, 0);
        assert!((s - 0.25).abs() < 1e-15);
        assert!(a.abs() < 1e-15);
    }

    #[test]
    fn weight_concentrations_use_observation_counts() {
        // Persons with n = (3, 1) assigned to components (0, 1):
        // concentrations (1/K + 3, 1/K + 1).
        let records: Vec<_> = (0..3)
            .map(|j| crate::data::ObservationRecord {
                person_id: "a".into(),
                occasion: 0,
                date: chrono::NaiveDate::from_ymd_opt(2016, 1, 1).unwrap() + chrono::Days::new(j),
                covariates: vec![0.0],
                outcome: 0,
                external_risk_group: None,
            })
            .chain(std::iter::once(crate::data::ObservationRecord {
                person_id: "b".into(),
                occasion: 0,
                date: chrono::NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
                covariates: vec![0.0],
                outcome: 1,
                external_risk_group: None,
            }))
            .collect();
        let data = crate::data::PanelDataset::from_records(records, vec!["x1".into()]).unwrap();
        let mut sampler = DiscreteSampler::new(
            &data,
            DiscreteConfig { components: 2, ..Default::default() },
            14,
            0,
        )
        .unwrap();
        let mut state = sampler.initial_state(0);
        state.z = vec![0, 1];
        let conc = sampler.weight_concentrations(&state);
        assert!((conc[0] - (0.5 + 3.0)).abs() < 1e-15);
        assert!((conc[1] - (0.5 + 1.0)).abs() < 1e-15);
        // Person-count switch.
        sampler.config.weights_person_counts = true;
        let conc2 = sampler.weight_concentrations(&state);
        assert!((conc2[0] - 1.5).abs() < 1e-15 && (conc2[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn weight_prior_recovery_with_no_members() {
        // Unit-level check of the concentration builder with zero persons
        // assigned anywhere relevant: an empty dataset is rejected, so use
        // one person and verify only the prior part of the other component.
        let data = synthetic::single_row_dataset(0);
        let mut sampler = DiscreteSampler::new(
            &data,
            DiscreteConfig { components: 4, ..Default::default() },
            15,
            0,
        )
        .unwrap();
        let mut state = sampler.initial_state(0);
        state.z = vec![2];
        let conc = sampler.weight_concentrations(&state);
        assert_eq!(conc[0], 0.25);
        assert_eq!(conc[1], 0.25);
        assert!((conc[2] - 1.25).abs() < 1e-15);
        assert_eq!(conc[3], 0.25);
    }

    #[test]
    fn dominant_component_weight_mean() {
        // All mass in component 1 with total observations 100, K = 2:
        // mean weight of that component over draws is (1/K + 100) / (1 + 100).
        let records: Vec<_> = (0..100)
            .map(|j| crate::data::ObservationRecord {
                person_id: "a".into(),
                occasion: 0,
                date: chrono::NaiveDate::from_ymd_opt(2016, 1, 1).unwrap() + chrono::Days::new(j),
                covariates: vec![0.0],
                outcome: (j % 5 == 0) as u8,
                external_risk_group: None,
            })
            .collect();
        let data = crate::data::PanelDataset::from_records(records, vec!["x1".into()]).unwrap();
        let mut sampler = DiscreteSampler::new(
            &data,
            DiscreteConfig { components: 2, ..Default::default() },
            16,
            0,
        )
        .unwrap();
        let mut state = sampler.initial_state(0);
        state.z = vec![0];
        let n = 50_000;
        let mut sum = 0.0;
        for iter in 0..n {
            sampler.update_weights(&mut state, iter as u64 + 1).unwrap();
            sum += state.weights[0];
        }
        let expect = 100.5 / 101.0;
        assert!((sum / n as f64 - expect).abs() < 2e-3);
    }

    #[test]
    fn occupancy_counts_distinct_assignments() {
        let data = tiny();
        let mut sampler = DiscreteSampler::new(
            &data,
            DiscreteConfig { components: 6, ..Default::default() },
            17,
            0,
        )
        .unwrap();
        let mut state = sampler.initial_state(0);
        state.z.iter_mut().for_each(|z| *z = 0);
        assert_eq!(sampler.occupancy(&state), 1);
        state.z[0] = 3;
        assert_eq!(sampler.occupancy(&state), 2);
        let q = sampler.occupancy(&state);
        assert!(q >= 1 && q as usize <= 6);
    }

    #[test]
    fn discrete_chain_deterministic_across_threads() {
        let data = tiny();
        let config = DiscreteConfig { components: 5, ..Default::default() };
        let chain_config = ChainConfig::new(99).with_iterations(40, 10);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_chain_discrete(&data, config, &chain_config).unwrap())
        };
        let (a, qa) = run(1);
        let (b, qb) = run(2);
        assert_eq!(qa.q_per_draw, qb.q_per_draw);
        for d in 0..a.n_draws() {
            match (&a.globals[d], &b.globals[d]) {
                (
                    GlobalDraw::Discrete { beta: b1, atoms: a1, weights: w1 },
                    GlobalDraw::Discrete { beta: b2, atoms: a2, weights: w2 },
                ) => {
                    assert!(b1.iter().zip(b2).all(|(x, y)| x.to_bits() == y.to_bits()));
                    assert!(a1.iter().zip(a2).all(|(x, y)| x.to_bits() == y.to_bits()));
                    assert!(w1.iter().zip(w2).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
                _ => panic!("wrong model tag"),
            }
        }
    }
}
