//! Gibbs sampler for the Gaussian random-effects probit model in the
//! uncentered parametrization. Per iteration: latent ω, then τ marginal of
//! μ, then μ, θ, β, each from its exact full conditional.

use rayon::prelude::*;

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::kernels::{
    inv_phi, sample_std_normal, sample_truncated_normal, TruncationSide,
};
use crate::rng::{RngStream, StreamKey};

use super::{ChainConfig, ChainDraws, DesignCache, GlobalDraw, ModelTag, xt_times};

// Step labels keying the per-entity random streams.
const STEP_OMEGA: u64 = 1;
const STEP_TAU: u64 = 2;
const STEP_MU: u64 = 3;
const STEP_THETA: u64 = 4;
const STEP_BETA: u64 = 5;

/// Prior scales. The paper's choices are the defaults: N(0,9) for μ and
/// each β, and a standard normal truncated to (0,∞) for τ.
#[derive(Clone, Copy, Debug)]
pub struct GaussianHyperParams {
    pub mu_prior_var: f64,
    pub beta_prior_var: f64,
}

impl Default for GaussianHyperParams {
    fn default() -> Self {
        GaussianHyperParams {
            mu_prior_var: 9.0,
            beta_prior_var: 9.0,
        }
    }
}

impl GaussianHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_prior_var > 0.0 && self.beta_prior_var > 0.0) {
            return Err(Error::config("prior variances must be positive"));
        }
        Ok(())
    }
}

/// Full Gibbs state for the Gaussian model.
#[derive(Clone, Debug)]
pub struct GaussianState {
    pub mu: f64,
    pub tau: f64,
    pub beta: Vec<f64>,
    /// Standard-normal-scaled random effects, one per person.
    pub theta: Vec<f64>,
    /// Latent augmentation variable, one per observation row.
    pub omega: Vec<f64>,
}

/// One fit's worth of shared context: data, priors, the cached
/// factorization of X'X + (1/9)I, and the running Xβ values.
pub struct GaussianSampler<'a> {
    data: &'a PanelDataset,
    hyper: GaussianHyperParams,
    cache: DesignCache,
    seed: u64,
    chain: u64,
    /// Xβ per row, refreshed whenever β changes.
    xb: Vec<f64>,
}

impl<'a> GaussianSampler<'a> {
    pub fn new(
        data: &'a PanelDataset,
        hyper: GaussianHyperParams,
        seed: u64,
        chain: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        if data.n_obs() == 0 {
            return Err(Error::data("gaussian sampler: empty dataset"));
        }
        let cache = DesignCache::new(data, hyper.beta_prior_var)?;
        Ok(GaussianSampler {
            data,
            hyper,
            cache,
            seed,
            chain,
            xb: vec![0.0; data.n_obs()],
        })
    }

    pub fn data(&self) -> &PanelDataset {
        self.data
    }

    /// Starting point: μ at the probit of the observed rate, τ = 0.5,
    /// β = θ = 0, ω drawn by the first update.
    pub fn initial_state(&self, iteration: u64) -> GaussianState {
        let n = self.data.n_obs();
        let mean_y = self.data.outcomes().iter().map(|&y| y as f64).sum::<f64>() / n as f64;
        let bounded = mean_y.clamp(1.0 / (n as f64 + 1.0), 1.0 - 1.0 / (n as f64 + 1.0));
        let mut state = GaussianState {
            mu: inv_phi(bounded),
            tau: 0.5,
            beta: vec![0.0; self.data.n_covariates()],
            theta: vec![0.0; self.data.n_persons()],
            omega: vec![0.0; n],
        };
        draw_omega(self, &mut state, iteration);
        state
    }

    /// Re-derive the cached Xβ values for an externally supplied state;
    /// needed before evaluating conditionals on a state the sampler did not
    /// itself produce.
    pub fn update_beta_cache(&mut self, state: &GaussianState) {
        self.xb = self.refresh_xb(&state.beta);
    }

    fn refresh_xb(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.data.n_covariates();
        (0..self.data.n_obs())
            .map(|r| {
                let row = self.data.x_row(r);
                let mut acc = 0.0;
                for j in 0..p {
                    acc += row[j] * beta[j];
                }
                acc
            })
            .collect()
    }

    fn stream(&self, iteration: u64, entity: u64, step: u64) -> RngStream {
        RngStream::new(self.seed, StreamKey::new(self.chain, iteration, entity)).substream(step)
    }

    /// Step 1: ω_ij from a unit-variance normal centered at the linear
    /// predictor, truncated to the side dictated by y_ij. Conditionally
    /// independent across rows, so rows are updated in parallel under
    /// per-row streams.
    pub fn update_omega(&mut self, state: &mut GaussianState, iteration: u64) {
        self.xb = self.refresh_xb(&state.beta);
        let data = self.data;
        let mu = state.mu;
        let tau = state.tau;
        let theta = &state.theta;
        let xb = &self.xb;
        let seed = self.seed;
        let chain = self.chain;
        state
            .omega
            .par_iter_mut()
            .enumerate()
            .for_each(|(r, w)| {
                let mean = mu + tau * theta[data.person_of_row(r)] + xb[r];
                let side = TruncationSide::from_outcome(data.outcome(r));
                let mut rng =
                    RngStream::new(seed, StreamKey::new(chain, iteration, r as u64)).substream(STEP_OMEGA);
                *w = sample_truncated_normal(mean, 1.0, side, &mut rng)
                    .expect("unit sd is always valid");
            });
    }

    /// Conditional for τ marginal of μ. Returns (α_τ, s_τ).
    pub fn tau_conditional(&self, state: &GaussianState) -> Result<(f64, f64)> {
        let data = self.data;
        let denom = 1.0 / self.hyper.mu_prior_var + data.n_obs() as f64;
        let mut sum_n_theta = 0.0;
        let mut sum_n_theta2 = 0.0;
        let mut sum_theta_r = 0.0;
        let mut sum_r = 0.0;
        for i in 0..data.n_persons() {
            let th = state.theta[i];
            let range = data.rows_of_person(i);
            let n_i = range.len() as f64;
            sum_n_theta += n_i * th;
            sum_n_theta2 += n_i * th * th;
            for r in range {
                let resid = state.omega[r] - self.xb[r];
                sum_theta_r += th * resid;
                sum_r += resid;
            }
        }
        let s = 1.0 / (sum_n_theta2 - sum_n_theta * sum_n_theta / denom + 1.0);
        if !(s > 0.0) {
            return Err(Error::sampler(format!("tau conditional variance {s} <= 0")));
        }
        let alpha = s * (sum_theta_r - sum_n_theta * sum_r / denom);
        Ok((alpha, s))
    }

    /// Step 2: τ from N₁(α_τ, s_τ).
    pub fn update_tau(&self, state: &mut GaussianState, iteration: u64) -> Result<()> {
        let (alpha, s) = self.tau_conditional(state)?;
        let mut rng = self.stream(iteration, 0, STEP_TAU);
        state.tau = sample_truncated_normal(alpha, s.sqrt(), TruncationSide::Positive, &mut rng)?;
        Ok(())
    }

    /// Conditional for μ given everything: (α_μ, s_μ).
    pub fn mu_conditional(&self, state: &GaussianState) -> (f64, f64) {
        let data = self.data;
        let s = 1.0 / (1.0 / self.hyper.mu_prior_var + data.n_obs() as f64);
        let mut acc = 0.0;
        for r in 0..data.n_obs() {
            acc += state.omega[r] - state.tau * state.theta[data.person_of_row(r)] - self.xb[r];
        }
        (s * acc, s)
    }

    /// Step 3: μ.
    pub fn update_mu(&self, state: &mut GaussianState, iteration: u64) {
        let (alpha, s) = self.mu_conditional(state);
        let mut rng = self.stream(iteration, 0, STEP_MU);
        state.mu = alpha + s.sqrt() * sample_std_normal(&mut rng);
    }

    /// Conditional for one θ_i: (α_i, s_i).
    pub fn theta_conditional(&self, state: &GaussianState, person: usize) -> (f64, f64) {
        let range = self.data.rows_of_person(person);
        let n_i = range.len() as f64;
        let s = 1.0 / (state.tau * state.tau * n_i + 1.0);
        let mut acc = 0.0;
        for r in range {
            acc += state.tau * (state.omega[r] - state.mu - self.xb[r]);
        }
        (s * acc, s)
    }

    /// Step 4: all θ_i, independent across persons, in parallel.
    pub fn update_theta(&self, state: &mut GaussianState, iteration: u64) {
        let data = self.data;
        let mu = state.mu;
        let tau = state.tau;
        let omega = &state.omega;
        let xb = &self.xb;
        let seed = self.seed;
        let chain = self.chain;
        state
            .theta
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, th)| {
                let range = data.rows_of_person(i);
                let n_i = range.len() as f64;
                let s = 1.0 / (tau * tau * n_i + 1.0);
                let mut acc = 0.0;
                for r in range {
                    acc += tau * (omega[r] - mu - xb[r]);
                }
                let mut rng =
                    RngStream::new(seed, StreamKey::new(chain, iteration, i as u64)).substream(STEP_THETA);
                *th = s * acc + s.sqrt() * sample_std_normal(&mut rng);
            });
    }

    /// Conditional mean of β (the covariance is the cached factorization).
    pub fn beta_conditional_mean(&self, state: &GaussianState) -> Vec<f64> {
        let data = self.data;
        let resid: Vec<f64> = (0..data.n_obs())
            .map(|r| state.omega[r] - state.mu - state.tau * state.theta[data.person_of_row(r)])
            .collect();
        self.cache.chol.solve(&xt_times(data, &resid))
    }

    /// Step 5: β from N(α_β, (X'X + I/9)⁻¹).
    pub fn update_beta(&mut self, state: &mut GaussianState, iteration: u64) {
        let alpha = self.beta_conditional_mean(state);
        let p = state.beta.len();
        let mut rng = self.stream(iteration, 0, STEP_BETA);
        let z: Vec<f64> = (0..p).map(|_| sample_std_normal(&mut rng)).collect();
        let noise = self.cache.chol.solve_lt(&z);
        for j in 0..p {
            state.beta[j] = alpha[j] + noise[j];
        }
        self.xb = self.refresh_xb(&state.beta);
    }

    /// One full scan in the paper's order.
    pub fn sweep(&mut self, state: &mut GaussianState, iteration: u64) -> Result<()> {
        self.update_omega(state, iteration);
        self.update_tau(state, iteration)?;
        self.update_mu(state, iteration);
        self.update_theta(state, iteration);
        self.update_beta(state, iteration);
        Ok(())
    }

    pub fn beta_covariance_factor(&self) -> &crate::linalg::Cholesky {
        &self.cache.chol
    }
}

fn draw_omega(sampler: &GaussianSampler, state: &mut GaussianState, iteration: u64) {
    let xb = sampler.refresh_xb(&state.beta);
    let data = sampler.data;
    let mu = state.mu;
    let tau = state.tau;
    let theta = &state.theta;
    let seed = sampler.seed;
    let chain = sampler.chain;
    state.omega.par_iter_mut().enumerate().for_each(|(r, w)| {
        let mean = mu + tau * theta[data.person_of_row(r)] + xb[r];
        let side = TruncationSide::from_outcome(data.outcome(r));
        let mut rng =
            RngStream::new(seed, StreamKey::new(chain, iteration, r as u64)).substream(STEP_OMEGA);
        *w = sample_truncated_normal(mean, 1.0, side, &mut rng).expect("unit sd");
    });
}

/// Run the full sampler: steps 1–5 per iteration, storing post-burn-in
/// draws; multiple chains run in parallel and are concatenated chain-major.
pub fn run_chain(
    data: &PanelDataset,
    hyper: GaussianHyperParams,
    config: &ChainConfig,
) -> Result<ChainDraws> {
    run_chain_with_progress(data, hyper, config, |_, _| {})
}

pub fn run_chain_with_progress(
    data: &PanelDataset,
    hyper: GaussianHyperParams,
    config: &ChainConfig,
    progress: impl Fn(usize, usize) + Sync,
) -> Result<ChainDraws> {
    config.validate()?;
    if data.n_obs() == 0 {
        return Err(Error::data("run_chain: empty dataset"));
    }
    let chain_ids: Vec<u64> = (0..config.chains as u64).collect();
    let per_chain: Vec<Result<ChainOutput>> = chain_ids
        .par_iter()
        .map(|&chain| run_single_chain(data, hyper, config, chain, &progress))
        .collect();

    let mut chain_of_draw = Vec::new();
    let mut iteration_of_draw = Vec::new();
    let mut globals = Vec::new();
    let mut person_effects = config.store_person_effects.then(Vec::new);
    for (chain, out) in per_chain.into_iter().enumerate() {
        let out = out.map_err(|e| {
            Error::sampler(format!("chain {chain}: {e}"))
        })?;
        for (it, g) in out.iterations.into_iter().zip(out.globals) {
            chain_of_draw.push(chain as u32);
            iteration_of_draw.push(it);
            globals.push(g);
        }
        if let Some(effects) = person_effects.as_mut() {
            effects.extend(out.person_effects);
        }
    }
    Ok(ChainDraws {
        model: ModelTag::Gaussian,
        p: data.n_covariates(),
        k: 0,
        chains: config.chains,
        chain_of_draw,
        iteration_of_draw,
        globals,
        person_effects,
        occupancy: None,
        covariate_names: data.covariate_names().to_vec(),
        config: config.clone(),
    })
}

struct ChainOutput {
    iterations: Vec<u32>,
    globals: Vec<GlobalDraw>,
    person_effects: Vec<Vec<f64>>,
}

fn run_single_chain(
    data: &PanelDataset,
    hyper: GaussianHyperParams,
    config: &ChainConfig,
    chain: u64,
    progress: &(impl Fn(usize, usize) + Sync),
) -> Result<ChainOutput> {
    let mut sampler = GaussianSampler::new(data, hyper, config.seed, chain)?;
    // Iteration index 0 is reserved for initialization draws.
    let mut state = sampler.initial_state(0);
    let mut out = ChainOutput {
        iterations: Vec::with_capacity(config.draws_per_chain()),
        globals: Vec::with_capacity(config.draws_per_chain()),
        person_effects: Vec::new(),
    };
    for iter in 0..config.iterations {
        sampler
            .sweep(&mut state, iter as u64 + 1)
            .map_err(|e| Error::sampler(format!("iteration {iter}: {e}")))?;
        debug_assert!(state.tau > 0.0);
        if iter >= config.burn_in && (iter - config.burn_in) % config.thin == 0 {
            out.iterations.push(iter as u32);
            out.globals.push(GlobalDraw::Gaussian {
                mu: state.mu,
                tau: state.tau,
                beta: state.beta.clone(),
            });
            if config.store_person_effects {
                out.person_effects.push(state.theta.clone());
            }
        }
        if (iter + 1) % 1000 == 0 {
            progress(iter + 1, config.iterations);
        }
    }
    Ok(out)
}
