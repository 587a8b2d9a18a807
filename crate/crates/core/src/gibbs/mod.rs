//! Gibbs sampler over latents and parameters, chain driver and diagnostics.
//!
//! One iteration is a fixed systematic scan: latents (FFBS), γ, (μ_γ, τ_γ²),
//! proxy noise, proxy AR, forcing coefficients, (ρ_w, σ_w²), A, Σ.

pub mod diagnostics;
pub mod geweke;
pub mod updates;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{
    serde_rows, validate_dataset, Dataset, LatentStates, ModelConfig, Params,
};
use crate::{Error, Result};

/// Per-chain sampler bookkeeping: acceptance counts after burn-in and the
/// frozen proposal scales.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub proxy_ar_scale: Vec<f64>,
    pub proxy_ar_accepted: Vec<u64>,
    pub nh_ar_scale: f64,
    pub nh_ar_accepted: u64,
    /// Post-burn-in iterations, i.e. MH proposals per AR coefficient.
    pub post_burn_iterations: u64,
    pub a_correction_accepted: u64,
    pub a_correction_proposed: u64,
    pub sigma_correction_accepted: u64,
    pub sigma_correction_proposed: u64,
    /// Times the full-A stationarity rejection loop hit its cap.
    pub a_reject_cap_hits: u64,
}

#[derive(Clone, Debug)]
pub struct ChainState {
    pub params: Params,
    pub latents: LatentStates,
    pub iteration: usize,
    pub stream: u64,
    pub stats: ChainStats,
    /// Robbins–Monro step counter used during burn-in.
    adapt_step: u64,
}

impl ChainState {
    /// Deterministic start: fixed values, else central prior values, and zero
    /// latents (or fixed latents).
    pub fn initial(cfg: &ModelConfig, data: &Dataset, stream: u64) -> Result<Self> {
        let params = cfg.initial_params(data.panel.n_proxies())?;
        let latents = match &cfg.fixed.latents {
            Some(fixed) => {
                let v = serde_rows::from_rows(&fixed.v, Some(cfg.n_cells())).map_err(Error::Shape)?;
                LatentStates::from_parts(v, fixed.w.clone(), &params, &data.forcings)
            }
            None => LatentStates::zeros(data.n_years(), cfg.n_cells(), &params, &data.forcings),
        };
        Ok(Self::from_parts(params, latents, cfg, stream))
    }

    pub fn from_parts(params: Params, latents: LatentStates, cfg: &ModelConfig, stream: u64) -> Self {
        let p = params.n_proxies();
        ChainState {
            params,
            latents,
            iteration: 0,
            stream,
            stats: ChainStats {
                proxy_ar_scale: vec![cfg.sampler.mh_scale; p],
                proxy_ar_accepted: vec![0; p],
                nh_ar_scale: cfg.sampler.mh_scale,
                ..ChainStats::default()
            },
            adapt_step: 0,
        }
    }

    pub(crate) fn in_burn_in(&self, cfg: &ModelConfig) -> bool {
        self.iteration <= cfg.sampler.burn_in
    }
}

/// One stored draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub params: Params,
    pub latents: LatentStates,
    /// Derived hemispheric series `weights · T[t]`.
    pub nh: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub chain: usize,
    pub draws: Vec<Draw>,
    pub stats: ChainStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawStore {
    pub years: Vec<i32>,
    pub chains: Vec<ChainDraws>,
}

impl DrawStore {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_draws() == 0
    }

    pub fn draws(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    /// Pooled draws of `ŷ[t]`.
    pub fn nh_at(&self, t: usize) -> Vec<f64> {
        self.draws().map(|d| d.nh[t]).collect()
    }

    /// Posterior mean of `ŷ` per year.
    pub fn nh_mean(&self) -> Vec<f64> {
        let n = self.n_draws() as f64;
        let mut out = vec![0.0; self.years.len()];
        for d in self.draws() {
            for (o, v) in out.iter_mut().zip(&d.nh) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Expected number of kept draws.
pub fn expected_draws(n_iter: usize, burn_in: usize, thin: usize) -> usize {
    n_iter.saturating_sub(burn_in) / thin.max(1)
}

fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn check_runnable(cfg: &ModelConfig, data: &Dataset) -> Result<()> {
    let mut report = validate_dataset(cfg, data);
    // An empty run (n_iter == burn_in) is allowed here and yields no draws.
    if cfg.sampler.n_iter == cfg.sampler.burn_in {
        report.violations.retain(|v| v.field != "sampler.n_iter");
    }
    if cfg.fixed.latents.is_some() && cfg.fixed.forcing_coeffs.is_none() {
        report.violations.push(crate::model::Violation {
            field: "fixed.latents".into(),
            message: "fixed latents require fixed forcing_coeffs".into(),
        });
    }
    report.into_result()
}

/// One full scan of the sampler.
pub fn gibbs_step<R: rand::Rng + ?Sized>(
    state: &mut ChainState,
    cfg: &ModelConfig,
    data: &Dataset,
    rng: &mut R,
) -> Result<()> {
    state.iteration += 1;
    let it = state.iteration;
    let adapting = cfg.sampler.adapt && state.in_burn_in(cfg);
    if adapting {
        state.adapt_step += 1;
    }
    let step = state.adapt_step;
    updates::update_latents(state, cfg, data, rng).map_err(|e| e.in_update("latents", it))?;
    updates::update_gamma(state, cfg, data, rng).map_err(|e| e.in_update("gamma", it))?;
    updates::update_gamma_hyper(state, cfg, rng).map_err(|e| e.in_update("gamma_hyper", it))?;
    updates::update_proxy_noise(state, cfg, data, rng).map_err(|e| e.in_update("proxy_noise", it))?;
    if cfg.structure.proxy_ar_enabled {
        updates::update_proxy_ar(state, cfg, data, rng, adapting.then_some(step))
            .map_err(|e| e.in_update("proxy_ar", it))?;
    }
    updates::update_forcing_coeffs(state, cfg, data, rng).map_err(|e| e.in_update("forcing_coeffs", it))?;
    updates::update_nh_ar(state, cfg, rng, adapting.then_some(step)).map_err(|e| e.in_update("nh_ar", it))?;
    updates::update_a(state, cfg, rng).map_err(|e| e.in_update("A", it))?;
    updates::update_sigma(state, cfg, rng).map_err(|e| e.in_update("Sigma", it))?;
    if !state.in_burn_in(cfg) {
        state.stats.post_burn_iterations += 1;
    }
    Ok(())
}

/// Run one chain, calling `observe` after every iteration.
pub fn run_chain_observed(
    cfg: &ModelConfig,
    data: &Dataset,
    chain: usize,
    mut observe: impl FnMut(&ChainState) -> Result<()>,
) -> Result<ChainDraws> {
    check_runnable(cfg, data)?;
    let s = &cfg.sampler;
    if s.n_iter < s.burn_in {
        return Err(Error::InvalidArgument("n_iter is smaller than burn_in".into()));
    }
    let weights = cfg.grid.weights();
    let mut rng = chain_rng(s.seed, chain as u64);
    let mut state = ChainState::initial(cfg, data, chain as u64)?;
    let mut draws = Vec::with_capacity(expected_draws(s.n_iter, s.burn_in, s.thin));
    for _ in 0..s.n_iter {
        gibbs_step(&mut state, cfg, data, &mut rng)?;
        observe(&state)?;
        let i = state.iteration;
        if i > s.burn_in && (i - s.burn_in) % s.thin == 0 {
            draws.push(Draw {
                iteration: i,
                params: state.params.clone(),
                nh: state.latents.nh_series(&weights),
                latents: state.latents.clone(),
            });
        }
    }
    log::debug!("chain {chain}: {} draws kept", draws.len());
    Ok(ChainDraws {
        chain,
        draws,
        stats: state.stats,
    })
}

/// Run one chain with its own RNG stream derived from `(cfg.sampler.seed, chain)`.
pub fn run_chain(cfg: &ModelConfig, data: &Dataset, chain: usize) -> Result<ChainDraws> {
    run_chain_observed(cfg, data, chain, |_| Ok(()))
}

/// Run `cfg.sampler.n_chains` chains in parallel. Results do not depend on
/// scheduling: each chain owns its stream and the output is ordered by chain.
pub fn run_chains(cfg: &ModelConfig, data: &Dataset) -> Result<DrawStore> {
    check_runnable(cfg, data)?;
    let chains = (0..cfg.sampler.n_chains)
        .into_par_iter()
        .map(|c| run_chain(cfg, data, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(DrawStore {
        years: data.forcings.years.clone(),
        chains,
    })
}
