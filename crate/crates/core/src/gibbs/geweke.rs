//! Joint-distribution test of the sampler: marginal-conditional draws from
//! the prior against successive-conditional draws that alternate data
//! simulation with one sampler scan.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gibbs_step, ChainState};
use crate::model::{draw_prior, Dataset, LatentStates, ModelConfig, Params};
use crate::pseudoproxy::{simulate_latents, simulate_observations};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GewekeSettings {
    pub n_draws: usize,
    /// Scans between recorded successive-conditional draws.
    pub thin: usize,
    pub burn_in: usize,
    /// Batches for the successive-conditional standard error.
    pub n_batches: usize,
    pub seed: u64,
}

impl Default for GewekeSettings {
    fn default() -> Self {
        GewekeSettings { n_draws: 10_000, thin: 5, burn_in: 500, n_batches: 50, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GewekeStatistic {
    pub name: String,
    pub marginal_mean: f64,
    pub successive_mean: f64,
    pub z: f64,
}

/// Test functions: γ₁, μ, Σ₁₁, A₁₁, `y` at three times, and their squares.
pub fn test_functions(params: &Params, latents: &LatentStates) -> Vec<(String, f64)> {
    let n = latents.n_years();
    let times = [0, n / 2, n - 1];
    let mut base = vec![
        ("gamma[0]".to_string(), params.gamma.first().copied().unwrap_or(0.0)),
        ("mu".to_string(), params.mu),
        ("Sigma[0,0]".to_string(), params.sigma[(0, 0)]),
        ("A[0,0]".to_string(), params.a[(0, 0)]),
    ];
    base.extend(times.iter().map(|&t| (format!("y[{t}]"), latents.y[t])));
    let squares: Vec<(String, f64)> = base.iter().map(|(n, v)| (format!("{n}^2"), v * v)).collect();
    base.extend(squares);
    base
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn batch_means_var_of_mean(xs: &[f64], n_batches: usize) -> f64 {
    let b = xs.len() / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|k| xs[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    mean_var(&means).1 / n_batches as f64
}

/// Run both simulators. `template` fixes the forcings and observation masks.
pub fn geweke_test(cfg: &ModelConfig, template: &Dataset, settings: &GewekeSettings) -> Result<Vec<GewekeStatistic>> {
    if settings.n_draws < settings.n_batches.max(2) || settings.n_batches < 2 {
        return Err(Error::InvalidArgument("need at least two batches and one draw per batch".into()));
    }
    let p = template.panel.n_proxies();
    let mut cfg = cfg.clone();
    cfg.sampler.adapt = false;
    cfg.sampler.burn_in = 0;
    let ar = cfg.structure.proxy_ar_enabled;

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(0);
    let mut marginal: Vec<Vec<f64>> = Vec::with_capacity(settings.n_draws);
    for _ in 0..settings.n_draws {
        let params = draw_prior(&cfg, p, &mut rng)?;
        let latents = simulate_latents(&params, &template.forcings, &mut rng)?;
        marginal.push(test_functions(&params, &latents).into_iter().map(|(_, v)| v).collect());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(1);
    let params = draw_prior(&cfg, p, &mut rng)?;
    let latents = simulate_latents(&params, &template.forcings, &mut rng)?;
    let mut state = ChainState::from_parts(params, latents, &cfg, 1);
    let mut successive: Vec<Vec<f64>> = Vec::with_capacity(settings.n_draws);
    let mut names = Vec::new();
    for k in 0..settings.burn_in + settings.n_draws * settings.thin.max(1) {
        let data = simulate_observations(&state.params, &state.latents, template, ar, &mut rng);
        gibbs_step(&mut state, &cfg, &data, &mut rng)?;
        if k >= settings.burn_in && (k - settings.burn_in + 1) % settings.thin.max(1) == 0 {
            let f = test_functions(&state.params, &state.latents);
            if names.is_empty() {
                names = f.iter().map(|(n, _)| n.clone()).collect();
            }
            successive.push(f.into_iter().map(|(_, v)| v).collect());
        }
    }

    Ok(names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let mc: Vec<f64> = marginal.iter().map(|r| r[j]).collect();
            let sc: Vec<f64> = successive.iter().map(|r| r[j]).collect();
            let (m1, v1) = mean_var(&mc);
            let m2 = mean_var(&sc).0;
            let se2 = batch_means_var_of_mean(&sc, settings.n_batches);
            let denom = (v1 / mc.len() as f64 + se2).sqrt();
            let z = if denom > 0.0 { (m1 - m2) / denom } else { 0.0 };
            GewekeStatistic { name, marginal_mean: m1, successive_mean: m2, z }
        })
        .collect())
}

/// The small instance used for joint-distribution and calibration checks:
/// two cells, three proxies with AR(1) noise, eight years, instrumental data
/// on the last three. Priors are tight enough for every test function to
/// have finite variance.
pub fn small_instance() -> (ModelConfig, Dataset) {
    use crate::model::{
        Calibration, ForcingPrior, ForcingSeries, GridSpec, InstrumentalSeries, InvGammaPrior, InvWishartPrior,
        NormalPrior, ProxyPanel, ScaleSpec,
    };
    use nalgebra::DMatrix;

    let n = 8;
    let years: Vec<i32> = (2000..2000 + n as i32).collect();
    let mut cfg = ModelConfig::new(
        GridSpec { area_weights: vec![0.6, 0.4] },
        Calibration { start_year: 2005, end_year: 2007, instrumental_sd: 0.5, allow_instrumental_outside: false },
    );
    cfg.structure.proxy_ar_enabled = true;
    let pr = &mut cfg.priors;
    pr.gamma_mean = NormalPrior { mean: 1.0, var: 0.25 };
    pr.gamma_var = InvGammaPrior { shape: 6.0, scale: 0.5 };
    pr.proxy_noise_var = InvGammaPrior { shape: 6.0, scale: 2.5 };
    pr.proxy_ar_bound = 0.9;
    pr.nh_ar_bound = 0.9;
    pr.forcing_coeffs = ForcingPrior { mean: [0.0; 4], var: [0.5; 4] };
    pr.nh_var = InvGammaPrior { shape: 6.0, scale: 1.0 };
    pr.transition = NormalPrior { mean: 0.3, var: 0.25 };
    pr.innovation = InvWishartPrior { dof: 10.0, scale: ScaleSpec::Identity(3.5) };

    let forcings = ForcingSeries {
        solar: (0..n).map(|t| (t as f64 * 0.9).sin()).collect(),
        volcanic: (0..n).map(|t| if t % 3 == 1 { -1.0 } else { 0.2 }).collect(),
        co2: (0..n).map(|t| -0.5 + t as f64 / n as f64).collect(),
        years,
    };
    let mask = DMatrix::from_fn(n, 3, |t, i| match i {
        0 => true,
        1 => t >= 2,
        _ => t != 4 && t >= 1,
    });
    let panel = ProxyPanel {
        ids: vec!["a".into(), "b".into(), "c".into()],
        values: DMatrix::zeros(n, 3),
        mask,
        footprints: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]),
    };
    let mut instrumental = InstrumentalSeries::none(n, 2, 0.5);
    for t in 5..n {
        instrumental.mask[(t, 0)] = true;
        instrumental.mask[(t, 1)] = t != 6;
    }
    (cfg, Dataset { panel, forcings, instrumental })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_run_has_no_gross_discrepancy() {
        let (cfg, data) = small_instance();
        let settings = GewekeSettings { n_draws: 3000, thin: 1, burn_in: 100, n_batches: 30, seed: 3 };
        let stats = geweke_test(&cfg, &data, &settings).unwrap();
        assert_eq!(stats.len(), 14);
        for s in &stats {
            assert!(s.z.abs() < 5.0, "{s:?}");
        }
    }
}
