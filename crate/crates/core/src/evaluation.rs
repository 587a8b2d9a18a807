//! Reconstruction scores, interval coverage and simulation-based calibration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::gibbs::{run_chain, DrawStore};
use crate::model::{draw_prior, Dataset, ModelConfig};
use crate::pseudoproxy::{simulate_latents, simulate_observations};
use crate::{Error, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    Ok(())
}

pub fn rmse(recon: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(recon, truth)?;
    let sse: f64 = recon.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sse / recon.len() as f64).sqrt())
}

/// Pearson correlation; `None` when either series is constant or the
/// lengths disagree.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let constant = |xs: &[f64]| xs.iter().all(|x| *x == xs[0]);
    if constant(a) || constant(b) {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0) || !(sbb > 0.0) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Constant series at the calibration mean, `len` long.
pub fn insample_mean_benchmark(calibration: &[f64], len: usize) -> Result<Vec<f64>> {
    if calibration.is_empty() {
        return Err(Error::InvalidArgument("calibration window is empty".into()));
    }
    let m = calibration.iter().sum::<f64>() / calibration.len() as f64;
    Ok(vec![m; len])
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central `level` interval of the pooled draws at one year.
pub fn central_interval(mut draws: Vec<f64>, level: f64) -> (f64, f64) {
    draws.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    (quantile_sorted(&draws, tail), quantile_sorted(&draws, 1.0 - tail))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// `(year index, covered)` per evaluated year.
    pub covered: Vec<(usize, bool)>,
    pub rate: f64,
}

/// Fraction of the years in `window` (indices) whose central `level`
/// interval of `ŷ_t` contains `truth_nh[t]`.
pub fn interval_coverage(store: &DrawStore, truth_nh: &[f64], window: &[usize], level: f64) -> Result<Coverage> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument("level must lie in (0, 1)".into()));
    }
    if store.is_empty() {
        return Err(Error::InvalidArgument("no draws".into()));
    }
    if window.is_empty() {
        return Err(Error::InvalidArgument("evaluation window is empty".into()));
    }
    if truth_nh.len() != store.years.len() || window.iter().any(|&t| t >= truth_nh.len()) {
        return Err(Error::Shape("truth does not match the draw years".into()));
    }
    let covered: Vec<(usize, bool)> = window
        .iter()
        .map(|&t| {
            let (lo, hi) = central_interval(store.nh_at(t), level);
            (t, lo <= truth_nh[t] && truth_nh[t] <= hi)
        })
        .collect();
    let rate = covered.iter().filter(|c| c.1).count() as f64 / covered.len() as f64;
    Ok(Coverage { covered, rate })
}

/// Two-sided binomial band `[lo, hi]` for an empirical rate with `n` trials,
/// from the exact binomial quantiles.
pub fn binomial_band(n: usize, p: f64, confidence: f64) -> (f64, f64) {
    use statrs::distribution::{Binomial, DiscreteCDF};
    let b = Binomial::new(p, n as u64).expect("valid binomial");
    let tail = 0.5 * (1.0 - confidence);
    (b.inverse_cdf(tail) as f64 / n as f64, b.inverse_cdf(1.0 - tail) as f64 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbcSettings {
    pub n_replicates: usize,
    /// Posterior draws per replicate; ranks take values `0..=n_posterior`.
    pub n_posterior: usize,
    pub thin: usize,
    pub burn_in: usize,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for SbcSettings {
    fn default() -> Self {
        SbcSettings { n_replicates: 200, n_posterior: 99, thin: 5, burn_in: 200, n_bins: 10, seed: 11 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankUniformity {
    pub name: String,
    pub ranks: Vec<usize>,
    pub histogram: Vec<usize>,
    pub chi2: f64,
    pub p_value: f64,
}

/// χ² test that `ranks` in `0..=max_rank` are uniform, using `n_bins` bins.
pub fn rank_uniformity(name: &str, ranks: Vec<usize>, max_rank: usize, n_bins: usize) -> Result<RankUniformity> {
    if ranks.is_empty() || n_bins < 2 {
        return Err(Error::InvalidArgument("need ranks and at least two bins".into()));
    }
    let levels = max_rank + 1;
    let mut histogram = vec![0usize; n_bins];
    for &r in &ranks {
        if r > max_rank {
            return Err(Error::InvalidArgument(format!("rank {r} exceeds {max_rank}")));
        }
        histogram[r * n_bins / levels] += 1;
    }
    let n = ranks.len() as f64;
    let chi2 = (0..n_bins)
        .map(|b| {
            // Rank levels falling into bin b.
            let lo = (b * levels).div_ceil(n_bins);
            let hi = ((b + 1) * levels).div_ceil(n_bins);
            let expected = n * (hi - lo) as f64 / levels as f64;
            (histogram[b] as f64 - expected).powi(2) / expected
        })
        .sum::<f64>();
    let dist = ChiSquared::new((n_bins - 1) as f64).expect("positive dof");
    Ok(RankUniformity {
        name: name.to_string(),
        ranks,
        histogram,
        chi2,
        p_value: dist.sf(chi2),
    })
}

/// Simulation-based calibration of the sampler. Each replicate draws a truth
/// from the prior, simulates data with the masks of `template`, runs one
/// chain and ranks the truth among the kept draws. Monitored scalars: γ₁, μ,
/// ω_S, Σ₁₁ and `ŷ` at three years.
pub fn sbc_check(cfg: &ModelConfig, template: &Dataset, settings: &SbcSettings) -> Result<Vec<RankUniformity>> {
    if settings.n_replicates == 0 {
        return Err(Error::InvalidArgument("n_replicates must be positive".into()));
    }
    if settings.n_posterior == 0 || settings.thin == 0 {
        return Err(Error::InvalidArgument("n_posterior and thin must be positive".into()));
    }
    let n = template.n_years();
    let years = [0, n / 2, n - 1];
    let p = template.panel.n_proxies();
    let weights = cfg.grid.weights();
    let mut run_cfg = cfg.clone();
    run_cfg.sampler.n_chains = 1;
    run_cfg.sampler.burn_in = settings.burn_in;
    run_cfg.sampler.thin = settings.thin;
    run_cfg.sampler.n_iter = settings.burn_in + settings.n_posterior * settings.thin;

    let monitor = |params: &crate::Params, nh: &[f64]| -> Vec<f64> {
        let mut v = vec![params.gamma[0], params.mu, params.omega[0], params.sigma[(0, 0)]];
        v.extend(years.iter().map(|&t| nh[t]));
        v
    };
    let ranks: Vec<Vec<usize>> = (0..settings.n_replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<usize>> {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(r as u64);
            let truth = draw_prior(&run_cfg, p, &mut rng)?;
            let latents = simulate_latents(&truth, &template.forcings, &mut rng)?;
            let data = simulate_observations(&truth, &latents, template, run_cfg.structure.proxy_ar_enabled, &mut rng);
            let truth_vals = monitor(&truth, &latents.nh_series(&weights));
            let mut cfg_r = run_cfg.clone();
            cfg_r.sampler.seed = settings.seed.wrapping_add(1 + r as u64);
            let chain = run_chain(&cfg_r, &data, 0)?;
            let draws: Vec<Vec<f64>> = chain.draws.iter().map(|d| monitor(&d.params, &d.nh)).collect();
            Ok((0..truth_vals.len())
                .map(|k| draws.iter().filter(|d| d[k] < truth_vals[k]).count())
                .collect())
        })
        .collect::<Result<_>>()?;
    let names = ["gamma[0]", "mu", "omega_solar", "Sigma[0,0]"]
        .into_iter()
        .map(String::from)
        .chain(years.iter().map(|t| format!("nh[{t}]")));
    names
        .enumerate()
        .map(|(k, name)| {
            rank_uniformity(&name, ranks.iter().map(|r| r[k]).collect(), settings.n_posterior, settings.n_bins)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn correlation_examples() {
        let t = [0.1, -0.4, 0.9, 0.3];
        let a: Vec<f64> = t.iter().map(|x| 2.0 * x + 1.0).collect();
        let b: Vec<f64> = t.iter().map(|x| -x).collect();
        assert!((correlation(&a, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!((correlation(&b, &t).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(correlation(&[0.2; 4], &t), None);
    }

    #[test]
    fn benchmark_examples() {
        assert_eq!(insample_mean_benchmark(&[0.1, 0.5, 0.3], 4).unwrap(), vec![0.3; 4]);
        assert!(insample_mean_benchmark(&[], 4).is_err());
        let truth = [0.0, 1.0, 2.0, 3.0];
        let bench = insample_mean_benchmark(&[2.0], 4).unwrap();
        // Population variance 1.25, bias 0.5.
        assert!((rmse(&bench, &truth).unwrap() - (1.25f64 + 0.25).sqrt()).abs() < 1e-15);
        assert_eq!(correlation(&bench, &truth), None);
    }

    #[test]
    fn rank_zero_everywhere_fails_uniformity() {
        let r = rank_uniformity("x", vec![0; 200], 99, 10).unwrap();
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn uniform_ranks_pass() {
        let ranks: Vec<usize> = (0..1000).map(|i| i % 100).collect();
        let r = rank_uniformity("x", ranks, 99, 10).unwrap();
        assert!(r.chi2 < 1e-12);
    }

    #[test]
    fn zero_replicates_error() {
        let cfg = ModelConfig::new(crate::GridSpec::uniform(1), crate::model::Calibration {
            start_year: 0,
            end_year: 0,
            instrumental_sd: 0.1,
            allow_instrumental_outside: false,
        });
        let data = Dataset {
            panel: crate::ProxyPanel::empty(1, 1),
            forcings: crate::ForcingSeries::zeros(vec![0]),
            instrumental: crate::InstrumentalSeries::none(1, 1, 0.1),
        };
        let s = SbcSettings { n_replicates: 0, ..SbcSettings::default() };
        assert!(sbc_check(&cfg, &data, &s).is_err());
    }

    #[test]
    fn binomial_band_brackets_level() {
        let (lo, hi) = binomial_band(1000, 0.9, 0.99);
        assert!(lo < 0.9 && hi > 0.9 && hi - lo < 0.06);
    }
}
