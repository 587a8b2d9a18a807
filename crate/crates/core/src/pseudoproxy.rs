//! Synthetic truths and proxy networks for pseudo-proxy experiments.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::linalg;
use crate::model::{
    nh_mean_step, observed_runs, serde_rows, Calibration, Dataset, ForcingSeries, GridSpec,
    InstrumentalSeries, LatentStates, Params, ProxyPanel,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Footprint {
    /// Selector of one grid cell.
    Cell { cell: usize },
    /// Equal-weight average over a set of cells.
    LocalAverage { cells: Vec<usize> },
}

impl Footprint {
    pub fn weights(&self, n_cells: usize) -> Result<Vec<f64>> {
        let mut h = vec![0.0; n_cells];
        let cells: &[usize] = match self {
            Footprint::Cell { cell } => std::slice::from_ref(cell),
            Footprint::LocalAverage { cells } => cells,
        };
        if cells.is_empty() {
            return Err(Error::InvalidArgument("footprint has no cells".into()));
        }
        for &c in cells {
            if c >= n_cells {
                return Err(Error::InvalidArgument(format!("footprint cell {c} outside a grid of {n_cells}")));
            }
            h[c] += 1.0 / cells.len() as f64;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxySpec {
    pub footprint: Footprint,
    /// Signal-to-noise variance ratio; `null` for a noiseless proxy.
    pub snr: Option<f64>,
    /// First observed year (staircase availability).
    pub start_year: i32,
}

/// True parameter values used to simulate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub proxy_ar: Option<Vec<f64>>,
    pub mu: f64,
    pub omega: [f64; 3],
    pub nh_ar: f64,
    pub nh_var: f64,
    pub a: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSource {
    /// Independent stationary AR(1) series (solar, volcanic, CO₂).
    Synthetic { persistence: [f64; 3], sd: [f64; 3] },
    /// A `year,solar,volcanic,co2` CSV covering the design's years.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoproxyDesign {
    pub grid: GridSpec,
    pub first_year: i32,
    pub n_years: usize,
    pub calibration: Calibration,
    pub proxies: Vec<ProxySpec>,
    pub truth: TruthSpec,
    pub forcings: ForcingSource,
}

impl PseudoproxyDesign {
    pub fn years(&self) -> Vec<i32> {
        (self.first_year..self.first_year + self.n_years as i32).collect()
    }

    pub fn footprints(&self) -> Result<DMatrix<f64>> {
        let g = self.grid.n_cells();
        let mut h = DMatrix::zeros(self.proxies.len(), g);
        for (i, p) in self.proxies.iter().enumerate() {
            let w = p.footprint.weights(g)?;
            h.row_mut(i).copy_from_slice(&w);
        }
        Ok(h)
    }

    /// True parameters; proxy noise variances are filled in by [`generate_proxies`].
    pub fn true_params(&self) -> Result<Params> {
        let g = self.grid.n_cells();
        let p = self.proxies.len();
        let t = &self.truth;
        if t.gamma.len() != p {
            return Err(Error::Shape(format!("truth has {} gamma values for {p} proxies", t.gamma.len())));
        }
        let proxy_ar = t.proxy_ar.clone().unwrap_or_else(|| vec![0.0; p]);
        if proxy_ar.len() != p {
            return Err(Error::Shape("truth proxy_ar length differs from the proxy count".into()));
        }
        let a = serde_rows::from_rows(&t.a, Some(g)).map_err(Error::Shape)?;
        let sigma = serde_rows::from_rows(&t.sigma, Some(g)).map_err(Error::Shape)?;
        if a.nrows() != g || sigma.nrows() != g {
            return Err(Error::Shape(format!("truth A and Sigma must be {g}×{g}")));
        }
        let mean_gamma = t.gamma.iter().sum::<f64>() / p.max(1) as f64;
        let var_gamma = t.gamma.iter().map(|x| (x - mean_gamma).powi(2)).sum::<f64>() / p.max(1) as f64;
        Ok(Params {
            gamma: t.gamma.clone(),
            gamma_mean: mean_gamma,
            gamma_var: var_gamma.max(1e-12),
            proxy_noise_var: vec![0.0; p],
            proxy_ar,
            mu: t.mu,
            omega: t.omega,
            nh_ar: t.nh_ar,
            nh_var: t.nh_var,
            a,
            sigma,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let last = self.first_year + self.n_years as i32 - 1;
        if self.n_years == 0 {
            return Err(Error::InvalidArgument("design has no years".into()));
        }
        for (i, p) in self.proxies.iter().enumerate() {
            if p.start_year > last + 1 {
                return Err(Error::InvalidArgument(format!("proxy {i} starts after the record ends")));
            }
            if let Some(snr) = p.snr {
                if !(snr > 0.0) {
                    return Err(Error::InvalidArgument(format!("proxy {i}: SNR must be positive")));
                }
            }
        }
        if self.calibration.start_year < self.first_year || self.calibration.end_year > last {
            return Err(Error::InvalidArgument("calibration window outside the record".into()));
        }
        let params = self.true_params()?;
        let radius = linalg::spectral_radius(&params.a);
        if !(radius < 1.0) {
            return Err(Error::NonStationary(radius));
        }
        if !(params.nh_ar.abs() < 1.0) || params.proxy_ar.iter().any(|p| !(p.abs() < 1.0)) {
            return Err(Error::InvalidArgument("true AR coefficients must lie in (-1, 1)".into()));
        }
        Ok(())
    }
}

/// A simulated truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub params: Params,
    pub latents: LatentStates,
    pub instrumental: InstrumentalSeries,
    pub forcings: ForcingSeries,
}

/// Independent stationary AR(1) forcing series.
pub fn synthetic_forcings<R: Rng + ?Sized>(
    years: Vec<i32>,
    persistence: [f64; 3],
    sd: [f64; 3],
    rng: &mut R,
) -> Result<ForcingSeries> {
    let n = years.len();
    let mut series = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for k in 0..3 {
        let rho = persistence[k];
        if !(rho.abs() < 1.0) || !(sd[k] >= 0.0) {
            return Err(Error::InvalidArgument("forcing persistence must lie in (-1, 1) and sd be nonnegative".into()));
        }
        let var = sd[k] * sd[k];
        let mut x = 0.0;
        for t in 0..n {
            x = if t == 0 {
                dist::sample_normal(0.0, var, rng)
            } else {
                rho * x + dist::sample_normal(0.0, var * (1.0 - rho * rho), rng)
            };
            series[k][t] = x;
        }
    }
    let [solar, volcanic, co2] = series;
    Ok(ForcingSeries { years, solar, volcanic, co2 })
}

/// Simulate `(v, w)` from the stationary process and reconstruct `y`.
pub fn simulate_latents<R: Rng + ?Sized>(params: &Params, forcings: &ForcingSeries, rng: &mut R) -> Result<LatentStates> {
    let g = params.n_cells();
    let n = forcings.len();
    let gamma0 = linalg::stationary_covariance(&params.a, &params.sigma)?;
    let init = linalg::psd_factor(&gamma0);
    let innov = linalg::psd_factor(&params.sigma);
    let zero = DVector::zeros(g);
    let mut v = DMatrix::zeros(n, g);
    let mut w = vec![0.0; n];
    let rho = params.nh_ar;
    let mut prev = DVector::zeros(g);
    for t in 0..n {
        let cur = if t == 0 {
            linalg::sample_mvn(&zero, &init, rng)
        } else {
            &params.a * &prev + linalg::sample_mvn(&zero, &innov, rng)
        };
        v.row_mut(t).copy_from(&cur.transpose());
        w[t] = if t == 0 {
            dist::sample_normal(0.0, params.nh_var / (1.0 - rho * rho), rng)
        } else {
            rho * w[t - 1] + dist::sample_normal(0.0, params.nh_var, rng)
        };
        prev = cur;
    }
    Ok(LatentStates::from_parts(v, w, params, forcings))
}

fn calibration_instrumental<R: Rng + ?Sized>(
    latents: &LatentStates,
    years: &[i32],
    calibration: &Calibration,
    rng: &mut R,
) -> InstrumentalSeries {
    let g = latents.v.ncols();
    let sd = calibration.instrumental_sd;
    let mut inst = InstrumentalSeries::none(years.len(), g, sd);
    for (t, year) in years.iter().enumerate() {
        if calibration.contains(*year) {
            let temp = latents.temperature(t);
            for k in 0..g {
                inst.mask[(t, k)] = true;
                inst.obs[(t, k)] = temp[k] + dist::sample_normal(0.0, sd * sd, rng);
            }
        }
    }
    inst
}

pub fn simulate_truth<R: Rng + ?Sized>(design: &PseudoproxyDesign, rng: &mut R) -> Result<Truth> {
    design.validate()?;
    let years = design.years();
    let forcings = match &design.forcings {
        ForcingSource::Synthetic { persistence, sd } => synthetic_forcings(years.clone(), *persistence, *sd, rng)?,
        ForcingSource::File { path } => {
            let all = crate::io::read_forcings(path)?;
            let start = all.index_of(design.first_year).ok_or_else(|| {
                Error::MissingData(format!("forcing file does not cover {}", design.first_year))
            })?;
            if start + design.n_years > all.len() {
                return Err(Error::MissingData("forcing file ends before the design record".into()));
            }
            let r = start..start + design.n_years;
            ForcingSeries {
                years: all.years[r.clone()].to_vec(),
                solar: all.solar[r.clone()].to_vec(),
                volcanic: all.volcanic[r.clone()].to_vec(),
                co2: all.co2[r].to_vec(),
            }
        }
    };
    let params = design.true_params()?;
    let latents = simulate_latents(&params, &forcings, rng)?;
    let instrumental = calibration_instrumental(&latents, &years, &design.calibration, rng);
    Ok(Truth { params, latents, instrumental, forcings })
}

/// Availability mask: true iff `year ≥ start[i]`.
pub fn staircase_mask(starts: &[i32], years: &[i32]) -> DMatrix<bool> {
    DMatrix::from_fn(years.len(), starts.len(), |t, i| years[t] >= starts[i])
}

/// Stationary AR(1) (or white, `phi = 0`) noise restarted at every observed run.
fn ar_noise<R: Rng + ?Sized>(mask: impl IntoIterator<Item = bool>, n: usize, phi: f64, innov_var: f64, rng: &mut R) -> Vec<f64> {
    let mut u = vec![0.0; n];
    for run in observed_runs(mask) {
        for t in run.clone() {
            u[t] = if t == run.start {
                dist::sample_normal(0.0, innov_var / (1.0 - phi * phi), rng)
            } else {
                phi * u[t - 1] + dist::sample_normal(0.0, innov_var, rng)
            };
        }
    }
    u
}

/// Proxy panel for a simulated truth. Returns the panel and the innovation
/// variance of each proxy's noise (zero for noiseless proxies).
pub fn generate_proxies<R: Rng + ?Sized>(
    truth: &Truth,
    design: &PseudoproxyDesign,
    rng: &mut R,
) -> Result<(ProxyPanel, Vec<f64>)> {
    let years = truth.forcings.years.clone();
    let n = years.len();
    let footprints = design.footprints()?;
    let starts: Vec<i32> = design.proxies.iter().map(|p| p.start_year).collect();
    let mask = staircase_mask(&starts, &years);
    let p = design.proxies.len();
    let mut values = DMatrix::zeros(n, p);
    let mut noise_var = vec![0.0; p];
    for (i, spec) in design.proxies.iter().enumerate() {
        let h: Vec<f64> = footprints.row(i).iter().copied().collect();
        let gamma = truth.params.gamma[i];
        let signal: Vec<f64> = (0..n)
            .map(|t| {
                let temp = truth.latents.temperature(t);
                gamma * h.iter().zip(temp.iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let phi = truth.params.proxy_ar[i];
        let noise = match spec.snr {
            None => vec![0.0; n],
            Some(snr) => {
                let mean = signal.iter().sum::<f64>() / n as f64;
                let var = signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
                if !(var > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "proxy {i}: signal has zero variance, SNR is undefined"
                    )));
                }
                let marginal = var / snr;
                noise_var[i] = marginal * (1.0 - phi * phi);
                ar_noise(mask.column(i).iter().copied(), n, phi, noise_var[i], rng)
            }
        };
        for t in 0..n {
            values[(t, i)] = if mask[(t, i)] { signal[t] + noise[t] } else { 0.0 };
        }
    }
    let panel = ProxyPanel {
        ids: (0..p).map(|i| format!("pp{i:02}")).collect(),
        values,
        mask,
        footprints,
    };
    Ok((panel, noise_var))
}

/// Simulate a design end to end: truth with noise variances filled in and
/// the dataset the sampler sees.
pub fn simulate_experiment<R: Rng + ?Sized>(design: &PseudoproxyDesign, rng: &mut R) -> Result<(Truth, Dataset)> {
    let mut truth = simulate_truth(design, rng)?;
    let (panel, noise_var) = generate_proxies(&truth, design, rng)?;
    truth.params.proxy_noise_var = noise_var;
    let data = Dataset {
        panel,
        forcings: truth.forcings.clone(),
        instrumental: truth.instrumental.clone(),
    };
    Ok((truth, data))
}

/// Refill the observed cells of `template` from the model given parameters
/// and latents. Unobserved cells keep their stored values.
pub fn simulate_observations<R: Rng + ?Sized>(
    params: &Params,
    latents: &LatentStates,
    template: &Dataset,
    proxy_ar_enabled: bool,
    rng: &mut R,
) -> Dataset {
    let mut data = template.clone();
    let n = template.n_years();
    let panel = &mut data.panel;
    for i in 0..panel.n_proxies() {
        let h = panel.footprints.row(i).into_owned();
        let h_sum = h.sum();
        let phi = if proxy_ar_enabled { params.proxy_ar[i] } else { 0.0 };
        let noise = ar_noise(panel.mask.column(i).iter().copied().collect::<Vec<_>>(), n, phi, params.proxy_noise_var[i], rng);
        for t in 0..n {
            if panel.mask[(t, i)] {
                let signal = latents.y[t] * h_sum + h.dot(&latents.v.row(t));
                panel.values[(t, i)] = params.gamma[i] * signal + noise[t];
            }
        }
    }
    let inst = &mut data.instrumental;
    let var = inst.obs_sd * inst.obs_sd;
    for t in 0..n {
        for k in 0..inst.obs.ncols() {
            if inst.mask[(t, k)] {
                inst.obs[(t, k)] = latents.y[t] + latents.v[(t, k)] + dist::sample_normal(0.0, var, rng);
            }
        }
    }
    data
}

/// NH mean level without the AR residual, for reference.
pub fn forced_level(params: &Params, forcings: &ForcingSeries, t: usize) -> f64 {
    nh_mean_step(params.mu, params.omega, forcings.at(t), 0.0)
}
