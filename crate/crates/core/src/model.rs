//! Domain types, configuration and the exact joint density of the hierarchy.
//!
//! The hierarchy, for years `t = 1..T`, cells `g = 1..G` and proxies `i = 1..P`:
//!
//! ```text
//! x[t,i] = γᵢ hᵢ·T[t] + u[t,i]                      proxies
//! z[t,g] = T[t,g] + N(0, σ_inst²)                    instrumental (calibration window)
//! T[t]   = y[t]·1 + v[t]
//! v[t]   = A v[t-1] + e[t],   e[t] ~ N(0, Σ)         v[1] from the stationary law
//! y[t]   = μ + S[t]ω_S + V[t]ω_V + C[t]ω_C + w[t]
//! w[t]   = ρ_w w[t-1] + N(0, σ_w²)                   w[1] from the stationary law
//! u[·,i] white N(0, σᵢ²), or AR(1) with coefficient φᵢ and innovation variance σᵢ²
//! ```
//!
//! With AR(1) proxy errors each maximal run of consecutive observed years is
//! an independent stationary AR(1) segment.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::linalg;
use crate::{Error, Result};

/// Serde adapter storing a matrix as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows<T: Clone + nalgebra::Scalar>(m: &DMatrix<T>) -> Vec<Vec<T>> {
        (0..m.nrows())
            .map(|i| m.row(i).iter().cloned().collect())
            .collect()
    }

    pub fn from_rows<T: Clone + nalgebra::Scalar>(
        rows: &[Vec<T>],
        ncols: Option<usize>,
    ) -> Result<DMatrix<T>, String> {
        let ncols = ncols.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(format!(
                "row {i} has {} entries, expected {ncols}",
                r.len()
            ));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j].clone()))
    }

    pub fn serialize<S, T>(m: &DMatrix<T>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        T: Serialize + Clone + nalgebra::Scalar,
    {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D, T>(d: D) -> Result<DMatrix<T>, D::Error>
    where
        D: Deserializer<'de>,
        T: Deserialize<'de> + Clone + nalgebra::Scalar,
    {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        from_rows(&rows, None).map_err(D::Error::custom)
    }
}

/// Grid of `G` cells with area weights defining the hemispheric mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub area_weights: Vec<f64>,
}

impl GridSpec {
    pub fn uniform(n_cells: usize) -> Self {
        GridSpec {
            area_weights: vec![1.0 / n_cells as f64; n_cells],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.area_weights.len()
    }

    pub fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.area_weights)
    }
}

/// `T × P` proxy observations with an availability mask and the `P × G`
/// footprint matrix whose rows are the hᵢ.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyPanel {
    pub ids: Vec<String>,
    pub values: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    pub footprints: DMatrix<f64>,
}

impl ProxyPanel {
    pub fn empty(n_years: usize, n_cells: usize) -> Self {
        ProxyPanel {
            ids: Vec::new(),
            values: DMatrix::zeros(n_years, 0),
            mask: DMatrix::from_element(n_years, 0, false),
            footprints: DMatrix::zeros(0, n_cells),
        }
    }

    pub fn n_proxies(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_years(&self) -> usize {
        self.values.nrows()
    }

    pub fn observed(&self, t: usize, i: usize) -> bool {
        self.mask[(t, i)]
    }

    pub fn n_observed(&self, i: usize) -> usize {
        self.mask.column(i).iter().filter(|m| **m).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSeries {
    pub years: Vec<i32>,
    pub solar: Vec<f64>,
    pub volcanic: Vec<f64>,
    pub co2: Vec<f64>,
}

impl ForcingSeries {
    pub fn zeros(years: Vec<i32>) -> Self {
        let n = years.len();
        ForcingSeries {
            years,
            solar: vec![0.0; n],
            volcanic: vec![0.0; n],
            co2: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn at(&self, t: usize) -> [f64; 3] {
        [self.solar[t], self.volcanic[t], self.co2[t]]
    }

    pub fn index_of(&self, year: i32) -> Option<usize> {
        let first = *self.years.first()?;
        let idx = usize::try_from(year - first).ok()?;
        (idx < self.years.len()).then_some(idx)
    }
}

/// Gridded instrumental anomalies, `T × G`, with per-cell availability.
#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentalSeries {
    pub obs: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    pub obs_sd: f64,
}

impl InstrumentalSeries {
    pub fn none(n_years: usize, n_cells: usize, obs_sd: f64) -> Self {
        InstrumentalSeries {
            obs: DMatrix::zeros(n_years, n_cells),
            mask: DMatrix::from_element(n_years, n_cells, false),
            obs_sd,
        }
    }

    pub fn year_available(&self, t: usize) -> bool {
        self.mask.row(t).iter().any(|m| *m)
    }

    /// Area-weighted mean of the observations in years where every cell is observed.
    pub fn nh_mean(&self, weights: &DVector<f64>, t: usize) -> Option<f64> {
        if self.mask.row(t).iter().all(|m| *m) {
            Some(self.obs.row(t).transpose().dot(weights))
        } else {
            None
        }
    }
}

/// Everything observed: proxies, forcings and instrumental data on one year axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub panel: ProxyPanel,
    pub forcings: ForcingSeries,
    pub instrumental: InstrumentalSeries,
}

impl Dataset {
    pub fn n_years(&self) -> usize {
        self.forcings.len()
    }
}

/// All non-latent unknowns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub gamma: Vec<f64>,
    pub gamma_mean: f64,
    pub gamma_var: f64,
    pub proxy_noise_var: Vec<f64>,
    pub proxy_ar: Vec<f64>,
    pub mu: f64,
    pub omega: [f64; 3],
    pub nh_ar: f64,
    pub nh_var: f64,
    #[serde(with = "serde_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub sigma: DMatrix<f64>,
}

impl Params {
    pub fn n_proxies(&self) -> usize {
        self.gamma.len()
    }

    pub fn n_cells(&self) -> usize {
        self.a.nrows()
    }

    /// `(μ, ω_S, ω_V, ω_C)`.
    pub fn forcing_coeffs(&self) -> [f64; 4] {
        [self.mu, self.omega[0], self.omega[1], self.omega[2]]
    }

    pub fn set_forcing_coeffs(&mut self, beta: [f64; 4]) {
        self.mu = beta[0];
        self.omega = [beta[1], beta[2], beta[3]];
    }

    /// Forced part of the hemispheric mean, `μ + S ω_S + V ω_V + C ω_C`, per year.
    pub fn forced_mean(&self, forcings: &ForcingSeries) -> Vec<f64> {
        (0..forcings.len())
            .map(|t| nh_mean_step(self.mu, self.omega, forcings.at(t), 0.0))
            .collect()
    }

    /// Check every type invariant; returns a description of the first failure.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let p = self.gamma.len();
        let g = self.a.nrows();
        if self.proxy_noise_var.len() != p || self.proxy_ar.len() != p {
            return Err("per-proxy parameter lengths differ".into());
        }
        if !self.a.is_square() || self.sigma.shape() != (g, g) {
            return Err("A and Sigma must be G×G".into());
        }
        let scalars = [self.gamma_mean, self.gamma_var, self.mu, self.nh_ar, self.nh_var];
        if scalars.iter().chain(self.omega.iter()).any(|v| !v.is_finite())
            || self.gamma.iter().any(|v| !v.is_finite())
        {
            return Err("non-finite parameter".into());
        }
        if !(self.gamma_var > 0.0) || !(self.nh_var > 0.0) {
            return Err("variance parameter not positive".into());
        }
        if let Some(i) = self.proxy_noise_var.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(format!("proxy noise variance {i} not positive"));
        }
        if let Some(i) = self.proxy_ar.iter().position(|v| !(v.abs() < 1.0)) {
            return Err(format!("proxy AR coefficient {i} outside (-1, 1)"));
        }
        if !(self.nh_ar.abs() < 1.0) {
            return Err("NH AR coefficient outside (-1, 1)".into());
        }
        let radius = linalg::spectral_radius(&self.a);
        if !(radius < 1.0) {
            return Err(format!("spectral radius of A is {radius}"));
        }
        if !linalg::is_spd(&self.sigma) {
            return Err("Sigma is not positive definite".into());
        }
        let asym = (&self.sigma - self.sigma.transpose()).amax();
        if asym > 1e-12 * self.sigma.amax().max(1.0) {
            return Err("Sigma is not symmetric".into());
        }
        Ok(())
    }

    /// Named scalar summaries used for convergence diagnostics.
    pub fn scalars(&self, structure: &Structure) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (i, g) in self.gamma.iter().enumerate() {
            out.push((format!("gamma[{i}]"), *g));
        }
        out.push(("gamma_mean".into(), self.gamma_mean));
        out.push(("gamma_var".into(), self.gamma_var));
        for (i, s) in self.proxy_noise_var.iter().enumerate() {
            out.push((format!("proxy_noise_var[{i}]"), *s));
        }
        if structure.proxy_ar_enabled {
            for (i, phi) in self.proxy_ar.iter().enumerate() {
                out.push((format!("proxy_ar[{i}]"), *phi));
            }
        }
        out.push(("mu".into(), self.mu));
        out.push(("omega_solar".into(), self.omega[0]));
        out.push(("omega_volcanic".into(), self.omega[1]));
        out.push(("omega_co2".into(), self.omega[2]));
        out.push(("nh_ar".into(), self.nh_ar));
        out.push(("nh_var".into(), self.nh_var));
        let g = self.a.nrows();
        match structure.a_structure {
            AStructure::Scalar => out.push(("A".into(), self.a[(0, 0)])),
            AStructure::Diagonal => {
                for k in 0..g {
                    out.push((format!("A[{k},{k}]"), self.a[(k, k)]));
                }
            }
            AStructure::Full => {
                for r in 0..g {
                    for c in 0..g {
                        out.push((format!("A[{r},{c}]"), self.a[(r, c)]));
                    }
                }
            }
        }
        for r in 0..g {
            for c in 0..=r {
                out.push((format!("Sigma[{r},{c}]"), self.sigma[(r, c)]));
            }
        }
        out
    }
}

/// Latent field deviations `v` (`T × G`), NH AR residuals `w` and the NH
/// mean path `y`, which is always the deterministic function of `w` and the
/// forcing coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentStates {
    #[serde(with = "serde_rows")]
    pub v: DMatrix<f64>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
}

impl LatentStates {
    /// Assemble latents from `v` and `w`, reconstructing `y` exactly.
    pub fn from_parts(v: DMatrix<f64>, w: Vec<f64>, params: &Params, forcings: &ForcingSeries) -> Self {
        let y = w
            .iter()
            .enumerate()
            .map(|(t, wt)| nh_mean_step(params.mu, params.omega, forcings.at(t), *wt))
            .collect();
        LatentStates { v, w, y }
    }

    pub fn zeros(n_years: usize, n_cells: usize, params: &Params, forcings: &ForcingSeries) -> Self {
        Self::from_parts(DMatrix::zeros(n_years, n_cells), vec![0.0; n_years], params, forcings)
    }

    pub fn n_years(&self) -> usize {
        self.w.len()
    }

    /// Recompute `y` from the current `w` (after `μ`/`ω` changed with `w` held).
    pub fn refresh_y(&mut self, params: &Params, forcings: &ForcingSeries) {
        for t in 0..self.w.len() {
            self.y[t] = nh_mean_step(params.mu, params.omega, forcings.at(t), self.w[t]);
        }
    }

    /// Temperature field `T[t] = y[t]·1 + v[t]`.
    pub fn temperature(&self, t: usize) -> DVector<f64> {
        self.v.row(t).transpose().add_scalar(self.y[t])
    }

    /// Derived hemispheric temperature `weights · T[t]` for every year.
    pub fn nh_series(&self, weights: &DVector<f64>) -> Vec<f64> {
        let total: f64 = weights.sum();
        (0..self.n_years())
            .map(|t| self.y[t] * total + self.v.row(t).transpose().dot(weights))
            .collect()
    }

    /// Largest absolute deviation of `y` from its reconstruction.
    pub fn y_reconstruction_error(&self, params: &Params, forcings: &ForcingSeries) -> f64 {
        self.w
            .iter()
            .enumerate()
            .map(|(t, w)| (self.y[t] - nh_mean_step(params.mu, params.omega, forcings.at(t), *w)).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPrior {
    pub mean: f64,
    pub var: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaPrior {
    pub fn mean(&self) -> f64 {
        if self.shape > 1.0 {
            self.scale / (self.shape - 1.0)
        } else {
            self.scale / self.shape
        }
    }
}

/// Inverse-Wishart scale either as a multiple of the identity or a full matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSpec {
    Identity(f64),
    Matrix(Vec<Vec<f64>>),
}

impl ScaleSpec {
    pub fn matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            ScaleSpec::Identity(s) => Ok(DMatrix::identity(n, n) * *s),
            ScaleSpec::Matrix(rows) => {
                let m = serde_rows::from_rows(rows, Some(n)).map_err(Error::Shape)?;
                if m.nrows() != n {
                    return Err(Error::Shape(format!(
                        "inverse-Wishart scale has {} rows, grid has {n} cells",
                        m.nrows()
                    )));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvWishartPrior {
    pub dof: f64,
    pub scale: ScaleSpec,
}

/// Independent normal priors on `(μ, ω_S, ω_V, ω_C)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingPrior {
    pub mean: [f64; 4],
    pub var: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Priors {
    /// Hyperprior on μ_γ.
    pub gamma_mean: NormalPrior,
    /// Hyperprior on τ_γ².
    pub gamma_var: InvGammaPrior,
    pub proxy_noise_var: InvGammaPrior,
    /// φᵢ ~ Uniform(−b, b) with `0 < b ≤ 1`.
    #[serde(default = "default_ar_bound")]
    pub proxy_ar_bound: f64,
    pub forcing_coeffs: ForcingPrior,
    /// ρ_w ~ Uniform(−b, b).
    #[serde(default = "default_ar_bound")]
    pub nh_ar_bound: f64,
    pub nh_var: InvGammaPrior,
    /// Normal prior on each diagonal entry of A (truncated to (−1, 1)); in
    /// `full` mode off-diagonal entries get mean zero and the same variance,
    /// with the whole matrix restricted to the stationary region.
    pub transition: NormalPrior,
    pub innovation: InvWishartPrior,
}

fn default_ar_bound() -> f64 {
    1.0
}

impl Priors {
    pub fn weakly_informative(n_cells: usize) -> Self {
        Priors {
            gamma_mean: NormalPrior { mean: 0.0, var: 4.0 },
            gamma_var: InvGammaPrior { shape: 2.0, scale: 1.0 },
            proxy_noise_var: InvGammaPrior { shape: 2.0, scale: 1.0 },
            proxy_ar_bound: 1.0,
            forcing_coeffs: ForcingPrior {
                mean: [0.0; 4],
                var: [4.0; 4],
            },
            nh_ar_bound: 1.0,
            nh_var: InvGammaPrior { shape: 2.0, scale: 0.1 },
            transition: NormalPrior { mean: 0.0, var: 1.0 },
            innovation: InvWishartPrior {
                dof: n_cells as f64 + 3.0,
                scale: ScaleSpec::Identity(0.1),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    pub n_chains: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial random-walk proposal sd for the AR coefficients.
    #[serde(default = "default_mh_scale")]
    pub mh_scale: f64,
    /// Robbins–Monro adaptation of proposal scales during burn-in.
    #[serde(default = "default_true")]
    pub adapt: bool,
}

fn default_mh_scale() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            n_chains: 4,
            n_iter: 2000,
            burn_in: 500,
            thin: 1,
            seed: 1,
            mh_scale: default_mh_scale(),
            adapt: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AStructure {
    Scalar,
    #[default]
    Diagonal,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Structure {
    #[serde(default)]
    pub proxy_ar_enabled: bool,
    #[serde(default)]
    pub a_structure: AStructure,
}

/// Instrumental-era window anchoring the proxy calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub start_year: i32,
    pub end_year: i32,
    pub instrumental_sd: f64,
    /// Accept instrumental observations outside the calibration window.
    #[serde(default)]
    pub allow_instrumental_outside: bool,
}

impl Calibration {
    pub fn contains(&self, year: i32) -> bool {
        year >= self.start_year && year <= self.end_year
    }
}

/// Latent paths held fixed by [`FixedSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedLatents {
    pub v: Vec<Vec<f64>>,
    pub w: Vec<f64>,
}

/// Blocks held at a given value instead of being sampled. Anything left
/// `None` is free.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedSpec {
    pub gamma: Option<Vec<Option<f64>>>,
    pub gamma_mean: Option<f64>,
    pub gamma_var: Option<f64>,
    pub proxy_noise_var: Option<Vec<f64>>,
    pub proxy_ar: Option<Vec<f64>>,
    pub forcing_coeffs: Option<[f64; 4]>,
    pub nh_ar: Option<f64>,
    pub nh_var: Option<f64>,
    pub a: Option<Vec<Vec<f64>>>,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub latents: Option<FixedLatents>,
}

impl FixedSpec {
    pub fn gamma_fixed(&self, i: usize) -> Option<f64> {
        self.gamma.as_ref().and_then(|g| g.get(i).copied().flatten())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: GridSpec,
    pub priors: Priors,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub structure: Structure,
    pub calibration: Calibration,
    #[serde(default)]
    pub fixed: FixedSpec,
}

impl ModelConfig {
    pub fn new(grid: GridSpec, calibration: Calibration) -> Self {
        let g = grid.n_cells();
        ModelConfig {
            grid,
            priors: Priors::weakly_informative(g),
            sampler: SamplerSettings::default(),
            structure: Structure::default(),
            calibration,
            fixed: FixedSpec::default(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn innovation_scale(&self) -> Result<DMatrix<f64>> {
        self.priors.innovation.scale.matrix(self.n_cells())
    }

    /// Deterministic starting values: fixed values where given, otherwise
    /// central values of the priors.
    pub fn initial_params(&self, n_proxies: usize) -> Result<Params> {
        let g = self.n_cells();
        let pr = &self.priors;
        let fx = &self.fixed;
        let gamma_mean = fx.gamma_mean.unwrap_or(pr.gamma_mean.mean);
        let gamma = (0..n_proxies)
            .map(|i| fx.gamma_fixed(i).unwrap_or(if gamma_mean == 0.0 { 1.0 } else { gamma_mean }))
            .collect();
        let a = match &fx.a {
            Some(rows) => serde_rows::from_rows(rows, Some(g)).map_err(Error::Shape)?,
            None => DMatrix::identity(g, g) * pr.transition.mean.clamp(-0.95, 0.95),
        };
        let sigma = match &fx.sigma {
            Some(rows) => serde_rows::from_rows(rows, Some(g)).map_err(Error::Shape)?,
            None => {
                let dof = pr.innovation.dof;
                self.innovation_scale()? / (dof - g as f64 - 1.0).max(1.0)
            }
        };
        let beta = fx.forcing_coeffs.unwrap_or(pr.forcing_coeffs.mean);
        Ok(Params {
            gamma,
            gamma_mean,
            gamma_var: fx.gamma_var.unwrap_or(pr.gamma_var.mean()),
            proxy_noise_var: fx
                .proxy_noise_var
                .clone()
                .unwrap_or_else(|| vec![pr.proxy_noise_var.mean(); n_proxies]),
            proxy_ar: fx.proxy_ar.clone().unwrap_or_else(|| vec![0.0; n_proxies]),
            mu: beta[0],
            omega: [beta[1], beta[2], beta[3]],
            nh_ar: fx.nh_ar.unwrap_or(0.0),
            nh_var: fx.nh_var.unwrap_or(pr.nh_var.mean()),
            a,
            sigma,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.to_string(),
            message: message.into(),
        });
    }

    pub fn has(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field == field)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_pass() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pass() {
            return writeln!(f, "validation passed");
        }
        for v in &self.violations {
            writeln!(f, "  - {}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

fn check_positive(report: &mut ValidationReport, field: &str, value: f64) {
    if !(value > 0.0) || !value.is_finite() {
        report.push(field, format!("must be positive and finite, got {value}"));
    }
}

fn check_fixed_matrix(
    report: &mut ValidationReport,
    field: &str,
    rows: &Option<Vec<Vec<f64>>>,
    g: usize,
) -> Option<DMatrix<f64>> {
    let rows = rows.as_ref()?;
    match serde_rows::from_rows(rows, Some(g)) {
        Ok(m) if m.nrows() == g => Some(m),
        Ok(m) => {
            report.push(field, format!("expected {g}×{g}, got {}×{g}", m.nrows()));
            None
        }
        Err(e) => {
            report.push(field, e);
            None
        }
    }
}

/// Check configuration, shapes and priors against the supplied data.
pub fn validate_config(cfg: &ModelConfig, panel: &ProxyPanel, forcings: &ForcingSeries) -> ValidationReport {
    let mut report = ValidationReport::default();
    let g = cfg.grid.n_cells();
    let p = panel.n_proxies();
    let n_years = forcings.len();

    // Grid.
    if g == 0 {
        report.push("grid", "at least one cell is required");
    }
    if cfg.grid.area_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        report.push("grid", "area weights must be nonnegative and finite");
    }
    let total: f64 = cfg.grid.area_weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        report.push("grid", format!("area weights sum to {total}, expected 1"));
    }

    // Forcings.
    if n_years == 0 {
        report.push("forcings", "empty reconstruction window");
    }
    if forcings.solar.len() != n_years || forcings.volcanic.len() != n_years || forcings.co2.len() != n_years {
        report.push("forcings", "forcing series lengths differ from the year axis");
    } else if [&forcings.solar, &forcings.volcanic, &forcings.co2]
        .iter()
        .any(|s| s.iter().any(|v| !v.is_finite()))
    {
        report.push("forcings", "forcings must be finite");
    }
    if forcings.years.windows(2).any(|w| w[1] != w[0] + 1) {
        report.push("forcings", "years must be strictly increasing with step 1");
    }

    // Proxy panel.
    if panel.values.shape() != panel.mask.shape() {
        report.push("proxies", "values and mask shapes differ");
    }
    if panel.n_years() != n_years {
        report.push(
            "proxies",
            format!("panel has {} years, forcings have {n_years}", panel.n_years()),
        );
    }
    if panel.ids.len() != p {
        report.push("proxies", "proxy id count differs from panel width");
    }
    if panel.footprints.nrows() != p || panel.footprints.ncols() != g {
        report.push(
            "footprint dimension",
            format!(
                "footprints are {}×{}, expected {p}×{g} (one length-{g} row per proxy)",
                panel.footprints.nrows(),
                panel.footprints.ncols()
            ),
        );
    } else {
        for i in 0..p {
            let row = panel.footprints.row(i);
            if row.iter().any(|v| !v.is_finite()) || row.iter().all(|v| *v == 0.0) {
                report.push("footprints", format!("footprint of proxy {i} must be finite and not all zero"));
            }
        }
    }
    if panel.values.shape() == panel.mask.shape() {
        for i in 0..p {
            for t in 0..panel.n_years() {
                if panel.mask[(t, i)] && !panel.values[(t, i)].is_finite() {
                    report.push("proxies", format!("non-finite observed value for proxy {i} at row {t}"));
                    break;
                }
            }
        }
    }

    // Priors.
    let pr = &cfg.priors;
    check_positive(&mut report, "priors.gamma_mean.var", pr.gamma_mean.var);
    check_positive(&mut report, "priors.gamma_var.shape", pr.gamma_var.shape);
    check_positive(&mut report, "priors.gamma_var.scale", pr.gamma_var.scale);
    check_positive(&mut report, "priors.proxy_noise_var.shape", pr.proxy_noise_var.shape);
    check_positive(&mut report, "priors.proxy_noise_var.scale", pr.proxy_noise_var.scale);
    check_positive(&mut report, "priors.nh_var.shape", pr.nh_var.shape);
    check_positive(&mut report, "priors.nh_var.scale", pr.nh_var.scale);
    check_positive(&mut report, "priors.transition.var", pr.transition.var);
    for (k, v) in pr.forcing_coeffs.var.iter().enumerate() {
        check_positive(&mut report, &format!("priors.forcing_coeffs.var[{k}]"), *v);
    }
    for (field, b) in [("priors.proxy_ar_bound", pr.proxy_ar_bound), ("priors.nh_ar_bound", pr.nh_ar_bound)] {
        if !(b > 0.0 && b <= 1.0) {
            report.push(field, format!("must lie in (0, 1], got {b}"));
        }
    }
    if !(pr.innovation.dof > g as f64 + 1.0) {
        report.push(
            "priors.innovation.dof",
            format!("dof must exceed G+1 = {}, got {}", g + 1, pr.innovation.dof),
        );
    }
    match cfg.innovation_scale() {
        Ok(psi) if !linalg::is_spd(&psi) => report.push("priors.innovation.scale", "scale must be SPD"),
        Ok(_) => {}
        Err(e) => report.push("priors.innovation.scale", e.to_string()),
    }

    // Sampler.
    let s = &cfg.sampler;
    if s.n_chains == 0 {
        report.push("sampler.n_chains", "at least one chain is required");
    }
    if s.n_iter <= s.burn_in {
        report.push("sampler.n_iter", format!("n_iter ({}) must exceed burn_in ({})", s.n_iter, s.burn_in));
    }
    if s.thin == 0 {
        report.push("sampler.thin", "thin must be at least 1");
    }
    check_positive(&mut report, "sampler.mh_scale", s.mh_scale);

    // Calibration window.
    let cal = &cfg.calibration;
    check_positive(&mut report, "calibration.instrumental_sd", cal.instrumental_sd);
    if cal.start_year > cal.end_year {
        report.push("calibration", "start_year after end_year");
    }
    if let (Some(first), Some(last)) = (forcings.years.first(), forcings.years.last()) {
        if cal.start_year < *first || cal.end_year > *last {
            report.push("calibration", "calibration window outside the record");
        }
    }

    // Fixed blocks.
    let fx = &cfg.fixed;
    if let Some(gamma) = &fx.gamma {
        if gamma.len() != p {
            report.push("fixed.gamma", format!("expected {p} entries"));
        }
    }
    for (field, v) in [("fixed.proxy_noise_var", &fx.proxy_noise_var), ("fixed.proxy_ar", &fx.proxy_ar)] {
        if let Some(v) = v {
            if v.len() != p {
                report.push(field, format!("expected {p} entries"));
            }
        }
    }
    if let Some(v) = &fx.proxy_noise_var {
        if v.iter().any(|s| !(*s > 0.0)) {
            report.push("fixed.proxy_noise_var", "variances must be positive");
        }
    }
    if let Some(v) = &fx.proxy_ar {
        if v.iter().any(|phi| !(phi.abs() < 1.0)) {
            report.push("fixed.proxy_ar", "coefficients must lie in (-1, 1)");
        }
    }
    if let Some(rho) = fx.nh_ar {
        if !(rho.abs() < 1.0) {
            report.push("fixed.nh_ar", "coefficient must lie in (-1, 1)");
        }
    }
    for (field, v) in [("fixed.gamma_var", fx.gamma_var), ("fixed.nh_var", fx.nh_var)] {
        if let Some(v) = v {
            check_positive(&mut report, field, v);
        }
    }
    if let Some(a) = check_fixed_matrix(&mut report, "fixed.a", &fx.a, g) {
        let radius = linalg::spectral_radius(&a);
        if !(radius < 1.0) {
            report.push("fixed.a", format!("fixed A is non-stationary (spectral radius {radius})"));
        }
        let shape_ok = match cfg.structure.a_structure {
            AStructure::Full => true,
            AStructure::Diagonal => linalg::is_diagonal(&a),
            AStructure::Scalar => {
                linalg::is_diagonal(&a) && a.diagonal().iter().all(|d| *d == a[(0, 0)])
            }
        };
        if !shape_ok {
            report.push("fixed.a", "fixed A does not match the configured A structure");
        }
    }
    if let Some(sigma) = check_fixed_matrix(&mut report, "fixed.sigma", &fx.sigma, g) {
        if !linalg::is_spd(&sigma) {
            report.push("fixed.sigma", "fixed Sigma must be SPD");
        }
    }
    if let Some(lat) = &fx.latents {
        if lat.w.len() != n_years || lat.v.len() != n_years || lat.v.iter().any(|r| r.len() != g) {
            report.push("fixed.latents", format!("expected {n_years} years × {g} cells"));
        }
    }
    report
}

/// [`validate_config`] plus the instrumental series.
pub fn validate_dataset(cfg: &ModelConfig, data: &Dataset) -> ValidationReport {
    let mut report = validate_config(cfg, &data.panel, &data.forcings);
    let inst = &data.instrumental;
    let g = cfg.n_cells();
    if inst.obs.shape() != (data.n_years(), g) || inst.mask.shape() != inst.obs.shape() {
        report.push("instrumental", format!("expected {}×{g} observations", data.n_years()));
        return report;
    }
    check_positive(&mut report, "instrumental.obs_sd", inst.obs_sd);
    for t in 0..data.n_years() {
        if !inst.year_available(t) {
            continue;
        }
        if (0..g).any(|k| inst.mask[(t, k)] && !inst.obs[(t, k)].is_finite()) {
            report.push("instrumental", format!("non-finite observation at row {t}"));
        }
        let year = data.forcings.years.get(t).copied().unwrap_or_default();
        if !cfg.calibration.allow_instrumental_outside && !cfg.calibration.contains(year) {
            report.push(
                "instrumental",
                format!("observation in {year} lies outside the calibration window"),
            );
            break;
        }
    }
    report
}

/// One step of the field VAR(1): `A v_prev + e`.
pub fn var_step(a: &DMatrix<f64>, v_prev: &DVector<f64>, e: &DVector<f64>) -> Result<DVector<f64>> {
    if !a.is_square() || a.ncols() != v_prev.len() || e.len() != a.nrows() {
        return Err(Error::Shape(format!(
            "var_step: A is {:?}, v_prev has {}, e has {}",
            a.shape(),
            v_prev.len(),
            e.len()
        )));
    }
    Ok(a * v_prev + e)
}

/// NH mean level `μ + S ω_S + V ω_V + C ω_C + w`.
pub fn nh_mean_step(mu: f64, omega: [f64; 3], forcing: [f64; 3], w: f64) -> f64 {
    mu + forcing[0] * omega[0] + forcing[1] * omega[1] + forcing[2] * omega[2] + w
}

/// Noise-free proxy expectation `γ (h · T)`.
pub fn proxy_mean(gamma: f64, h: &[f64], temperature: &[f64]) -> Result<f64> {
    if h.len() != temperature.len() {
        return Err(Error::Shape(format!(
            "proxy_mean: footprint has {} cells, field has {}",
            h.len(),
            temperature.len()
        )));
    }
    Ok(gamma * h.iter().zip(temperature).map(|(a, b)| a * b).sum::<f64>())
}

/// Exact AR(1) log likelihood of a series whose first element is drawn from
/// the stationary law `N(0, σ²/(1−ρ²))`.
pub fn ar1_loglik(series: &[f64], rho: f64, innov_var: f64) -> f64 {
    let Some(first) = series.first() else {
        return 0.0;
    };
    let c = 1.0 - rho * rho;
    let mut q = c * first * first;
    for pair in series.windows(2) {
        let d = pair[1] - rho * pair[0];
        q += d * d;
    }
    let n = series.len() as f64;
    -0.5 * n * (2.0 * std::f64::consts::PI * innov_var).ln() + 0.5 * c.ln() - 0.5 * q / innov_var
}

/// Maximal runs `start..end` of consecutive `true` entries.
pub fn observed_runs(observed: impl IntoIterator<Item = bool>) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut start = None;
    let mut len = 0;
    for (t, o) in observed.into_iter().enumerate() {
        match (o, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push(s..t);
                start = None;
            }
            _ => {}
        }
        len = t + 1;
    }
    if let Some(s) = start {
        runs.push(s..len);
    }
    runs
}

/// `hᵢ · T[t]` for every year.
pub fn footprint_signal(panel: &ProxyPanel, i: usize, latents: &LatentStates) -> Vec<f64> {
    let h = panel.footprints.row(i);
    let h_sum: f64 = h.sum();
    (0..latents.n_years())
        .map(|t| latents.y[t] * h_sum + h.dot(&latents.v.row(t)))
        .collect()
}

/// Log likelihood of proxy `i`'s observed cells given the latent field.
pub fn proxy_loglik(params: &Params, latents: &LatentStates, panel: &ProxyPanel, i: usize, ar_enabled: bool) -> f64 {
    let signal = footprint_signal(panel, i, latents);
    let gamma = params.gamma[i];
    let var = params.proxy_noise_var[i];
    let phi = if ar_enabled { params.proxy_ar[i] } else { 0.0 };
    observed_runs(panel.mask.column(i).iter().copied())
        .into_iter()
        .map(|run| {
            let resid: Vec<f64> = run
                .map(|t| panel.values[(t, i)] - gamma * signal[t])
                .collect();
            if ar_enabled {
                ar1_loglik(&resid, phi, var)
            } else {
                resid.iter().map(|r| dist::normal_logpdf(*r, 0.0, var)).sum()
            }
        })
        .sum()
}

pub fn instrumental_loglik(latents: &LatentStates, inst: &InstrumentalSeries) -> f64 {
    let var = inst.obs_sd * inst.obs_sd;
    let mut ll = 0.0;
    for t in 0..inst.obs.nrows() {
        for k in 0..inst.obs.ncols() {
            if inst.mask[(t, k)] {
                let temp = latents.y[t] + latents.v[(t, k)];
                ll += dist::normal_logpdf(inst.obs[(t, k)], temp, var);
            }
        }
    }
    ll
}

/// Log density of the field path: stationary `v[1]` plus VAR(1) transitions.
pub fn field_process_logpdf(a: &DMatrix<f64>, sigma: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    let g = a.nrows();
    if v.nrows() == 0 {
        return Ok(0.0);
    }
    let gamma0 = linalg::stationary_covariance(a, sigma)?;
    let zero = DVector::zeros(g);
    let mut ll = linalg::mvn_logpdf(&v.row(0).transpose(), &zero, &gamma0)?;
    let chol = nalgebra::Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Sigma".into()))?;
    for t in 1..v.nrows() {
        let prev = v.row(t - 1).transpose();
        let mean = a * prev;
        ll += linalg::mvn_logpdf_chol(&v.row(t).transpose(), &mean, &chol);
    }
    Ok(ll)
}

/// Log prior density of the transition matrix under the configured structure.
pub fn transition_log_prior(a: &DMatrix<f64>, cfg: &ModelConfig) -> Result<f64> {
    let pr = cfg.priors.transition;
    let radius = linalg::spectral_radius(a);
    if !(radius < 1.0) {
        return Err(Error::NonStationary(radius));
    }
    let g = a.nrows();
    Ok(match cfg.structure.a_structure {
        AStructure::Scalar => dist::truncated_normal_logpdf(a[(0, 0)], pr.mean, pr.var, -1.0, 1.0),
        AStructure::Diagonal => (0..g)
            .map(|k| dist::truncated_normal_logpdf(a[(k, k)], pr.mean, pr.var, -1.0, 1.0))
            .sum(),
        // Unnormalised: the mass of the stationary region is a constant.
        AStructure::Full => (0..g)
            .flat_map(|r| (0..g).map(move |c| (r, c)))
            .map(|(r, c)| {
                let m = if r == c { pr.mean } else { 0.0 };
                dist::normal_logpdf(a[(r, c)], m, pr.var)
            })
            .sum(),
    })
}

pub fn log_prior(params: &Params, cfg: &ModelConfig) -> Result<f64> {
    let pr = &cfg.priors;
    let mut lp = 0.0;
    lp += dist::normal_logpdf(params.gamma_mean, pr.gamma_mean.mean, pr.gamma_mean.var);
    lp += dist::inv_gamma_logpdf(params.gamma_var, pr.gamma_var.shape, pr.gamma_var.scale);
    for g in &params.gamma {
        lp += dist::normal_logpdf(*g, params.gamma_mean, params.gamma_var);
    }
    for s in &params.proxy_noise_var {
        lp += dist::inv_gamma_logpdf(*s, pr.proxy_noise_var.shape, pr.proxy_noise_var.scale);
    }
    if cfg.structure.proxy_ar_enabled {
        for phi in &params.proxy_ar {
            if !(phi.abs() < pr.proxy_ar_bound) {
                return Err(Error::InvalidArgument(format!("proxy AR coefficient {phi} outside prior support")));
            }
            lp -= (2.0 * pr.proxy_ar_bound).ln();
        }
    }
    for (k, b) in params.forcing_coeffs().iter().enumerate() {
        lp += dist::normal_logpdf(*b, pr.forcing_coeffs.mean[k], pr.forcing_coeffs.var[k]);
    }
    if !(params.nh_ar.abs() < pr.nh_ar_bound) {
        return Err(Error::InvalidArgument(format!("NH AR coefficient {} outside prior support", params.nh_ar)));
    }
    lp -= (2.0 * pr.nh_ar_bound).ln();
    lp += dist::inv_gamma_logpdf(params.nh_var, pr.nh_var.shape, pr.nh_var.scale);
    lp += transition_log_prior(&params.a, cfg)?;
    lp += dist::inv_wishart_logpdf(&params.sigma, pr.innovation.dof, &cfg.innovation_scale()?)?;
    Ok(lp)
}

/// Log of priors × process densities × observation densities.
pub fn log_joint(params: &Params, latents: &LatentStates, data: &Dataset, cfg: &ModelConfig) -> Result<f64> {
    if let Err(msg) = params.check_invariants() {
        let radius = linalg::spectral_radius(&params.a);
        if !(radius < 1.0) {
            return Err(Error::NonStationary(radius));
        }
        if !linalg::is_spd(&params.sigma) {
            return Err(Error::NotPositiveDefinite("Sigma".into()));
        }
        return Err(Error::InvalidArgument(msg));
    }
    let mut lj = log_prior(params, cfg)?;
    lj += field_process_logpdf(&params.a, &params.sigma, &latents.v)?;
    lj += ar1_loglik(&latents.w, params.nh_ar, params.nh_var);
    for i in 0..data.panel.n_proxies() {
        lj += proxy_loglik(params, latents, &data.panel, i, cfg.structure.proxy_ar_enabled);
    }
    lj += instrumental_loglik(latents, &data.instrumental);
    if !lj.is_finite() {
        return Err(Error::InvalidArgument("log joint density is not finite".into()));
    }
    Ok(lj)
}

/// Draw a transition matrix from its prior.
pub fn draw_transition_prior<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<DMatrix<f64>> {
    let g = cfg.n_cells();
    let pr = cfg.priors.transition;
    Ok(match cfg.structure.a_structure {
        AStructure::Scalar => {
            DMatrix::identity(g, g) * dist::sample_truncated_normal(pr.mean, pr.var, -1.0, 1.0, rng)
        }
        AStructure::Diagonal => DMatrix::from_diagonal(&DVector::from_iterator(
            g,
            (0..g).map(|_| dist::sample_truncated_normal(pr.mean, pr.var, -1.0, 1.0, rng)),
        )),
        AStructure::Full => {
            for _ in 0..100_000 {
                let a = DMatrix::from_fn(g, g, |r, c| {
                    let m = if r == c { pr.mean } else { 0.0 };
                    dist::sample_normal(m, pr.var, rng)
                });
                if linalg::spectral_radius(&a) < 1.0 {
                    return Ok(a);
                }
            }
            return Err(Error::InvalidArgument(
                "transition prior puts negligible mass on the stationary region".into(),
            ));
        }
    })
}

/// Draw every parameter block from its prior (fixed blocks keep their values).
pub fn draw_prior<R: Rng + ?Sized>(cfg: &ModelConfig, n_proxies: usize, rng: &mut R) -> Result<Params> {
    let pr = &cfg.priors;
    let fx = &cfg.fixed;
    let mut params = cfg.initial_params(n_proxies)?;
    if fx.gamma_mean.is_none() {
        params.gamma_mean = dist::sample_normal(pr.gamma_mean.mean, pr.gamma_mean.var, rng);
    }
    if fx.gamma_var.is_none() {
        params.gamma_var = dist::sample_inv_gamma(pr.gamma_var.shape, pr.gamma_var.scale, rng);
    }
    for i in 0..n_proxies {
        if fx.gamma_fixed(i).is_none() {
            params.gamma[i] = dist::sample_normal(params.gamma_mean, params.gamma_var, rng);
        }
    }
    if fx.proxy_noise_var.is_none() {
        for s in params.proxy_noise_var.iter_mut() {
            *s = dist::sample_inv_gamma(pr.proxy_noise_var.shape, pr.proxy_noise_var.scale, rng);
        }
    }
    if cfg.structure.proxy_ar_enabled && fx.proxy_ar.is_none() {
        let b = pr.proxy_ar_bound;
        for phi in params.proxy_ar.iter_mut() {
            *phi = uniform_open(b, rng);
        }
    }
    if fx.forcing_coeffs.is_none() {
        let mut beta = [0.0; 4];
        for (k, b) in beta.iter_mut().enumerate() {
            *b = dist::sample_normal(pr.forcing_coeffs.mean[k], pr.forcing_coeffs.var[k], rng);
        }
        params.set_forcing_coeffs(beta);
    }
    if fx.nh_ar.is_none() {
        params.nh_ar = uniform_open(pr.nh_ar_bound, rng);
    }
    if fx.nh_var.is_none() {
        params.nh_var = dist::sample_inv_gamma(pr.nh_var.shape, pr.nh_var.scale, rng);
    }
    if fx.a.is_none() {
        params.a = draw_transition_prior(cfg, rng)?;
    }
    if fx.sigma.is_none() {
        params.sigma = dist::sample_inv_wishart(pr.innovation.dof, &cfg.innovation_scale()?, rng)?;
    }
    Ok(params)
}

fn uniform_open<R: Rng + ?Sized>(bound: f64, rng: &mut R) -> f64 {
    loop {
        let x = rng.random_range(-bound..bound);
        if x.abs() < bound && x.abs() < 1.0 {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    pub(crate) fn basic(n_years: usize, g: usize, p: usize) -> (ModelConfig, Dataset) {
        let years: Vec<i32> = (1900..1900 + n_years as i32).collect();
        let cfg = ModelConfig::new(
            GridSpec::uniform(g),
            Calibration {
                start_year: years[n_years - 1],
                end_year: years[n_years - 1],
                instrumental_sd: 0.1,
                allow_instrumental_outside: false,
            },
        );
        let panel = ProxyPanel {
            ids: (0..p).map(|i| format!("p{i}")).collect(),
            values: DMatrix::from_fn(n_years, p, |t, i| (t as f64 * 0.3 + i as f64).sin()),
            mask: DMatrix::from_element(n_years, p, true),
            footprints: DMatrix::from_fn(p, g, |i, k| if k == i % g { 1.0 } else { 0.0 }),
        };
        let data = Dataset {
            panel,
            forcings: ForcingSeries::zeros(years),
            instrumental: InstrumentalSeries::none(n_years, g, 0.1),
        };
        (cfg, data)
    }

    #[test]
    fn default_config_passes() {
        let (cfg, data) = basic(10, 2, 3);
        let report = validate_dataset(&cfg, &data);
        assert!(report.is_pass(), "{report}");
    }

    #[test]
    fn footprint_of_wrong_length_is_reported() {
        let (cfg, mut data) = basic(10, 2, 3);
        data.panel.footprints = DMatrix::from_element(3, 3, 1.0);
        let report = validate_config(&cfg, &data.panel, &data.forcings);
        assert!(report.has("footprint dimension"), "{report}");
    }

    #[test]
    fn wishart_dof_at_dimension_is_reported() {
        let (mut cfg, data) = basic(10, 2, 3);
        cfg.priors.innovation.dof = 2.0;
        let report = validate_config(&cfg, &data.panel, &data.forcings);
        assert!(report.has("priors.innovation.dof"));
        assert!(report.to_string().contains("dof must exceed G+1"));
    }

    #[test]
    fn nonstationary_fixed_a_is_reported() {
        let (mut cfg, data) = basic(10, 2, 3);
        cfg.fixed.a = Some(vec![vec![1.1, 0.0], vec![0.0, 0.5]]);
        let report = validate_config(&cfg, &data.panel, &data.forcings);
        assert!(report.has("fixed.a"));
    }

    #[test]
    fn var_step_examples() {
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(var_step(&zero, &dvector![5.0, 5.0], &dvector![1.0, 2.0]).unwrap(), dvector![1.0, 2.0]);
        let id = DMatrix::identity(2, 2);
        assert_eq!(var_step(&id, &dvector![3.0, -1.0], &dvector![0.0, 0.0]).unwrap(), dvector![3.0, -1.0]);
        let half = DMatrix::identity(2, 2) * 0.5;
        let out = var_step(&half, &dvector![2.0, 4.0], &dvector![0.1, 0.0]).unwrap();
        assert!((out - dvector![1.1, 2.0]).amax() < 1e-15);
        assert!(var_step(&half, &dvector![1.0], &dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn nh_mean_step_examples() {
        assert_eq!(nh_mean_step(0.2, [0.0; 3], [1.0, 2.0, 3.0], 0.0), 0.2);
        assert_eq!(nh_mean_step(0.0, [2.0, 0.0, 0.0], [0.5, 0.0, 0.0], 0.0), 1.0);
        assert!((nh_mean_step(1.0, [1.0; 3], [0.1, 0.2, 0.3], -0.6) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn proxy_mean_examples() {
        assert_eq!(proxy_mean(1.0, &[1.0, 0.0], &[2.0, 5.0]).unwrap(), 2.0);
        assert_eq!(proxy_mean(0.0, &[0.3, 0.7], &[2.0, 5.0]).unwrap(), 0.0);
        assert_eq!(proxy_mean(2.0, &[0.5, 0.5], &[1.0, 3.0]).unwrap(), 4.0);
        assert!(proxy_mean(1.0, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn runs_split_on_gaps() {
        let runs = observed_runs([false, true, true, false, true]);
        assert_eq!(runs, vec![1..3, 4..5]);
        assert!(observed_runs([false, false]).is_empty());
    }

    #[test]
    fn log_joint_errors_instead_of_infinite() {
        let (cfg, data) = basic(4, 1, 1);
        let mut params = cfg.initial_params(1).unwrap();
        let latents = LatentStates::zeros(4, 1, &params, &data.forcings);
        assert!(log_joint(&params, &latents, &data, &cfg).unwrap().is_finite());
        params.a = dmatrix![1.0];
        assert!(matches!(log_joint(&params, &latents, &data, &cfg), Err(Error::NonStationary(_))));
        params.a = dmatrix![0.5];
        params.sigma = dmatrix![-1.0];
        assert!(matches!(log_joint(&params, &latents, &data, &cfg), Err(Error::NotPositiveDefinite(_))));
    }
}

