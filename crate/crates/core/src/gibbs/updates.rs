//! Full-conditional updates. Each `*_conditional` function returns the
//! parameters of the distribution its update draws from, so the updates can
//! be checked against the joint density directly.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::ChainState;
use crate::dist;
use crate::linalg;
use crate::model::{
    ar1_loglik, footprint_signal, observed_runs, AStructure, Dataset, ModelConfig, NormalPrior,
};
use crate::ssm;
use crate::{Error, Result};

const FORCING_NAMES: [&str; 4] = ["intercept", "solar", "volcanic", "co2"];
const TARGET_ACCEPT: f64 = 0.44;

fn proxy_runs(data: &Dataset, i: usize) -> Vec<Range<usize>> {
    observed_runs(data.panel.mask.column(i).iter().copied())
}

/// Prais–Winsten transform of one stationary AR(1) segment.
fn prewhiten(series: &[f64], phi: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    if let Some(first) = series.first() {
        out.push((1.0 - phi * phi).sqrt() * first);
    }
    out.extend(series.windows(2).map(|p| p[1] - phi * p[0]));
    out
}

fn effective_proxy_ar(state: &ChainState, cfg: &ModelConfig, i: usize) -> f64 {
    if cfg.structure.proxy_ar_enabled {
        state.params.proxy_ar[i]
    } else {
        0.0
    }
}

/// Replace the whole latent path by an FFBS draw.
pub fn update_latents<R: Rng + ?Sized>(
    state: &mut ChainState,
    cfg: &ModelConfig,
    data: &Dataset,
    rng: &mut R,
) -> Result<()> {
    if cfg.fixed.latents.is_some() {
        state.latents.refresh_y(&state.params, &data.forcings);
        return Ok(());
    }
    let system = ssm::build_ssm(&state.params, cfg, data)?;
    let obs = ssm::observation_vectors(&system, data);
    let filter = ssm::kalman_filter(&system, &obs)?;
    state.latents = ssm::ffbs_draw(&filter, &system, rng)?;
    Ok(())
}

/// Normal full conditional `(mean, var)` of γᵢ.
pub fn gamma_conditional(state: &ChainState, cfg: &ModelConfig, data: &Dataset, i: usize) -> (f64, f64) {
    let p = &state.params;
    let signal = footprint_signal(&data.panel, i, &state.latents);
    let phi = effective_proxy_ar(state, cfg, i);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for run in proxy_runs(data, i) {
        let xs: Vec<f64> = run.clone().map(|t| data.panel.values[(t, i)]).collect();
        let ss: Vec<f64> = run.map(|t| signal[t]).collect();
        for (x, s) in prewhiten(&xs, phi).iter().zip(prewhiten(&ss, phi)) {
            sxx += s * s;
            sxy += s * x;
        }
    }
    let noise = p.proxy_noise_var[i];
    let prec = 1.0 / p.gamma_var + sxx / noise;
    let mean = (p.gamma_mean / p.gamma_var + sxy / noise) / prec;
    (mean, 1.0 / prec)
}

pub fn update_gamma<R: Rng + ?Sized>(
    state: &mut ChainState,
    cfg: &ModelConfig,
    data: &Dataset,
    rng: &mut R,
) -> Result<()> {
    for i in 0..state.params.n_proxies() {
        if cfg.fixed.gamma_fixed(i).is_some() {
            continue;
        }
        let (mean, var) = gamma_conditional(state, cfg, data, i);
        state.params.gamma[i] = dist::sample_normal(mean, var, rng);
    }
    Ok(())
}

/// Normal full conditional of μ_γ given γ and τ_γ².
pub fn gamma_mean_conditional(state: &ChainState, cfg: &ModelConfig) -> (f64, f64) {
    let p = &state.params;
    let prior = cfg.priors.gamma_mean;
    let n = p.gamma.len() as f64;
    let prec = 1.0 / prior.var + n / p.gamma_var;
    let mean = (prior.mean / prior.var + p.gamma.iter().sum::<f64>() / p.gamma_var) / prec;
    (mean, 1.0 / prec)
}

/// Inverse-gamma full conditional `(shape, scale)` of τ_γ² given γ and μ_γ.
pub fn gamma_var_conditional(state: &ChainState, cfg: &ModelConfig) -> (f64, f64) {
    let p = &state.params;
    let prior = cfg.priors.gamma_var;
    let ss: f64 = p.gamma.iter().map(|g| (g - p.gamma_mean).powi(2)).sum();
    (prior.shape + 0.5 * p.gamma.len() as f64, prior.scale + 0.5 * ss)
}

pub fn update_gamma_hyper<R: Rng + ?Sized>(state: &mut ChainState, cfg: &ModelConfig, rng: &mut R) -> Result<()> {
    if cfg.fixed.gamma_mean.is_none() {
        let (mean, var) = gamma_mean_conditional(state, cfg);
        state.params.gamma_mean = dist::sample_normal(mean, var, rng);
    }
    if cfg.fixed.gamma_var.is_none() {
        let (shape, scale) = gamma_var_conditional(state, cfg);
        state.params.gamma_var = dist::sample_inv_gamma(shape, scale, rng);
    }
    Ok(())
}

/// Prewhitened proxy residuals `x − γ h·T`, one vector per observed run.
fn proxy_residual_runs(state: &ChainState, data: &Dataset, i: usize) -> Vec<Vec<f64>> {
    let signal = footprint_signal(&data.panel, i, &state.latents);
    let gamma = state.params.gamma[i];
    proxy_runs(data, i)
        .into_iter()
        .map(|run| run.map(|t| data.panel.values[(t, i)] - gamma * signal[t]).collect())
        .collect()
}

/// Inverse-gamma full conditional `(shape, scale)` of σ²ᵢ.
pub fn proxy_noise_conditional(state: &ChainState, cfg: &ModelConfig, data: &Dataset, i: usize) -> (f64, f64) {
    let phi = effective_proxy_ar(state, cfg, i);
    let prior = cfg.priors.proxy_noise_var;
    let (mut n, mut q) = (0usize, 0.0);
    for run in proxy_residual_runs(state, data, i) {
        n += run.len();
        q += prewhiten(&run, phi).iter().map(|r| r * r).sum::<f64>();
    }
    (prior.shape + 0.5 * n as f64, prior.scale + 0.5 * q)
}

pub fn update_proxy_noise<R: Rng + ?Sized>(
    state: &mut ChainState,
    cfg: &ModelConfig,
    data: &Dataset,
    rng: &mut R,
) -> Result<()> {
    if cfg.fixed.proxy_noise_var.is_some() {
        return Ok(());
    }
    for i in 0..state.params.n_proxies() {
        let (shape, scale) = proxy_noise_conditional(state, cfg, data, i);
        state.params.proxy_noise_var[i] = dist::sample_inv_gamma(shape, scale, rng);
    }
    Ok(())
}

/// Log target of φᵢ up to a constant: exact AR(1) likelihood of the residual
/// runs (uniform prior inside the bound).
pub fn proxy_ar_log_target(state: &ChainState, data: &Dataset, i: usize, phi: f64) -> f64 {
    let var = state.params.proxy_noise_var[i];
    proxy_residual_runs(state, data, i)
        .iter()
        .map(|run| ar1_loglik(run, phi, var))
        .sum()
}

/// Gaussian random-walk Metropolis step on `(−bound, bound)`. Returns the new
/// value and whether the proposal was accepted.
pub fn random_walk_step<R: Rng + ?Sized>(
    current: f64,
    scale: f64,
    bound: f64,
    log_target: impl Fn(f64) -> f64,
    rng: &mut R,
) -> Result<(f64, bool)> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("random-walk proposal scale must be positive, got {scale}")));
    }
    let proposal = current + scale * rng.sample::<f64, _>(StandardNormal);
    if !(proposal.abs() < bound) {
        return Ok((current, false));
    }
    let log_alpha = log_target(proposal) - log_target(current);
    if rng.random::<f64>().ln() < log_alpha {
        Ok((proposal, true))
    } else {
        Ok((current, false))
    }
}

fn adapt_scale(scale: f64, accepted: bool, step: Option<u64>) -> f64 {
    match step {
        Some(k) => {
            let rate = (k as f64).powf(-0.6);
            let signal = if accepted { 1.0 } else { 0.0 } - TARGET_ACCEPT;
            (scale * (rate * signal).exp()).clamp(1e-4, 10.0)
        }
        None => scale,
    }
}

pub fn update_proxy_ar<R: Rng + ?Sized>(
    state: &mut ChainState,
    cfg: &ModelConfig,
    data: &Dataset,
    rng: &mut R,
    adapt_step: Option<u64>,
) -> Result<()> {
    if cfg.fixed.proxy_ar.is_some() {
        return Ok(());
    }
    let post_burn = !state.in_burn_in(cfg);
    for i in 0..state.params.n_proxies() {
        let scale = state.stats.proxy_ar_scale[i];
        let current = state.params.proxy_ar[i];
        let snapshot = &*state;
        let (phi, accepted) = random_walk_step(
            current,
            scale,
            cfg.priors.proxy_ar_bound,
            |phi| proxy_ar_log_target(snapshot, data, i, phi),
            rng,
        )?;
        state.params.proxy_ar[i] = phi;
        state.stats.proxy_ar_scale[i] = adapt_scale(scale, accepted, adapt_step);
        if post_burn && accepted {
            state.stats.proxy_ar_accepted[i] += 1;
        }
    }
    Ok(())
}

/// Design matrix `[1, S, V, C]`.
pub fn forcing_design(data: &Dataset) -> DMatrix<f64> {
    let f = &data.forcings;
    DMatrix::from_fn(f.len(), 4, |t, j| match j {
        0 => 1.0,
        1 => f.solar[t],
        2 => f.volcanic[t],
        _ => f.co2[t],
    })
}

/// Rank check of the non-zero columns of the forcing design. Identically zero
/// columns are decoupled from the data and skipped.
pub fn check_forcing_design(x: &DMatrix<f64>) -> Result<()> {
    let mut basis: Vec<(usize, DVector<f64>)> = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm2 = col.norm_squared();
        if norm2 == 0.0 {
            continue;
        }
        let mut resid = col.clone();
        for (_, q) in &basis {
            let c = q.dot(&resid);
            resid.axpy(-c, q, 1.0);
        }
        let r2 = resid.norm_squared();
        if r2 <= 1e-10 * norm2 {
            let others: Vec<&str> = basis.iter().map(|(k, _)| FORCING_NAMES[*k]).collect();
            return Err(Error::SingularDesign(format!(
                "forcing column '{}' is collinear with [{}]",
                FORCING_NAMES[j],
                others.join(", ")
            )));
        }
        basis.push((j, resid / r2.sqrt()));
    }
    Ok(())
}

/// Normal full conditional `(mean, cov)` of `(μ, ω_S, ω_V, ω_C)` given the
/// NH mean path `y` and the AR(1) error law of `w`.
pub fn forcing_conditional(state: &ChainState, cfg: &ModelConfig, data: &Dataset) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let x = forcing_design(data);
    check_forcing_design(&x)?;
    let p = &state.params;
    let rho = p.nh_ar;
    let n = x.nrows();
    let mut xt = DMatrix::zeros(n, 4);
    let mut yt = DVector::zeros(n);
    let y = &state.latents.y;
    if n > 0 {
        let c = (1.0 - rho * rho).sqrt();
        xt.row_mut(0).copy_from(&(x.row(0) * c));
        yt[0] = c * y[0];
    }
    for t in 1..n {
        xt.row_mut(t).copy_from(&(x.row(t) - x.row(t - 1) * rho));
        yt[t] = y[t] - rho * y[t - 1];
    }
    let prior = cfg.priors.forcing_coeffs;
    let mut prec = xt.transpose() * &xt / p.nh_var;
    let mut lin = xt.transpose() * yt / p.nh_var;
    for k in 0..4 {
        prec[(k, k)] += 1.0 / prior.var[k];
        lin[k] += prior.mean[k] / prior.var[k];
    }
    let chol = linalg::cholesky(&prec, "forcing coefficient precision")?;
    let mean = chol.solve(&lin);
    let mut cov = chol.inverse();
    linalg::symmetrize(&mut cov);
    Ok((mean, cov))
}

/// Draw the forcing coefficients holding `y` fixed; `w` absorbs the change.
pub fn update_forcing_coeffs<R: Rng + ?Sized>(
    state: &mut ChainState,
    cfg: &ModelConfig,
    data: &Dataset,
    rng: &mut R,
) -> Result<()> {
    if cfg.fixed.forcing_coeffs.is_some() {
        return Ok(());
    }
    let (mean, cov) = forcing_conditional(state, cfg, data)?;
    let factor = linalg::cholesky(&cov, "forcing coefficient covariance")?.l();
    let beta = linalg::sample_mvn(&mean, &factor, rng);
    state.params.set_forcing_coeffs([beta[0], beta[1], beta[2], beta[3]]);
    let forced = state.params.forced_mean(&data.forcings);
    for ((w, y), c) in state.latents.w.iter_mut().zip(&state.latents.y).zip(&forced) {
        *w = y - c;
    }
    state.latents.refresh_y(&state.params, &data.forcings);
    Ok(())
}

/// Log target of ρ_w up to a constant.
pub fn nh_ar_log_target(state: &ChainState, rho: f64) -> f64 {
    ar1_loglik(&state.latents.w, rho, state.params.nh_var)
}

/// Inverse-gamma full conditional of σ_w² given `w` and ρ_w.
pub fn nh_var_conditional(state: &ChainState, cfg: &ModelConfig) -> (f64, f64) {
    let w = &state.latents.w;
    let rho = state.params.nh_ar;
    let q: f64 = prewhiten(w, rho).iter().map(|r| r * r).sum();
    let prior = cfg.priors.nh_var;
    (prior.shape + 0.5 * w.len() as f64, prior.scale + 0.5 * q)
}

pub fn update_nh_ar<R: Rng + ?Sized>(
    state: &mut ChainState,
    cfg: &ModelConfig,
    rng: &mut R,
    adapt_step: Option<u64>,
) -> Result<()> {
    if cfg.fixed.nh_ar.is_none() {
        let scale = state.stats.nh_ar_scale;
        let snapshot = &*state;
        let (rho, accepted) = random_walk_step(
            state.params.nh_ar,
            scale,
            cfg.priors.nh_ar_bound,
            |rho| nh_ar_log_target(snapshot, rho),
            rng,
        )?;
        state.params.nh_ar = rho;
        state.stats.nh_ar_scale = adapt_scale(scale, accepted, adapt_step);
        if accepted && !state.in_burn_in(cfg) {
            state.stats.nh_ar_accepted += 1;
        }
    }
    if cfg.fixed.nh_var.is_none() {
        let (shape, scale) = nh_var_conditional(state, cfg);
        state.params.nh_var = dist::sample_inv_gamma(shape, scale, rng);
    }
    Ok(())
}

/// Lag cross-products `(Σ v[t−1] v[t−1]ᵀ, Σ v[t−1] v[t]ᵀ)` over `t ≥ 2`.
pub fn transition_moments(v: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = v.ncols();
    let n = v.nrows();
    if n < 2 {
        return (DMatrix::zeros(g, g), DMatrix::zeros(g, g));
    }
    let x = v.rows(0, n - 1);
    let y = v.rows(1, n - 1);
    (x.transpose() * x, x.transpose() * y)
}

/// Stationary log density of `v[1]`.
pub fn stationary_logpdf(a: &DMatrix<f64>, sigma: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    if v.nrows() == 0 {
        return Ok(0.0);
    }
    let gamma0 = linalg::stationary_covariance(a, sigma)?;
    linalg::mvn_logpdf(&v.row(0).transpose(), &DVector::zeros(a.nrows()), &gamma0)
}

fn sigma_inverse(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut inv = linalg::cholesky(sigma, "Sigma")?.inverse();
    linalg::symmetrize(&mut inv);
    Ok(inv)
}

/// Conditional `(mean, var)` of diagonal entry `g` of a diagonal A given the
/// other entries, from the transitions `t ≥ 2` and the entry prior (before
/// truncation to (−1, 1)).
pub fn a_diagonal_entry_conditional(
    a: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    v: &DMatrix<f64>,
    prior: NormalPrior,
    g: usize,
) -> Result<(f64, f64)> {
    let omega = sigma_inverse(sigma)?;
    let (xtx, xty) = transition_moments(v);
    let n = a.nrows();
    let b = (&xty * &omega)[(g, g)];
    let mut lin = b + prior.mean / prior.var;
    for h in 0..n {
        if h != g {
            lin -= omega[(g, h)] * xtx[(g, h)] * a[(h, h)];
        }
    }
    let prec = omega[(g, g)] * xtx[(g, g)] + 1.0 / prior.var;
    Ok((lin / prec, 1.0 / prec))
}

/// Conditional `(mean, var)` of the common coefficient of a scalar A.
pub fn a_scalar_conditional(sigma: &DMatrix<f64>, v: &DMatrix<f64>, prior: NormalPrior) -> Result<(f64, f64)> {
    let omega = sigma_inverse(sigma)?;
    let (xtx, xty) = transition_moments(v);
    let prec = omega.component_mul(&xtx).sum() + 1.0 / prior.var;
    let lin = omega.component_mul(&xty).sum() + prior.mean / prior.var;
    Ok((lin / prec, 1.0 / prec))
}

/// Normal conditional `(mean, cov)` of `vec(Aᵀ)` (column-stacked) in full mode,
/// before the stationarity restriction.
pub fn a_full_conditional(
    sigma: &DMatrix<f64>,
    v: &DMatrix<f64>,
    prior: NormalPrior,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let g = sigma.nrows();
    let omega = sigma_inverse(sigma)?;
    let (xtx, xty) = transition_moments(v);
    let mut prec = omega.kronecker(&xtx);
    let lin_m = &xty * &omega + DMatrix::identity(g, g) * (prior.mean / prior.var);
    for k in 0..g * g {
        prec[(k, k)] += 1.0 / prior.var;
    }
    let lin = DVector::from_column_slice(lin_m.as_slice());
    let chol = linalg::cholesky(&prec, "transition precision")?;
    let mean = chol.solve(&lin);
    let mut cov = chol.inverse();
    linalg::symmetrize(&mut cov);
    Ok((mean, cov))
}

/// Draw from the conjugate part of the A conditional (stationary `v[1]` term
/// excluded). In full mode up to 100 draws are tried for stationarity;
/// `None` means the cap was hit.
pub fn draw_a_conjugate<R: Rng + ?Sized>(
    current: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    v: &DMatrix<f64>,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<Option<DMatrix<f64>>> {
    let prior = cfg.priors.transition;
    let g = current.nrows();
    match cfg.structure.a_structure {
        AStructure::Scalar => {
            let (m, var) = a_scalar_conditional(sigma, v, prior)?;
            Ok(Some(DMatrix::identity(g, g) * dist::sample_truncated_normal(m, var, -1.0, 1.0, rng)))
        }
        AStructure::Diagonal => {
            let mut a = current.clone();
            for k in 0..g {
                let (m, var) = a_diagonal_entry_conditional(&a, sigma, v, prior, k)?;
                a[(k, k)] = dist::sample_truncated_normal(m, var, -1.0, 1.0, rng);
            }
            Ok(Some(a))
        }
        AStructure::Full => {
            let (mean, cov) = a_full_conditional(sigma, v, prior)?;
            let factor = linalg::cholesky(&cov, "transition covariance")?.l();
            for _ in 0..100 {
                let b = linalg::sample_mvn(&mean, &factor, rng);
                let a = DMatrix::from_column_slice(g, g, b.as_slice()).transpose();
                if linalg::spectral_radius(&a) < 1.0 {
                    return Ok(Some(a));
                }
            }
            Ok(None)
        }
    }
}

fn mh_correct<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Draw A from its full conditional: conjugate draw without the stationary
/// `v[1]` term, then a Metropolis–Hastings correction for that term. In
/// diagonal mode each entry is corrected separately.
pub fn update_a<R: Rng + ?Sized>(state: &mut ChainState, cfg: &ModelConfig, rng: &mut R) -> Result<()> {
    if cfg.fixed.a.is_some() {
        return Ok(());
    }
    let post_burn = !state.in_burn_in(cfg);
    let sigma = state.params.sigma.clone();
    let v = &state.latents.v;
    let prior = cfg.priors.transition;
    let mut current = state.params.a.clone();
    let mut current_lp = stationary_logpdf(&current, &sigma, v)?;
    let tally = |accepted: bool, stats: &mut super::ChainStats| {
        if post_burn {
            stats.a_correction_proposed += 1;
            if accepted {
                stats.a_correction_accepted += 1;
            }
        }
    };
    match cfg.structure.a_structure {
        AStructure::Diagonal => {
            for k in 0..current.nrows() {
                let (m, var) = a_diagonal_entry_conditional(&current, &sigma, v, prior, k)?;
                let mut proposal = current.clone();
                proposal[(k, k)] = dist::sample_truncated_normal(m, var, -1.0, 1.0, rng);
                let lp = stationary_logpdf(&proposal, &sigma, v)?;
                let accepted = mh_correct(lp - current_lp, rng);
                if accepted {
                    current = proposal;
                    current_lp = lp;
                }
                tally(accepted, &mut state.stats);
            }
        }
        _ => match draw_a_conjugate(&current, &sigma, v, cfg, rng)? {
            Some(proposal) => {
                let lp = stationary_logpdf(&proposal, &sigma, v)?;
                let accepted = mh_correct(lp - current_lp, rng);
                if accepted {
                    current = proposal;
                }
                tally(accepted, &mut state.stats);
            }
            None => state.stats.a_reject_cap_hits += 1,
        },
    }
    state.params.a = current;
    Ok(())
}

/// Inverse-Wishart `(dof, scale)` of the conjugate part of the Σ conditional,
/// using innovations `v[t] − A v[t−1]` for `t ≥ 2`.
pub fn sigma_conjugate(state: &ChainState, cfg: &ModelConfig) -> Result<(f64, DMatrix<f64>)> {
    let v = &state.latents.v;
    let a = &state.params.a;
    let mut scale = cfg.innovation_scale()?;
    let n = v.nrows();
    for t in 1..n {
        let e = v.row(t).transpose() - a * v.row(t - 1).transpose();
        scale.ger(1.0, &e, &e, 1.0);
    }
    linalg::symmetrize(&mut scale);
    Ok((cfg.priors.innovation.dof + n.saturating_sub(1) as f64, scale))
}

pub fn update_sigma<R: Rng + ?Sized>(state: &mut ChainState, cfg: &ModelConfig, rng: &mut R) -> Result<()> {
    if cfg.fixed.sigma.is_some() {
        return Ok(());
    }
    let (dof, scale) = sigma_conjugate(state, cfg)?;
    let proposal = dist::sample_inv_wishart(dof, &scale, rng)?;
    let v = &state.latents.v;
    let a = &state.params.a;
    let log_ratio = stationary_logpdf(a, &proposal, v)? - stationary_logpdf(a, &state.params.sigma, v)?;
    let accepted = mh_correct(log_ratio, rng);
    if accepted {
        state.params.sigma = proposal;
    }
    if !state.in_burn_in(cfg) {
        state.stats.sigma_correction_proposed += 1;
        if accepted {
            state.stats.sigma_correction_accepted += 1;
        }
    }
    Ok(())
}
