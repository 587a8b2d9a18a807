//! The latent process given parameters as a linear-Gaussian state-space model.
//!
//! State layout without proxy autocorrelation is `s = (v, w)` of length
//! `G + 1`. With AR(1) proxy errors one lag is carried, `s = (v, w, v₋₁, w₋₁)`,
//! so that quasi-differenced proxy rows `x[t] − φ x[t−1]` are exact.
//!
//! Observations are `o[t] = H[t] s[t] + offset[t] + ε`, `ε ~ N(0, diag(R[t]))`.
//! The offsets carry the forced part of the NH mean.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg;
use crate::model::{observed_runs, Dataset, LatentStates, ModelConfig, Params};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// What an observation row measures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObsKind {
    /// Proxy `proxy`; the observed value is `x[t] − lag_coeff·x[t−1]`.
    Proxy { proxy: usize, lag_coeff: f64 },
    /// Instrumental observation of one cell.
    Instrumental { cell: usize },
}

/// Observation rows at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsStep {
    pub h: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub noise_var: DVector<f64>,
    pub kinds: Vec<ObsKind>,
}

impl ObsStep {
    pub fn empty(state_dim: usize) -> Self {
        ObsStep {
            h: DMatrix::zeros(0, state_dim),
            offset: DVector::zeros(0),
            noise_var: DVector::zeros(0),
            kinds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsmSystem {
    pub n_cells: usize,
    /// Whether the state carries a lag of `(v, w)`.
    pub lagged: bool,
    pub transition: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
    pub steps: Vec<ObsStep>,
    /// Forced NH mean `μ + S ω_S + V ω_V + C ω_C` per year.
    pub nh_offset: Vec<f64>,
}

impl SsmSystem {
    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    /// Dimension of the unlagged block `(v, w)`.
    pub fn base_dim(&self) -> usize {
        self.n_cells + 1
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Assemble the state-space form for the given parameters. Only the masks,
/// footprints and instrumental noise of `data` are read, never the values.
pub fn build_ssm(params: &Params, cfg: &ModelConfig, data: &Dataset) -> Result<SsmSystem> {
    let g = cfg.n_cells();
    let panel = &data.panel;
    let inst = &data.instrumental;
    let n_years = data.n_years();
    if params.n_cells() != g || panel.footprints.ncols() != g || params.n_proxies() != panel.n_proxies() {
        return Err(Error::Shape("build_ssm: parameter, grid and panel dimensions differ".into()));
    }
    if panel.n_years() != n_years || inst.mask.shape() != (n_years, g) {
        return Err(Error::Shape("build_ssm: panel, instrumental and forcing years differ".into()));
    }
    let lagged = cfg.structure.proxy_ar_enabled;
    let m = g + 1;
    let n = if lagged { 2 * m } else { m };

    let mut f0 = DMatrix::zeros(m, m);
    f0.view_mut((0, 0), (g, g)).copy_from(&params.a);
    f0[(g, g)] = params.nh_ar;
    let mut q0 = DMatrix::zeros(m, m);
    q0.view_mut((0, 0), (g, g)).copy_from(&params.sigma);
    q0[(g, g)] = params.nh_var;
    let mut stat = DMatrix::zeros(m, m);
    stat.view_mut((0, 0), (g, g))
        .copy_from(&linalg::stationary_covariance(&params.a, &params.sigma)?);
    stat[(g, g)] = params.nh_var / (1.0 - params.nh_ar * params.nh_ar);

    let (transition, innovation_cov, init_cov) = if lagged {
        let mut f = DMatrix::zeros(n, n);
        f.view_mut((0, 0), (m, m)).copy_from(&f0);
        f.view_mut((m, 0), (m, m)).fill_with_identity();
        let mut q = DMatrix::zeros(n, n);
        q.view_mut((0, 0), (m, m)).copy_from(&q0);
        let cross = &f0 * &stat;
        let mut p0 = DMatrix::zeros(n, n);
        p0.view_mut((0, 0), (m, m)).copy_from(&stat);
        p0.view_mut((m, m), (m, m)).copy_from(&stat);
        p0.view_mut((0, m), (m, m)).copy_from(&cross);
        p0.view_mut((m, 0), (m, m)).copy_from(&cross.transpose());
        (f, q, p0)
    } else {
        (f0, q0, stat)
    };

    let nh_offset = params.forced_mean(&data.forcings);
    let mut rows: Vec<Vec<(DVector<f64>, f64, f64, ObsKind)>> = vec![Vec::new(); n_years];
    for i in 0..panel.n_proxies() {
        let gamma = params.gamma[i];
        let h = panel.footprints.row(i);
        let h_sum: f64 = h.sum();
        let mut base = DVector::zeros(m);
        for k in 0..g {
            base[k] = gamma * h[k];
        }
        base[g] = gamma * h_sum;
        let var = params.proxy_noise_var[i];
        let phi = params.proxy_ar[i];
        for run in observed_runs(panel.mask.column(i).iter().copied()) {
            for t in run.clone() {
                let mut row = DVector::zeros(n);
                row.rows_mut(0, m).copy_from(&base);
                let (offset, noise, lag_coeff) = if lagged && t > run.start {
                    row.rows_mut(m, m).copy_from(&(&base * -phi));
                    (gamma * h_sum * (nh_offset[t] - phi * nh_offset[t - 1]), var, phi)
                } else if lagged {
                    (gamma * h_sum * nh_offset[t], var / (1.0 - phi * phi), 0.0)
                } else {
                    (gamma * h_sum * nh_offset[t], var, 0.0)
                };
                rows[t].push((row, offset, noise, ObsKind::Proxy { proxy: i, lag_coeff }));
            }
        }
    }
    let inst_var = inst.obs_sd * inst.obs_sd;
    for (t, step_rows) in rows.iter_mut().enumerate() {
        for k in 0..g {
            if inst.mask[(t, k)] {
                let mut row = DVector::zeros(n);
                row[k] = 1.0;
                row[g] = 1.0;
                step_rows.push((row, nh_offset[t], inst_var, ObsKind::Instrumental { cell: k }));
            }
        }
    }
    let steps = rows
        .into_iter()
        .map(|r| {
            let k = r.len();
            let mut h = DMatrix::zeros(k, n);
            let mut offset = DVector::zeros(k);
            let mut noise_var = DVector::zeros(k);
            let mut kinds = Vec::with_capacity(k);
            for (j, (row, off, var, kind)) in r.into_iter().enumerate() {
                h.row_mut(j).copy_from(&row.transpose());
                offset[j] = off;
                noise_var[j] = var;
                kinds.push(kind);
            }
            ObsStep { h, offset, noise_var, kinds }
        })
        .collect();

    Ok(SsmSystem {
        n_cells: g,
        lagged,
        transition,
        innovation_cov,
        init_mean: DVector::zeros(n),
        init_cov,
        steps,
        nh_offset,
    })
}

/// Observation vectors matching the rows of each step of `ssm`.
pub fn observation_vectors(ssm: &SsmSystem, data: &Dataset) -> Vec<DVector<f64>> {
    let values = &data.panel.values;
    let inst = &data.instrumental.obs;
    ssm.steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            DVector::from_iterator(
                step.len(),
                step.kinds.iter().map(|kind| match *kind {
                    ObsKind::Proxy { proxy, lag_coeff } if lag_coeff != 0.0 => {
                        values[(t, proxy)] - lag_coeff * values[(t - 1, proxy)]
                    }
                    ObsKind::Proxy { proxy, .. } => values[(t, proxy)],
                    ObsKind::Instrumental { cell } => inst[(t, cell)],
                }),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterResult {
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

/// Exact Kalman filter. Rows at a step are absorbed one at a time, which is
/// exact because the observation noise is diagonal.
pub fn kalman_filter(ssm: &SsmSystem, obs: &[DVector<f64>]) -> Result<FilterResult> {
    let n_steps = ssm.n_steps();
    let n = ssm.state_dim();
    if obs.len() != n_steps {
        return Err(Error::Shape(format!("filter: {} observation vectors for {n_steps} steps", obs.len())));
    }
    let mut out = FilterResult {
        predicted_means: Vec::with_capacity(n_steps),
        predicted_covs: Vec::with_capacity(n_steps),
        filtered_means: Vec::with_capacity(n_steps),
        filtered_covs: Vec::with_capacity(n_steps),
        log_likelihood: 0.0,
    };
    let f = &ssm.transition;
    let mut ph = DVector::zeros(n);
    for (t, step) in ssm.steps.iter().enumerate() {
        let (pm, pc) = if t == 0 {
            (ssm.init_mean.clone(), ssm.init_cov.clone())
        } else {
            let m = f * &out.filtered_means[t - 1];
            let mut p = f * &out.filtered_covs[t - 1] * f.transpose() + &ssm.innovation_cov;
            linalg::symmetrize(&mut p);
            (m, p)
        };
        if obs[t].len() != step.len() || step.h.ncols() != n {
            return Err(Error::Shape(format!("filter: observation shape mismatch at step {t}")));
        }
        let mut m = pm.clone();
        let mut p = pc.clone();
        for j in 0..step.len() {
            let h = step.h.row(j);
            ph.gemv(1.0, &p, &h.transpose(), 0.0);
            let mut s = h.dot(&ph.transpose()) + step.noise_var[j];
            if !(s > 0.0) || !s.is_finite() {
                s += linalg::JITTER * s.abs().max(1.0);
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite(format!("innovation variance at step {t}, row {j}")));
                }
            }
            let innov = obs[t][j] - h.dot(&m.transpose()) - step.offset[j];
            m.axpy(innov / s, &ph, 1.0);
            p.ger(-1.0 / s, &ph, &ph, 1.0);
            out.log_likelihood -= 0.5 * (LN_2PI + s.ln() + innov * innov / s);
        }
        linalg::symmetrize(&mut p);
        out.predicted_means.push(pm);
        out.predicted_covs.push(pc);
        out.filtered_means.push(m);
        out.filtered_covs.push(p);
    }
    if !out.log_likelihood.is_finite() {
        return Err(Error::NotPositiveDefinite("filter log likelihood is not finite".into()));
    }
    Ok(out)
}

/// Rauch–Tung–Striebel smoothed means and covariances.
pub fn smoother_moments(filter: &FilterResult, ssm: &SsmSystem) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let n_steps = filter.filtered_means.len();
    let mut means = filter.filtered_means.clone();
    let mut covs = filter.filtered_covs.clone();
    let f = &ssm.transition;
    for t in (0..n_steps.saturating_sub(1)).rev() {
        let pred_chol = linalg::cholesky(&filter.predicted_covs[t + 1], "predicted covariance")?;
        // Gain Jᵀ = P⁻¹[t+1|t] F P[t|t].
        let gain = pred_chol.solve(&(f * &filter.filtered_covs[t])).transpose();
        let dm = &means[t + 1] - &filter.predicted_means[t + 1];
        means[t] = &filter.filtered_means[t] + &gain * dm;
        let dp = &covs[t + 1] - &filter.predicted_covs[t + 1];
        let mut c = &filter.filtered_covs[t] + &gain * dp * gain.transpose();
        linalg::symmetrize(&mut c);
        covs[t] = c;
    }
    Ok((means, covs))
}

/// Conditional law of `x[k..]` given `x[..k] = known` under `N(mean, cov)`.
fn condition_tail(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    k: usize,
    known: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = mean.len();
    let r = n - k;
    let p11 = cov.view((0, 0), (k, k)).into_owned();
    let p21 = cov.view((k, 0), (r, k)).into_owned();
    let p22 = cov.view((k, k), (r, r));
    let chol = linalg::cholesky(&p11, "filtered covariance block")?;
    let gain = chol.solve(&p21.transpose()).transpose();
    let m = mean.rows(k, r) + &gain * (known - mean.rows(0, k));
    let mut c = p22 - &gain * p21.transpose();
    linalg::symmetrize(&mut c);
    Ok((m, c))
}

/// Backward pass of FFBS. `pick` receives each conditional mean and
/// covariance in turn (last block first) and returns the value to condition on.
/// Returns the `(v, w)` path, one row per step.
fn backward_pass(
    filter: &FilterResult,
    ssm: &SsmSystem,
    mut pick: impl FnMut(usize, &DVector<f64>, &DMatrix<f64>) -> Result<DVector<f64>>,
) -> Result<DMatrix<f64>> {
    let n_steps = filter.filtered_means.len();
    let m = ssm.base_dim();
    let mut path = DMatrix::zeros(n_steps, m);
    if n_steps == 0 {
        return Ok(path);
    }
    let last = n_steps - 1;
    let s_last = pick(last, &filter.filtered_means[last], &filter.filtered_covs[last])?;
    path.row_mut(last).copy_from(&s_last.rows(0, m).transpose());
    if ssm.lagged {
        if last >= 1 {
            path.row_mut(last - 1).copy_from(&s_last.rows(m, m).transpose());
        }
        // x[t−1] | x[t], o[1..t] from the filtered joint of (x[t], x[t−1]).
        for t in (1..last).rev() {
            let known = path.row(t).transpose();
            let (mean, cov) = condition_tail(&filter.filtered_means[t], &filter.filtered_covs[t], m, &known)?;
            let x = pick(t - 1, &mean, &cov)?;
            path.row_mut(t - 1).copy_from(&x.transpose());
        }
    } else {
        let f = &ssm.transition;
        let mut next = s_last;
        for t in (0..last).rev() {
            let pc = &filter.filtered_covs[t];
            let fp = f * pc;
            let pred_chol = linalg::cholesky(&filter.predicted_covs[t + 1], "predicted covariance")?;
            let gain = pred_chol.solve(&fp).transpose();
            let mean = &filter.filtered_means[t] + &gain * (&next - &filter.predicted_means[t + 1]);
            let mut cov = pc - &gain * fp;
            linalg::symmetrize(&mut cov);
            let s = pick(t, &mean, &cov)?;
            path.row_mut(t).copy_from(&s.transpose());
            next = s;
        }
    }
    Ok(path)
}

fn path_to_latents(path: DMatrix<f64>, ssm: &SsmSystem) -> LatentStates {
    let g = ssm.n_cells;
    let v = path.columns(0, g).into_owned();
    let w: Vec<f64> = path.column(g).iter().copied().collect();
    let y = w.iter().zip(&ssm.nh_offset).map(|(w, c)| c + w).collect();
    LatentStates { v, w, y }
}

/// One exact draw of `(v, w)` from the joint smoothing distribution, with `y`
/// reconstructed from the forcing offsets.
pub fn ffbs_draw<R: Rng + ?Sized>(filter: &FilterResult, ssm: &SsmSystem, rng: &mut R) -> Result<LatentStates> {
    let path = backward_pass(filter, ssm, |_, mean, cov| {
        let factor = linalg::sampling_factor(cov, "backward covariance")?;
        Ok(linalg::sample_mvn(mean, &factor, rng))
    })?;
    Ok(path_to_latents(path, ssm))
}

/// Log density of `latents` under the joint smoothing distribution that
/// [`ffbs_draw`] samples from.
///
/// With a lagged state the terminal block is the joint of the last two years,
/// so `T ≥ 2` is required there.
pub fn ffbs_log_density(filter: &FilterResult, ssm: &SsmSystem, latents: &LatentStates) -> Result<f64> {
    let g = ssm.n_cells;
    let m = ssm.base_dim();
    let n_steps = filter.filtered_means.len();
    let x = |t: usize| -> DVector<f64> {
        let mut s = DVector::zeros(m);
        s.rows_mut(0, g).copy_from(&latents.v.row(t).transpose());
        s[g] = latents.w[t];
        s
    };
    let mut total = 0.0;
    backward_pass(filter, ssm, |t, mean, cov| {
        let value = if ssm.lagged && t == n_steps - 1 && mean.len() == 2 * m {
            let mut s = DVector::zeros(2 * m);
            s.rows_mut(0, m).copy_from(&x(t));
            if t >= 1 {
                s.rows_mut(m, m).copy_from(&x(t - 1));
            } else {
                // Marginalise the pre-sample lag out of the terminal block.
                let lp = linalg::mvn_logpdf(
                    &x(t),
                    &mean.rows(0, m).into_owned(),
                    &cov.view((0, 0), (m, m)).into_owned(),
                )?;
                total += lp;
                return Ok(s);
            }
            s
        } else {
            x(t)
        };
        total += linalg::mvn_logpdf(&value, mean, cov)?;
        Ok(value)
    })?;
    Ok(total)
}
