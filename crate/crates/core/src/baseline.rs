//! Direct reconstruction: ridge (OLS at zero penalty) regression of the NH
//! target on proxies, one model per availability subset.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::ProxyPanel;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub ridge_penalty: f64,
    /// Inclusive fitting window in years.
    pub window: (i32, i32),
    /// Proxy column indices used, in the order of `weights`.
    pub subset: Vec<usize>,
}

fn window_indices(years: &[i32], window: (i32, i32)) -> Vec<usize> {
    years
        .iter()
        .enumerate()
        .filter(|(_, y)| **y >= window.0 && **y <= window.1)
        .map(|(t, _)| t)
        .collect()
}

/// Relative singular value cut-off for a rank-deficient design.
const RANK_TOL: f64 = 1e-10;

/// Fit on `window` using the proxies in `subset`. `target` is aligned with
/// `years` and must be finite on the window.
pub fn fit_direct(
    panel: &ProxyPanel,
    years: &[i32],
    target: &[f64],
    window: (i32, i32),
    subset: &[usize],
    ridge_penalty: f64,
) -> Result<DirectModel> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("proxy subset is empty".into()));
    }
    if !(ridge_penalty >= 0.0) {
        return Err(Error::InvalidArgument("ridge penalty must be nonnegative".into()));
    }
    if target.len() != years.len() || panel.n_years() != years.len() {
        return Err(Error::Shape("target, panel and years differ in length".into()));
    }
    let rows = window_indices(years, window);
    if rows.is_empty() {
        return Err(Error::MissingData(format!("no years in window {}-{}", window.0, window.1)));
    }
    for &i in subset {
        if i >= panel.n_proxies() {
            return Err(Error::InvalidArgument(format!("proxy index {i} out of range")));
        }
        if let Some(&t) = rows.iter().find(|&&t| !panel.mask[(t, i)]) {
            return Err(Error::MissingData(format!(
                "proxy {} is missing in {} inside the fitting window",
                panel.ids[i], years[t]
            )));
        }
    }
    if let Some(&t) = rows.iter().find(|&&t| !target[t].is_finite()) {
        return Err(Error::MissingData(format!("target is missing in {}", years[t])));
    }
    let n = rows.len();
    let k = subset.len();
    let x = DMatrix::from_fn(n, k, |r, c| panel.values[(rows[r], subset[c])]);
    let y = DVector::from_iterator(n, rows.iter().map(|&t| target[t]));
    let x_mean = DVector::from_iterator(k, x.column_iter().map(|c| c.mean()));
    let y_mean = y.mean();
    let mut xc = x.clone();
    for (mut col, m) in xc.column_iter_mut().zip(x_mean.iter()) {
        col.add_scalar_mut(-m);
    }
    let yc = y.add_scalar(-y_mean);

    let weights = if ridge_penalty == 0.0 {
        let svd = xc.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if n < k || svd.singular_values.iter().any(|s| !(*s > RANK_TOL * smax.max(f64::MIN_POSITIVE))) {
            return Err(Error::SingularDesign(format!(
                "proxy design on {}-{} is rank deficient; use a positive ridge penalty",
                window.0, window.1
            )));
        }
        svd.solve(&yc, 0.0).map_err(|e| Error::SingularDesign(e.to_string()))?
    } else {
        let mut gram = xc.transpose() * &xc;
        for j in 0..k {
            gram[(j, j)] += ridge_penalty;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("ridge normal equations".into()))?;
        chol.solve(&(xc.transpose() * &yc))
    };
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::SingularDesign("non-finite regression weights".into()));
    }
    Ok(DirectModel {
        intercept: y_mean - x_mean.dot(&weights),
        weights: weights.iter().copied().collect(),
        ridge_penalty,
        window,
        subset: subset.to_vec(),
    })
}

/// `intercept + weights · x_t` at each requested year.
pub fn predict_direct(model: &DirectModel, panel: &ProxyPanel, years: &[i32], at: &[i32]) -> Result<Vec<f64>> {
    at.iter()
        .map(|year| {
            let t = years
                .iter()
                .position(|y| y == year)
                .ok_or_else(|| Error::MissingData(format!("year {year} is not in the panel")))?;
            let mut pred = model.intercept;
            for (&i, w) in model.subset.iter().zip(&model.weights) {
                if !panel.mask[(t, i)] {
                    return Err(Error::MissingData(format!(
                        "proxy {} is not observed in {year}",
                        panel.ids[i]
                    )));
                }
                pred += w * panel.values[(t, i)];
            }
            Ok(pred)
        })
        .collect()
}

/// Reliability ratio `γ²s / (γ²s + n)`: the expected multiplicative bias of
/// a univariate direct slope.
pub fn attenuation_factor(gamma: f64, signal_var: f64, noise_var: f64) -> Result<f64> {
    if !(signal_var > 0.0) {
        return Err(Error::InvalidArgument("signal variance must be positive".into()));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidArgument("noise variance must be nonnegative".into()));
    }
    let s = gamma * gamma * signal_var;
    Ok(s / (s + noise_var))
}

/// Direct reconstruction over a staircase panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaircaseFit {
    pub models: Vec<DirectModel>,
    /// Index into `models` for every year.
    pub model_of_year: Vec<usize>,
    pub prediction: Vec<f64>,
}

/// Fit one model per distinct availability subset and predict every year
/// with the model for its subset. Years with no usable proxy are an error.
pub fn fit_staircase(
    panel: &ProxyPanel,
    years: &[i32],
    target: &[f64],
    window: (i32, i32),
    ridge_penalty: f64,
) -> Result<StaircaseFit> {
    let rows = window_indices(years, window);
    let usable: Vec<usize> = (0..panel.n_proxies())
        .filter(|&i| rows.iter().all(|&t| panel.mask[(t, i)]))
        .collect();
    let mut index: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut models = Vec::new();
    let mut model_of_year = Vec::with_capacity(years.len());
    let mut prediction = Vec::with_capacity(years.len());
    for (t, year) in years.iter().enumerate() {
        let subset: Vec<usize> = usable.iter().copied().filter(|&i| panel.mask[(t, i)]).collect();
        if subset.is_empty() {
            return Err(Error::MissingData(format!("no calibrated proxy is observed in {year}")));
        }
        let k = match index.get(&subset) {
            Some(k) => *k,
            None => {
                models.push(fit_direct(panel, years, target, window, &subset, ridge_penalty)?);
                index.insert(subset, models.len() - 1);
                models.len() - 1
            }
        };
        model_of_year.push(k);
        prediction.push(predict_direct(&models[k], panel, years, &[*year])?[0]);
    }
    Ok(StaircaseFit { models, model_of_year, prediction })
}

/// Pick a ridge penalty from `grid` by contiguous-block cross-validation on
/// the window.
pub fn select_ridge_penalty(
    panel: &ProxyPanel,
    years: &[i32],
    target: &[f64],
    window: (i32, i32),
    subset: &[usize],
    grid: &[f64],
    n_folds: usize,
) -> Result<f64> {
    let rows = window_indices(years, window);
    if grid.is_empty() || n_folds < 2 || rows.len() < 2 * n_folds {
        return Err(Error::InvalidArgument("need a nonempty grid and at least two rows per fold".into()));
    }
    let fold_len = rows.len() / n_folds;
    let mut best = (f64::INFINITY, grid[0]);
    for &lambda in grid {
        let mut sse = 0.0;
        for f in 0..n_folds {
            let lo = f * fold_len;
            let hi = if f + 1 == n_folds { rows.len() } else { lo + fold_len };
            let mut masked = target.to_vec();
            for &t in &rows[lo..hi] {
                masked[t] = f64::NAN;
            }
            let train: Vec<i32> = rows.iter().map(|&t| years[t]).collect();
            // Refit on the window minus the held-out block.
            let held: Vec<i32> = rows[lo..hi].iter().map(|&t| years[t]).collect();
            let model = fit_rows(panel, years, &masked, &train, subset, lambda)?;
            let pred = predict_direct(&model, panel, years, &held)?;
            sse += rows[lo..hi].iter().zip(&pred).map(|(&t, p)| (target[t] - p).powi(2)).sum::<f64>();
        }
        if sse < best.0 {
            best = (sse, lambda);
        }
    }
    Ok(best.1)
}

/// Fit on the finite-target years of `train`.
fn fit_rows(
    panel: &ProxyPanel,
    years: &[i32],
    target: &[f64],
    train: &[i32],
    subset: &[usize],
    lambda: f64,
) -> Result<DirectModel> {
    let keep: Vec<usize> = years
        .iter()
        .enumerate()
        .filter(|(t, y)| train.contains(y) && target[*t].is_finite())
        .map(|(t, _)| t)
        .collect();
    let sub = ProxyPanel {
        ids: panel.ids.clone(),
        values: panel.values.select_rows(keep.iter()),
        mask: panel.mask.select_rows(keep.iter()),
        footprints: panel.footprints.clone(),
    };
    let yrs: Vec<i32> = keep.iter().map(|&t| years[t]).collect();
    let tgt: Vec<f64> = keep.iter().map(|&t| target[t]).collect();
    let window = (*yrs.first().unwrap_or(&0), *yrs.last().unwrap_or(&0));
    fit_direct(&sub, &yrs, &tgt, window, subset, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(cols: &[Vec<f64>]) -> ProxyPanel {
        let n = cols[0].len();
        let p = cols.len();
        ProxyPanel {
            ids: (0..p).map(|i| format!("p{i}")).collect(),
            values: DMatrix::from_fn(n, p, |t, i| cols[i][t]),
            mask: DMatrix::from_element(n, p, true),
            footprints: DMatrix::from_element(p, 1, 1.0),
        }
    }

    fn years(n: usize) -> Vec<i32> {
        (1900..1900 + n as i32).collect()
    }

    #[test]
    fn exact_inversion() {
        let target: Vec<f64> = (0..20).map(|t| (t as f64 * 0.7).sin()).collect();
        let x: Vec<f64> = target.iter().map(|y| 2.0 * y).collect();
        let m = fit_direct(&panel(&[x]), &years(20), &target, (1900, 1919), &[0], 0.0).unwrap();
        assert!((m.weights[0] - 0.5).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn ridge_limit() {
        let target: Vec<f64> = (0..20).map(|t| (t as f64 * 0.7).sin() + 0.3).collect();
        let x: Vec<f64> = (0..20).map(|t| (t as f64 * 0.5).cos()).collect();
        let m = fit_direct(&panel(&[x]), &years(20), &target, (1900, 1919), &[0], 1e14).unwrap();
        assert!(m.weights[0].abs() < 1e-10);
        let mean = target.iter().sum::<f64>() / 20.0;
        assert!((m.intercept - mean).abs() < 1e-9);
    }

    #[test]
    fn collinear_design_errors() {
        let x: Vec<f64> = (0..10).map(|t| t as f64).collect();
        let x2: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        let target: Vec<f64> = (0..10).map(|t| (t as f64).sqrt()).collect();
        let r = fit_direct(&panel(&[x, x2]), &years(10), &target, (1900, 1909), &[0, 1], 0.0);
        assert!(matches!(r, Err(Error::SingularDesign(_))));
    }

    #[test]
    fn zero_weights_give_constant_series() {
        let p = panel(&[vec![1.0, 5.0, -2.0]]);
        let m = DirectModel { intercept: 0.4, weights: vec![0.0], ridge_penalty: 0.0, window: (1900, 1902), subset: vec![0] };
        assert_eq!(predict_direct(&m, &p, &years(3), &[1900, 1901, 1902]).unwrap(), vec![0.4; 3]);
    }

    #[test]
    fn missing_proxy_is_named() {
        let mut p = panel(&[vec![1.0, 2.0, 3.0]]);
        p.mask[(0, 0)] = false;
        let m = DirectModel { intercept: 0.0, weights: vec![1.0], ridge_penalty: 0.0, window: (1901, 1902), subset: vec![0] };
        let err = predict_direct(&m, &p, &years(3), &[1900]).unwrap_err().to_string();
        assert!(err.contains("p0") && err.contains("1900"), "{err}");
    }

    #[test]
    fn attenuation_examples() {
        assert_eq!(attenuation_factor(1.3, 2.0, 0.0).unwrap(), 1.0);
        assert_eq!(attenuation_factor(1.0, 1.0, 1.0).unwrap(), 0.5);
        assert!(attenuation_factor(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn staircase_fits_one_model_per_subset() {
        let n = 30;
        let target: Vec<f64> = (0..n).map(|t| (t as f64 * 0.3).sin()).collect();
        let a: Vec<f64> = (0..n).map(|t| target[t] + 0.1 * (t as f64).cos()).collect();
        let b: Vec<f64> = (0..n).map(|t| target[t] - 0.2 * (t as f64 * 1.7).sin()).collect();
        let mut p = panel(&[a, b]);
        for t in 0..10 {
            p.mask[(t, 1)] = false;
        }
        let fit = fit_staircase(&p, &years(n), &target, (1915, 1929), 0.0).unwrap();
        assert_eq!(fit.models.len(), 2);
        assert_eq!(fit.models[fit.model_of_year[0]].subset, vec![0]);
        assert_eq!(fit.models[fit.model_of_year[20]].subset, vec![0, 1]);
    }
}
