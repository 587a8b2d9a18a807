//! Rank-normalised split-R̂ and bulk effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::DrawStore;
use crate::model::Structure;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarDiagnostic {
    pub name: String,
    /// `None` when undefined, e.g. for constant chains.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

/// Split each chain in half, dropping the middle draw of odd-length chains.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..n].to_vec()])
        .collect()
}

/// Normal scores of the pooled ranks (ties averaged).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, xs)| xs.iter().enumerate().map(move |(i, x)| (*x, c, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &pooled[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// `(W, var⁺)` of equal-length chains.
fn variance_components(chains: &[Vec<f64>]) -> (f64, f64) {
    let n = chains[0].len() as f64;
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b_over_n = sample_var(&means);
    (w, (n - 1.0) / n * w + b_over_n)
}

fn basic_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let (w, var_plus) = variance_components(chains);
    if !(w > 0.0) || !w.is_finite() {
        return None;
    }
    Some((var_plus / w).sqrt())
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().all(|c| c.iter().all(|x| *x == first))
}

/// Rank-normalised split-R̂: the larger of the bulk and folded versions.
/// Errors with fewer than two chains; `None` when undefined.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    if chains.len() < 2 {
        return Err(Error::InvalidArgument("R-hat needs at least two chains".into()));
    }
    let halves = split(chains);
    if halves[0].len() < 2 || is_constant(&halves) {
        return Ok(None);
    }
    let bulk = basic_rhat(&rank_normalize(&halves));
    let pooled: Vec<f64> = halves.iter().flatten().copied().collect();
    let med = median(&pooled);
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect();
    let tail = if is_constant(&folded) {
        None
    } else {
        basic_rhat(&rank_normalize(&folded))
    };
    Ok(match (bulk, tail) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    })
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    let m = mean(xs);
    (0..n - lag).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum::<f64>() / n as f64
}

/// Bulk ESS of rank-normalised split chains with Geyer's initial monotone
/// sequence truncation.
pub fn bulk_ess(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.is_empty() {
        return None;
    }
    let halves = split(chains);
    let n = halves[0].len();
    if n < 4 || is_constant(&halves) {
        return None;
    }
    let z = rank_normalize(&halves);
    let m = z.len() as f64;
    let (w, var_plus) = variance_components(&z);
    if !(var_plus > 0.0) {
        return None;
    }
    let rho = |lag: usize| {
        let acov = mean(&z.iter().map(|c| autocovariance(c, lag)).collect::<Vec<_>>());
        // Chain autocovariances use divisor n; rescale W accordingly.
        1.0 - (w * (n as f64 - 1.0) / n as f64 - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        k += 1;
    }
    let tau = tau.max(1.0 / (m * n as f64).log10().max(1.0));
    Some(m * n as f64 / tau)
}

/// Split-R̂ and ESS for every parameter scalar and for `ŷ` at `years`
/// (indices into the year axis).
pub fn chain_diagnostics(store: &DrawStore, structure: &Structure, years: &[usize]) -> Result<Vec<ScalarDiagnostic>> {
    if store.chains.len() < 2 {
        return Err(Error::InvalidArgument("diagnostics need at least two chains".into()));
    }
    if store.chains.iter().any(|c| c.draws.is_empty()) {
        return Err(Error::InvalidArgument("diagnostics need draws in every chain".into()));
    }
    let names: Vec<String> = store.chains[0].draws[0]
        .params
        .scalars(structure)
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let per_chain: Vec<Vec<Vec<f64>>> = store
        .chains
        .iter()
        .map(|c| {
            let rows: Vec<Vec<f64>> = c
                .draws
                .iter()
                .map(|d| {
                    let mut row: Vec<f64> = d.params.scalars(structure).into_iter().map(|(_, v)| v).collect();
                    row.extend(years.iter().map(|&t| d.nh[t]));
                    row
                })
                .collect();
            (0..names.len() + years.len())
                .map(|k| rows.iter().map(|r| r[k]).collect())
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let labels = names
        .into_iter()
        .chain(years.iter().map(|&t| format!("nh[{}]", store.years[t])));
    for (k, name) in labels.enumerate() {
        let chains: Vec<Vec<f64>> = per_chain.iter().map(|c| c[k].clone()).collect();
        out.push(ScalarDiagnostic {
            name,
            rhat: split_rhat(&chains)?,
            ess: bulk_ess(&chains),
        });
    }
    Ok(out)
}
