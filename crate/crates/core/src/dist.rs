//! Log densities and samplers for the prior and full-conditional families:
//! normal, inverse-gamma, truncated normal and inverse-Wishart.

use std::f64::consts::{LN_2, PI, SQRT_2};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::linalg;
use crate::{Error, Result};

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + r * r / var)
}

/// Inverse-gamma log density in the shape/scale parameterisation,
/// `p(x) ∝ x^{-shape-1} exp(-scale / x)`.
pub fn inv_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn sample_normal<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + var.sqrt() * z
}

pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0)
        .expect("inverse-gamma shape must be positive")
        .sample(rng);
    scale / g
}

/// Standard normal cdf.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `Φ(hi) − Φ(lo)` for standardised bounds, computed in whichever tail keeps
/// the difference accurate.
pub fn std_normal_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        0.5 * (erfc(lo / SQRT_2) - erfc(hi / SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi / SQRT_2) - erfc(-lo / SQRT_2))
    } else {
        1.0 - 0.5 * erfc(hi / SQRT_2) - 0.5 * erfc(-lo / SQRT_2)
    }
}

/// `ln(1 − Φ(x))`, using the asymptotic Mills-ratio series where `erfc` underflows.
pub fn ln_std_normal_sf(x: f64) -> f64 {
    if x < 25.0 {
        return (0.5 * erfc(x / SQRT_2)).ln();
    }
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - (x * (2.0 * PI).sqrt()).ln() + series.ln()
}

/// `ln(Φ(hi) − Φ(lo))`, accurate in both tails.
pub fn ln_std_normal_mass(lo: f64, hi: f64) -> f64 {
    if lo > 5.0 {
        let a = ln_std_normal_sf(lo);
        let b = ln_std_normal_sf(hi);
        a + (-(b - a).exp()).ln_1p()
    } else if hi < -5.0 {
        ln_std_normal_mass(-hi, -lo)
    } else {
        std_normal_mass(lo, hi).ln()
    }
}

/// Log density of `N(mean, var)` truncated to `(lo, hi)`.
pub fn truncated_normal_logpdf(x: f64, mean: f64, var: f64, lo: f64, hi: f64) -> f64 {
    if !(x > lo && x < hi) {
        return f64::NEG_INFINITY;
    }
    let sd = var.sqrt();
    normal_logpdf(x, mean, var) - ln_std_normal_mass((lo - mean) / sd, (hi - mean) / sd)
}

fn sample_std_truncated<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if std_normal_mass(lo, hi) >= 0.25 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > lo && z < hi {
                return z;
            }
        }
    }
    if hi <= 0.0 {
        return -sample_std_truncated(-hi, -lo, rng);
    }
    if lo < 0.0 {
        // Narrow interval straddling zero.
        loop {
            let z = rng.random_range(lo..hi);
            if rng.random::<f64>() < (-0.5 * z * z).exp() {
                return z;
            }
        }
    }
    if hi - lo <= 2.0 / lo.max(1.0) {
        loop {
            let z = rng.random_range(lo..hi);
            if rng.random::<f64>() < (0.5 * (lo * lo - z * z)).exp() {
                return z;
            }
        }
    }
    // Right tail: translated exponential proposal.
    let rate = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = lo + exp.sample(rng);
        if z >= hi {
            continue;
        }
        let d = z - rate;
        if rng.random::<f64>() < (-0.5 * d * d).exp() {
            return z;
        }
    }
}

/// Draw from `N(mean, var)` truncated to the open interval `(lo, hi)`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    var: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> f64 {
    let sd = var.sqrt();
    let z = sample_std_truncated((lo - mean) / sd, (hi - mean) / sd, rng);
    let x = mean + sd * z;
    // Rounding can land exactly on a bound; keep the open interval.
    x.clamp(lo.next_up(), hi.next_down())
}

/// `ln Γ_p(a)`, the multivariate gamma function.
pub fn ln_multi_gamma(p: usize, a: f64) -> f64 {
    let p_f = p as f64;
    p_f * (p_f - 1.0) / 4.0 * PI.ln()
        + (0..p).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

/// Inverse-Wishart log density with `dof` degrees of freedom and scale `psi`,
/// `p(Σ) ∝ |Σ|^{-(dof+p+1)/2} exp(-tr(Ψ Σ⁻¹)/2)`.
pub fn inv_wishart_logpdf(sigma: &DMatrix<f64>, dof: f64, psi: &DMatrix<f64>) -> Result<f64> {
    let p = sigma.nrows();
    let chol_sigma = nalgebra::Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart argument".into()))?;
    let chol_psi = nalgebra::Cholesky::new(psi.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart scale".into()))?;
    let trace = chol_sigma.solve(psi).trace();
    let p_f = p as f64;
    Ok(0.5 * dof * linalg::log_det_chol(&chol_psi)
        - 0.5 * dof * p_f * LN_2
        - ln_multi_gamma(p, 0.5 * dof)
        - 0.5 * (dof + p_f + 1.0) * linalg::log_det_chol(&chol_sigma)
        - 0.5 * trace)
}

/// Draw from the inverse-Wishart via the Bartlett decomposition of the
/// corresponding Wishart.
pub fn sample_inv_wishart<R: Rng + ?Sized>(
    dof: f64,
    psi: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = psi.nrows();
    if !(dof > p as f64 - 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse-Wishart dof {dof} must exceed dimension - 1 = {}",
            p as f64 - 1.0
        )));
    }
    let upper = linalg::cholesky(psi, "inverse-Wishart scale")?.l();
    let mut bartlett = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi2 = Gamma::new(0.5 * (dof - i as f64), 2.0)
            .expect("positive shape")
            .sample(rng);
        bartlett[(i, i)] = chi2.sqrt();
        for j in 0..i {
            bartlett[(i, j)] = rng.sample(StandardNormal);
        }
    }
    // Σ = U A⁻ᵀ A⁻¹ Uᵀ with U the Cholesky factor of Ψ.
    let bt = bartlett
        .solve_lower_triangular(&upper.transpose())
        .expect("bartlett diagonal is positive");
    let mut sigma = bt.transpose() * bt;
    linalg::symmetrize(&mut sigma);
    Ok(sigma)
}
