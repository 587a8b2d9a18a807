//! Small dense linear-algebra helpers shared by the model, filter and sampler.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal jitter, relative to the largest diagonal entry, applied once when
/// a Cholesky factorisation fails.
pub const JITTER: f64 = 1e-10;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky factorisation with a single bounded repair: on failure the matrix
/// is symmetrised, `JITTER * max(diag)` is added to the diagonal and the
/// factorisation retried. A second failure is an error.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let mut repaired = m.clone();
    symmetrize(&mut repaired);
    let scale = repaired
        .diagonal()
        .iter()
        .fold(0.0_f64, |acc, d| acc.max(d.abs()));
    let jitter = if scale > 0.0 { JITTER * scale } else { JITTER };
    for i in 0..repaired.nrows() {
        repaired[(i, i)] += jitter;
    }
    Cholesky::new(repaired).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Cholesky factor for simulation. An all-zero covariance yields a zero
/// factor (a point mass); otherwise [`cholesky`] with its single jitter retry.
pub fn sampling_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.iter().all(|v| *v == 0.0) {
        return Ok(m.clone());
    }
    Ok(cholesky(m, what)?.l())
}

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square() && m.iter().all(|v| v.is_finite()) && Cholesky::new(m.clone()).is_some()
}

/// A factor `L` with `L Lᵀ = m` for a symmetric positive semi-definite matrix.
/// Falls back to a clipped eigendecomposition when Cholesky fails, so that
/// degenerate (e.g. all-zero) covariances can still be simulated from.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return c.l();
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let mut factor = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    factor
}

pub fn log_det_chol(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Multivariate normal log density given a Cholesky factor of the covariance.
pub fn mvn_logpdf_chol(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let r = x - mean;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&r)
        .expect("cholesky factor has a positive diagonal");
    let n = x.len() as f64;
    -0.5 * (n * LN_2PI + log_det_chol(chol) + z.norm_squared())
}

pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("normal covariance".into()))?;
    Ok(mvn_logpdf_chol(x, mean, &chol))
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draw from `N(mean, L Lᵀ)`.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    mean + factor * standard_normal_vector(factor.ncols(), rng)
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    if is_diagonal(a) {
        return a.diagonal().iter().fold(0.0_f64, |acc, d| acc.max(d.abs()));
    }
    a.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Solve the discrete Lyapunov equation `X = A X Aᵀ + Q` for the stationary
/// covariance of a VAR(1). Errors when `A` is not strictly stable.
pub fn stationary_covariance(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "lyapunov: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let radius = spectral_radius(a);
    if !(radius < 1.0) {
        return Err(Error::NonStationary(radius));
    }
    if is_diagonal(a) {
        let d = a.diagonal();
        return Ok(DMatrix::from_fn(n, n, |i, j| q[(i, j)] / (1.0 - d[i] * d[j])));
    }
    let kron = a.kronecker(a);
    let system = DMatrix::<f64>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_iterator(n * n, q.iter().copied());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::NonStationary(radius))?;
    let mut x = DMatrix::from_iterator(n, n, sol.iter().copied());
    symmetrize(&mut x);
    Ok(x)
}
