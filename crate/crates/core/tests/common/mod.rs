//! Shared test fixtures and the dense joint-Gaussian oracle.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use paleo_bhm::model::{
    AStructure, Calibration, ForcingSeries, GridSpec, InstrumentalSeries, ModelConfig, Params,
    ProxyPanel,
};
use paleo_bhm::ssm::SsmSystem;
use paleo_bhm::Dataset;
use rand::Rng;

/// Moments obtained by stacking every state and observation into one
/// Gaussian vector and conditioning with dense block inversion.
pub struct DenseOracle {
    pub filtered: Vec<(DVector<f64>, DMatrix<f64>)>,
    pub smoothed: Vec<(DVector<f64>, DMatrix<f64>)>,
    /// Joint smoothing mean and covariance of all stacked states.
    pub joint_mean: DVector<f64>,
    pub joint_cov: DMatrix<f64>,
    pub log_likelihood: f64,
}

fn mat_pow(f: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(f.nrows(), f.ncols());
    for _ in 0..k {
        out = f * out;
    }
    out
}

fn condition(
    mean_s: &DVector<f64>,
    mean_o: &DVector<f64>,
    cov_ss: &DMatrix<f64>,
    cov_so: &DMatrix<f64>,
    cov_oo: &DMatrix<f64>,
    o: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    if o.is_empty() {
        return (mean_s.clone(), cov_ss.clone());
    }
    let inv = cov_oo.clone().try_inverse().expect("observation covariance invertible");
    let gain = cov_so * inv;
    let m = mean_s + &gain * (o - mean_o);
    let c = cov_ss - &gain * cov_so.transpose();
    (m, c)
}

pub fn dense_oracle(ssm: &SsmSystem, obs: &[DVector<f64>]) -> DenseOracle {
    let n = ssm.state_dim();
    let t_len = ssm.steps.len();
    let f = &ssm.transition;
    // Marginal moments of each state.
    let mut means = vec![ssm.init_mean.clone()];
    let mut covs = vec![ssm.init_cov.clone()];
    for t in 1..t_len {
        means.push(f * &means[t - 1]);
        covs.push(f * &covs[t - 1] * f.transpose() + &ssm.innovation_cov);
    }
    let ns = n * t_len;
    let mut mean_s = DVector::zeros(ns);
    let mut cov_s = DMatrix::zeros(ns, ns);
    for t in 0..t_len {
        mean_s.rows_mut(t * n, n).copy_from(&means[t]);
        for u in 0..=t {
            let c = mat_pow(f, t - u) * &covs[u];
            cov_s.view_mut((t * n, u * n), (n, n)).copy_from(&c);
            cov_s.view_mut((u * n, t * n), (n, n)).copy_from(&c.transpose());
        }
    }
    // Observation map O = H S + offset + noise.
    let k_total: usize = ssm.steps.iter().map(|s| s.len()).sum();
    let mut h = DMatrix::zeros(k_total, ns);
    let mut offset = DVector::zeros(k_total);
    let mut noise = DMatrix::zeros(k_total, k_total);
    let mut o = DVector::zeros(k_total);
    let mut starts = Vec::new();
    let mut row = 0;
    for (t, step) in ssm.steps.iter().enumerate() {
        starts.push(row);
        for j in 0..step.len() {
            h.view_mut((row, t * n), (1, n)).copy_from(&step.h.row(j));
            offset[row] = step.offset[j];
            noise[(row, row)] = step.noise_var[j];
            o[row] = obs[t][j];
            row += 1;
        }
    }
    starts.push(row);
    let mean_o = &h * &mean_s + &offset;
    let cov_so = &cov_s * h.transpose();
    let cov_oo = &h * &cov_s * h.transpose() + &noise;

    let log_likelihood = if k_total == 0 {
        0.0
    } else {
        let chol = cov_oo.clone().cholesky().expect("SPD");
        let r = &o - &mean_o;
        let z = chol.l().solve_lower_triangular(&r).unwrap();
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        -0.5 * (k_total as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + z.norm_squared())
    };

    let mut filtered = Vec::new();
    let mut smoothed = Vec::new();
    for t in 0..t_len {
        let ms = mean_s.rows(t * n, n).into_owned();
        let css = cov_s.view((t * n, t * n), (n, n)).into_owned();
        let k = starts[t + 1];
        let cso = cov_so.view((t * n, 0), (n, k)).into_owned();
        let coo = cov_oo.view((0, 0), (k, k)).into_owned();
        filtered.push(condition(
            &ms,
            &mean_o.rows(0, k).into_owned(),
            &css,
            &cso,
            &coo,
            &o.rows(0, k).into_owned(),
        ));
        let cso_all = cov_so.view((t * n, 0), (n, k_total)).into_owned();
        smoothed.push(condition(&ms, &mean_o, &css, &cso_all, &cov_oo, &o));
    }
    let (joint_mean, joint_cov) = condition(&mean_s, &mean_o, &cov_s, &cov_so, &cov_oo, &o);
    DenseOracle {
        filtered,
        smoothed,
        joint_mean,
        joint_cov,
        log_likelihood,
    }
}

/// A random small model with a random availability pattern and instrumental
/// rows on a tail window.
pub fn random_case<R: Rng>(
    rng: &mut R,
    g: usize,
    p: usize,
    t_len: usize,
    ar: bool,
    a_structure: AStructure,
) -> (Params, ModelConfig, Dataset) {
    let years: Vec<i32> = (1000..1000 + t_len as i32).collect();
    let mut cfg = ModelConfig::new(
        GridSpec::uniform(g),
        Calibration {
            start_year: years[t_len / 2],
            end_year: years[t_len - 1],
            instrumental_sd: 0.3,
            allow_instrumental_outside: false,
        },
    );
    cfg.structure.proxy_ar_enabled = ar;
    cfg.structure.a_structure = a_structure;
    let a = match a_structure {
        AStructure::Scalar => DMatrix::identity(g, g) * rng.random_range(-0.8..0.8),
        AStructure::Diagonal => DMatrix::from_fn(g, g, |i, j| {
            if i == j {
                rng.random_range(-0.8..0.8)
            } else {
                0.0
            }
        }),
        AStructure::Full => loop {
            let a = DMatrix::from_fn(g, g, |_, _| rng.random_range(-0.5..0.5));
            if paleo_bhm::linalg::spectral_radius(&a) < 0.9 {
                break a;
            }
        },
    };
    let l = DMatrix::from_fn(g, g, |i, j| if i >= j { rng.random_range(-0.5..0.5) } else { 0.0 });
    let sigma = &l * l.transpose() + DMatrix::identity(g, g) * 0.2;
    let params = Params {
        gamma: (0..p).map(|_| rng.random_range(0.3..1.5)).collect(),
        gamma_mean: 0.8,
        gamma_var: 0.3,
        proxy_noise_var: (0..p).map(|_| rng.random_range(0.2..1.0)).collect(),
        proxy_ar: (0..p).map(|_| if ar { rng.random_range(-0.7..0.7) } else { 0.0 }).collect(),
        mu: rng.random_range(-0.5..0.5),
        omega: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        nh_ar: rng.random_range(-0.7..0.7),
        nh_var: rng.random_range(0.1..0.5),
        a,
        sigma,
    };
    let forcings = ForcingSeries {
        solar: (0..t_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        volcanic: (0..t_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        co2: (0..t_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        years: years.clone(),
    };
    let footprints = DMatrix::from_fn(p, g, |i, k| {
        if k == i % g {
            1.0
        } else {
            rng.random_range(0.0..0.3)
        }
    });
    let panel = ProxyPanel {
        ids: (0..p).map(|i| format!("p{i}")).collect(),
        values: DMatrix::from_fn(t_len, p, |_, _| rng.random_range(-2.0..2.0)),
        mask: DMatrix::from_fn(t_len, p, |_, _| rng.random_bool(0.7)),
        footprints,
    };
    let mut instrumental = InstrumentalSeries::none(t_len, g, 0.3);
    for t in t_len / 2..t_len {
        for k in 0..g {
            instrumental.mask[(t, k)] = rng.random_bool(0.8);
            instrumental.obs[(t, k)] = rng.random_range(-2.0..2.0);
        }
    }
    (
        params,
        cfg,
        Dataset {
            panel,
            forcings,
            instrumental,
        },
    )
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// A store holding the given NH paths as draws of a single chain.
pub fn store_of(nh: Vec<Vec<f64>>) -> paleo_bhm::DrawStore {
    let n = nh[0].len();
    let draws = nh
        .into_iter()
        .enumerate()
        .map(|(i, nh)| {
            let p = ModelConfig::new(GridSpec::uniform(1), Calibration {
                start_year: 0,
                end_year: 0,
                instrumental_sd: 1.0,
                allow_instrumental_outside: false,
            })
            .initial_params(0)
            .unwrap();
            paleo_bhm::Draw {
                iteration: i + 1,
                latents: paleo_bhm::LatentStates::zeros(n, 1, &p, &ForcingSeries::zeros((0..n as i32).collect())),
                params: p,
                nh,
            }
        })
        .collect();
    paleo_bhm::DrawStore {
        years: (0..n as i32).collect(),
        chains: vec![paleo_bhm::gibbs::ChainDraws { chain: 0, draws, stats: Default::default() }],
    }
}
