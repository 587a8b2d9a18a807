//! Fixtures shared by the benchmarks.

use paleo_bhm::gibbs::ChainState;
use paleo_bhm::model::{Calibration, ModelConfig};
use paleo_bhm::pseudoproxy::{simulate_experiment, Footprint, ForcingSource, ProxySpec, PseudoproxyDesign, TruthSpec};
use paleo_bhm::{Dataset, GridSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A simulated staircase experiment with `g` cells, `p` proxies and `t` years.
pub fn experiment(g: usize, p: usize, t: usize, proxy_ar: bool) -> (ModelConfig, Dataset) {
    let first_year = 1000;
    let last = first_year + t as i32 - 1;
    let calibration = Calibration {
        start_year: last - (t as i32 / 6).max(5) + 1,
        end_year: last,
        instrumental_sd: 0.1,
        allow_instrumental_outside: false,
    };
    let grid = GridSpec::uniform(g);
    let diag = |x: f64| (0..g).map(|i| (0..g).map(|j| if i == j { x } else { 0.0 }).collect()).collect();
    let design = PseudoproxyDesign {
        grid: grid.clone(),
        first_year,
        n_years: t,
        calibration: calibration.clone(),
        proxies: (0..p)
            .map(|i| ProxySpec {
                footprint: Footprint::Cell { cell: i % g },
                snr: Some(1.0),
                start_year: first_year + (i * t / (2 * p)) as i32,
            })
            .collect(),
        truth: TruthSpec {
            gamma: vec![1.0; p],
            proxy_ar: proxy_ar.then(|| vec![0.3; p]),
            mu: 0.0,
            omega: [0.3, -0.4, 0.4],
            nh_ar: 0.5,
            nh_var: 0.05,
            a: diag(0.5),
            sigma: diag(0.2),
        },
        forcings: ForcingSource::Synthetic { persistence: [0.9, 0.2, 0.98], sd: [0.5; 3] },
    };
    let (_, data) = simulate_experiment(&design, &mut ChaCha8Rng::seed_from_u64(1)).expect("design simulates");
    let mut cfg = ModelConfig::new(grid, calibration);
    cfg.structure.proxy_ar_enabled = proxy_ar;
    (cfg, data)
}

/// A chain state a few scans past initialisation.
pub fn warm_state(cfg: &ModelConfig, data: &Dataset) -> ChainState {
    let mut state = ChainState::initial(cfg, data, 0).expect("initial state");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        paleo_bhm::gibbs::gibbs_step(&mut state, cfg, data, &mut rng).expect("scan");
    }
    state
}
