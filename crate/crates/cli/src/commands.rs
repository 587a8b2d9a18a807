use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use paleo_bhm::baseline::fit_staircase;
use paleo_bhm::evaluation::{correlation, insample_mean_benchmark, interval_coverage, rmse, sbc_check};
use paleo_bhm::gibbs::diagnostics::chain_diagnostics;
use paleo_bhm::gibbs::geweke::{geweke_test, small_instance};
use paleo_bhm::io::inputs::{read_series, write_series};
use paleo_bhm::io::manifest::{hash_file, sha256_hex, unix_now, ChainSummary};
use paleo_bhm::io::summary::write_summary;
use paleo_bhm::io::{parse_inputs, read_draws, summarize, write_draws, write_inputs, InputPaths, ParsedInputs, RunConfig, RunManifest};
use paleo_bhm::pseudoproxy::simulate_experiment;
use paleo_bhm::{run_chains, Error};

use crate::{Check, Common};

pub enum Failure {
    Core(Error),
    /// A validation check ran but did not pass.
    Checks(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type Outcome = Result<(), Failure>;

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.model.sampler.seed = seed;
    }
    if let Some(chains) = common.chains {
        cfg.model.sampler.n_chains = chains;
    }
    fs::create_dir_all(&common.out_dir)?;
    Ok(cfg)
}

fn input_paths(cfg: &RunConfig, data_dir: Option<&Path>) -> Option<InputPaths> {
    data_dir.map(InputPaths::in_dir).or_else(|| cfg.inputs.clone())
}

fn read_inputs(cfg: &mut RunConfig, data_dir: Option<&Path>) -> Result<(InputPaths, ParsedInputs), Error> {
    let paths = input_paths(cfg, data_dir)
        .ok_or_else(|| Error::InvalidArgument("no inputs: set `inputs` in the config or pass --data-dir".into()))?;
    let parsed = parse_inputs(&paths, cfg.model.calibration.instrumental_sd)?;
    if parsed.grid != cfg.model.grid {
        log::info!("using area weights from {}", paths.grid.display());
        cfg.model.grid = parsed.grid.clone();
    }
    Ok((paths, parsed))
}

/// NH instrumental mean per year, NaN where incomplete.
fn instrumental_nh(parsed: &ParsedInputs) -> Vec<f64> {
    let w = parsed.grid.weights();
    (0..parsed.data.n_years())
        .map(|t| parsed.data.instrumental.nh_mean(&w, t).unwrap_or(f64::NAN))
        .collect()
}

pub fn simulate(common: &Common) -> Outcome {
    let cfg = load(common)?;
    let design = cfg
        .pseudoproxy
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config has no `pseudoproxy` design".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.sampler.seed);
    let (truth, data) = simulate_experiment(design, &mut rng)?;
    let paths = InputPaths::in_dir(&common.out_dir);
    write_inputs(&paths, &data, &design.grid)?;
    let nh = truth.latents.nh_series(&design.grid.weights());
    write_series(&common.out_dir.join("truth_nh.csv"), &data.forcings.years, "nh", &nh)?;
    fs::write(common.out_dir.join("truth_params.json"), serde_json::to_string_pretty(&truth.params).map_err(Error::from)?)?;
    println!("simulated {} years, {} proxies into {}", data.n_years(), data.panel.n_proxies(), common.out_dir.display());
    Ok(())
}

pub fn fit(common: &Common, data_dir: Option<&Path>) -> Outcome {
    let started = unix_now();
    let mut cfg = load(common)?;
    let (paths, parsed) = read_inputs(&mut cfg, data_dir)?;
    let store = run_chains(&cfg.model, &parsed.data)?;
    write_draws(&store, &common.out_dir.join("draws.jsonl"))?;
    let mut diagnostics = Vec::new();
    if !store.is_empty() {
        write_summary(&summarize(&store, cfg.evaluation.level)?, &common.out_dir.join("summary.csv"))?;
        if store.chains.len() >= 2 {
            let n = store.years.len();
            diagnostics = chain_diagnostics(&store, &cfg.model.structure, &[0, n / 2, n - 1])?;
            let mut text = String::from("name,rhat,ess\n");
            for d in &diagnostics {
                let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
                text.push_str(&format!("{},{},{}\n", d.name, f(d.rhat), f(d.ess)));
            }
            fs::write(common.out_dir.join("diagnostics.csv"), text)?;
            if let Some(worst) = diagnostics.iter().filter_map(|d| d.rhat).reduce(f64::max) {
                if worst > 1.01 {
                    log::warn!("max split R-hat {worst:.3} exceeds 1.01");
                }
            }
        }
    } else {
        log::warn!("no draws kept (n_iter equals burn_in)");
    }
    let manifest = RunManifest {
        config_sha256: sha256_hex(&fs::read(&common.config)?),
        inputs: paths.all().into_iter().map(hash_file).collect::<Result<_, _>>()?,
        seed: cfg.model.sampler.seed,
        software_version: env!("CARGO_PKG_VERSION").into(),
        started,
        finished: unix_now(),
        proxy_scaling: parsed.scaling,
        chains: store
            .chains
            .iter()
            .map(|c| ChainSummary { chain: c.chain, n_draws: c.draws.len(), stats: c.stats.clone() })
            .collect(),
        diagnostics,
    };
    manifest.write(&common.out_dir.join("manifest.json"))?;
    println!("{} draws from {} chains written to {}", store.n_draws(), store.chains.len(), common.out_dir.display());
    Ok(())
}

pub fn baseline(common: &Common, data_dir: Option<&Path>) -> Outcome {
    let mut cfg = load(common)?;
    let (_, parsed) = read_inputs(&mut cfg, data_dir)?;
    let cal = &cfg.model.calibration;
    let years = &parsed.data.forcings.years;
    let target = instrumental_nh(&parsed);
    let fit = fit_staircase(
        &parsed.data.panel,
        years,
        &target,
        (cal.start_year, cal.end_year),
        cfg.baseline.ridge_penalty,
    )?;
    write_series(&common.out_dir.join("baseline.csv"), years, "nh", &fit.prediction)?;
    fs::write(
        common.out_dir.join("baseline_models.json"),
        serde_json::to_string_pretty(&fit.models).map_err(Error::from)?,
    )?;
    println!("{} direct models fitted", fit.models.len());
    Ok(())
}

pub fn evaluate(
    common: &Common,
    draws: &Path,
    truth: &Path,
    baseline: Option<&Path>,
    data_dir: Option<&Path>,
) -> Outcome {
    let mut cfg = load(common)?;
    let store = read_draws(draws)?;
    let (truth_years, truth_nh) = read_series(truth, "nh")?;
    if truth_years != store.years {
        return Err(Error::Shape("truth years differ from the draw years".into()).into());
    }
    let cal = cfg.model.calibration.clone();
    let recon: Vec<usize> = (0..truth_years.len()).filter(|&t| truth_years[t] < cal.start_year).collect();
    let calib: Vec<usize> = (0..truth_years.len()).filter(|&t| cal.contains(truth_years[t])).collect();
    if recon.is_empty() {
        return Err(Error::InvalidArgument("no years before the calibration window".into()).into());
    }
    let pick = |xs: &[f64], idx: &[usize]| idx.iter().map(|&t| xs[t]).collect::<Vec<_>>();
    let truth_r = pick(&truth_nh, &recon);
    let target = match input_paths(&cfg, data_dir) {
        Some(_) => instrumental_nh(&read_inputs(&mut cfg, data_dir)?.1),
        None => truth_nh.clone(),
    };
    let calib_target: Vec<f64> = pick(&target, &calib).into_iter().filter(|x| x.is_finite()).collect();

    let mut rows: Vec<(String, f64, Option<f64>, Option<f64>)> = Vec::new();
    let post = pick(&store.nh_mean(), &recon);
    let coverage = interval_coverage(&store, &truth_nh, &recon, cfg.evaluation.level)?;
    rows.push(("bhm".into(), rmse(&post, &truth_r)?, correlation(&post, &truth_r), Some(coverage.rate)));
    if let Some(path) = baseline {
        let (years, values) = read_series(path, "nh")?;
        if years != truth_years {
            return Err(Error::Shape("baseline years differ from the truth years".into()).into());
        }
        let b = pick(&values, &recon);
        rows.push(("direct".into(), rmse(&b, &truth_r)?, correlation(&b, &truth_r), None));
    }
    let bench = insample_mean_benchmark(&calib_target, recon.len())?;
    rows.push(("insample_mean".into(), rmse(&bench, &truth_r)?, correlation(&bench, &truth_r), None));

    let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
    let mut text = String::from("method,rmse,correlation,coverage\n");
    for (m, r, c, cov) in &rows {
        text.push_str(&format!("{m},{r},{},{}\n", f(*c), f(*cov)));
    }
    fs::write(common.out_dir.join("scores.csv"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn validate(common: &Common, check: Check) -> Outcome {
    let mut cfg = load(common)?;
    let (model, template) = match input_paths(&cfg, None) {
        Some(_) => {
            let (_, parsed) = read_inputs(&mut cfg, None)?;
            (cfg.model.clone(), parsed.data)
        }
        None => small_instance(),
    };
    let mut failures = Vec::new();
    if matches!(check, Check::Geweke | Check::All) {
        let mut settings = cfg.validation.geweke.clone().unwrap_or_default();
        if let Some(seed) = common.seed {
            settings.seed = seed;
        }
        let stats = geweke_test(&model, &template, &settings)?;
        let mut text = String::from("name,marginal_mean,successive_mean,z\n");
        for s in &stats {
            text.push_str(&format!("{},{},{},{}\n", s.name, s.marginal_mean, s.successive_mean, s.z));
            let ok = s.z.abs() < 4.0;
            println!("geweke {:<14} z={:+.3} {}", s.name, s.z, if ok { "ok" } else { "FAIL" });
            if !ok {
                failures.push(format!("geweke {}: |z| = {:.3}", s.name, s.z.abs()));
            }
        }
        fs::write(common.out_dir.join("geweke.csv"), text)?;
    }
    if matches!(check, Check::Sbc | Check::All) {
        let mut settings = cfg.validation.sbc.clone().unwrap_or_default();
        if let Some(seed) = common.seed {
            settings.seed = seed;
        }
        let results = sbc_check(&model, &template, &settings)?;
        let mut text = String::from("name,chi2,p_value,histogram\n");
        for r in &results {
            let hist: Vec<String> = r.histogram.iter().map(|h| h.to_string()).collect();
            text.push_str(&format!("{},{},{},{}\n", r.name, r.chi2, r.p_value, hist.join(" ")));
            let ok = r.p_value > 0.001;
            println!("sbc    {:<14} p={:.4} {}", r.name, r.p_value, if ok { "ok" } else { "FAIL" });
            if !ok {
                failures.push(format!("sbc {}: p = {:.2e}", r.name, r.p_value));
            }
        }
        fs::write(common.out_dir.join("sbc.csv"), text)?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Checks(format!("validation failed:\n  {}", failures.join("\n  "))))
    }
}
