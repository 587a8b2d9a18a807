use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_paleo-bhm"));
    c.env_remove("PALEO_BHM_THREADS");
    c
}

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.json")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let out = run(bin().args(["simulate", "--config"]).arg(tiny()).arg("--out-dir").arg(&data));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

fn fit(data: &Path, out_dir: &Path, extra: &[&str]) -> Output {
    run(bin()
        .args(extra)
        .args(["fit", "--config"])
        .arg(tiny())
        .arg("--data-dir")
        .arg(data)
        .arg("--out-dir")
        .arg(out_dir))
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&mut bin())), 1);
    assert_eq!(code(&run(bin().arg("frobnicate"))), 1);
    assert_eq!(code(&run(bin().args(["fit", "--out-dir", "x"]))), 1);
    assert_eq!(code(&run(bin().arg("--help"))), 0);
}

#[test]
fn bad_configs_exit_2_with_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());

    let text = fs::read_to_string(tiny()).unwrap();
    let typo = dir.path().join("typo.json");
    fs::write(&typo, text.replacen("\"burn_in\"", "\"burnin\"", 1)).unwrap();
    let out = run(bin().args(["fit", "--config"]).arg(&typo).arg("--data-dir").arg(&data).arg("--out-dir").arg(dir.path()));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("burnin"), "{}", stderr(&out));

    let mut cfg: serde_json::Value = serde_json::from_str(&text).unwrap();
    cfg["model"]["sampler"]["thin"] = 0.into();
    cfg["model"]["priors"]["nh_var"]["shape"] = (-1.0).into();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, cfg.to_string()).unwrap();
    let out = run(bin().args(["fit", "--config"]).arg(&bad).arg("--data-dir").arg(&data).arg("--out-dir").arg(dir.path()));
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("sampler.thin") && err.contains("nh_var"), "{err}");

    let out = run(bin().args(["fit", "--config"]).arg(tiny()).arg("--data-dir").arg(dir.path().join("nowhere")).arg("--out-dir").arg(dir.path()));
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_fit_baseline_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    for f in ["proxies.csv", "forcings.csv", "instrumental.csv", "footprints.csv", "grid.csv", "truth_nh.csv", "truth_params.json"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let out_dir = dir.path().join("fit");
    let out = fit(&data, &out_dir, &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["draws.jsonl", "summary.csv", "diagnostics.csv", "manifest.json"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 17);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 5);
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 61);

    let out = run(bin().args(["baseline", "--config"]).arg(tiny()).arg("--data-dir").arg(&data).arg("--out-dir").arg(&out_dir));
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = run(bin()
        .args(["evaluate", "--config"])
        .arg(tiny())
        .arg("--data-dir")
        .arg(&data)
        .arg("--draws")
        .arg(out_dir.join("draws.jsonl"))
        .arg("--truth")
        .arg(data.join("truth_nh.csv"))
        .arg("--baseline")
        .arg(out_dir.join("baseline.csv"))
        .arg("--out-dir")
        .arg(&out_dir));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let scores = fs::read_to_string(out_dir.join("scores.csv")).unwrap();
    let rows: Vec<Vec<&str>> = scores.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["bhm", "direct", "insample_mean"]);
    assert_eq!(rows[2][2], "NA");
    let coverage: f64 = rows[0][3].parse().unwrap();
    assert!((0.0..=1.0).contains(&coverage));
    for r in &rows {
        assert!(r[1].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn fits_are_reproducible_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&fit(&data, &a, &[])), 0);
    assert_eq!(code(&fit(&data, &b, &["--threads", "1"])), 0);
    let out = run(bin()
        .env("PALEO_BHM_THREADS", "2")
        .args(["fit", "--config"])
        .arg(tiny())
        .arg("--data-dir")
        .arg(&data)
        .arg("--out-dir")
        .arg(&c));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let draws = |d: &Path| fs::read(d.join("draws.jsonl")).unwrap();
    assert_eq!(draws(&a), draws(&b));
    assert_eq!(draws(&a), draws(&c));

    let seeded = dir.path().join("seeded");
    let out = run(bin()
        .args(["fit", "--seed", "99", "--config"])
        .arg(tiny())
        .arg("--data-dir")
        .arg(&data)
        .arg("--out-dir")
        .arg(&seeded));
    assert_eq!(code(&out), 0);
    assert_ne!(draws(&a), draws(&seeded));
}

#[test]
fn bad_thread_counts_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["--threads", "0", "simulate", "--config"]).arg(tiny()).arg("--out-dir").arg(dir.path()));
    assert_eq!(code(&out), 1);
    let out = run(bin()
        .env("PALEO_BHM_THREADS", "many")
        .args(["simulate", "--config"])
        .arg(tiny())
        .arg("--out-dir")
        .arg(dir.path()));
    assert_eq!(code(&out), 1);
}

#[test]
fn corrupt_draw_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let out_dir = dir.path().join("fit");
    assert_eq!(code(&fit(&data, &out_dir, &[])), 0);
    let path = out_dir.join("draws.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() / 3]).unwrap();
    let out = run(bin()
        .args(["evaluate", "--config"])
        .arg(tiny())
        .arg("--draws")
        .arg(&path)
        .arg("--truth")
        .arg(data.join("truth_nh.csv"))
        .arg("--out-dir")
        .arg(&out_dir));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).to_lowercase().contains("corrupt"), "{}", stderr(&out));
}

#[test]
fn validate_writes_check_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["validate", "--check", "geweke", "--config"]).arg(tiny()).arg("--out-dir").arg(dir.path()));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("geweke.csv")).unwrap();
    assert_eq!(table.lines().count(), 15);
    assert!(!dir.path().join("sbc.csv").exists());
}
