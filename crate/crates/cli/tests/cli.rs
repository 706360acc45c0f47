use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mercer_prior::gp_oracle::{ExactSampler, Kernel};
use mercer_prior::io::{write_ensemble, write_file, Provenance};
use mercer_prior::spectrum::uniform_grid;
use mercer_prior::stats::SampleEnsemble;
use mercer_prior::{Execution, Stream};
use serde_json::Value;

const PRIOR: &str = r#"{
    "task": {"kind": "prior_only", "grid": {"lo": 0, "hi": 1, "points": 3}},
    "network": {"hidden_widths": [8], "wrappers": [{"kind": "times_t"}]},
    "basis": {"family": {"kind": "brownian_motion"}, "truncation": 10},
    "prior": {"n_indices": 4, "m1": 16, "m2": 16},
    "chain": {"steps": 20, "schedule": {"kind": "constant", "epsilon": 1e-4}, "burn_in": 10, "thinning": 5, "seed": 3}
}"#;

const REGRESS: &str = r#"{
    "task": {"kind": "regress", "sigma": 0.2, "grid": {"lo": 0, "hi": 1, "points": 11}},
    "network": {"hidden_widths": [8]},
    "basis": {"family": {"kind": "dirichlet_laplacian_power", "alpha": 2.0}, "truncation": 10, "scale": 100.0},
    "prior": {"n_indices": 3, "m1": 16, "m2": 16},
    "chain": {
        "steps": 300,
        "schedule": {"kind": "constant", "epsilon": 1e-3},
        "burn_in": 100,
        "thinning": 10,
        "seed": 2,
        "map": {"steps": 200, "learning_rate": 0.01}
    },
    "data": "data.csv"
}"#;

fn mercer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mercer")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn data_rows(lines: &str) -> Vec<Vec<f64>> {
    lines
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn sample_prior_writes_two_by_three_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "prior.json", PRIOR);
    let out = dir.path().join("out");
    let r = mercer(&["sample-prior", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(out.join("ensemble.csv")).unwrap();
    assert!(text.starts_with("# config_hash="));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], vec![0.0, 0.5, 1.0]);
    assert!(rows[1..].iter().all(|r| r.len() == 3 && r[0] == 0.0));
    let run = json(&out.join("run.json"));
    assert_eq!(run["seed"], 3);
    assert_eq!(run["report"]["n_samples"], 2);
}

#[test]
fn reruns_are_byte_identical_and_seed_override_keeps_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "prior.json", PRIOR);
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["sample-prior", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(mercer(&args).status.success());
        ["ensemble.csv", "samples.csv", "run.json"].map(|f| fs::read(out.join(f)).unwrap())
    };
    let a = run("a", &[]);
    let b = run("b", &["--sequential"]);
    assert_eq!(a, b);
    let c = run("c", &["--seed", "4"]);
    assert_ne!(a[0], c[0]);
    let first = |bytes: &[u8]| String::from_utf8_lossy(bytes).lines().next().unwrap().to_string();
    assert_eq!(first(&c[0]).split(' ').nth(1), first(&a[0]).split(' ').nth(1));
    assert!(first(&c[0]).ends_with("seed=4"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", &PRIOR.replace("\"m2\": 16", "\"m2\": 16, \"mm\": 2"));
    let r = mercer(&["sample-prior", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("prior") && err.contains("mm"), "{err}");
    assert!(!dir.path().join("ensemble.csv").exists());
}

#[test]
fn fit_regress_writes_band_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (0..30).map(|i| format!("{},{}\n", i as f64 / 29.0, (6.0 * i as f64 / 29.0).sin())).collect();
    write(dir.path(), "data.csv", &format!("t,y\n{rows}"));
    let cfg = write(dir.path(), "fit.json", REGRESS);
    let out = dir.path().join("out");
    let r = mercer(&["fit", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let band = fs::read_to_string(out.join("band_mean.csv")).unwrap();
    assert!(band.lines().nth(1).unwrap() == "grid,mean,lower,upper");
    let rows = data_rows(&band.lines().skip(2).collect::<Vec<_>>().join("\n"));
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r[2] <= r[1] && r[1] <= r[3]));
    let report = json(&out.join("report.json"));
    assert_eq!(report["report"]["task"], "regress");
    assert_eq!(report["report"]["n_samples"], 20);
}

#[test]
fn empty_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "data.csv", "t,y\n");
    let cfg = write(dir.path(), "fit.json", REGRESS);
    let r = mercer(&["fit", "--config", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!dir.path().join("out").join("report.json").exists());
}

#[test]
fn noise_in_data_and_config_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (0..10).map(|i| format!("{},{},0.1\n", i as f64 / 9.0, i as f64)).collect();
    write(dir.path(), "data.csv", &rows);
    let cfg = write(dir.path(), "fit.json", REGRESS);
    let r = mercer(&["fit", "--config", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("sigma"));
}

#[test]
fn cost_high_scenario() {
    let r = mercer(&["cost", "--scenario", "high", "--p", "1000000"]);
    assert!(r.status.success());
    let v: Value = serde_json::from_slice(&r.stdout).unwrap();
    let entries = v["report"]["entries"].as_array().unwrap();
    let get = |m: &str| entries.iter().find(|e| e["method"] == m).unwrap();
    assert_eq!(get("mercer")["flops"].as_f64().unwrap(), 2.50008e13 + 2.5e9);
    let naive = get("naive_gp")["flops"].as_f64().unwrap();
    assert!((naive / (1e18 / 3.0) - 1.0).abs() < 1e-6);
    assert!(get("mercer")["crossover_p"].as_u64().unwrap() > 1_000_000_000);
    assert_eq!(v["report"]["budget"].as_f64().unwrap(), 989e12);
}

#[test]
fn cost_rejects_zero_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cost.json", r#"{"scenario": {"n": 0, "m": 1, "d": 1, "b": 1, "t": 1, "p": 1}}"#);
    assert_eq!(mercer(&["cost", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn stats_of_constant_ensemble_against_zero_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let grid = "0,0.5,1\n";
    let ens = write(dir.path(), "ens.csv", &format!("{grid}{}", "0,0,0\n".repeat(5)));
    let run = |name: &str| {
        let out = dir.path().join(name);
        let r = mercer(&["stats", "--ensemble", &ens, "--kernel", "zero", "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        out
    };
    let a = run("a");
    let map = data_rows(&fs::read_to_string(a.join("error_map.csv")).unwrap());
    assert_eq!(map[0], vec![0.0, 0.5, 1.0]);
    assert!(map[1..].iter().flatten().all(|&e| e == 0.0));
    let report = json(&a.join("stats.json"));
    assert_eq!(report["report"]["max_error"], 0.0);
    let b = run("b");
    for f in ["covariance.csv", "error_map.csv", "ks_profile.csv", "stats.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stats_accepts_exact_gaussian_process_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let grid = uniform_grid(0.0, 1.0, 41);
    let sampler = ExactSampler::new(&Kernel::BrownianMotion, &grid, 1e-10).unwrap();
    let rows = sampler.sample_many(4000, Stream::new(17), Execution::default());
    let ens = SampleEnsemble::from_rows(&rows, grid).unwrap();
    let path = dir.path().join("gp.csv");
    write_file(&path, |w| write_ensemble(w, &ens, &Provenance::new("gp", 17))).unwrap();
    let out = dir.path().join("out");
    let r = mercer(&["stats", "--ensemble", path.to_str().unwrap(), "--kernel", "brownian-motion", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    let report = json(&out.join("stats.json"));
    assert!(report["report"]["max_error"].as_f64().unwrap() < 0.1);
    assert!(report["report"]["slices_passed"].as_u64().unwrap() >= 3);
}

#[test]
fn stats_without_kernel_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let ens = write(dir.path(), "ens.csv", "0,1\n1,2\n3,4\n");
    let r = mercer(&["stats", "--ensemble", &ens, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}
