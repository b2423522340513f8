use std::path::Path;
use std::process::{Command, Output};

fn lrxy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrxy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn trace_minimal_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    write(&cfg, "n_sites = 10\n");
    let out = lrxy(&["--config", cfg.to_str().unwrap(), "trace"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,p,q,f"));
    let first: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(first[0], 0.0);
    assert!((first[3] - 0.5).abs() < 1e-12, "{}", first[3]);
}

#[test]
fn trace_grid_count_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let out = lrxy(&[
        "--n-sites",
        "10",
        "--t-max",
        "50",
        "--dt",
        "0.05",
        "--out",
        csv.to_str().unwrap(),
        "trace",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 1001);
    let sidecar = dir.path().join("trace.csv.provenance.json");
    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sidecar).unwrap()).unwrap();
    assert_eq!(prov["provenance"]["tool"], "lrxy");
    assert_eq!(prov["config"]["n_sites"], 10);
    assert!(prov["provenance"]["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn malformed_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    write(&cfg, "n_sites = 10\ncordination = 3\n");
    let out = lrxy(&["--config", cfg.to_str().unwrap(), "trace"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("cordination"), "{}", stderr(&out));
}

#[test]
fn metrics_reference_cell_is_found() {
    let out = lrxy(&[
        "--n-sites",
        "25",
        "--anisotropy",
        "1",
        "--field",
        "1.7",
        "--coordination",
        "12",
        "--falloff",
        "1.5",
        "metrics",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["record"]["status"], "found");
    assert!(v["record"]["t_q"].as_f64().unwrap().is_finite());
    assert!(v["provenance"]["config_hash"].is_string());
}

#[test]
fn short_horizon_is_a_result_not_an_error() {
    let out = lrxy(&["--n-sites", "25", "--t-max", "1", "metrics"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["record"]["status"], "no-advantage-within-horizon");
    assert!(v["record"]["t_q"].is_null());
}

#[test]
fn coordination_equal_to_n_is_rejected() {
    let out = lrxy(&["--n-sites", "25", "--coordination", "25", "metrics"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("coordination"), "{}", stderr(&out));
}

#[test]
fn dump_config_reparses_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    write(
        &cfg,
        "n_sites = 12\nfield = 1.7\naxes = [\"z\", \"alpha\"]\naxis_z = { start = 1, stop = 11, step = 2 }\naxis_alpha = [1.0, 2.5]\n",
    );
    let first = lrxy(&[
        "--config",
        cfg.to_str().unwrap(),
        "--anisotropy",
        "1.3",
        "--dump-config",
        "sweep",
    ]);
    assert!(first.status.success(), "{}", stderr(&first));
    let dumped = dir.path().join("dumped.toml");
    write(&dumped, &stdout(&first));
    let second = lrxy(&[
        "--config",
        dumped.to_str().unwrap(),
        "--dump-config",
        "sweep",
    ]);
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(stdout(&first), stdout(&second));
    assert!(stdout(&first).contains("anisotropy = 1.3"));
}

#[test]
fn sweep_over_coordination_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    write(
        &cfg,
        "n_sites = 25\nanisotropy = 1.0\nfield = 1.7\nfalloff = 1.5\naxes = [\"z\"]\naxis_z = { start = 1, stop = 24, step = 1 }\n",
    );
    let csv = dir.path().join("z.csv");
    let out = lrxy(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--parallelism",
        "4",
        "sweep",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 24);
    let t_q: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(rows.iter().all(|r| &r[8] == "found"));
    // with |g| > 1 some longer range beats nearest-neighbour coupling
    assert!(t_q[1..].iter().any(|&t| t < t_q[0]), "{t_q:?}");
    assert!(dir.path().join("z.csv.provenance.json").exists());

    // f*(N) at full range feeding the fit
    let cfg = dir.path().join("size.toml");
    write(&cfg, "anisotropy = 1.0\nfield = 1.7\nfalloff = 10.0\n");
    let sizes = dir.path().join("size.csv");
    // z = N - 1 tracks N, so each size is its own run
    let mut rows = String::from("N,f_star\n");
    for n in [20, 30, 40, 50, 60] {
        let out = lrxy(&[
            "--config",
            cfg.to_str().unwrap(),
            "--n-sites",
            &n.to_string(),
            "--coordination",
            &(n - 1).to_string(),
            "metrics",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        rows.push_str(&format!(
            "{n},{}\n",
            v["record"]["f_star"].as_f64().unwrap()
        ));
    }
    write(&sizes, &rows);
    let out = lrxy(&["fit", "--input", sizes.to_str().unwrap(), "--fix-a"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["fit"]["fixed_a"], true);
    assert_eq!(v["fit"]["a"], 1.0);
    assert!(v["fit"]["residual"].as_f64().unwrap() < 0.01);
    assert!(v["fit"]["b"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_jsonl_carries_matching_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.toml");
    write(
        &cfg,
        "n_sites = 10\nt_max = 30.0\naxes = [\"z\", \"g\"]\naxis_z = [1, 5]\naxis_g = [0.3, 0.7, 1.5]\noutputs = [\"t_q\"]\n",
    );
    let jsonl = dir.path().join("grid.jsonl");
    let cache = dir.path().join("cache");
    let args = [
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        jsonl.to_str().unwrap(),
        "sweep",
        "--cache-dir",
        cache.to_str().unwrap(),
    ];
    let out = lrxy(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&jsonl).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    let header: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    let hash = header["provenance"]["config_hash"].as_str().unwrap();
    assert!(cache.join(hash).is_dir());
    let row: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert!(row["f_star"].is_null());

    // rerun resumes from the cache and reproduces the records
    let again = lrxy(&args);
    assert!(again.status.success());
    let rerun = std::fs::read_to_string(&jsonl).unwrap();
    assert_eq!(
        rerun.lines().skip(1).collect::<Vec<_>>(),
        lines[1..].to_vec()
    );
}

#[test]
fn oracle_check_report() {
    let out = lrxy(&[
        "--n-sites",
        "8",
        "oracle-check",
        "--samples",
        "5",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["samples"].as_array().unwrap().len(), 5);
    assert!(v["max_deviation"].as_f64().unwrap() < 1e-8);
    assert_eq!(v["passed"], true);
}

#[test]
fn oracle_check_refuses_large_chains() {
    let out = lrxy(&["--n-sites", "25", "oracle-check"]);
    assert!(!out.status.success());
}
