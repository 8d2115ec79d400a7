use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn blowup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blowup"))
        .args(args)
        .env_remove("BLOWUP_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn params_json(k: &str, c: f64) -> String {
    params_json_gamma(k, c, 1.0)
}

fn params_json_gamma(k: &str, c: f64, g: f64) -> String {
    format!(
        r#"{{
    "beta1": 1.0, "beta2": 1.0, "gamma1": {g}, "gamma2": {g},
    "k": {k},
    "hurst": 0.7, "coupling": "independent", "domain_length": 3.141592653589793,
    "initial": {{"kind": "eigen_multiple", "c1": {c}, "c2": {c}}}
  }}"#
    )
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect()
}

fn bound_value(rows: &[Vec<String>], quantity: &str) -> Option<f64> {
    rows.iter().find(|r| r[1] == quantity).and_then(|r| r[3].parse().ok())
}

#[test]
fn bounds_matches_golden_file() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().display().to_string();
    let o = blowup(&[
        "bounds",
        "--config",
        repo_file("configs/bounds_pinned.json").to_str().unwrap(),
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = fs::read_to_string(tmp.path().join("bounds.csv")).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/bounds_pinned.csv");
    if std::env::var_os("BLOWUP_UPDATE_GOLDEN").is_some() {
        fs::write(&golden, &got).unwrap();
    }
    let want = fs::read_to_string(&golden).expect("golden file present");
    assert_eq!(got, want);
    assert!(tmp.path().join("bounds.txt").exists());
}

#[test]
fn bounds_zero_noise_table_has_closed_form_values() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        &tmp,
        "c.json",
        &format!(r#"{{"params": {}}}"#, params_json("[[0.0, 0.0], [0.0, 0.0]]", 1.0)),
    );
    let out = tmp.path().join("o");
    let o = blowup(&["bounds", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&out.join("bounds.csv"));
    assert_eq!(bound_value(&rows, "lambda"), Some(1.0));
    assert_eq!(bound_value(&rows, "psi_sup"), Some(0.5));
    assert!((bound_value(&rows, "theta_lower").unwrap() - 2.0).abs() < 1e-15);
    assert!((bound_value(&rows, "theta_u1").unwrap() - 8.0 / std::f64::consts::PI).abs() < 1e-14);
}

#[test]
fn bounds_without_coupling_marks_coupled_rows_inapplicable() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        &tmp,
        "c.json",
        &format!(r#"{{"params": {}}}"#, params_json("[[0.2, 0.5], [0.4, 0.3]]", 1.0)),
    );
    let out = tmp.path().join("o");
    let o = blowup(&["bounds", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&out.join("bounds.csv"));
    for q in ["rho1", "rho2", "mu_T", "markov", "concentration", "gamma_law"] {
        let r = rows.iter().find(|r| r[1] == q).unwrap();
        assert_eq!(r[4], "inapplicable", "{q}");
    }
    for q in ["lambda", "exponent_A", "exponent_B", "theta_lower"] {
        let r = rows.iter().find(|r| r[1] == q).unwrap();
        assert_eq!(r[4], "ok", "{q}");
    }
}

#[test]
fn syntax_error_exits_1_with_line_anchor() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(&tmp, "bad.json", "{\n  \"params\": {\n    \"beta1\": 1.0,,\n  }\n}\n");
    let o = blowup(&["bounds", "--config", &cfg]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.json:3:"), "{}", stderr(&o));
}

#[test]
fn unsupported_pipeline_exits_1_pointing_at_campaign() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        r#"{{
  "params": {},
  "campaigns": [
    {{
      "name": "needs_mesh",
      "grid": {{"t_max": 1.0, "n_steps": 16}},
      "n_paths": 4, "seed": 1,
      "pipelines": ["pde_sandwich"]
    }}
  ]
}}"#,
        params_json("[[0.3, 0.4], [0.3, 0.4]]", 1.0)
    );
    let cfg = write(&tmp, "c.json", &text);
    let o = blowup(&["simulate", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let e = stderr(&o);
    assert!(e.contains("c.json:10:") && e.contains("mesh"), "{e}");
}

#[test]
fn empty_config_is_a_usage_error_not_a_validation_failure() {
    let tmp = TempDir::new().unwrap();
    for text in ["", "{}"] {
        let cfg = write(&tmp, "empty.json", text);
        let o = blowup(&["validate", "--config", &cfg]);
        assert_eq!(code(&o), 1, "{text:?}: {}", stderr(&o));
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&blowup(&["simulate"])), 1);
    assert_eq!(code(&blowup(&["frobnicate"])), 1);
    assert_eq!(code(&blowup(&["bounds", "--threads", "many"])), 1);
    assert_eq!(code(&blowup(&["--help"])), 0);
}

#[test]
fn unwritable_output_is_a_runtime_fault() {
    let tmp = TempDir::new().unwrap();
    let blocker = write(&tmp, "file", "x");
    let out = format!("{blocker}/sub");
    let o = blowup(&[
        "bounds",
        "--config",
        repo_file("configs/bounds_pinned.json").to_str().unwrap(),
        "--out",
        &out,
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

fn simulate_config(tmp: &TempDir, k: &str, c: f64, pipelines: &str, t_max: f64, n_paths: u64) -> String {
    let k11: f64 = serde_json::from_str::<[[f64; 2]; 2]>(k).unwrap()[0][0];
    let text = format!(
        r#"{{
  "params": {},
  "campaigns": [
    {{
      "name": "run",
      "grid": {{"t_max": {t_max}, "n_steps": 200}},
      "n_paths": {n_paths}, "seed": 9,
      "pipelines": {pipelines},
      "dump_paths": true
    }}
  ]
}}"#,
        params_json_gamma(k, c, 1.0 + 0.5 * k11 * k11)
    );
    write(tmp, "sim.json", &text)
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run/report.json")).unwrap()).unwrap()
}

#[test]
fn simulate_zero_noise_crosses_at_the_deterministic_time() {
    let tmp = TempDir::new().unwrap();
    // k = 0, γ = λ: θ_lower = 2, so τ* = 2 exactly
    let cfg = simulate_config(&tmp, "[[0.0, 0.0], [0.0, 0.0]]", 1.0, r#"["lower_star"]"#, 4.0, 8);
    let out = tmp.path().join("o");
    let o = blowup(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(&out);
    let s = &r["stopping"][0];
    assert_eq!(s["crossed"], 8);
    assert!((s["mean_time"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(csv_rows(&out.join("run/paths.csv")).len(), 8);
    assert!(out.join("run/summary.csv").exists());
    assert!(out.join("checks.csv").exists() && out.join("stopping.txt").exists());
}

#[test]
fn simulate_reports_are_identical_across_thread_counts_and_follow_seed_override() {
    let tmp = TempDir::new().unwrap();
    let cfg = simulate_config(
        &tmp,
        "[[0.3, 0.4], [0.3, 0.4]]",
        0.8,
        r#"["lower_star", "upper1"]"#,
        10.0,
        200,
    );
    let run = |threads: &str, seed: Option<&str>, out: &str| {
        let out = tmp.path().join(out);
        let mut args = vec![
            "simulate",
            "--config",
            &cfg,
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let o = blowup(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read_to_string(out.join("run/report.json")).unwrap()
    };
    let a = run("1", None, "a");
    let b = run("3", None, "b");
    assert_eq!(a, b);
    let c = run("2", Some("12345"), "c");
    assert_ne!(a, c);
    assert!(c.contains("\"master_seed\": 12345"));
}

#[test]
fn simulate_with_injected_fault_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = simulate_config(
        &tmp,
        "[[0.3, 0.8], [0.3, 0.8]]",
        0.3,
        r#"["lower_star", "upper1"]"#,
        20.0,
        100,
    );
    let out = tmp.path().join("o");
    let ok = blowup(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let bad = blowup(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--inject-fault",
        "negate-rho2",
    ]);
    assert_eq!(code(&bad), 2, "{}", stderr(&bad));
    assert!(stderr(&bad).contains("sandwich_lower_upper"));
}

#[test]
fn validate_quick_profile_passes_and_fault_fails() {
    let tmp = TempDir::new().unwrap();
    let cfg = repo_file("configs/validate_quick.json");
    let out = tmp.path().join("v");
    let ok = blowup(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&ok), 0, "{}\n{}", String::from_utf8_lossy(&ok.stdout), stderr(&ok));
    let rows = csv_rows(&out.join("validation.csv"));
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[1] == "pass"));
    assert!(out.join("validation.json").exists());

    let bad = blowup(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--inject-fault",
        "negate-rho2",
    ]);
    assert_eq!(code(&bad), 2);
    let rows = csv_rows(&out.join("validation.csv"));
    let sandwich = rows.iter().find(|r| r[0] == "sandwich").unwrap();
    assert_eq!(sandwich[1], "FAIL");
}

#[test]
fn example_simulate_config_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = repo_file("configs/simulate_small.json");
    let out = tmp.path().join("s");
    let o = blowup(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}\n{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    for name in ["sandwich", "tail", "pde"] {
        assert!(out.join(name).join("report.json").exists(), "{name}");
    }
    assert!(out.join("sandwich/paths.csv").exists());
}
