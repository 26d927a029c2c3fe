use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpdr::accountant::{dpdr_schedule, PrivacyLedger, ReleaseEvent, StepRole};
use dpdr::effective_sigma;
use serde_json::Value;
use tempfile::tempdir;

fn dpdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpdr")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, method: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!(
        r#"{{
  "method": "{method}", "total_steps": 25, "switch_step": 10, "batch": 16, "lr": 0.5,
  "clip": {{"c_g": 1.0, "c_perp": 1.0, "c_alpha": 1.0}},
  {extra}
  "dataset": {{"kind": "synthetic", "params": {{"n": 256, "d_in": 5, "n_classes": 2, "margin": 5.0, "seed": 1}}}},
  "seed": 4
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

const PRIVACY: &str = r#""privacy": {"eps": 3.0, "delta": 1e-5, "sigma_alpha": 2.0},"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(config: &Path, out: &Path) -> Output {
    dpdr(&["train", "--config", s(config), "--out", s(out)])
}

#[test]
fn minimal_sgd_run_writes_one_row_per_step() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "sgd.json", "sgd", "");
    let out = dir.path().join("out");
    let o = train(&cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,train_loss,train_accuracy,grad_norm_median,perp_norm_median,diff_norm_median,alpha_vec_norm,cos_prev,eps_cum,wall_ms"
    );
    assert_eq!(lines.count(), 25);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    for key in ["config", "resolved_noise", "final", "privacy", "phase_steps", "seed", "runtime_ms"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    assert!(summary["privacy"]["eps"].is_null());
}

#[test]
fn privacy_block_round_trips_through_the_accountant() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "dpdr.json", "dpdr", PRIVACY);
    let out = dir.path().join("out");
    assert_eq!(code(&train(&cfg, &out)), 0);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let noise = &summary["resolved_noise"];
    let (sg, sp, sa) = (
        noise["sigma_g"].as_f64().unwrap(),
        noise["sigma_perp"].as_f64().unwrap(),
        noise["sigma_alpha"].as_f64().unwrap(),
    );
    // rebuild the ledger from the resolved multipliers
    let mut ledger = PrivacyLedger::new(1e-5).unwrap();
    for e in dpdr_schedule(16.0 / 256.0, 25, 10) {
        let sigma = match e.role {
            StepRole::Gdr => effective_sigma(sp, sa).unwrap(),
            _ => sg,
        };
        ledger.append(ReleaseEvent::new(e.q, sigma, e.steps).unwrap()).unwrap();
    }
    let eps = ledger.to_eps_delta().unwrap().eps;
    assert!((eps - 3.0).abs() <= 3e-3, "eps {eps}");
    // the run appends one event per step, so sums differ only in rounding
    assert!((summary["privacy"]["eps"].as_f64().unwrap() - eps).abs() < 1e-12);
    let phases = &summary["phase_steps"];
    assert_eq!((phases["first"].as_u64(), phases["gdr"].as_u64(), phases["dpsgd"].as_u64()), (Some(1), Some(9), Some(15)));
}

#[test]
fn reruns_and_echoed_configs_are_byte_identical() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "dpdr.json", "dpdr", PRIVACY);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&train(&cfg, &a)), 0);
    assert_eq!(code(&train(&cfg, &b)), 0);
    for f in ["metrics.csv", "summary.json", "perp_snapshot.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    let echo = dir.path().join("echo.json");
    fs::write(&echo, serde_json::to_string(&summary["config"]).unwrap()).unwrap();
    assert_eq!(code(&train(&echo, &c)), 0);
    for f in ["metrics.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(c.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "dpsgd.json", "dpsgd", PRIVACY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&train(&cfg, &a)), 0);
    let o = dpdr(&["train", "--config", s(&cfg), "--out", s(&b), "--seed", "99"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    let summary: Value = serde_json::from_str(&fs::read_to_string(b.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 99);
    assert_eq!(summary["config"]["seed"], 99);
}

#[test]
fn config_errors_exit_2_without_outputs() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"method\": \"sgd\",\n \"total_steps\": }").unwrap();
    let o = train(&bad, &out);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
    assert!(!out.exists());

    let unknown = write_config(dir.path(), "unknown.json", "sgd", r#""momentum": 0.9,"#);
    let o = train(&unknown, &out);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("momentum"), "{}", stderr(&o));
    assert!(!out.exists());

    let both = write_config(
        dir.path(),
        "both.json",
        "dpsgd",
        r#""noise": {"sigma_g": 1.0, "sigma_perp": 1.0, "sigma_alpha": 1.0}, "privacy": {"eps": 3.0, "delta": 1e-5, "sigma_alpha": 2.0},"#,
    );
    assert_eq!(code(&train(&both, &out)), 2);
    let unprivate = write_config(dir.path(), "none.json", "dpsgd", "");
    assert_eq!(code(&train(&unprivate, &out)), 2);
    assert!(!out.exists());
}

#[test]
fn infeasible_budget_exits_3_and_missing_dataset_exits_4() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let tight = write_config(
        dir.path(),
        "tight.json",
        "dpdr",
        r#""privacy": {"eps": 0.05, "delta": 1e-5, "sigma_alpha": 0.2},"#,
    );
    let o = train(&tight, &out);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("infeasible"));

    let path = dir.path().join("cache.json");
    fs::write(
        &path,
        r#"{"method": "sgd", "total_steps": 3, "switch_step": 1, "batch": 4, "lr": 0.1,
            "clip": {"c_g": 1.0, "c_perp": 1.0, "c_alpha": 1.0},
            "dataset": {"kind": "cache", "path": "does-not-exist.csv"}, "seed": 1}"#,
    )
    .unwrap();
    assert_eq!(code(&train(&path, &out)), 4);
    assert!(!out.exists());
}

fn calibrate(eps: &str, switch: &str) -> Value {
    let o = dpdr(&[
        "calibrate", "--eps", eps, "--delta", "1e-5", "--n", "60000", "--batch", "256", "--steps",
        "4700", "--switch", switch, "--sigma-alpha", "2.0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn calibrate_matches_the_mnist_noise_table_range() {
    let v = calibrate("3", "50");
    let perp = v["sigma_perp"].as_f64().unwrap();
    assert!((0.6..=1.1).contains(&perp), "sigma_perp {perp}");
    assert!((v["eps"].as_f64().unwrap() - 3.0).abs() <= 3e-3);
    for key in ["sigma_alpha", "sigma_g", "sigma_eff", "order"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    let doubled = calibrate("6", "50")["sigma_perp"].as_f64().unwrap();
    assert!(doubled < perp);
}

#[test]
fn calibrate_with_switch_one_marks_perp_unused() {
    let v = calibrate("3", "1");
    assert_eq!(v["sigma_perp"], "unused");
    assert!(v["sigma_eff"].is_null());
    assert!(v["sigma_g"].as_f64().unwrap() > 0.0);
}

#[test]
fn calibrate_infeasible_reports_the_floor() {
    let o = dpdr(&[
        "calibrate", "--eps", "0.01", "--delta", "1e-5", "--n", "60000", "--batch", "256", "--steps",
        "4700", "--switch", "50", "--sigma-alpha", "0.3",
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("already spends epsilon"), "{}", stderr(&o));
}

#[test]
fn compare_against_itself_gives_identical_rows_and_matches_train() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "dpdr.json", "dpdr", PRIVACY);
    let out = dir.path().join("cmp");
    let o = dpdr(&["compare", "--configs", s(&cfg), s(&cfg), "--seeds", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("±"), "{stdout}");
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "method,seed,final_accuracy,steps_to_target_loss,eps");
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[1], rows[3]);
    assert_eq!(rows[2], rows[4]);

    // the first seed of a comparison is the configured seed
    let single = dir.path().join("single");
    assert_eq!(code(&train(&cfg, &single)), 0);
    assert_eq!(
        fs::read(single.join("metrics.csv")).unwrap(),
        fs::read(out.join("0-dpdr").join("seed-4").join("metrics.csv")).unwrap()
    );
}

#[test]
fn compare_partial_failure_exits_5() {
    let dir = tempdir().unwrap();
    let ok = write_config(dir.path(), "ok.json", "sgd", "");
    let ablation = write_config(
        dir.path(),
        "big.json",
        "dpsgd",
        r#""noise": {"sigma_g": 1.0, "sigma_perp": 0.0, "sigma_alpha": 0.0},"#,
    );
    let out = dir.path().join("cmp");
    // an output path that cannot be a directory makes the second run fail
    fs::create_dir_all(out.join("1-big")).unwrap();
    fs::write(out.join("1-big").join("seed-4"), "not a directory").unwrap();
    let o = dpdr(&["compare", "--configs", s(&ok), s(&ablation), "--out", s(&out)]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("0-ok seed 4"), "{}", stderr(&o));
}

#[test]
fn plot_data_kinds() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "dpdr.json", "dpdr", PRIVACY);
    let run = dir.path().join("run");
    assert_eq!(code(&train(&cfg, &run)), 0);
    let metrics = run.join("metrics.csv");
    let plot = |kind: &str| {
        let out = dir.path().join(format!("{kind}.dat"));
        let o = dpdr(&["plot-data", "--metrics", s(&metrics), "--kind", kind, "--out", s(&out), "--bins", "5"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read_to_string(out).unwrap()
    };
    let data = |text: &str| -> Vec<Vec<f64>> {
        text.lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split_whitespace().map(|c| c.parse().unwrap()).collect())
            .collect()
    };

    let norms = data(&plot("norms"));
    assert_eq!(norms.len(), 25);
    for row in &norms[1..10] {
        assert!(row[2] <= row[1], "{row:?}");
    }
    assert!(norms[10][2].is_nan());

    let conv = data(&plot("convergence"));
    assert!(conv.windows(2).all(|w| w[0][0] <= w[1][0]));

    let hist = data(&plot("hist-perp"));
    let snapshot = fs::read_to_string(run.join("perp_snapshot.csv")).unwrap();
    let total: f64 = hist.iter().map(|r| r[1]).sum();
    assert_eq!(total as usize, snapshot.lines().count() - 1);

    let o = dpdr(&["plot-data", "--metrics", s(&metrics), "--kind", "scatter", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    let broken = dir.path().join("broken.csv");
    fs::write(&broken, "step,train_loss\n1,0.5\n").unwrap();
    let o = dpdr(&["plot-data", "--metrics", s(&broken), "--kind", "norms", "--out", s(&dir.path().join("y"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("grad_norm_median"), "{}", stderr(&o));
}
