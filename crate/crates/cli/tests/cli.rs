use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn raschcat(args: &[&str], stdin: &str, dir: &Path) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_raschcat"))
        .args(args)
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child
        .stdin
        .take()
        .unwrap()
        .write_all(stdin.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

#[test]
fn bank_validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(
        &good,
        r#"[{"id": "a", "difficulty": -1.0}, {"id": "b", "difficulty": 0.5}]"#,
    )
    .unwrap();
    let out = raschcat(
        &["bank", "validate", good.to_str().unwrap()],
        "",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));

    let csv = dir.path().join("good.csv");
    std::fs::write(&csv, "id,difficulty\nx,0.1\ny,2.5\n").unwrap();
    let out = raschcat(&["bank", "validate", csv.to_str().unwrap()], "", dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));

    let dup = dir.path().join("dup.json");
    std::fs::write(
        &dup,
        r#"[{"id": "twin", "difficulty": 0.0}, {"id": "twin", "difficulty": 1.0}]"#,
    )
    .unwrap();
    let out = raschcat(&["bank", "validate", dup.to_str().unwrap()], "", dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("twin"), "{}", text(&out));

    let far = dir.path().join("far.json");
    std::fs::write(&far, r#"[{"id": "a", "difficulty": 7.5}]"#).unwrap();
    let out = raschcat(&["bank", "validate", far.to_str().unwrap()], "", dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = raschcat(
        &[
            "bank",
            "validate",
            far.to_str().unwrap(),
            "--lower",
            "-8",
            "--upper",
            "8",
        ],
        "",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
}

#[test]
fn help_lists_rules_and_bad_arguments_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = raschcat(&["session", "--help"], "", dir.path());
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out);
    for name in [
        "max-info",
        "pw-info",
        "min-epv",
        "bayes-risk-sq",
        "bayes-risk-abs",
    ] {
        assert!(help.contains(name), "{name} missing from help");
    }
    let out = raschcat(
        &["session", "--interactive", "--rule", "nope"],
        "",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let out = raschcat(&["no-such-command"], "", dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn interactive_session_runs_to_a_final_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let answers = "1\n0\n".repeat(15);
    let out = raschcat(&["session", "--interactive"], &answers, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("posterior mean").count(), 30);
    assert!(stdout.contains("final estimate"), "{stdout}");
    assert!(dir.path().join("raschcat-session.json").exists());
}

#[test]
fn end_of_input_saves_and_resume_continues() {
    let dir = tempfile::tempdir().unwrap();
    let out = raschcat(
        &[
            "session",
            "--interactive",
            "--max-trials",
            "6",
            "--save",
            "partial.json",
        ],
        "1\n\nmaybe\n0\n",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("please type 0 or 1"));
    assert!(stdout.contains("--resume partial.json"), "{stdout}");
    assert!(!stdout.contains("final estimate"));

    let out = raschcat(
        &[
            "session",
            "--interactive",
            "--resume",
            "partial.json",
            "--save",
            "done.json",
        ],
        "1\n1\n0\n0\n",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("item 3 of 6"), "{stdout}");
    assert!(stdout.contains("final estimate"), "{stdout}");
    assert!(stdout.contains("6 trials"), "{stdout}");
}

#[test]
fn mode_estimator_with_a_uniform_prior() {
    let dir = tempfile::tempdir().unwrap();
    let out = raschcat(
        &[
            "session",
            "--interactive",
            "--estimator",
            "mode",
            "--prior",
            "uniform",
            "--rule",
            "bayes-risk-abs",
            "--max-trials",
            "5",
        ],
        "1\n0\n1\n0\n1\n",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final estimate"));
    assert!(stdout.contains("(mode, 5 trials"), "{stdout}");
}

#[test]
fn small_simulation_writes_its_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(
        &cfg,
        r#"
n_reps = 3
n_trials = 4
seed = 5

[[rules]]
rule = "min-epv"
estimator = "mean"

[[rules]]
rule = "max-info"
estimator = "mle"

[theta_source]
kind = "explicit"
values = [-1.0, 0.0, 1.0]
"#,
    )
    .unwrap();
    let out = raschcat(
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "out",
            "--jobs",
            "2",
        ],
        "",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let by_trial = std::fs::read_to_string(dir.path().join("out/mse_by_trial.csv")).unwrap();
    assert!(by_trial.starts_with("rule,trial,mse,n"));
    assert_eq!(by_trial.lines().count(), 1 + 2 * 4);
    let by_theta = std::fs::read_to_string(dir.path().join("out/mse_by_theta.csv")).unwrap();
    assert_eq!(by_theta.lines().count(), 1 + 2 * 3);
    let runs = std::fs::read_to_string(dir.path().join("out/runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 2 * 3 * 3);

    let again = raschcat(
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "again",
            "--jobs",
            "1",
        ],
        "",
        dir.path(),
    );
    assert_eq!(again.status.code(), Some(0));
    let repeat = std::fs::read_to_string(dir.path().join("again/mse_by_trial.csv")).unwrap();
    assert_eq!(repeat, by_trial);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n_reps": 0}"#).unwrap();
    let out = raschcat(
        &["simulate", "--config", bad.to_str().unwrap(), "--out", "x"],
        "",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}

#[test]
fn verify_bounds_passes_and_fails_its_negative_control() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dir.path().join("ok.json");
    std::fs::write(
        &ok,
        r#"{"theta_box": {"lower": -2, "upper": 2}, "b_box": {"lower": -1, "upper": 1}, "step": 0.25}"#,
    )
    .unwrap();
    let out = raschcat(
        &[
            "theory",
            "verify-bounds",
            "--config",
            ok.to_str().unwrap(),
            "--out",
            "reports",
        ],
        "",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.is_object());
    assert!(dir.path().join("reports/verify_bounds.json").exists());

    let shrunk = dir.path().join("shrunk.json");
    std::fs::write(
        &shrunk,
        r#"{"theta_box": {"lower": -2, "upper": 2}, "b_box": {"lower": -1, "upper": 1}, "step": 0.25, "upper_constants": [0.01, 0.01, 0.01]}"#,
    )
    .unwrap();
    let out = raschcat(
        &[
            "theory",
            "verify-bounds",
            "--config",
            shrunk.to_str().unwrap(),
        ],
        "",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
}

#[test]
fn small_concentration_run_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("conc.json");
    std::fs::write(
        &cfg,
        r#"{"j_max": 20, "reps": 5, "radius_constant": 100.0, "schedule_points": 4}"#,
    )
    .unwrap();
    let out = raschcat(
        &["theory", "concentration", "--config", cfg.to_str().unwrap()],
        "",
        dir.path(),
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).expect("json report");
    let curve = report["curve"].as_array().unwrap();
    assert!(!curve.is_empty());
    for point in curve {
        let mass = point["mean_mass"].as_f64().unwrap();
        assert!((mass - 1.0).abs() < 1e-9, "{point}");
    }
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
}
