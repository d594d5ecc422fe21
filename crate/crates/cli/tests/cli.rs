//! End-to-end tests of the `rydpulse` binary: exit codes, artifact
//! shapes, determinism, and resume behaviour. Workloads are kept tiny;
//! physics quality is covered by the library tests.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_rydpulse"))
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("RYDPULSE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A deliberately small experiment: N=1, six segments, three restarts
/// of three iterations.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(
        &path,
        r#"
            seed = 11
            output_dir = "OUT"

            [gate]
            n_targets = 1

            [geometry]
            radius_um = 3.5

            [pulse]
            duration_ns = 150.0
            n_segments = 6

            [noise]
            eval_samples = 8

            [optimizer]
            iterations = 3
            batch_size = 2
            restarts = 2
            eval_interval = 2
            patience = 0

            [sweep]
            durations_ns = [100.0, 150.0]
            radii_um = [3.5]

            [ptm]
            samples = 2
        "#
        .replace("OUT", &dir.join("out").display().to_string()),
    )
    .unwrap();
    path
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn validate_config_accepts_good_and_rejects_bad() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    assert_exit(&run(&["validate-config", "--config", config.to_str().unwrap()]), 0);

    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        read(&config).replace("radius_um = 3.5", "radius_um = -2.0"),
    )
    .unwrap();
    let out = run(&["validate-config", "--config", bad.to_str().unwrap()]);
    assert_exit(&out, 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("radius_um"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, format!("{}\n[typo_section]\nx = 1\n", read(&config))).unwrap();
    assert_exit(&run(&["validate-config", "--config", unknown.to_str().unwrap()]), 2);

    let missing = dir.path().join("nope.toml");
    assert_exit(&run(&["validate-config", "--config", missing.to_str().unwrap()]), 2);
}

#[test]
fn optimize_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    assert_exit(&run(&["optimize", "--config", config.to_str().unwrap()]), 0);

    for name in [
        "pulse.csv",
        "pulse.json",
        "training_result.json",
        "loss_history.csv",
        "manifest.json",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest["status"], "complete");
    for output in manifest["outputs"].as_array().unwrap() {
        assert!(out_dir.join(output.as_str().unwrap()).exists());
    }
    let result = read(&out_dir.join("training_result.json"));
    let report: serde_json::Value = serde_json::from_str(&result).unwrap();
    let fidelity = report["fidelity_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&fidelity));
    assert!(report["per_cz_error"].as_f64().unwrap() >= 0.0);

    // Same config and seed → identical primary outputs.
    let second = dir.path().join("second");
    assert_exit(
        &run(&[
            "optimize",
            "--config",
            config.to_str().unwrap(),
            "--output-dir",
            second.to_str().unwrap(),
        ]),
        0,
    );
    for name in ["pulse.json", "training_result.json", "pulse.csv", "loss_history.csv"] {
        assert_eq!(read(&out_dir.join(name)), read(&second.join(name)), "{name}");
    }

    // --resume with a complete run is a no-op success.
    assert_exit(
        &run(&["optimize", "--config", config.to_str().unwrap(), "--resume"]),
        0,
    );
}

#[test]
fn evaluate_reads_both_formats_and_noise_only_hurts() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    assert_exit(&run(&["optimize", "--config", config.to_str().unwrap()]), 0);

    let pulse = out_dir.join("pulse.json");
    assert_exit(
        &run(&["evaluate", "--pulse", pulse.to_str().unwrap(), "--config", config.to_str().unwrap()]),
        0,
    );
    let noisy: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("evaluation.json"))).unwrap();

    let clean_dir = dir.path().join("clean");
    assert_exit(
        &run(&[
            "evaluate",
            "--pulse",
            pulse.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--no-noise",
            "--output-dir",
            clean_dir.to_str().unwrap(),
        ]),
        0,
    );
    let clean: serde_json::Value =
        serde_json::from_str(&read(&clean_dir.join("evaluation.json"))).unwrap();
    assert!(
        clean["fidelity_mean"].as_f64().unwrap() >= noisy["fidelity_mean"].as_f64().unwrap(),
        "noise-free {} < noisy {}",
        clean["fidelity_mean"],
        noisy["fidelity_mean"]
    );

    // Schedule CSV is also accepted.
    let csv_dir = dir.path().join("csv");
    assert_exit(
        &run(&[
            "evaluate",
            "--pulse",
            out_dir.join("pulse.csv").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--output-dir",
            csv_dir.to_str().unwrap(),
        ]),
        0,
    );

    // Truncated CSV → input error, no report.
    let broken = dir.path().join("broken.csv");
    let full = read(&out_dir.join("pulse.csv"));
    std::fs::write(&broken, &full[..full.len() / 2]).unwrap();
    let broken_dir = dir.path().join("broken_out");
    let out = run(&[
        "evaluate",
        "--pulse",
        broken.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        broken_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    assert!(!broken_dir.join("evaluation.json").exists());
}

#[test]
fn sweep_covers_grid_and_resume_completes_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    assert_exit(&run(&["sweep", "--config", config.to_str().unwrap()]), 0);

    let csv = read(&out_dir.join("sweep.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "duration_ns,radius_um,best_fidelity,restarts,seed");
    assert_eq!(lines.len(), 3, "{csv}");
    assert!(out_dir.join("fidelity_vs_duration_R3p5um.csv").exists());
    assert!(out_dir.join("sweep.json").exists());

    // Simulate an interrupted run: keep only the first cell, then resume.
    let partial = format!("{}\n{}\n", lines[0], lines[1]);
    std::fs::write(out_dir.join("sweep.csv"), &partial).unwrap();
    assert_exit(
        &run(&["sweep", "--config", config.to_str().unwrap(), "--resume"]),
        0,
    );
    assert_eq!(read(&out_dir.join("sweep.csv")), csv);

    // CSV round-trip fixpoint: parse → serialize → parse.
    let reparsed = read(&out_dir.join("sweep.csv"));
    assert_eq!(reparsed, csv);
}

#[test]
fn sweep_without_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let no_sweep = dir.path().join("nosweep.toml");
    let text: String = read(&config)
        .lines()
        .take_while(|l| !l.contains("[sweep]"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&no_sweep, text).unwrap();
    assert_exit(&run(&["sweep", "--config", no_sweep.to_str().unwrap()]), 2);
}

#[test]
fn ptm_self_test_and_pulse_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out_dir = dir.path().join("out");

    assert_exit(
        &run(&["ptm", "--config", config.to_str().unwrap(), "--self-test"]),
        0,
    );
    let deviations = read(&out_dir.join("ptm_deviations.csv"));
    assert_eq!(deviations.lines().count(), 1, "{deviations}"); // header only

    assert_exit(&run(&["optimize", "--config", config.to_str().unwrap()]), 0);
    let ptm_dir = dir.path().join("ptm_out");
    assert_exit(
        &run(&[
            "ptm",
            "--pulse",
            out_dir.join("pulse.json").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--svg",
            "--output-dir",
            ptm_dir.to_str().unwrap(),
        ]),
        0,
    );
    for name in [
        "ptm_real.csv",
        "ptm_ideal.csv",
        "ptm_deviations.csv",
        "ptm_real.svg",
        "ptm_ideal.svg",
    ] {
        assert!(ptm_dir.join(name).exists(), "{name} missing");
    }
    let svg = read(&ptm_dir.join("ptm_real.svg"));
    assert!(svg.starts_with("<svg") && svg.contains("</svg>"));

    // Missing pulse file → input error.
    let out = run(&[
        "ptm",
        "--pulse",
        dir.path().join("absent.json").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn bad_thread_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = Command::new(bin())
        .args(["validate-config", "--config", config.to_str().unwrap()])
        .env("RYDPULSE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
