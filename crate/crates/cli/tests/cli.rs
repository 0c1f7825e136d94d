use std::path::{Path, PathBuf};
use std::process::Command;

use mosco_cli::config::{describe, StudyConfig};
use mosco_cli::{csv_body, list_studies, run, runner, RunOptions, EXIT_CONFIG, EXIT_FLAG, EXIT_OK};

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mosco"))
}

#[test]
fn every_bundled_example_runs_with_the_documented_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in std::fs::read_dir(example("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        seen += 1;
        let cfg = StudyConfig::load(&path).unwrap();
        let opts = RunOptions {
            out: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        };
        let o = run(&path, &opts).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let negative = path
            .file_stem()
            .unwrap()
            .to_str()
            .unwrap()
            .contains("negative_control");
        assert_eq!(
            o.exit_code,
            if negative { EXIT_FLAG } else { EXIT_OK },
            "{}",
            path.display()
        );
        let csv = std::fs::read_to_string(o.csv_path.unwrap()).unwrap();
        assert_eq!(
            csv.lines().count() - 1,
            runner::expected_rows(&cfg).unwrap(),
            "{}",
            path.display()
        );
    }
    assert!(seen >= 8);
}

#[test]
fn contact_example_has_one_row_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "run",
            example("vi_contact_1d.toml").to_str().unwrap(),
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let csv = std::fs::read_to_string(dir.path().join("vi_contact_1d.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "study,n,h,gamma,delta,err_sup,err_l2,err_energy,violation,iterations,residual,flag"
    );
    assert_eq!(csv.lines().count(), 5);
    let meta = std::fs::read_to_string(dir.path().join("vi_contact_1d.meta.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&meta).unwrap();
    assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64);
    assert!(v["wall_time_s"].as_f64().unwrap() >= 0.0);
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn negative_tolerance_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(example("vi_contact_1d.toml"))
        .unwrap()
        .replace("tol = 1e-12", "tol = -1.0");
    let p = write_config(dir.path(), "bad.toml", &text);
    let out = bin()
        .args(["run", p.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.tol"));
    assert!(!dir.path().join("bad.csv").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let text =
        std::fs::read_to_string(example("vi_contact_1d.toml")).unwrap() + "\n[extra]\nfoo = 1\n";
    let e = StudyConfig::from_toml(&text).unwrap_err();
    assert!(e.to_string().contains("extra"), "{e}");
    let text = std::fs::read_to_string(example("vi_contact_1d.toml"))
        .unwrap()
        .replace("constant = 8.0", "constant = 8.0\nlinear = 1.0");
    assert!(StudyConfig::from_toml(&text).is_err());
}

#[test]
fn missing_required_section_is_reported() {
    let e =
        StudyConfig::from_toml("kind = \"mosco\"\n[mesh]\ncells = [8]\n[load]\nconstant = 1.0\n")
            .unwrap_err();
    assert_eq!(e.exit_code(), EXIT_CONFIG);
    assert!(e.to_string().contains("constraint"), "{e}");
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "run",
            example("mosco_shifted_obstacle.toml").to_str().unwrap(),
            "--dry-run",
            "--out",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let plan = String::from_utf8_lossy(&out.stdout);
    assert!(
        plan.contains("kind: mosco") && plan.contains("rows: 10"),
        "{plan}"
    );
    assert!(!out_dir.exists());
}

#[test]
fn list_and_describe() {
    assert_eq!(list_studies().len(), 8);
    let out = bin().arg("list").output().unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 8);
    let text = describe("mosco").unwrap();
    for key in ["load", "constraint", "schedule"] {
        assert!(text.contains(key));
    }
    let out = bin().args(["describe", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("vi") && err.contains("stability") && err.contains("impulse"),
        "{err}"
    );
}

#[test]
fn plot_is_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out: Some(dir.path().to_path_buf()),
        plot: true,
        ..RunOptions::default()
    };
    run(&example("mosco_shifted_obstacle.toml"), &opts).unwrap();
    let svg = std::fs::read_to_string(dir.path().join("mosco_shifted_obstacle.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn thread_count_does_not_change_the_table() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = example("stability_superposition.toml");
    for (dir, threads) in [(&a, "1"), (&b, "4")] {
        let out = bin()
            .env("MOSCO_THREADS", threads)
            .args(["run", cfg.to_str().unwrap(), "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(EXIT_OK));
    }
    let read = |d: &tempfile::TempDir| {
        std::fs::read_to_string(d.path().join("stability_superposition.csv")).unwrap()
    };
    assert_eq!(csv_body(&read(&a)), csv_body(&read(&b)));
}

#[test]
fn invalid_thread_count_is_a_config_error() {
    let out = bin()
        .env("MOSCO_THREADS", "zero")
        .arg("list")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}
