//! End-to-end runs of the `phasesep` binary against a tiny synthetic
//! dataset, plus the exit-code contract for bad usage and bad data.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn phasesep(dir: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasesep"))
        .current_dir(dir)
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A config small enough that every stage finishes in well under a second.
fn write_micro_config(dir: &Path, name: &str, lambda: f64) -> PathBuf {
    let text = format!(
        r#"
[run]
output_dir = "{out}"
seed = 7

[dataset]
root = "{root}"
n_train = 2
n_test = 1

[model]
n_atoms = 12

[lca]
lambda = {lambda}
steps = 25
dt_over_tau = 0.05

[learning]
readout_epochs = 3

[sweep]
lambdas = [0.4, 0.625]

[synth]
n_clips = 3
seed = 1
"#,
        out = dir.join("out").display(),
        root = dir.join("data").display(),
    );
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn count_files(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .flatten()
        .filter(|e| e.path().extension().is_some_and(|x| x == ext))
        .count()
}

#[test]
fn usage_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_micro_config(dir, "micro.toml", 0.5);

    let help = phasesep(dir, &cfg, &["--help"]);
    assert_eq!(code(&help), 0);
    assert!(stdout(&help).contains("separation"));
    assert_eq!(code(&phasesep(dir, &cfg, &["--version"])), 0);

    assert_eq!(code(&phasesep(dir, &cfg, &["frobnicate"])), 3);
    assert_eq!(code(&phasesep(dir, &cfg, &[])), 3);

    let missing = phasesep(dir, Path::new("/nonexistent/x.toml"), &["prepare"]);
    assert_eq!(code(&missing), 3);

    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "[run]\nlamda = 0.5\n").unwrap();
    let unknown = phasesep(dir, &bad, &["prepare"]);
    assert_eq!(code(&unknown), 3);
    assert!(stderr(&unknown).contains("lamda"), "{}", stderr(&unknown));
}

#[test]
fn missing_artifacts_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_micro_config(dir, "micro.toml", 0.5);

    let train = phasesep(dir, &cfg, &["train"]);
    assert_eq!(code(&train), 2);
    assert!(stderr(&train).contains("prepare"), "{}", stderr(&train));
    assert_eq!(code(&phasesep(dir, &cfg, &["eval"])), 2);
    assert_eq!(code(&phasesep(dir, &cfg, &["denoise"])), 2);
}

#[test]
fn empty_dataset_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_micro_config(dir, "micro.toml", 0.5);
    std::fs::create_dir_all(dir.join("data")).unwrap();

    let prepare = phasesep(dir, &cfg, &["prepare"]);
    assert_eq!(code(&prepare), 2);
    assert!(stderr(&prepare).contains("no .wav clips"), "{}", stderr(&prepare));
}

#[test]
fn denoise_requires_denoised_condition() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg_text = format!(
        "[run]\noutput_dir = \"{}\"\nconditions = [\"phase\", \"no_phase\"]\n",
        dir.join("out").display()
    );
    let cfg = dir.join("partial.toml");
    std::fs::write(&cfg, cfg_text).unwrap();

    let denoise = phasesep(dir, &cfg, &["denoise"]);
    assert_eq!(code(&denoise), 3);
    assert!(stderr(&denoise).contains("denoised"), "{}", stderr(&denoise));
}

#[test]
fn full_pipeline_micro() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_micro_config(dir, "micro.toml", 0.5);
    let out = dir.join("out");

    assert_eq!(code(&phasesep(dir, &cfg, &["synth"])), 0);
    assert_eq!(count_files(&dir.join("data"), "wav"), 3);
    let again = phasesep(dir, &cfg, &["synth"]);
    assert_eq!(code(&again), 3);
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));
    assert_eq!(code(&phasesep(dir, &cfg, &["synth", "--force"])), 0);

    assert_eq!(code(&phasesep(dir, &cfg, &["prepare"])), 0);
    assert!(out.join("manifest.tsv").exists());
    assert!(out.join("manifest.tsv.prov").exists());
    assert_eq!(count_files(&out.join("mixtures"), "wav"), 3);
    assert_eq!(count_files(&out.join("images"), "img"), 9);
    assert_eq!(code(&phasesep(dir, &cfg, &["prepare"])), 3);

    assert_eq!(code(&phasesep(dir, &cfg, &["sweep"])), 0);
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(lines.next(), Some("lambda,mean_sparsity,denoise_error"));
    assert_eq!(lines.count(), 2);

    assert_eq!(code(&phasesep(dir, &cfg, &["train"])), 0);
    for label in ["phase", "no_phase", "no_phase_x2"] {
        assert!(out.join("models").join(format!("{label}.dict")).exists());
    }

    assert_eq!(code(&phasesep(dir, &cfg, &["train-readouts"])), 0);
    assert_eq!(count_files(&out.join("models"), "ro"), 6);

    assert_eq!(code(&phasesep(dir, &cfg, &["separate"])), 0);
    for label in ["phase", "no_phase", "no_phase_x2"] {
        let stems = out.join("stems").join(format!("{label}.single"));
        assert_eq!(count_files(&stems, "wav"), 2, "{label}");
        assert!(stems.join("provenance.prov").exists());
    }

    assert_eq!(code(&phasesep(dir, &cfg, &["denoise"])), 0);
    assert_eq!(count_files(&out.join("stems").join("phase.denoised"), "wav"), 2);

    let eval = phasesep(dir, &cfg, &["eval"]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    assert!(stdout(&eval).contains("Test-set aggregates"));
    let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    let lines: Vec<&str> = scores.lines().collect();
    assert_eq!(
        lines[0],
        "condition,clip_id,sdr_v,sir_v,sar_v,nsdr_v,sdr_a,sir_a,sar_a,nsdr_a"
    );
    assert_eq!(lines.len(), 9);
    for label in ["phase", "no_phase", "no_phase_x2", "denoised"] {
        assert!(scores.contains(&format!("{label},aggregate,")), "{label}");
    }
    let aggregate = std::fs::read_to_string(out.join("aggregate.txt")).unwrap();
    assert_eq!(aggregate.lines().count(), 32);

    let report = phasesep(dir, &cfg, &["report"]);
    assert_eq!(code(&report), 0, "{}", stderr(&report));
    let rendered = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(rendered.contains("Test-set aggregates (vocal), dB:"));
    assert!(rendered.contains("no_phase_x2"));

    assert_eq!(code(&phasesep(dir, &cfg, &["eval"])), 3);

    let other_cfg = write_micro_config(dir, "other.toml", 0.7);
    let mixed = phasesep(dir, &other_cfg, &["eval", "--force"]);
    assert_eq!(code(&mixed), 2);
    assert!(stderr(&mixed).contains("refusing to mix"), "{}", stderr(&mixed));

    let dict_path = out.join("models").join("phase.dict");
    let mut bytes = std::fs::read(&dict_path).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(&dict_path, bytes).unwrap();
    let tampered = phasesep(dir, &cfg, &["separate", "--force"]);
    assert_eq!(code(&tampered), 2);
    assert!(stderr(&tampered).contains("phase.dict"), "{}", stderr(&tampered));
}
