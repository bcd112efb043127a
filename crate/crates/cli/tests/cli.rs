use std::path::Path;
use std::process::{Command, Output};

use dcdm::tensor::load_grid;

fn dcdm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcdm"))
        .args(args)
        .current_dir(dir)
        .env_remove("DCDM_LLM_ENDPOINT")
        .env_remove("DCDM_LLM_MODEL")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn classify_prints_label() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcdm(dir.path(), &["classify", "The camera pans left over the harbor"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "left");
}

#[test]
fn extend_offline_keeps_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcdm(dir.path(), &["extend-prompt", "a red kite over dunes", "--offline"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("a red kite over dunes"));
}

#[test]
fn help_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        "extend-prompt",
        "classify",
        "gen-noise",
        "attn-check",
        "attn-bench",
        "train-toy",
        "sample",
        "eval-motion",
    ] {
        let o = dcdm(dir.path(), &[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn static_full_coherence_noise() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcdm(
        dir.path(),
        &["gen-noise", "--category", "static", "--lambda", "1", "--shape", "4x8x8x2", "-o", "n.dcdn"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let g = load_grid(dir.path().join("n.dcdn")).unwrap();
    for t in 1..4 {
        assert_eq!(g.frame(t), g.frame(0));
    }
}

#[test]
fn seed_flag_changes_noise() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, out) in [("1", "a.dcdn"), ("2", "b.dcdn")] {
        let o = dcdm(
            dir.path(),
            &["gen-noise", "--category", "left", "--shape", "2x8x8x1", "--seed", seed, "-o", out],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = load_grid(dir.path().join("a.dcdn")).unwrap();
    let b = load_grid(dir.path().join("b.dcdn")).unwrap();
    assert!(!a.bit_eq(&b));
}

#[test]
fn attn_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcdm(dir.path(), &["attn-check", "--trials", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("count_mismatches=0"));
}

#[test]
fn attn_bench_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcdm(
        dir.path(),
        &["attn-bench", "--shots", "8", "--shot-len", "64", "--summary", "4", "-o", "b.csv"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "N_s,L_shot,S,sparse_pairs,dense_pairs,ratio,wall_ms_sparse,wall_ms_dense"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..6], ["8", "64", "4", "47104", "262144", "0.1796875"]);
}

#[test]
fn bad_shape_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcdm(dir.path(), &["gen-noise", "--category", "left", "--shape", "0x8x8x1", "-o", "x.dcdn"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: validation: "), "{}", stderr(&o));
}

#[test]
fn out_of_range_lambda_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcdm(
        dir.path(),
        &["gen-noise", "--category", "left", "--lambda", "1.5", "--shape", "2x8x8x1", "-o", "x.dcdn"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: validation: "), "{}", stderr(&o));
}

#[test]
fn missing_input_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcdm(dir.path(), &["eval-motion", "missing.dcdn"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: runtime: "), "{}", stderr(&o));
}

#[test]
fn config_unknown_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), r#"{"seed": 1, "lamda": 0.5}"#).unwrap();
    let o = dcdm(dir.path(), &["--config", "run.json", "classify", "zoom in"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));
}

#[test]
fn config_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"seed": 4, "lambda": 1.0, "shape": {"T": 3, "H": 8, "W": 8, "C": 1}, "template": {"category": "static"}}"#,
    )
    .unwrap();
    let o = dcdm(dir.path(), &["--config", "run.json", "gen-noise", "-o", "c.dcdn"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g = load_grid(dir.path().join("c.dcdn")).unwrap();
    assert_eq!(g.shape().frames, 3);
    assert_eq!(g.frame(2), g.frame(0));

    let o = dcdm(
        dir.path(),
        &["--config", "run.json", "gen-noise", "--lambda", "0", "-o", "d.dcdn"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let g = load_grid(dir.path().join("d.dcdn")).unwrap();
    assert_ne!(g.frame(2), g.frame(0));
}

#[test]
fn train_sample_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = dcdm(
        d,
        &[
            "train-toy", "--shape", "4x8x8x2", "--samples", "4", "--steps", "10", "-o", "m.dcdk", "--log",
            "loss.txt",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(d.join("loss.txt")).unwrap();
    assert!(log.lines().last().unwrap().starts_with("step=10 loss="), "{log}");

    let o = dcdm(
        d,
        &[
            "sample", "--model", "m.dcdk", "--category", "right", "--shape", "4x8x8x2", "--sub-steps", "3", "-o",
            "v.dcdn",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_grid(d.join("v.dcdn")).unwrap().shape().channels, 2);

    let o = dcdm(d, &["eval-motion", "v.dcdn", "--expect", "right"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("transition=")).count(), 3);
    assert!(out.contains("sign_agreement="));
}

#[test]
fn sample_rejects_channel_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = dcdm(d, &["train-toy", "--shape", "2x8x8x2", "--samples", "2", "--steps", "2", "-o", "m.dcdk"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dcdm(d, &["sample", "--model", "m.dcdk", "--shape", "2x8x8x3", "-o", "v.dcdn"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).starts_with("error: "), "{}", stderr(&o));
}
