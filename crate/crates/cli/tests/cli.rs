//! End-to-end command tests against the built binary at tiny scale.

use std::path::Path;
use std::process::{Command, Output};

fn flow4d(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flow4d"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = flow4d(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("read {rel}: {e}"))
}

#[test]
fn help_lists_all_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["phantom", "train", "generate", "complete", "eval", "ablate", "render", "rerun"] {
        assert!(text.contains(cmd), "help missing {cmd}");
    }
}

#[test]
fn unknown_flag_fails_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = flow4d(tmp.path(), &["phantom", "gen", "--bogus", "1"]);
    assert!(!out.status.success());
}

#[test]
fn missing_checkpoint_fails_with_single_line_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = flow4d(
        tmp.path(),
        &["generate", "lrf", "--model", "nope.ckpt", "--ae", "nope.ckpt", "--out", "g"],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    let diag: Vec<&str> = err.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(diag.len(), 1, "stderr: {err}");
}

#[test]
fn phantom_gen_writes_sequences_and_config_and_reruns_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &[
        "phantom", "gen", "--subjects", "2", "--frames", "3", "--dims", "16,16,16",
        "--seed", "7", "--out", "data",
    ]);
    let first = read(dir, "data/subject0000.f4dseq");
    assert!(dir.join("data/subject0001.f4dseq").exists());
    assert!(dir.join("data/config.json").exists());

    std::fs::remove_file(dir.join("data/subject0000.f4dseq")).unwrap();
    ok(dir, &["rerun", "--config", "data/config.json"]);
    assert_eq!(first, read(dir, "data/subject0000.f4dseq"));
}

#[test]
fn eval_reports_dim_mismatch_naming_both_dims() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["phantom", "gen", "--subjects", "1", "--frames", "2", "--dims", "16,16,16", "--seed", "0", "--out", "a"]);
    ok(dir, &["phantom", "gen", "--subjects", "1", "--frames", "2", "--dims", "16,16,12", "--seed", "0", "--out", "b"]);
    let out = flow4d(dir, &["eval", "--pred", "a", "--ref", "b", "--metrics", "dsc", "--out", "r.csv"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("16, 16, 16") && err.contains("16, 16, 12"), "stderr: {err}");
}

#[test]
fn render_is_deterministic_and_shows_multiple_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["phantom", "gen", "--subjects", "1", "--frames", "2", "--dims", "32,32,40", "--seed", "3", "--out", "data"]);
    ok(dir, &["render", "--input", "data/subject0000.f4dseq", "--axis", "z", "--out", "r1"]);
    ok(dir, &["render", "--input", "data/subject0000.f4dseq", "--axis", "z", "--out", "r2"]);
    let a = read(dir, "r1/subject0000_f001.ppm");
    assert_eq!(a, read(dir, "r2/subject0000_f001.ppm"));

    // Mid-grid SAX slice of a phantom crosses several chambers.
    let body = &a[a.iter().filter(|&&b| b == b'\n').count().min(0)..];
    let mut colors = std::collections::BTreeSet::new();
    for px in body.chunks_exact(3).skip(5) {
        colors.insert([px[0], px[1], px[2]]);
    }
    assert!(colors.len() >= 3, "found {} colors", colors.len());
}

#[test]
fn render_rejects_out_of_range_index() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["phantom", "gen", "--subjects", "1", "--frames", "2", "--dims", "16,16,16", "--seed", "0", "--out", "data"]);
    let out = flow4d(dir, &["render", "--input", "data/subject0000.f4dseq", "--index", "99", "--out", "r"]);
    assert!(!out.status.success());
}

#[test]
fn train_and_eval_pipeline_runs_and_rerun_reproduces_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["phantom", "gen", "--subjects", "2", "--frames", "3", "--dims", "16,16,16", "--seed", "1", "--out", "data"]);
    ok(dir, &[
        "train", "ae", "--data", "data", "--latent-dim", "8", "--hidden-dim", "32",
        "--epochs", "2", "--seed", "1", "--out", "ae.ckpt",
    ]);
    let ck = read(dir, "ae.ckpt");
    std::fs::remove_file(dir.join("ae.ckpt")).unwrap();
    ok(dir, &["rerun", "--config", "ae.ckpt.config.json"]);
    assert_eq!(ck, read(dir, "ae.ckpt"));

    ok(dir, &[
        "train", "cardiacflow", "--seqs", "data", "--ae", "ae.ckpt",
        "--epochs", "2", "--seed", "1", "--out", "cf.ckpt",
    ]);
    ok(dir, &[
        "generate", "cardiacflow", "--model", "cf.ckpt", "--ae", "ae.ckpt",
        "--n", "2", "--steps", "1", "--seed", "4", "--out", "gen",
    ]);
    ok(dir, &["eval", "--pred", "gen", "--ref", "data", "--metrics", "dsc,cycledsc,vfid", "--out", "report.csv"]);
    let report = String::from_utf8(read(dir, "report.csv")).unwrap();
    assert!(report.starts_with("subject_id,frame,class,metric,value\n"));
    assert!(report.lines().any(|l| l.starts_with("all,,,vfid,")));
    assert!(report.lines().any(|l| l.contains(",cycledsc,")));
}

#[test]
fn completion_pipeline_produces_unknown_free_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["phantom", "gen", "--subjects", "1", "--frames", "2", "--dims", "16,16,16", "--seed", "2", "--out", "data"]);
    ok(dir, &["phantom", "slices", "--data", "data", "--lambda", "1.0", "--seed", "5", "--out", "slices"]);
    ok(dir, &[
        "train", "completion", "--real", "data", "--mix", "1.0:0.0", "--epochs", "1",
        "--batches-per-epoch", "1", "--batch-size", "2", "--seed", "1", "--out", "lc.ckpt",
    ]);
    ok(dir, &["complete", "--model", "lc.ckpt", "--slices", "slices", "--out", "done"]);
    assert!(dir.join("done/subject0000.f4dseq").exists());

    // The completed sequence evaluates against the source without error.
    ok(dir, &["eval", "--pred", "done", "--ref", "data", "--metrics", "dsc", "--out", "r.csv"]);
}

#[test]
fn mismatched_mix_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["phantom", "gen", "--subjects", "1", "--frames", "2", "--dims", "16,16,16", "--seed", "0", "--out", "data"]);
    let out = flow4d(dir, &[
        "train", "completion", "--real", "data", "--mix", "0.5:0.7", "--epochs", "1",
        "--seed", "0", "--out", "lc.ckpt",
    ]);
    assert!(!out.status.success());
    // Synthetic fraction without --lrf/--ae is also rejected.
    let out = flow4d(dir, &[
        "train", "completion", "--real", "data", "--mix", "0.25:0.75", "--epochs", "1",
        "--seed", "0", "--out", "lc.ckpt",
    ]);
    assert!(!out.status.success());
}
