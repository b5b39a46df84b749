//! End-to-end runs of the `vc-adv` binary on a tiny corpus.

use std::path::Path;
use std::process::{Command, Output};

const TINY_CONFIG: &str = "\
train.pretrain_ae_steps = 6
train.pretrain_cls1_steps = 6
train.stage1_steps = 6
train.lambda_ramp_steps = 3
train.stage2_steps = 2
train.batch_size = 2
train.segment_frames = 32
train.log_every = 2
dsp.griffinlim_iters = 4
sample_every = 3
";

fn vc_adv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vc-adv")).current_dir(dir).args(args).output().unwrap()
}

/// Runs with the tiny configuration and asserts success.
fn ok(dir: &Path, args: &[&str]) -> String {
    let mut full = vec!["--config", "tiny.cfg"];
    full.extend_from_slice(args);
    let out = vc_adv(dir, &full);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn train(dir: &Path, stage: &str) {
    ok(dir, &["train", "--stage", stage, "--features", "feats.bin", "--checkpoint-dir", "ckpt"]);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(vc_adv(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(vc_adv(dir.path(), &["train", "--stage", "stage9"]).status.code(), Some(2));
    assert_eq!(vc_adv(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_are_reported_by_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = vc_adv(dir.path(), &["extract-features", "--corpus", "nowhere", "--out", "f.bin"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");

    std::fs::write(dir.path().join("bad.cfg"), "train.nope = 1\n").unwrap();
    let out = vc_adv(dir.path(), &["--config", "bad.cfg", "make-toy-corpus", "--out", "c"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("invalid-argument:"));
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.cfg"), TINY_CONFIG).unwrap();
    ok(d, &["make-toy-corpus", "--out", "corpus", "--utterances", "3", "--min-secs", "1", "--max-secs", "1.5"]);
    ok(d, &["extract-features", "--corpus", "corpus", "--out", "feats.bin"]);
    assert!(d.join("feats.bin.manifest").exists() && d.join("feats.bin.run.json").exists());

    // a later stage needs the earlier one
    let out = vc_adv(d, &["--config", "tiny.cfg", "train", "--stage", "stage1", "--features", "feats.bin", "--checkpoint-dir", "ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("missing-checkpoint:"));

    for stage in ["pretrain-ae", "pretrain-cls", "stage1"] {
        train(d, stage);
    }
    let source = "corpus/spk00/utt000.wav";
    let convert = |stage: &str, out: &str| {
        let args = ["--config", "tiny.cfg", "convert", "--source", source, "--target-speaker", "spk03", "--stage", stage];
        vc_adv(d, &[&args[..], &["--checkpoint-dir", "ckpt", "--out", out]].concat())
    };
    let early = convert("v2", "early.wav");
    assert_eq!(early.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&early.stderr).starts_with("missing-stage2-checkpoint:"));

    train(d, "stage2");
    assert!(convert("v1", "v1.wav").status.success());
    ok(d, &["convert", "--source", source, "--target-speaker", "2", "--stage", "v2", "--checkpoint-dir", "ckpt", "--out", "v2.wav", "--plot", "v2.png"]);
    ok(d, &["eval-gv", "--features", "feats.bin", "--checkpoint-dir", "ckpt", "--out", "gv"]);
    let probe = ok(d, &["probe", "--features", "feats.bin", "--checkpoint", "ckpt/stage1.ckpt", "--out", "probe.txt", "--steps", "5"]);
    ok(d, &["plot-spec", "--input", source, "v2.wav", "--out", "specs.png"]);

    for f in [
        "ckpt/pretrain-ae.log",
        "ckpt/stage2.log",
        "ckpt/stage2.ckpt",
        "ckpt/stage1.run.json",
        "ckpt/samples/stage1_000003.wav",
        "ckpt/samples/stage1_000003.png",
        "v1.wav",
        "v2.wav",
        "v2.png",
        "v2.wav.run.json",
        "gv/gv_table.txt",
        "gv/gv_compare.png",
        "specs.png",
    ] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    let table = std::fs::read_to_string(d.join("gv/gv_table.txt")).unwrap();
    for system in ["(a) autoencoder alone", "(b) stage 1 alone", "(c) proposed"] {
        assert!(table.contains(system), "{table}");
    }
    assert_eq!(std::fs::read_to_string(d.join("probe.txt")).unwrap(), probe);
    assert!(probe.starts_with("stage1\t"));

    // a checkpoint from a different architecture is refused
    std::fs::write(d.join("wide.cfg"), format!("{TINY_CONFIG}model.scale = 0.25\n")).unwrap();
    let out = vc_adv(d, &["--config", "wide.cfg", "convert", "--source", source, "--target-speaker", "1", "--stage", "v1", "--checkpoint-dir", "ckpt", "--out", "x.wav"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("config-mismatch:"));
}
