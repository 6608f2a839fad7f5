use ssgde::synthetic::two_class_dataset;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssgde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssgde")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn toy(dir: &Path) {
    let mut data = two_class_dataset(4, 3, 6, 3, 5);
    data.name = "TOY".into();
    data.write_tu(&dir.join("TOY")).unwrap();
}

const SMALL: &[&str] = &[
    "--dataset", "TOY", "--keys", "2", "--sensitivities", "2", "--folds", "2", "--threads", "1",
    "--set", "encoder_dims=8,8,8", "--set", "head_hidden=8",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data-dir", data.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ssgde(&args)
}

#[test]
fn train_eval_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let run = tmp.path().join("run");
    let out = train(tmp.path(), &run, &["--epochs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("TOY:"), "{stdout}");
    for f in ["metrics.csv", "losses.csv", "timings.csv", "summary.txt", "fold_0.ckpt", "fold_1.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("fold,test_size,accuracy"));

    let ckpt = run.join("fold_0.ckpt");
    let preds = tmp.path().join("preds.csv");
    let eval = ssgde(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", "TOY", "--data-dir", tmp.path().to_str().unwrap(),
        "--predictions", preds.to_str().unwrap(),
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("accuracy"));
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 9);

    let diag = tmp.path().join("diag");
    let export = ssgde(&[
        "export-diagnostics", "--checkpoint", ckpt.to_str().unwrap(), "--graph-id", "3", "--out", diag.to_str().unwrap(),
        "--dataset", "TOY", "--data-dir", tmp.path().join("TOY").to_str().unwrap(),
    ]);
    assert!(export.status.success(), "{}", String::from_utf8_lossy(&export.stderr));
    let plans = fs::read_to_string(diag.join("plans.csv")).unwrap();
    assert!(plans.lines().skip(1).all(|l| l.starts_with("3,")));
    assert!(diag.join("attention.csv").exists() && diag.join("sampling.csv").exists());

    let bad = ssgde(&[
        "export-diagnostics", "--checkpoint", ckpt.to_str().unwrap(), "--graph-id", "99", "--out", diag.to_str().unwrap(),
        "--dataset", "TOY", "--data-dir", tmp.path().to_str().unwrap(),
    ]);
    assert!(!bad.status.success());
}

#[test]
fn config_file_with_flag_override_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    toy(tmp.path());
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "epochs = 1\nseed = 3\n").unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let c = cfg.to_str().unwrap();
    assert!(train(tmp.path(), &a, &["--config", c, "--epochs", "3"]).status.success());
    assert!(train(tmp.path(), &b, &["--config", c, "--epochs", "3"]).status.success());
    let losses = fs::read_to_string(a.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 2 * 3, "flag overrides the file");
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train(tmp.path(), &tmp.path().join("x"), &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading TOY"));

    toy(tmp.path());
    let out = train(tmp.path(), &tmp.path().join("x"), &["--set", "nonsense=1"]);
    assert!(!out.status.success());
    let out = ssgde(&["eval", "--checkpoint", tmp.path().join("none").to_str().unwrap()]);
    assert!(!out.status.success());
}
