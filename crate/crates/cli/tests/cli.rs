use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fcbfuse::data::synthetic::{generate, write_dataset, BlobShape};

fn fcbfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcbfuse"))
        .args(args)
        .env_remove("FCBFUSE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn dataset(root: &Path, name: &str, n: usize, shape: BlobShape) -> PathBuf {
    let dir = root.join(name);
    write_dataset(&dir, &generate(n, 64, 11, shape)).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy network at 32×32 for speed.
fn train_args<'a>(data: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["train", "--data", data, "--out", out, "--seed", "5", "--size", "32", "32", "--batch-size", "4"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn train_on_four_pairs_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "four", 4, BlobShape::Circle);
    let out = tmp.path().join("run");
    let o = fcbfuse(&train_args(s(&data), s(&out), &["--epochs", "2", "--split", "all"]));
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    for f in ["best.ckpt", "train_log.csv", "split.tsv", "run_config.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,train_loss,val_mdice,lr"));
    assert_eq!(log.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(out.join("split.tsv")).unwrap().lines().count(), 4);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "d", 4, BlobShape::Circle);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = fcbfuse(&train_args(s(&data), s(out), &["--epochs", "1", "--split", "all", "--threads", "1"]));
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    }
    for f in ["train_log.csv", "best.ckpt", "split.tsv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let img = data.join("images/circle_0000.png");
    for out in [&a, &b] {
        let o = fcbfuse(&["predict", "--checkpoint", s(&out.join("best.ckpt")), "--out", s(&out.join("pred")), s(&img)]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    }
    assert_eq!(
        std::fs::read(a.join("pred/circle_0000_mask.png")).unwrap(),
        std::fs::read(b.join("pred/circle_0000_mask.png")).unwrap()
    );
}

#[test]
fn missing_masks_dir_is_a_data_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "d", 4, BlobShape::Circle);
    std::fs::remove_dir_all(data.join("masks")).unwrap();
    let o = fcbfuse(&train_args(s(&data), s(&tmp.path().join("run")), &["--epochs", "1"]));
    assert_eq!(code(&o), 3);
    assert!(text(&o.stderr).contains(s(&data.join("masks"))), "{}", text(&o.stderr));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "d", 4, BlobShape::Circle);
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, "{ \"seed\": 1, \"epochs\": ").unwrap();
    assert_eq!(code(&fcbfuse(&["train", "--config", s(&cfg)])), 2);
    let no_seed = fcbfuse(&["train", "--data", s(&data), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&no_seed), 2);
    assert!(text(&no_seed.stderr).contains("seed"));
    assert_eq!(code(&fcbfuse(&["train", "--seed", "1", "--preset", "nope", "--print-config"])), 2);
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_fcbfuse"))
        .args(["gradcheck", "--list"])
        .env("FCBFUSE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&bad_threads), 2);
}

#[test]
fn config_file_with_flag_overrides_and_print_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"model": "toy-64", "seed": 9, "epochs": 7, "architecture": "ssformer-i"}"#).unwrap();
    let o = fcbfuse(&["train", "--config", s(&cfg), "--epochs", "3", "--threads", "2", "--print-config"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["epochs"], 3);
    assert_eq!(v["seed"], 9);
    assert_eq!(v["threads"], 2);
    assert_eq!(v["model"]["architecture"], "ssformer-i");
    assert_eq!(v["model"]["input_hw"], serde_json::json!([64, 64]));
    let echoed = tmp.path().join("echo.json");
    std::fs::write(&echoed, &o.stdout).unwrap();
    let again = fcbfuse(&["train", "--config", s(&echoed), "--print-config"]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn eval_split_generalisation_and_size_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let circles = dataset(tmp.path(), "circles", 12, BlobShape::Circle);
    let ellipses = dataset(tmp.path(), "ellipses", 5, BlobShape::Ellipse);
    let run = tmp.path().join("run");
    let o = fcbfuse(&train_args(s(&circles), s(&run), &["--epochs", "1"]));
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let ckpt = run.join("best.ckpt");

    let o = fcbfuse(&["eval", "--checkpoint", s(&ckpt), "--data", s(&circles), "--split", "test"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("mDice\tmIoU\tmPrec.\tmRec."), "{out}");
    let csv = std::fs::read_to_string(run.join("test_metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("id,dice,iou,precision,recall"));
    let test_ids: Vec<String> = std::fs::read_to_string(run.join("split.tsv"))
        .unwrap()
        .lines()
        .filter(|l| l.ends_with("\ttest"))
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    assert_eq!(csv.lines().count() - 1, test_ids.len());

    let rep = tmp.path().join("gen");
    let o = fcbfuse(&["eval", "--checkpoint", s(&ckpt), "--data", s(&ellipses), "--full-dataset", "--out", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rep.join("full_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["name"], "train:circles→test:ellipses");
    assert_eq!(summary["count"], 5);
    assert_eq!(summary["conventions"]["both_empty"], 1.0);
    assert_eq!(std::fs::read_to_string(rep.join("full_metrics.csv")).unwrap().lines().count(), 6);

    let o = fcbfuse(&["eval", "--checkpoint", s(&ckpt), "--data", s(&circles), "--size", "64", "64"]);
    assert_eq!(code(&o), 5, "{}", text(&o.stderr));
    let missing = fcbfuse(&["eval", "--checkpoint", s(&run.join("nope.ckpt")), "--data", s(&circles)]);
    assert_eq!(code(&missing), 5);
}

#[test]
fn predict_outputs_and_per_file_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dataset(tmp.path(), "d", 4, BlobShape::Circle);
    let run = tmp.path().join("run");
    assert_eq!(code(&fcbfuse(&train_args(s(&data), s(&run), &["--epochs", "1", "--split", "all"]))), 0);
    let ckpt = run.join("best.ckpt");
    let bad = tmp.path().join("broken.png");
    std::fs::write(&bad, b"not an image").unwrap();
    let pred = tmp.path().join("pred");
    let img0 = data.join("images/circle_0000.png");
    let o = fcbfuse(&[
        "predict", "--checkpoint", s(&ckpt), "--out", s(&pred), "--dump-features", "--ablate-fcb", s(&bad), s(&img0),
    ]);
    assert_ne!(code(&o), 0);
    assert!(text(&o.stderr).contains("broken.png"));
    let mut names: Vec<String> =
        std::fs::read_dir(&pred).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(
        names,
        ["circle_0000_fcb.png", "circle_0000_mask.png", "circle_0000_tb.png", "circle_0000_withfcb.png", "circle_0000_withoutfcb.png"]
    );
    for n in ["circle_0000_mask.png", "circle_0000_withfcb.png", "circle_0000_withoutfcb.png"] {
        let m = image::open(pred.join(n)).unwrap().to_luma8();
        assert_eq!(m.dimensions(), (32, 32));
        assert!(m.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255), "{n}");
    }
    assert_eq!(image::open(pred.join("circle_0000_tb.png")).unwrap().to_luma8().dimensions(), (8, 8));

    let src = tmp.path().join("src");
    let o = fcbfuse(&["predict", "--checkpoint", s(&ckpt), "--out", s(&src), "--resize-to-source", s(&data.join("images"))]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert_eq!(std::fs::read_dir(&src).unwrap().count(), 4);
    let m = image::open(src.join("circle_0003_mask.png")).unwrap().to_luma8();
    assert_eq!(m.dimensions(), (64, 64));
    assert!(m.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
}

#[test]
fn gradcheck_suite_passes_and_lists_every_component() {
    let o = fcbfuse(&["gradcheck", "--preset", "toy-64", "--seed", "0", "--e2e-coords", "0"]);
    let out = text(&o.stdout);
    assert_eq!(code(&o), 0, "{out}\n{}", text(&o.stderr));
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert!(rows.len() >= 10, "{out}");
    assert!(rows.iter().all(|r| r.ends_with("ok")), "{out}");
    for name in ["residual_block", "overlap_patch_embed", "linear_sra_attention", "mix_ffn", "local_emphasis", "stepwise_aggregate", "prediction_head", "fcbformer_toy"] {
        assert!(rows.iter().any(|r| r.starts_with(name)), "{name} missing");
    }
}

#[test]
fn corrupted_gradient_rule_fails_naming_the_op() {
    let o = fcbfuse(&["gradcheck", "--only", "group_norm", "--only", "mix_ffn", "--corrupt-op", "group_norm"]);
    assert_eq!(code(&o), 1);
    let err = text(&o.stderr);
    assert!(err.contains("group_norm"), "{err}");
    assert!(text(&o.stdout).contains("FAIL"));
    assert_eq!(code(&fcbfuse(&["gradcheck", "--only", "no_such_block"])), 2);
}
