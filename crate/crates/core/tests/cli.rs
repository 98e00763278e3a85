use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wavegate::checkpoint;
use wavegate::datasets::{read_f32_with_shape, read_tensor, DatasetManifest};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavegate"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

fn train_into(dir: &Path) -> Output {
    let config = fixtures().join("train_synthetic.json");
    run(&["train", "--config", s(&config), "--run-dir", s(dir)])
}

#[test]
fn train_writes_run_files_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = train_into(&a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["best.ckpt", "metrics.jsonl", "config.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    assert!(train_into(&b).status.success());
    assert_eq!(fs::read(a.join("metrics.jsonl")).unwrap(), fs::read(b.join("metrics.jsonl")).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixtures().join("train_synthetic.json");
    let o = run(&["train", "--config", s(&config), "--run-dir", s(tmp.path()), "--seed", "9"]);
    assert!(o.status.success());
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 9);
}

#[test]
fn missing_or_invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(run(&["train", "--config", s(&missing), "--run-dir", s(tmp.path())]).status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"max_epochs": 0}"#).unwrap();
    let o = run(&["train", "--config", s(&bad), "--run-dir", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_epochs"));
}

#[test]
fn encode_matches_in_memory_embeddings() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    assert!(train_into(&run_dir).status.success());
    let ckpt = run_dir.join("best.ckpt");
    let manifest = fixtures().join("synthetic/manifest.json");
    let out = tmp.path().join("emb/test.f32");
    let o = run(&["encode", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--split", "test", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let written = read_f32_with_shape(&out).unwrap();
    let (enc, store, _) = checkpoint::load(&ckpt).unwrap();
    let eeg = read_tensor(&DatasetManifest::load(&manifest).unwrap(), "test", "synthetic").unwrap();
    let expected = enc.encode(&store, &eeg).unwrap();
    assert_eq!(written, expected.tensor().to_f32_precision());
    assert_eq!(written.shape()[0], eeg.batch());
    assert_eq!(stdout_json(&o)["rows"], eeg.batch());

    let o = run(&["encode", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--split", "validation", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) {
    fs::write(path, lines.into_iter().map(|l| l + "\n").collect::<String>()).unwrap();
}

#[test]
fn classify_self_gallery_and_bad_k() {
    let tmp = tempfile::tempdir().unwrap();
    // targets repeat within a class; keep one row per class
    let m = DatasetManifest::load(fixtures().join("synthetic/manifest.json")).unwrap();
    let all = wavegate::datasets::read_embeddings(&m, "test", "synthetic").unwrap();
    let rows: Vec<usize> = (0..all.rows()).step_by(2).collect();
    let gallery = all.select_rows(&rows);
    let g = tmp.path().join("gallery.f32");
    wavegate::datasets::write_f32_with_shape(&g, gallery.tensor()).unwrap();
    let truth = tmp.path().join("truth.txt");
    write_lines(&truth, (0..gallery.rows()).map(|i| i.to_string()));
    let o = run(&["classify", "--embeddings", s(&g), "--gallery", s(&g), "--truth", s(&truth), "--k", "1", "--k", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!((v["top1"].as_f64(), v["top4"].as_f64()), (Some(1.0), Some(1.0)));
    let o = run(&["classify", "--embeddings", s(&g), "--gallery", s(&g), "--truth", s(&truth), "--k", "5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn score_matches_golden_file_twice() {
    let tmp = tempfile::tempdir().unwrap();
    let golden = fs::read(fixtures().join("golden.csv")).unwrap();
    for name in ["one.csv", "two.csv"] {
        let out = tmp.path().join(name);
        let o = run(&[
            "score",
            "--taxonomy",
            s(&fixtures().join("toy_taxonomy.jsonl")),
            "--predictions",
            s(&fixtures().join("predictions.jsonl")),
            "--out",
            s(&out),
        ]);
        assert!(o.status.success());
        assert_eq!(stdout_json(&o)["unresolved"], 1);
        assert!(String::from_utf8_lossy(&o.stderr).contains("1 prediction"));
        assert_eq!(fs::read(&out).unwrap(), golden);
    }
}

#[test]
fn empty_predictions_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = tmp.path().join("out.csv");
    let o = run(&["score", "--taxonomy", s(&fixtures().join("toy_taxonomy.jsonl")), "--predictions", s(&empty), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn check_passes() {
    let o = run(&["check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(stdout_json(&o)["passed"], true);
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--out-dir", s(tmp.path()), "--classes", "3", "--per-class", "2", "--test-per-class", "1", "--channels", "4", "--time", "8", "--dim", "5"]);
    assert!(o.status.success());
    let m = DatasetManifest::load(tmp.path().join("manifest.json")).unwrap();
    assert_eq!(read_tensor(&m, "train", "synthetic").unwrap().data().shape(), &[6, 4, 8]);
    assert_eq!(read_tensor(&m, "test", "synthetic").unwrap().batch(), 3);
}
