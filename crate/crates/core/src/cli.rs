//! Command implementations behind the `wavegate` binary.
//!
//! Each command returns a JSON value that the binary prints on stdout.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use serde_json::{json, Map, Value};

use crate::checkpoint;
use crate::datasets::{read_f32_with_shape, read_tensor, write_dataset, write_f32_with_shape, DatasetManifest, SyntheticGenerator, SyntheticSpec};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::retrieval::{topk_accuracy, zero_shot_classify};
use crate::selfcheck;
use crate::semantic::{read_predictions, score_predictions, Taxonomy};
use crate::training::{train_with, TrainConfig};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// The only subject recorded for `split`, unless one is named explicitly.
pub fn resolve_subject(m: &DatasetManifest, split: &str, subject: Option<&str>) -> Result<String> {
    if let Some(s) = subject {
        return Ok(s.to_string());
    }
    let entries = m.splits.get(split).ok_or_else(|| {
        Error::Lookup(format!("unknown split `{split}`; available: {}", m.split_names().join(", ")))
    })?;
    match entries.as_slice() {
        [only] => Ok(only.subject.clone()),
        _ => Err(Error::Lookup(format!(
            "split `{split}` has {} subjects; pass one explicitly",
            entries.len()
        ))),
    }
}

/// Train from a JSON config into `run_dir` (`best.ckpt`, `metrics.jsonl`,
/// `config.json`).
pub fn cmd_train(config_path: &Path, run_dir: &Path, seed: Option<u64>) -> Result<Value> {
    let mut cfg = match TrainConfig::load(config_path) {
        Ok(c) => c,
        Err(Error::Io { path, source }) => {
            return Err(Error::config("config", format!("cannot read {}: {source}", path.display())));
        }
        Err(e) => return Err(e),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Error::config("data", "a data source (manifest or synthetic) is required"))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let (train_set, val_set) = data.load(base)?;

    create_dir(run_dir)?;
    let config_out = run_dir.join("config.json");
    let echo = serde_json::to_string_pretty(&cfg).map_err(|e| Error::json("config echo", e))?;
    fs::write(&config_out, echo + "\n").map_err(|e| Error::io(&config_out, e))?;

    let metrics_path = run_dir.join("metrics.jsonl");
    let f = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(f);
    let mut write_err: Option<std::io::Error> = None;
    let outcome = train_with(&cfg, &train_set, &val_set, |r| {
        let line = serde_json::to_string(r).expect("epoch records serialize");
        if let Err(e) = writeln!(metrics, "{line}").and_then(|_| metrics.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::io(&metrics_path, e));
    }
    checkpoint::save(run_dir.join("best.ckpt"), &outcome.meta, &outcome.store)?;
    info!("wrote {}", run_dir.display());
    Ok(json!({
        "run_dir": run_dir,
        "epochs": outcome.history.len(),
        "best_epoch": outcome.meta.epoch,
        "val_top1": outcome.meta.val_top1,
        "stop": outcome.stop,
    }))
}

/// Embed one split with a checkpoint; writes `.f32` plus a shape sidecar.
pub fn cmd_encode(ckpt: &Path, manifest: &Path, split: &str, subject: Option<&str>, out: &Path, batch: usize) -> Result<Value> {
    let (encoder, store, _) = checkpoint::load(ckpt)?;
    let m = DatasetManifest::load(manifest)?;
    let subject = resolve_subject(&m, split, subject)?;
    let eeg = read_tensor(&m, split, &subject)?;
    let emb = encoder.encode_batched(&store, &eeg, batch)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_f32_with_shape(out, emb.tensor())?;
    Ok(json!({ "rows": emb.rows(), "dim": emb.dim(), "out": out }))
}

fn read_truth(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::format(path.display(), format!("line {}: `{l}` is not a gallery index", i + 1)))
        })
        .collect()
}

/// Top-k retrieval accuracy of query embeddings against a gallery.
pub fn cmd_classify(embeddings: &Path, gallery: &Path, truth: &Path, ks: &[usize]) -> Result<Value> {
    let queries = Embedding::new(read_f32_with_shape(embeddings)?)?;
    let gallery = Embedding::new(read_f32_with_shape(gallery)?)?;
    let truth = read_truth(truth)?;
    let ranking = zero_shot_classify(&queries, &gallery)?;
    let mut out = Map::new();
    out.insert("queries".into(), json!(queries.rows()));
    out.insert("gallery".into(), json!(gallery.rows()));
    for &k in ks {
        out.insert(format!("top{k}"), json!(topk_accuracy(&ranking, &truth, k)?));
    }
    Ok(Value::Object(out))
}

/// Semantic scores for classifier outputs, written as CSV.
pub fn cmd_score(taxonomy: &Path, predictions: &Path, out_csv: &Path) -> Result<Value> {
    let t = Taxonomy::from_path(taxonomy)?;
    let f = File::open(predictions).map_err(|e| Error::io(predictions, e))?;
    let preds = read_predictions(BufReader::new(f), &predictions.display().to_string())?;
    let report = score_predictions(&preds, &t)?;
    let unresolved = report.unresolved();
    if unresolved > 0 {
        warn!("{unresolved} prediction(s) have a truth label missing from the taxonomy");
    }
    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(|e| Error::io(out_csv, e))?;
    fs::write(out_csv, buf).map_err(|e| Error::io(out_csv, e))?;
    let summary = |s: &crate::semantic::Summary| json!({ "count": s.count, "mean": s.mean, "std": s.std, "text": s.to_string() });
    Ok(json!({
        "scored": preds.len() - unresolved,
        "unresolved": unresolved,
        "overall": report.overall.as_ref().map(summary),
        "groups": report.by_group.iter().map(|(k, s)| (k.clone(), summary(s))).collect::<Map<_, _>>(),
    }))
}

/// Run the built-in property suite; the bool is overall success.
pub fn cmd_check(seed: u64) -> Result<(bool, Value)> {
    let results = selfcheck::run_all(seed)?;
    let ok = results.iter().all(|c| c.passed);
    let rows: Vec<Value> = results
        .iter()
        .map(|c| json!({ "check": c.name, "passed": c.passed, "detail": c.detail }))
        .collect();
    Ok((ok, json!({ "passed": ok, "checks": rows })))
}

/// Write a synthetic dataset with `train` and `test` splits.
pub fn cmd_synth(out_dir: &Path, spec: &SyntheticSpec, test_per_class: usize) -> Result<Value> {
    let generator = SyntheticGenerator::new(spec.clone())?;
    let train = generator.sample(spec.samples_per_class, 0)?;
    let test = generator.sample(test_per_class, 1)?;
    let m = write_dataset(out_dir, "synthetic", &[("train", &train), ("test", &test)])?;
    Ok(json!({ "manifest": out_dir.join("manifest.json"), "train": train.len(), "test": test.len(), "channels": m.channels }))
}
