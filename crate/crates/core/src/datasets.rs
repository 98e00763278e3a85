//! EEG batches, the on-disk dataset contract, preprocessing and a seeded
//! synthetic generator.
//!
//! On disk a dataset is a JSON manifest plus raw tensor files:
//!
//! * `*.f32`: little-endian `f32`, C-order; the shape lives only in the manifest.
//! * concept files: UTF-8, one concept id per line, one line per batch row.
//!
//! Paths inside a manifest are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A batch of multichannel recordings, `B x C x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EEGTensor {
    data: Tensor,
    subject_id: String,
    concept_ids: Vec<String>,
    sample_rate_hz: f64,
}

impl EEGTensor {
    pub fn new(data: Tensor, subject_id: impl Into<String>, concept_ids: Vec<String>, sample_rate_hz: f64) -> Result<Self> {
        let s = data.shape();
        if s.len() != 3 || s[0] < 1 || s[1] < 1 || s[2] < 2 {
            return Err(Error::Argument(format!(
                "EEG tensor must be B x C x T with B, C >= 1 and T >= 2, got {s:?}"
            )));
        }
        if concept_ids.len() != s[0] {
            return Err(Error::Argument(format!(
                "{} concept ids for a batch of {}",
                concept_ids.len(),
                s[0]
            )));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Argument(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if !data.all_finite() {
            return Err(Error::Argument("EEG tensor contains NaN or infinite values".into()));
        }
        Ok(Self {
            data,
            subject_id: subject_id.into(),
            concept_ids,
            sample_rate_hz,
        })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn concept_ids(&self) -> &[String] {
        &self.concept_ids
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn batch(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn time(&self) -> usize {
        self.data.shape()[2]
    }

    fn with_data(&self, data: Tensor, sample_rate_hz: f64) -> Result<Self> {
        Self::new(data, self.subject_id.clone(), self.concept_ids.clone(), sample_rate_hz)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let row = self.channels() * self.time();
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            data.extend_from_slice(&self.data.data()[i * row..(i + 1) * row]);
        }
        Self {
            data: Tensor::from_parts(vec![idx.len(), self.channels(), self.time()], data),
            subject_id: self.subject_id.clone(),
            concept_ids: idx.iter().map(|&i| self.concept_ids[i].clone()).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Right-pad odd-length traces by repeating the final sample.
    pub fn pad_to_even(&self) -> Self {
        if self.time() % 2 == 0 {
            return self.clone();
        }
        let t = self.time();
        let mut data = Vec::with_capacity(self.batch() * self.channels() * (t + 1));
        for trace in self.data.data().chunks(t) {
            data.extend_from_slice(trace);
            data.push(trace[t - 1]);
        }
        Self {
            data: Tensor::from_parts(vec![self.batch(), self.channels(), t + 1], data),
            ..self.clone()
        }
    }
}

/// Subtract, per trace, the mean of its first `prestim_samples` samples.
pub fn baseline_correct(x: &EEGTensor, prestim_samples: usize) -> Result<EEGTensor> {
    let t = x.time();
    if prestim_samples == 0 || prestim_samples >= t {
        return Err(Error::Argument(format!(
            "prestim_samples must be in 1..{t}, got {prestim_samples}"
        )));
    }
    let mut data = x.data.data().to_vec();
    for trace in data.chunks_mut(t) {
        let mean = trace[..prestim_samples].iter().sum::<f64>() / prestim_samples as f64;
        trace.iter_mut().for_each(|v| *v -= mean);
    }
    x.with_data(Tensor::from_parts(x.data.shape().to_vec(), data), x.sample_rate_hz)
}

/// Block-average decimation by an integer `factor`.
pub fn downsample(x: &EEGTensor, factor: usize) -> Result<EEGTensor> {
    let t = x.time();
    if factor == 0 {
        return Err(Error::Argument("downsample factor must be >= 1".into()));
    }
    if t % factor != 0 {
        return Err(Error::Argument(format!(
            "time axis {t} is not divisible by factor {factor}; crop first"
        )));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let data: Vec<f64> = x
        .data
        .data()
        .chunks(factor)
        .map(|block| block.iter().sum::<f64>() / factor as f64)
        .collect();
    x.with_data(
        Tensor::from_parts(vec![x.batch(), x.channels(), t / factor], data),
        x.sample_rate_hz / factor as f64,
    )
}

// ---- raw files -----------------------------------------------------------

pub fn write_f32(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: impl AsRef<Path>, shape: &[usize]) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = shape.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path.display(),
            format!(
                "shape {shape:?} needs {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// `<path>.shape.json`, the sidecar describing a standalone `.f32` file.
pub fn shape_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".shape.json");
    PathBuf::from(s)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeFile {
    shape: Vec<usize>,
}

/// Write `t` as `.f32` plus its shape sidecar.
pub fn write_f32_with_shape(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    write_f32(path, t)?;
    let side = shape_sidecar(path);
    let json = serde_json::to_string(&ShapeFile { shape: t.shape().to_vec() }).map_err(|e| Error::json("shape sidecar", e))?;
    fs::write(&side, json + "\n").map_err(|e| Error::io(side, e))
}

/// Read a `.f32` file whose shape comes from its sidecar.
pub fn read_f32_with_shape(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let side = shape_sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let s: ShapeFile = serde_json::from_str(&text).map_err(|e| Error::json(side.display().to_string(), e))?;
    read_f32(path, &s.shape)
}

pub fn write_concepts(path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut s = ids.join("\n");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_concepts(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

// ---- manifest ------------------------------------------------------------

fn default_channels() -> usize {
    64
}
fn default_rate() -> f64 {
    100.0
}
fn default_window() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub subject: String,
    /// `.f32` EEG tensor, shape `[B, C, T]`.
    pub tensor: PathBuf,
    pub shape: [usize; 3],
    /// Newline-delimited concept ids, `B` lines.
    pub concepts: PathBuf,
    /// Per-row target image embeddings, `[B, embedding_dim]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Per-row text embeddings, `[B, embedding_dim]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    #[serde(default = "default_window")]
    pub window_samples: usize,
    pub splits: BTreeMap<String, Vec<SplitEntry>>,
    pub embedding_dim: usize,
    pub subjects: Vec<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split_names(&self) -> Vec<&str> {
        self.splits.keys().map(String::as_str).collect()
    }

    pub fn entry(&self, split: &str, subject: &str) -> Result<&SplitEntry> {
        let entries = self.splits.get(split).ok_or_else(|| {
            Error::Lookup(format!(
                "unknown split `{split}`; available splits: {}",
                self.split_names().join(", ")
            ))
        })?;
        entries.iter().find(|e| e.subject == subject).ok_or_else(|| {
            let subjects: Vec<&str> = entries.iter().map(|e| e.subject.as_str()).collect();
            Error::Lookup(format!(
                "split `{split}` has no subject `{subject}`; available: {}",
                subjects.join(", ")
            ))
        })
    }

    /// Check every referenced file against its declared shape.
    pub fn validate(&self) -> Result<()> {
        for (split, entries) in &self.splits {
            for e in entries {
                let b = e.shape[0];
                let tensor = self.resolve(&e.tensor);
                check_len(&tensor, e.shape.iter().product::<usize>() * 4)?;
                let concepts = read_concepts(self.resolve(&e.concepts))?;
                if concepts.len() != b {
                    return Err(Error::format(
                        self.resolve(&e.concepts).display(),
                        format!("split `{split}`: {} concept ids for batch {b}", concepts.len()),
                    ));
                }
                for p in e.embeddings.iter().chain(&e.text_embeddings) {
                    check_len(&self.resolve(p), b * self.embedding_dim * 4)?;
                }
            }
        }
        Ok(())
    }
}

fn check_len(path: &Path, expected: usize) -> Result<()> {
    let actual = fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
    if actual != expected {
        return Err(Error::format(
            path.display(),
            format!("expected {expected} bytes, found {actual}"),
        ));
    }
    Ok(())
}

pub fn read_tensor(manifest: &DatasetManifest, split: &str, subject: &str) -> Result<EEGTensor> {
    let e = manifest.entry(split, subject)?;
    let data = read_f32(manifest.resolve(&e.tensor), &e.shape)?;
    let concepts_path = manifest.resolve(&e.concepts);
    let concepts = read_concepts(&concepts_path)?;
    if concepts.len() != e.shape[0] {
        return Err(Error::format(
            concepts_path.display(),
            format!("{} concept ids for batch {}", concepts.len(), e.shape[0]),
        ));
    }
    EEGTensor::new(data, subject, concepts, manifest.sample_rate_hz)
}

/// Read the per-row image embeddings declared for a split entry.
pub fn read_embeddings(manifest: &DatasetManifest, split: &str, subject: &str) -> Result<Embedding> {
    let e = manifest.entry(split, subject)?;
    let p = e.embeddings.as_ref().ok_or_else(|| {
        Error::Lookup(format!("split `{split}` subject `{subject}` declares no embeddings"))
    })?;
    Embedding::new(read_f32(manifest.resolve(p), &[e.shape[0], manifest.embedding_dim])?)
}

/// EEG batch paired with per-row target embeddings.
#[derive(Debug, Clone)]
pub struct PairedSet {
    pub eeg: EEGTensor,
    pub targets: Embedding,
    pub text: Option<Embedding>,
}

impl PairedSet {
    pub fn new(eeg: EEGTensor, targets: Embedding) -> Result<Self> {
        if targets.rows() != eeg.batch() {
            return Err(Error::Argument(format!(
                "{} target rows for {} EEG rows",
                targets.rows(),
                eeg.batch()
            )));
        }
        Ok(Self {
            eeg,
            targets,
            text: None,
        })
    }

    pub fn len(&self) -> usize {
        self.eeg.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            eeg: self.eeg.select_rows(idx),
            targets: self.targets.select_rows(idx),
            text: self.text.as_ref().map(|t| t.select_rows(idx)),
        }
    }

    /// Distinct concepts in first-seen order, with one gallery row per concept
    /// (the normalized mean of its rows' targets), and each row's gallery index.
    pub fn gallery(&self) -> (Vec<String>, Embedding, Vec<usize>) {
        let mut names: Vec<String> = Vec::new();
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        let mut truth = Vec::with_capacity(self.len());
        for c in self.eeg.concept_ids() {
            let next = names.len();
            let i = *index.entry(c.as_str()).or_insert(next);
            if i == next {
                names.push(c.clone());
            }
            truth.push(i);
        }
        let d = self.targets.dim();
        let mut sums = vec![vec![0.0; d]; names.len()];
        for (r, &g) in truth.iter().enumerate() {
            for (s, v) in sums[g].iter_mut().zip(self.targets.row(r)) {
                *s += v;
            }
        }
        let gallery = Embedding::from_rows(&sums).expect("gallery rows").normalized();
        (names, gallery, truth)
    }
}

pub fn read_paired(manifest: &DatasetManifest, split: &str, subject: &str) -> Result<PairedSet> {
    let eeg = read_tensor(manifest, split, subject)?;
    let targets = read_embeddings(manifest, split, subject)?;
    let mut set = PairedSet::new(eeg, targets)?;
    let e = manifest.entry(split, subject)?;
    if let Some(p) = &e.text_embeddings {
        set.text = Some(Embedding::new(read_f32(
            manifest.resolve(p),
            &[e.shape[0], manifest.embedding_dim],
        )?)?);
    }
    Ok(set)
}

// ---- synthetic data ------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub channels: usize,
    pub time: usize,
    pub embedding_dim: usize,
    pub signal_to_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_classes", self.n_classes),
            ("samples_per_class", self.samples_per_class),
            ("channels", self.channels),
            ("embedding_dim", self.embedding_dim),
        ] {
            if v < 1 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        if self.time < 2 {
            return Err(Error::config("time", "must be >= 2"));
        }
        if !(self.signal_to_noise > 0.0) {
            return Err(Error::config("signal_to_noise", "must be > 0"));
        }
        Ok(())
    }
}

/// Fixed per-class templates and targets; draws any number of noisy samples.
///
/// Each class gets a standard-normal `C x T` template and a unit-norm
/// Gaussian target vector. A sample is its class template plus standard
/// normal noise scaled by `1 / signal_to_noise`.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    spec: SyntheticSpec,
    templates: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl SyntheticGenerator {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.channels * spec.time;
        let templates = (0..spec.n_classes)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let targets = (0..spec.n_classes)
            .map(|_| {
                let v: Vec<f64> = (0..spec.embedding_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Ok(Self {
            spec,
            templates,
            targets,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn class_name(k: usize) -> String {
        format!("class_{k:03}")
    }

    pub fn template(&self, k: usize) -> &[f64] {
        &self.templates[k]
    }

    /// `per_class` samples of every class, class-major. Different `stream`
    /// values give independent noise over the same templates.
    pub fn sample(&self, per_class: usize, stream: u64) -> Result<PairedSet> {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(stream + 1);
        let noise = 1.0 / s.signal_to_noise;
        let n = s.channels * s.time;
        let b = s.n_classes * per_class;
        let mut data = Vec::with_capacity(b * n);
        let mut targets = Vec::with_capacity(b * s.embedding_dim);
        let mut concepts = Vec::with_capacity(b);
        for k in 0..s.n_classes {
            for _ in 0..per_class {
                for &t in &self.templates[k] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(if noise == 0.0 { t } else { t + noise * z });
                }
                targets.extend_from_slice(&self.targets[k]);
                concepts.push(Self::class_name(k));
            }
        }
        let eeg = EEGTensor::new(
            Tensor::new(vec![b, s.channels, s.time], data)?,
            "synthetic",
            concepts,
            default_rate(),
        )?;
        PairedSet::new(eeg, Embedding::new(Tensor::new(vec![b, s.embedding_dim], targets)?)?)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(EEGTensor, Embedding, Vec<String>)> {
    let set = SyntheticGenerator::new(spec.clone())?.sample(spec.samples_per_class, 0)?;
    let concepts = set.eeg.concept_ids().to_vec();
    Ok((set.eeg, set.targets, concepts))
}

/// Write `splits` (name → set) as `.f32` files plus a manifest in `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, name: &str, splits: &[(&str, &PairedSet)]) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = splits
        .first()
        .ok_or_else(|| Error::Argument("write_dataset needs at least one split".into()))?
        .1;
    let mut map = BTreeMap::new();
    let mut subjects: Vec<String> = Vec::new();
    for (split, set) in splits {
        let subject = set.eeg.subject_id().to_string();
        let stem = format!("{split}_{subject}");
        write_f32(dir.join(format!("{stem}.f32")), set.eeg.data())?;
        write_concepts(dir.join(format!("{stem}.concepts.txt")), set.eeg.concept_ids())?;
        write_f32(dir.join(format!("{stem}.emb.f32")), set.targets.tensor())?;
        let s = set.eeg.data().shape();
        let mut entry = SplitEntry {
            subject: subject.clone(),
            tensor: format!("{stem}.f32").into(),
            shape: [s[0], s[1], s[2]],
            concepts: format!("{stem}.concepts.txt").into(),
            embeddings: Some(format!("{stem}.emb.f32").into()),
            text_embeddings: None,
        };
        if let Some(text) = &set.text {
            write_f32(dir.join(format!("{stem}.text.f32")), text.tensor())?;
            entry.text_embeddings = Some(format!("{stem}.text.f32").into());
        }
        map.entry(split.to_string()).or_insert_with(Vec::new).push(entry);
        if !subjects.contains(&subject) {
            subjects.push(subject);
        }
    }
    let manifest = DatasetManifest {
        name: name.to_string(),
        channels: first.eeg.channels(),
        sample_rate_hz: first.eeg.sample_rate_hz(),
        window_samples: first.eeg.time(),
        splits: map,
        embedding_dim: first.targets.dim(),
        subjects,
        base_dir: dir.to_path_buf(),
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(values: &[f64]) -> EEGTensor {
        EEGTensor::new(
            Tensor::new(vec![1, 1, values.len()], values.to_vec()).unwrap(),
            "s",
            vec!["c".into()],
            100.0,
        )
        .unwrap()
    }

    fn random_eeg(shape: [usize; 3], seed: u64) -> EEGTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::from_fn(&shape, |_| StandardNormal.sample(&mut rng));
        EEGTensor::new(t, "s", vec!["c".into(); shape[0]], 1000.0).unwrap()
    }

    #[test]
    fn baseline_subtracts_prestim_mean() {
        let out = baseline_correct(&trace(&[1.0, 1.0, 3.0, 5.0]), 2).unwrap();
        assert_eq!(out.data().data(), &[0.0, 0.0, 2.0, 4.0]);
        let zero_mean = trace(&[1.0, -1.0, 7.0, 2.0]);
        assert_eq!(baseline_correct(&zero_mean, 2).unwrap(), zero_mean);
    }

    #[test]
    fn baseline_zeroes_prestim_mean_on_random_tensor() {
        let x = random_eeg([2, 3, 10], 1);
        let out = baseline_correct(&x, 4).unwrap();
        assert_eq!(out.data().shape(), x.data().shape());
        for (orig, tr) in x.data().data().chunks(10).zip(out.data().data().chunks(10)) {
            // independent check: the first-4 mean of the output, and the offset applied
            let m: f64 = tr[..4].iter().sum::<f64>() / 4.0;
            assert!(m.abs() <= 1e-6);
            let shift = orig[0] - tr[0];
            assert!(orig.iter().zip(tr).all(|(a, b)| ((a - b) - shift).abs() < 1e-12));
        }
    }

    #[test]
    fn baseline_rejects_out_of_range_window() {
        let x = trace(&[1.0, 2.0, 3.0]);
        assert!(matches!(baseline_correct(&x, 0), Err(Error::Argument(_))));
        assert!(matches!(baseline_correct(&x, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn downsample_block_means() {
        let out = downsample(&trace(&[1.0, 3.0, 5.0, 7.0]), 2).unwrap();
        assert_eq!(out.data().data(), &[2.0, 6.0]);
        assert_eq!(out.sample_rate_hz(), 50.0);
        let x = trace(&[4.0, 5.0, 6.0]);
        assert_eq!(downsample(&x, 1).unwrap(), x);
        let c = downsample(&trace(&[2.5; 12]), 3).unwrap();
        assert!(c.data().data().iter().all(|&v| v == 2.5));
        assert!(matches!(downsample(&x, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn odd_traces_pad_with_last_sample() {
        let p = trace(&[1.0, 2.0, 3.0]).pad_to_even();
        assert_eq!(p.data().data(), &[1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn synthetic_is_deterministic_and_shaped() {
        let spec = SyntheticSpec {
            n_classes: 8,
            samples_per_class: 16,
            channels: 64,
            time: 100,
            embedding_dim: 64,
            signal_to_noise: 5.0,
            seed: 7,
        };
        let (x1, e1, c1) = generate_synthetic(&spec).unwrap();
        let (x2, e2, c2) = generate_synthetic(&spec).unwrap();
        assert_eq!(x1.data().shape(), &[128, 64, 100]);
        assert_eq!(e1.tensor().shape(), &[128, 64]);
        assert_eq!(c1.len(), 128);
        assert!(x1.data().data().iter().zip(x2.data().data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(e1, e2);
        assert_eq!(c1, c2);
        assert!(e1.max_norm_deviation() < 1e-12);
    }

    #[test]
    fn noiseless_synthetic_classes_are_constant() {
        let spec = SyntheticSpec {
            n_classes: 3,
            samples_per_class: 4,
            channels: 2,
            time: 6,
            embedding_dim: 4,
            signal_to_noise: f64::INFINITY,
            seed: 1,
        };
        let (x, _, _) = generate_synthetic(&spec).unwrap();
        let rows: Vec<&[f64]> = x.data().data().chunks(12).collect();
        for k in 0..3 {
            for s in 1..4 {
                assert_eq!(rows[k * 4], rows[k * 4 + s]);
            }
        }
        assert_ne!(rows[0], rows[4]);
    }

    #[test]
    fn synthetic_rejects_bad_spec() {
        let mut spec = SyntheticSpec {
            n_classes: 0,
            samples_per_class: 1,
            channels: 1,
            time: 2,
            embedding_dim: 1,
            signal_to_noise: 1.0,
            seed: 0,
        };
        assert!(generate_synthetic(&spec).is_err());
        spec.n_classes = 1;
        spec.signal_to_noise = 0.0;
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn gallery_groups_concepts_in_first_seen_order() {
        let eeg = EEGTensor::new(
            Tensor::zeros(&[3, 1, 2]),
            "s",
            vec!["b".into(), "a".into(), "b".into()],
            100.0,
        )
        .unwrap();
        let targets = Embedding::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let (names, gallery, truth) = PairedSet::new(eeg, targets).unwrap().gallery();
        assert_eq!(names, vec!["b", "a"]);
        assert_eq!(truth, vec![0, 1, 0]);
        assert_eq!(gallery.row(0), &[1.0, 0.0]);
    }
}
