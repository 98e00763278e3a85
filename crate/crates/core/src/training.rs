//! Mini-batch training with Adam, per-epoch retrieval validation, and early
//! stopping on validation top-1.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::checkpoint::CheckpointMeta;
use crate::datasets::{read_paired, DatasetManifest, PairedSet, SyntheticGenerator, SyntheticSpec};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::losses::{combined_graph, groups_from_labels, LossBreakdown, LossConfig};
use crate::params::{Adam, ParamStore};
use crate::retrieval::{evaluate, Accuracy};
use crate::tensor::Tensor;

/// Where training and validation data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Manifest {
        /// Relative paths resolve against the config file's directory.
        path: PathBuf,
        subject: String,
        #[serde(default = "default_train_split")]
        train_split: String,
        #[serde(default = "default_val_split")]
        val_split: String,
    },
    /// Generated data; validation draws `val_per_class` fresh samples per class.
    Synthetic { spec: SyntheticSpec, val_per_class: usize },
}

fn default_train_split() -> String {
    "train".into()
}

fn default_val_split() -> String {
    "test".into()
}

impl DataSource {
    /// Load `(train, val)`, resolving relative paths against `base`.
    pub fn load(&self, base: &Path) -> Result<(PairedSet, PairedSet)> {
        match self {
            DataSource::Manifest {
                path,
                subject,
                train_split,
                val_split,
            } => {
                let m = DatasetManifest::load(base.join(path))?;
                Ok((read_paired(&m, train_split, subject)?, read_paired(&m, val_split, subject)?))
            }
            DataSource::Synthetic { spec, val_per_class } => {
                let generator = SyntheticGenerator::new(spec.clone())?;
                Ok((generator.sample(spec.samples_per_class, 0)?, generator.sample(*val_per_class, 1)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    /// Omit wall-clock timings from epoch records so runs are byte-identical.
    pub deterministic: bool,
    /// Rows per forward pass during validation.
    pub eval_batch_size: usize,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 40,
            learning_rate: 3e-4,
            weight_decay: 0.0,
            batch_size: 64,
            patience: 10,
            seed: 0,
            deterministic: true,
            eval_batch_size: 256,
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
            data: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 {
            return Err(Error::config("max_epochs", "must be >= 1"));
        }
        if self.patience < 1 {
            return Err(Error::config("patience", "must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be >= 2"));
        }
        if self.eval_batch_size < 1 {
            return Err(Error::config("eval_batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be >= 0"));
        }
        self.loss.validate()?;
        self.encoder.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub align: f64,
    pub mse: f64,
    pub cluster: f64,
    pub val_top1: f64,
    pub val_top5: f64,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

pub fn write_metrics(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::json("epoch record", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Stop once the metric has gone `patience` epochs without strictly
/// improving on its best value.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Feed the next epoch's metric (epochs count from 1).
    pub fn update(&mut self, metric: f64) -> StopDecision {
        self.epoch += 1;
        let improved = self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = self.epoch;
        }
        StopDecision {
            improved,
            stop: self.epoch - self.best_epoch >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.map(|b| (self.best_epoch, b))
    }
}

/// Epoch at which a run over `metrics` ends.
pub fn stop_epoch(metrics: &[f64], patience: usize, max_epochs: usize) -> usize {
    let mut es = EarlyStopping::new(patience);
    let n = metrics.len().min(max_epochs);
    for (i, &m) in metrics[..n].iter().enumerate() {
        if es.update(m).stop {
            return i + 1;
        }
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
}

pub struct TrainOutcome {
    pub encoder: Encoder,
    /// Parameters from the best epoch, rounded to checkpoint precision.
    pub store: ParamStore,
    pub meta: CheckpointMeta,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

fn check_data(cfg: &TrainConfig, set: &PairedSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Argument(format!("{what} set is empty")));
    }
    let e = &cfg.encoder;
    if set.eeg.channels() != e.channels || set.eeg.time() != e.time {
        return Err(Error::Argument(format!(
            "{what} EEG is {} x {}, encoder expects {} x {}",
            set.eeg.channels(),
            set.eeg.time(),
            e.channels,
            e.time
        )));
    }
    if set.targets.dim() != e.embedding_dim {
        return Err(Error::Argument(format!(
            "{what} targets have width {}, encoder embeds to {}",
            set.targets.dim(),
            e.embedding_dim
        )));
    }
    Ok(())
}

/// Retrieval accuracy of `set` against its own concept gallery.
pub fn validate_retrieval(encoder: &Encoder, store: &ParamStore, set: &PairedSet, batch: usize) -> Result<Accuracy> {
    let (_, gallery, truth) = set.gallery();
    let queries = encoder.encode_batched(store, &set.eeg, batch)?;
    evaluate(&queries, &gallery, &truth)
}

pub fn train(cfg: &TrainConfig, train_set: &PairedSet, val_set: &PairedSet) -> Result<TrainOutcome> {
    train_with(cfg, train_set, val_set, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    cfg: &TrainConfig,
    train_set: &PairedSet,
    val_set: &PairedSet,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(cfg, train_set, "training")?;
    check_data(cfg, val_set, "validation")?;
    let (encoder, mut store) = Encoder::init(cfg.encoder.clone(), cfg.seed)?;
    info!(
        "training {} parameters on {} rows, validating on {}",
        store.num_trainable_scalars(),
        train_set.len(),
        val_set.len()
    );
    let mut adam = Adam::new(cfg.learning_rate);
    adam.weight_decay = cfg.weight_decay;
    let mut log_scale = (1.0 / cfg.loss.temperature).ln();
    let mut temp_store = ParamStore::new();
    let temp_id = temp_store.add("loss.log_inv_temperature", Tensor::scalar(log_scale), true);
    let mut temp_adam = Adam::new(cfg.learning_rate);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);
    let mut ctx = Ctx::train(dropout_rng);

    let labels = train_set.eeg.concept_ids();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut best: Option<(ParamStore, CheckpointMeta)> = None;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut sums = LossBreakdown::default();
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.select_rows(chunk);
            let group_of = groups_from_labels(&chunk.iter().map(|&i| labels[i].as_str()).collect::<Vec<_>>());
            let mut g = Graph::new();
            let x = g.constant(batch.eeg.data().clone());
            let fe = encoder.forward(&mut g, &store, &mut ctx, x)?;
            let fi = g.constant(batch.targets.tensor().clone());
            let text = batch.text.as_ref().map(|t| g.constant(t.tensor().clone()));
            let scale_var = if cfg.loss.learnable_temperature {
                let s = g.input(temp_store.value(temp_id).clone());
                (Some(s), g.exp(s))
            } else {
                (None, g.constant(Tensor::scalar(1.0 / cfg.loss.temperature)))
            };
            let nodes = combined_graph(&mut g, fi, fe, &group_of, &cfg.loss, scale_var.1, text)?;
            let b = nodes.breakdown(&g);
            if !b.total.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    detail: format!("align {} mse {} cluster {}", b.align, b.mse, b.cluster),
                });
            }
            let grads = g.backward(nodes.total)?;
            let updates: Vec<_> = g
                .bound_params()
                .into_iter()
                .filter(|(id, _)| store.is_trainable(*id))
                .map(|(id, v)| (id, grads.get_or_zeros(v, store.value(id).shape())))
                .collect();
            if let Some((id, bad)) = updates.iter().find(|(_, t)| !t.all_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    detail: format!("gradient of `{}` has {} non-finite entries", store.name(*id), bad.data().iter().filter(|v| !v.is_finite()).count()),
                });
            }
            adam.step(&mut store, &updates);
            ctx.commit_stats(&mut store);
            if let Some(s) = scale_var.0 {
                let gs = grads.get_or_zeros(s, &[1]);
                temp_adam.step(&mut temp_store, &[(temp_id, gs)]);
                log_scale = temp_store.value(temp_id).data()[0];
            }
            let w = chunk.len() as f64;
            sums.total += b.total * w;
            sums.align += b.align * w;
            sums.mse += b.mse * w;
            sums.cluster += b.cluster * w;
            debug!("epoch {epoch} batch {bi}: loss {:.5}", b.total);
        }
        let n = train_set.len() as f64;
        let rounded = store.to_f32_precision();
        let acc = validate_retrieval(&encoder, &rounded, val_set, cfg.eval_batch_size)?;
        let temperature = if cfg.loss.learnable_temperature {
            1.0 / log_scale.exp()
        } else {
            cfg.loss.temperature
        };
        let elapsed = started.elapsed().as_secs_f64();
        let record = EpochRecord {
            epoch,
            loss: sums.total / n,
            align: sums.align / n,
            mse: sums.mse / n,
            cluster: sums.cluster / n,
            val_top1: acc.top1,
            val_top5: acc.top5,
            temperature,
            seconds: (!cfg.deterministic).then_some(elapsed),
        };
        info!(
            "epoch {epoch}: loss {:.4} val top-1 {:.3} top-5 {:.3} ({elapsed:.1}s)",
            record.loss, record.val_top1, record.val_top5
        );
        on_epoch(&record);
        history.push(record);
        let decision = stopper.update(acc.top1);
        if decision.improved {
            let meta = CheckpointMeta {
                encoder: cfg.encoder.clone(),
                temperature,
                epoch,
                val_top1: acc.top1,
            };
            best = Some((rounded, meta));
        }
        if decision.stop {
            stop = StopReason::EarlyStopped;
            info!("no improvement for {} epochs, stopping", cfg.patience);
            break;
        }
    }
    let (store, meta) = best.expect("the first epoch always improves");
    Ok(TrainOutcome {
        encoder,
        store,
        meta,
        history,
        stop,
    })
}
