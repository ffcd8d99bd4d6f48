//! 1-N training loop: encode the whole graph once per step, score each
//! mini-batch query against every entity, and minimize binary cross-entropy.

mod config;

pub use config::{expand_grid, parse_grid, TrainConfig, CONFIG_KEYS};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{build_filter_index_for, Dataset, FilterIndex, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport};
use crate::graph::build_adjacency;
use crate::model::{Model, ModelConfig};
use crate::nn::{read_checkpoint, write_checkpoint, Adam, AdamConfig, Mode, ParamStore, Tape};
use crate::real::{Dtype, Real};

pub const METRICS_HEADER: &str = "epoch,loss,mrr,hits1,hits3,hits10";

/// Queries `(s, r)` with the ids of every true training object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryBatch {
    pub queries: Vec<(usize, usize)>,
    pub labels: Vec<Vec<usize>>,
}

impl QueryBatch {
    pub fn subjects(&self) -> Vec<usize> {
        self.queries.iter().map(|q| q.0).collect()
    }

    pub fn relations(&self) -> Vec<usize> {
        self.queries.iter().map(|q| q.1).collect()
    }

    /// Dense `B × N` targets `(1 - eps) y + eps / N`.
    pub fn targets<T: Real>(&self, num_entities: usize, smoothing: f64) -> Array2<T> {
        let off = T::of(smoothing / num_entities as f64);
        let on = T::of(1.0 - smoothing) + off;
        let mut t = Array2::from_elem((self.queries.len(), num_entities), off);
        for (b, objs) in self.labels.iter().enumerate() {
            for &o in objs {
                t[[b, o]] = on;
            }
        }
        t
    }
}

/// Shuffles the unique training queries and cuts them into batches.
pub fn make_batches<R: rand::Rng>(
    index: &FilterIndex,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<QueryBatch>> {
    if index.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut keys: Vec<(usize, usize)> = index.iter().map(|(k, _)| *k).collect();
    keys.shuffle(rng);
    Ok(keys
        .chunks(batch_size)
        .map(|chunk| QueryBatch {
            queries: chunk.to_vec(),
            labels: chunk
                .iter()
                .map(|&(s, r)| {
                    index
                        .objects(s, r)
                        .map_or_else(Vec::new, |o| o.iter().copied().collect())
                })
                .collect(),
        })
        .collect())
}

/// Model, parameters, optimizer and RNG for one run.
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Model,
    pub store: ParamStore<T>,
    pub adam: Adam<T>,
    pub rng: ChaCha8Rng,
    pub train_index: FilterIndex,
    epoch: usize,
}

/// Model hyperparameters for `config` on `dataset`.
pub fn model_config(config: &TrainConfig, dataset: &Dataset) -> ModelConfig {
    ModelConfig {
        num_nodes: dataset.vocab.num_entities(),
        num_types: dataset.vocab.num_graph_relations(),
        num_relations: dataset.vocab.num_relations(),
        dim: config.embedding_size,
        layers: config.layers,
        activation: config.activation,
        row_normalize: config.row_normalize,
        dropout: config.dropout,
        encoder_dropout: config.encoder_dropout.unwrap_or(config.dropout),
        decoder: config.decoder,
        channels: config.kernel_count,
        width: config.kernel_width,
        batch_norm: config.batch_norm,
        bias: config.bias,
        transe_norm: config.transe_norm,
    }
}

/// Builds the model for `config` on `dataset` with freshly initialized parameters.
pub fn build_model<T: Real>(
    config: &TrainConfig,
    dataset: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<(Model, ParamStore<T>)> {
    config.validate()?;
    let adj = Arc::new(build_adjacency(&dataset.store, &dataset.vocab)?);
    let mut store = ParamStore::new();
    let model = Model::init(&mut store, rng, &model_config(config, dataset), adj)?;
    Ok((model, store))
}

impl<T: Real> Trainer<T> {
    pub fn new(config: &TrainConfig, dataset: &Dataset) -> Result<Self> {
        if config.precision != T::DTYPE {
            return Err(Error::Config(format!(
                "config asks for {} but trainer runs in {}",
                config.precision.name(),
                T::DTYPE.name()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (model, store) = build_model::<T>(config, dataset, &mut rng)?;
        let adam = Adam::new(
            &store,
            AdamConfig {
                learning_rate: config.learning_rate,
                weight_decay: config.weight_decay,
                grad_clip: config.grad_clip,
                ..AdamConfig::default()
            },
        );
        let train_index = build_filter_index_for(&dataset.store, &[Split::Train]);
        if train_index.is_empty() {
            return Err(Error::Invalid("training split is empty".into()));
        }
        Ok(Trainer {
            config: config.clone(),
            model,
            store,
            adam,
            rng,
            train_index,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One optimizer step on `batch`; returns the loss before the update.
    pub fn train_step(&mut self, batch: &QueryBatch) -> Result<f64> {
        let n = self.model.config.num_nodes;
        let targets = Arc::new(batch.targets::<T>(n, self.config.label_smoothing));
        let mut tape = Tape::new();
        let (loss, trace) = self.model.loss(
            &mut tape,
            &self.store,
            &batch.subjects(),
            &batch.relations(),
            targets,
            Mode::Train,
            &mut self.rng,
        )?;
        let value = tape.scalar(loss).f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {value} at epoch {} (Adam step {})",
                self.epoch + 1,
                self.adam.steps()
            )));
        }
        tape.backward(loss, &mut self.store)?;
        trace.update_running(&tape, &mut self.store);
        self.adam.step(&mut self.store)?;
        Ok(value)
    }

    /// Runs one pass over shuffled training queries; returns the mean batch loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let batches = make_batches(&self.train_index, self.config.batch_size, &mut self.rng)?;
        let mut total = 0.0;
        for b in &batches {
            total += self.train_step(b)?;
        }
        self.epoch += 1;
        Ok(total / batches.len() as f64)
    }

    pub fn evaluate(&self, dataset: &Dataset, split: Split) -> Result<MetricReport> {
        let scorer = self.model.scorer(&self.store)?;
        Ok(evaluate(&dataset.store, split, &scorer, &dataset.filter)?.0)
    }

    /// Writes parameters, optimizer state and config.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.store, Some(&self.adam), &self.config.to_text())
    }
}

/// Outcome of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best: Option<MetricReport>,
    pub last_loss: Option<f64>,
}

fn metrics_row(epoch: usize, loss: f64, m: Option<&MetricReport>) -> String {
    match m {
        Some(m) => format!(
            "{epoch},{loss:.6},{:.6},{:.6},{:.6},{:.6}\n",
            m.mrr, m.hits1, m.hits3, m.hits10
        ),
        None => format!("{epoch},{loss:.6},,,,\n"),
    }
}

/// Trains under `config`, writing into `out`: `config.txt`, `metrics.csv`
/// (one row per epoch; metric columns filled on evaluation epochs),
/// `best.ckpt` (best validation MRR) and `last.ckpt`. With zero epochs the
/// initial parameters are written to both checkpoints.
pub fn fit(config: &TrainConfig, dataset: &Dataset, out: &Path) -> Result<FitSummary> {
    match config.precision {
        Dtype::F32 => fit_typed::<f32>(config, dataset, out),
        Dtype::F64 => fit_typed::<f64>(config, dataset, out),
    }
}

pub fn fit_typed<T: Real>(
    config: &TrainConfig,
    dataset: &Dataset,
    out: &Path,
) -> Result<FitSummary> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, body: &str| {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    write("config.txt", &config.to_text())?;
    let mut trainer = Trainer::<T>::new(config, dataset)?;
    let has_valid = dataset.store.count(Split::Valid) > 0;
    let mut metrics = format!("{METRICS_HEADER}\n");
    write("metrics.csv", &metrics)?;
    let best_path = out.join("best.ckpt");
    trainer.save(&best_path)?;

    let mut summary = FitSummary {
        epochs_run: 0,
        best_epoch: None,
        best: None,
        last_loss: None,
    };
    let mut stale = 0usize;
    for epoch in 1..=config.epochs {
        let loss = trainer.run_epoch()?;
        summary.epochs_run = epoch;
        summary.last_loss = Some(loss);
        let eval_now = has_valid && (epoch % config.eval_every == 0 || epoch == config.epochs);
        let report = if eval_now {
            Some(trainer.evaluate(dataset, Split::Valid)?)
        } else {
            None
        };
        metrics.push_str(&metrics_row(epoch, loss, report.as_ref()));
        write("metrics.csv", &metrics)?;
        match &report {
            Some(m) => {
                info!(
                    "epoch {epoch} loss {loss:.6} valid mrr {:.4} hits@10 {:.4}",
                    m.mrr, m.hits10
                );
                if summary.best.is_none_or(|b| m.mrr > b.mrr) {
                    summary.best = Some(*m);
                    summary.best_epoch = Some(epoch);
                    stale = 0;
                    trainer.save(&best_path)?;
                } else {
                    stale += 1;
                }
            }
            None => {
                info!("epoch {epoch} loss {loss:.6}");
                if !has_valid {
                    trainer.save(&best_path)?;
                }
            }
        }
        if config.patience > 0 && stale >= config.patience {
            info!("no validation improvement in {stale} evaluations; stopping");
            break;
        }
    }
    trainer.save(&out.join("last.ckpt"))?;
    Ok(summary)
}

/// Rebuilds a model from a checkpoint written by [`fit`].
pub fn restore<T: Real>(
    path: &Path,
    dataset: &Dataset,
) -> Result<(TrainConfig, Model, ParamStore<T>)> {
    let ckpt = read_checkpoint::<T>(path)?;
    let config = TrainConfig::parse(&ckpt.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (model, mut store) = build_model::<T>(&config, dataset, &mut rng)?;
    ckpt.load_into(&mut store)?;
    Ok((config, model, store))
}

/// One row of a sweep: the swept values and the best validation metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub values: Vec<String>,
    pub seed: u64,
    pub summary: FitSummary,
}

/// Fits every grid point into `out/run_<i>` and returns the combined CSV.
pub fn sweep(
    base: &TrainConfig,
    grid: &[(String, Vec<String>)],
    dataset: &Dataset,
    out: &Path,
) -> Result<(Vec<SweepRow>, String)> {
    let points = expand_grid(base, grid)?;
    let mut rows = Vec::new();
    for (i, (values, cfg)) in points.into_iter().enumerate() {
        info!("sweep point {i}: {values:?}");
        let summary = fit(&cfg, dataset, &out.join(format!("run_{i}")))?;
        rows.push(SweepRow {
            values,
            seed: cfg.seed,
            summary,
        });
    }
    let mut csv = String::new();
    for (k, _) in grid {
        csv.push_str(k);
        csv.push(',');
    }
    csv.push_str("seed,best_epoch,mrr,hits1,hits3,hits10\n");
    for r in &rows {
        for v in &r.values {
            csv.push_str(v);
            csv.push(',');
        }
        let _ = write!(csv, "{},", r.seed);
        match (r.summary.best_epoch, &r.summary.best) {
            (Some(e), Some(m)) => {
                let _ = writeln!(
                    csv,
                    "{e},{:.6},{:.6},{:.6},{:.6}",
                    m.mrr, m.hits1, m.hits3, m.hits10
                );
            }
            _ => csv.push_str(",,,,\n"),
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let p = out.join("sweep.csv");
    fs::write(&p, &csv).map_err(|e| Error::io(p, e))?;
    Ok((rows, csv))
}
