//! Meta-training: pair construction over meta-training classes, weighted BCE
//! minimization with Adam, and model selection on validation classes.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::meta_classifier::{MetaClassifier, ModelConfig, SimMode};
use crate::numkernel::{adam_step, AdamConfig, GradBuf};
use crate::ranker::{rank_negative_classes, topk_in_class, ClassIndex};

/// Pairs per gradient work unit. Fixed so that results do not depend on the
/// number of worker threads.
const GRAD_CHUNK: usize = 16;

/// One meta-training instance: a query row and the top-k rows of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub query_row: usize,
    pub neighbor_rows: Vec<usize>,
    /// Whether the neighbors come from the query's own class.
    pub positive: bool,
    pub weight: f64,
}

impl TrainingPair {
    pub fn target(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            0.0
        }
    }
}

/// Meta-training classes and validation classes; must not overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    pub meta_train: Vec<String>,
    pub validation: Vec<String>,
}

impl ClassPartition {
    pub fn new(meta_train: Vec<String>, validation: Vec<String>) -> Result<Self> {
        let seen: HashSet<&String> = meta_train.iter().collect();
        if let Some(shared) = validation.iter().find(|c| seen.contains(c)) {
            return Err(Error::Config(format!(
                "class `{shared}` is both a meta-training and a validation class"
            )));
        }
        Ok(Self { meta_train, validation })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub n: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Matching-network hidden width.
    pub hidden: usize,
    pub sim: SimMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            k: 5,
            n: 9,
            batch_size: 256,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            hidden: 512,
            sim: SimMode::AbsSubSum,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("n", self.n),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::Config("optimizer settings out of range".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults, unknown keys are an error.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
                value
                    .parse()
                    .map_err(|_| format!("invalid value `{value}` for `{key}`"))
            }
            let r: std::result::Result<(), String> = (|| {
                match key {
                    "k" => cfg.k = num(key, value)?,
                    "n" => cfg.n = num(key, value)?,
                    "batch_size" => cfg.batch_size = num(key, value)?,
                    "lr" => cfg.lr = num(key, value)?,
                    "beta1" => cfg.beta1 = num(key, value)?,
                    "beta2" => cfg.beta2 = num(key, value)?,
                    "eps" => cfg.eps = num(key, value)?,
                    "max_epochs" => cfg.max_epochs = num(key, value)?,
                    "patience" => cfg.patience = num(key, value)?,
                    "seed" => cfg.seed = num(key, value)?,
                    "hidden" => cfg.hidden = num(key, value)?,
                    "sim" => cfg.sim = value.parse().map_err(|e: Error| e.to_string())?,
                    other => return Err(format!("unknown key `{other}`")),
                }
                Ok(())
            })();
            r.map_err(perr)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        format!(
            "k = {}\nn = {}\nbatch_size = {}\nlr = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\nmax_epochs = {}\npatience = {}\nseed = {}\nhidden = {}\nsim = {}\n",
            self.k,
            self.n,
            self.batch_size,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.max_epochs,
            self.patience,
            self.seed,
            self.hidden,
            self.sim
        )
    }
}

/// Builds one positive and `n` negative pairs for every example of every
/// class in `classes`.
///
/// The positive pair uses the top-`k` members of the query's own class with
/// the query itself excluded; each negative pair uses the top-`k` members of
/// one of the `n` classes whose class vectors are closest to the query.
/// Positive pairs weigh `n`, negative pairs weigh 1.
pub fn build_pairs(m: &EmbeddingMatrix, classes: &[String], k: usize, n: usize) -> Result<Vec<TrainingPair>> {
    if k == 0 || n == 0 {
        return Err(Error::Config("k and n must be at least 1".into()));
    }
    let grouped = m.class_rows();
    let mut idx = ClassIndex::new();
    let mut queries = Vec::new();
    for label in classes {
        let rows = grouped
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, r)| r.clone())
            .ok_or_else(|| Error::UnknownClass(label.clone()))?;
        if rows.len() < 2 {
            return Err(Error::ClassTooSmall(label.clone()));
        }
        queries.extend(rows.iter().map(|&r| (r, label.as_str())));
        idx.insert_class(label, rows, m)?;
    }
    if idx.len() < n + 1 {
        return Err(Error::InsufficientClasses {
            needed: n,
            available: idx.len().saturating_sub(1),
        });
    }

    let per_query: Vec<Vec<TrainingPair>> = queries
        .par_iter()
        .map(|&(row, label)| -> Result<Vec<TrainingPair>> {
            let q = m.vector(row);
            let id = m.record(row)?.id.as_str();
            let mut out = Vec::with_capacity(n + 1);
            out.push(TrainingPair {
                query_row: row,
                neighbor_rows: topk_in_class(q, label, k, &idx, m, Some(id))?,
                positive: true,
                weight: n as f64,
            });
            for neg in rank_negative_classes(q, label, n, &idx)? {
                out.push(TrainingPair {
                    query_row: row,
                    neighbor_rows: topk_in_class(q, &neg, k, &idx, m, None)?,
                    positive: false,
                    weight: 1.0,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

fn pair_loss(model: &MetaClassifier, pair: &TrainingPair, m: &EmbeddingMatrix) -> Result<f64> {
    let neighbors = m.lookup(&pair.neighbor_rows)?;
    model.pair_loss(m.vector(pair.query_row), &neighbors, pair.target(), pair.weight)
}

/// Mean weighted BCE over `pairs`; no gradients are touched.
pub fn validation_loss(model: &MetaClassifier, pairs: &[TrainingPair], m: &EmbeddingMatrix) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("validation pairs must not be empty".into()));
    }
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|p| pair_loss(model, p, m))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: MetaClassifier,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    /// Parameters after the last epoch that ran.
    pub final_model: MetaClassifier,
}

fn batch_gradient(model: &MetaClassifier, batch: &[&TrainingPair], m: &EmbeddingMatrix) -> Result<(f64, GradBuf)> {
    let parts: Vec<(f64, GradBuf)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| -> Result<(f64, GradBuf)> {
            let mut buf = GradBuf::zeros_like(model.params());
            let mut loss = 0.0;
            for p in chunk {
                let neighbors = m.lookup(&p.neighbor_rows)?;
                loss += model.pair_loss_and_grad(m.vector(p.query_row), &neighbors, p.target(), p.weight, &mut buf)?;
            }
            Ok((loss, buf))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().expect("batch is non-empty");
    for (l, g) in iter {
        loss += l;
        grad.add_assign(&g);
    }
    Ok((loss, grad))
}

/// Trains a fresh meta-classifier on `pairs` and keeps the snapshot with the
/// lowest validation loss, stopping after `patience` epochs without
/// improvement.
pub fn train(
    pairs: &[TrainingPair],
    val_pairs: &[TrainingPair],
    cfg: &TrainConfig,
    m: &EmbeddingMatrix,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Config("training and validation pairs must not be empty".into()));
    }
    let model_cfg = ModelConfig {
        k: cfg.k,
        dim: m.dim(),
        hidden: cfg.hidden,
        sim: cfg.sim,
    };
    let mut model = MetaClassifier::new(model_cfg, cfg.seed)?;
    model.params_mut().zero_grads();
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a1e_0f_9a15);
    let mut order: Vec<&TrainingPair> = pairs.iter().collect();

    let mut best: Option<(MetaClassifier, usize, f64)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = batch_gradient(&model, batch, m)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b, loss });
            }
            epoch_loss += loss;
            let store = model.params_mut();
            store.zero_grads();
            store.accumulate(&grad, 1.0 / batch.len() as f64)?;
            adam_step(store, &adam)?;
        }
        let train_loss = epoch_loss / pairs.len() as f64;
        let val_loss = validation_loss(&model, val_pairs, m)?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        let improved = best.as_ref().is_none_or(|(_, _, v)| val_loss < *v);
        if improved {
            let snapshot = MetaClassifier::from_params(model_cfg, model.params().snapshot())?;
            best = Some((snapshot, epoch, val_loss));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (best_model, best_epoch, best_val_loss) = best.expect("at least one epoch ran");
    let final_model = MetaClassifier::from_params(model_cfg, model.params().snapshot())?;
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        best_val_loss,
        history,
        final_model,
    })
}

/// Builds training pairs over the meta-training classes and validation pairs
/// over the validation classes of `m`, then trains.
///
/// Validation pairs use at most `|validation| - 1` negatives per query.
pub fn train_partition(m: &EmbeddingMatrix, part: &ClassPartition, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pairs = build_pairs(m, &part.meta_train, cfg.k, cfg.n)?;
    let n_val = cfg.n.min(part.validation.len().saturating_sub(1)).max(1);
    let val_pairs = build_pairs(m, &part.validation, cfg.k, n_val)?;
    train(&pairs, &val_pairs, cfg, m)
}
