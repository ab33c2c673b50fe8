//! Optimisation, metrics and the depth/entropy experiments.

mod ablation;
mod adam;

pub use ablation::{
    ablation_cells, chance_baseline, depth_ablation, run_cell, train_cell, AblationCell, AblationConfig, AblationReport,
    AblationRow, ModelTemplate,
};
pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{attention_entropy, AttentionError, EntropyReport};
use crate::data::{DataError, Dataset, DatasetSplits, Split};
use crate::model::{loss, predict_answers, GraphInputs, ModelError, PredictMode, RasaModel};
use crate::numerics::{NumericsError, Tape};
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("dataset does not fit the model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 32,
            max_epochs: 15,
            patience: 3,
            warmup_steps: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!("patience {} exceeds max_epochs {}", self.patience, self.max_epochs));
        }
        Ok(())
    }

    /// Settings for the depth ablation on small synthetic graphs. The default
    /// rate barely moves a freshly initialised small model in 15 epochs.
    pub fn ablation() -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            warmup_steps: 100,
            seed: 0,
        }
    }

    /// Linear warmup to `learning_rate` over `warmup_steps`, constant after.
    /// `step` counts from 0.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub split: Split,
    pub hits_at_1: f64,
    pub hits_at_10: f64,
    pub set_f1: f64,
    pub loss: f64,
    pub epoch: usize,
}

/// Threshold used for set predictions.
pub const SET_THRESHOLD: f64 = 0.5;

/// Indices of the `k` largest logits, lowest index first on ties.
pub fn top_k(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn set_f1(pred: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> f64 {
    let tp = pred.intersection(gold).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / pred.len() as f64;
    let r = tp / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Running totals for Hits@1, Hits@10 and set F1.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    count: usize,
    hits1: usize,
    hits10: usize,
    f1: f64,
    loss: f64,
}

impl MetricAccumulator {
    pub fn add(&mut self, logits: &[f64], gold: &BTreeSet<usize>, loss: f64) {
        self.count += 1;
        let top1 = predict_answers(logits, PredictMode::Top1);
        if top1.iter().any(|v| gold.contains(v)) {
            self.hits1 += 1;
        }
        if top_k(logits, 10).iter().any(|v| gold.contains(v)) {
            self.hits10 += 1;
        }
        self.f1 += set_f1(&predict_answers(logits, PredictMode::Threshold(SET_THRESHOLD)), gold);
        self.loss += loss;
    }

    pub fn finish(&self, split: Split, epoch: usize) -> MetricsRecord {
        let c = self.count.max(1) as f64;
        MetricsRecord {
            split,
            hits_at_1: self.hits1 as f64 / c,
            hits_at_10: self.hits10 as f64 / c,
            set_f1: self.f1 / c,
            loss: self.loss / c,
            epoch,
        }
    }
}

/// Mask and type maps for every graph in a split, built once.
pub fn graph_inputs(model: &RasaModel, data: &Dataset) -> HashMap<usize, GraphInputs> {
    data.graphs.iter().map(|(&id, g)| (id, model.graph_inputs(g))).collect()
}

fn check_fit(model: &RasaModel, data: &Dataset) -> Result<(), TrainError> {
    let cfg = model.config();
    for (id, g) in &data.graphs {
        if g.num_relations() != cfg.relation_count {
            return Err(TrainError::Mismatch(format!(
                "graph {id} has {} relations, model expects {}",
                g.num_relations(),
                cfg.relation_count
            )));
        }
        if g.num_entities() > cfg.max_entities {
            return Err(TrainError::Mismatch(format!(
                "graph {id} has {} entities, model holds {}",
                g.num_entities(),
                cfg.max_entities
            )));
        }
    }
    Ok(())
}

/// Logits of every example in `data`, in order.
pub fn predict_split(model: &RasaModel, data: &Dataset) -> Result<Vec<Vec<f64>>, TrainError> {
    check_fit(model, data)?;
    let inputs = graph_inputs(model, data);
    data.examples
        .iter()
        .map(|ex| Ok(model.logits(&inputs[&ex.graph_id], ex.source, &ex.path)?))
        .collect()
}

pub fn evaluate(model: &RasaModel, data: &Dataset, epoch: usize) -> Result<MetricsRecord, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptySplit(data.split));
    }
    check_fit(model, data)?;
    let inputs = graph_inputs(model, data);
    let mut acc = MetricAccumulator::default();
    for ex in &data.examples {
        let mut tape = Tape::new();
        let (logits, _) = model.forward(&mut tape, &inputs[&ex.graph_id], ex.source, &ex.path, None)?;
        let l = loss(&mut tape, logits, &ex.answers)?;
        acc.add(tape.value(logits).data(), &ex.answers, tape.value(l).item()?);
    }
    Ok(acc.finish(data.split, epoch))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub learning_rate: f64,
    pub dev: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,learning_rate,dev_loss,dev_hits_at_1,dev_hits_at_10,dev_set_f1,best")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.learning_rate,
                e.dev.loss,
                e.dev.hits_at_1,
                e.dev.hits_at_10,
                e.dev.set_f1,
                u8::from(e.epoch == self.best_epoch)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

/// Keeps the first epoch with the highest score; stops after `patience`
/// consecutive epochs without strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(f64, usize)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, since_best: 0 }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> Verdict {
        if self.best.map_or(true, |(b, _)| score > b) {
            self.best = Some((score, epoch));
            self.since_best = 0;
            return Verdict { improved: true, stop: false };
        }
        self.since_best += 1;
        Verdict { improved: false, stop: self.since_best >= self.patience }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(_, e)| e)
    }
}

/// Mini-batch Adam with early stopping on dev Hits@1.
///
/// Stops after `patience` epochs without strict improvement and returns the
/// parameters of the best epoch (earliest on ties).
pub fn train(model: RasaModel, data: &DatasetSplits, cfg: &TrainConfig) -> Result<(RasaModel, TrainHistory), TrainError> {
    train_with(model, data, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    mut model: RasaModel,
    data: &DatasetSplits,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(RasaModel, TrainHistory), TrainError> {
    cfg.validate()?;
    for split in [&data.train, &data.dev] {
        if split.is_empty() {
            return Err(TrainError::EmptySplit(split.split));
        }
        check_fit(&model, split)?;
    }
    let inputs = graph_inputs(&model, &data.train);
    let mut adam = AdamState::new(&model.store);
    let mut step = 0usize;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_store = model.store.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut stream(cfg.seed, &[0, epoch as u64]));
        let mut dropout_rng = stream(cfg.seed, &[1, epoch as u64]);
        let mut loss_sum = 0.0;
        let mut lr = cfg.lr_at(step);
        for batch in order.chunks(cfg.batch_size) {
            model.store.zero_grads();
            for &i in batch {
                let ex = &data.train.examples[i];
                let mut tape = Tape::new();
                let (logits, _) =
                    model.forward(&mut tape, &inputs[&ex.graph_id], ex.source, &ex.path, Some(&mut dropout_rng))?;
                let l = loss(&mut tape, logits, &ex.answers)?;
                loss_sum += tape.value(l).item()?;
                tape.backward(l, &mut model.store)?;
            }
            model.store.scale_grads(1.0 / batch.len() as f64);
            lr = cfg.lr_at(step);
            adam_step(&mut model.store, &mut adam, lr)?;
            step += 1;
        }
        let dev = evaluate(&model, &data.dev, epoch)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            learning_rate: lr,
            dev,
        };
        on_epoch(&record);
        let verdict = stopper.observe(epoch, record.dev.hits_at_1);
        epochs.push(record);
        if verdict.improved {
            best_store = model.store.clone();
        }
        if verdict.stop {
            break;
        }
    }
    model.store = best_store;
    Ok((model, TrainHistory { epochs, best_epoch: stopper.best_epoch().expect("at least one epoch runs") }))
}

/// Attention entropy averaged uniformly over every example of a split.
///
/// Also returns the per-example reports, in example order.
pub fn entropy_report(model: &RasaModel, data: &Dataset) -> Result<(EntropyReport, Vec<EntropyReport>), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptySplit(data.split));
    }
    check_fit(model, data)?;
    let inputs = graph_inputs(model, data);
    let mut per_example = Vec::with_capacity(data.len());
    for ex in &data.examples {
        let mut tape = Tape::new();
        let gi = &inputs[&ex.graph_id];
        let (_, traces) = model.forward(&mut tape, gi, ex.source, &ex.path, None)?;
        per_example.push(attention_entropy(&traces, gi.n)?);
    }
    Ok((EntropyReport::average(&per_example)?, per_example))
}

#[cfg(test)]
mod tests;
