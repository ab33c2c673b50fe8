//! Depth ablation over hop counts, layer counts, variants and seeds.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, TrainConfig, TrainError};
use crate::data::{gen_khop_dataset, Dataset, DatasetSplits, SyntheticSpec};
use crate::graph::DirectionPolicy;
use crate::model::{BiasMode, ModelConfig, RasaModel, Variant};
use crate::rng::derive_seed;

/// Model settings shared by every cell; layers, relations, size and variant vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub model_dim: usize,
    pub head_count: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub direction: DirectionPolicy,
    pub bias_mode: BiasMode,
}

impl Default for ModelTemplate {
    fn default() -> Self {
        Self {
            model_dim: 16,
            head_count: 2,
            ffn_dim: 32,
            dropout: 0.0,
            direction: DirectionPolicy::Incoming,
            bias_mode: BiasMode::PerQuery,
        }
    }
}

impl ModelTemplate {
    pub fn config(&self, layers: usize, relations: usize, max_entities: usize, variant: Variant) -> ModelConfig {
        ModelConfig {
            layer_count: layers,
            model_dim: self.model_dim,
            head_count: self.head_count,
            relation_count: relations,
            max_entities,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            variant,
            direction: self.direction,
            bias_mode: self.bias_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Task shape; `hop_count` and `seed` are overridden per cell.
    pub base_spec: SyntheticSpec,
    pub model: ModelTemplate,
    pub train: TrainConfig,
    pub layer_values: Vec<usize>,
    pub hop_values: Vec<usize>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl AblationConfig {
    /// n = 32, average out-degree 3, |R| = 4, 2858 examples (2000 train),
    /// L and k in {1, 3}, both variants, seeds 0..3.
    pub fn depth_probe() -> Self {
        Self {
            base_spec: SyntheticSpec {
                num_entities: 32,
                avg_out_degree: 3.0,
                num_relations: 4,
                hop_count: 1,
                num_examples: 2858,
                seed: 0,
                examples_per_graph: 4,
            },
            model: ModelTemplate::default(),
            train: TrainConfig::ablation(),
            layer_values: vec![1, 3],
            hop_values: vec![1, 3],
            variants: vec![Variant::Rasa, Variant::Dense],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationCell {
    pub hops: usize,
    pub layers: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl AblationCell {
    /// Task for this cell. Cells sharing `(hops, seed)` see the same data.
    pub fn spec(&self, base: &SyntheticSpec) -> SyntheticSpec {
        SyntheticSpec {
            hop_count: self.hops,
            seed: derive_seed(self.seed, &[self.hops as u64]),
            ..base.clone()
        }
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, &[self.hops as u64, self.layers as u64, self.variant as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub hops: usize,
    pub layers: usize,
    pub variant: Variant,
    pub seed: u64,
    pub test_hits_at_1: f64,
    pub test_hits_at_10: f64,
    pub test_set_f1: f64,
    pub dev_hits_at_1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub chance_hits_at_1: f64,
    pub train_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[mid] } else { (xs[mid - 1] + xs[mid]) / 2.0 })
}

impl AblationReport {
    pub fn rows_for(&self, hops: usize, layers: usize, variant: Variant) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(move |r| r.hops == hops && r.layers == layers && r.variant == variant)
    }

    /// Median test Hits@1 over seeds.
    pub fn median_hits(&self, hops: usize, layers: usize, variant: Variant) -> Option<f64> {
        median(self.rows_for(hops, layers, variant).map(|r| r.test_hits_at_1).collect())
    }

    pub fn median_chance(&self, hops: usize, layers: usize, variant: Variant) -> Option<f64> {
        median(self.rows_for(hops, layers, variant).map(|r| r.chance_hits_at_1).collect())
    }

    pub const CSV_HEADER: &'static str = "hops,layers,variant,seed,test_hits_at_1,test_hits_at_10,test_set_f1,dev_hits_at_1,best_epoch,epochs_run,chance_hits_at_1,train_examples";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.hops,
                r.layers,
                r.variant,
                r.seed,
                r.test_hits_at_1,
                r.test_hits_at_10,
                r.test_set_f1,
                r.dev_hits_at_1,
                r.best_epoch,
                r.epochs_run,
                r.chance_hits_at_1,
                r.train_examples
            )?;
        }
        Ok(())
    }
}

/// Hits@1 on `test` of always answering the most frequent gold entity of `train`
/// (lowest id on ties).
pub fn chance_baseline(train: &Dataset, test: &Dataset) -> f64 {
    let mut freq: HashMap<usize, usize> = HashMap::new();
    for ex in &train.examples {
        for &a in &ex.answers {
            *freq.entry(a).or_default() += 1;
        }
    }
    let Some(best) = freq.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&e, _)| e) else {
        return 0.0;
    };
    if test.is_empty() {
        return 0.0;
    }
    test.examples.iter().filter(|ex| ex.answers.contains(&best)).count() as f64 / test.len() as f64
}

/// Grid cells in report order: hops, then layers, then variant, then seed.
pub fn ablation_cells(cfg: &AblationConfig) -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for &hops in &cfg.hop_values {
        for &layers in &cfg.layer_values {
            for &variant in &cfg.variants {
                for &seed in &cfg.seeds {
                    cells.push(AblationCell { hops, layers, variant, seed });
                }
            }
        }
    }
    cells
}

/// Trains one fresh model for `cell` on freshly generated data.
pub fn run_cell(cfg: &AblationConfig, cell: AblationCell) -> Result<AblationRow, TrainError> {
    train_cell(cfg, cell).map(|(row, _, _)| row)
}

/// As [`run_cell`], also returning the trained model and the cell's data.
pub fn train_cell(cfg: &AblationConfig, cell: AblationCell) -> Result<(AblationRow, RasaModel, DatasetSplits), TrainError> {
    let spec = cell.spec(&cfg.base_spec);
    let data: DatasetSplits = gen_khop_dataset(&spec)?;
    let model_cfg = cfg.model.config(cell.layers, spec.num_relations, spec.num_entities, cell.variant);
    let model = RasaModel::new(model_cfg, cell.model_seed())?;
    let train_cfg = TrainConfig {
        seed: derive_seed(cell.model_seed(), &[0x7261]),
        ..cfg.train.clone()
    };
    let (model, history) = train(model, &data, &train_cfg)?;
    let test = evaluate(&model, &data.test, history.best_epoch)?;
    let row = AblationRow {
        hops: cell.hops,
        layers: cell.layers,
        variant: cell.variant,
        seed: cell.seed,
        test_hits_at_1: test.hits_at_1,
        test_hits_at_10: test.hits_at_10,
        test_set_f1: test.set_f1,
        dev_hits_at_1: history.best().dev.hits_at_1,
        best_epoch: history.best_epoch,
        epochs_run: history.epochs.len(),
        chance_hits_at_1: chance_baseline(&data.train, &data.test),
        train_examples: data.train.len(),
    };
    Ok((row, model, data))
}

/// Runs every cell sequentially.
pub fn depth_ablation(cfg: &AblationConfig) -> Result<AblationReport, TrainError> {
    if cfg.layer_values.is_empty() || cfg.hop_values.is_empty() || cfg.variants.is_empty() || cfg.seeds.is_empty() {
        return Err(TrainError::InvalidConfig("ablation grid has an empty axis".into()));
    }
    let rows = ablation_cells(cfg)
        .into_iter()
        .map(|cell| run_cell(cfg, cell))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AblationReport { rows })
}
