//! Command-line flags. Every flag is optional so a config file can supply it;
//! `fill_defaults` then completes whatever neither source set.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use rasa_core::graph::DirectionPolicy;
use rasa_core::model::{BiasMode, Variant};
use rasa_core::train::{AblationConfig, ModelTemplate, TrainConfig};

use crate::util::usage;

#[derive(Debug, Parser)]
#[command(name = "rasa", version, about = "Relation-aware sparse attention over knowledge graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic k-hop dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a trained model on one split.
    Eval(EvalArgs),
    /// Train a grid of (hops, layers, variant, seed) cells.
    Ablate(AblateArgs),
    /// Attention entropy of trained models.
    Entropy(EntropyArgs),
    /// Attention-pattern counts of a triple file.
    SearchSpace(SearchSpaceArgs),
    /// Entity, edge, relation and question counts of MetaQA-format files.
    MetaqaStats(MetaqaStatsArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenDataArgs {
    /// Optional TOML file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub degree: Option<f64>,
    #[arg(long)]
    pub relations: Option<usize>,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub examples_per_graph: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl GenDataArgs {
    pub fn fill_defaults(&mut self) {
        self.entities.get_or_insert(32);
        self.degree.get_or_insert(3.0);
        self.relations.get_or_insert(4);
        self.hops.get_or_insert(1);
        self.count.get_or_insert(1000);
        self.seed.get_or_insert(0);
        self.examples_per_graph.get_or_insert(4);
    }
}

/// Model shape flags shared by `train` and `ablate`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelFlags {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// directed, incoming or symmetric.
    #[arg(long)]
    pub direction: Option<DirectionPolicy>,
    /// shared or per-query.
    #[arg(long)]
    pub bias_mode: Option<BiasMode>,
}

impl ModelFlags {
    pub fn fill_defaults(&mut self) {
        let d = ModelTemplate::default();
        self.dim.get_or_insert(d.model_dim);
        self.heads.get_or_insert(d.head_count);
        self.ffn.get_or_insert(d.ffn_dim);
        self.dropout.get_or_insert(d.dropout);
        self.direction.get_or_insert(d.direction);
        self.bias_mode.get_or_insert(d.bias_mode);
    }

    pub fn template(&self) -> ModelTemplate {
        ModelTemplate {
            model_dim: self.dim.unwrap(),
            head_count: self.heads.unwrap(),
            ffn_dim: self.ffn.unwrap(),
            dropout: self.dropout.unwrap(),
            direction: self.direction.unwrap(),
            bias_mode: self.bias_mode.unwrap(),
        }
    }
}

/// Optimiser flags shared by `train` and `ablate`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct OptimFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
}

impl OptimFlags {
    pub fn fill_defaults(&mut self, base: &TrainConfig) {
        self.lr.get_or_insert(base.learning_rate);
        self.batch_size.get_or_insert(base.batch_size);
        self.epochs.get_or_insert(base.max_epochs);
        self.patience.get_or_insert(base.patience);
        self.warmup.get_or_insert(base.warmup_steps);
    }

    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr.unwrap(),
            batch_size: self.batch_size.unwrap(),
            max_epochs: self.epochs.unwrap(),
            patience: self.patience.unwrap(),
            warmup_steps: self.warmup.unwrap(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory holding train.json, dev.json and test.json.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// rasa or dense.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn fill_defaults(&mut self) {
        self.layers.get_or_insert(1);
        self.variant.get_or_insert(Variant::Rasa);
        self.seed.get_or_insert(0);
        self.model.fill_defaults();
        self.optim.fill_defaults(&TrainConfig::default());
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory holding model.ckpt and model.json.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// train, dev or test.
    #[arg(long)]
    pub split: Option<rasa_core::data::Split>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn fill_defaults(&mut self) {
        self.split.get_or_insert(rasa_core::data::Split::Test);
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AblateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Comma-separated layer counts.
    #[arg(long, value_delimiter = ',')]
    pub layers_list: Option<Vec<usize>>,
    /// Comma-separated hop counts.
    #[arg(long, value_delimiter = ',')]
    pub hops_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<Variant>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub degree: Option<f64>,
    #[arg(long)]
    pub relations: Option<usize>,
    /// Examples generated per cell before the 70/15/15 split.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub examples_per_graph: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimFlags,
    /// Worker threads; 1 runs cells in order on the calling thread.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write each cell's trained model under `models/`.
    #[arg(long)]
    pub save_models: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl AblateArgs {
    pub fn fill_defaults(&mut self) {
        let d = AblationConfig::depth_probe();
        self.layers_list.get_or_insert(d.layer_values);
        self.hops_list.get_or_insert(d.hop_values);
        self.variants.get_or_insert(d.variants);
        self.seeds.get_or_insert(d.seeds);
        self.entities.get_or_insert(d.base_spec.num_entities);
        self.degree.get_or_insert(d.base_spec.avg_out_degree);
        self.relations.get_or_insert(d.base_spec.num_relations);
        self.count.get_or_insert(d.base_spec.num_examples);
        self.examples_per_graph.get_or_insert(d.base_spec.examples_per_graph);
        self.model.fill_defaults();
        self.optim.fill_defaults(&TrainConfig::ablation());
        self.jobs.get_or_insert(1);
        self.save_models.get_or_insert(false);
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EntropyArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model directory; repeat to compare several models.
    #[arg(long)]
    pub model: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub split: Option<rasa_core::data::Split>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EntropyArgs {
    pub fn fill_defaults(&mut self) {
        self.split.get_or_insert(rasa_core::data::Split::Test);
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SearchSpaceArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// File of `head<d>relation<d>tail` lines.
    #[arg(long)]
    pub triples: Option<PathBuf>,
    /// Field delimiter; defaults to a tab (`\t` and `tab` are accepted).
    #[arg(long)]
    pub delimiter: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SearchSpaceArgs {
    pub fn fill_defaults(&mut self) {
        self.delimiter.get_or_insert_with(|| "\\t".into());
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MetaqaStatsArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Knowledge-base file of `subject|relation|object` lines.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Field delimiter; defaults to `|`.
    #[arg(long)]
    pub delimiter: Option<String>,
    /// Add an inverse relation for every relation.
    #[arg(long)]
    pub reverse: Option<bool>,
    /// Question file as `HOP=PATH`; repeatable.
    #[arg(long)]
    pub qa: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl MetaqaStatsArgs {
    pub fn fill_defaults(&mut self) {
        self.delimiter.get_or_insert_with(|| "|".into());
        self.reverse.get_or_insert(false);
        self.qa.get_or_insert_with(Vec::new);
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// manifest.json written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A single delimiter character; `\t` and `tab` mean a tab.
pub fn parse_delimiter(s: &str) -> anyhow::Result<char> {
    match s {
        "\\t" | "tab" => Ok('\t'),
        _ => {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(usage(format!("delimiter must be one character, got {s:?}"))),
            }
        }
    }
}

/// Overlays set flags on the optional TOML config file.
pub fn merge_config<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let mut merged = serde_json::to_value(table)?;
    let serde_json::Value::Object(flag_map) = serde_json::to_value(flags)? else {
        unreachable!("flag structs serialize to objects")
    };
    let obj = merged.as_object_mut().expect("TOML tables are objects");
    if let Some(unknown) = obj.keys().find(|k| !flag_map.contains_key(*k)) {
        return Err(usage(format!("config {}: unknown key {unknown:?}", path.display())));
    }
    for (k, v) in flag_map {
        if !v.is_null() {
            obj.insert(k, v);
        }
    }
    serde_json::from_value(merged).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn flags_override_config() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "entities = 10\nhops = 2\nseed = 4").unwrap();
        let flags = GenDataArgs { hops: Some(3), ..Default::default() };
        let merged = merge_config(&flags, Some(f.path())).unwrap();
        assert_eq!((merged.entities, merged.hops, merged.seed, merged.count), (Some(10), Some(3), Some(4), None));
    }

    #[test]
    fn nested_flags_read_from_flat_config() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "layers = 3\ndim = 32\nbias-mode = \"shared\"\nlr = 0.001").unwrap();
        let merged = merge_config(&TrainArgs::default(), Some(f.path())).unwrap();
        assert_eq!(merged.layers, Some(3));
        assert_eq!(merged.model.dim, Some(32));
        assert_eq!(merged.model.bias_mode, Some(BiasMode::Shared));
        assert_eq!(merged.optim.lr, Some(0.001));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "entitees = 10").unwrap();
        assert!(merge_config(&GenDataArgs::default(), Some(f.path())).is_err());
    }
}
