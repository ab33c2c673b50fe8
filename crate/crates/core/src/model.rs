//! Stacked RASA k-hop reasoner.
//!
//! Node `v` starts from its entity embedding, plus a learned flag vector when
//! `v` is the query source. Before block `i` the embedding of the `i`-th hop
//! relation (or an idle embedding once the path is exhausted) is added to every
//! node. Each block is pre-norm: `h += attn(ln(h)); h += ffn(ln(h))`. A final
//! norm and a linear readout give one logit per node.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{
    rasa_attention, standard_attention, AttentionConfig, AttentionError, AttentionParams, AttentionTrace,
    GraphContext,
};
use crate::graph::{derive_mask, AttentionMask, DirectionPolicy, EdgeTypeMap, KnowledgeGraph};
use crate::numerics::{
    glorot_uniform, read_checkpoint, write_checkpoint, NumericsError, ParamId, ParamStore, Tape, Tensor, Var,
};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("gold answer set is empty")]
    EmptyGoldSet,
    #[error("hop path is empty")]
    EmptyPath,
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Adjacency-masked attention with edge-type biases.
    Rasa,
    /// Every node attends to every node; no bias.
    Dense,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rasa" => Ok(Self::Rasa),
            "dense" => Ok(Self::Dense),
            other => Err(format!("unknown variant {other:?} (expected rasa or dense)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rasa => "rasa",
            Self::Dense => "dense",
        })
    }
}

/// How edge-type bias tables are assigned to layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasMode {
    /// One `|R| + 1` table shared by every layer.
    Shared,
    /// One `|R| + 1` table per hop relation (plus one for idle layers); a
    /// layer uses the table of the relation it is conditioned on.
    PerQuery,
}

impl std::str::FromStr for BiasMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared" => Ok(Self::Shared),
            "per-query" => Ok(Self::PerQuery),
            other => Err(format!("unknown bias mode {other:?} (expected shared or per-query)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layer_count: usize,
    pub model_dim: usize,
    pub head_count: usize,
    pub relation_count: usize,
    /// Rows of the entity embedding table; graphs may not exceed it.
    pub max_entities: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub direction: DirectionPolicy,
    pub bias_mode: BiasMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<AttentionConfig, ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.layer_count == 0 {
            return bad("layer_count must be at least 1".into());
        }
        if self.relation_count == 0 || self.max_entities == 0 || self.ffn_dim == 0 {
            return bad("relation_count, max_entities and ffn_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        AttentionConfig::new(self.model_dim, self.head_count).map_err(|e| ModelError::InvalidConfig(e.to_string()))
    }

    fn bias_table_count(&self) -> usize {
        match self.bias_mode {
            BiasMode::Shared => 1,
            BiasMode::PerQuery => self.relation_count + 1,
        }
    }

    /// Closed-form number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let (d, f, r) = (self.model_dim, self.ffn_dim, self.relation_count);
        let block = 4 * d * d + 2 * d * f + f + d + 4 * d;
        self.max_entities * d + (r + 1) * d + d + self.layer_count * block + self.bias_table_count() * (r + 1) + 2 * d + d + 1
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockParams {
    ln1_gain: ParamId,
    ln1_shift: ParamId,
    attn: AttentionParams,
    ln2_gain: ParamId,
    ln2_shift: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
}

#[derive(Debug, Clone)]
struct ModelParams {
    entity_embeddings: ParamId,
    relation_embeddings: ParamId,
    source_flag: ParamId,
    blocks: Vec<BlockParams>,
    bias_tables: Vec<ParamId>,
    final_gain: ParamId,
    final_shift: ParamId,
    readout_w: ParamId,
    readout_b: ParamId,
}

/// Mask and edge types of one graph under a model's direction policy.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub n: usize,
    pub mask: AttentionMask,
    pub etypes: EdgeTypeMap,
}

impl GraphInputs {
    pub fn new(g: &KnowledgeGraph, policy: DirectionPolicy) -> Self {
        let (mask, etypes) = derive_mask(g, policy);
        Self {
            n: g.num_entities(),
            mask,
            etypes,
        }
    }
}

/// A k-hop query with its gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KHopExample {
    pub graph_id: usize,
    pub source: usize,
    pub path: Vec<usize>,
    pub answers: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct RasaModel {
    config: ModelConfig,
    attn: AttentionConfig,
    seed: u64,
    pub store: ParamStore,
    params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: ModelConfig,
    seed: u64,
    parameter_count: usize,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "model.json";

impl RasaModel {
    /// Deterministic initialisation: matrices Glorot-uniform, norm gains 1,
    /// every bias (including the edge-type tables) 0.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let attn = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, f, r) = (config.model_dim, config.ffn_dim, config.relation_count);

        let entity_embeddings = store.add("entity_embeddings", glorot_uniform(&[config.max_entities, d], &mut rng))?;
        let relation_embeddings = store.add("relation_embeddings", glorot_uniform(&[r + 1, d], &mut rng))?;
        let source_flag = store.add("source_flag", glorot_uniform(&[1, d], &mut rng))?;
        let mut blocks = Vec::with_capacity(config.layer_count);
        for l in 0..config.layer_count {
            let p = format!("block{l}");
            let ln1_gain = store.add(format!("{p}.ln1.gain"), Tensor::ones(&[d]))?;
            let ln1_shift = store.add(format!("{p}.ln1.shift"), Tensor::zeros(&[d]))?;
            let attn_params = AttentionParams::init(&mut store, &format!("{p}.attn"), &attn, &mut rng)?;
            let ln2_gain = store.add(format!("{p}.ln2.gain"), Tensor::ones(&[d]))?;
            let ln2_shift = store.add(format!("{p}.ln2.shift"), Tensor::zeros(&[d]))?;
            let ff_w1 = store.add(format!("{p}.ffn.w1"), glorot_uniform(&[d, f], &mut rng))?;
            let ff_b1 = store.add(format!("{p}.ffn.b1"), Tensor::zeros(&[f]))?;
            let ff_w2 = store.add(format!("{p}.ffn.w2"), glorot_uniform(&[f, d], &mut rng))?;
            let ff_b2 = store.add(format!("{p}.ffn.b2"), Tensor::zeros(&[d]))?;
            blocks.push(BlockParams {
                ln1_gain,
                ln1_shift,
                attn: attn_params,
                ln2_gain,
                ln2_shift,
                ff_w1,
                ff_b1,
                ff_w2,
                ff_b2,
            });
        }
        let bias_tables = (0..config.bias_table_count())
            .map(|t| {
                let name = match config.bias_mode {
                    BiasMode::Shared => "edge_bias".to_string(),
                    BiasMode::PerQuery => format!("edge_bias.q{t}"),
                };
                store.add(name, Tensor::zeros(&[r + 1]))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let final_gain = store.add("final.gain", Tensor::ones(&[d]))?;
        let final_shift = store.add("final.shift", Tensor::zeros(&[d]))?;
        let readout_w = store.add("readout.w", glorot_uniform(&[d, 1], &mut rng))?;
        let readout_b = store.add("readout.b", Tensor::zeros(&[1]))?;

        Ok(Self {
            config,
            attn,
            seed,
            store,
            params: ModelParams {
                entity_embeddings,
                relation_embeddings,
                source_flag,
                blocks,
                bias_tables,
                final_gain,
                final_shift,
                readout_w,
                readout_b,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entity_embeddings(&self) -> ParamId {
        self.params.entity_embeddings
    }

    /// Bias tables in layer-selection order (a single entry in shared mode).
    pub fn bias_tables(&self) -> &[ParamId] {
        &self.params.bias_tables
    }

    pub fn graph_inputs(&self, g: &KnowledgeGraph) -> GraphInputs {
        GraphInputs::new(g, self.config.direction)
    }

    /// Records a forward pass and returns per-node logits (shape `[n]`) and
    /// one attention trace per layer. Dropout is applied only when `dropout_rng`
    /// is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        inputs: &GraphInputs,
        source: usize,
        path: &[usize],
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Vec<AttentionTrace>), ModelError> {
        let cfg = &self.config;
        let n = inputs.n;
        if n > cfg.max_entities || n == 0 {
            return Err(ModelError::IndexOutOfRange {
                what: "graph size",
                index: n,
                bound: cfg.max_entities + 1,
            });
        }
        if inputs.etypes.num_relations() != cfg.relation_count {
            return Err(ModelError::Mismatch(format!(
                "graph has {} relations, model expects {}",
                inputs.etypes.num_relations(),
                cfg.relation_count
            )));
        }
        if source >= n {
            return Err(ModelError::IndexOutOfRange { what: "source", index: source, bound: n });
        }
        if path.is_empty() {
            return Err(ModelError::EmptyPath);
        }
        if let Some(&r) = path.iter().find(|&&r| r >= cfg.relation_count) {
            return Err(ModelError::IndexOutOfRange { what: "relation", index: r, bound: cfg.relation_count });
        }

        let p = &self.params;
        let store = &self.store;
        let nodes: Vec<usize> = (0..n).collect();
        let table = tape.param(store, p.entity_embeddings);
        let mut h = tape.gather_rows(table, &nodes)?;
        let mut onehot = Tensor::zeros(&[n, 1]);
        onehot.data_mut()[source] = 1.0;
        let onehot = tape.constant(onehot);
        let flag = tape.param(store, p.source_flag);
        let flag = tape.matmul(onehot, flag)?;
        h = tape.add(h, flag)?;

        let rel_table = tape.param(store, p.relation_embeddings);
        let idle = cfg.relation_count;
        let mut traces = Vec::with_capacity(cfg.layer_count);
        for (l, block) in p.blocks.iter().enumerate() {
            let hop = path.get(l).copied().unwrap_or(idle);
            let cond = tape.gather_rows(rel_table, &vec![hop; n])?;
            h = tape.add(h, cond)?;

            let g1 = tape.param(store, block.ln1_gain);
            let s1 = tape.param(store, block.ln1_shift);
            let a_in = tape.layer_norm(h, g1, s1, LN_EPS)?;
            let w = block.attn.bind(tape, store);
            let (a_out, mut trace) = match cfg.variant {
                Variant::Dense => standard_attention(tape, a_in, &w, &self.attn)?,
                Variant::Rasa => {
                    let table_id = match cfg.bias_mode {
                        BiasMode::Shared => p.bias_tables[0],
                        BiasMode::PerQuery => p.bias_tables[hop],
                    };
                    let bias_table = tape.param(store, table_id);
                    let ctx = GraphContext {
                        mask: &inputs.mask,
                        etypes: &inputs.etypes,
                        bias_table,
                    };
                    rasa_attention(tape, a_in, &w, &self.attn, &ctx)?
                }
            };
            trace.layer_index = l;
            traces.push(trace);
            let a_out = self.dropout(tape, a_out, dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
            h = tape.add(h, a_out)?;

            let g2 = tape.param(store, block.ln2_gain);
            let s2 = tape.param(store, block.ln2_shift);
            let f_in = tape.layer_norm(h, g2, s2, LN_EPS)?;
            let w1 = tape.param(store, block.ff_w1);
            let b1 = tape.param(store, block.ff_b1);
            let w2 = tape.param(store, block.ff_w2);
            let b2 = tape.param(store, block.ff_b2);
            let hidden = tape.matmul(f_in, w1)?;
            let hidden = tape.add_broadcast(hidden, b1)?;
            let hidden = tape.relu(hidden);
            let f_out = tape.matmul(hidden, w2)?;
            let f_out = tape.add_broadcast(f_out, b2)?;
            let f_out = self.dropout(tape, f_out, dropout_rng.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
            h = tape.add(h, f_out)?;
        }

        let gf = tape.param(store, p.final_gain);
        let sf = tape.param(store, p.final_shift);
        let out = tape.layer_norm(h, gf, sf, LN_EPS)?;
        let rw = tape.param(store, p.readout_w);
        let rb = tape.param(store, p.readout_b);
        let logits = tape.matmul(out, rw)?;
        let logits = tape.add_broadcast(logits, rb)?;
        let logits = tape.reshape(logits, vec![n])?;
        Ok((logits, traces))
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rng: Option<&mut dyn RngCore>) -> Result<Var, ModelError> {
        let p = self.config.dropout;
        let Some(rng) = rng else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mut mask = tape.value(x).clone();
        for v in mask.data_mut() {
            *v = if rng.gen::<f64>() < p { 0.0 } else { keep };
        }
        let mask = tape.constant(mask);
        Ok(tape.mul(x, mask)?)
    }

    /// Logits as plain values, without keeping the tape.
    pub fn logits(&self, inputs: &GraphInputs, source: usize, path: &[usize]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let (logits, _) = self.forward(&mut tape, inputs, source, path, None)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// Writes `model.ckpt` and the `model.json` config sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        write_checkpoint(&self.store, BufWriter::new(File::create(dir.join(CHECKPOINT_FILE))?))?;
        let sidecar = Sidecar {
            config: self.config.clone(),
            seed: self.seed,
            parameter_count: self.store.num_scalars(),
        };
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        std::fs::write(dir.join(CONFIG_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(dir.join(CONFIG_FILE))?))?;
        let mut model = Self::new(sidecar.config, sidecar.seed)?;
        let records = read_checkpoint(BufReader::new(File::open(dir.join(CHECKPOINT_FILE))?))?;
        model.store.load_values(records)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictMode {
    /// Single highest logit; lowest index on ties.
    Top1,
    /// Every node with `sigmoid(logit) > tau`.
    Threshold(f64),
}

pub fn predict_answers(logits: &[f64], mode: PredictMode) -> BTreeSet<usize> {
    match mode {
        PredictMode::Top1 => {
            let mut best: Option<(usize, f64)> = None;
            for (i, &z) in logits.iter().enumerate() {
                if best.map_or(true, |(_, b)| z > b) {
                    best = Some((i, z));
                }
            }
            best.map(|(i, _)| i).into_iter().collect()
        }
        PredictMode::Threshold(tau) => logits
            .iter()
            .enumerate()
            .filter(|(_, &z)| crate::numerics::sigmoid(z) > tau)
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Mean binary cross-entropy over all nodes against the multi-hot gold vector.
pub fn loss(tape: &mut Tape, logits: Var, gold: &BTreeSet<usize>) -> Result<Var, ModelError> {
    if gold.is_empty() {
        return Err(ModelError::EmptyGoldSet);
    }
    let n = tape.value(logits).len();
    if let Some(&g) = gold.iter().find(|&&g| g >= n) {
        return Err(ModelError::IndexOutOfRange { what: "answer", index: g, bound: n });
    }
    let targets: Vec<f64> = (0..n).map(|i| if gold.contains(&i) { 1.0 } else { 0.0 }).collect();
    Ok(tape.bce_with_logits(logits, &targets)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::numerics::finite_diff_check;

    pub(crate) fn small_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            layer_count: 2,
            model_dim: 8,
            head_count: 2,
            relation_count: 3,
            max_entities: 8,
            ffn_dim: 8,
            dropout: 0.0,
            variant,
            direction: DirectionPolicy::Incoming,
            bias_mode: BiasMode::PerQuery,
        }
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ModelConfig {
            layer_count: 3,
            model_dim: 16,
            head_count: 4,
            relation_count: 3,
            ..small_config(Variant::Rasa)
        };
        let a = RasaModel::new(cfg.clone(), 7).unwrap();
        let b = RasaModel::new(cfg, 7).unwrap();
        assert_eq!(a.store, b.store);
        for &t in a.bias_tables() {
            assert!(a.store.value(t).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = ModelConfig {
            model_dim: 15,
            head_count: 4,
            ..small_config(Variant::Rasa)
        };
        assert!(matches!(RasaModel::new(cfg, 0), Err(ModelError::InvalidConfig(_))));
        let cfg = ModelConfig { layer_count: 0, ..small_config(Variant::Rasa) };
        assert!(matches!(RasaModel::new(cfg, 0), Err(ModelError::InvalidConfig(_))));
        let cfg = ModelConfig { dropout: 1.0, ..small_config(Variant::Rasa) };
        assert!(matches!(RasaModel::new(cfg, 0), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn parameter_count_matches_enumeration() {
        for mode in [BiasMode::Shared, BiasMode::PerQuery] {
            for layers in 1..4 {
                let cfg = ModelConfig {
                    layer_count: layers,
                    bias_mode: mode,
                    ..small_config(Variant::Rasa)
                };
                let m = RasaModel::new(cfg.clone(), 1).unwrap();
                let enumerated: usize = m.store.iter().map(|p| p.value.shape().iter().product::<usize>()).sum();
                assert_eq!(enumerated, cfg.parameter_count());
            }
        }
    }

    #[test]
    fn predict_modes() {
        assert_eq!(predict_answers(&[0.1, 2.0, -1.0], PredictMode::Top1), BTreeSet::from([1]));
        assert_eq!(predict_answers(&[0.5, 0.5, 0.5], PredictMode::Top1), BTreeSet::from([0]));
        assert_eq!(
            predict_answers(&[3.0, -3.0, 0.0001], PredictMode::Threshold(0.5)),
            BTreeSet::from([0, 2])
        );
    }

    #[test]
    fn loss_values_and_errors() {
        let mut tape = Tape::new();
        let perfect = tape.constant(Tensor::vector(vec![20.0, -20.0, 20.0]));
        let l = loss(&mut tape, perfect, &BTreeSet::from([0, 2])).unwrap();
        assert!(tape.value(l).item().unwrap() < 1e-6);
        let zeros = tape.constant(Tensor::zeros(&[5]));
        let l = loss(&mut tape, zeros, &BTreeSet::from([1])).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(loss(&mut tape, zeros, &BTreeSet::new()), Err(ModelError::EmptyGoldSet)));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let z = store.add("z", Tensor::vector(vec![0.3, -1.1, 2.0, 0.7])).unwrap();
        let gold = BTreeSet::from([1, 2]);
        let err = finite_diff_check(&mut store, z, 1e-5, |s, t| {
            let v = t.param(s, z);
            Ok(loss(t, v, &gold).unwrap())
        })
        .unwrap();
        assert!(err <= 1e-4);
    }

    #[test]
    fn forward_validates_inputs() {
        let m = RasaModel::new(small_config(Variant::Rasa), 0).unwrap();
        let g = build_graph(&[(0, 0, 1)], 3, 3).unwrap();
        let inputs = m.graph_inputs(&g);
        assert!(matches!(m.logits(&inputs, 3, &[0]), Err(ModelError::IndexOutOfRange { what: "source", .. })));
        assert!(matches!(m.logits(&inputs, 0, &[3]), Err(ModelError::IndexOutOfRange { what: "relation", .. })));
        assert!(matches!(m.logits(&inputs, 0, &[]), Err(ModelError::EmptyPath)));
        let big = build_graph(&[], 9, 3).unwrap();
        assert!(m.logits(&m.graph_inputs(&big), 0, &[0]).is_err());
        let wrong_r = build_graph(&[], 3, 2).unwrap();
        assert!(matches!(m.logits(&m.graph_inputs(&wrong_r), 0, &[0]), Err(ModelError::Mismatch(_))));
    }

    #[test]
    fn dense_equals_rasa_on_complete_graph_with_zero_bias() {
        let mut triples = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    triples.push((i, (i * 5 + j) % 3, j));
                }
            }
        }
        let g = build_graph(&triples, 5, 3).unwrap();
        let rasa = RasaModel::new(small_config(Variant::Rasa), 3).unwrap();
        let dense = RasaModel::new(small_config(Variant::Dense), 3).unwrap();
        let a = rasa.logits(&rasa.graph_inputs(&g), 1, &[0, 2]).unwrap();
        let b = dense.logits(&dense.graph_inputs(&g), 1, &[0, 2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn self_only_graph_isolates_nodes() {
        let cfg = ModelConfig { layer_count: 1, ..small_config(Variant::Rasa) };
        let m = RasaModel::new(cfg, 5).unwrap();
        let g = build_graph(&[], 6, 3).unwrap();
        let inputs = m.graph_inputs(&g);
        let base = m.logits(&inputs, 2, &[1]).unwrap();
        let mut perturbed = m.clone();
        let e = perturbed.entity_embeddings();
        for v in &mut perturbed.store.value_mut(e).data_mut()[4 * 8..5 * 8] {
            *v += 1.0;
        }
        let after = perturbed.logits(&inputs, 2, &[1]).unwrap();
        for i in 0..6 {
            if i == 4 {
                assert_ne!(base[i], after[i]);
            } else {
                assert_eq!(base[i].to_bits(), after[i].to_bits());
            }
        }
    }

    #[test]
    fn untrained_gradients_reach_every_used_parameter() {
        let m0 = RasaModel::new(small_config(Variant::Rasa), 11).unwrap();
        let mut m = m0.clone();
        let g = build_graph(&[(0, 0, 1), (1, 1, 2), (2, 2, 3), (3, 0, 4)], 5, 3).unwrap();
        let inputs = m.graph_inputs(&g);
        m.store.zero_grads();
        // Paths covering every relation; with two layers the idle table is hit by the 1-hop query.
        for (source, path) in [(0, vec![0, 1]), (1, vec![1, 2]), (2, vec![2]), (3, vec![0, 0])] {
            let mut tape = Tape::new();
            let (logits, _) = m.forward(&mut tape, &inputs, source, &path, None).unwrap();
            let gold = BTreeSet::from([(source + path.len()) % 5]);
            let l = loss(&mut tape, logits, &gold).unwrap();
            tape.backward(l, &mut m.store).unwrap();
        }
        for p in m.store.iter() {
            assert!(p.grad.data().iter().any(|&g| g != 0.0), "{} received no gradient", p.name);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = RasaModel::new(small_config(Variant::Rasa), 9).unwrap();
        m.save(dir.path()).unwrap();
        let back = RasaModel::load(dir.path()).unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(back.config(), m.config());
    }

    fn random_graph(seed: u64, n: usize, m: usize, r: usize) -> KnowledgeGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut triples = std::collections::BTreeSet::new();
        while triples.len() < m {
            let (h, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if h != t {
                triples.insert((h, rng.gen_range(0..r), t));
            }
        }
        build_graph(&triples.into_iter().collect::<Vec<_>>(), n, r).unwrap()
    }

    #[test]
    fn logits_ignore_nodes_beyond_layer_count() {
        for layers in 1..=3 {
            for seed in 0..6 {
                let cfg = ModelConfig { layer_count: layers, max_entities: 12, ..small_config(Variant::Rasa) };
                let m = RasaModel::new(cfg, seed).unwrap();
                let g = random_graph(seed + 100, 12, 10, 3);
                let inputs = m.graph_inputs(&g);
                let target = (seed as usize) % 12;
                let dist = g.undirected_distances(target);
                let base = m.logits(&inputs, target, &[0, 1]).unwrap();
                let mut perturbed = m.clone();
                let e = perturbed.entity_embeddings();
                let mut touched = false;
                for (v, d) in dist.iter().enumerate() {
                    if d.map_or(true, |d| d > layers) {
                        touched = true;
                        for x in &mut perturbed.store.value_mut(e).data_mut()[v * 8..(v + 1) * 8] {
                            *x = *x * -3.0 + 0.5;
                        }
                    }
                }
                let after = perturbed.logits(&inputs, target, &[0, 1]).unwrap();
                assert_eq!(base[target].to_bits(), after[target].to_bits());
                if touched {
                    assert_ne!(base, after);
                }
            }
        }
    }

    #[test]
    fn relabelling_permutes_logits() {
        for variant in [Variant::Rasa, Variant::Dense] {
            let cfg = ModelConfig { max_entities: 10, ..small_config(variant) };
            let m = RasaModel::new(cfg, 21).unwrap();
            let g = random_graph(5, 10, 14, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut perm: Vec<usize> = (0..10).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let g2 = g.relabeled(&perm).unwrap();
            let mut m2 = m.clone();
            let e = m2.entity_embeddings();
            let orig = m.store.value(e).clone();
            for (i, &pi) in perm.iter().enumerate() {
                m2.store.value_mut(e).data_mut()[pi * 8..(pi + 1) * 8].copy_from_slice(&orig.data()[i * 8..(i + 1) * 8]);
            }
            let a = m.logits(&m.graph_inputs(&g), 3, &[2, 0]).unwrap();
            let b = m2.logits(&m2.graph_inputs(&g2), perm[3], &[2, 0]).unwrap();
            for i in 0..10 {
                assert!((a[i] - b[perm[i]]).abs() < 1e-10, "{variant}: node {i}");
            }
        }
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let g = random_graph(8, 6, 9, 3);
        for variant in [Variant::Rasa, Variant::Dense] {
            let mut m = RasaModel::new(ModelConfig { max_entities: 6, ..small_config(variant) }, 4).unwrap();
            // Nonzero biases so the bias path is exercised away from its initial point.
            for &t in m.bias_tables().to_vec().iter() {
                for (k, v) in m.store.value_mut(t).data_mut().iter_mut().enumerate() {
                    *v = 0.1 * k as f64 - 0.15;
                }
            }
            let inputs = m.graph_inputs(&g);
            let gold = BTreeSet::from([1, 4]);
            let model = m.clone();
            for id in m.store.ids().collect::<Vec<_>>() {
                let err = finite_diff_check(&mut m.store, id, 1e-5, |s, t| {
                    let mut local = model.clone();
                    local.store = s.clone();
                    let (logits, _) = local.forward(t, &inputs, 2, &[1, 0], None).unwrap();
                    Ok(loss(t, logits, &gold).unwrap())
                })
                .unwrap();
                assert!(err <= 1e-4, "{variant} {}: {err}", m.store.get(id).name);
            }
        }
    }
}
