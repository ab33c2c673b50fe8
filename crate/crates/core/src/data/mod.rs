//! Synthetic k-hop tasks, MetaQA-format ingestion and subgraph sampling.

mod metaqa;
mod subgraph;

pub use metaqa::{load_metaqa_kb, load_metaqa_questions, MetaqaKb, MetaqaQuestion, QuestionSet, ResolvedQuestion};
pub use subgraph::sample_subgraph;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{khop_answers, GraphError, KnowledgeGraph, Triple};
use crate::model::KHopExample;
use crate::rng::{derive_seed, stream};

/// Sampling attempts allowed per example before giving up.
pub const RETRY_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{requested} edges requested but only {capacity} distinct typed edges exist")]
    DegreeInfeasible { requested: usize, capacity: usize },
    #[error("generation stalled: example {example} found no non-empty, unused query in {attempts} attempts")]
    GenerationStalled { example: usize, attempts: usize },
    #[error("example {index} failed oracle verification")]
    OracleMismatch { index: usize },
    #[error("parse error at line {line}: {reason}: {content:?}")]
    Parse { line: usize, content: String, reason: String },
    #[error("unknown entity {name:?} at line {line}")]
    UnknownEntity { line: usize, name: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn default_examples_per_graph() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_entities: usize,
    pub avg_out_degree: f64,
    pub num_relations: usize,
    pub hop_count: usize,
    pub num_examples: usize,
    pub seed: u64,
    /// Queries drawn from each random graph before a fresh graph is generated.
    #[serde(default = "default_examples_per_graph")]
    pub examples_per_graph: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_owned()));
        if self.num_entities == 0 {
            return bad("num_entities must be positive");
        }
        // Sparse degrees below 1 are accepted so that infeasible tasks surface as stalls.
        if !(self.avg_out_degree.is_finite() && self.avg_out_degree > 0.0) {
            return bad("avg_out_degree must be positive");
        }
        if self.num_relations == 0 {
            return bad("num_relations must be at least 1");
        }
        if self.hop_count == 0 {
            return bad("hop_count must be at least 1");
        }
        if self.num_examples == 0 || self.examples_per_graph == 0 {
            return bad("num_examples and examples_per_graph must be positive");
        }
        Ok(())
    }

    pub fn edge_count(&self) -> usize {
        (self.num_entities as f64 * self.avg_out_degree).round() as usize
    }

    pub fn graph_count(&self) -> usize {
        self.num_examples.div_ceil(self.examples_per_graph)
    }
}

/// Uniform typed digraph without self-loops; duplicate draws are redrawn.
pub fn gen_random_graph(spec: &SyntheticSpec, graph_seed: u64) -> Result<KnowledgeGraph, DataError> {
    spec.validate()?;
    let (n, r) = (spec.num_entities, spec.num_relations);
    let m = spec.edge_count();
    let capacity = n * n.saturating_sub(1) * r;
    if m > capacity {
        return Err(DataError::DegreeInfeasible { requested: m, capacity });
    }
    let mut rng = stream(graph_seed, &[]);
    let mut seen = HashSet::with_capacity(m);
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let head = rng.gen_range(0..n);
        let relation = rng.gen_range(0..r);
        let mut tail = rng.gen_range(0..n - 1);
        if tail >= head {
            tail += 1;
        }
        let t = Triple::new(head, relation, tail);
        if seen.insert(t) {
            edges.push(t);
        }
    }
    Ok(KnowledgeGraph::new(edges, n, r)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.json", self.as_str())
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One split: its examples and the graphs they refer to, keyed by graph id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub graphs: BTreeMap<usize, KnowledgeGraph>,
    pub examples: Vec<KHopExample>,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    id: usize,
    num_entities: usize,
    num_relations: usize,
    triples: Vec<[usize; 3]>,
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    split: Split,
    graphs: Vec<GraphDoc>,
    examples: Vec<KHopExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn graph(&self, id: usize) -> Result<&KnowledgeGraph, DataError> {
        self.graphs
            .get(&id)
            .ok_or_else(|| DataError::Inconsistent(format!("{} split has no graph {id}", self.split)))
    }

    /// Relation count shared by every graph (`None` when there are none or they disagree).
    pub fn num_relations(&self) -> Option<usize> {
        let mut it = self.graphs.values().map(KnowledgeGraph::num_relations);
        let first = it.next()?;
        it.all(|r| r == first).then_some(first)
    }

    pub fn max_entities(&self) -> usize {
        self.graphs.values().map(KnowledgeGraph::num_entities).max().unwrap_or(0)
    }

    /// Re-derives every answer set with the oracle and demands exact equality.
    pub fn verify(&self) -> Result<(), DataError> {
        for (index, ex) in self.examples.iter().enumerate() {
            let g = self.graph(ex.graph_id)?;
            if khop_answers(g, ex.source, &ex.path)? != ex.answers {
                return Err(DataError::OracleMismatch { index });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, DataError> {
        let doc = DatasetDoc {
            split: self.split,
            graphs: self
                .graphs
                .iter()
                .map(|(&id, g)| GraphDoc {
                    id,
                    num_entities: g.num_entities(),
                    num_relations: g.num_relations(),
                    triples: g.edges().iter().map(|t| [t.head, t.relation, t.tail]).collect(),
                })
                .collect(),
            examples: self.examples.clone(),
        };
        let mut s = serde_json::to_string(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let doc: DatasetDoc = serde_json::from_str(text)?;
        let mut graphs = BTreeMap::new();
        for gd in doc.graphs {
            let g = KnowledgeGraph::new(
                gd.triples.iter().map(|&[h, r, t]| Triple::new(h, r, t)),
                gd.num_entities,
                gd.num_relations,
            )?;
            if graphs.insert(gd.id, g).is_some() {
                return Err(DataError::Inconsistent(format!("graph id {} repeated", gd.id)));
            }
        }
        Ok(Self {
            split: doc.split,
            graphs,
            examples: doc.examples,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_json()?.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// Train, dev and test splits of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

impl DatasetSplits {
    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Dataset> {
        [&self.train, &self.dev, &self.test].into_iter()
    }

    pub fn num_relations(&self) -> Option<usize> {
        let r = self.train.num_relations()?;
        self.iter().all(|d| d.graphs.is_empty() || d.num_relations() == Some(r)).then_some(r)
    }

    pub fn max_entities(&self) -> usize {
        self.iter().map(Dataset::max_entities).max().unwrap_or(0)
    }

    /// Writes `train.json`, `dev.json` and `test.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir)?;
        for d in self.iter() {
            d.write(&dir.join(d.split.file_name()))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, DataError> {
        let load = |split: Split| -> Result<Dataset, DataError> {
            let d = Dataset::read(&dir.join(split.file_name()))?;
            if d.split != split {
                return Err(DataError::Inconsistent(format!("{} holds the {} split", split.file_name(), d.split)));
            }
            Ok(d)
        };
        Ok(Self {
            train: load(Split::Train)?,
            dev: load(Split::Dev)?,
            test: load(Split::Test)?,
        })
    }
}

/// Split sizes for `n` examples: `floor(0.7 n)`, `floor(0.15 n)`, remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 70 / 100;
    let dev = n * 15 / 100;
    (train, dev, n - train - dev)
}

/// Generates a k-hop task as a pure function of `spec`.
///
/// Example `e` is drawn on graph `e / examples_per_graph` from its own RNG stream.
/// Queries with empty answers or already used `(graph, source, path)` are redrawn.
pub fn gen_khop_dataset(spec: &SyntheticSpec) -> Result<DatasetSplits, DataError> {
    spec.validate()?;
    let graphs = (0..spec.graph_count())
        .map(|gi| gen_random_graph(spec, derive_seed(spec.seed, &[1, gi as u64])))
        .collect::<Result<Vec<_>, _>>()?;

    let mut used = HashSet::new();
    let mut examples = Vec::with_capacity(spec.num_examples);
    for e in 0..spec.num_examples {
        let graph_id = e / spec.examples_per_graph;
        let g = &graphs[graph_id];
        let mut rng = stream(spec.seed, &[2, e as u64]);
        let mut found = None;
        for _ in 0..RETRY_CAP {
            let source = rng.gen_range(0..spec.num_entities);
            let path: Vec<usize> = (0..spec.hop_count).map(|_| rng.gen_range(0..spec.num_relations)).collect();
            if used.contains(&(graph_id, source, path.clone())) {
                continue;
            }
            let answers = khop_answers(g, source, &path)?;
            if !answers.is_empty() {
                used.insert((graph_id, source, path.clone()));
                found = Some(KHopExample { graph_id, source, path, answers });
                break;
            }
        }
        examples.push(found.ok_or(DataError::GenerationStalled { example: e, attempts: RETRY_CAP })?);
    }

    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut stream(spec.seed, &[3]));
    let (n_train, n_dev, _) = split_sizes(examples.len());
    let make = |split: Split, idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        let exs: Vec<KHopExample> = idx.iter().map(|&i| examples[i].clone()).collect();
        let graphs_used = exs.iter().map(|ex| (ex.graph_id, graphs[ex.graph_id].clone())).collect();
        Dataset { split, graphs: graphs_used, examples: exs }
    };
    let splits = DatasetSplits {
        train: make(Split::Train, &order[..n_train]),
        dev: make(Split::Dev, &order[n_train..n_train + n_dev]),
        test: make(Split::Test, &order[n_train + n_dev..]),
    };
    for d in splits.iter() {
        d.verify()?;
    }
    Ok(splits)
}
