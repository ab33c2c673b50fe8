//! MetaQA-layout knowledge base and question files.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::DataError;
use crate::graph::{load_triples, GraphError, KnowledgeGraph, Triple, Vocab};

#[derive(Debug, Clone)]
pub struct MetaqaKb {
    pub graph: KnowledgeGraph,
    pub entities: Vocab,
    pub relations: Vocab,
    /// Repeated `subject|relation|object` lines, counted once.
    pub duplicates_skipped: usize,
    /// Number of relations before reverse augmentation.
    pub base_relations: usize,
}

/// Loads `subject<d>relation<d>object` lines with ids in first-appearance order.
///
/// With `add_reverse`, each relation `r` gains an inverse `r_reverse` whose
/// ids follow the original relations.
pub fn load_metaqa_kb(path: &Path, delimiter: char, add_reverse: bool) -> Result<MetaqaKb, DataError> {
    let loaded = load_triples(path, delimiter, true).map_err(|e| match e {
        GraphError::Parse { line, content, reason } => DataError::Parse { line, content, reason },
        other => DataError::Graph(other),
    })?;
    let base_relations = loaded.relations.len();
    let mut relations = loaded.relations;
    let mut graph = loaded.graph;
    if add_reverse {
        let names: Vec<String> = relations.names().to_vec();
        for name in &names {
            relations.intern(&format!("{name}_reverse"));
        }
        let mut edges: Vec<Triple> = graph.edges().to_vec();
        let mut seen: std::collections::HashSet<Triple> = edges.iter().copied().collect();
        for t in graph.edges() {
            let rev = Triple::new(t.tail, t.relation + base_relations, t.head);
            if seen.insert(rev) {
                edges.push(rev);
            }
        }
        graph = KnowledgeGraph::new(edges, graph.num_entities(), relations.len())?;
    }
    Ok(MetaqaKb {
        graph,
        entities: loaded.entities,
        relations,
        duplicates_skipped: loaded.duplicates_skipped,
        base_relations,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaqaQuestion {
    pub line: usize,
    pub text: String,
    pub head: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedQuestion {
    pub head: usize,
    pub answers: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct QuestionSet {
    pub hop: usize,
    pub questions: Vec<MetaqaQuestion>,
}

impl QuestionSet {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// `(line, name)` of every head or answer entity missing from `kb`.
    pub fn unknown_entities(&self, kb: &MetaqaKb) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for q in &self.questions {
            for name in std::iter::once(&q.head).chain(&q.answers) {
                if kb.entities.id(name).is_none() {
                    out.push((q.line, name.clone()));
                }
            }
        }
        out
    }

    /// Maps names to KB ids; the first unknown name is an error.
    pub fn resolve(&self, kb: &MetaqaKb) -> Result<Vec<ResolvedQuestion>, DataError> {
        let id = |line: usize, name: &str| {
            kb.entities.id(name).ok_or_else(|| DataError::UnknownEntity { line, name: name.to_owned() })
        };
        self.questions
            .iter()
            .map(|q| {
                Ok(ResolvedQuestion {
                    head: id(q.line, &q.head)?,
                    answers: q.answers.iter().map(|a| id(q.line, a)).collect::<Result<_, _>>()?,
                })
            })
            .collect()
    }
}

fn parse_question(line_no: usize, line: &str) -> Result<MetaqaQuestion, DataError> {
    let err = |reason: &str| DataError::Parse {
        line: line_no,
        content: line.to_owned(),
        reason: reason.to_owned(),
    };
    let (text, answers) = line.split_once('\t').ok_or_else(|| err("missing tab before answers"))?;
    let open = text.find('[').ok_or_else(|| err("no bracketed head entity"))?;
    let close = text[open..].find(']').map(|c| open + c).ok_or_else(|| err("unclosed bracket"))?;
    let head = text[open + 1..close].trim();
    if head.is_empty() {
        return Err(err("empty head entity"));
    }
    let answers: Vec<String> = answers.split('|').map(str::trim).filter(|a| !a.is_empty()).map(String::from).collect();
    if answers.is_empty() {
        return Err(err("no answers"));
    }
    Ok(MetaqaQuestion {
        line: line_no,
        text: text.to_owned(),
        head: head.to_owned(),
        answers,
    })
}

/// Reads `question with [head]<TAB>ans1|ans2|...` lines.
pub fn load_metaqa_questions(path: &Path, hop: usize) -> Result<QuestionSet, DataError> {
    if !(1..=3).contains(&hop) {
        return Err(DataError::InvalidArgument(format!("hop must be 1, 2 or 3, got {hop}")));
    }
    let mut questions = Vec::new();
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        questions.push(parse_question(idx + 1, line)?);
    }
    Ok(QuestionSet { hop, questions })
}
