//! Name-based triple files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{GraphError, KnowledgeGraph, Triple};

/// Dense id assignment for names, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A graph loaded from a name-based file, with its id maps.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: KnowledgeGraph,
    pub entities: Vocab,
    pub relations: Vocab,
    /// Exact duplicate lines dropped when loading with `dedupe`.
    pub duplicates_skipped: usize,
}

/// Splits `head<d>relation<d>tail` lines. Blank lines are skipped; line numbers are 1-based.
pub fn parse_triples<R: BufRead>(
    reader: R,
    delimiter: char,
) -> Result<Vec<(usize, [String; 3])>, GraphError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(GraphError::Parse {
                line: idx + 1,
                content: line.to_owned(),
                reason: format!("expected 3 non-empty fields separated by {delimiter:?}"),
            });
        }
        out.push((idx + 1, [fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()]));
    }
    Ok(out)
}

/// Loads a triple file, assigning entity and relation ids in first-appearance order.
///
/// Without `dedupe`, a repeated triple is an error.
pub fn load_triples(path: &Path, delimiter: char, dedupe: bool) -> Result<LoadedGraph, GraphError> {
    let rows = parse_triples(BufReader::new(File::open(path)?), delimiter)?;
    let mut entities = Vocab::default();
    let mut relations = Vocab::default();
    let mut seen = std::collections::HashSet::new();
    let mut triples = Vec::with_capacity(rows.len());
    let mut duplicates_skipped = 0;
    for (line, [h, r, t]) in rows {
        let triple = Triple::new(entities.intern(&h), relations.intern(&r), entities.intern(&t));
        if !seen.insert(triple) {
            if dedupe {
                duplicates_skipped += 1;
                continue;
            }
            return Err(GraphError::Parse {
                line,
                content: format!("{h}{delimiter}{r}{delimiter}{t}"),
                reason: "duplicate triple".into(),
            });
        }
        triples.push(triple);
    }
    let graph = KnowledgeGraph::new(triples, entities.len(), relations.len())?;
    Ok(LoadedGraph {
        graph,
        entities,
        relations,
        duplicates_skipped,
    })
}

/// Writes `name<TAB>id` lines.
pub fn write_id_map(vocab: &Vocab, path: &Path) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (id, name) in vocab.names().iter().enumerate() {
        writeln!(w, "{name}\t{id}")?;
    }
    w.flush()
}
