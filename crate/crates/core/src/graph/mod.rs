//! Typed knowledge graphs and the structures derived from them.

mod io;
mod mask;
mod oracle;
mod search_space;

pub use io::{load_triples, parse_triples, write_id_map, LoadedGraph, Vocab};
pub use mask::{derive_mask, AttentionMask, DirectionPolicy, EdgeKind, EdgeTypeMap};
pub use oracle::{exact_k_reachable, khop_answers, layered_connectivity, layered_graph};
pub use search_space::{search_space, SearchSpaceReport};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("duplicate edge ({head}, {relation}, {tail})")]
    DuplicateEdge {
        head: usize,
        relation: usize,
        tail: usize,
    },
    #[error("hop path must contain at least one relation")]
    EmptyPath,
    #[error("parse error at line {line}: {reason}: {content:?}")]
    Parse {
        line: usize,
        content: String,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A directed edge `head --relation--> tail`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

impl From<(usize, usize, usize)> for Triple {
    fn from((head, relation, tail): (usize, usize, usize)) -> Self {
        Self::new(head, relation, tail)
    }
}

/// Entities `0..num_entities`, relations `0..num_relations` and a set of
/// typed directed edges between them. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_relations: usize,
    edges: Vec<Triple>,
    /// Outgoing `(relation, tail)` pairs per head, sorted.
    out: Vec<Vec<(usize, usize)>>,
}

impl KnowledgeGraph {
    /// Validates and builds a graph. Rejects out-of-range indices and exact
    /// duplicate triples; edge order is preserved.
    pub fn new<I, T>(triples: I, num_entities: usize, num_relations: usize) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = T>,
        T: Into<Triple>,
    {
        let mut seen = HashSet::new();
        let mut edges = Vec::new();
        let mut out = vec![Vec::new(); num_entities];
        for t in triples {
            let t: Triple = t.into();
            check_index("head", t.head, num_entities)?;
            check_index("tail", t.tail, num_entities)?;
            check_index("relation", t.relation, num_relations)?;
            if !seen.insert(t) {
                return Err(GraphError::DuplicateEdge {
                    head: t.head,
                    relation: t.relation,
                    tail: t.tail,
                });
            }
            out[t.head].push((t.relation, t.tail));
            edges.push(t);
        }
        for list in &mut out {
            list.sort_unstable();
        }
        Ok(Self {
            num_entities,
            num_relations,
            edges,
            out,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Number of typed edges, `m`.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    /// Outgoing `(relation, tail)` pairs of `head`, sorted.
    pub fn outgoing(&self, head: usize) -> &[(usize, usize)] {
        &self.out[head]
    }

    pub fn contains(&self, t: Triple) -> bool {
        t.head < self.num_entities && self.out[t.head].binary_search(&(t.relation, t.tail)).is_ok()
    }

    /// Relation-agnostic successor sets, deduplicated.
    pub fn untyped_successors(&self) -> Vec<Vec<usize>> {
        self.out
            .iter()
            .map(|list| {
                let mut tails: Vec<usize> = list.iter().map(|&(_, t)| t).collect();
                tails.sort_unstable();
                tails.dedup();
                tails
            })
            .collect()
    }

    /// Undirected neighbour lists (both edge directions, no self entries), sorted.
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.num_entities];
        for e in &self.edges {
            if e.head != e.tail {
                nb[e.head].push(e.tail);
                nb[e.tail].push(e.head);
            }
        }
        for list in &mut nb {
            list.sort_unstable();
            list.dedup();
        }
        nb
    }

    /// Undirected hop distance from `source` to every node; `None` when unreachable.
    pub fn undirected_distances(&self, source: usize) -> Vec<Option<usize>> {
        let nb = self.undirected_neighbors();
        let mut dist = vec![None; self.num_entities];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &nb[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// The same graph with entity `i` renamed to `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let edges = self
            .edges
            .iter()
            .map(|e| Triple::new(perm[e.head], e.relation, perm[e.tail]));
        Self::new(edges, self.num_entities, self.num_relations)
    }
}

/// Builds and validates a graph from raw triples.
pub fn build_graph(
    triples: &[(usize, usize, usize)],
    num_entities: usize,
    num_relations: usize,
) -> Result<KnowledgeGraph, GraphError> {
    KnowledgeGraph::new(triples.iter().copied(), num_entities, num_relations)
}

pub(crate) fn check_index(what: &'static str, index: usize, bound: usize) -> Result<(), GraphError> {
    if index < bound {
        Ok(())
    } else {
        Err(GraphError::IndexOutOfRange { what, index, bound })
    }
}
