//! Breadth-first subgraph extraction.

use super::DataError;
use crate::graph::{KnowledgeGraph, Triple};

/// Ball of undirected radius `radius` around `center`, capped at `max_nodes`.
///
/// Nodes are taken level by level, lowest original index first within a level.
/// The returned map sends new ids to original ids; the center becomes 0.
pub fn sample_subgraph(
    g: &KnowledgeGraph,
    center: usize,
    radius: usize,
    max_nodes: usize,
) -> Result<(KnowledgeGraph, Vec<usize>), DataError> {
    let n = g.num_entities();
    if center >= n {
        return Err(crate::graph::GraphError::IndexOutOfRange { what: "center", index: center, bound: n }.into());
    }
    if radius == 0 || max_nodes == 0 {
        return Err(DataError::InvalidArgument("radius and max_nodes must be at least 1".into()));
    }
    let nbrs = g.undirected_neighbors();
    let mut new_id = vec![usize::MAX; n];
    let mut kept = vec![center];
    new_id[center] = 0;
    let mut level = vec![center];
    'outer: for _ in 0..radius {
        let mut next: Vec<usize> = level.iter().flat_map(|&u| nbrs[u].iter().copied()).filter(|&v| new_id[v] == usize::MAX).collect();
        next.sort_unstable();
        next.dedup();
        for &v in &next {
            if kept.len() == max_nodes {
                break 'outer;
            }
            new_id[v] = kept.len();
            kept.push(v);
        }
        if next.is_empty() {
            break;
        }
        level = next;
    }
    let edges = g
        .edges()
        .iter()
        .filter(|t| new_id[t.head] != usize::MAX && new_id[t.tail] != usize::MAX)
        .map(|t| Triple::new(new_id[t.head], t.relation, new_id[t.tail]));
    let sub = KnowledgeGraph::new(edges, kept.len(), g.num_relations())?;
    Ok((sub, kept))
}
