//! Brute-force reasoning oracles.

use std::collections::{BTreeSet, VecDeque};

use super::{check_index, GraphError, KnowledgeGraph, Triple};

/// Entities reached from `source` by following `path` relation by relation.
///
/// Frontier expansion: `F0 = {source}`, `Ft = {v : (u, r_t, v) in E, u in F(t-1)}`.
/// Returns `Fk`, which may be empty.
pub fn khop_answers(
    g: &KnowledgeGraph,
    source: usize,
    path: &[usize],
) -> Result<BTreeSet<usize>, GraphError> {
    check_index("source", source, g.num_entities())?;
    if path.is_empty() {
        return Err(GraphError::EmptyPath);
    }
    for &r in path {
        check_index("relation", r, g.num_relations())?;
    }
    let mut frontier = BTreeSet::from([source]);
    for &r in path {
        let mut next = BTreeSet::new();
        for &u in &frontier {
            let out = g.outgoing(u);
            // `out` is sorted by (relation, tail).
            let start = out.partition_point(|&(rel, _)| rel < r);
            next.extend(out[start..].iter().take_while(|&&(rel, _)| rel == r).map(|&(_, t)| t));
        }
        if next.is_empty() {
            return Ok(next);
        }
        frontier = next;
    }
    Ok(frontier)
}

/// Whether a relation-agnostic walk of exactly `k` edges leads from `s` to `t`.
/// Vertices may repeat.
pub fn exact_k_reachable(g: &KnowledgeGraph, s: usize, t: usize, k: usize) -> Result<bool, GraphError> {
    check_index("source", s, g.num_entities())?;
    check_index("target", t, g.num_entities())?;
    let succ = g.untyped_successors();
    let mut frontier = vec![false; g.num_entities()];
    frontier[s] = true;
    for _ in 0..k {
        let mut next = vec![false; g.num_entities()];
        let mut any = false;
        for (u, _) in frontier.iter().enumerate().filter(|(_, &on)| on) {
            for &v in &succ[u] {
                next[v] = true;
                any = true;
            }
        }
        if !any {
            return Ok(false);
        }
        frontier = next;
    }
    Ok(frontier[t])
}

/// `k + 1` stacked copies of the vertex set with edges only from layer `i` to
/// layer `i + 1`. Vertex `(v, i)` has index `v + i * n`; the result has a
/// single relation type and one edge per distinct untyped pair per layer gap.
pub fn layered_graph(g: &KnowledgeGraph, k: usize) -> KnowledgeGraph {
    let n = g.num_entities();
    let succ = g.untyped_successors();
    let mut edges = Vec::new();
    for layer in 0..k {
        for (u, tails) in succ.iter().enumerate() {
            for &v in tails {
                edges.push(Triple::new(u + layer * n, 0, v + (layer + 1) * n));
            }
        }
    }
    KnowledgeGraph::new(edges, n * (k + 1), 1).expect("layered edges are distinct and in range")
}

/// Directed reachability from `(s, 0)` to `(t, k)` in [`layered_graph`].
pub fn layered_connectivity(g: &KnowledgeGraph, s: usize, t: usize, k: usize) -> Result<bool, GraphError> {
    check_index("source", s, g.num_entities())?;
    check_index("target", t, g.num_entities())?;
    let layered = layered_graph(g, k);
    let goal = t + k * g.num_entities();
    let mut seen = vec![false; layered.num_entities()];
    let mut queue = VecDeque::from([s]);
    seen[s] = true;
    while let Some(u) = queue.pop_front() {
        if u == goal {
            return Ok(true);
        }
        for &(_, v) in layered.outgoing(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    Ok(false)
}
