use serde::{Deserialize, Serialize};

use super::KnowledgeGraph;

/// Which edge directions open an attention slot.
///
/// Row `i` of the mask is the set of positions node `i` may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionPolicy {
    /// `i` attends to `j` iff some edge `i -> j` exists.
    Directed,
    /// `i` attends to `j` iff some edge `j -> i` exists (messages follow edge direction).
    Incoming,
    /// `i` attends to `j` iff an edge exists in either direction.
    #[default]
    Symmetric,
}

impl std::str::FromStr for DirectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "directed" => Ok(Self::Directed),
            "incoming" => Ok(Self::Incoming),
            "symmetric" => Ok(Self::Symmetric),
            other => Err(format!("unknown direction policy {other:?}")),
        }
    }
}

/// Binary `n x n` attention constraint. The diagonal is always open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Every pair allowed.
    pub fn full(n: usize) -> Self {
        Self {
            n,
            allowed: vec![true; n * n],
        }
    }

    /// Only the diagonal allowed.
    pub fn self_only(n: usize) -> Self {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            allowed[i * n + i] = true;
        }
        Self { n, allowed }
    }

    /// Builds a mask from a row-major grid; the diagonal is forced open.
    pub fn from_grid(n: usize, mut allowed: Vec<bool>) -> Self {
        assert_eq!(allowed.len(), n * n, "mask grid must be n*n");
        for i in 0..n {
            allowed[i * n + i] = true;
        }
        Self { n, allowed }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }

    /// Number of open slots in row `i`, self included.
    pub fn row_support(&self, i: usize) -> usize {
        self.allowed[i * self.n..(i + 1) * self.n]
            .iter()
            .filter(|&&a| a)
            .count()
    }

    /// Largest number of non-self slots in any row (`Δ`).
    pub fn max_degree(&self) -> usize {
        (0..self.n)
            .map(|i| self.row_support(i) - 1)
            .max()
            .unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.allowed(i, j) == self.allowed(j, i)))
    }
}

/// Entry of the edge-type grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Relation(usize),
    /// Diagonal entry; reads the extra bias slot at index `|R|`.
    SelfLoop,
    /// No edge: contributes no bias and is masked out.
    None,
}

/// Relation index per attention slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeTypeMap {
    n: usize,
    num_relations: usize,
    kinds: Vec<EdgeKind>,
}

impl EdgeTypeMap {
    /// Diagonal `SelfLoop`, everything else `None`.
    pub fn self_only(n: usize, num_relations: usize) -> Self {
        let mut kinds = vec![EdgeKind::None; n * n];
        for i in 0..n {
            kinds[i * n + i] = EdgeKind::SelfLoop;
        }
        Self {
            n,
            num_relations,
            kinds,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> EdgeKind {
        self.kinds[i * self.n + j]
    }

    /// Slot in a bias table of length `|R| + 1`; `None` for unconnected pairs.
    #[inline]
    pub fn bias_slot(&self, i: usize, j: usize) -> Option<usize> {
        match self.get(i, j) {
            EdgeKind::Relation(r) => Some(r),
            EdgeKind::SelfLoop => Some(self.num_relations),
            EdgeKind::None => None,
        }
    }

    /// Bias-table slots for the whole grid, row-major.
    pub fn bias_slots(&self) -> Vec<Option<usize>> {
        (0..self.n * self.n)
            .map(|k| self.bias_slot(k / self.n, k % self.n))
            .collect()
    }

    fn set_min(&mut self, i: usize, j: usize, r: usize) {
        let slot = &mut self.kinds[i * self.n + j];
        *slot = match *slot {
            EdgeKind::Relation(old) if old <= r => EdgeKind::Relation(old),
            EdgeKind::SelfLoop => EdgeKind::SelfLoop,
            _ => EdgeKind::Relation(r),
        };
    }
}

/// Derives the attention mask and the matching edge-type grid from a graph.
///
/// When several relations connect the same slot the lowest relation index
/// wins. Self-loop edges in the graph do not change the diagonal, which is
/// always `SelfLoop`.
pub fn derive_mask(g: &KnowledgeGraph, policy: DirectionPolicy) -> (AttentionMask, EdgeTypeMap) {
    let n = g.num_entities();
    let mut types = EdgeTypeMap::self_only(n, g.num_relations());
    for e in g.edges() {
        if e.head == e.tail {
            continue;
        }
        match policy {
            DirectionPolicy::Directed => types.set_min(e.head, e.tail, e.relation),
            DirectionPolicy::Incoming => types.set_min(e.tail, e.head, e.relation),
            DirectionPolicy::Symmetric => {
                types.set_min(e.head, e.tail, e.relation);
                types.set_min(e.tail, e.head, e.relation);
            }
        }
    }
    let allowed = types.kinds.iter().map(|k| *k != EdgeKind::None).collect();
    (AttentionMask { n, allowed }, types)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn open_pairs(mask: &AttentionMask) -> Vec<(usize, usize)> {
        let n = mask.n();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| mask.allowed(i, j))
            .collect()
    }

    #[test]
    fn chain_directed() {
        let g = build_graph(&[(0, 0, 1), (1, 0, 2)], 3, 1).unwrap();
        let (mask, types) = derive_mask(&g, DirectionPolicy::Directed);
        assert_eq!(open_pairs(&mask), vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]);
        assert_eq!(types.get(0, 1), EdgeKind::Relation(0));
        assert_eq!(types.get(1, 0), EdgeKind::None);
        assert_eq!(types.get(2, 2), EdgeKind::SelfLoop);
    }

    #[test]
    fn chain_symmetric() {
        let g = build_graph(&[(0, 0, 1), (1, 0, 2)], 3, 1).unwrap();
        let (mask, _) = derive_mask(&g, DirectionPolicy::Symmetric);
        assert_eq!(
            open_pairs(&mask),
            vec![(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)]
        );
        assert!(mask.is_symmetric());
    }

    #[test]
    fn chain_incoming_is_transpose_of_directed() {
        let g = build_graph(&[(0, 0, 1), (1, 0, 2)], 3, 1).unwrap();
        let (mask, types) = derive_mask(&g, DirectionPolicy::Incoming);
        assert_eq!(open_pairs(&mask), vec![(0, 0), (1, 0), (1, 1), (2, 1), (2, 2)]);
        assert_eq!(types.get(1, 0), EdgeKind::Relation(0));
    }

    #[test]
    fn empty_graph_is_diagonal() {
        let g = build_graph(&[], 2, 1).unwrap();
        let (mask, _) = derive_mask(&g, DirectionPolicy::Symmetric);
        assert_eq!(open_pairs(&mask), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn lowest_relation_wins() {
        let g = build_graph(&[(0, 2, 1), (1, 1, 0), (0, 0, 1)], 2, 3).unwrap();
        let (_, types) = derive_mask(&g, DirectionPolicy::Directed);
        assert_eq!(types.get(0, 1), EdgeKind::Relation(0));
        let (_, sym) = derive_mask(&g, DirectionPolicy::Symmetric);
        assert_eq!(sym.get(1, 0), EdgeKind::Relation(0));
        assert_eq!(sym.bias_slot(1, 1), Some(3));
    }

    #[test]
    fn self_loop_edges_keep_self_slot() {
        let g = build_graph(&[(0, 0, 0)], 1, 1).unwrap();
        let (mask, types) = derive_mask(&g, DirectionPolicy::Symmetric);
        assert!(mask.allowed(0, 0));
        assert_eq!(types.get(0, 0), EdgeKind::SelfLoop);
    }
}
