use serde::{Deserialize, Serialize};

use super::KnowledgeGraph;

/// Base-2 logarithms of attention-pattern counts, kept as exact integers.
///
/// A dense `n x n` pattern space has `2^(n^2)` binary masks; restricting the
/// open slots to graph edges leaves `2^m`, or `2^(m + n)` when the diagonal is
/// counted separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpaceReport {
    pub n: u64,
    pub m: u64,
    pub standard_log2_patterns: u64,
    pub rasa_log2_patterns: u64,
    pub rasa_with_self_log2_patterns: u64,
}

impl SearchSpaceReport {
    pub fn from_counts(n: u64, m: u64) -> Self {
        Self {
            n,
            m,
            standard_log2_patterns: n * n,
            rasa_log2_patterns: m,
            rasa_with_self_log2_patterns: m + n,
        }
    }
}

pub fn search_space(g: &KnowledgeGraph) -> SearchSpaceReport {
    SearchSpaceReport::from_counts(g.num_entities() as u64, g.num_edges() as u64)
}
