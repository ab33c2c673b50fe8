//! Dense and relation-aware sparse multi-head attention, plus an entropy probe.
//!
//! RASA scores are `S_ij = q_i . k_j / sqrt(d_k) + b[E_ij]` on allowed slots and
//! [`MASK_NEG`](crate::numerics::MASK_NEG) elsewhere. The bias table holds one
//! scalar per relation plus a trailing self slot and is shared by all heads.

use std::io::Write;

use rand::Rng;
use thiserror::Error;

use crate::graph::{AttentionMask, EdgeTypeMap};
use crate::numerics::{glorot_uniform, NumericsError, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("invalid attention config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("entropy needs at least one trace")]
    EmptyTraceList,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub head_count: usize,
    pub head_dim: usize,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, head_count: usize) -> Result<Self, AttentionError> {
        if model_dim == 0 || head_count == 0 || model_dim % head_count != 0 {
            return Err(AttentionError::InvalidConfig(format!(
                "model_dim {model_dim} must be a positive multiple of head_count {head_count}"
            )));
        }
        Ok(Self {
            model_dim,
            head_count,
            head_dim: model_dim / head_count,
        })
    }
}

/// Projection parameters of one attention layer, all `d x d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl AttentionParams {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &AttentionConfig, rng: &mut R) -> Result<Self, NumericsError> {
        let d = cfg.model_dim;
        let mut add = |name: &str| store.add(format!("{prefix}.{name}"), glorot_uniform(&[d, d], rng));
        Ok(Self {
            wq: add("wq")?,
            wk: add("wk")?,
            wv: add("wv")?,
            wo: add("wo")?,
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> AttentionWeights {
        AttentionWeights {
            wq: tape.param(store, self.wq),
            wk: tape.param(store, self.wk),
            wv: tape.param(store, self.wv),
            wo: tape.param(store, self.wo),
        }
    }
}

/// Projection weights recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Post-softmax weights of one layer, one `n x n` matrix per head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub layer_index: usize,
    pub weights: Vec<Tensor>,
}

/// Graph structure and bias table for one RASA layer.
#[derive(Debug, Clone, Copy)]
pub struct GraphContext<'a> {
    pub mask: &'a AttentionMask,
    pub etypes: &'a EdgeTypeMap,
    /// Length `|R| + 1`; the last slot is the self bias.
    pub bias_table: Var,
}

fn check_input(tape: &Tape, x: Var, cfg: &AttentionConfig) -> Result<usize, AttentionError> {
    let (n, d) = tape.value(x).dims2("attention")?;
    if d != cfg.model_dim {
        return Err(AttentionError::ShapeMismatch(format!("input width {d} vs model_dim {}", cfg.model_dim)));
    }
    Ok(n)
}

fn check_graph(tape: &Tape, n: usize, ctx: &GraphContext<'_>) -> Result<(), AttentionError> {
    if ctx.mask.n() != n || ctx.etypes.n() != n {
        return Err(AttentionError::ShapeMismatch(format!(
            "mask for {} nodes, edge types for {}, input has {n}",
            ctx.mask.n(),
            ctx.etypes.n()
        )));
    }
    let table = tape.value(ctx.bias_table);
    if table.rank() != 1 || table.len() != ctx.etypes.num_relations() + 1 {
        return Err(AttentionError::ShapeMismatch(format!(
            "bias table {:?} for {} relations (needs |R| + 1)",
            table.shape(),
            ctx.etypes.num_relations()
        )));
    }
    Ok(())
}

fn head_scores(tape: &mut Tape, q: Var, k: Var, cfg: &AttentionConfig) -> Result<Vec<Var>, NumericsError> {
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    (0..cfg.head_count)
        .map(|h| {
            let qh = tape.slice_cols(q, h * cfg.head_dim, cfg.head_dim)?;
            let kh = tape.slice_cols(k, h * cfg.head_dim, cfg.head_dim)?;
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            Ok(tape.scale(s, scale))
        })
        .collect()
}

/// Per-head masked RASA scores.
pub fn rasa_scores(
    tape: &mut Tape,
    x: Var,
    wq: Var,
    wk: Var,
    cfg: &AttentionConfig,
    ctx: &GraphContext<'_>,
) -> Result<Vec<Var>, AttentionError> {
    let n = check_input(tape, x, cfg)?;
    check_graph(tape, n, ctx)?;
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let bias = tape.gather_bias(ctx.bias_table, &ctx.etypes.bias_slots(), n)?;
    let allowed = ctx.mask.as_slice();
    head_scores(tape, q, k, cfg)?
        .into_iter()
        .map(|s| {
            let biased = tape.add(s, bias)?;
            Ok(tape.mask_fill(biased, allowed)?)
        })
        .collect()
}

fn attend(
    tape: &mut Tape,
    x: Var,
    w: &AttentionWeights,
    scores: Vec<Var>,
    allowed: &[bool],
    cfg: &AttentionConfig,
) -> Result<(Var, AttentionTrace), AttentionError> {
    let v = tape.matmul(x, w.wv)?;
    let mut heads = Vec::with_capacity(cfg.head_count);
    let mut weights = Vec::with_capacity(cfg.head_count);
    for (h, s) in scores.into_iter().enumerate() {
        let a = tape.masked_softmax_rows(s, allowed)?;
        weights.push(tape.value(a).clone());
        let vh = tape.slice_cols(v, h * cfg.head_dim, cfg.head_dim)?;
        heads.push(tape.matmul(a, vh)?);
    }
    let cat = tape.concat_cols(&heads)?;
    let out = tape.matmul(cat, w.wo)?;
    Ok((out, AttentionTrace { layer_index: 0, weights }))
}

/// Multi-head RASA attention: masked softmax over biased scores, value
/// projection per head, heads concatenated and output-projected.
pub fn rasa_attention(
    tape: &mut Tape,
    x: Var,
    w: &AttentionWeights,
    cfg: &AttentionConfig,
    ctx: &GraphContext<'_>,
) -> Result<(Var, AttentionTrace), AttentionError> {
    let scores = rasa_scores(tape, x, w.wq, w.wk, cfg, ctx)?;
    attend(tape, x, w, scores, ctx.mask.as_slice(), cfg)
}

/// Ordinary multi-head attention over every position, without bias.
pub fn standard_attention(
    tape: &mut Tape,
    x: Var,
    w: &AttentionWeights,
    cfg: &AttentionConfig,
) -> Result<(Var, AttentionTrace), AttentionError> {
    let n = check_input(tape, x, cfg)?;
    let q = tape.matmul(x, w.wq)?;
    let k = tape.matmul(x, w.wk)?;
    let scores = head_scores(tape, q, k, cfg)?;
    attend(tape, x, w, scores, &vec![true; n * n], cfg)
}

/// Mean attention entropy per layer, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub per_layer_nats: Vec<f64>,
    /// `mean(per_layer_nats) / ln(n)`, or 0 when `n == 1`.
    pub normalized: f64,
    pub n: usize,
}

/// `-sum w ln w` with `0 ln 0 = 0`.
pub fn row_entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&w| w > 0.0).map(|&w| w * w.ln()).sum::<f64>()
}

/// Entropy of each layer's weights, averaged uniformly over heads and over the
/// first `valid_nodes` query rows.
pub fn attention_entropy(traces: &[AttentionTrace], valid_nodes: usize) -> Result<EntropyReport, AttentionError> {
    if traces.is_empty() {
        return Err(AttentionError::EmptyTraceList);
    }
    assert!(valid_nodes >= 1, "entropy needs at least one node");
    let per_layer_nats = traces
        .iter()
        .map(|t| {
            let mut total = 0.0;
            for w in &t.weights {
                for i in 0..valid_nodes {
                    total += row_entropy(&w.row(i)[..valid_nodes.min(w.shape()[1])]);
                }
            }
            total / (t.weights.len() * valid_nodes) as f64
        })
        .collect::<Vec<_>>();
    let mean = per_layer_nats.iter().sum::<f64>() / per_layer_nats.len() as f64;
    let normalized = if valid_nodes > 1 { mean / (valid_nodes as f64).ln() } else { 0.0 };
    Ok(EntropyReport {
        per_layer_nats,
        normalized,
        n: valid_nodes,
    })
}

impl EntropyReport {
    pub fn mean_nats(&self) -> f64 {
        self.per_layer_nats.iter().sum::<f64>() / self.per_layer_nats.len().max(1) as f64
    }

    /// Uniform average over per-example reports with the same layer count.
    /// `n` is the rounded mean node count.
    pub fn average(reports: &[EntropyReport]) -> Result<Self, AttentionError> {
        let first = reports.first().ok_or(AttentionError::EmptyTraceList)?;
        let layers = first.per_layer_nats.len();
        let count = reports.len() as f64;
        let mut per_layer_nats = vec![0.0; layers];
        for r in reports {
            if r.per_layer_nats.len() != layers {
                return Err(AttentionError::ShapeMismatch("reports differ in layer count".into()));
            }
            for (acc, h) in per_layer_nats.iter_mut().zip(&r.per_layer_nats) {
                *acc += h / count;
            }
        }
        Ok(Self {
            per_layer_nats,
            normalized: reports.iter().map(|r| r.normalized).sum::<f64>() / count,
            n: (reports.iter().map(|r| r.n as f64).sum::<f64>() / count).round() as usize,
        })
    }

    /// `layer,entropy_nats,normalized,n` with one row per layer and a final `mean` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "layer,entropy_nats,normalized,n")?;
        let ln_n = (self.n as f64).ln();
        for (l, h) in self.per_layer_nats.iter().enumerate() {
            let norm = if self.n > 1 { h / ln_n } else { 0.0 };
            writeln!(w, "L{l},{h},{norm},{}", self.n)?;
        }
        writeln!(w, "mean,{},{},{}", self.mean_nats(), self.normalized, self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, derive_mask, DirectionPolicy, EdgeKind};
    use crate::numerics::MASK_NEG;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, relations: usize) -> crate::graph::KnowledgeGraph {
        let mut set = std::collections::BTreeSet::new();
        for _ in 0..(n * 2) {
            set.insert((rng.gen_range(0..n), rng.gen_range(0..relations), rng.gen_range(0..n)));
        }
        build_graph(&set.into_iter().collect::<Vec<_>>(), n, relations).unwrap()
    }

    struct Setup {
        store: ParamStore,
        params: AttentionParams,
        bias: ParamId,
        cfg: AttentionConfig,
    }

    fn setup(rng: &mut ChaCha8Rng, d: usize, h: usize, relations: usize) -> Setup {
        let cfg = AttentionConfig::new(d, h).unwrap();
        let mut store = ParamStore::new();
        let params = AttentionParams::init(&mut store, "attn", &cfg, rng).unwrap();
        let bias = store.add("bias", random(rng, &[relations + 1])).unwrap();
        Setup { store, params, bias, cfg }
    }

    /// Direct double loop over the scoring formula for one head.
    fn naive_scores(x: &Tensor, wq: &Tensor, wk: &Tensor, bias: &Tensor, etypes: &EdgeTypeMap, mask: &AttentionMask, head: usize, dk: usize) -> Vec<f64> {
        let q = x.matmul(wq).unwrap();
        let k = x.matmul(wk).unwrap();
        let n = x.shape()[0];
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if !mask.allowed(i, j) {
                    out[i * n + j] = MASK_NEG;
                    continue;
                }
                let mut dot = 0.0;
                for c in head * dk..(head + 1) * dk {
                    dot += q.at(i, c) * k.at(j, c);
                }
                let b = etypes.bias_slot(i, j).map_or(0.0, |s| bias.data()[s]);
                out[i * n + j] = dot / (dk as f64).sqrt() + b;
            }
        }
        out
    }

    #[test]
    fn config_validation() {
        assert!(AttentionConfig::new(15, 4).is_err());
        assert_eq!(AttentionConfig::new(16, 4).unwrap().head_dim, 4);
    }

    #[test]
    fn zero_weights_expose_bias_and_mask() {
        let g = build_graph(&[(0, 1, 1), (1, 0, 2)], 3, 2).unwrap();
        let (mask, etypes) = derive_mask(&g, DirectionPolicy::Symmetric);
        let cfg = AttentionConfig::new(4, 2).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[3, 4]));
        let zero = tape.constant(Tensor::zeros(&[4, 4]));
        let table = tape.constant(Tensor::zeros(&[3]));
        let ctx = GraphContext { mask: &mask, etypes: &etypes, bias_table: table };
        let s = rasa_scores(&mut tape, x, zero, zero, &cfg, &ctx).unwrap();
        assert_eq!(tape.value(s[0]).data(), &[0.0, 0.0, MASK_NEG, 0.0, 0.0, 0.0, MASK_NEG, 0.0, 0.0]);

        let table = tape.constant(Tensor::vector(vec![0.0, 2.5, -1.0]));
        let ctx = GraphContext { bias_table: table, ..ctx };
        let s = rasa_scores(&mut tape, x, zero, zero, &cfg, &ctx).unwrap();
        let v = tape.value(s[1]);
        assert_eq!(v.at(0, 1), 2.5);
        assert_eq!(v.at(1, 0), 2.5);
        assert_eq!(v.at(1, 2), 0.0);
        assert_eq!(v.at(2, 2), -1.0);
    }

    #[test]
    fn scores_match_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let s = setup(&mut rng, 8, 2, 3);
            let g = random_graph(&mut rng, 6, 3);
            let (mask, etypes) = derive_mask(&g, DirectionPolicy::Symmetric);
            let xv = random(&mut rng, &[6, 8]);
            let mut tape = Tape::new();
            let x = tape.constant(xv.clone());
            let w = s.params.bind(&mut tape, &s.store);
            let table = tape.param(&s.store, s.bias);
            let ctx = GraphContext { mask: &mask, etypes: &etypes, bias_table: table };
            let scores = rasa_scores(&mut tape, x, w.wq, w.wk, &s.cfg, &ctx).unwrap();
            for (h, sv) in scores.iter().enumerate() {
                let expected = naive_scores(&xv, s.store.value(s.params.wq), s.store.value(s.params.wk), s.store.value(s.bias), &etypes, &mask, h, 4);
                for (a, b) in tape.value(*sv).data().iter().zip(&expected) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn self_only_mask_gives_identity_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = setup(&mut rng, 8, 4, 2);
        let mask = AttentionMask::self_only(5);
        let etypes = EdgeTypeMap::self_only(5, 2);
        let mut tape = Tape::new();
        let x = tape.constant(random(&mut rng, &[5, 8]));
        let w = s.params.bind(&mut tape, &s.store);
        let table = tape.param(&s.store, s.bias);
        let (_, trace) = rasa_attention(&mut tape, x, &w, &s.cfg, &GraphContext { mask: &mask, etypes: &etypes, bias_table: table }).unwrap();
        for head in &trace.weights {
            assert_eq!(head, &Tensor::eye(5));
        }
    }

    #[test]
    fn full_mask_zero_bias_equals_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = setup(&mut rng, 8, 2, 2);
        let n = 5;
        let mask = AttentionMask::full(n);
        let mut etypes_triples = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    etypes_triples.push((i, (i + j) % 2, j));
                }
            }
        }
        let g = build_graph(&etypes_triples, n, 2).unwrap();
        let (full, etypes) = derive_mask(&g, DirectionPolicy::Symmetric);
        assert_eq!(full, mask);
        let xv = random(&mut rng, &[n, 8]);
        let mut tape = Tape::new();
        let x = tape.constant(xv);
        let w = s.params.bind(&mut tape, &s.store);
        let zero = tape.constant(Tensor::zeros(&[3]));
        let (ra, _) = rasa_attention(&mut tape, x, &w, &s.cfg, &GraphContext { mask: &mask, etypes: &etypes, bias_table: zero }).unwrap();
        let (da, _) = standard_attention(&mut tape, x, &w, &s.cfg).unwrap();
        assert!(tape.value(ra).max_abs_diff(tape.value(da)) <= 1e-12);
    }

    #[test]
    fn dense_single_token_and_uniform_rows() {
        let cfg = AttentionConfig::new(4, 2).unwrap();
        let mut tape = Tape::new();
        let zero = tape.constant(Tensor::zeros(&[4, 4]));
        let w = AttentionWeights { wq: zero, wk: zero, wv: zero, wo: zero };
        let x1 = tape.constant(Tensor::ones(&[1, 4]));
        let (_, t1) = standard_attention(&mut tape, x1, &w, &cfg).unwrap();
        assert_eq!(t1.weights[0].data(), &[1.0]);
        let x4 = tape.constant(Tensor::eye(4));
        let (_, t4) = standard_attention(&mut tape, x4, &w, &cfg).unwrap();
        assert!(t4.weights[1].data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn dense_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = setup(&mut rng, 4, 1, 1);
        let xv = random(&mut rng, &[4, 4]);
        let mut tape = Tape::new();
        let x = tape.constant(xv.clone());
        let w = s.params.bind(&mut tape, &s.store);
        let (out, _) = standard_attention(&mut tape, x, &w, &s.cfg).unwrap();
        let q = xv.matmul(s.store.value(s.params.wq)).unwrap();
        let k = xv.matmul(s.store.value(s.params.wk)).unwrap();
        let v = xv.matmul(s.store.value(s.params.wv)).unwrap();
        let mut mixed = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            let logits: Vec<f64> = (0..4).map(|j| (0..4).map(|c| q.at(i, c) * k.at(j, c)).sum::<f64>() / 2.0).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..4 {
                for c in 0..4 {
                    mixed.data_mut()[i * 4 + c] += logits[j].exp() / z * v.at(j, c);
                }
            }
        }
        let expected = mixed.matmul(s.store.value(s.params.wo)).unwrap();
        assert!(tape.value(out).max_abs_diff(&expected) <= 1e-12);
    }

    #[test]
    fn bias_table_length_checked() {
        let mask = AttentionMask::self_only(2);
        let etypes = EdgeTypeMap::self_only(2, 3);
        let cfg = AttentionConfig::new(2, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        let w = tape.constant(Tensor::zeros(&[2, 2]));
        let table = tape.constant(Tensor::zeros(&[3]));
        let ctx = GraphContext { mask: &mask, etypes: &etypes, bias_table: table };
        assert!(matches!(rasa_scores(&mut tape, x, w, w, &cfg, &ctx), Err(AttentionError::ShapeMismatch(_))));
    }

    #[test]
    fn entropy_extremes() {
        let uniform = AttentionTrace { layer_index: 0, weights: vec![Tensor::filled(&[4, 4], 0.25)] };
        let r = attention_entropy(&[uniform], 4).unwrap();
        assert!((r.per_layer_nats[0] - 4f64.ln()).abs() < 1e-12);
        assert!((r.normalized - 1.0).abs() < 1e-12);
        let onehot = AttentionTrace { layer_index: 0, weights: vec![Tensor::eye(4)] };
        assert_eq!(attention_entropy(&[onehot], 4).unwrap().per_layer_nats[0], 0.0);
        assert!(matches!(attention_entropy(&[], 4), Err(AttentionError::EmptyTraceList)));
        let single = AttentionTrace { layer_index: 0, weights: vec![Tensor::ones(&[1, 1])] };
        assert_eq!(attention_entropy(&[single], 1).unwrap().normalized, 0.0);
    }

    #[test]
    fn entropy_csv_layout() {
        let r = EntropyReport { per_layer_nats: vec![1.0, 0.5], normalized: 0.75 / 4f64.ln(), n: 4 };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "layer,entropy_nats,normalized,n");
        assert!(lines[1].starts_with("L0,1,"));
        assert!(lines[3].starts_with("mean,0.75,"));
    }

    #[test]
    fn bias_receives_gradient_when_edge_in_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut s = setup(&mut rng, 4, 2, 2);
        let g = build_graph(&[(0, 1, 1), (1, 1, 2), (2, 1, 0)], 3, 2).unwrap();
        let (mask, etypes) = derive_mask(&g, DirectionPolicy::Symmetric);
        let xv = random(&mut rng, &[3, 4]);
        let proj = random(&mut rng, &[3, 4]);
        let (params, bias, cfg) = (s.params, s.bias, s.cfg);
        let err = crate::numerics::finite_diff_check(&mut s.store, bias, 1e-5, |st, t| {
            let x = t.constant(xv.clone());
            let w = params.bind(t, st);
            let table = t.param(st, bias);
            let (o, _) = rasa_attention(t, x, &w, &cfg, &GraphContext { mask: &mask, etypes: &etypes, bias_table: table }).unwrap();
            let p = t.constant(proj.clone());
            let m = t.mul(o, p)?;
            Ok(t.sum(m))
        })
        .unwrap();
        assert!(err <= 1e-4);
        let grad = s.store.grad(bias).data();
        assert_eq!(grad[0], 0.0, "relation 0 has no edge");
        assert!(grad[1] != 0.0, "relation 1 edges are inside the mask");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn rasa_trace_invariants(seed in any::<u64>(), n in 1usize..9, policy in 0u8..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = setup(&mut rng, 8, 2, 3);
            let g = random_graph(&mut rng, n, 3);
            let policy = [DirectionPolicy::Directed, DirectionPolicy::Incoming, DirectionPolicy::Symmetric][policy as usize];
            let (mask, etypes) = derive_mask(&g, policy);
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(etypes.get(i, j) == EdgeKind::None, !mask.allowed(i, j));
                }
            }
            let mut tape = Tape::new();
            let x = tape.constant(random(&mut rng, &[n, 8]).map(|v| 3.0 * v));
            let w = s.params.bind(&mut tape, &s.store);
            let table = tape.param(&s.store, s.bias);
            let (_, trace) = rasa_attention(&mut tape, x, &w, &s.cfg, &GraphContext { mask: &mask, etypes: &etypes, bias_table: table }).unwrap();
            for head in &trace.weights {
                for i in 0..n {
                    let row = head.row(i);
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                    for j in 0..n {
                        prop_assert!((0.0..=1.0).contains(&row[j]));
                        if !mask.allowed(i, j) {
                            prop_assert_eq!(row[j], 0.0);
                        }
                    }
                    prop_assert!(row_entropy(row) <= (mask.row_support(i) as f64).ln() + 1e-12);
                }
            }
        }
    }
}
