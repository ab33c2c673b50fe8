use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{gen_khop_dataset, SyntheticSpec};
use crate::graph::{build_graph, DirectionPolicy};
use crate::model::{BiasMode, KHopExample, ModelConfig, Variant};
use crate::numerics::{ParamStore, Tensor};

#[test]
fn warmup_schedule() {
    let cfg = TrainConfig { learning_rate: 1.0, warmup_steps: 4, ..TrainConfig::default() };
    let lrs: Vec<f64> = (0..6).map(|s| cfg.lr_at(s)).collect();
    assert_eq!(lrs, [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
    let flat = TrainConfig { warmup_steps: 0, ..cfg };
    assert_eq!(flat.lr_at(0), 1.0);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert_eq!(TrainConfig::default().learning_rate, 2e-5);
    assert!(TrainConfig { patience: 16, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
    let before = store.clone();
    let mut state = AdamState::new(&store);
    for _ in 0..5 {
        store.zero_grads();
        adam_step(&mut store, &mut state, 0.1).unwrap();
    }
    assert_eq!(store, before);
}

#[test]
fn adam_first_step_by_hand() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![1.0, 1.0, 1.0])).unwrap();
    let g = [0.5, -2.0, 1e-9];
    store.get_mut(id).grad = Tensor::vector(g.to_vec());
    let mut state = AdamState::new(&store);
    adam_step(&mut store, &mut state, 0.01).unwrap();
    // m_hat = g and v_hat = g^2 after bias correction.
    for (k, &gk) in g.iter().enumerate() {
        let expected = 1.0 - 0.01 * gk / (gk.abs() + ADAM_EPS);
        assert!((store.value(id).data()[k] - expected).abs() < 1e-15);
    }
    let mut other = ParamStore::new();
    other.add("a", Tensor::zeros(&[1])).unwrap();
    other.add("b", Tensor::zeros(&[1])).unwrap();
    assert!(adam_step(&mut other, &mut state, 0.1).is_err());
}

#[test]
fn adam_descends_a_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![3.0, -4.0, 0.5, 2.0])).unwrap();
    let scales = [1.0, 10.0, 0.1, 3.0];
    let cfg = TrainConfig { learning_rate: 0.05, warmup_steps: 10, ..TrainConfig::default() };
    let f = |w: &[f64]| w.iter().zip(scales).map(|(x, c)| c * x * x).sum::<f64>();
    let mut state = AdamState::new(&store);
    let mut prev = f64::INFINITY;
    for step in 0..100 {
        let w = store.value(id).data().to_vec();
        let loss = f(&w);
        if step >= cfg.warmup_steps {
            assert!(loss < prev, "step {step}: {loss} >= {prev}");
        }
        prev = loss;
        store.get_mut(id).grad = Tensor::vector(w.iter().zip(scales).map(|(x, c)| 2.0 * c * x).collect());
        adam_step(&mut store, &mut state, cfg.lr_at(step)).unwrap();
    }
}

#[test]
fn early_stopping_rule() {
    let mut es = EarlyStopping::new(1);
    assert!(es.observe(1, 0.5).improved);
    let v = es.observe(2, 0.4);
    assert_eq!(v, Verdict { improved: false, stop: true });
    assert_eq!(es.best_epoch(), Some(1));

    let mut es = EarlyStopping::new(2);
    es.observe(1, 0.5);
    assert!(!es.observe(2, 0.5).stop);
    assert!(es.observe(3, 0.7).improved);
    es.observe(4, 0.7);
    assert!(es.observe(5, 0.1).stop);
    assert_eq!(es.best_epoch(), Some(3));
}

fn records(logits: &[Vec<f64>], gold: &[BTreeSet<usize>]) -> MetricsRecord {
    let mut acc = MetricAccumulator::default();
    for (l, g) in logits.iter().zip(gold) {
        acc.add(l, g, 0.0);
    }
    acc.finish(Split::Test, 0)
}

#[test]
fn oracle_and_anti_oracle_metrics() {
    let gold = vec![BTreeSet::from([1, 3]), BTreeSet::from([0]), BTreeSet::from([4])];
    let oracle: Vec<Vec<f64>> =
        gold.iter().map(|g| (0..5).map(|i| if g.contains(&i) { 20.0 } else { -20.0 }).collect()).collect();
    let m = records(&oracle, &gold);
    assert_eq!((m.hits_at_1, m.hits_at_10, m.set_f1), (1.0, 1.0, 1.0));
    let anti: Vec<Vec<f64>> = oracle.iter().map(|l| l.iter().map(|z| -z).collect()).collect();
    let m = records(&anti, &gold);
    assert_eq!((m.hits_at_1, m.set_f1), (0.0, 0.0));
    // With only five candidates the gold set is always inside the top 10.
    assert_eq!(m.hits_at_10, 1.0);
}

#[test]
fn random_logits_hit_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut acc = MetricAccumulator::default();
    for _ in 0..10_000 {
        let logits: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
        acc.add(&logits, &BTreeSet::from([rng.gen_range(0..100)]), 0.0);
    }
    let m = acc.finish(Split::Test, 0);
    assert!((m.hits_at_1 - 0.01).abs() <= 0.01, "{}", m.hits_at_1);
    assert!((m.hits_at_10 - 0.1).abs() <= 0.02, "{}", m.hits_at_10);
    assert!(m.hits_at_1 <= m.hits_at_10);
}

#[test]
fn top_k_and_f1_helpers() {
    assert_eq!(top_k(&[1.0, 3.0, 3.0, 0.0], 3), vec![1, 2, 0]);
    assert_eq!(top_k(&[1.0], 10), vec![0]);
    assert_eq!(set_f1(&BTreeSet::from([1, 2]), &BTreeSet::from([2, 3])), 0.5);
    assert_eq!(set_f1(&BTreeSet::new(), &BTreeSet::from([2])), 0.0);
}

fn example(graph_id: usize, source: usize, path: Vec<usize>, answers: &[usize]) -> KHopExample {
    KHopExample { graph_id, source, path, answers: answers.iter().copied().collect() }
}

#[test]
fn chance_uses_most_frequent_train_answer() {
    let g = build_graph(&[], 4, 1).unwrap();
    let graphs = BTreeMap::from([(0, g)]);
    let train = Dataset {
        split: Split::Train,
        graphs: graphs.clone(),
        examples: vec![example(0, 0, vec![0], &[2, 3]), example(0, 1, vec![0], &[3]), example(0, 2, vec![0], &[1, 2])],
    };
    let test = Dataset {
        split: Split::Test,
        graphs,
        examples: vec![example(0, 0, vec![0], &[2]), example(0, 1, vec![0], &[3]), example(0, 3, vec![0], &[1])],
    };
    // 2 and 3 tie with two votes each; the lower id wins.
    assert!((chance_baseline(&train, &test) - 1.0 / 3.0).abs() < 1e-15);
}

/// Chains `0 -> 1 -> ... -> n-1` with random relation labels; each query asks
/// for the successor of a node along its own edge type.
fn chain_splits(graphs: usize, n: usize, relations: usize, seed: u64) -> DatasetSplits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = BTreeMap::new();
    let mut examples = Vec::new();
    for gid in 0..graphs {
        let labels: Vec<usize> = (0..n - 1).map(|_| rng.gen_range(0..relations)).collect();
        let triples: Vec<_> = labels.iter().enumerate().map(|(i, &r)| (i, r, i + 1)).collect();
        all.insert(gid, build_graph(&triples, n, relations).unwrap());
        for (i, &r) in labels.iter().enumerate() {
            examples.push(example(gid, i, vec![r], &[i + 1]));
        }
    }
    let cut = examples.len() * 3 / 4;
    let mk = |split, exs: &[KHopExample]| Dataset { split, graphs: all.clone(), examples: exs.to_vec() };
    DatasetSplits {
        train: mk(Split::Train, &examples[..cut]),
        dev: mk(Split::Dev, &examples[cut..]),
        test: mk(Split::Test, &examples[cut..]),
    }
}

fn chain_model(layers: usize, variant: Variant, seed: u64) -> RasaModel {
    let cfg = ModelConfig {
        layer_count: layers,
        model_dim: 16,
        head_count: 2,
        relation_count: 2,
        max_entities: 8,
        ffn_dim: 32,
        dropout: 0.0,
        variant,
        direction: DirectionPolicy::Incoming,
        bias_mode: BiasMode::PerQuery,
    };
    RasaModel::new(cfg, seed).unwrap()
}

fn fast_config(seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 1e-2, batch_size: 8, max_epochs: 5, patience: 5, warmup_steps: 10, seed }
}

#[test]
fn chain_task_is_learned_within_five_epochs() {
    let data = chain_splits(40, 8, 2, 1);
    data.train.verify().unwrap();
    data.dev.verify().unwrap();
    let (model, history) = train(chain_model(1, Variant::Rasa, 3), &data, &fast_config(0)).unwrap();
    assert!(history.epochs.len() <= 5);
    assert_eq!(history.best().dev.hits_at_1, 1.0, "{history:?}");
    assert_eq!(evaluate(&model, &data.dev, 0).unwrap().hits_at_1, 1.0);
}

#[test]
fn training_is_deterministic() {
    let data = chain_splits(10, 6, 2, 4);
    let run = || train(chain_model(2, Variant::Rasa, 8), &data, &TrainConfig { max_epochs: 2, patience: 2, ..fast_config(5) }).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(a.store, b.store);
}

#[test]
fn best_epoch_parameters_are_returned() {
    let data = chain_splits(10, 6, 2, 4);
    let cfg = TrainConfig { learning_rate: 5e-2, max_epochs: 4, patience: 4, ..fast_config(2) };
    let (model, history) = train(chain_model(1, Variant::Rasa, 1), &data, &cfg).unwrap();
    let again = evaluate(&model, &data.dev, 0).unwrap();
    assert_eq!(again.hits_at_1, history.best().dev.hits_at_1);
    assert_eq!(again.loss, history.best().dev.loss);
}

#[test]
fn empty_and_mismatched_splits() {
    let mut data = chain_splits(4, 6, 2, 0);
    data.dev.examples.clear();
    let err = train(chain_model(1, Variant::Rasa, 0), &data, &fast_config(0)).unwrap_err();
    assert!(matches!(err, TrainError::EmptySplit(Split::Dev)));
    assert!(matches!(evaluate(&chain_model(1, Variant::Rasa, 0), &data.dev, 0), Err(TrainError::EmptySplit(_))));
    let three = chain_splits(4, 6, 3, 0);
    let err = evaluate(&chain_model(1, Variant::Rasa, 0), &three.test, 0).unwrap_err();
    assert!(matches!(err, TrainError::Mismatch(_)));
}

#[test]
fn untrained_dense_entropy_is_near_uniform() {
    let spec = SyntheticSpec {
        num_entities: 32,
        avg_out_degree: 3.0,
        num_relations: 4,
        hop_count: 3,
        num_examples: 40,
        seed: 2,
        examples_per_graph: 4,
    };
    let data = gen_khop_dataset(&spec).unwrap();
    let cfg = ModelConfig {
        layer_count: 3,
        model_dim: 16,
        head_count: 2,
        relation_count: 4,
        max_entities: 32,
        ffn_dim: 32,
        dropout: 0.0,
        variant: Variant::Dense,
        direction: DirectionPolicy::Incoming,
        bias_mode: BiasMode::PerQuery,
    };
    let dense = RasaModel::new(cfg.clone(), 0).unwrap();
    let (report, _) = entropy_report(&dense, &data.test).unwrap();
    assert!(report.normalized > 0.8, "{report:?}");
    assert_eq!(report.per_layer_nats.len(), 3);

    let rasa = RasaModel::new(ModelConfig { variant: Variant::Rasa, ..cfg }, 0).unwrap();
    let (avg, per) = entropy_report(&rasa, &data.test).unwrap();
    for (ex, r) in data.test.examples.iter().zip(&per) {
        let inputs = rasa.graph_inputs(&data.test.graphs[&ex.graph_id]);
        let bound = (inputs.mask.max_degree() as f64).ln() / (inputs.n as f64).ln();
        assert!(r.normalized <= bound + 1e-12);
    }
    assert!(avg.normalized < report.normalized);
}

#[test]
fn ablation_grid_runs_each_cell_once() {
    let cfg = AblationConfig {
        base_spec: SyntheticSpec {
            num_entities: 8,
            avg_out_degree: 2.0,
            num_relations: 2,
            hop_count: 1,
            num_examples: 40,
            seed: 0,
            examples_per_graph: 4,
        },
        model: ModelTemplate { model_dim: 8, head_count: 2, ffn_dim: 8, ..ModelTemplate::default() },
        train: TrainConfig { max_epochs: 1, patience: 1, warmup_steps: 1, learning_rate: 1e-2, ..TrainConfig::default() },
        layer_values: vec![1, 2],
        hop_values: vec![1],
        variants: vec![Variant::Rasa, Variant::Dense],
        seeds: vec![0, 1],
    };
    let report = depth_ablation(&cfg).unwrap();
    assert_eq!(report.rows.len(), 8);
    assert!(report.rows.iter().all(|r| r.train_examples == 28 && r.epochs_run == 1));
    assert!(report.median_hits(1, 2, Variant::Dense).is_some());
    let again = run_cell(&cfg, ablation_cells(&cfg)[3]).unwrap();
    assert_eq!(again, report.rows[3]);
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);
    assert!(depth_ablation(&AblationConfig { seeds: vec![], ..cfg }).is_err());
}
