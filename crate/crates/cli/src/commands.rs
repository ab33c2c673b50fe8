//! Command bodies. Each takes fully resolved arguments and an output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rasa_core::attention::EntropyReport;
use rasa_core::data::{gen_khop_dataset, load_metaqa_kb, load_metaqa_questions, DatasetSplits, Split, SyntheticSpec};
use rasa_core::graph::{load_triples, search_space};
use rasa_core::model::{ModelConfig, RasaModel, Variant, CHECKPOINT_FILE, CONFIG_FILE};
use rasa_core::train::{
    ablation_cells, entropy_report, evaluate, train_cell, train_with, AblationConfig, AblationReport, AblationRow,
    MetricsRecord,
};

use crate::args::{
    merge_config, parse_delimiter, AblateArgs, Command, EntropyArgs, EvalArgs, GenDataArgs, MetaqaStatsArgs,
    SearchSpaceArgs, TrainArgs,
};
use crate::manifest::{hash_inputs, hash_outputs, now_unix, RunManifest};
use crate::util::{sig4, usage, MismatchError};

/// A command with every setting resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum Resolved {
    GenData(GenDataArgs),
    Train(TrainArgs),
    Eval(EvalArgs),
    Ablate(AblateArgs),
    Entropy(EntropyArgs),
    SearchSpace(SearchSpaceArgs),
    MetaqaStats(MetaqaStatsArgs),
}

fn default_out(command: &str) -> PathBuf {
    let root = std::env::var_os("RASA_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("rasa-out"));
    root.join(command)
}

fn required<T: Clone>(value: &Option<T>, flag: &str) -> anyhow::Result<T> {
    value.clone().ok_or_else(|| usage(format!("missing required flag --{flag}")))
}

impl Resolved {
    /// Merges flags with the config file, fills defaults and checks required flags.
    pub fn from_command(cmd: Command) -> anyhow::Result<(Self, Option<PathBuf>)> {
        macro_rules! resolve {
            ($variant:ident, $a:expr) => {{
                let config = $a.config.clone();
                let mut merged = merge_config(&$a, config.as_deref())?;
                merged.fill_defaults();
                (Resolved::$variant(merged), config)
            }};
        }
        let (mut r, config) = match cmd {
            Command::GenData(a) => resolve!(GenData, a),
            Command::Train(a) => resolve!(Train, a),
            Command::Eval(a) => resolve!(Eval, a),
            Command::Ablate(a) => resolve!(Ablate, a),
            Command::Entropy(a) => resolve!(Entropy, a),
            Command::SearchSpace(a) => resolve!(SearchSpace, a),
            Command::MetaqaStats(a) => resolve!(MetaqaStats, a),
            Command::Replay(_) => unreachable!("replay is handled by the caller"),
        };
        let name = r.name();
        let out = r.out_mut();
        if out.is_none() {
            *out = Some(default_out(name));
        }
        r.check_required()?;
        Ok((r, config))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Resolved::GenData(_) => "gen-data",
            Resolved::Train(_) => "train",
            Resolved::Eval(_) => "eval",
            Resolved::Ablate(_) => "ablate",
            Resolved::Entropy(_) => "entropy",
            Resolved::SearchSpace(_) => "search-space",
            Resolved::MetaqaStats(_) => "metaqa-stats",
        }
    }

    pub fn out_mut(&mut self) -> &mut Option<PathBuf> {
        match self {
            Resolved::GenData(a) => &mut a.out,
            Resolved::Train(a) => &mut a.out,
            Resolved::Eval(a) => &mut a.out,
            Resolved::Ablate(a) => &mut a.out,
            Resolved::Entropy(a) => &mut a.out,
            Resolved::SearchSpace(a) => &mut a.out,
            Resolved::MetaqaStats(a) => &mut a.out,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Resolved::GenData(a) => a.seed,
            Resolved::Train(a) => a.seed,
            Resolved::Ablate(a) => a.seeds.as_ref().and_then(|s| s.first().copied()),
            _ => None,
        }
    }

    fn check_required(&self) -> anyhow::Result<()> {
        match self {
            Resolved::Train(a) => required(&a.data, "data").map(drop),
            Resolved::Eval(a) => required(&a.data, "data").and(required(&a.model, "model")).map(drop),
            Resolved::Entropy(a) => {
                required(&a.data, "data")?;
                if a.model.as_ref().map_or(true, Vec::is_empty) {
                    return Err(usage("missing required flag --model"));
                }
                Ok(())
            }
            Resolved::SearchSpace(a) => required(&a.triples, "triples").map(drop),
            Resolved::MetaqaStats(a) => required(&a.kb, "kb").map(drop),
            Resolved::GenData(_) | Resolved::Ablate(_) => Ok(()),
        }
    }

    fn input_files(&self) -> anyhow::Result<Vec<PathBuf>> {
        let split_files = |dir: &Path| Split::ALL.iter().map(|s| dir.join(s.file_name())).collect::<Vec<_>>();
        let model_files = |dir: &Path| vec![dir.join(CHECKPOINT_FILE), dir.join(CONFIG_FILE)];
        let mut files = match self {
            Resolved::GenData(_) | Resolved::Ablate(_) => Vec::new(),
            Resolved::Train(a) => split_files(a.data.as_ref().unwrap()),
            Resolved::Eval(a) => [split_files(a.data.as_ref().unwrap()), model_files(a.model.as_ref().unwrap())].concat(),
            Resolved::Entropy(a) => {
                let mut f = split_files(a.data.as_ref().unwrap());
                for m in a.model.as_ref().unwrap() {
                    f.extend(model_files(m));
                }
                f
            }
            Resolved::SearchSpace(a) => vec![a.triples.clone().unwrap()],
            Resolved::MetaqaStats(a) => {
                let mut f = vec![a.kb.clone().unwrap()];
                for q in a.qa.as_ref().unwrap() {
                    f.push(parse_qa(q)?.1);
                }
                f
            }
        };
        files.retain(|p| p.exists());
        Ok(files)
    }
}

/// Writes the manifest, runs the command and records output hashes.
pub fn execute(resolved: &Resolved, config_path: Option<PathBuf>) -> anyhow::Result<()> {
    let out = resolved.clone().out_mut().clone().expect("output directory resolved");
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = RunManifest {
        command: resolved.name().to_owned(),
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        config_path,
        config: serde_json::to_value(resolved)?["config"].clone(),
        seed: resolved.seed(),
        output_dir: out.clone(),
        inputs: hash_inputs(&resolved.input_files()?)?,
        outputs: Default::default(),
        started_unix: now_unix(),
        finished_unix: None,
    };
    manifest.write(&out)?;
    match resolved {
        Resolved::GenData(a) => gen_data(a, &out)?,
        Resolved::Train(a) => train(a, &out)?,
        Resolved::Eval(a) => eval(a, &out)?,
        Resolved::Ablate(a) => ablate(a, &out)?,
        Resolved::Entropy(a) => entropy(a, &out)?,
        Resolved::SearchSpace(a) => search_space_cmd(a, &out)?,
        Resolved::MetaqaStats(a) => metaqa_stats(a, &out)?,
    }
    manifest.outputs = hash_outputs(&out)?;
    manifest.finished_unix = Some(now_unix());
    manifest.write(&out)?;
    println!("outputs written to {}", out.display());
    Ok(())
}

/// Re-runs a recorded command, refusing if any input file changed since.
pub fn replay(manifest_path: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let manifest = RunManifest::read(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let value = serde_json::json!({ "command": manifest.command, "config": manifest.config });
    let mut resolved: Resolved =
        serde_json::from_value(value).map_err(|e| MismatchError(format!("manifest does not describe a command: {e}")))?;
    for (path, hash) in &manifest.inputs {
        let now = crate::util::file_hash(Path::new(path)).map_err(|e| MismatchError(format!("input {path}: {e}")))?;
        if &now != hash {
            return Err(MismatchError(format!("input {path} changed since the recorded run")).into());
        }
    }
    if let Some(out) = out {
        *resolved.out_mut() = Some(out);
    }
    execute(&resolved, manifest.config_path)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(a: &GenDataArgs, out: &Path) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        num_entities: a.entities.unwrap(),
        avg_out_degree: a.degree.unwrap(),
        num_relations: a.relations.unwrap(),
        hop_count: a.hops.unwrap(),
        num_examples: a.count.unwrap(),
        seed: a.seed.unwrap(),
        examples_per_graph: a.examples_per_graph.unwrap(),
    };
    let splits = gen_khop_dataset(&spec)?;
    splits.write_dir(out)?;
    write_json(&out.join("spec.json"), &spec)?;
    println!(
        "{} graphs of {} entities and {} edges; every answer set re-verified against the oracle",
        spec.graph_count(),
        spec.num_entities,
        spec.edge_count()
    );
    for d in splits.iter() {
        let mean = d.examples.iter().map(|e| e.answers.len()).sum::<usize>() as f64 / d.len().max(1) as f64;
        println!("{:>5}: {} examples, mean answers {}", d.split, d.len(), sig4(mean));
    }
    Ok(())
}

fn print_metrics(m: &MetricsRecord) {
    println!(
        "{}: hits@1 {}  hits@10 {}  set_f1 {}  loss {}",
        m.split,
        sig4(m.hits_at_1),
        sig4(m.hits_at_10),
        sig4(m.set_f1),
        sig4(m.loss)
    );
}

fn write_metrics_csv(path: &Path, records: &[&MetricsRecord]) -> anyhow::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "split,epoch,hits_at_1,hits_at_10,set_f1,loss")?;
    for m in records {
        writeln!(w, "{},{},{},{},{},{}", m.split, m.epoch, m.hits_at_1, m.hits_at_10, m.set_f1, m.loss)?;
    }
    w.flush()?;
    Ok(())
}

fn load_splits(dir: &Path) -> anyhow::Result<DatasetSplits> {
    DatasetSplits::read_dir(dir).with_context(|| format!("reading dataset {}", dir.display()))
}

fn train(a: &TrainArgs, out: &Path) -> anyhow::Result<()> {
    let data = load_splits(a.data.as_ref().unwrap())?;
    let relations = data
        .num_relations()
        .ok_or_else(|| MismatchError("dataset splits disagree on the relation count".into()))?;
    let template = a.model.template();
    let cfg: ModelConfig = template.config(a.layers.unwrap(), relations, data.max_entities(), a.variant.unwrap());
    let seed = a.seed.unwrap();
    let model = RasaModel::new(cfg, seed)?;
    println!("{} parameters", model.config().parameter_count());
    let tcfg = a.optim.config(seed);
    let (model, history) = train_with(model, &data, &tcfg, |e| {
        println!(
            "epoch {:>3}  train loss {}  dev hits@1 {}  dev loss {}",
            e.epoch,
            sig4(e.train_loss),
            sig4(e.dev.hits_at_1),
            sig4(e.dev.loss)
        );
    })?;
    println!("best epoch {}", history.best_epoch);
    model.save(out)?;
    let mut w = create(&out.join("history.csv"))?;
    history.write_csv(&mut w)?;
    w.flush()?;
    let dev = history.best().dev.clone();
    print_metrics(&dev);
    let mut records = vec![dev];
    if !data.test.is_empty() {
        let test = evaluate(&model, &data.test, history.best_epoch)?;
        print_metrics(&test);
        records.push(test);
    }
    write_metrics_csv(&out.join("metrics.csv"), &records.iter().collect::<Vec<_>>())?;
    write_json(&out.join("metrics.json"), &records)
}

fn load_model(dir: &Path) -> anyhow::Result<RasaModel> {
    RasaModel::load(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn eval(a: &EvalArgs, out: &Path) -> anyhow::Result<()> {
    let data = load_splits(a.data.as_ref().unwrap())?;
    let model = load_model(a.model.as_ref().unwrap())?;
    let split = data.get(a.split.unwrap());
    let m = evaluate(&model, split, 0)?;
    print_metrics(&m);
    write_metrics_csv(&out.join("metrics.csv"), &[&m])?;
    write_json(&out.join("metrics.json"), &m)
}

fn ablation_config(a: &AblateArgs) -> AblationConfig {
    AblationConfig {
        base_spec: SyntheticSpec {
            num_entities: a.entities.unwrap(),
            avg_out_degree: a.degree.unwrap(),
            num_relations: a.relations.unwrap(),
            hop_count: 1,
            num_examples: a.count.unwrap(),
            seed: 0,
            examples_per_graph: a.examples_per_graph.unwrap(),
        },
        model: a.model.template(),
        train: a.optim.config(0),
        layer_values: a.layers_list.clone().unwrap(),
        hop_values: a.hops_list.clone().unwrap(),
        variants: a.variants.clone().unwrap(),
        seeds: a.seeds.clone().unwrap(),
    }
}

fn ablate(a: &AblateArgs, out: &Path) -> anyhow::Result<()> {
    let cfg = ablation_config(a);
    let cells = ablation_cells(&cfg);
    if cells.is_empty() {
        return Err(usage("ablation grid has an empty axis"));
    }
    let save = a.save_models.unwrap();
    let run = |cell| -> anyhow::Result<AblationRow> {
        let (row, model, _) = train_cell(&cfg, cell)?;
        if save {
            let name = format!("k{}_L{}_{}_s{}", cell.hops, cell.layers, cell.variant, cell.seed);
            model.save(&out.join("models").join(name))?;
        }
        println!(
            "k={} L={} {:<5} seed {}: test hits@1 {} (chance {}), best epoch {}",
            row.hops,
            row.layers,
            row.variant,
            row.seed,
            sig4(row.test_hits_at_1),
            sig4(row.chance_hits_at_1),
            row.best_epoch
        );
        Ok(row)
    };
    let jobs = a.jobs.unwrap();
    let rows = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
        pool.install(|| cells.par_iter().map(|&c| run(c)).collect::<anyhow::Result<Vec<_>>>())?
    } else {
        cells.iter().map(|&c| run(c)).collect::<anyhow::Result<Vec<_>>>()?
    };
    let report = AblationReport { rows };
    let mut w = create(&out.join("ablation.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;

    let mut w = create(&out.join("summary.csv"))?;
    writeln!(w, "hops,layers,variant,seeds,median_test_hits_at_1,median_chance_hits_at_1")?;
    println!("median test hits@1 over seeds:");
    for &hops in &cfg.hop_values {
        for &layers in &cfg.layer_values {
            for &variant in &cfg.variants {
                let hits = report.median_hits(hops, layers, variant).unwrap();
                let chance = report.median_chance(hops, layers, variant).unwrap();
                writeln!(w, "{hops},{layers},{variant},{},{hits},{chance}", cfg.seeds.len())?;
                println!("  k={hops} L={layers} {variant:<5} {}  (chance {})", sig4(hits), sig4(chance));
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn entropy(a: &EntropyArgs, out: &Path) -> anyhow::Result<()> {
    let data = load_splits(a.data.as_ref().unwrap())?;
    let split = data.get(a.split.unwrap());
    let mut table = create(&out.join("entropy.csv"))?;
    writeln!(table, "model,variant,layer,entropy_nats,normalized,n")?;
    let mut labels: Vec<String> = Vec::new();
    for dir in a.model.as_ref().unwrap() {
        let model = load_model(dir)?;
        let variant = model.config().variant;
        let mut label = variant.to_string();
        if labels.contains(&label) {
            label = format!("{variant}_{}", labels.len());
        }
        labels.push(label.clone());
        let (report, per_example) = entropy_report(&model, split)?;
        let mut w = create(&out.join(format!("entropy_{label}.csv")))?;
        report.write_csv(&mut w)?;
        w.flush()?;
        let ln_n = (report.n as f64).ln();
        for (l, h) in report.per_layer_nats.iter().enumerate() {
            let norm = if report.n > 1 { h / ln_n } else { 0.0 };
            writeln!(table, "{label},{variant},L{l},{h},{norm},{}", report.n)?;
        }
        writeln!(table, "{label},{variant},mean,{},{},{}", report.mean_nats(), report.normalized, report.n)?;
        println!(
            "{label}: mean entropy {} nats, normalized {} over {} examples",
            sig4(report.mean_nats()),
            sig4(report.normalized),
            per_example.len()
        );
        if variant == Variant::Rasa {
            let over = support_bound_violations(&model, split, &per_example);
            println!("{label}: {over} examples exceed the ln(max degree + 1) / ln(n) support bound");
        }
    }
    table.flush()?;
    Ok(())
}

/// Examples whose normalized entropy exceeds `ln(max row support) / ln(n)`.
pub fn support_bound_violations(model: &RasaModel, data: &rasa_core::data::Dataset, reports: &[EntropyReport]) -> usize {
    data.examples
        .iter()
        .zip(reports)
        .filter(|(ex, r)| {
            let inputs = model.graph_inputs(&data.graphs[&ex.graph_id]);
            let bound = if inputs.n > 1 { (inputs.mask.max_degree() as f64).ln() / (inputs.n as f64).ln() } else { 0.0 };
            r.normalized > bound + 1e-12
        })
        .count()
}

fn search_space_cmd(a: &SearchSpaceArgs, out: &Path) -> anyhow::Result<()> {
    let delimiter = parse_delimiter(a.delimiter.as_deref().unwrap())?;
    let loaded = load_triples(a.triples.as_ref().unwrap(), delimiter, true)?;
    let report = search_space(&loaded.graph);
    println!("entities n = {}, edges m = {}", report.n, report.m);
    println!("standard attention: 2^{} patterns", report.standard_log2_patterns);
    println!("relation-aware:     2^{} patterns ({} with self-loops)", report.rasa_log2_patterns, report.rasa_with_self_log2_patterns);
    write_json(&out.join("search_space.json"), &report)
}

fn parse_qa(spec: &str) -> anyhow::Result<(usize, PathBuf)> {
    let (hop, path) = spec.split_once('=').ok_or_else(|| usage(format!("--qa expects HOP=PATH, got {spec:?}")))?;
    let hop = hop.trim().parse().map_err(|_| usage(format!("--qa hop must be 1, 2 or 3, got {hop:?}")))?;
    Ok((hop, PathBuf::from(path)))
}

#[derive(Serialize)]
struct QuestionStats {
    hop: usize,
    path: String,
    questions: usize,
    unknown_entities: usize,
}

#[derive(Serialize)]
struct MetaqaStats {
    entities: usize,
    edges: usize,
    relations: usize,
    duplicate_triples_skipped: usize,
    reverse_relations_added: bool,
    question_files: Vec<QuestionStats>,
}

fn metaqa_stats(a: &MetaqaStatsArgs, out: &Path) -> anyhow::Result<()> {
    let delimiter = parse_delimiter(a.delimiter.as_deref().unwrap())?;
    let kb = load_metaqa_kb(a.kb.as_ref().unwrap(), delimiter, a.reverse.unwrap())?;
    let stats_kb = (kb.graph.num_entities(), kb.graph.num_edges(), kb.graph.num_relations());
    println!("entities {}  edges {}  relations {}", stats_kb.0, stats_kb.1, stats_kb.2);
    if kb.duplicates_skipped > 0 {
        println!("{} duplicate triples skipped", kb.duplicates_skipped);
    }
    let mut question_files = Vec::new();
    for spec in a.qa.as_ref().unwrap() {
        let (hop, path) = parse_qa(spec)?;
        let qs = load_metaqa_questions(&path, hop)?;
        let unknown = qs.unknown_entities(&kb).len();
        println!("{hop}-hop {}: {} questions, {unknown} unresolved entity mentions", path.display(), qs.len());
        question_files.push(QuestionStats {
            hop,
            path: path.display().to_string(),
            questions: qs.len(),
            unknown_entities: unknown,
        });
    }
    write_json(
        &out.join("metaqa_stats.json"),
        &MetaqaStats {
            entities: stats_kb.0,
            edges: stats_kb.1,
            relations: stats_kb.2,
            duplicate_triples_skipped: kb.duplicates_skipped,
            reverse_relations_added: a.reverse.unwrap(),
            question_files,
        },
    )
}
