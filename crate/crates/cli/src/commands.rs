//! Command implementations. Every artifact embeds the effective config in a
//! header so a run is reproducible from its outputs alone; all outputs are
//! pure functions of (config, input files, seed).

use crate::config::*;
use crate::CliError;
use piecer::dataset::{self, MrcExample};
use piecer::jointgraph::{GraphDump, JointGraph};
use piecer::kg::KnowledgeGraph;
use piecer::kge::{self, EntityEmbeddingTable};
use piecer::metrics;
use piecer::model::submodule_gradchecks;
use piecer::mrc::{self, MrcModel};
use piecer::synth::{self, SynthMode};
use piecer::text::{Annotator, Segment};
use serde::Serialize;
use serde_json::json;
use std::path::Path;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_artifact(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(runtime)?;
        }
    }
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_artifact(path, &text)
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph, CliError> {
    KnowledgeGraph::load_triples_path(path)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_table_if(path: &Option<std::path::PathBuf>) -> Result<Option<EntityEmbeddingTable>, CliError> {
    match path {
        None => Ok(None),
        Some(p) => kge::load_table_path(p)
            .map(Some)
            .map_err(|e| runtime(format!("{}: {e}", p.display()))),
    }
}

fn load_examples(path: &Path) -> Result<Vec<MrcExample>, CliError> {
    dataset::load_examples_path(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn pretrain_kge(cfg: PretrainKgeConfig, effective: serde_json::Value) -> Result<(), CliError> {
    let graph = load_graph(&cfg.triples)?;
    if graph.is_empty() {
        eprintln!("warning: {} holds no triples; nothing to train on", cfg.triples.display());
    }
    let trained = kge::train_kge(&graph, &cfg.kge).map_err(runtime)?;
    if let Some(parent) = cfg.output_table.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(runtime)?;
        }
    }
    kge::save_table_path(&trained.table, &cfg.output_table).map_err(runtime)?;
    let link = kge::eval_link_prediction(&trained.table, &graph).map_err(runtime)?;
    let losses = &trained.epoch_losses;
    let report = json!({
        "version": CONFIG_VERSION,
        "command": "pretrain-kge",
        "config": effective,
        "entities": graph.entity_count(),
        "relations": graph.relation_count(),
        "triples": graph.triple_count(),
        "link_prediction": link,
        "first_epoch_loss": losses.first(),
        "last_epoch_loss": losses.last(),
    });
    write_json(&cfg.report, &report)?;
    println!(
        "pretrained {:?} for {} epochs: mean rank {:.3}, hits@1 {:.3}, hits@3 {:.3}",
        cfg.kge.method, cfg.kge.epochs, link.mean_rank, link.hits_at_1, link.hits_at_3
    );
    Ok(())
}

pub fn build_graph(cfg: BuildGraphConfig, effective: serde_json::Value) -> Result<(), CliError> {
    let kg = load_graph(&cfg.triples)?;
    let ann = Annotator::default();
    let query = ann.annotate(&cfg.query, Segment::Query);
    let passage = ann.annotate(&cfg.passage, Segment::Passage);
    let graph = JointGraph::build(&query, &passage, &kg);
    let dump = GraphDump::new(&query, &passage, &graph);
    let artifact = json!({
        "version": CONFIG_VERSION,
        "command": "build-graph",
        "config": effective,
        "nodes": dump.nodes,
        "edges": dump.edges,
    });
    write_json(&cfg.output, &artifact)?;
    println!(
        "joint graph: {} nodes, {} directed edge records",
        graph.node_count(),
        graph.edges().count()
    );
    Ok(())
}

pub fn gen_data(cfg: GenDataConfig, effective: serde_json::Value) -> Result<(), CliError> {
    let out = synth::gen_synthetic(&cfg.synth).map_err(runtime)?;
    if cfg.synth.mode == SynthMode::KnowledgeHop {
        synth::verify_knowledge_hop(&out)
            .map_err(|e| runtime(format!("generated data failed its property check: {e}")))?;
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(runtime)?;
    let mut train_text = Vec::new();
    dataset::save_records(&out.train, &mut train_text).map_err(runtime)?;
    write_artifact(&cfg.output_dir.join("train.jsonl"), &String::from_utf8(train_text).unwrap())?;
    let mut dev_text = Vec::new();
    dataset::save_records(&out.dev, &mut dev_text).map_err(runtime)?;
    write_artifact(&cfg.output_dir.join("dev.jsonl"), &String::from_utf8(dev_text).unwrap())?;

    // Companion KG as a triple file, reloadable by every other command.
    let mut triples = String::new();
    for &(h, r, t) in out.kg.triples() {
        triples.push_str(&format!(
            "{}\t{}\t{}\n",
            out.kg.entity_name(h).unwrap(),
            out.kg.relation_names()[r as usize],
            out.kg.entity_name(t).unwrap()
        ));
    }
    write_artifact(&cfg.output_dir.join("graph.tsv"), &triples)?;

    let meta = json!({
        "version": CONFIG_VERSION,
        "command": "gen-data",
        "config": effective,
        "train_examples": out.train.len(),
        "dev_examples": out.dev.len(),
        "kg_entities": out.kg.entity_count(),
        "kg_triples": out.kg.triple_count(),
        "verified": cfg.synth.mode == SynthMode::KnowledgeHop,
        "provenance": out.provenance,
    });
    write_json(&cfg.output_dir.join("meta.json"), &meta)?;
    println!(
        "generated {} train / {} dev examples with a {}-triple companion KG",
        out.train.len(),
        out.dev.len(),
        out.kg.triple_count()
    );
    Ok(())
}

pub fn train(cfg: TrainCmdConfig, effective: serde_json::Value) -> Result<(), CliError> {
    let train_set = load_examples(&cfg.train_data)?;
    let dev_set = load_examples(&cfg.dev_data)?;
    let kg = load_graph(&cfg.triples)?;
    let table = load_table_if(&cfg.embedding_table)?;
    let vocab = dataset::Vocab::build(train_set.iter());
    let mut model = MrcModel::new(cfg.model.clone(), vocab, cfg.model_seed).map_err(runtime)?;
    let outcome =
        mrc::train(&mut model, &train_set, &dev_set, &kg, table.as_ref(), &cfg.training)
            .map_err(runtime)?;

    std::fs::create_dir_all(&cfg.output_dir).map_err(runtime)?;
    let mut log = String::new();
    let header = json!({
        "type": "header",
        "version": CONFIG_VERSION,
        "command": "train",
        "config": effective,
    });
    log.push_str(&serde_json::to_string(&header).map_err(runtime)?);
    log.push('\n');
    for m in &outcome.metrics {
        let line = json!({
            "type": "epoch",
            "epoch": m.epoch,
            "train_loss": m.train_loss,
            "dev_em": m.dev_em,
            "dev_f1": m.dev_f1,
            "best": m.best,
        });
        log.push_str(&serde_json::to_string(&line).map_err(runtime)?);
        log.push('\n');
    }
    let summary = json!({
        "type": "summary",
        "best_epoch": outcome.best_epoch,
        "best_dev_f1": outcome.best_dev_f1,
    });
    log.push_str(&serde_json::to_string(&summary).map_err(runtime)?);
    log.push('\n');
    write_artifact(&cfg.output_dir.join("metrics.jsonl"), &log)?;
    write_artifact(
        &cfg.output_dir.join("checkpoint.json"),
        &piecer::checkpoint::save_mrc(&model),
    )?;
    println!(
        "trained {} epochs; best dev F1 {:.3} at epoch {}",
        outcome.metrics.len(),
        outcome.best_dev_f1,
        outcome.best_epoch
    );
    Ok(())
}

pub fn eval(cfg: EvalCmdConfig, effective: serde_json::Value) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&cfg.checkpoint)
        .map_err(|e| runtime(format!("{}: {e}", cfg.checkpoint.display())))?;
    let model = piecer::checkpoint::load_mrc(&text).map_err(runtime)?;
    let examples = load_examples(&cfg.data)?;
    let kg = load_graph(&cfg.triples)?;
    let table = load_table_if(&cfg.embedding_table)?;
    let graphs = mrc::build_graphs(&examples, &kg);
    let per = mrc::per_example_metrics(&model, &model.store, &examples, &graphs, &kg, table.as_ref())
        .map_err(runtime)?;
    let (em, f1) = metrics::aggregate(&per);
    let per_example: Vec<serde_json::Value> = examples
        .iter()
        .zip(&per)
        .map(|(ex, (e, f))| json!({"id": ex.id, "em": e, "f1": f}))
        .collect();
    let report = json!({
        "version": CONFIG_VERSION,
        "command": "eval",
        "config": effective,
        "examples": examples.len(),
        "em": em,
        "f1": f1,
        "per_example": per_example,
    });
    write_json(&cfg.report, &report)?;
    println!("EM {em:.4} F1 {f1:.4} over {} examples", examples.len());
    Ok(())
}

/// Exit code 0 when every submodule passes at `tolerance`, 3 otherwise.
pub fn gradcheck(
    tolerance: f64,
    seed: u64,
    report: Option<&Path>,
) -> Result<i32, CliError> {
    let results = submodule_gradchecks(seed).map_err(runtime)?;
    let mut failed = false;
    println!("{:<18} {:>14}  status", "submodule", "max rel error");
    for (name, err) in &results {
        let ok = *err < tolerance;
        failed |= !ok;
        println!("{name:<18} {err:>14.3e}  {}", if ok { "pass" } else { "FAIL" });
    }
    if let Some(path) = report {
        let rows: Vec<serde_json::Value> = results
            .iter()
            .map(|(name, err)| json!({"submodule": name, "max_rel_error": err, "pass": *err < tolerance}))
            .collect();
        let artifact = json!({
            "version": CONFIG_VERSION,
            "command": "gradcheck",
            "tolerance": tolerance,
            "seed": seed,
            "results": rows,
        });
        write_json(path, &artifact)?;
    }
    Ok(if failed { 3 } else { 0 })
}
