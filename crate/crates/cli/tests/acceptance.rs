//! Acceptance criterion 10: every CLI command rerun with an identical config
//! and seed produces byte-identical output artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn piecer(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_piecer"))
        .current_dir(workspace_root())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = piecer(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.clone(), std::fs::read(&path).unwrap());
            }
        }
    }
    assert!(!files.is_empty(), "no artifacts under {dir:?}");
    files
}

#[test]
fn criterion_10_rerun_determinism() {
    let start = std::time::Instant::now();
    let work = tempfile::tempdir().unwrap();
    let dir = work.path().to_str().unwrap().to_string();
    let set = |key: &str, value: &str| format!("{key}=\"{dir}/{value}\"");

    // gen-data: a small knowledge-hop dataset plus its companion KG.
    let gen = |out: &str| {
        run_ok(&[
            "gen-data",
            "--config",
            "configs/gen-hop.json",
            "--set",
            &set("output_dir", out),
            "--set",
            "synth.train_examples=12",
            "--set",
            "synth.dev_examples=4",
        ]);
    };
    // pretrain-kge on the generated companion graph.
    let kge = |out_prefix: &str| {
        run_ok(&[
            "pretrain-kge",
            "--config",
            "configs/kge-synth.json",
            "--set",
            &set("triples", "data/graph.tsv"),
            "--set",
            &set("output_table", &format!("{out_prefix}/kge.table")),
            "--set",
            &set("report", &format!("{out_prefix}/kge-report.json")),
            "--set",
            "kge.epochs=40",
        ]);
    };
    // build-graph against the shipped toy graph.
    let build = |out: &str| {
        run_ok(&[
            "build-graph",
            "--config",
            "configs/build-graph-demo.json",
            "--set",
            &set("output", out),
        ]);
    };
    // A tiny training run and an eval of its checkpoint.
    let train = |out: &str| {
        run_ok(&[
            "train",
            "--config",
            "configs/train-hop-full.json",
            "--set",
            &set("train_data", "data/train.jsonl"),
            "--set",
            &set("dev_data", "data/dev.jsonl"),
            "--set",
            &set("triples", "data/graph.tsv"),
            "--set",
            &set("embedding_table", "kge/kge.table"),
            "--set",
            &set("output_dir", out),
            "--set",
            "training.epochs=2",
            "--set",
            "model.hidden=16",
            "--set",
            "model.encoder_layers=1",
            "--set",
            "model.heads=2",
            "--set",
            "model.plug_after_embedding.hidden_dim=16",
            "--set",
            "model.plug_after_embedding.layers=1",
            "--set",
            "model.plug_after_embedding.heads=2",
        ]);
    };
    let eval = |out: &str| {
        run_ok(&[
            "eval",
            "--config",
            "configs/eval-hop.json",
            "--set",
            &set("checkpoint", "train/checkpoint.json"),
            "--set",
            &set("data", "data/dev.jsonl"),
            "--set",
            &set("triples", "data/graph.tsv"),
            "--set",
            &set("embedding_table", "kge/kge.table"),
            "--set",
            &set("report", out),
        ]);
    };
    let gradcheck = |out: &str| {
        run_ok(&["gradcheck", "--report", &format!("{dir}/{out}")]);
    };

    gen("data");
    kge("kge");
    build("graph.json");
    train("train");
    eval("eval.json");
    gradcheck("gradcheck.json");
    let first = snapshot(work.path());
    assert!(first.len() >= 10, "expected a full artifact set, got {:?}", first.keys());

    // Rerun every command into the same locations.
    gen("data");
    kge("kge");
    build("graph.json");
    train("train");
    eval("eval.json");
    gradcheck("gradcheck.json");
    let second = snapshot(work.path());

    assert_eq!(first.len(), second.len());
    for (path, bytes) in &first {
        let rerun = second.get(path).unwrap_or_else(|| panic!("{path:?} missing on rerun"));
        assert_eq!(bytes, rerun, "{path:?} differs between reruns");
    }
    println!(
        "criterion 10 [PASS] rerun determinism: {} artifacts byte-identical across reruns in {:?}",
        first.len(),
        start.elapsed()
    );
}
