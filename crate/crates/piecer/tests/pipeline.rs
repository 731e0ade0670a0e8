//! End-to-end library pipeline: generate data, pre-train embeddings, save
//! and reload them, train briefly, checkpoint, and evaluate identically.

use piecer::checkpoint::{load_mrc, save_mrc};
use piecer::dataset::{MrcExample, Vocab};
use piecer::kge::{load_table, save_table, train_kge, KgeConfig};
use piecer::model::PiecerConfig;
use piecer::mrc::{build_graphs, evaluate, train, MrcConfig, MrcModel, TrainConfig};
use piecer::params::ParamStore;
use piecer::rng::Rng;
use piecer::synth::{gen_synthetic, SynthMode, SynthSpec};
use piecer::tensor::Tensor;
use piecer::text::Annotator;
use piecer::ComputeGraph;

#[test]
fn reloaded_table_is_usable_by_injection_and_identical() {
    let spec = SynthSpec {
        mode: SynthMode::KnowledgeHop,
        seed: 5,
        train_examples: 8,
        dev_examples: 2,
        ..SynthSpec::default()
    };
    let out = gen_synthetic(&spec).unwrap();
    let trained =
        train_kge(&out.kg, &KgeConfig { dim: 8, epochs: 20, ..KgeConfig::toy() }).unwrap();
    let mut bytes = Vec::new();
    save_table(&trained.table, &mut bytes).unwrap();
    let reloaded = load_table(bytes.as_slice()).unwrap();

    let ann = Annotator::default();
    let ex: MrcExample = out.train[0].clone().into_example(&ann).unwrap();
    let tokens: Vec<piecer::Token> =
        ex.query_tokens.iter().chain(&ex.passage_tokens).cloned().collect();
    let config = PiecerConfig {
        layers: 1,
        heads: 2,
        hidden_dim: 8,
        knowledge_dim: 8,
        dropout: 0.0,
        ..PiecerConfig::default()
    };
    let mut store = ParamStore::new();
    let model =
        piecer::model::PiecerModel::new(&mut store, "p", config, &mut Rng::new(2)).unwrap();
    let n = tokens.len();
    let reps = Tensor::matrix(n, 8, (0..n * 8).map(|i| 0.01 * i as f64).collect()).unwrap();

    let inject = |table: &piecer::EntityEmbeddingTable| -> Vec<f64> {
        let mut g = ComputeGraph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(reps.clone());
        let out_id = model.inject_knowledge(&mut g, &bound, x, &tokens, &out.kg, table).unwrap();
        g.value(out_id).values().to_vec()
    };
    assert_eq!(inject(&trained.table), inject(&reloaded));
}

#[test]
fn train_checkpoint_eval_roundtrip() {
    let spec = SynthSpec {
        mode: SynthMode::KnowledgeHop,
        seed: 19,
        train_examples: 16,
        dev_examples: 6,
        ..SynthSpec::default()
    };
    let out = gen_synthetic(&spec).unwrap();
    let ann = Annotator::default();
    let train_set: Vec<MrcExample> =
        out.train.iter().map(|r| r.clone().into_example(&ann).unwrap()).collect();
    let dev_set: Vec<MrcExample> =
        out.dev.iter().map(|r| r.clone().into_example(&ann).unwrap()).collect();
    let table =
        train_kge(&out.kg, &KgeConfig { dim: 8, epochs: 20, ..KgeConfig::toy() }).unwrap().table;
    let vocab = Vocab::build(train_set.iter());
    let config = MrcConfig {
        hidden: 16,
        heads: 2,
        encoder_layers: 1,
        max_len: 32,
        dropout: 0.1,
        plug_after_embedding: Some(PiecerConfig {
            layers: 1,
            heads: 2,
            hidden_dim: 16,
            knowledge_dim: 8,
            ..PiecerConfig::default()
        }),
        ..MrcConfig::default()
    };
    let mut model = MrcModel::new(config, vocab, 7).unwrap();
    let tcfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        peak_lr: 1e-3,
        ema_decay: 0.9,
        seed: 7,
        ..TrainConfig::default()
    };
    train(&mut model, &train_set, &dev_set, &out.kg, Some(&table), &tcfg).unwrap();

    let graphs = build_graphs(&dev_set, &out.kg);
    let direct = evaluate(&model, &dev_set, &graphs, &out.kg, Some(&table)).unwrap();
    let reloaded = load_mrc(&save_mrc(&model)).unwrap();
    let roundtrip = evaluate(&reloaded, &dev_set, &graphs, &out.kg, Some(&table)).unwrap();
    assert_eq!(direct, roundtrip);
}
