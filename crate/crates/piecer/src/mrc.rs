//! A small extractive MRC model demonstrating the plug contract: token
//! embeddings + learned positions, a shallow self-attention encoder over
//! `query <sep> passage`, and linear start/end span scorers. PIECER
//! instances can be plugged after the embedding layer and/or before the
//! prediction layer; each plug position has its own parameters.

use crate::autodiff::{ComputeGraph, NodeId};
use crate::dataset::{MrcExample, Vocab, SEP_ID};
use crate::jointgraph::JointGraph;
use crate::kg::KnowledgeGraph;
use crate::kge::EntityEmbeddingTable;
use crate::metrics;
use crate::model::{maybe_dropout, AttnBlockParams, PiecerConfig, PiecerModel};
use crate::optim::{adamw_step, AdamwConfig, EmaState, OptimizerState};
use crate::params::{xavier, BoundParams, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{contract_error, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MrcError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("candidate list must be non-empty in candidate decoding mode")]
    EmptyCandidates,
    #[error("example {id} has no candidate matching a gold answer")]
    NoGoldCandidate { id: String },
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MrcConfig {
    pub hidden: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub max_len: usize,
    pub dropout: f64,
    /// Longest span considered by free decoding.
    pub max_span_len: usize,
    pub plug_after_embedding: Option<PiecerConfig>,
    pub plug_before_prediction: Option<PiecerConfig>,
}

impl Default for MrcConfig {
    fn default() -> Self {
        MrcConfig {
            hidden: 64,
            heads: 4,
            encoder_layers: 2,
            max_len: 64,
            dropout: 0.1,
            max_span_len: 8,
            plug_after_embedding: None,
            plug_before_prediction: None,
        }
    }
}

impl MrcConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.hidden == 0 || self.heads == 0 || self.encoder_layers == 0 || self.max_len == 0 {
            return Err(contract_error("MRC dimensions must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return Err(contract_error(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        for plug in [&self.plug_after_embedding, &self.plug_before_prediction].into_iter().flatten()
        {
            plug.validate()?;
            if plug.hidden_dim != self.hidden {
                return Err(contract_error(format!(
                    "plug hidden dimension {} does not match encoder hidden {}",
                    plug.hidden_dim, self.hidden
                )));
            }
        }
        Ok(())
    }
}

pub struct MrcModel {
    pub config: MrcConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    embed: ParamId,
    positions: ParamId,
    encoder: Vec<AttnBlockParams>,
    start_w: ParamId,
    start_b: ParamId,
    end_w: ParamId,
    end_b: ParamId,
    pub piecer_after_embedding: Option<PiecerModel>,
    pub piecer_before_prediction: Option<PiecerModel>,
}

impl MrcModel {
    pub fn new(config: MrcConfig, vocab: Vocab, seed: u64) -> Result<Self, TensorError> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let embed = store.add("embed", xavier(&mut rng, vocab.len(), h));
        let positions = store.add("positions", xavier(&mut rng, config.max_len, h));
        let encoder = (0..config.encoder_layers)
            .map(|l| AttnBlockParams::new(&mut store, &format!("encoder{l}"), h, &mut rng))
            .collect();
        let start_w = store.add("span.start_w", xavier(&mut rng, h, 1));
        let start_b = store.add("span.start_b", Tensor::zeros(1, 1));
        let end_w = store.add("span.end_w", xavier(&mut rng, h, 1));
        let end_b = store.add("span.end_b", Tensor::zeros(1, 1));
        let piecer_after_embedding = match &config.plug_after_embedding {
            Some(cfg) => Some(PiecerModel::new(&mut store, "plug_ae", cfg.clone(), &mut rng)?),
            None => None,
        };
        let piecer_before_prediction = match &config.plug_before_prediction {
            Some(cfg) => Some(PiecerModel::new(&mut store, "plug_bp", cfg.clone(), &mut rng)?),
            None => None,
        };
        Ok(MrcModel {
            config,
            vocab,
            store,
            embed,
            positions,
            encoder,
            start_w,
            start_b,
            end_w,
            end_b,
            piecer_after_embedding,
            piecer_before_prediction,
        })
    }

    fn token_ids(&self, example: &MrcExample) -> Vec<usize> {
        let mut ids = Vec::with_capacity(example.query_tokens.len() + 1 + example.passage_len());
        for t in &example.query_tokens {
            ids.push(self.vocab.id_of(&t.surface) as usize);
        }
        ids.push(SEP_ID as usize);
        for t in &example.passage_tokens {
            ids.push(self.vocab.id_of(&t.surface) as usize);
        }
        ids
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_plug(
        &self,
        plug: &PiecerModel,
        g: &mut ComputeGraph,
        bound: &BoundParams,
        seq: NodeId,
        example: &MrcExample,
        graph: &JointGraph,
        kg: &KnowledgeGraph,
        table: Option<&EntityEmbeddingTable>,
        train: bool,
        rng: &mut Rng,
    ) -> Result<NodeId, TensorError> {
        let m = example.query_tokens.len();
        let n = example.passage_len();
        let s = m + 1 + n;
        let query = g.slice_rows(seq, 0, m)?;
        let sep = g.slice_rows(seq, m, m + 1)?;
        let passage = g.slice_rows(seq, m + 1, s)?;
        let joint = g.concat_rows(query, passage)?;
        let tokens: Vec<crate::text::Token> = example
            .query_tokens
            .iter()
            .chain(&example.passage_tokens)
            .cloned()
            .collect();
        let out = plug.forward(g, bound, joint, &tokens, graph, kg, table, train, rng)?;
        if out == joint {
            // Fully disabled plug: reassembly would be a no-op, so keep the
            // original sequence node for exact identity.
            return Ok(seq);
        }
        let query_out = g.slice_rows(out, 0, m)?;
        let passage_out = g.slice_rows(out, m, m + n)?;
        let with_sep = g.concat_rows(query_out, sep)?;
        g.concat_rows(with_sep, passage_out)
    }

    /// Builds start/end scores (`[N x 1]` each) for one example inside an
    /// existing graph.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_in(
        &self,
        g: &mut ComputeGraph,
        bound: &BoundParams,
        example: &MrcExample,
        graph: &JointGraph,
        kg: &KnowledgeGraph,
        table: Option<&EntityEmbeddingTable>,
        train: bool,
        rng: &mut Rng,
    ) -> Result<(NodeId, NodeId), TensorError> {
        let m = example.query_tokens.len();
        let n = example.passage_len();
        let s = m + 1 + n;
        if s > self.config.max_len {
            return Err(contract_error(format!(
                "sequence length {s} exceeds max_len {}",
                self.config.max_len
            )));
        }
        let ids = self.token_ids(example);
        let mut seq = g.gather_rows(bound.node(self.embed), ids)?;
        let pos = g.slice_rows(bound.node(self.positions), 0, s)?;
        seq = g.add(seq, pos)?;
        seq = maybe_dropout(g, seq, self.config.dropout, train, rng)?;
        if let Some(plug) = &self.piecer_after_embedding {
            seq = self.apply_plug(plug, g, bound, seq, example, graph, kg, table, train, rng)?;
        }
        for block in &self.encoder {
            seq = block.forward(g, bound, seq, self.config.heads, self.config.dropout, train, rng)?;
        }
        if let Some(plug) = &self.piecer_before_prediction {
            seq = self.apply_plug(plug, g, bound, seq, example, graph, kg, table, train, rng)?;
        }
        let passage = g.slice_rows(seq, m + 1, s)?;
        let start_raw = g.matmul(passage, bound.node(self.start_w))?;
        let start = g.add(start_raw, bound.node(self.start_b))?;
        let end_raw = g.matmul(passage, bound.node(self.end_w))?;
        let end = g.add(end_raw, bound.node(self.end_b))?;
        Ok((start, end))
    }

    /// Evaluation-mode scores using an explicit parameter store (e.g. the
    /// EMA shadow); the store must mirror `self.store`'s layout.
    pub fn score_with(
        &self,
        store: &ParamStore,
        example: &MrcExample,
        graph: &JointGraph,
        kg: &KnowledgeGraph,
        table: Option<&EntityEmbeddingTable>,
    ) -> Result<(Vec<f64>, Vec<f64>), TensorError> {
        let mut g = ComputeGraph::new();
        let bound = store.bind(&mut g);
        let mut rng = Rng::new(0);
        let (start, end) =
            self.forward_in(&mut g, &bound, example, graph, kg, table, false, &mut rng)?;
        Ok((g.value(start).values().to_vec(), g.value(end).values().to_vec()))
    }

    pub fn score(
        &self,
        example: &MrcExample,
        graph: &JointGraph,
        kg: &KnowledgeGraph,
        table: Option<&EntityEmbeddingTable>,
    ) -> Result<(Vec<f64>, Vec<f64>), TensorError> {
        self.score_with(&self.store, example, graph, kg, table)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub text: String,
}

/// Picks the best span. With candidates: argmax of `start[s] + end[t]` over
/// the candidate list. Free mode: argmax over all `s <= t` with
/// `t - s < max_span_len`. Ties break toward the smaller start, then end.
pub fn decode_span(
    start_scores: &[f64],
    end_scores: &[f64],
    candidates: Option<&[(usize, usize)]>,
    max_span_len: usize,
    example: &MrcExample,
) -> Result<SpanPrediction, MrcError> {
    let n = start_scores.len();
    let spans: Vec<(usize, usize)> = match candidates {
        Some(list) => {
            if list.is_empty() {
                return Err(MrcError::EmptyCandidates);
            }
            list.to_vec()
        }
        None => {
            let mut all = Vec::new();
            for s in 0..n {
                for t in s..n.min(s + max_span_len) {
                    all.push((s, t));
                }
            }
            all
        }
    };
    let mut best: Option<(f64, (usize, usize))> = None;
    for &(s, t) in &spans {
        let score = start_scores[s] + end_scores[t];
        let better = match best {
            None => true,
            Some((bs, bspan)) => score > bs || (score == bs && (s, t) < bspan),
        };
        if better {
            best = Some((score, (s, t)));
        }
    }
    let (score, (s, t)) = best.expect("span list is non-empty");
    Ok(SpanPrediction { start: s, end: t, score, text: example.span_text(s, t) })
}

/// Marginal span negative log-likelihood: `-ln sum_g p(start_g)` plus the
/// same for ends, summed into one scalar node.
pub fn span_loss(
    g: &mut ComputeGraph,
    start: NodeId,
    end: NodeId,
    gold_spans: &[(usize, usize)],
) -> Result<NodeId, TensorError> {
    if gold_spans.is_empty() {
        return Err(contract_error("at least one gold span required"));
    }
    let starts: Vec<usize> = dedup(gold_spans.iter().map(|&(s, _)| s).collect());
    let ends: Vec<usize> = dedup(gold_spans.iter().map(|&(_, t)| t).collect());
    let start_nll = g.marginal_nll(start, starts)?;
    let end_nll = g.marginal_nll(end, ends)?;
    g.add(start_nll, end_nll)
}

fn dedup(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub adamw: AdamwConfig,
    pub ema_decay: f64,
    /// Evaluate (and checkpoint) with EMA shadow weights instead of raw ones.
    pub eval_with_ema: bool,
    pub seed: u64,
    /// Stop once dev EM reaches this value.
    pub early_stop_dev_em: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            peak_lr: 1e-3,
            adamw: AdamwConfig::default(),
            ema_decay: 0.9999,
            eval_with_ema: true,
            seed: 0,
            early_stop_dev_em: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_em: f64,
    pub dev_f1: f64,
    pub best: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub best_dev_f1: f64,
    pub best_epoch: usize,
}

/// Joint graphs for a dataset, built once.
pub fn build_graphs(examples: &[MrcExample], kg: &KnowledgeGraph) -> Vec<JointGraph> {
    examples
        .iter()
        .map(|ex| JointGraph::build(&ex.query_tokens, &ex.passage_tokens, kg))
        .collect()
}

/// AdamW + slanted triangular schedule + EMA training loop. Evaluates the
/// dev set after every epoch and leaves the best-dev parameters (under the
/// configured evaluation weights) in the model.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut MrcModel,
    train_set: &[MrcExample],
    dev_set: &[MrcExample],
    kg: &KnowledgeGraph,
    table: Option<&EntityEmbeddingTable>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, MrcError> {
    if train_set.is_empty() {
        return Err(contract_error("training set is empty").into());
    }
    let train_graphs = build_graphs(train_set, kg);
    let dev_graphs = build_graphs(dev_set, kg);
    let gold_spans: Vec<Vec<(usize, usize)>> = train_set
        .iter()
        .map(|ex| {
            let golds = ex.gold_candidate_indices();
            if golds.is_empty() {
                return Err(MrcError::NoGoldCandidate { id: ex.id.clone() });
            }
            Ok(golds.into_iter().map(|i| ex.candidates[i]).collect())
        })
        .collect::<Result<_, _>>()?;

    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size.max(1));
    let total_steps = (cfg.epochs * batches_per_epoch) as u64;
    let mut opt = OptimizerState::new(&model.store, cfg.adamw, cfg.peak_lr, total_steps);
    let mut ema = EmaState::new(&model.store, cfg.ema_decay)?;
    let mut rng = Rng::new(cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Vec<Vec<f64>> =
        model.store.tensors().iter().map(|t| t.values().to_vec()).collect();

    for epoch in 0..cfg.epochs {
        let order = rng.permutation(train_set.len());
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut g = ComputeGraph::new();
            let bound = model.store.bind(&mut g);
            let mut batch_loss: Option<NodeId> = None;
            for &idx in batch {
                let ex = &train_set[idx];
                let (start, end) = model.forward_in(
                    &mut g,
                    &bound,
                    ex,
                    &train_graphs[idx],
                    kg,
                    table,
                    true,
                    &mut rng,
                )?;
                let loss = span_loss(&mut g, start, end, &gold_spans[idx])?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(prev) => g.add(prev, loss)?,
                });
            }
            let total = batch_loss.expect("non-empty batch");
            let mean = g.scale(total, 1.0 / batch.len() as f64)?;
            let loss_value = g.value(mean).item();
            if !loss_value.is_finite() {
                return Err(MrcError::Diverged { epoch });
            }
            epoch_loss += loss_value * batch.len() as f64;
            g.backward(mean)?;
            model.store.absorb_grads(&g, &bound);
            model.store.fill_missing_grads();
            adamw_step(&mut model.store, &mut opt)?;
            model.store.zero_grads();
            ema.update(&model.store)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;

        let eval_store =
            if cfg.eval_with_ema { ema.shadowed(&model.store)? } else { model.store.clone() };
        let (dev_em, dev_f1) = if dev_set.is_empty() {
            (0.0, 0.0)
        } else {
            evaluate_with(model, &eval_store, dev_set, &dev_graphs, kg, table)?
        };
        let improved = dev_f1 > best_f1;
        if improved {
            best_f1 = dev_f1;
            best_epoch = epoch;
            best_params = eval_store.tensors().iter().map(|t| t.values().to_vec()).collect();
        }
        metrics.push(EpochMetrics { epoch, train_loss, dev_em, dev_f1, best: improved });
        if let Some(threshold) = cfg.early_stop_dev_em {
            if dev_em >= threshold {
                break;
            }
        }
    }

    // Leave the best-dev checkpoint in the model.
    model.store = model.store.with_values(&best_params)?;
    Ok(TrainOutcome { metrics, best_dev_f1: best_f1, best_epoch })
}

/// Mean EM/F1 over a dataset with candidate-restricted decoding.
pub fn evaluate(
    model: &MrcModel,
    examples: &[MrcExample],
    graphs: &[JointGraph],
    kg: &KnowledgeGraph,
    table: Option<&EntityEmbeddingTable>,
) -> Result<(f64, f64), MrcError> {
    evaluate_with(model, &model.store, examples, graphs, kg, table)
}

fn evaluate_with(
    model: &MrcModel,
    store: &ParamStore,
    examples: &[MrcExample],
    graphs: &[JointGraph],
    kg: &KnowledgeGraph,
    table: Option<&EntityEmbeddingTable>,
) -> Result<(f64, f64), MrcError> {
    let per = per_example_metrics(model, store, examples, graphs, kg, table)?;
    Ok(metrics::aggregate(&per))
}

/// Per-example `(em, f1)` pairs with candidate-restricted decoding.
pub fn per_example_metrics(
    model: &MrcModel,
    store: &ParamStore,
    examples: &[MrcExample],
    graphs: &[JointGraph],
    kg: &KnowledgeGraph,
    table: Option<&EntityEmbeddingTable>,
) -> Result<Vec<(u8, f64)>, MrcError> {
    examples
        .iter()
        .zip(graphs)
        .map(|(ex, graph)| {
            let (start, end) = model.score_with(store, ex, graph, kg, table)?;
            let pred = decode_span(
                &start,
                &end,
                Some(&ex.candidates),
                model.config.max_span_len,
                ex,
            )?;
            Ok(metrics::em_f1(&pred.text, &ex.answers))
        })
        .collect()
}
