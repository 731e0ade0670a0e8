//! The PIECER module: knowledge embedding injection, L-layer K-head Highway
//! GAT reasoning over the joint query-passage graph, and an optional
//! self-matching block. All three submodules toggle independently so a host
//! model can plug in any subset; with everything off the module is the
//! identity.

use crate::autodiff::{ComputeGraph, NeighborMask, NodeId};
use crate::jointgraph::{EdgeMask, JointGraph};
use crate::kg::KnowledgeGraph;
use crate::kge::EntityEmbeddingTable;
use crate::params::{xavier, BoundParams, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{contract_error, Tensor, TensorError};
use crate::text::Token;
use serde::{Deserialize, Serialize};

/// How a layer's candidate is folded into the previous representation.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    /// Learned elementwise sigmoid gate between input and candidate.
    Highway,
    /// Plain residual sum.
    Residual,
    /// Candidate only.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiecerConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub knowledge_dim: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub combiner: Combiner,
    pub use_injection: bool,
    pub use_reasoning: bool,
    pub use_self_matching: bool,
    pub edge_mask: EdgeMask,
    /// Scalar injection gate (one weight per token); a vector gate is kept
    /// as an experimental alternative.
    pub scalar_gate: bool,
}

impl Default for PiecerConfig {
    fn default() -> Self {
        PiecerConfig {
            layers: 3,
            heads: 4,
            hidden_dim: 64,
            knowledge_dim: 100,
            dropout: 0.1,
            leaky_slope: 0.2,
            combiner: Combiner::Highway,
            use_injection: true,
            use_reasoning: true,
            use_self_matching: true,
            edge_mask: EdgeMask::default(),
            scalar_gate: true,
        }
    }
}

impl PiecerConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.layers == 0 || self.heads == 0 {
            return Err(contract_error("layers and heads must be at least 1"));
        }
        if self.hidden_dim == 0 || self.knowledge_dim == 0 {
            return Err(contract_error("dimensions must be positive"));
        }
        if self.use_self_matching && self.hidden_dim % self.heads != 0 {
            return Err(contract_error(format!(
                "hidden dimension {} not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(contract_error(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

struct GatHead {
    w: ParamId,
    a: ParamId,
}

struct GatLayer {
    heads: Vec<GatHead>,
    highway_w: ParamId,
    highway_b: ParamId,
}

/// A residual multi-head self-attention block followed by a two-layer
/// feed-forward, shared by the self-matching submodule and host encoders.
pub struct AttnBlockParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub fc1: ParamId,
    pub b1: ParamId,
    pub fc2: ParamId,
    pub b2: ParamId,
}

impl AttnBlockParams {
    pub fn new(store: &mut ParamStore, prefix: &str, hidden: usize, rng: &mut Rng) -> Self {
        let mat = |store: &mut ParamStore, name: &str, rng: &mut Rng| {
            store.add(format!("{prefix}.{name}"), xavier(rng, hidden, hidden))
        };
        let wq = mat(store, "wq", rng);
        let wk = mat(store, "wk", rng);
        let wv = mat(store, "wv", rng);
        let wo = mat(store, "wo", rng);
        let fc1 = mat(store, "fc1", rng);
        let fc2 = mat(store, "fc2", rng);
        let bias = |store: &mut ParamStore, name: &str| {
            store.add(format!("{prefix}.{name}"), Tensor::zeros(1, hidden))
        };
        let bq = bias(store, "bq");
        let bk = bias(store, "bk");
        let bv = bias(store, "bv");
        let bo = bias(store, "bo");
        let b1 = bias(store, "b1");
        let b2 = bias(store, "b2");
        AttnBlockParams { wq, bq, wk, bk, wv, bv, wo, bo, fc1, b1, fc2, b2 }
    }

    /// `o' = SelfAttention(h) + h; out = FC2(ReLU(FC1(o'))) + o'`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut ComputeGraph,
        bound: &BoundParams,
        h: NodeId,
        heads: usize,
        dropout: f64,
        train: bool,
        rng: &mut Rng,
    ) -> Result<NodeId, TensorError> {
        let (n, hidden) = g.value(h).dims();
        if hidden % heads != 0 {
            return Err(contract_error(format!(
                "hidden {hidden} not divisible by {heads} attention heads"
            )));
        }
        let dh = hidden / heads;
        let q = self.affine(g, bound, h, self.wq, self.bq)?;
        let k = self.affine(g, bound, h, self.wk, self.bk)?;
        let v = self.affine(g, bound, h, self.wv, self.bv)?;
        let mut joined: Option<NodeId> = None;
        for head in 0..heads {
            let (lo, hi) = (head * dh, (head + 1) * dh);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            let kt = g.transpose(kh)?;
            let raw = g.matmul(qh, kt)?;
            let scores = g.scale(raw, 1.0 / (dh as f64).sqrt())?;
            let alpha = g.softmax_neighbors(scores, NeighborMask::all(n, n))?;
            g.tag(alpha, "attn.alpha");
            let alpha = maybe_dropout(g, alpha, dropout, train, rng)?;
            let out = g.matmul(alpha, vh)?;
            joined = Some(match joined {
                None => out,
                Some(prev) => g.concat_cols(prev, out)?,
            });
        }
        let concat = joined.expect("at least one head");
        let projected = self.affine(g, bound, concat, self.wo, self.bo)?;
        let o1 = g.add(projected, h)?;
        let f1 = self.affine(g, bound, o1, self.fc1, self.b1)?;
        let f1 = g.relu(f1)?;
        let f2 = self.affine(g, bound, f1, self.fc2, self.b2)?;
        g.add(f2, o1)
    }

    fn affine(
        &self,
        g: &mut ComputeGraph,
        bound: &BoundParams,
        x: NodeId,
        w: ParamId,
        b: ParamId,
    ) -> Result<NodeId, TensorError> {
        let prod = g.matmul(x, bound.node(w))?;
        g.add(prod, bound.node(b))
    }
}

/// All trainable parameters of one PIECER instance, registered in a shared
/// [`ParamStore`].
pub struct PiecerModel {
    pub config: PiecerConfig,
    gate_w: ParamId,
    gate_b: ParamId,
    knowledge_proj: ParamId,
    layers: Vec<GatLayer>,
    self_matching: AttnBlockParams,
}

impl PiecerModel {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: PiecerConfig,
        rng: &mut Rng,
    ) -> Result<Self, TensorError> {
        config.validate()?;
        let h = config.hidden_dim;
        let gate_dim = if config.scalar_gate { 1 } else { h };
        let gate_w = store.add(format!("{prefix}.inject.gate_w"), xavier(rng, 2 * h, gate_dim));
        let gate_b = store.add(format!("{prefix}.inject.gate_b"), Tensor::zeros(1, gate_dim));
        let knowledge_proj =
            store.add(format!("{prefix}.inject.proj"), xavier(rng, config.knowledge_dim, h));
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut heads = Vec::with_capacity(config.heads);
            for k in 0..config.heads {
                heads.push(GatHead {
                    w: store.add(format!("{prefix}.gat{l}.head{k}.w"), xavier(rng, h, h)),
                    a: store.add(format!("{prefix}.gat{l}.head{k}.a"), xavier(rng, 2 * h, 1)),
                });
            }
            layers.push(GatLayer {
                heads,
                highway_w: store.add(format!("{prefix}.gat{l}.highway_w"), xavier(rng, h, h)),
                highway_b: store.add(format!("{prefix}.gat{l}.highway_b"), Tensor::zeros(1, h)),
            });
        }
        let self_matching = AttnBlockParams::new(store, &format!("{prefix}.selfmatch"), h, rng);
        Ok(PiecerModel { config, gate_w, gate_b, knowledge_proj, layers, self_matching })
    }

    pub fn gate_w(&self) -> ParamId {
        self.gate_w
    }

    pub fn gate_b(&self) -> ParamId {
        self.gate_b
    }

    pub fn knowledge_proj(&self) -> ParamId {
        self.knowledge_proj
    }

    pub fn highway_params(&self, layer: usize) -> (ParamId, ParamId) {
        (self.layers[layer].highway_w, self.layers[layer].highway_b)
    }

    pub fn head_params(&self, layer: usize, head: usize) -> (ParamId, ParamId) {
        (self.layers[layer].heads[head].w, self.layers[layer].heads[head].a)
    }

    pub fn self_matching_params(&self) -> &AttnBlockParams {
        &self.self_matching
    }

    /// Gated fusion of word representations with mean lemma-matched entity
    /// embeddings, projected to the hidden size. Tokens with no match pass
    /// through exactly unchanged.
    pub fn inject_knowledge(
        &self,
        g: &mut ComputeGraph,
        bound: &BoundParams,
        reps: NodeId,
        tokens: &[Token],
        kg: &KnowledgeGraph,
        table: &EntityEmbeddingTable,
    ) -> Result<NodeId, TensorError> {
        let (n, hidden) = g.value(reps).dims();
        if n != tokens.len() {
            return Err(contract_error(format!(
                "{n} representation rows for {} tokens",
                tokens.len()
            )));
        }
        if hidden != self.config.hidden_dim {
            return Err(contract_error(format!(
                "hidden dimension {hidden} does not match configured {}",
                self.config.hidden_dim
            )));
        }
        if table.dim != self.config.knowledge_dim {
            return Err(contract_error(format!(
                "knowledge dimension {} does not match configured {}",
                table.dim, self.config.knowledge_dim
            )));
        }
        if table.entities() != kg.entity_names() {
            return Err(contract_error(
                "embedding table does not cover the graph's entity vocabulary",
            ));
        }
        let d = table.dim;
        let mut mean_embeddings = vec![0.0; n * d];
        let mut matched = vec![0.0; n];
        for (i, token) in tokens.iter().enumerate() {
            let hits = kg.entities_by_lemma(&token.lemma);
            if hits.is_empty() {
                continue;
            }
            matched[i] = 1.0;
            for &e in &hits {
                for (j, v) in table.entity_vec(e).iter().enumerate() {
                    mean_embeddings[i * d + j] += v;
                }
            }
            for j in 0..d {
                mean_embeddings[i * d + j] /= hits.len() as f64;
            }
        }
        let raw = g.constant(Tensor::matrix(n, d, mean_embeddings)?);
        let projected = g.matmul(raw, bound.node(self.knowledge_proj))?;
        let cat = g.concat_cols(reps, projected)?;
        let pre = g.matmul(cat, bound.node(self.gate_w))?;
        let pre = g.add(pre, bound.node(self.gate_b))?;
        let gate = g.sigmoid(pre)?;
        g.tag(gate, "inject.gate");
        let fused = g.mix(gate, reps, projected)?;
        let match_col = g.constant(Tensor::column(matched)?);
        g.mix(match_col, fused, reps)
    }

    /// One GAT layer's candidate: per-head masked attention over the
    /// neighbor sets, head outputs averaged. Nodes with no neighbors yield a
    /// zero candidate row.
    #[allow(clippy::too_many_arguments)]
    pub fn gat_layer(
        &self,
        g: &mut ComputeGraph,
        bound: &BoundParams,
        h_prev: NodeId,
        neighbor_sets: &[Vec<usize>],
        layer: usize,
        train: bool,
        rng: &mut Rng,
    ) -> Result<NodeId, TensorError> {
        let (n, hidden) = g.value(h_prev).dims();
        if n != neighbor_sets.len() {
            return Err(contract_error(format!(
                "{n} representation rows for {} graph nodes",
                neighbor_sets.len()
            )));
        }
        let params = &self.layers[layer];
        let mask = neighbor_mask(neighbor_sets, n);
        let ones_row = g.constant(Tensor::filled(1, n, 1.0));
        let ones_col = g.constant(Tensor::filled(n, 1, 1.0));
        let mut acc: Option<NodeId> = None;
        for head in &params.heads {
            let wh = g.matmul(h_prev, bound.node(head.w))?;
            let a1 = g.slice_rows(bound.node(head.a), 0, hidden)?;
            let a2 = g.slice_rows(bound.node(head.a), hidden, 2 * hidden)?;
            let f1 = g.matmul(wh, a1)?;
            let f2 = g.matmul(wh, a2)?;
            // e[i][j] = LeakyReLU(a1.Wh_i + a2.Wh_j) via rank-one broadcasts.
            let left = g.matmul(f1, ones_row)?;
            let f2t = g.transpose(f2)?;
            let right = g.matmul(ones_col, f2t)?;
            let logits = g.add(left, right)?;
            let activated = g.leaky_relu(logits, self.config.leaky_slope)?;
            let alpha = g.softmax_neighbors(activated, mask.clone())?;
            g.tag(alpha, "gat.alpha");
            let alpha = maybe_dropout(g, alpha, self.config.dropout, train, rng)?;
            let message = g.matmul(alpha, wh)?;
            acc = Some(match acc {
                None => message,
                Some(prev) => g.add(prev, message)?,
            });
        }
        let summed = acc.expect("at least one head");
        let candidate = g.scale(summed, 1.0 / self.config.heads as f64)?;
        g.tag(candidate, "gat.candidate");
        Ok(candidate)
    }

    /// Folds a layer candidate into the previous representation under the
    /// configured combiner.
    pub fn highway_combine(
        &self,
        g: &mut ComputeGraph,
        bound: &BoundParams,
        h_prev: NodeId,
        candidate: NodeId,
        layer: usize,
    ) -> Result<NodeId, TensorError> {
        if g.value(h_prev).dims() != g.value(candidate).dims() {
            return Err(TensorError::ShapeMismatch {
                op: "highway-combine",
                lhs: g.value(h_prev).shape().to_vec(),
                rhs: g.value(candidate).shape().to_vec(),
            });
        }
        match self.config.combiner {
            Combiner::Highway => {
                let params = &self.layers[layer];
                let pre = g.matmul(h_prev, bound.node(params.highway_w))?;
                let pre = g.add(pre, bound.node(params.highway_b))?;
                let gate = g.sigmoid(pre)?;
                g.tag(gate, "highway.gate");
                g.tag(h_prev, "highway.prev");
                g.tag(candidate, "highway.cand");
                let out = g.mix(gate, h_prev, candidate)?;
                g.tag(out, "highway.out");
                Ok(out)
            }
            Combiner::Residual => g.add(h_prev, candidate),
            Combiner::None => Ok(candidate),
        }
    }

    /// L rounds of `gat_layer` + `highway_combine` over the masked graph.
    pub fn highway_gat_forward(
        &self,
        g: &mut ComputeGraph,
        bound: &BoundParams,
        h0: NodeId,
        graph: &JointGraph,
        train: bool,
        rng: &mut Rng,
    ) -> Result<NodeId, TensorError> {
        let neighbor_sets = graph.neighbor_sets(&self.config.edge_mask);
        let mut h = h0;
        for layer in 0..self.config.layers {
            let candidate = self.gat_layer(g, bound, h, &neighbor_sets, layer, train, rng)?;
            h = self.highway_combine(g, bound, h, candidate, layer)?;
        }
        Ok(h)
    }

    /// Residual self-attention plus feed-forward over passage rows.
    pub fn self_matching(
        &self,
        g: &mut ComputeGraph,
        bound: &BoundParams,
        h_passage: NodeId,
        train: bool,
        rng: &mut Rng,
    ) -> Result<NodeId, TensorError> {
        self.self_matching.forward(
            g,
            bound,
            h_passage,
            self.config.heads,
            self.config.dropout,
            train,
            rng,
        )
    }

    /// The full module: injection, Highway GAT reasoning, and self-matching
    /// on passage rows, each applied only when toggled on. With every toggle
    /// off this returns `reps` itself.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut ComputeGraph,
        bound: &BoundParams,
        reps: NodeId,
        tokens: &[Token],
        graph: &JointGraph,
        kg: &KnowledgeGraph,
        table: Option<&EntityEmbeddingTable>,
        train: bool,
        rng: &mut Rng,
    ) -> Result<NodeId, TensorError> {
        let n = g.value(reps).rows();
        if n != graph.node_count() {
            return Err(contract_error(format!(
                "{n} representation rows for a graph of {} nodes",
                graph.node_count()
            )));
        }
        let mut x = reps;
        if self.config.use_injection {
            let table = table
                .ok_or_else(|| contract_error("injection enabled but no embedding table given"))?;
            x = self.inject_knowledge(g, bound, x, tokens, kg, table)?;
            x = maybe_dropout(g, x, self.config.dropout, train, rng)?;
        }
        if self.config.use_reasoning {
            x = self.highway_gat_forward(g, bound, x, graph, train, rng)?;
            x = maybe_dropout(g, x, self.config.dropout, train, rng)?;
        }
        if self.config.use_self_matching && graph.passage_len() > 0 {
            let m = graph.query_len();
            let passage = if m == 0 { x } else { g.slice_rows(x, m, n)? };
            let matched = self.self_matching(g, bound, passage, train, rng)?;
            let matched = maybe_dropout(g, matched, self.config.dropout, train, rng)?;
            x = if m == 0 {
                matched
            } else {
                let query = g.slice_rows(x, 0, m)?;
                g.concat_rows(query, matched)?
            };
        }
        Ok(x)
    }
}

/// Dropout only when training with a positive rate; otherwise the node
/// passes through untouched and no randomness is consumed.
pub fn maybe_dropout(
    g: &mut ComputeGraph,
    x: NodeId,
    rate: f64,
    train: bool,
    rng: &mut Rng,
) -> Result<NodeId, TensorError> {
    if train && rate > 0.0 {
        g.dropout(x, rate, rng.next_u64(), true)
    } else {
        Ok(x)
    }
}

/// Named finite-difference checks of every PIECER submodule on a fixed
/// six-node fixture (dropout off, h = 1e-5): injection, one GAT layer, the
/// highway combine, the full L-layer Highway GAT, and self-matching.
pub fn submodule_gradchecks(seed: u64) -> Result<Vec<(&'static str, f64)>, crate::gradcheck::CheckError> {
    use crate::gradcheck::grad_check;
    use crate::text::{Annotator, Segment};

    let config = PiecerConfig {
        layers: 3,
        heads: 4,
        hidden_dim: 12,
        knowledge_dim: 6,
        dropout: 0.0,
        ..PiecerConfig::default()
    };
    let kg = KnowledgeGraph::from_triples(&[
        ("dog", "RelatedTo", "canine"),
        ("cat", "IsA", "feline"),
    ]);
    let table = crate::kge::init_table(
        &kg,
        &crate::kge::KgeConfig { dim: config.knowledge_dim, seed, ..crate::kge::KgeConfig::toy() },
    )
    .expect("fixture graph is non-empty");
    let ann = Annotator::default();
    let query = ann.annotate("canine chases cat", Segment::Query);
    let passage = ann.annotate("dog barks cat", Segment::Passage);
    let graph = JointGraph::build(&query, &passage, &kg);
    let tokens: Vec<Token> = query.into_iter().chain(passage).collect();
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let model = PiecerModel::new(&mut store, "piecer", config, &mut rng)
        .expect("fixture config is valid");
    let n = tokens.len();
    let h = model.config.hidden_dim;
    let reps =
        Tensor::matrix(n, h, (0..n * h).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
    let probe =
        Tensor::matrix(n, h, (0..n * h).map(|i| ((i % 7) as f64 - 3.0) * 0.2).collect()).unwrap();
    let params: Vec<Tensor> = store.tensors().to_vec();
    let neighbor_sets = graph.neighbor_sets(&model.config.edge_mask);

    // Weighted-sum probe so no coordinate's gradient cancels out.
    let probed = |g: &mut ComputeGraph, out: NodeId, probe: &Tensor| -> Result<NodeId, TensorError> {
        let (rows, cols) = g.value(out).dims();
        let w = g.constant(Tensor::matrix(
            rows,
            cols,
            probe.values()[..rows * cols].to_vec(),
        )?);
        let weighted = g.hadamard(out, w)?;
        g.sum_all(weighted)
    };

    let mut results = Vec::new();
    let checks: Vec<(&'static str, Box<dyn Fn(&mut ComputeGraph, &[NodeId]) -> Result<NodeId, TensorError>>)> = vec![
        (
            "injection",
            Box::new(|g, ids| {
                let bound = BoundParams::from_nodes(ids.to_vec());
                let x = g.constant(reps.clone());
                let out = model.inject_knowledge(g, &bound, x, &tokens, &kg, &table)?;
                probed(g, out, &probe)
            }),
        ),
        (
            "gat-layer",
            Box::new(|g, ids| {
                let bound = BoundParams::from_nodes(ids.to_vec());
                let x = g.constant(reps.clone());
                let out = model.gat_layer(g, &bound, x, &neighbor_sets, 0, false, &mut Rng::new(0))?;
                probed(g, out, &probe)
            }),
        ),
        (
            "highway-combine",
            Box::new(|g, ids| {
                let bound = BoundParams::from_nodes(ids.to_vec());
                let prev = g.constant(reps.clone());
                let cand = g.constant(probe.clone());
                let out = model.highway_combine(g, &bound, prev, cand, 0)?;
                probed(g, out, &probe)
            }),
        ),
        (
            "highway-gat",
            Box::new(|g, ids| {
                let bound = BoundParams::from_nodes(ids.to_vec());
                let x = g.constant(reps.clone());
                let out = model.highway_gat_forward(g, &bound, x, &graph, false, &mut Rng::new(0))?;
                probed(g, out, &probe)
            }),
        ),
        (
            "self-matching",
            Box::new(|g, ids| {
                let bound = BoundParams::from_nodes(ids.to_vec());
                let x = g.constant(reps.clone());
                let out = model.self_matching(g, &bound, x, false, &mut Rng::new(0))?;
                probed(g, out, &probe)
            }),
        ),
    ];
    for (name, f) in &checks {
        let err = grad_check(f, &params, 1e-5, seed)?;
        results.push((*name, err));
    }
    Ok(results)
}

fn neighbor_mask(neighbor_sets: &[Vec<usize>], n: usize) -> NeighborMask {
    let mut allowed = vec![false; n * n];
    for (i, set) in neighbor_sets.iter().enumerate() {
        for &j in set {
            allowed[i * n + j] = true;
        }
    }
    NeighborMask::new(n, n, allowed).expect("mask dims match by construction").lenient()
}
