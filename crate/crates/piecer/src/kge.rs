//! Knowledge graph embedding pre-training and link-prediction evaluation.
//!
//! Two scorers are available: TransE (`||h + r - t||_2`, lower is better,
//! margin ranking loss, entity vectors renormalized to unit L2 after every
//! epoch) and DistMult (trilinear `sum h_i r_i t_i`, higher is better,
//! logistic loss). Training corrupts one side of each triple per negative,
//! filtered against the graph, and optimizes with Adam.

use crate::kg::KnowledgeGraph;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

pub const TABLE_FORMAT_VERSION: u32 = 1;
const TABLE_MAGIC: &[u8; 4] = b"PKGE";

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("vector dimension mismatch: {lhs} vs {rhs}")]
    Dimension { lhs: usize, rhs: usize },
    #[error("no valid negative sample found after {0} retries")]
    SamplingExhausted(usize),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("cannot train on an empty graph")]
    EmptyGraph,
    #[error("embedding table does not cover the graph vocabulary")]
    VocabularyMismatch,
    #[error("table format: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeMethod {
    TransE,
    DistMult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgeConfig {
    pub method: KgeMethod,
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// TransE ranking margin.
    pub margin: f64,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for KgeConfig {
    /// Paper-scale settings; see `KgeConfig::toy` for the desk-scale preset.
    fn default() -> Self {
        KgeConfig {
            method: KgeMethod::TransE,
            dim: 100,
            epochs: 10_000,
            learning_rate: 1e-5,
            margin: 1.0,
            negatives_per_positive: 1,
            seed: 0,
        }
    }
}

impl KgeConfig {
    /// Desk-scale preset that converges on toy graphs in seconds.
    pub fn toy() -> Self {
        KgeConfig { dim: 16, epochs: 500, learning_rate: 1e-2, seed: 7, ..KgeConfig::default() }
    }
}

/// Pre-trained entity and relation vectors covering one graph's vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityEmbeddingTable {
    pub method: KgeMethod,
    pub dim: usize,
    pub epochs_trained: u64,
    entities: Vec<String>,
    relations: Vec<String>,
    entity_vecs: Vec<f64>,
    relation_vecs: Vec<f64>,
}

impl EntityEmbeddingTable {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn entity_vec(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.entity_vecs[i..i + self.dim]
    }

    pub fn relation_vec(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.relation_vecs[i..i + self.dim]
    }

    pub fn covers(&self, g: &KnowledgeGraph) -> bool {
        self.entities == g.entity_names() && self.relations == g.relation_names()
    }

    /// Overwrites one entity vector, for tests and fixtures.
    pub fn set_entity_vec(&mut self, id: u32, values: &[f64]) {
        assert_eq!(values.len(), self.dim);
        let i = id as usize * self.dim;
        self.entity_vecs[i..i + self.dim].copy_from_slice(values);
    }
}

pub fn score_transe(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64, KgeError> {
    check_dims(h, r)?;
    check_dims(h, t)?;
    let sq: f64 = h
        .iter()
        .zip(r)
        .zip(t)
        .map(|((hv, rv), tv)| {
            let d = hv + rv - tv;
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}

pub fn score_distmult(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64, KgeError> {
    check_dims(h, r)?;
    check_dims(h, t)?;
    Ok(h.iter().zip(r).zip(t).map(|((hv, rv), tv)| hv * rv * tv).sum())
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), KgeError> {
    if a.len() != b.len() {
        return Err(KgeError::Dimension { lhs: a.len(), rhs: b.len() });
    }
    Ok(())
}

/// TransE margin ranking loss `max(0, margin + d_pos - d_neg)`.
pub fn margin_loss(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    (margin + d_pos - d_neg).max(0.0)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (1.0 + (-x.abs()).exp()).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const NEGATIVE_SAMPLE_RETRIES: usize = 100;

/// Corrupts the head or tail (coin flip per retry) with a uniformly random
/// entity such that the corrupted triple is absent from the graph.
pub fn negative_sample(
    triple: (u32, u32, u32),
    g: &KnowledgeGraph,
    rng: &mut Rng,
) -> Result<(u32, u32, u32), KgeError> {
    let (h, r, t) = triple;
    let n = g.entity_count();
    for _ in 0..NEGATIVE_SAMPLE_RETRIES {
        let replacement = rng.index(n) as u32;
        let candidate = if rng.coin() { (replacement, r, t) } else { (h, r, replacement) };
        if !g.contains_triple(candidate.0, candidate.1, candidate.2) {
            return Ok(candidate);
        }
    }
    Err(KgeError::SamplingExhausted(NEGATIVE_SAMPLE_RETRIES))
}

/// Whether a sampled corruption replaced the head (used by frequency tests).
pub fn corruption_side(original: (u32, u32, u32), corrupted: (u32, u32, u32)) -> &'static str {
    if original.0 != corrupted.0 {
        "head"
    } else {
        "tail"
    }
}

#[derive(Debug)]
pub struct TrainedKge {
    pub table: EntityEmbeddingTable,
    /// Mean loss over the fixed probe set after each epoch, in order. The
    /// probe set pairs every triple with `negatives_per_positive` filtered
    /// corruptions drawn once from a dedicated seed, so the curve measures
    /// optimization progress without negative-sampling noise.
    pub epoch_losses: Vec<f64>,
}

/// The untrained table `train_kge` starts from: uniform init in
/// `[-6/sqrt(d), 6/sqrt(d)]`, relations L2-normalized once, and (TransE)
/// entities normalized to unit L2. Seed-matched with training.
pub fn init_table(g: &KnowledgeGraph, cfg: &KgeConfig) -> Result<EntityEmbeddingTable, KgeError> {
    if g.is_empty() {
        return Err(KgeError::EmptyGraph);
    }
    let mut rng = Rng::new(cfg.seed);
    let d = cfg.dim;
    let bound = 6.0 / (d as f64).sqrt();
    let mut entity_vecs: Vec<f64> =
        (0..g.entity_count() * d).map(|_| rng.uniform_in(-bound, bound)).collect();
    let mut relation_vecs: Vec<f64> =
        (0..g.relation_count() * d).map(|_| rng.uniform_in(-bound, bound)).collect();
    normalize_rows(&mut relation_vecs, d);
    if cfg.method == KgeMethod::TransE {
        normalize_rows(&mut entity_vecs, d);
    }
    Ok(EntityEmbeddingTable {
        method: cfg.method,
        dim: d,
        epochs_trained: 0,
        entities: g.entity_names().to_vec(),
        relations: g.relation_names().to_vec(),
        entity_vecs,
        relation_vecs,
    })
}

fn normalize_rows(vecs: &mut [f64], d: usize) {
    for row in vecs.chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row {
                *v /= norm;
            }
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// Applies one update over the touched coordinates only (lazy Adam).
    fn step(&mut self, params: &mut [f64], grads: &[(usize, f64)], lr: f64) {
        self.t += 1;
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);
        for &(i, grad) in grads {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad * grad;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Pre-trains an embedding table on `g` under `cfg`.
pub fn train_kge(g: &KnowledgeGraph, cfg: &KgeConfig) -> Result<TrainedKge, KgeError> {
    let mut table = init_table(g, cfg)?;
    let mut rng = Rng::new(cfg.seed.wrapping_add(1));
    let triples: Vec<(u32, u32, u32)> = g.triples().copied().collect();
    let d = cfg.dim;
    let mut ent_adam = Adam::new(table.entity_vecs.len());
    let mut rel_adam = Adam::new(table.relation_vecs.len());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    // Fixed probe pairs for the reported loss curve.
    let mut probe_rng = Rng::new(cfg.seed.wrapping_add(2));
    let mut probes = Vec::new();
    for &pos in &triples {
        for _ in 0..cfg.negatives_per_positive.max(1) {
            probes.push((pos, negative_sample(pos, g, &mut probe_rng)?));
        }
    }

    for epoch in 0..cfg.epochs {
        let order = rng.permutation(triples.len());
        for &idx in &order {
            let (h, r, t) = triples[idx];
            for _ in 0..cfg.negatives_per_positive.max(1) {
                let (nh, nr, nt) = negative_sample((h, r, t), g, &mut rng)?;
                let mut ent_grads: Vec<(usize, f64)> = Vec::new();
                let mut rel_grads: Vec<(usize, f64)> = Vec::new();
                match cfg.method {
                    KgeMethod::TransE => transe_sample_grads(
                        &table, (h, r, t), (nh, nr, nt), cfg.margin,
                        &mut ent_grads, &mut rel_grads,
                    ),
                    KgeMethod::DistMult => distmult_sample_grads(
                        &table, (h, r, t), (nh, nr, nt),
                        &mut ent_grads, &mut rel_grads,
                    ),
                };
                if !ent_grads.is_empty() || !rel_grads.is_empty() {
                    ent_adam.step(&mut table.entity_vecs, &ent_grads, cfg.learning_rate);
                    rel_adam.step(&mut table.relation_vecs, &rel_grads, cfg.learning_rate);
                }
            }
        }
        if cfg.method == KgeMethod::TransE {
            normalize_rows(&mut table.entity_vecs, d);
        }
        let mean = probe_loss(&table, &probes, cfg);
        if !mean.is_finite() || table.entity_vecs.iter().any(|v| !v.is_finite()) {
            return Err(KgeError::Diverged { epoch });
        }
        epoch_losses.push(mean);
    }
    table.epochs_trained = cfg.epochs as u64;
    Ok(TrainedKge { table, epoch_losses })
}

fn probe_loss(
    table: &EntityEmbeddingTable,
    probes: &[((u32, u32, u32), (u32, u32, u32))],
    cfg: &KgeConfig,
) -> f64 {
    let d = table.dim;
    let mut total = 0.0;
    for &((h, r, t), (nh, nr, nt)) in probes {
        let hp = vec_at(&table.entity_vecs, h, d);
        let rp = vec_at(&table.relation_vecs, r, d);
        let tp = vec_at(&table.entity_vecs, t, d);
        let hn = vec_at(&table.entity_vecs, nh, d);
        let rn = vec_at(&table.relation_vecs, nr, d);
        let tn = vec_at(&table.entity_vecs, nt, d);
        total += match cfg.method {
            KgeMethod::TransE => {
                let d_pos = score_transe(hp, rp, tp).expect("table dims are uniform");
                let d_neg = score_transe(hn, rn, tn).expect("table dims are uniform");
                margin_loss(d_pos, d_neg, cfg.margin)
            }
            KgeMethod::DistMult => {
                let s_pos = score_distmult(hp, rp, tp).expect("table dims are uniform");
                let s_neg = score_distmult(hn, rn, tn).expect("table dims are uniform");
                softplus(-s_pos) + softplus(s_neg)
            }
        };
    }
    total / probes.len().max(1) as f64
}

fn vec_at(vecs: &[f64], id: u32, d: usize) -> &[f64] {
    &vecs[id as usize * d..(id as usize + 1) * d]
}

fn transe_sample_grads(
    table: &EntityEmbeddingTable,
    pos: (u32, u32, u32),
    neg: (u32, u32, u32),
    margin: f64,
    ent_grads: &mut Vec<(usize, f64)>,
    rel_grads: &mut Vec<(usize, f64)>,
) -> f64 {
    let d = table.dim;
    let (h, r, t) = pos;
    let (nh, nr, nt) = neg;
    let hp = vec_at(&table.entity_vecs, h, d);
    let rp = vec_at(&table.relation_vecs, r, d);
    let tp = vec_at(&table.entity_vecs, t, d);
    let hn = vec_at(&table.entity_vecs, nh, d);
    let rn = vec_at(&table.relation_vecs, nr, d);
    let tn = vec_at(&table.entity_vecs, nt, d);
    let d_pos = score_transe(hp, rp, tp).expect("table dims are uniform");
    let d_neg = score_transe(hn, rn, tn).expect("table dims are uniform");
    let loss = margin_loss(d_pos, d_neg, margin);
    if loss <= 0.0 {
        return loss;
    }
    // d(||v||)/dv = v / ||v||, taken as zero at the origin.
    for i in 0..d {
        if d_pos > 0.0 {
            let gp = (hp[i] + rp[i] - tp[i]) / d_pos;
            ent_grads.push((h as usize * d + i, gp));
            ent_grads.push((t as usize * d + i, -gp));
            rel_grads.push((r as usize * d + i, gp));
        }
        if d_neg > 0.0 {
            let gn = (hn[i] + rn[i] - tn[i]) / d_neg;
            ent_grads.push((nh as usize * d + i, -gn));
            ent_grads.push((nt as usize * d + i, gn));
            rel_grads.push((nr as usize * d + i, -gn));
        }
    }
    loss
}

fn distmult_sample_grads(
    table: &EntityEmbeddingTable,
    pos: (u32, u32, u32),
    neg: (u32, u32, u32),
    ent_grads: &mut Vec<(usize, f64)>,
    rel_grads: &mut Vec<(usize, f64)>,
) -> f64 {
    let d = table.dim;
    let (h, r, t) = pos;
    let (nh, nr, nt) = neg;
    let hp = vec_at(&table.entity_vecs, h, d);
    let rp = vec_at(&table.relation_vecs, r, d);
    let tp = vec_at(&table.entity_vecs, t, d);
    let hn = vec_at(&table.entity_vecs, nh, d);
    let rn = vec_at(&table.relation_vecs, nr, d);
    let tn = vec_at(&table.entity_vecs, nt, d);
    let s_pos = score_distmult(hp, rp, tp).expect("table dims are uniform");
    let s_neg = score_distmult(hn, rn, tn).expect("table dims are uniform");
    let loss = softplus(-s_pos) + softplus(s_neg);
    let dpos = -sigmoid(-s_pos);
    let dneg = sigmoid(s_neg);
    for i in 0..d {
        ent_grads.push((h as usize * d + i, dpos * rp[i] * tp[i]));
        ent_grads.push((t as usize * d + i, dpos * hp[i] * rp[i]));
        rel_grads.push((r as usize * d + i, dpos * hp[i] * tp[i]));
        ent_grads.push((nh as usize * d + i, dneg * rn[i] * tn[i]));
        ent_grads.push((nt as usize * d + i, dneg * hn[i] * rn[i]));
        rel_grads.push((nr as usize * d + i, dneg * hn[i] * tn[i]));
    }
    loss
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkPredictionReport {
    pub mean_rank: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub triples_evaluated: usize,
}

/// Filtered tail ranking: for each triple `(h, r, t)`, ranks `t` against all
/// entities by score, excluding other entities `t'` with `(h, r, t')` in the
/// graph. Rank is `1 + |strictly better candidates|`.
pub fn eval_link_prediction(
    table: &EntityEmbeddingTable,
    g: &KnowledgeGraph,
) -> Result<LinkPredictionReport, KgeError> {
    if !table.covers(g) {
        return Err(KgeError::VocabularyMismatch);
    }
    let n = g.entity_count() as u32;
    let mut rank_sum = 0.0;
    let mut hits1 = 0usize;
    let mut hits3 = 0usize;
    let mut evaluated = 0usize;
    for &(h, r, t) in g.triples() {
        let hv = table.entity_vec(h);
        let rv = table.relation_vec(r);
        let true_score = score_for(table, hv, rv, table.entity_vec(t))?;
        let mut better = 0usize;
        for cand in 0..n {
            if cand == t || g.contains_triple(h, r, cand) {
                continue;
            }
            let s = score_for(table, hv, rv, table.entity_vec(cand))?;
            let is_better = match table.method {
                KgeMethod::TransE => s < true_score,
                KgeMethod::DistMult => s > true_score,
            };
            if is_better {
                better += 1;
            }
        }
        let rank = better + 1;
        rank_sum += rank as f64;
        if rank <= 1 {
            hits1 += 1;
        }
        if rank <= 3 {
            hits3 += 1;
        }
        evaluated += 1;
    }
    Ok(LinkPredictionReport {
        mean_rank: rank_sum / evaluated.max(1) as f64,
        hits_at_1: hits1 as f64 / evaluated.max(1) as f64,
        hits_at_3: hits3 as f64 / evaluated.max(1) as f64,
        triples_evaluated: evaluated,
    })
}

fn score_for(
    table: &EntityEmbeddingTable,
    h: &[f64],
    r: &[f64],
    t: &[f64],
) -> Result<f64, KgeError> {
    match table.method {
        KgeMethod::TransE => score_transe(h, r, t),
        KgeMethod::DistMult => score_distmult(h, r, t),
    }
}

// ── Binary table format ─────────────────────────────────────────────
//
// magic "PKGE" | u32 version | u8 method | u64 epochs | u64 dim |
// u64 n_entities | u64 n_relations | vocab (u64 byte-length + UTF-8, entities
// then relations, id order) | entity vectors | relation vectors, all vectors
// f64 little-endian in id-major order.

pub fn save_table<W: Write>(table: &EntityEmbeddingTable, mut w: W) -> Result<(), KgeError> {
    w.write_all(TABLE_MAGIC)?;
    w.write_all(&TABLE_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[match table.method {
        KgeMethod::TransE => 0u8,
        KgeMethod::DistMult => 1u8,
    }])?;
    w.write_all(&table.epochs_trained.to_le_bytes())?;
    w.write_all(&(table.dim as u64).to_le_bytes())?;
    w.write_all(&(table.entities.len() as u64).to_le_bytes())?;
    w.write_all(&(table.relations.len() as u64).to_le_bytes())?;
    for name in table.entities.iter().chain(&table.relations) {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
    }
    for v in table.entity_vecs.iter().chain(&table.relation_vecs) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_table_path(table: &EntityEmbeddingTable, path: &std::path::Path) -> Result<(), KgeError> {
    let file = std::fs::File::create(path)?;
    save_table(table, std::io::BufWriter::new(file))
}

pub fn load_table<R: Read>(mut r: R) -> Result<EntityEmbeddingTable, KgeError> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != TABLE_MAGIC {
        return Err(KgeError::Format(format!("bad magic bytes {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != TABLE_FORMAT_VERSION {
        return Err(KgeError::Format(format!("unsupported version {version}")));
    }
    let mut method_byte = [0u8; 1];
    read_exact(&mut r, &mut method_byte)?;
    let method = match method_byte[0] {
        0 => KgeMethod::TransE,
        1 => KgeMethod::DistMult,
        other => return Err(KgeError::Format(format!("unknown method tag {other}"))),
    };
    let epochs_trained = read_u64(&mut r)?;
    let dim = read_u64(&mut r)? as usize;
    let n_ent = read_u64(&mut r)? as usize;
    let n_rel = read_u64(&mut r)? as usize;
    let read_names = |r: &mut R, count: usize| -> Result<Vec<String>, KgeError> {
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u64(r)? as usize;
            let mut buf = vec![0u8; len];
            read_exact(r, &mut buf)?;
            names.push(
                String::from_utf8(buf).map_err(|e| KgeError::Format(format!("bad utf-8: {e}")))?,
            );
        }
        Ok(names)
    };
    let entities = read_names(&mut r, n_ent)?;
    let relations = read_names(&mut r, n_rel)?;
    let read_vecs = |r: &mut R, count: usize| -> Result<Vec<f64>, KgeError> {
        let mut out = Vec::with_capacity(count * dim);
        let mut buf = [0u8; 8];
        for _ in 0..count * dim {
            read_exact(r, &mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let entity_vecs = read_vecs(&mut r, n_ent)?;
    let relation_vecs = read_vecs(&mut r, n_rel)?;
    Ok(EntityEmbeddingTable { method, dim, epochs_trained, entities, relations, entity_vecs, relation_vecs })
}

pub fn load_table_path(path: &std::path::Path) -> Result<EntityEmbeddingTable, KgeError> {
    let file = std::fs::File::open(path)?;
    load_table(std::io::BufReader::new(file))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), KgeError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            KgeError::Format("truncated file".to_string())
        } else {
            KgeError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, KgeError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, KgeError> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_graph() -> KnowledgeGraph {
        let mut rng = Rng::new(99);
        let mut triples = Vec::new();
        // Ring plus random chords over 20 entities.
        for i in 0..20 {
            triples.push((format!("e{i}"), "r0".to_string(), format!("e{}", (i + 1) % 20)));
        }
        while triples.len() < 50 {
            let h = rng.index(20);
            let t = rng.index(20);
            if h != t {
                triples.push((format!("e{h}"), "r1".to_string(), format!("e{t}")));
            }
        }
        KnowledgeGraph::from_triples(&triples)
    }

    #[test]
    fn transe_score_examples() {
        assert_eq!(score_transe(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score_transe(&[0.3, -0.7], &[0.0, 0.0], &[0.3, -0.7]).unwrap(), 0.0);
        let d = score_transe(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((d - 5.0f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            score_transe(&[1.0], &[1.0, 2.0], &[1.0]),
            Err(KgeError::Dimension { .. })
        ));
    }

    #[test]
    fn distmult_score_examples() {
        // Hand oracle: 1*1*1 + 2*1*1 = 3.
        assert_eq!(score_distmult(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(score_distmult(&[0.0, 0.0], &[3.0, 4.0], &[5.0, 6.0]).unwrap(), 0.0);
        let a = score_distmult(&[1.0, 2.0], &[3.0, -1.0], &[0.5, 4.0]).unwrap();
        let b = score_distmult(&[0.5, 4.0], &[3.0, -1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn margin_loss_examples() {
        assert_eq!(margin_loss(2.0, 0.0, 1.0), 3.0);
        assert_eq!(margin_loss(0.0, 2.0, 1.0), 0.0);
        assert!(margin_loss(5.0, 0.0, 1.0) >= 0.0);
    }

    #[test]
    fn negative_sampling_forced_outcome() {
        // Only (b, r, b) is a valid corruption of (a, r, b).
        let g = KnowledgeGraph::from_triples(&[("a", "r", "b"), ("a", "r", "a")]);
        let a = g.entity_id("a").unwrap();
        let b = g.entity_id("b").unwrap();
        let r = 0;
        let mut rng = Rng::new(0);
        for _ in 0..20 {
            let neg = negative_sample((a, r, b), &g, &mut rng).unwrap();
            assert_eq!(neg, (b, r, b));
        }
    }

    #[test]
    fn negative_sampling_exhausts_on_complete_graph() {
        let g = KnowledgeGraph::from_triples(&[
            ("a", "r", "a"),
            ("a", "r", "b"),
            ("b", "r", "a"),
            ("b", "r", "b"),
        ]);
        let mut rng = Rng::new(0);
        assert!(matches!(
            negative_sample((0, 0, 1), &g, &mut rng),
            Err(KgeError::SamplingExhausted(_))
        ));
    }

    #[test]
    fn negative_sampling_is_deterministic_and_balanced() {
        let g = toy_graph();
        let triple = *g.triples().next().unwrap();
        let mut a = Rng::new(5);
        let mut b = Rng::new(5);
        for _ in 0..100 {
            assert_eq!(
                negative_sample(triple, &g, &mut a).unwrap(),
                negative_sample(triple, &g, &mut b).unwrap()
            );
        }
        let mut rng = Rng::new(6);
        let mut heads = 0usize;
        let total = 10_000;
        for _ in 0..total {
            let neg = negative_sample(triple, &g, &mut rng).unwrap();
            if corruption_side(triple, neg) == "head" {
                heads += 1;
            }
        }
        let ratio = heads as f64 / total as f64;
        assert!((0.48..=0.52).contains(&ratio), "head ratio {ratio}");
    }

    #[test]
    fn training_beats_untrained_baseline() {
        let g = toy_graph();
        let cfg = KgeConfig { epochs: 200, dim: 8, learning_rate: 1e-2, seed: 7, ..KgeConfig::toy() };
        let trained = train_kge(&g, &cfg).unwrap();
        let baseline = init_table(&g, &cfg).unwrap();
        let trained_rank = eval_link_prediction(&trained.table, &g).unwrap().mean_rank;
        let baseline_rank = eval_link_prediction(&baseline, &g).unwrap().mean_rank;
        assert!(
            trained_rank < baseline_rank,
            "trained {trained_rank} vs baseline {baseline_rank}"
        );
    }

    #[test]
    fn transe_entity_norms_are_unit_after_training() {
        let g = toy_graph();
        let cfg = KgeConfig { epochs: 20, dim: 8, ..KgeConfig::toy() };
        let trained = train_kge(&g, &cfg).unwrap();
        for id in 0..trained.table.entity_count() as u32 {
            let norm: f64 =
                trained.table.entity_vec(id).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-9, "entity {id} norm {norm}");
        }
    }

    #[test]
    fn epoch_mean_loss_non_increasing_early() {
        let g = KnowledgeGraph::load_triples(
            include_str!("../data/toy_graph.tsv").as_bytes(),
        )
        .unwrap();
        let cfg = KgeConfig { epochs: 10, ..KgeConfig::toy() };
        let trained = train_kge(&g, &cfg).unwrap();
        for w in trained.epoch_losses.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "loss increased: {:?}",
                trained.epoch_losses
            );
        }
    }

    #[test]
    fn distmult_divergence_is_reported() {
        let g = toy_graph();
        let cfg = KgeConfig {
            method: KgeMethod::DistMult,
            epochs: 5,
            learning_rate: 1e150,
            dim: 8,
            ..KgeConfig::toy()
        };
        match train_kge(&g, &cfg) {
            Err(KgeError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn link_prediction_perfect_single_triple() {
        let g = KnowledgeGraph::from_triples(&[("a", "r", "b")]);
        let mut table = init_table(&g, &KgeConfig { dim: 2, ..KgeConfig::toy() }).unwrap();
        // Make a + r = b exactly.
        table.entity_vecs = vec![1.0, 0.0, 0.0, 1.0];
        table.relation_vecs = vec![-1.0, 1.0];
        let report = eval_link_prediction(&table, &g).unwrap();
        assert_eq!(report.hits_at_1, 1.0);
        assert_eq!(report.mean_rank, 1.0);
    }

    #[test]
    fn random_table_mean_rank_near_half_vocab() {
        let mut triples = Vec::new();
        let mut rng = Rng::new(3);
        let n = 40;
        while triples.len() < 60 {
            let h = rng.index(n);
            let t = rng.index(n);
            if h != t {
                triples.push((format!("v{h}"), "r".to_string(), format!("v{t}")));
            }
        }
        let g = KnowledgeGraph::from_triples(&triples);
        let table = init_table(&g, &KgeConfig { dim: 12, seed: 8, ..KgeConfig::toy() }).unwrap();
        let report = eval_link_prediction(&table, &g).unwrap();
        assert!(report.triples_evaluated >= 50);
        let expected = (g.entity_count() as f64 + 1.0) / 2.0;
        let tolerance = 0.2 * expected;
        assert!(
            (report.mean_rank - expected).abs() < tolerance,
            "mean rank {} vs expected {expected}",
            report.mean_rank
        );
        assert!(report.hits_at_1 <= report.hits_at_3);
    }

    #[test]
    fn table_roundtrip_is_bit_exact() {
        let g = toy_graph();
        let cfg = KgeConfig { epochs: 3, dim: 8, ..KgeConfig::toy() };
        let trained = train_kge(&g, &cfg).unwrap();
        let mut buf = Vec::new();
        save_table(&trained.table, &mut buf).unwrap();
        let reloaded = load_table(buf.as_slice()).unwrap();
        assert_eq!(reloaded, trained.table);
        let mut buf2 = Vec::new();
        save_table(&reloaded, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn corrupt_magic_is_format_error() {
        let g = toy_graph();
        let table = init_table(&g, &KgeConfig { dim: 4, ..KgeConfig::toy() }).unwrap();
        let mut buf = Vec::new();
        save_table(&table, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(load_table(buf.as_slice()), Err(KgeError::Format(_))));
        // Truncation is a format error too.
        let cut = &buf[..buf.len() / 2];
        let mut fixed = cut.to_vec();
        fixed[0] = b'P';
        assert!(matches!(load_table(fixed.as_slice()), Err(KgeError::Format(_))));
    }

    #[test]
    fn empty_graph_rejected() {
        let g = KnowledgeGraph::default();
        assert!(matches!(train_kge(&g, &KgeConfig::toy()), Err(KgeError::EmptyGraph)));
    }
}
