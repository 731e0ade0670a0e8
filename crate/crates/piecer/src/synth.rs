//! Synthetic cloze datasets with a companion knowledge graph.
//!
//! Two generation modes:
//!
//! - **pattern**: the query contains the two keywords flanking the answer in
//!   the passage, so lexical matching solves the task.
//! - **knowledge-hop**: the query holds a cue word linked to the correct
//!   candidate *only* through a companion-KG triple. Cue words and passage
//!   words come from disjoint vocabularies, distractor candidates are never
//!   KG-linked to the example's cue, and the dev split uses held-out
//!   (cue, answer) pairs whose words never co-occur in any training example.
//!   Lexical matching therefore cannot identify the answer; the knowledge
//!   edge is the only route.
//!
//! All word forms carry digits so the lemmatizer leaves them untouched and
//! none collide with stopwords.

use crate::dataset::{CandidateSpan, ExampleRecord, PLACEHOLDER};
use crate::kg::KnowledgeGraph;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible generation spec: {0}")]
    Infeasible(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthMode {
    Pattern,
    KnowledgeHop,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub mode: SynthMode,
    pub seed: u64,
    /// Filler vocabulary size per segment (query and passage pools are
    /// disjoint).
    pub vocab_size: usize,
    pub passage_len: usize,
    pub query_len: usize,
    pub train_examples: usize,
    pub dev_examples: usize,
    /// Candidate spans per example.
    pub num_candidates: usize,
    /// Size of the candidate word pool.
    pub candidate_words: usize,
    /// Size of the cue (knowledge-hop) / keyword (pattern) pool.
    pub cue_words: usize,
    /// KG links per candidate in knowledge-hop mode.
    pub links_per_candidate: usize,
    /// Random filler-filler triples added to the companion KG.
    pub distractor_triples: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            mode: SynthMode::KnowledgeHop,
            seed: 0,
            vocab_size: 30,
            passage_len: 14,
            query_len: 6,
            train_examples: 200,
            dev_examples: 50,
            num_candidates: 4,
            candidate_words: 12,
            cue_words: 10,
            links_per_candidate: 3,
            distractor_triples: 15,
        }
    }
}

/// Which cue/answer pair generated a knowledge-hop example.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HopProvenance {
    pub id: String,
    pub cue: String,
    pub answer: String,
}

#[derive(Debug)]
pub struct SynthOutput {
    pub train: Vec<ExampleRecord>,
    pub dev: Vec<ExampleRecord>,
    pub kg: KnowledgeGraph,
    /// Empty in pattern mode.
    pub provenance: Vec<HopProvenance>,
}

fn word_pool(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    validate(spec)?;
    match spec.mode {
        SynthMode::Pattern => gen_pattern(spec),
        SynthMode::KnowledgeHop => gen_hop(spec),
    }
}

fn validate(spec: &SynthSpec) -> Result<(), SynthError> {
    let fail = |msg: String| Err(SynthError::Infeasible(msg));
    if spec.num_candidates < 2 {
        return fail("need at least two candidates per example".into());
    }
    if spec.candidate_words < spec.num_candidates + 1 {
        return fail(format!(
            "{} candidate words cannot fill {} candidate slots with alternatives",
            spec.candidate_words, spec.num_candidates
        ));
    }
    if spec.passage_len < 3 * spec.num_candidates {
        return fail(format!(
            "passage length {} too small for {} well-separated candidates",
            spec.passage_len, spec.num_candidates
        ));
    }
    if spec.query_len < 4 {
        return fail("query length must be at least 4".into());
    }
    if spec.vocab_size < 8 {
        return fail("filler vocabulary too small".into());
    }
    if spec.cue_words < 2 || spec.links_per_candidate == 0 {
        return fail("need at least two cue words and one link per candidate".into());
    }
    if spec.links_per_candidate > spec.cue_words {
        return fail("more links per candidate than cue words".into());
    }
    Ok(())
}

/// Assigns each candidate a distinct set of cues.
fn assign_cue_sets(spec: &SynthSpec, rng: &mut Rng) -> Vec<BTreeSet<usize>> {
    (0..spec.candidate_words)
        .map(|_| {
            let mut set = BTreeSet::new();
            while set.len() < spec.links_per_candidate {
                set.insert(rng.index(spec.cue_words));
            }
            set
        })
        .collect()
}

fn distractor_triples(
    spec: &SynthSpec,
    fillers: &[String],
    rng: &mut Rng,
) -> Vec<(String, String, String)> {
    let mut triples = Vec::new();
    let mut seen = BTreeSet::new();
    let mut guard = 0;
    while triples.len() < spec.distractor_triples && guard < spec.distractor_triples * 50 {
        guard += 1;
        let a = rng.index(fillers.len());
        let b = rng.index(fillers.len());
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        triples.push((fillers[a].clone(), "RelatedTo".to_string(), fillers[b].clone()));
    }
    triples
}

fn gen_hop(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    let mut rng = Rng::new(spec.seed);
    let cues = word_pool("cue", spec.cue_words);
    let candidates = word_pool("ent", spec.candidate_words);
    let p_fill = word_pool("pw", spec.vocab_size);
    let q_fill = word_pool("qw", spec.vocab_size);

    let cue_sets = assign_cue_sets(spec, &mut rng);
    // Every cue must leave enough unlinked candidates to act as distractors.
    for cue in 0..spec.cue_words {
        let linked = cue_sets.iter().filter(|s| s.contains(&cue)).count();
        let unlinked = spec.candidate_words - linked;
        if unlinked < spec.num_candidates - 1 {
            return Err(SynthError::Infeasible(format!(
                "vocabulary too small for disjoint distractors: cue {cue} links {linked} of {} candidates",
                spec.candidate_words
            )));
        }
    }

    // All usable (candidate, cue) pairs, split so held-out dev pairs never
    // appear in training while every word keeps at least one training pair.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (cand, set) in cue_sets.iter().enumerate() {
        for &cue in set {
            pairs.push((cand, cue));
        }
    }
    let order = rng.permutation(pairs.len());
    let dev_quota = (pairs.len() / 4).max(1);
    let mut cand_train_count = vec![0usize; spec.candidate_words];
    let mut cue_train_count = vec![0usize; spec.cue_words];
    for &(cand, cue) in &pairs {
        cand_train_count[cand] += 1;
        cue_train_count[cue] += 1;
    }
    let mut dev_pairs = Vec::new();
    let mut train_pairs = Vec::new();
    for &idx in &order {
        let (cand, cue) = pairs[idx];
        if dev_pairs.len() < dev_quota && cand_train_count[cand] > 1 && cue_train_count[cue] > 1 {
            dev_pairs.push((cand, cue));
            cand_train_count[cand] -= 1;
            cue_train_count[cue] -= 1;
        } else {
            train_pairs.push((cand, cue));
        }
    }
    if dev_pairs.is_empty() || train_pairs.is_empty() {
        return Err(SynthError::Infeasible(
            "not enough cue/candidate pairs to split into train and dev".into(),
        ));
    }

    let mut bridge_triples: Vec<(String, String, String)> = pairs
        .iter()
        .map(|&(cand, cue)| {
            (cues[cue].clone(), "RelatedTo".to_string(), candidates[cand].clone())
        })
        .collect();
    bridge_triples.extend(distractor_triples(spec, &p_fill, &mut rng));
    let kg = KnowledgeGraph::from_triples(&bridge_triples);

    let mut provenance = Vec::new();
    let make = |pair_pool: &[(usize, usize)],
                    count: usize,
                    split: &str,
                    rng: &mut Rng,
                    provenance: &mut Vec<HopProvenance>|
     -> Result<Vec<ExampleRecord>, SynthError> {
        let mut out = Vec::with_capacity(count);
        for n in 0..count {
            let &(answer_cand, cue) = &pair_pool[rng.index(pair_pool.len())];
            // Distractors never linked to this cue.
            let legal: Vec<usize> = (0..spec.candidate_words)
                .filter(|&c| c != answer_cand && !cue_sets[c].contains(&cue))
                .collect();
            let mut distractors = BTreeSet::new();
            while distractors.len() < spec.num_candidates - 1 {
                distractors.insert(legal[rng.index(legal.len())]);
            }
            // Candidate slots: distinct, non-adjacent passage positions.
            let slots = pick_separated_slots(spec.passage_len, spec.num_candidates, rng);
            let mut slot_words: Vec<usize> = Vec::with_capacity(spec.num_candidates);
            slot_words.push(answer_cand);
            slot_words.extend(distractors.iter().copied());
            let shuffle = rng.permutation(slot_words.len());
            let assigned: Vec<usize> = shuffle.iter().map(|&i| slot_words[i]).collect();
            let mut passage_words: Vec<String> =
                (0..spec.passage_len).map(|_| p_fill[rng.index(p_fill.len())].clone()).collect();
            let mut answer_slot = 0usize;
            for (slot, cand) in slots.iter().zip(&assigned) {
                passage_words[*slot] = candidates[*cand].clone();
                if *cand == answer_cand {
                    answer_slot = *slot;
                }
            }
            // Query: cue and placeholder at distinct positions, fillers from
            // the disjoint query pool elsewhere.
            let mut query_words: Vec<String> =
                (0..spec.query_len).map(|_| q_fill[rng.index(q_fill.len())].clone()).collect();
            let cue_pos = rng.index(spec.query_len);
            let mut ph_pos = rng.index(spec.query_len);
            while ph_pos == cue_pos {
                ph_pos = rng.index(spec.query_len);
            }
            query_words[cue_pos] = cues[cue].clone();
            query_words[ph_pos] = PLACEHOLDER.to_string();

            let id = format!("hop-{split}-{n}");
            let mut spans: Vec<CandidateSpan> = slots
                .iter()
                .map(|&s| CandidateSpan { start: s, end: s, text: passage_words[s].clone() })
                .collect();
            spans.sort_by_key(|c| c.start);
            provenance.push(HopProvenance {
                id: id.clone(),
                cue: cues[cue].clone(),
                answer: candidates[answer_cand].clone(),
            });
            out.push(ExampleRecord {
                id,
                passage: passage_words.join(" "),
                query: query_words.join(" "),
                candidates: spans,
                answers: vec![passage_words[answer_slot].clone()],
            });
        }
        Ok(out)
    };

    let train = make(&train_pairs, spec.train_examples, "train", &mut rng, &mut provenance)?;
    let dev = make(&dev_pairs, spec.dev_examples, "dev", &mut rng, &mut provenance)?;
    Ok(SynthOutput { train, dev, kg, provenance })
}

fn gen_pattern(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    let mut rng = Rng::new(spec.seed);
    let keywords = word_pool("key", spec.cue_words);
    let candidates = word_pool("ent", spec.candidate_words);
    let p_fill = word_pool("pw", spec.vocab_size);
    let q_fill = word_pool("qw", spec.vocab_size);
    let kg = KnowledgeGraph::from_triples(&distractor_triples(spec, &p_fill, &mut rng));

    let make = |count: usize, split: &str, rng: &mut Rng| -> Vec<ExampleRecord> {
        let mut out = Vec::with_capacity(count);
        for n in 0..count {
            let answer_cand = rng.index(spec.candidate_words);
            let mut distractors = BTreeSet::new();
            while distractors.len() < spec.num_candidates - 1 {
                let c = rng.index(spec.candidate_words);
                if c != answer_cand {
                    distractors.insert(c);
                }
            }
            let slots = pick_separated_slots(spec.passage_len, spec.num_candidates, rng);
            // The answer lives in a slot with room for both flanking keywords.
            let answer_slot = slots
                .iter()
                .copied()
                .find(|&s| s >= 1 && s + 1 < spec.passage_len)
                .expect("separated slots leave an interior slot");
            let k_left = rng.index(spec.cue_words);
            let mut k_right = rng.index(spec.cue_words);
            while k_right == k_left {
                k_right = rng.index(spec.cue_words);
            }
            let mut passage_words: Vec<String> =
                (0..spec.passage_len).map(|_| p_fill[rng.index(p_fill.len())].clone()).collect();
            let mut others = distractors.iter().copied();
            for &slot in &slots {
                let word = if slot == answer_slot {
                    answer_cand
                } else {
                    others.next().expect("enough distractors")
                };
                passage_words[slot] = candidates[word].clone();
            }
            passage_words[answer_slot - 1] = keywords[k_left].clone();
            passage_words[answer_slot + 1] = keywords[k_right].clone();

            let mut query_words: Vec<String> =
                (0..spec.query_len).map(|_| q_fill[rng.index(q_fill.len())].clone()).collect();
            let offset = rng.index(spec.query_len - 2);
            query_words[offset] = keywords[k_left].clone();
            query_words[offset + 1] = PLACEHOLDER.to_string();
            query_words[offset + 2] = keywords[k_right].clone();

            let mut spans: Vec<CandidateSpan> = slots
                .iter()
                .map(|&s| CandidateSpan { start: s, end: s, text: passage_words[s].clone() })
                .collect();
            spans.sort_by_key(|c| c.start);
            out.push(ExampleRecord {
                id: format!("pattern-{split}-{n}"),
                passage: passage_words.join(" "),
                query: query_words.join(" "),
                candidates: spans,
                answers: vec![candidates[answer_cand].clone()],
            });
        }
        out
    };

    let train = make(spec.train_examples, "train", &mut rng);
    let dev = make(spec.dev_examples, "dev", &mut rng);
    Ok(SynthOutput { train, dev, kg, provenance: Vec::new() })
}

/// Distinct slots with at least two positions between any two, so candidate
/// neighborhoods never overlap.
fn pick_separated_slots(len: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    loop {
        let mut slots = BTreeSet::new();
        while slots.len() < count {
            slots.insert(rng.index(len));
        }
        let v: Vec<usize> = slots.into_iter().collect();
        let ok = v.windows(2).all(|w| w[1] - w[0] >= 3)
            && v.iter().any(|&s| s >= 1 && s + 1 < len);
        if ok {
            return v;
        }
    }
}

/// Brute-force property check for knowledge-hop outputs:
///
/// 1. every example's cue and answer word differ in lemma and are connected
///    in the companion KG (raw triple scan);
/// 2. the answer is the *only* candidate connected to the cue;
/// 3. no dev example's (cue, answer) word pair co-occurs in any training
///    example's text.
pub fn verify_knowledge_hop(out: &SynthOutput) -> Result<(), String> {
    let find = |id: &str| out.provenance.iter().find(|p| p.id == id);
    let connected_by_scan = |a: &str, b: &str| -> bool {
        let (Some(ia), Some(ib)) = (out.kg.entity_id(a), out.kg.entity_id(b)) else {
            return false;
        };
        out.kg
            .triples()
            .any(|&(h, _, t)| (h == ia && t == ib) || (h == ib && t == ia))
    };
    for (split, examples) in [("train", &out.train), ("dev", &out.dev)] {
        for ex in examples.iter() {
            let prov = find(&ex.id).ok_or(format!("{split} example {} missing provenance", ex.id))?;
            if crate::text::lemmatize(&prov.cue) == crate::text::lemmatize(&prov.answer) {
                return Err(format!("{}: cue and answer share a lemma", ex.id));
            }
            if !connected_by_scan(&prov.cue, &prov.answer) {
                return Err(format!("{}: cue and answer not connected in KG", ex.id));
            }
            if !ex.answers.contains(&prov.answer) {
                return Err(format!("{}: provenance answer not in answers", ex.id));
            }
            for cand in &ex.candidates {
                if cand.text != prov.answer && connected_by_scan(&prov.cue, &cand.text) {
                    return Err(format!(
                        "{}: distractor {} also connected to cue {}",
                        ex.id, cand.text, prov.cue
                    ));
                }
            }
        }
    }
    // Held-out pairs never co-occur in training text.
    for dev_ex in &out.dev {
        let prov = find(&dev_ex.id).ok_or("missing dev provenance")?;
        for train_ex in &out.train {
            let text = format!("{} {}", train_ex.query, train_ex.passage);
            let words: Vec<&str> = text.split_whitespace().collect();
            if words.contains(&prov.cue.as_str()) && words.contains(&prov.answer.as_str()) {
                return Err(format!(
                    "dev pair ({}, {}) co-occurs in training example {}",
                    prov.cue, prov.answer, train_ex.id
                ));
            }
        }
    }
    Ok(())
}
