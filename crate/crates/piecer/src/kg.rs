//! ConceptNet-style knowledge graph store.
//!
//! Triples load from a UTF-8 text stream, one `head TAB relation TAB tail`
//! per line (`#` lines are comments). Entity and relation ids are dense
//! integers in first-appearance order, so reloading a saved graph reproduces
//! identical ids. Connectivity ignores relation direction and type: the pair
//! index holds `(a, b)` iff some triple links `a` and `b` either way.

use crate::text::lemma_of_entity_name;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;
use thiserror::Error;

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: expected head<TAB>relation<TAB>tail, got {found} fields")]
    Malformed { line: usize, found: usize },
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("graph manifest: {0}")]
    Manifest(String),
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entity_names: Vec<String>,
    entity_ids: HashMap<String, u32>,
    relation_names: Vec<String>,
    relation_ids: HashMap<String, u32>,
    triples: BTreeSet<(u32, u32, u32)>,
    lemma_index: HashMap<String, BTreeSet<u32>>,
    pair_index: HashSet<(u32, u32)>,
}

impl KnowledgeGraph {
    /// Parses a triple stream. Duplicate lines collapse (set semantics);
    /// malformed lines fail with their 1-based line number. An empty stream
    /// yields a valid empty graph.
    pub fn load_triples<R: BufRead>(reader: R) -> Result<Self, KgError> {
        let mut g = KnowledgeGraph::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(KgError::Malformed { line: idx + 1, found: fields.len() });
            }
            let h = g.intern_entity(fields[0].trim());
            let r = g.intern_relation(fields[1].trim());
            let t = g.intern_entity(fields[2].trim());
            g.insert_triple(h, r, t);
        }
        Ok(g)
    }

    pub fn load_triples_path(path: &std::path::Path) -> Result<Self, KgError> {
        let file = std::fs::File::open(path)?;
        Self::load_triples(std::io::BufReader::new(file))
    }

    /// Builds a graph from in-memory name triples, for tests and generators.
    pub fn from_triples<S: AsRef<str>>(triples: &[(S, S, S)]) -> Self {
        let mut g = KnowledgeGraph::default();
        for (h, r, t) in triples {
            let h = g.intern_entity(h.as_ref());
            let r = g.intern_relation(r.as_ref());
            let t = g.intern_entity(t.as_ref());
            g.insert_triple(h, r, t);
        }
        g
    }

    fn intern_entity(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = self.entity_names.len() as u32;
        self.entity_names.push(name.to_string());
        self.entity_ids.insert(name.to_string(), id);
        if let Some(lemma) = lemma_of_entity_name(name) {
            self.lemma_index.entry(lemma).or_default().insert(id);
        }
        id
    }

    fn intern_relation(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.relation_ids.get(name) {
            return id;
        }
        let id = self.relation_names.len() as u32;
        self.relation_names.push(name.to_string());
        self.relation_ids.insert(name.to_string(), id);
        id
    }

    fn insert_triple(&mut self, h: u32, r: u32, t: u32) {
        if self.triples.insert((h, r, t)) {
            self.pair_index.insert((h, t));
            self.pair_index.insert((t, h));
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entity_names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entity_id(&self, name: &str) -> Option<u32> {
        self.entity_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: u32) -> Option<&str> {
        self.entity_names.get(id as usize).map(|s| s.as_str())
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// Deterministically ordered triples in id form.
    pub fn triples(&self) -> impl Iterator<Item = &(u32, u32, u32)> {
        self.triples.iter()
    }

    pub fn contains_triple(&self, h: u32, r: u32, t: u32) -> bool {
        self.triples.contains(&(h, r, t))
    }

    /// All unigram entities whose lemmatized name equals `lemma`.
    pub fn entities_by_lemma(&self, lemma: &str) -> BTreeSet<u32> {
        self.lemma_index.get(lemma).cloned().unwrap_or_default()
    }

    fn check_entity(&self, id: u32) -> Result<(), KgError> {
        if (id as usize) < self.entity_names.len() {
            Ok(())
        } else {
            Err(KgError::UnknownEntity(id))
        }
    }

    /// True iff some triple links `a` and `b` in either direction; relation
    /// labels are ignored.
    pub fn connected(&self, a: u32, b: u32) -> Result<bool, KgError> {
        self.check_entity(a)?;
        self.check_entity(b)?;
        Ok(self.pair_index.contains(&(a, b)))
    }

    /// Every entity connected to `a`.
    pub fn neighbors(&self, a: u32) -> Result<BTreeSet<u32>, KgError> {
        self.check_entity(a)?;
        let mut out = BTreeSet::new();
        for &(h, _, t) in &self.triples {
            if h == a {
                out.insert(t);
            }
            if t == a {
                out.insert(h);
            }
        }
        Ok(out)
    }

    /// Serializes vocabulary and triples as a versioned manifest.
    pub fn save(&self) -> String {
        let manifest = GraphManifest {
            format_version: GRAPH_FORMAT_VERSION,
            entities: self.entity_names.clone(),
            relations: self.relation_names.clone(),
            triples: self.triples.iter().map(|&(h, r, t)| [h, r, t]).collect(),
        };
        serde_json::to_string_pretty(&manifest).expect("manifest is serializable")
    }

    pub fn load_manifest(text: &str) -> Result<Self, KgError> {
        let manifest: GraphManifest =
            serde_json::from_str(text).map_err(|e| KgError::Manifest(e.to_string()))?;
        if manifest.format_version != GRAPH_FORMAT_VERSION {
            return Err(KgError::Manifest(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let mut g = KnowledgeGraph::default();
        for name in &manifest.entities {
            g.intern_entity(name);
        }
        for name in &manifest.relations {
            g.intern_relation(name);
        }
        for [h, r, t] in manifest.triples {
            if (h as usize) >= g.entity_names.len()
                || (t as usize) >= g.entity_names.len()
                || (r as usize) >= g.relation_names.len()
            {
                return Err(KgError::Manifest(format!("triple ({h},{r},{t}) out of range")));
            }
            g.insert_triple(h, r, t);
        }
        Ok(g)
    }

    /// Triple-count histogram per relation id.
    pub fn relation_histogram(&self) -> BTreeMap<u32, usize> {
        let mut hist = BTreeMap::new();
        for &(_, r, _) in &self.triples {
            *hist.entry(r).or_insert(0) += 1;
        }
        hist
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphManifest {
    format_version: u32,
    entities: Vec<String>,
    relations: Vec<String>,
    triples: Vec<[u32; 3]>,
}
