//! The joint query-passage graph: query and passage words as nodes, with
//! knowledge edges (lemma-linked entities connected in the KG), coreference
//! edges (equal lemmas), and self-loops. All edges touching stopwords or
//! punctuation are excluded, self-loops included; such nodes pass through
//! graph layers on the highway path.

use crate::kg::KnowledgeGraph;
use crate::text::{Segment, Token};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeCategory {
    Knowledge,
    Coreference,
    SelfLoop,
}

/// Which edge categories a graph consumer sees; all on by default.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeMask {
    pub knowledge: bool,
    pub coreference: bool,
    pub self_loop: bool,
}

impl Default for EdgeMask {
    fn default() -> Self {
        EdgeMask { knowledge: true, coreference: true, self_loop: true }
    }
}

impl EdgeMask {
    pub fn allows(&self, category: EdgeCategory) -> bool {
        match category {
            EdgeCategory::Knowledge => self.knowledge,
            EdgeCategory::Coreference => self.coreference,
            EdgeCategory::SelfLoop => self.self_loop,
        }
    }

    pub fn only_self_loops() -> Self {
        EdgeMask { knowledge: false, coreference: false, self_loop: true }
    }
}

/// Node indices run over query tokens first, then passage tokens. Knowledge
/// and coreference edges are stored in both directions; self-loops once.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGraph {
    query_len: usize,
    passage_len: usize,
    eligible: Vec<bool>,
    edges: BTreeSet<(usize, usize, EdgeCategory)>,
}

impl JointGraph {
    /// Builds the graph for annotated query and passage tokens against `kg`.
    ///
    /// - knowledge edge: some entity linked to token `i` by lemma is
    ///   KG-connected to a *distinct* entity linked to token `j`;
    /// - coreference edge: equal lemmas, within or across segments;
    /// - self-loop: every eligible token.
    pub fn build(query: &[Token], passage: &[Token], kg: &KnowledgeGraph) -> JointGraph {
        let tokens: Vec<&Token> = query.iter().chain(passage.iter()).collect();
        let n = tokens.len();
        let eligible: Vec<bool> = tokens.iter().map(|t| t.is_eligible()).collect();
        let linked: Vec<BTreeSet<u32>> = tokens
            .iter()
            .zip(&eligible)
            .map(|(t, &ok)| if ok { kg.entities_by_lemma(&t.lemma) } else { BTreeSet::new() })
            .collect();

        let mut edges = BTreeSet::new();
        for i in 0..n {
            if !eligible[i] {
                continue;
            }
            edges.insert((i, i, EdgeCategory::SelfLoop));
            for j in i + 1..n {
                if !eligible[j] {
                    continue;
                }
                if tokens[i].lemma == tokens[j].lemma {
                    edges.insert((i, j, EdgeCategory::Coreference));
                    edges.insert((j, i, EdgeCategory::Coreference));
                }
                if has_knowledge_link(&linked[i], &linked[j], kg) {
                    edges.insert((i, j, EdgeCategory::Knowledge));
                    edges.insert((j, i, EdgeCategory::Knowledge));
                }
            }
        }
        JointGraph { query_len: query.len(), passage_len: passage.len(), eligible, edges }
    }

    pub fn node_count(&self) -> usize {
        self.query_len + self.passage_len
    }

    pub fn query_len(&self) -> usize {
        self.query_len
    }

    pub fn passage_len(&self) -> usize {
        self.passage_len
    }

    pub fn is_eligible(&self, node: usize) -> bool {
        self.eligible[node]
    }

    /// All directed edge records in deterministic order.
    pub fn edges(&self) -> impl Iterator<Item = &(usize, usize, EdgeCategory)> {
        self.edges.iter()
    }

    /// Undirected edge set of one category, as `(min, max)` pairs; self-loops
    /// appear as `(i, i)`.
    pub fn undirected_edges(&self, category: EdgeCategory) -> BTreeSet<(usize, usize)> {
        self.edges
            .iter()
            .filter(|(_, _, c)| *c == category)
            .map(|&(i, j, _)| (i.min(j), i.max(j)))
            .collect()
    }

    /// Sorted neighbor list per node under an edge-category mask.
    pub fn neighbor_sets(&self, mask: &EdgeMask) -> Vec<Vec<usize>> {
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.node_count()];
        for &(i, j, category) in &self.edges {
            if mask.allows(category) {
                sets[i].insert(j);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    pub fn contains(&self, i: usize, j: usize, category: EdgeCategory) -> bool {
        self.edges.contains(&(i, j, category))
    }
}

fn has_knowledge_link(a: &BTreeSet<u32>, b: &BTreeSet<u32>, kg: &KnowledgeGraph) -> bool {
    for &ea in a {
        for &eb in b {
            if ea != eb && kg.connected(ea, eb).unwrap_or(false) {
                return true;
            }
        }
    }
    false
}

/// Serializable dump of a joint graph with its tokens, for the CLI.
#[derive(Serialize, Deserialize)]
pub struct GraphDump {
    pub nodes: Vec<NodeDump>,
    pub edges: Vec<EdgeDump>,
}

#[derive(Serialize, Deserialize)]
pub struct NodeDump {
    pub index: usize,
    pub segment: Segment,
    pub surface: String,
    pub lemma: String,
    pub is_stop: bool,
    pub is_punct: bool,
}

#[derive(Serialize, Deserialize)]
pub struct EdgeDump {
    pub from: usize,
    pub to: usize,
    pub category: EdgeCategory,
}

impl GraphDump {
    pub fn new(query: &[Token], passage: &[Token], graph: &JointGraph) -> GraphDump {
        let nodes = query
            .iter()
            .chain(passage.iter())
            .enumerate()
            .map(|(index, t)| NodeDump {
                index,
                segment: t.segment,
                surface: t.surface.clone(),
                lemma: t.lemma.clone(),
                is_stop: t.is_stop,
                is_punct: t.is_punct,
            })
            .collect();
        let edges = graph
            .edges()
            .map(|&(from, to, category)| EdgeDump { from, to, category })
            .collect();
        GraphDump { nodes, edges }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Annotator;

    fn annotate(query: &str, passage: &str) -> (Vec<Token>, Vec<Token>) {
        let ann = Annotator::default();
        (ann.annotate(query, Segment::Query), ann.annotate(passage, Segment::Passage))
    }

    #[test]
    fn knowledge_edge_from_kg_connection() {
        let kg = KnowledgeGraph::from_triples(&[("dog", "RelatedTo", "canine")]);
        let (query, passage) = annotate("canine X", "dog barks");
        let g = JointGraph::build(&query, &passage, &kg);
        // Nodes: 0=canine 1=X 2=dog 3=barks.
        assert_eq!(
            g.undirected_edges(EdgeCategory::Knowledge),
            [(0, 2)].into_iter().collect()
        );
        assert!(g.undirected_edges(EdgeCategory::Coreference).is_empty());
        assert_eq!(
            g.undirected_edges(EdgeCategory::SelfLoop),
            [(0, 0), (1, 1), (2, 2), (3, 3)].into_iter().collect()
        );
    }

    #[test]
    fn coreference_across_segments_and_stopword_isolation() {
        let kg = KnowledgeGraph::default();
        let (query, passage) = annotate("dog", "the dog");
        let g = JointGraph::build(&query, &passage, &kg);
        // Nodes: 0=dog(query) 1=the 2=dog(passage).
        assert_eq!(
            g.undirected_edges(EdgeCategory::Coreference),
            [(0, 2)].into_iter().collect()
        );
        assert_eq!(
            g.undirected_edges(EdgeCategory::SelfLoop),
            [(0, 0), (2, 2)].into_iter().collect()
        );
        assert!(!g.is_eligible(1));
        assert!(g.neighbor_sets(&EdgeMask::default())[1].is_empty());
    }

    #[test]
    fn empty_inputs_give_empty_graph() {
        let kg = KnowledgeGraph::default();
        let g = JointGraph::build(&[], &[], &kg);
        assert_eq!(g.node_count(), 0);
        assert_eq!(g.edges().count(), 0);
    }

    #[test]
    fn coreference_within_a_segment_too() {
        let kg = KnowledgeGraph::default();
        let (query, passage) = annotate("", "dog sees dogs");
        let g = JointGraph::build(&query, &passage, &kg);
        // "dog" and "dogs" share the lemma dog.
        assert!(g.contains(0, 2, EdgeCategory::Coreference));
        assert!(g.contains(2, 0, EdgeCategory::Coreference));
    }

    #[test]
    fn same_linked_entity_does_not_create_knowledge_edge() {
        // Both tokens link to the single entity "dog"; no distinct connected
        // pair exists, so only the coreference edge appears.
        let kg = KnowledgeGraph::from_triples(&[("dog", "IsA", "animal")]);
        let (query, passage) = annotate("dog", "dog");
        let g = JointGraph::build(&query, &passage, &kg);
        assert!(g.undirected_edges(EdgeCategory::Knowledge).is_empty());
        assert!(g.contains(0, 1, EdgeCategory::Coreference));
    }

    #[test]
    fn distinct_entities_same_lemma_can_knowledge_link() {
        // "dog" and "dogs" are distinct entities with a connecting triple, so
        // the two tokens get a knowledge edge on top of coreference.
        let kg = KnowledgeGraph::from_triples(&[("dog", "FormOf", "dogs")]);
        let (query, passage) = annotate("dog", "dogs");
        let g = JointGraph::build(&query, &passage, &kg);
        assert!(g.contains(0, 1, EdgeCategory::Knowledge));
        assert!(g.contains(0, 1, EdgeCategory::Coreference));
    }

    #[test]
    fn edge_mask_filters_neighbor_sets() {
        let kg = KnowledgeGraph::from_triples(&[("dog", "RelatedTo", "canine")]);
        let (query, passage) = annotate("canine", "dog dog");
        let g = JointGraph::build(&query, &passage, &kg);
        let full = g.neighbor_sets(&EdgeMask::default());
        assert_eq!(full[0], vec![0, 1, 2]);
        let self_only = g.neighbor_sets(&EdgeMask::only_self_loops());
        assert_eq!(self_only[0], vec![0]);
        let no_knowledge =
            g.neighbor_sets(&EdgeMask { knowledge: false, ..EdgeMask::default() });
        assert_eq!(no_knowledge[0], vec![0]);
        assert_eq!(no_knowledge[1], vec![1, 2]);
    }

    #[test]
    fn eligible_nodes_have_exactly_one_self_loop() {
        let kg = KnowledgeGraph::default();
        let (query, passage) = annotate("dog in house", "the cat , sat");
        let g = JointGraph::build(&query, &passage, &kg);
        let tokens_eligible: Vec<bool> = (0..g.node_count()).map(|i| g.is_eligible(i)).collect();
        for (i, ok) in tokens_eligible.iter().enumerate() {
            let loops = g.edges().filter(|&&(a, b, c)| a == i && b == i && c == EdgeCategory::SelfLoop).count();
            assert_eq!(loops, usize::from(*ok), "node {i}");
        }
    }

    #[test]
    fn no_edge_touches_ineligible_nodes() {
        let kg = KnowledgeGraph::from_triples(&[("the", "r", "cat"), ("a", "r", "the")]);
        let (query, passage) = annotate("the cat", "a cat the");
        let g = JointGraph::build(&query, &passage, &kg);
        for &(i, j, _) in g.edges() {
            assert!(g.is_eligible(i) && g.is_eligible(j));
        }
    }

    #[test]
    fn dump_is_deterministic() {
        let kg = KnowledgeGraph::from_triples(&[("dog", "RelatedTo", "canine")]);
        let (query, passage) = annotate("canine X", "dog barks");
        let g = JointGraph::build(&query, &passage, &kg);
        let d1 = serde_json::to_string(&GraphDump::new(&query, &passage, &g)).unwrap();
        let d2 = serde_json::to_string(&GraphDump::new(&query, &passage, &g)).unwrap();
        assert_eq!(d1, d2);
        assert!(d1.contains("\"knowledge\""));
    }
}
