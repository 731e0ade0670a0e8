//! Tokenization, rule-based lemmatization, and token annotation.
//!
//! The tokenizer splits on whitespace and then detaches leading/trailing
//! punctuation characters as separate tokens. The lemmatizer lowercases,
//! consults an irregular-form table, and then applies ordered suffix rules;
//! it is idempotent by construction. Stopword and punctuation inventories are
//! bundled as data files and overridable through [`Annotator`].

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

const STOPWORDS: &str = include_str!("../data/stopwords.txt");
const PUNCTUATION: &str = include_str!("../data/punctuation.txt");

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Query,
    Passage,
}

/// One word of a passage or query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub lemma: String,
    pub is_stop: bool,
    pub is_punct: bool,
    pub segment: Segment,
    /// 0-based index within the token's own segment.
    pub position: usize,
}

impl Token {
    /// Eligible tokens participate in joint-graph edges.
    pub fn is_eligible(&self) -> bool {
        !self.is_stop && !self.is_punct
    }
}

/// Whitespace split followed by detaching leading/trailing punctuation
/// characters, each as its own token. Character order is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let punct: HashSet<char> = PUNCTUATION.chars().collect();
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        let mut leading = Vec::new();
        while start < end && punct.contains(&chars[start]) {
            leading.push(chars[start].to_string());
            start += 1;
        }
        let mut trailing = Vec::new();
        while end > start && punct.contains(&chars[end - 1]) {
            trailing.push(chars[end - 1].to_string());
            end -= 1;
        }
        out.extend(leading);
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        trailing.reverse();
        out.extend(trailing);
    }
    out
}

/// Irregular surface form -> lemma, consulted after lowercasing and before
/// the suffix rules. Kept sorted for binary search.
const IRREGULAR: &[(&str, &str)] = &[
    ("am", "be"),
    ("are", "be"),
    ("ate", "eat"),
    ("been", "be"),
    ("began", "begin"),
    ("begun", "begin"),
    ("being", "be"),
    ("bought", "buy"),
    ("broke", "break"),
    ("broken", "break"),
    ("brought", "bring"),
    ("built", "build"),
    ("came", "come"),
    ("caught", "catch"),
    ("children", "child"),
    ("chose", "choose"),
    ("chosen", "choose"),
    ("did", "do"),
    ("done", "do"),
    ("driven", "drive"),
    ("drove", "drive"),
    ("eaten", "eat"),
    ("fallen", "fall"),
    ("feet", "foot"),
    ("fell", "fall"),
    ("felt", "feel"),
    ("flew", "fly"),
    ("flown", "fly"),
    ("fought", "fight"),
    ("found", "find"),
    ("gave", "give"),
    ("geese", "goose"),
    ("given", "give"),
    ("gone", "go"),
    ("got", "get"),
    ("gotten", "get"),
    ("grew", "grow"),
    ("grown", "grow"),
    ("had", "have"),
    ("has", "have"),
    ("heard", "hear"),
    ("held", "hold"),
    ("hid", "hide"),
    ("hidden", "hide"),
    ("is", "be"),
    ("kept", "keep"),
    ("knew", "know"),
    ("known", "know"),
    ("led", "lead"),
    ("left", "leave"),
    ("lost", "lose"),
    ("made", "make"),
    ("meant", "mean"),
    ("men", "man"),
    ("met", "meet"),
    ("mice", "mouse"),
    ("paid", "pay"),
    ("people", "person"),
    ("ran", "run"),
    ("ridden", "ride"),
    ("risen", "rise"),
    ("rode", "ride"),
    ("rose", "rise"),
    ("said", "say"),
    ("sang", "sing"),
    ("sat", "sit"),
    ("saw", "see"),
    ("seen", "see"),
    ("sent", "send"),
    ("shot", "shoot"),
    ("slept", "sleep"),
    ("sold", "sell"),
    ("sought", "seek"),
    ("spent", "spend"),
    ("spoke", "speak"),
    ("spoken", "speak"),
    ("stole", "steal"),
    ("stolen", "steal"),
    ("stood", "stand"),
    ("struck", "strike"),
    ("sung", "sing"),
    ("swam", "swim"),
    ("swum", "swim"),
    ("taken", "take"),
    ("taught", "teach"),
    ("teeth", "tooth"),
    ("thought", "think"),
    ("threw", "throw"),
    ("thrown", "throw"),
    ("told", "tell"),
    ("took", "take"),
    ("tore", "tear"),
    ("torn", "tear"),
    ("understood", "understand"),
    ("was", "be"),
    ("went", "go"),
    ("were", "be"),
    ("woke", "wake"),
    ("woken", "wake"),
    ("women", "woman"),
    ("won", "win"),
    ("wore", "wear"),
    ("worn", "wear"),
    ("written", "write"),
    ("wrote", "write"),
];

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Doubled final consonants that are legitimate English endings are kept when
/// repairing an -ing/-ed strip ("falling" -> "fall"); the rest drop one
/// letter ("running" -> "run").
fn repair_doubling(word: &mut String) {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    if n < 3 {
        return;
    }
    let (a, b) = (chars[n - 2], chars[n - 1]);
    if a == b && !is_vowel(b) && !matches!(b, 'l' | 's' | 'f' | 'z') {
        word.pop();
    }
}

fn has_vowel(word: &str) -> bool {
    word.chars().any(is_vowel)
}

/// Lowercase, irregular-form table, then ordered suffix rules. Idempotent.
pub fn lemmatize(surface: &str) -> String {
    let lower = surface.to_lowercase();
    if let Ok(idx) = IRREGULAR.binary_search_by_key(&lower.as_str(), |(from, _)| from) {
        return IRREGULAR[idx].1.to_string();
    }
    if !lower.chars().all(|c| c.is_alphabetic()) {
        return lower;
    }
    let n = lower.len();
    if let Some(stem) = lower.strip_suffix("sses") {
        return format!("{stem}ss");
    }
    if n >= 5 {
        if let Some(stem) = lower.strip_suffix("ies") {
            return format!("{stem}y");
        }
    }
    if n >= 6 {
        if let Some(stem) = lower.strip_suffix("ing") {
            if has_vowel(stem) {
                let mut word = stem.to_string();
                repair_doubling(&mut word);
                return word;
            }
        }
    }
    if n >= 5 {
        if let Some(stem) = lower.strip_suffix("ed") {
            if has_vowel(stem) {
                let mut word = stem.to_string();
                repair_doubling(&mut word);
                return word;
            }
        }
    }
    if n >= 3
        && lower.ends_with('s')
        && !lower.ends_with("ss")
        && !lower.ends_with("us")
        && !lower.ends_with("is")
    {
        return lower[..n - 1].to_string();
    }
    lower
}

/// Fills lemma and stopword/punctuation flags on raw surfaces. The default
/// inventories come from the bundled data files.
#[derive(Clone, Debug)]
pub struct Annotator {
    stopwords: HashSet<String>,
    punctuation: HashSet<char>,
}

impl Default for Annotator {
    fn default() -> Self {
        Annotator {
            stopwords: STOPWORDS
                .lines()
                .map(|w| w.trim().to_string())
                .filter(|w| !w.is_empty())
                .collect(),
            punctuation: PUNCTUATION.chars().collect(),
        }
    }
}

impl Annotator {
    pub fn with_inventories(stopwords: HashSet<String>, punctuation: HashSet<char>) -> Self {
        Annotator { stopwords, punctuation }
    }

    pub fn is_stopword(&self, surface: &str) -> bool {
        self.stopwords.contains(&surface.to_lowercase())
    }

    pub fn is_punctuation(&self, surface: &str) -> bool {
        !surface.is_empty() && surface.chars().all(|c| self.punctuation.contains(&c))
    }

    /// Annotates pre-split surfaces, assigning consecutive positions.
    pub fn annotate_surfaces(&self, surfaces: &[String], segment: Segment) -> Vec<Token> {
        surfaces
            .iter()
            .enumerate()
            .map(|(position, surface)| self.token(surface, segment, position))
            .collect()
    }

    /// Tokenizes and annotates a raw text.
    pub fn annotate(&self, text: &str, segment: Segment) -> Vec<Token> {
        self.annotate_surfaces(&tokenize(text), segment)
    }

    pub fn token(&self, surface: &str, segment: Segment, position: usize) -> Token {
        let is_punct = self.is_punctuation(surface);
        let lemma = if is_punct { surface.to_lowercase() } else { lemmatize(surface) };
        Token {
            surface: surface.to_string(),
            lemma,
            is_stop: self.is_stopword(surface),
            is_punct,
            segment,
            position,
        }
    }
}

/// Lemma of a KG entity name, or `None` for multi-word names (underscore or
/// space separated), which are excluded from unigram retrieval.
pub fn lemma_of_entity_name(name: &str) -> Option<String> {
    if name.is_empty() || name.contains('_') || name.contains(' ') {
        return None;
    }
    Some(lemmatize(name))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_detaches_trailing_punctuation() {
        assert_eq!(tokenize("Tad Cummins,"), vec!["Tad", "Cummins", ","]);
    }

    #[test]
    fn tokenize_empty_and_single() {
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("X"), vec!["X"]);
    }

    #[test]
    fn tokenize_detaches_nested_punctuation_in_order() {
        assert_eq!(tokenize("(hello)!"), vec!["(", "hello", ")", "!"]);
        assert_eq!(tokenize("\u{201c}ok\u{201d}"), vec!["\u{201c}", "ok", "\u{201d}"]);
    }

    #[test]
    fn tokenize_keeps_internal_punctuation() {
        assert_eq!(tokenize("don't stop-gap"), vec!["don't", "stop-gap"]);
    }

    #[test]
    fn lemmatize_regular_forms() {
        assert_eq!(lemmatize("arrested"), "arrest");
        assert_eq!(lemmatize("dog"), "dog");
        assert_eq!(lemmatize("Dogs"), "dog");
        assert_eq!(lemmatize("running"), "run");
        assert_eq!(lemmatize("falling"), "fall");
        assert_eq!(lemmatize("stories"), "story");
        assert_eq!(lemmatize("passes"), "pass");
        assert_eq!(lemmatize("classes"), "class");
    }

    #[test]
    fn lemmatize_irregular_forms() {
        assert_eq!(lemmatize("taken"), "take");
        assert_eq!(lemmatize("Went"), "go");
        assert_eq!(lemmatize("children"), "child");
    }

    #[test]
    fn lemmatize_guards_short_and_s_endings() {
        assert_eq!(lemmatize("pass"), "pass");
        assert_eq!(lemmatize("bus"), "bus");
        assert_eq!(lemmatize("this"), "this");
        assert_eq!(lemmatize("sing"), "sing");
    }

    #[test]
    fn lemmatize_is_idempotent_on_a_wordlist() {
        for word in [
            "arrested", "dogs", "running", "stories", "passes", "taken", "went", "cats",
            "kidnapping", "custody", "cabins", "hostages", "stopped", "classes", "flies",
        ] {
            let once = lemmatize(word);
            assert_eq!(lemmatize(&once), once, "not idempotent on {word}");
        }
    }

    #[test]
    fn irregular_table_is_sorted_for_binary_search() {
        for pair in IRREGULAR.windows(2) {
            assert!(pair[0].0 < pair[1].0, "table out of order near {:?}", pair[1].0);
        }
    }

    #[test]
    fn annotator_flags_stopwords_and_punctuation() {
        let ann = Annotator::default();
        let tokens = ann.annotate("The dog barks .", Segment::Passage);
        assert!(tokens[0].is_stop);
        assert!(!tokens[1].is_stop);
        assert!(tokens[3].is_punct);
        assert_eq!(tokens[1].lemma, "dog");
        assert_eq!(tokens[2].lemma, "bark");
        let positions: Vec<usize> = tokens.iter().map(|t| t.position).collect();
        assert_eq!(positions, vec![0, 1, 2, 3]);
    }

    #[test]
    fn lemmas_are_lowercase_and_nonempty_for_words() {
        let ann = Annotator::default();
        for tok in ann.annotate("Dogs BARKED Loudly!", Segment::Query) {
            if !tok.is_punct {
                assert!(!tok.lemma.is_empty());
                assert_eq!(tok.lemma, tok.lemma.to_lowercase());
            }
        }
    }

    #[test]
    fn entity_name_lemmas_exclude_multiword() {
        assert_eq!(lemma_of_entity_name("dog"), Some("dog".into()));
        assert_eq!(lemma_of_entity_name("dogs"), Some("dog".into()));
        assert_eq!(lemma_of_entity_name("dog_house"), None);
        assert_eq!(lemma_of_entity_name("dog house"), None);
    }
}
