//! Exact-match and token-overlap F1, computed after answer normalization.
//!
//! Normalization lowercases, strips punctuation characters, removes the
//! articles a/an/the as whole tokens, and collapses whitespace. F1 is the
//! bag-of-tokens (multiset) overlap `2c / (|pred| + |gold|)`; both metrics
//! take the max over the gold answers.

use std::collections::HashMap;

const PUNCTUATION: &str = include_str!("../data/punctuation.txt");
const ARTICLES: [&str; 3] = ["a", "an", "the"];

pub fn normalize_answer(text: &str) -> String {
    let punct: std::collections::HashSet<char> = PUNCTUATION.chars().collect();
    let lowered: String = text.to_lowercase().chars().filter(|c| !punct.contains(c)).collect();
    lowered
        .split_whitespace()
        .filter(|tok| !ARTICLES.contains(tok))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_counts(text: &str) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for tok in text.split_whitespace() {
        *counts.entry(tok).or_insert(0) += 1;
    }
    counts
}

/// F1 between two already-normalized strings.
fn f1_normalized(pred: &str, gold: &str) -> f64 {
    let pred_counts = token_counts(pred);
    let gold_counts = token_counts(gold);
    let pred_len: usize = pred_counts.values().sum();
    let gold_len: usize = gold_counts.values().sum();
    if pred_len == 0 || gold_len == 0 {
        // Both empty is a match, one empty is not.
        return if pred_len == gold_len { 1.0 } else { 0.0 };
    }
    let common: usize = pred_counts
        .iter()
        .map(|(tok, &c)| c.min(*gold_counts.get(tok).unwrap_or(&0)))
        .sum();
    if common == 0 {
        return 0.0;
    }
    // Algebraically 2PR/(P+R) with P = c/|pred|, R = c/|gold|.
    2.0 * common as f64 / (pred_len + gold_len) as f64
}

/// `(em, f1)` of a prediction against the gold answers: max over golds.
pub fn em_f1(prediction: &str, golds: &[String]) -> (u8, f64) {
    assert!(!golds.is_empty(), "at least one gold answer required");
    let pred = normalize_answer(prediction);
    let mut em = 0u8;
    let mut f1 = 0.0f64;
    for gold in golds {
        let gold = normalize_answer(gold);
        if pred == gold {
            em = 1;
        }
        f1 = f1.max(f1_normalized(&pred, &gold));
    }
    (em, f1)
}

/// Mean EM and F1 over per-example `(em, f1)` pairs.
pub fn aggregate(per_example: &[(u8, f64)]) -> (f64, f64) {
    if per_example.is_empty() {
        return (0.0, 0.0);
    }
    let n = per_example.len() as f64;
    let em: f64 = per_example.iter().map(|(e, _)| *e as f64).sum::<f64>() / n;
    let f1: f64 = per_example.iter().map(|(_, f)| *f).sum::<f64>() / n;
    (em, f1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_strips_articles_and_punctuation() {
        assert_eq!(normalize_answer("The cat."), "cat");
        assert_eq!(normalize_answer("cat"), "cat");
        assert_eq!(normalize_answer("A  An the"), "");
        assert_eq!(normalize_answer("U.S. law!"), "us law");
    }

    #[test]
    fn normalize_is_idempotent() {
        for s in ["The cat.", "A  An the", "Tad Cummins,", "don't PANIC!"] {
            let once = normalize_answer(s);
            assert_eq!(normalize_answer(&once), once);
        }
    }

    #[test]
    fn exact_and_disjoint() {
        assert_eq!(em_f1("Tad Cummins", &["Tad Cummins".into()]), (1, 1.0));
        assert_eq!(em_f1("Elizabeth Thomas", &["Tad Cummins".into()]), (0, 0.0));
    }

    #[test]
    fn partial_overlap_is_exactly_point_eight() {
        let (em, f1) = em_f1("kidnapper Tad Cummins", &["Tad Cummins".into()]);
        assert_eq!(em, 0);
        assert_eq!(f1, 0.8);
    }

    #[test]
    fn max_over_golds() {
        let golds = vec!["wrong answer".to_string(), "right one".to_string()];
        let (em, f1) = em_f1("right one", &golds);
        assert_eq!((em, f1), (1, 1.0));
    }

    #[test]
    fn em_implies_full_f1() {
        let cases = [
            ("The cat", vec!["cat.".to_string()]),
            ("a dog", vec!["dog".to_string(), "cat".to_string()]),
        ];
        for (pred, golds) in cases {
            let (em, f1) = em_f1(pred, &golds);
            if em == 1 {
                assert_eq!(f1, 1.0);
            }
        }
    }

    #[test]
    fn multiset_counting() {
        // pred {dog:2, barks:1}, gold {dog:1, barks:1} -> common 2, f1 = 4/5.
        let (_, f1) = em_f1("dog dog barks", &["dog barks".into()]);
        assert_eq!(f1, 0.8);
    }

    #[test]
    fn aggregate_is_plain_mean() {
        let agg = aggregate(&[(1, 1.0), (0, 0.5)]);
        assert_eq!(agg, (0.5, 0.75));
        assert_eq!(aggregate(&[(0, 0.8)]), (0.0, 0.8));
    }
}
