//! Order-preserving alignment of predicted and gold calls, and the intent and
//! slot scores computed from it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::normalize::{normalize_answer, Leaf};
use crate::runtime::{effective_label, reference_name, ToolCall, STARTING_TABLE};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gold: Vec<usize>,
}

/// Longest common subsequence over names. Among optimal alignments the one
/// pairing the earliest prediction with the earliest gold call is chosen.
pub fn align_names<S: AsRef<str>>(pred: &[S], gold: &[S]) -> AlignmentResult {
    let (n, m) = (pred.len(), gold.len());
    // best[i][j] = LCS of pred[i..] and gold[j..]
    let mut best = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            best[i][j] = if pred[i].as_ref() == gold[j].as_ref() {
                best[i + 1][j + 1] + 1
            } else {
                best[i + 1][j].max(best[i][j + 1])
            };
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if pred[i].as_ref() == gold[j].as_ref() && best[i][j] == best[i + 1][j + 1] + 1 {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if best[i][j + 1] == best[i][j] {
            j += 1;
        } else {
            i += 1;
        }
    }
    let unmatched_pred = (0..n).filter(|p| !pairs.iter().any(|&(a, _)| a == *p)).collect();
    let unmatched_gold = (0..m).filter(|g| !pairs.iter().any(|&(_, b)| b == *g)).collect();
    AlignmentResult { pairs, unmatched_pred, unmatched_gold }
}

pub fn align_sequences(pred: &[ToolCall], gold: &[ToolCall]) -> AlignmentResult {
    let p: Vec<&str> = pred.iter().map(|c| c.name.as_str()).collect();
    let g: Vec<&str> = gold.iter().map(|c| c.name.as_str()).collect();
    align_names(&p, &g)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(hits: usize, predicted: usize, expected: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Prf::new(ratio(hits, predicted), ratio(hits, expected))
    }

    pub fn new(precision: f64, recall: f64) -> Prf {
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1 }
    }

    pub fn mean(items: &[Prf]) -> Prf {
        if items.is_empty() {
            return Prf::default();
        }
        let n = items.len() as f64;
        Prf {
            precision: items.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: items.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: items.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    }
}

pub fn intent_metrics(a: &AlignmentResult, n_pred: usize, n_gold: usize) -> Prf {
    Prf::from_counts(a.pairs.len(), n_pred, n_gold)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCounts {
    pub hits: usize,
    pub predicted: usize,
    pub expected: usize,
    pub pairs: usize,
}

impl SlotCounts {
    /// Matched pairs with no arguments on either side agree fully.
    pub fn prf(&self) -> Prf {
        if self.pairs > 0 && self.predicted == 0 && self.expected == 0 {
            return Prf::new(1.0, 1.0);
        }
        Prf::from_counts(self.hits, self.predicted, self.expected)
    }

    pub fn zero_pair(&self) -> bool {
        self.pairs == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum SlotValue {
    Ref(String),
    Plain(Vec<Leaf>),
}

/// Maps labels to the position that produced them, keyed in gold coordinates
/// where the producer is matched.
fn producers(calls: &[ToolCall], to_gold: impl Fn(usize) -> Option<usize>, side: &str) -> HashMap<String, String> {
    let mut out = HashMap::new();
    out.insert(STARTING_TABLE.to_string(), "@start".to_string());
    for (i, c) in calls.iter().enumerate() {
        let id = to_gold(i).map(|g| format!("@{g}")).unwrap_or_else(|| format!("@{side}:{i}"));
        out.insert(effective_label(c, i), id);
    }
    out
}

fn canonical(value: &Value, labels: &HashMap<String, String>) -> SlotValue {
    if let Value::String(s) = value {
        let t = s.trim();
        if t.len() > 2 && t.starts_with('$') && t.ends_with('$') {
            let name = reference_name(t);
            if let Some(id) = labels.get(name) {
                return SlotValue::Ref(id.clone());
            }
        }
    }
    SlotValue::Plain(normalize_answer(value))
}

/// Key-value agreement over matched pairs. References compare by the position
/// of the producing call, so label spellings never matter.
pub fn slot_metrics(a: &AlignmentResult, pred: &[ToolCall], gold: &[ToolCall]) -> SlotCounts {
    let p2g: HashMap<usize, usize> = a.pairs.iter().copied().collect();
    let pred_labels = producers(pred, |i| p2g.get(&i).copied(), "pred");
    let gold_labels = producers(gold, Some, "gold");
    let mut counts = SlotCounts { pairs: a.pairs.len(), ..Default::default() };
    for &(pi, gi) in &a.pairs {
        let p = &pred[pi].arguments;
        let g = &gold[gi].arguments;
        counts.predicted += p.len();
        counts.expected += g.len();
        counts.hits += p
            .iter()
            .filter(|(k, v)| g.get(*k).is_some_and(|gv| canonical(v, &pred_labels) == canonical(gv, &gold_labels)))
            .count();
    }
    counts
}
