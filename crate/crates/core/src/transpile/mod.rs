//! SQL -> tool formulations, plus the execution-equivalence check that decides
//! which instances are kept.

pub mod rest;
pub mod sel;
pub mod slot;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::normalize::{normalize_answer, Leaf};
use crate::pool::Formulation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub sample_id: usize,
    pub formulation: Formulation,
    pub matched: bool,
    pub normalized_gold: Vec<Leaf>,
    pub normalized_actual: Vec<Leaf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discard_reason: Option<String>,
}

/// Compares an executed artifact against the SQL answer.
pub fn verify_equivalence(
    sample_id: usize,
    formulation: Formulation,
    gold: &Value,
    actual: Result<Value, String>,
) -> VerificationRecord {
    let normalized_gold = normalize_answer(gold);
    match actual {
        Ok(v) => {
            let normalized_actual = normalize_answer(&v);
            let matched = normalized_actual == normalized_gold;
            VerificationRecord {
                sample_id,
                formulation,
                matched,
                normalized_gold,
                normalized_actual,
                discard_reason: (!matched).then(|| "ResultMismatch".to_string()),
            }
        }
        Err(e) => VerificationRecord {
            sample_id,
            formulation,
            matched: false,
            normalized_gold,
            normalized_actual: Vec::new(),
            discard_reason: Some(format!("ExecutionError: {e}")),
        },
    }
}
