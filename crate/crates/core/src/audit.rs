//! Automated validity checks on modeling windows.
//!
//! Both scans are heuristic surrogates for chart review: they produce a
//! review queue, not a verdict. The leakage scan looks for diagnosis
//! phrases already present in MDW text; the vasopressor scan looks for
//! in-window administrations of configured drug classes.

use std::collections::BTreeSet;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::text::tokenize;
use crate::window::ModelingDataset;

pub fn default_terms() -> Vec<String> {
    ["sepsis", "severe sepsis", "septic shock", "septicemia"]
        .into_iter()
        .map(str::to_string)
        .collect()
}

pub fn default_vasopressor_classes() -> Vec<String> {
    vec!["vasopressor".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedEncounter {
    pub encounter_id: String,
    /// Terms or drug classes that matched.
    pub matches: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub kind: String,
    pub audited: usize,
    pub flagged: Vec<FlaggedEncounter>,
    pub flagged_rate: f64,
    /// Fingerprint of the sorted term/class list the scan used.
    pub fingerprint: String,
}

fn list_fingerprint(items: &[String]) -> String {
    let mut sorted: Vec<&String> = items.iter().collect();
    sorted.sort();
    let mut hasher = Sha256::new();
    for item in sorted {
        hasher.update(item.as_bytes());
        hasher.update([0u8]);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// True when `phrase` appears in `tokens` as a contiguous token sequence.
fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return false;
    }
    tokens.windows(phrase.len()).any(|window| window == phrase)
}

/// Scans the audited encounters' MDW text for any of the terms, matched at
/// token boundaries ("sepsis" does not match "asepsis"). `top_ids` is the
/// audited set, normally the top-fraction predicted rows.
pub fn leakage_scan(
    dataset: &ModelingDataset,
    top_ids: &[String],
    terms: &[String],
) -> AuditReport {
    let audited: BTreeSet<&String> = top_ids.iter().collect();
    let term_tokens: Vec<(String, Vec<String>)> =
        terms.iter().map(|t| (t.clone(), tokenize(t))).collect();

    let mut flagged = Vec::new();
    for row in &dataset.rows {
        if !audited.contains(&row.encounter_id) {
            continue;
        }
        let tokens = tokenize(&crate::text::concatenated_text(&row.mdw));
        let matches: Vec<String> = term_tokens
            .iter()
            .filter(|(_, phrase)| contains_phrase(&tokens, phrase))
            .map(|(term, _)| term.clone())
            .collect();
        if !matches.is_empty() {
            flagged.push(FlaggedEncounter {
                encounter_id: row.encounter_id.clone(),
                matches,
            });
        }
    }
    let audited_count = audited.len();
    AuditReport {
        kind: "leakage".to_string(),
        audited: audited_count,
        flagged_rate: if audited_count == 0 {
            0.0
        } else {
            flagged.len() as f64 / audited_count as f64
        },
        flagged,
        fingerprint: list_fingerprint(terms),
    }
}

/// Flags every dataset row whose MDW contains a medication event in one of
/// the given drug classes.
pub fn vasopressor_scan(dataset: &ModelingDataset, drug_classes: &[String]) -> AuditReport {
    let classes: BTreeSet<&String> = drug_classes.iter().collect();
    let mut flagged = Vec::new();
    for row in &dataset.rows {
        let mut matches: Vec<String> = row
            .mdw
            .med_events
            .iter()
            .filter(|m| classes.contains(&m.drug_class))
            .map(|m| format!("{}:{}", m.drug_class, m.drug))
            .collect();
        if !matches.is_empty() {
            matches.sort();
            matches.dedup();
            flagged.push(FlaggedEncounter {
                encounter_id: row.encounter_id.clone(),
                matches,
            });
        }
    }
    let audited = dataset.rows.len();
    AuditReport {
        kind: "vasopressor".to_string(),
        audited,
        flagged_rate: if audited == 0 {
            0.0
        } else {
            flagged.len() as f64 / audited as f64
        },
        flagged,
        fingerprint: list_fingerprint(drug_classes),
    }
}
