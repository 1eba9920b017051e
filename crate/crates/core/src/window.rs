//! Leakage-safe Modeling Data Windows (MDWs) and dataset assembly.
//!
//! Every row is anchored: positives at their SSDT, negatives at a seeded
//! uniform-random minute of their stay. The MDW keeps only events at or
//! before anchor − horizon, so nothing within the prediction horizon can
//! reach the features.

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use std::collections::BTreeMap;

use crate::cohort::{ClinicalNote, Cohort, Encounter, Measurement, MedicationEvent};
use crate::label::LabelOutcome;

#[derive(Debug, thiserror::Error)]
pub enum WindowError {
    #[error("no encounter has labels computed for id {0}")]
    MissingLabel(String),
    #[error(
        "dataset is empty at horizon {horizon_hours}h with modality {modality:?}: \
         every row was dropped"
    )]
    EmptyDataset {
        horizon_hours: f64,
        modality: ModalityRequirement,
    },
    #[error("horizon_hours must be a non-negative finite number, got {0}")]
    BadHorizon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    Ssdt,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anchor {
    #[serde(with = "crate::timestamps::ts")]
    pub time: DateTime<Utc>,
    pub kind: AnchorKind,
}

/// Which feature modalities a row must have data for to stay in the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityRequirement {
    Text,
    Structured,
    Both,
}

impl ModalityRequirement {
    pub fn needs_text(self) -> bool {
        matches!(self, ModalityRequirement::Text | ModalityRequirement::Both)
    }

    pub fn needs_structured(self) -> bool {
        matches!(
            self,
            ModalityRequirement::Structured | ModalityRequirement::Both
        )
    }
}

/// Events of one encounter truncated to anchor − horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelingDataWindow {
    pub encounter_id: String,
    pub horizon_hours: f64,
    pub cutoff: DateTime<Utc>,
    pub notes: Vec<ClinicalNote>,
    pub measurements: Vec<Measurement>,
    pub med_events: Vec<MedicationEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub encounter_id: String,
    pub admit_time: DateTime<Utc>,
    pub anchor: Anchor,
    pub mdw: ModelingDataWindow,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropStats {
    pub input_encounters: usize,
    pub kept: usize,
    pub dropped_missing_text: usize,
    pub dropped_missing_structured: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelingDataset {
    pub rows: Vec<DatasetRow>,
    pub horizon_hours: f64,
    pub modality: ModalityRequirement,
    pub drop_stats: DropStats,
}

impl ModelingDataset {
    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.label).count()
    }
}

fn horizon_duration(horizon_hours: f64) -> Duration {
    Duration::milliseconds((horizon_hours * 3_600_000.0).round() as i64)
}

/// Deterministic anchor draw for a negative encounter: uniform over the
/// stay at minute granularity, keyed by (seed, encounter_id).
pub fn sample_negative_anchor(encounter: &Encounter, seed: u64) -> Anchor {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"negative-anchor");
    hasher.update(encounter.encounter_id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);

    let span_minutes = (encounter.discharge_time - encounter.admit_time).num_minutes();
    let offset = if span_minutes <= 0 {
        0
    } else {
        rng.random_range(0..=span_minutes)
    };
    Anchor {
        time: encounter.admit_time + Duration::minutes(offset),
        kind: AnchorKind::Sampled,
    }
}

/// Truncates an encounter's events to time ≤ anchor − horizon. The boundary
/// is inclusive: an event exactly horizon_hours before the anchor stays.
pub fn build_mdw(encounter: &Encounter, anchor: &Anchor, horizon_hours: f64) -> ModelingDataWindow {
    let cutoff = anchor.time - horizon_duration(horizon_hours);
    ModelingDataWindow {
        encounter_id: encounter.encounter_id.clone(),
        horizon_hours,
        cutoff,
        notes: encounter
            .notes
            .iter()
            .filter(|n| n.time <= cutoff)
            .cloned()
            .collect(),
        measurements: encounter
            .measurements
            .iter()
            .filter(|m| m.time <= cutoff)
            .cloned()
            .collect(),
        med_events: encounter
            .med_events
            .iter()
            .filter(|m| m.time <= cutoff)
            .cloned()
            .collect(),
    }
}

/// Builds one row per encounter, anchored per label, dropping rows whose
/// required modality has no data left in the MDW. Rows come out sorted by
/// encounter_id.
pub fn assemble_dataset(
    cohort: &Cohort,
    labels: &BTreeMap<String, LabelOutcome>,
    horizon_hours: f64,
    modality: ModalityRequirement,
    seed: u64,
) -> Result<ModelingDataset, WindowError> {
    if !(horizon_hours.is_finite() && horizon_hours >= 0.0) {
        return Err(WindowError::BadHorizon(horizon_hours));
    }
    let mut encounters: Vec<&Encounter> = cohort.encounters().iter().collect();
    encounters.sort_by(|a, b| a.encounter_id.cmp(&b.encounter_id));

    let mut stats = DropStats {
        input_encounters: encounters.len(),
        ..DropStats::default()
    };
    let mut rows = Vec::new();
    for enc in encounters {
        let outcome = labels
            .get(&enc.encounter_id)
            .ok_or_else(|| WindowError::MissingLabel(enc.encounter_id.clone()))?;
        let anchor = match outcome.ssdt() {
            Some(ssdt) => Anchor {
                time: ssdt,
                kind: AnchorKind::Ssdt,
            },
            None => sample_negative_anchor(enc, seed),
        };
        let mdw = build_mdw(enc, &anchor, horizon_hours);
        if modality.needs_text() && mdw.notes.is_empty() {
            stats.dropped_missing_text += 1;
            continue;
        }
        if modality.needs_structured() && mdw.measurements.is_empty() {
            stats.dropped_missing_structured += 1;
            continue;
        }
        rows.push(DatasetRow {
            encounter_id: enc.encounter_id.clone(),
            admit_time: enc.admit_time,
            anchor,
            mdw,
            label: outcome.is_positive(),
        });
    }
    stats.kept = rows.len();
    if rows.is_empty() {
        return Err(WindowError::EmptyDataset {
            horizon_hours,
            modality,
        });
    }
    Ok(ModelingDataset {
        rows,
        horizon_hours,
        modality,
        drop_stats: stats,
    })
}
