//! Loading, validation, and immutable storage of encounter data.
//!
//! Input is JSONL, one encounter object per line. Records are validated on
//! load; an invalid record fails the load unless skipping is requested, in
//! which case it is collected into a [`LoadReport`].

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::timestamps::{ts, ts_opt};

/// Schema version this loader understands.
pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum CohortError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported schema version {requested:?}, expected {SCHEMA_VERSION:?}")]
    UnsupportedSchema { requested: String },
    #[error("{0} invalid record(s); first: {1}")]
    InvalidRecords(usize, String),
    #[error("cohort is empty after load")]
    Empty,
    #[error("invalid encounter {encounter_id}: {message}")]
    InvalidEncounter {
        encounter_id: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalNote {
    #[serde(with = "ts")]
    pub time: DateTime<Utc>,
    #[serde(rename = "type")]
    pub note_type: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    pub variable: String,
    pub value: f64,
    #[serde(with = "ts")]
    pub time: DateTime<Utc>,
}

/// A coded diagnosis. Records may omit the assignment time; the loader maps
/// a missing time to the encounter's discharge time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodedDiagnosis {
    pub code: String,
    #[serde(with = "ts_opt", default, skip_serializing_if = "Option::is_none")]
    pub time: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedicationEvent {
    pub drug: String,
    #[serde(rename = "class")]
    pub drug_class: String,
    #[serde(with = "ts")]
    pub time: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Encounter {
    pub encounter_id: String,
    #[serde(with = "ts")]
    pub admit_time: DateTime<Utc>,
    #[serde(with = "ts")]
    pub discharge_time: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<ClinicalNote>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub measurements: Vec<Measurement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub icd_codes: Vec<CodedDiagnosis>,
    #[serde(default, rename = "meds", skip_serializing_if = "Vec::is_empty")]
    pub med_events: Vec<MedicationEvent>,
}

impl Encounter {
    /// Resolves defaults and returns every invariant violation, one message
    /// per problem. An empty result means the record is valid.
    fn normalize_and_check(&mut self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.encounter_id.trim().is_empty() {
            issues.push("encounter_id is empty".to_string());
        }
        if self.admit_time > self.discharge_time {
            issues.push(format!(
                "discharge_time {} precedes admit_time {}",
                crate::timestamps::format_utc(self.discharge_time),
                crate::timestamps::format_utc(self.admit_time),
            ));
        }
        let in_stay = |t: DateTime<Utc>| t >= self.admit_time && t <= self.discharge_time;
        for (i, note) in self.notes.iter().enumerate() {
            if !in_stay(note.time) {
                issues.push(format!("notes[{i}] timestamp outside [admit, discharge]"));
            }
            if note.text.trim().is_empty() {
                issues.push(format!("notes[{i}] text is empty"));
            }
        }
        for (i, m) in self.measurements.iter().enumerate() {
            if !in_stay(m.time) {
                issues.push(format!(
                    "measurements[{i}] timestamp outside [admit, discharge]"
                ));
            }
            if !m.value.is_finite() {
                issues.push(format!("measurements[{i}] value is not finite"));
            }
            if m.variable.trim().is_empty() {
                issues.push(format!("measurements[{i}] variable is empty"));
            }
        }
        for (i, d) in self.icd_codes.iter_mut().enumerate() {
            if d.code.trim().is_empty() {
                issues.push(format!("icd_codes[{i}] code is empty"));
            }
            if d.time.is_none() {
                d.time = Some(self.discharge_time);
            }
        }
        for (i, d) in self.icd_codes.iter().enumerate() {
            if let Some(t) = d.time {
                if !(t >= self.admit_time && t <= self.discharge_time) {
                    issues.push(format!(
                        "icd_codes[{i}] timestamp outside [admit, discharge]"
                    ));
                }
            }
        }
        for (i, m) in self.med_events.iter().enumerate() {
            if !in_stay(m.time) {
                issues.push(format!("meds[{i}] timestamp outside [admit, discharge]"));
            }
            if m.drug.trim().is_empty() {
                issues.push(format!("meds[{i}] drug is empty"));
            }
        }
        issues
    }
}

/// One record rejected during load.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRecord {
    pub line: usize,
    pub encounter_id: Option<String>,
    pub reason: String,
}

impl fmt::Display for SkippedRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.encounter_id {
            Some(id) => write!(f, "line {} (encounter {}): {}", self.line, id, self.reason),
            None => write!(f, "line {}: {}", self.line, self.reason),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub total_lines: usize,
    pub loaded: usize,
    pub skipped: Vec<SkippedRecord>,
}

/// Immutable collection of validated encounters.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    encounters: Vec<Encounter>,
    source_descriptor: String,
}

impl Cohort {
    /// Builds a cohort from already-constructed encounters, applying the
    /// same validation as the file loader.
    pub fn new(
        mut encounters: Vec<Encounter>,
        source_descriptor: impl Into<String>,
    ) -> Result<Self, CohortError> {
        if encounters.is_empty() {
            return Err(CohortError::Empty);
        }
        let mut seen = HashSet::new();
        for enc in &mut encounters {
            let issues = enc.normalize_and_check();
            if let Some(first) = issues.first() {
                return Err(CohortError::InvalidEncounter {
                    encounter_id: enc.encounter_id.clone(),
                    message: first.clone(),
                });
            }
            if !seen.insert(enc.encounter_id.clone()) {
                return Err(CohortError::InvalidEncounter {
                    encounter_id: enc.encounter_id.clone(),
                    message: "duplicate encounter_id".to_string(),
                });
            }
        }
        Ok(Cohort {
            encounters,
            source_descriptor: source_descriptor.into(),
        })
    }

    pub fn encounters(&self) -> &[Encounter] {
        &self.encounters
    }

    pub fn len(&self) -> usize {
        self.encounters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encounters.is_empty()
    }

    pub fn source_descriptor(&self) -> &str {
        &self.source_descriptor
    }

    /// Returns a cohort whose notes are restricted to the allowlisted types.
    /// Encounters are kept even when all of their notes are removed; rows
    /// with an empty modeling window are excluded later, during windowing.
    pub fn filter_note_types(&self, allowlist: &HashSet<String>) -> Cohort {
        let encounters = self
            .encounters
            .iter()
            .map(|enc| {
                let mut enc = enc.clone();
                enc.notes.retain(|n| allowlist.contains(&n.note_type));
                enc
            })
            .collect();
        Cohort {
            encounters,
            source_descriptor: self.source_descriptor.clone(),
        }
    }

    /// Writes the cohort as JSONL, one encounter per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CohortError> {
        let io_err = |source| CohortError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut out = BufWriter::new(file);
        for enc in &self.encounters {
            let line = serde_json::to_string(enc).expect("encounter serializes");
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Loads and validates a JSONL cohort file.
///
/// With `skip_invalid` false, any invalid record fails the load. With it
/// true, invalid records are dropped and reported in the [`LoadReport`].
pub fn load_cohort(
    path: &Path,
    schema_version: &str,
    skip_invalid: bool,
) -> Result<(Cohort, LoadReport), CohortError> {
    if schema_version != SCHEMA_VERSION {
        return Err(CohortError::UnsupportedSchema {
            requested: schema_version.to_string(),
        });
    }
    let file = File::open(path).map_err(|source| CohortError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut encounters = Vec::new();
    let mut report = LoadReport::default();
    let mut seen_ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CohortError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        report.total_lines += 1;
        match serde_json::from_str::<Encounter>(&line) {
            Ok(mut enc) => {
                let issues = enc.normalize_and_check();
                if let Some(first) = issues.first() {
                    report.skipped.push(SkippedRecord {
                        line: line_no,
                        encounter_id: Some(enc.encounter_id.clone()),
                        reason: first.clone(),
                    });
                } else if !seen_ids.insert(enc.encounter_id.clone()) {
                    report.skipped.push(SkippedRecord {
                        line: line_no,
                        encounter_id: Some(enc.encounter_id.clone()),
                        reason: "duplicate encounter_id".to_string(),
                    });
                } else {
                    encounters.push(enc);
                }
            }
            Err(e) => {
                report.skipped.push(SkippedRecord {
                    line: line_no,
                    encounter_id: None,
                    reason: format!("malformed line: {e}"),
                });
            }
        }
    }

    if !report.skipped.is_empty() && !skip_invalid {
        return Err(CohortError::InvalidRecords(
            report.skipped.len(),
            report.skipped[0].to_string(),
        ));
    }
    if encounters.is_empty() {
        return Err(CohortError::Empty);
    }
    report.loaded = encounters.len();
    let cohort = Cohort {
        encounters,
        source_descriptor: path.display().to_string(),
    };
    Ok((cohort, report))
}
