//! Seeded synthetic cohorts with planted onsets and controllable signal.
//!
//! Positives receive measurement excursions that cross the default rule
//! thresholds exactly at their planted onset, plus elevated signal-term
//! frequency and measurement drift during the window before onset, scaled
//! by `signal_strength`. At strength 0 the pre-onset data is distributed
//! identically to negative data. Notes are term-frequency surrogates, not
//! clinical language.

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use sha2::{Digest, Sha256};

use crate::cohort::{
    ClinicalNote, CodedDiagnosis, Cohort, CohortError, Encounter, Measurement, MedicationEvent,
};
use crate::text::EmbeddingTable;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible spec: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub n_encounters: usize,
    pub prevalence: f64,
    pub stay_hours_min: f64,
    pub stay_hours_max: f64,
    pub notes_per_day: f64,
    pub note_tokens_min: usize,
    pub note_tokens_max: usize,
    pub background_vocab: usize,
    pub signal_vocab: usize,
    /// Base probability of a signal token in any note.
    pub signal_base_rate: f64,
    pub signal_strength: f64,
    /// Hours before onset during which positives show elevated signal.
    pub signal_window_hours: f64,
    /// Fraction of positives that get a diagnosis phrase planted inside
    /// the MDW at `audit_horizon_hours`.
    pub leak_fraction: f64,
    /// Number of positives that get a vasopressor event planted inside
    /// the MDW at `audit_horizon_hours`.
    pub vasopressor_in_window: usize,
    pub audit_horizon_hours: f64,
    pub admit_year_start: i32,
    pub admit_year_end: i32,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n_encounters: 1000,
            prevalence: 0.021,
            stay_hours_min: 48.0,
            stay_hours_max: 240.0,
            notes_per_day: 4.0,
            note_tokens_min: 20,
            note_tokens_max: 60,
            background_vocab: 400,
            signal_vocab: 40,
            signal_base_rate: 0.05,
            signal_strength: 1.0,
            signal_window_hours: 48.0,
            leak_fraction: 0.0,
            vasopressor_in_window: 0,
            audit_horizon_hours: 24.0,
            admit_year_start: 2012,
            admit_year_end: 2016,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.n_encounters == 0 {
            return fail("n_encounters must be at least 1".to_string());
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return fail(format!(
                "prevalence must be in (0, 1), got {}",
                self.prevalence
            ));
        }
        if !(self.stay_hours_min >= 4.0 && self.stay_hours_min <= self.stay_hours_max) {
            return fail("stay bounds must satisfy 4 <= min <= max".to_string());
        }
        if self.notes_per_day <= 0.0 {
            return fail("notes_per_day must be positive".to_string());
        }
        if self.note_tokens_min == 0 || self.note_tokens_min > self.note_tokens_max {
            return fail("note token bounds must satisfy 1 <= min <= max".to_string());
        }
        if self.background_vocab == 0 || self.signal_vocab == 0 {
            return fail("vocabulary sizes must be at least 1".to_string());
        }
        if !(self.signal_base_rate >= 0.0 && self.signal_base_rate <= 0.5) {
            return fail("signal_base_rate must be in [0, 0.5]".to_string());
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return fail("signal_strength must be finite and >= 0".to_string());
        }
        if self.signal_window_hours <= 0.0 {
            return fail("signal_window_hours must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.leak_fraction) {
            return fail("leak_fraction must be in [0, 1]".to_string());
        }
        if self.audit_horizon_hours < 0.0 {
            return fail("audit_horizon_hours must be >= 0".to_string());
        }
        if self.admit_year_start > self.admit_year_end {
            return fail("admit year range is inverted".to_string());
        }
        Ok(())
    }

    /// Probability that a note token is a signal term, given whether the
    /// note falls in a positive's pre-onset signal window.
    fn signal_rate(&self, in_window: bool) -> f64 {
        if in_window {
            (self.signal_base_rate + 0.25 * self.signal_strength).min(0.9)
        } else {
            self.signal_base_rate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruthRecord {
    pub positive: bool,
    pub onset: Option<DateTime<Utc>>,
    pub leak_seeded: bool,
    pub vasopressor_seeded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub records: BTreeMap<String, GroundTruthRecord>,
}

impl GroundTruth {
    pub fn positives(&self) -> usize {
        self.records.values().filter(|r| r.positive).count()
    }
}

/// One variable's sampling schedule. Background draws are clipped strictly
/// inside the default rule thresholds so only the planted onset excursion
/// can fire the rule. Drift shifts the mean past the feature normal range
/// while the clip ceiling keeps it rule-safe.
struct MeasurementProfile {
    variable: &'static str,
    interval_hours: f64,
    mean: f64,
    sd: f64,
    clip: (f64, f64),
    /// (mean shift per unit signal_strength, drift clip ceiling)
    drift: Option<(f64, f64)>,
}

const PROFILES: [MeasurementProfile; 12] = [
    MeasurementProfile {
        variable: "temperature",
        interval_hours: 6.0,
        mean: 36.8,
        sd: 0.3,
        clip: (36.2, 37.4),
        drift: Some((0.8, 37.9)),
    },
    MeasurementProfile {
        variable: "heart_rate",
        interval_hours: 6.0,
        mean: 72.0,
        sd: 6.0,
        clip: (55.0, 88.0),
        drift: Some((14.0, 89.5)),
    },
    MeasurementProfile {
        variable: "respiratory_rate",
        interval_hours: 6.0,
        mean: 14.0,
        sd: 1.5,
        clip: (10.0, 19.0),
        drift: Some((4.0, 19.5)),
    },
    MeasurementProfile {
        variable: "systolic_bp",
        interval_hours: 6.0,
        mean: 120.0,
        sd: 10.0,
        clip: (95.0, 150.0),
        drift: None,
    },
    MeasurementProfile {
        variable: "spo2",
        interval_hours: 6.0,
        mean: 97.0,
        sd: 1.2,
        clip: (92.0, 100.0),
        drift: None,
    },
    MeasurementProfile {
        variable: "wbc",
        interval_hours: 24.0,
        mean: 7.5,
        sd: 1.5,
        clip: (4.5, 11.5),
        drift: None,
    },
    MeasurementProfile {
        variable: "lactate",
        interval_hours: 24.0,
        mean: 1.1,
        sd: 0.3,
        clip: (0.4, 1.9),
        drift: None,
    },
    MeasurementProfile {
        variable: "creatinine",
        interval_hours: 24.0,
        mean: 0.9,
        sd: 0.2,
        clip: (0.5, 1.9),
        drift: None,
    },
    MeasurementProfile {
        variable: "platelets",
        interval_hours: 24.0,
        mean: 250.0,
        sd: 50.0,
        clip: (110.0, 450.0),
        drift: None,
    },
    MeasurementProfile {
        variable: "glucose",
        interval_hours: 24.0,
        mean: 105.0,
        sd: 15.0,
        clip: (65.0, 180.0),
        drift: None,
    },
    MeasurementProfile {
        variable: "bun",
        interval_hours: 24.0,
        mean: 14.0,
        sd: 3.0,
        clip: (5.0, 28.0),
        drift: None,
    },
    MeasurementProfile {
        variable: "bilirubin",
        interval_hours: 24.0,
        mean: 0.7,
        sd: 0.2,
        clip: (0.1, 1.9),
        drift: None,
    },
];

/// Onset excursion values: two sirs criteria (heart rate, temperature) and
/// one organ criterion (lactate) past the default rule thresholds, all
/// stamped exactly at onset so the rule completes there.
const EXCURSIONS: [(&str, f64); 3] = [
    ("heart_rate", 128.0),
    ("temperature", 39.2),
    ("lactate", 4.5),
];

/// Diagnosis code planted on a subset of positives; present in the default
/// label code set.
const POSITIVE_ICD: &str = "R65.20";

const LEAK_PHRASE: &str = "concern for septic shock";

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn minutes(h: f64) -> i64 {
    (h * 60.0).round() as i64
}

pub fn vocabulary(spec: &GeneratorSpec) -> Vec<String> {
    let mut vocab: Vec<String> = (0..spec.background_vocab)
        .map(|i| format!("bg{i}"))
        .collect();
    vocab.extend((0..spec.signal_vocab).map(|i| format!("sig{i}")));
    vocab
}

/// Deterministic random embedding table over the generator vocabulary.
/// Component scale 1/sqrt(dimension) keeps token vectors near unit norm.
pub fn synth_embeddings(spec: &GeneratorSpec, dimension: usize) -> EmbeddingTable {
    let scale = 1.0 / (dimension as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let entries: Vec<(String, Vec<f64>)> = vocabulary(spec)
        .into_iter()
        .map(|token| {
            let mut hasher = Sha256::new();
            hasher.update(spec.seed.to_le_bytes());
            hasher.update(b"embedding");
            hasher.update(token.as_bytes());
            let mut key = [0u8; 32];
            key.copy_from_slice(&hasher.finalize());
            let mut rng = ChaCha8Rng::from_seed(key);
            let vector = (0..dimension)
                .map(|_| round6(normal.sample(&mut rng) * scale))
                .collect();
            (token, vector)
        })
        .collect();
    EmbeddingTable::from_entries(entries).expect("consistent dimension")
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

struct TokenPicker<'a> {
    spec: &'a GeneratorSpec,
}

impl TokenPicker<'_> {
    fn note_text(&self, rng: &mut ChaCha8Rng, signal_rate: f64) -> String {
        let count = rng.random_range(self.spec.note_tokens_min..=self.spec.note_tokens_max);
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            if rng.random_bool(signal_rate) {
                tokens.push(format!(
                    "sig{}",
                    rng.random_range(0..self.spec.signal_vocab)
                ));
            } else {
                tokens.push(format!(
                    "bg{}",
                    rng.random_range(0..self.spec.background_vocab)
                ));
            }
        }
        tokens.join(" ")
    }
}

/// Generates a cohort and its ground truth. Deterministic per spec: the
/// same spec (including seed) always yields identical output.
pub fn generate(spec: &GeneratorSpec) -> Result<(Cohort, GroundTruth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_encounters;
    let n_pos = (n as f64 * spec.prevalence).round() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let positive_set: HashSet<usize> = indices[..n_pos].iter().copied().collect();

    let leak_quota = (spec.leak_fraction * n_pos as f64).round() as usize;
    let mut leaks_planted = 0usize;
    let mut vaso_planted = 0usize;

    let admit_floor = Utc
        .with_ymd_and_hms(spec.admit_year_start, 1, 1, 0, 0, 0)
        .unwrap();
    let admit_ceiling = Utc
        .with_ymd_and_hms(spec.admit_year_end + 1, 1, 1, 0, 0, 0)
        .unwrap();
    let range_minutes = (admit_ceiling - admit_floor).num_minutes();

    let picker = TokenPicker { spec };
    let stay_min = minutes(spec.stay_hours_min);
    let stay_max = minutes(spec.stay_hours_max);
    let signal_window = Duration::minutes(minutes(spec.signal_window_hours));
    // Planted audit events sit one hour beyond the audit horizon; the
    // eligibility margin keeps them inside the stay and the MDW non-empty.
    let audit_offset = Duration::minutes(minutes(spec.audit_horizon_hours) + 60);
    let eligibility_margin = Duration::minutes(minutes(spec.audit_horizon_hours) + 120);

    let mut encounters = Vec::with_capacity(n);
    let mut truth = GroundTruth::default();
    for i in 0..n {
        let encounter_id = format!("enc{i:06}");
        let stay_minutes = rng.random_range(stay_min..=stay_max);
        let latest_admit = range_minutes - stay_minutes;
        let admit = admit_floor + Duration::minutes(rng.random_range(0..=latest_admit.max(0)));
        let discharge = admit + Duration::minutes(stay_minutes);
        let is_positive = positive_set.contains(&i);
        let onset = if is_positive {
            Some(admit + Duration::minutes(rng.random_range(0..=stay_minutes)))
        } else {
            None
        };
        let in_signal_window = |t: DateTime<Utc>| match onset {
            Some(onset) if spec.signal_strength > 0.0 => t <= onset && t > onset - signal_window,
            _ => false,
        };

        let mut measurements = Vec::new();
        for profile in &PROFILES {
            let interval = minutes(profile.interval_hours);
            let base = Normal::new(profile.mean, profile.sd).expect("valid profile");
            let mut t = admit + Duration::minutes(30);
            while t <= discharge {
                let drifting = profile.drift.is_some() && in_signal_window(t);
                let value = if drifting {
                    let (shift, ceiling) = profile.drift.unwrap();
                    let drifted =
                        Normal::new(profile.mean + shift * spec.signal_strength, profile.sd)
                            .expect("valid drift");
                    drifted.sample(&mut rng).clamp(profile.clip.0, ceiling)
                } else {
                    base.sample(&mut rng).clamp(profile.clip.0, profile.clip.1)
                };
                measurements.push(Measurement {
                    variable: profile.variable.to_string(),
                    value: round2(value),
                    time: t,
                });
                let jitter = rng.random_range(-(interval / 4)..=interval / 4);
                t += Duration::minutes((interval + jitter).max(interval / 2).max(1));
            }
        }
        if let Some(onset) = onset {
            for (variable, value) in EXCURSIONS {
                measurements.push(Measurement {
                    variable: variable.to_string(),
                    value,
                    time: onset,
                });
            }
        }

        let mut notes = Vec::new();
        let first_contact = admit + Duration::minutes(30);
        notes.push(ClinicalNote {
            time: first_contact,
            note_type: "history_and_physical".to_string(),
            text: picker.note_text(&mut rng, spec.signal_rate(in_signal_window(first_contact))),
        });
        let stay_days = stay_minutes as f64 / (24.0 * 60.0);
        let expected_notes = (spec.notes_per_day * stay_days).max(0.1);
        let n_notes = (Poisson::new(expected_notes)
            .expect("positive rate")
            .sample(&mut rng) as usize)
            .min(200);
        for _ in 0..n_notes {
            let t = admit + Duration::minutes(rng.random_range(0..=stay_minutes));
            let roll: f64 = rng.random();
            let note_type = if roll < 0.6 {
                "progress"
            } else if roll < 0.9 {
                "nursing"
            } else {
                "radiology"
            };
            notes.push(ClinicalNote {
                time: t,
                note_type: note_type.to_string(),
                text: picker.note_text(&mut rng, spec.signal_rate(in_signal_window(t))),
            });
        }

        let mut record = GroundTruthRecord {
            positive: is_positive,
            onset,
            leak_seeded: false,
            vasopressor_seeded: false,
        };
        let mut med_events = Vec::new();
        let mut icd_codes = Vec::new();
        if let Some(onset) = onset {
            let audit_eligible = onset >= admit + eligibility_margin;
            if audit_eligible && leaks_planted < leak_quota {
                let filler = picker.note_text(&mut rng, 0.0);
                notes.push(ClinicalNote {
                    time: onset - audit_offset,
                    note_type: "progress".to_string(),
                    text: format!(
                        "{filler} {LEAK_PHRASE} {filler2}",
                        filler2 = picker.note_text(&mut rng, 0.0)
                    ),
                });
                leaks_planted += 1;
                record.leak_seeded = true;
            }
            if audit_eligible && vaso_planted < spec.vasopressor_in_window {
                med_events.push(MedicationEvent {
                    drug: "norepinephrine".to_string(),
                    drug_class: "vasopressor".to_string(),
                    time: onset - audit_offset,
                });
                vaso_planted += 1;
                record.vasopressor_seeded = true;
            } else if rng.random_bool(0.5) {
                // Post-onset vasopressor: clinically expected, never in
                // any MDW because the anchor is the onset itself.
                let offset = rng.random_range(10..=120);
                let t = (onset + Duration::minutes(offset)).min(discharge);
                med_events.push(MedicationEvent {
                    drug: "norepinephrine".to_string(),
                    drug_class: "vasopressor".to_string(),
                    time: t,
                });
            }
            if rng.random_bool(0.6) {
                icd_codes.push(CodedDiagnosis {
                    code: POSITIVE_ICD.to_string(),
                    time: Some(discharge),
                });
            }
        } else {
            if rng.random_bool(0.3) {
                med_events.push(MedicationEvent {
                    drug: "cefepime".to_string(),
                    drug_class: "antibiotic".to_string(),
                    time: admit + Duration::minutes(rng.random_range(0..=stay_minutes)),
                });
            }
            if rng.random_bool(0.1) {
                icd_codes.push(CodedDiagnosis {
                    code: "I10".to_string(),
                    time: Some(admit + Duration::minutes(rng.random_range(0..=stay_minutes))),
                });
            }
        }

        truth.records.insert(encounter_id.clone(), record);
        encounters.push(Encounter {
            encounter_id,
            admit_time: admit,
            discharge_time: discharge,
            notes,
            measurements,
            icd_codes,
            med_events,
        });
    }

    if leaks_planted < leak_quota {
        return Err(SynthError::Infeasible(format!(
            "only {leaks_planted} of {leak_quota} leak notes could be planted; \
             lengthen stays or lower leak_fraction"
        )));
    }
    if vaso_planted < spec.vasopressor_in_window {
        return Err(SynthError::Infeasible(format!(
            "only {vaso_planted} of {} vasopressor events could be planted; \
             lengthen stays or lower vasopressor_in_window",
            spec.vasopressor_in_window
        )));
    }

    let descriptor = format!("synth(seed={}, n={})", spec.seed, n);
    let cohort = Cohort::new(encounters, descriptor)?;
    Ok((cohort, truth))
}
