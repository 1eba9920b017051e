//! Per-encounter severe-sepsis labeling.
//!
//! An encounter is positive when either a declarative threshold rule or a
//! configured diagnosis-code set fires. The Severe Sepsis Definition Time
//! (SSDT) is the earliest time either source is satisfied.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Encounter};

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("rule has no criteria")]
    NoCriteria,
    #[error("rule.{field} must be at least 1")]
    ZeroMinimum { field: &'static str },
    #[error("rule.window_hours must be a positive finite number, got {0}")]
    BadWindow(f64),
    #[error("criterion {index} threshold is not finite")]
    BadThreshold { index: usize },
    #[error("criterion {index} references unknown variable {variable:?}")]
    UnknownVariable { index: usize, variable: String },
    #[error("rule requires {required} {group} criteria but only {available} are defined")]
    Unsatisfiable {
        group: &'static str,
        required: usize,
        available: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionGroup {
    Sirs,
    OrganDysfunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Criterion {
    pub variable: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub group: CriterionGroup,
}

impl Criterion {
    fn satisfied_by(&self, variable: &str, value: f64) -> bool {
        self.variable == variable && self.comparator.holds(value, self.threshold)
    }
}

/// Declarative severe-sepsis rule: the definition fires at time t when,
/// within the rolling window (t − window_hours, t], at least `min_sirs`
/// distinct sirs criteria and `min_organ` distinct organ-dysfunction
/// criteria are each satisfied by some measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub criteria: Vec<Criterion>,
    pub min_sirs: usize,
    pub min_organ: usize,
    pub window_hours: f64,
}

impl RuleSpec {
    /// Shipped default: a SIRS-style screen over eight structured variables.
    /// Illustrative thresholds, not an authoritative clinical definition;
    /// production deployments should configure their own rule.
    pub fn default_sirs() -> Self {
        use Comparator::*;
        use CriterionGroup::*;
        let c = |variable: &str, comparator, threshold, group| Criterion {
            variable: variable.to_string(),
            comparator,
            threshold,
            group,
        };
        RuleSpec {
            criteria: vec![
                c("temperature", Gt, 38.0, Sirs),
                c("heart_rate", Gt, 90.0, Sirs),
                c("respiratory_rate", Gt, 20.0, Sirs),
                c("wbc", Gt, 12.0, Sirs),
                c("systolic_bp", Lt, 90.0, OrganDysfunction),
                c("lactate", Gt, 2.0, OrganDysfunction),
                c("creatinine", Gt, 2.0, OrganDysfunction),
                c("platelets", Lt, 100.0, OrganDysfunction),
            ],
            min_sirs: 2,
            min_organ: 1,
            window_hours: 6.0,
        }
    }

    pub fn validate(&self, known_variables: &BTreeSet<String>) -> Result<(), LabelError> {
        if self.criteria.is_empty() {
            return Err(LabelError::NoCriteria);
        }
        if self.min_sirs == 0 {
            return Err(LabelError::ZeroMinimum { field: "min_sirs" });
        }
        if self.min_organ == 0 {
            return Err(LabelError::ZeroMinimum { field: "min_organ" });
        }
        if !(self.window_hours.is_finite() && self.window_hours > 0.0) {
            return Err(LabelError::BadWindow(self.window_hours));
        }
        let mut sirs = 0usize;
        let mut organ = 0usize;
        for (index, c) in self.criteria.iter().enumerate() {
            if !c.threshold.is_finite() {
                return Err(LabelError::BadThreshold { index });
            }
            if !known_variables.contains(&c.variable) {
                return Err(LabelError::UnknownVariable {
                    index,
                    variable: c.variable.clone(),
                });
            }
            match c.group {
                CriterionGroup::Sirs => sirs += 1,
                CriterionGroup::OrganDysfunction => organ += 1,
            }
        }
        if sirs < self.min_sirs {
            return Err(LabelError::Unsatisfiable {
                group: "sirs",
                required: self.min_sirs,
                available: sirs,
            });
        }
        if organ < self.min_organ {
            return Err(LabelError::Unsatisfiable {
                group: "organ_dysfunction",
                required: self.min_organ,
                available: organ,
            });
        }
        Ok(())
    }

    fn window(&self) -> Duration {
        Duration::milliseconds((self.window_hours * 3_600_000.0).round() as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Rule,
    Icd,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelOutcome {
    Negative,
    Positive {
        ssdt: DateTime<Utc>,
        source: LabelSource,
    },
}

impl LabelOutcome {
    pub fn is_positive(&self) -> bool {
        matches!(self, LabelOutcome::Positive { .. })
    }

    pub fn ssdt(&self) -> Option<DateTime<Utc>> {
        match self {
            LabelOutcome::Negative => None,
            LabelOutcome::Positive { ssdt, .. } => Some(*ssdt),
        }
    }

    pub fn source(&self) -> Option<LabelSource> {
        match self {
            LabelOutcome::Negative => None,
            LabelOutcome::Positive { source, .. } => Some(*source),
        }
    }
}

/// Earliest time the rule is satisfied, or None. The returned time is the
/// timestamp of the measurement that completes the definition.
pub fn evaluate_rule(encounter: &Encounter, rule: &RuleSpec) -> Option<DateTime<Utc>> {
    // (time, criterion index) for every measurement/criterion hit.
    let mut hits: Vec<(DateTime<Utc>, usize)> = Vec::new();
    for m in &encounter.measurements {
        for (ci, c) in rule.criteria.iter().enumerate() {
            if c.satisfied_by(&m.variable, m.value) {
                hits.push((m.time, ci));
            }
        }
    }
    if hits.is_empty() {
        return None;
    }
    hits.sort_by_key(|&(t, ci)| (t, ci));

    let window = rule.window();
    let mut per_criterion = vec![0usize; rule.criteria.len()];
    let mut active = [0usize; 2]; // [sirs, organ]
    let group_of = |ci: usize| match rule.criteria[ci].group {
        CriterionGroup::Sirs => 0,
        CriterionGroup::OrganDysfunction => 1,
    };

    let mut lo = 0;
    let mut hi = 0;
    while hi < hits.len() {
        let t = hits[hi].0;
        // Admit every hit stamped exactly t, then retire hits at or before
        // t − window so the active set is exactly (t − window, t].
        while hi < hits.len() && hits[hi].0 == t {
            let ci = hits[hi].1;
            per_criterion[ci] += 1;
            if per_criterion[ci] == 1 {
                active[group_of(ci)] += 1;
            }
            hi += 1;
        }
        if let Some(floor) = t.checked_sub_signed(window) {
            while lo < hi && hits[lo].0 <= floor {
                let ci = hits[lo].1;
                per_criterion[ci] -= 1;
                if per_criterion[ci] == 0 {
                    active[group_of(ci)] -= 1;
                }
                lo += 1;
            }
        }
        if active[0] >= rule.min_sirs && active[1] >= rule.min_organ {
            return Some(t);
        }
    }
    None
}

/// Earliest assignment time among matching diagnosis codes, or None.
pub fn icd_ssdt(encounter: &Encounter, code_set: &BTreeSet<String>) -> Option<DateTime<Utc>> {
    encounter
        .icd_codes
        .iter()
        .filter(|d| code_set.contains(&d.code))
        .map(|d| d.time.unwrap_or(encounter.discharge_time))
        .min()
}

/// Labels every encounter. SSDT is the earlier of the rule and ICD times;
/// source records which of the two fired.
pub fn label_cohort(
    cohort: &Cohort,
    rule: &RuleSpec,
    code_set: &BTreeSet<String>,
) -> BTreeMap<String, LabelOutcome> {
    cohort
        .encounters()
        .iter()
        .map(|enc| {
            let outcome = match (evaluate_rule(enc, rule), icd_ssdt(enc, code_set)) {
                (Some(r), Some(i)) => LabelOutcome::Positive {
                    ssdt: r.min(i),
                    source: LabelSource::Both,
                },
                (Some(r), None) => LabelOutcome::Positive {
                    ssdt: r,
                    source: LabelSource::Rule,
                },
                (None, Some(i)) => LabelOutcome::Positive {
                    ssdt: i,
                    source: LabelSource::Icd,
                },
                (None, None) => LabelOutcome::Negative,
            };
            (enc.encounter_id.clone(), outcome)
        })
        .collect()
}
