//! Fixed-length rollups of the MDW's timestamped measurements.
//!
//! Each configured variable contributes a chosen subset of five statistics.
//! Variables with no readings in the window yield masked zeros; no values
//! are imputed.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::window::ModelingDataWindow;

#[derive(Debug, thiserror::Error)]
pub enum RecipeError {
    #[error("recipe has no variables")]
    Empty,
    #[error("variable {0:?}: name is empty")]
    EmptyName(String),
    #[error("variable {name:?}: normal_low {low} must be below normal_high {high}")]
    BadRange { name: String, low: f64, high: f64 },
    #[error("variable {0:?}: stats list is empty")]
    NoStats(String),
    #[error("variable {0:?} appears more than once")]
    Duplicate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    Mean,
    Std,
    CountHigh,
    CountLow,
    CountNormal,
}

impl StatKind {
    pub const ALL: [StatKind; 5] = [
        StatKind::Mean,
        StatKind::Std,
        StatKind::CountHigh,
        StatKind::CountLow,
        StatKind::CountNormal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StatKind::Mean => "mean",
            StatKind::Std => "std",
            StatKind::CountHigh => "count_high",
            StatKind::CountLow => "count_low",
            StatKind::CountNormal => "count_normal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    pub normal_low: f64,
    pub normal_high: f64,
    pub stats: Vec<StatKind>,
}

impl VariableSpec {
    pub fn full(name: &str, normal_low: f64, normal_high: f64) -> Self {
        VariableSpec {
            name: name.to_string(),
            normal_low,
            normal_high,
            stats: StatKind::ALL.to_vec(),
        }
    }
}

/// Default recipe: 12 common vitals and labs, all five statistics each.
/// Normal ranges are screening bounds for the count features, not clinical
/// reference ranges.
pub fn default_variables() -> Vec<VariableSpec> {
    vec![
        VariableSpec::full("temperature", 36.2, 37.4),
        VariableSpec::full("heart_rate", 60.0, 85.0),
        VariableSpec::full("respiratory_rate", 12.0, 17.0),
        VariableSpec::full("wbc", 4.5, 11.0),
        VariableSpec::full("systolic_bp", 100.0, 140.0),
        VariableSpec::full("lactate", 0.5, 1.9),
        VariableSpec::full("creatinine", 0.6, 1.3),
        VariableSpec::full("platelets", 150.0, 400.0),
        VariableSpec::full("glucose", 70.0, 140.0),
        VariableSpec::full("bun", 7.0, 20.0),
        VariableSpec::full("spo2", 94.0, 100.0),
        VariableSpec::full("bilirubin", 0.2, 1.2),
    ]
}

pub fn validate_recipe(recipe: &[VariableSpec]) -> Result<(), RecipeError> {
    if recipe.is_empty() {
        return Err(RecipeError::Empty);
    }
    let mut seen = std::collections::HashSet::new();
    for v in recipe {
        if v.name.trim().is_empty() {
            return Err(RecipeError::EmptyName(v.name.clone()));
        }
        // NaN bounds fail here along with inverted or collapsed ranges.
        if v.normal_low.is_nan() || v.normal_high.is_nan() || v.normal_low >= v.normal_high {
            return Err(RecipeError::BadRange {
                name: v.name.clone(),
                low: v.normal_low,
                high: v.normal_high,
            });
        }
        if v.stats.is_empty() {
            return Err(RecipeError::NoStats(v.name.clone()));
        }
        if !seen.insert(v.name.clone()) {
            return Err(RecipeError::Duplicate(v.name.clone()));
        }
    }
    Ok(())
}

/// Summary statistics over one variable's readings in a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub count_high: usize,
    pub count_low: usize,
    pub count_normal: usize,
}

impl VariableSummary {
    pub fn stat(&self, kind: StatKind) -> f64 {
        match kind {
            StatKind::Mean => self.mean,
            StatKind::Std => self.std,
            StatKind::CountHigh => self.count_high as f64,
            StatKind::CountLow => self.count_low as f64,
            StatKind::CountNormal => self.count_normal as f64,
        }
    }
}

/// Computes the five statistics for one variable. Returns None when there
/// are no readings. std uses the n−1 denominator and is 0 when n < 2.
pub fn summarize_variable(values: &[f64], spec: &VariableSpec) -> Option<VariableSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    let count_high = values.iter().filter(|&&v| v > spec.normal_high).count();
    let count_low = values.iter().filter(|&&v| v < spec.normal_low).count();
    let count_normal = values
        .iter()
        .filter(|&&v| v >= spec.normal_low && v <= spec.normal_high)
        .count();
    Some(VariableSummary {
        n,
        mean,
        std,
        count_high,
        count_low,
        count_normal,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredFeature {
    pub vector: Vec<f64>,
    pub present_mask: Vec<bool>,
    /// Measurements whose variable is not in the recipe.
    pub ignored_measurements: usize,
}

/// Feature names in layout order: `variable:stat` per recipe entry.
pub fn feature_labels(recipe: &[VariableSpec]) -> Vec<String> {
    recipe
        .iter()
        .flat_map(|v| {
            v.stats
                .iter()
                .map(move |s| format!("{}:{}", v.name, s.as_str()))
        })
        .collect()
}

/// Concatenates per-variable statistics in recipe order. Absent variables
/// produce zeros with a false mask.
pub fn featurize_structured(
    mdw: &ModelingDataWindow,
    recipe: &[VariableSpec],
) -> StructuredFeature {
    let mut by_variable: HashMap<&str, Vec<f64>> = HashMap::new();
    let known: std::collections::HashSet<&str> = recipe.iter().map(|v| v.name.as_str()).collect();
    let mut ignored = 0usize;
    for m in &mdw.measurements {
        if known.contains(m.variable.as_str()) {
            by_variable
                .entry(m.variable.as_str())
                .or_default()
                .push(m.value);
        } else {
            ignored += 1;
        }
    }

    let width: usize = recipe.iter().map(|v| v.stats.len()).sum();
    let mut vector = Vec::with_capacity(width);
    let mut present_mask = Vec::with_capacity(width);
    for v in recipe {
        let summary = by_variable
            .get(v.name.as_str())
            .and_then(|values| summarize_variable(values, v));
        for &stat in &v.stats {
            match &summary {
                Some(s) => {
                    vector.push(s.stat(stat));
                    present_mask.push(true);
                }
                None => {
                    vector.push(0.0);
                    present_mask.push(false);
                }
            }
        }
    }
    StructuredFeature {
        vector,
        present_mask,
        ignored_measurements: ignored,
    }
}
