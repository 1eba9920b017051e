//! Run configuration: a single JSON file drives the whole pipeline.
//!
//! Unknown keys anywhere in the file are rejected. Every omitted section
//! falls back to the documented defaults, so a minimal config needs only
//! `run`, `data`, and (for text modalities) `text.embeddings_path`.
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::label::RuleSpec;
use crate::ridge::ModelConfig;
use crate::structured::{validate_recipe, VariableSpec};
use crate::window::ModalityRequirement;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {}", format_issues(.0))]
    Invalid(Vec<ConfigIssue>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Dotted key path, e.g. `eval.fractions`.
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn default_icd_codes() -> Vec<String> {
    ["995.92", "R65.20", "785.52", "R65.21"]
        .into_iter()
        .map(str::to_string)
        .collect()
}

pub const TOKENIZER_ALNUM_LOWER: &str = "alnum_lower";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub cohort_path: PathBuf,
    /// When set, only notes of these types are kept.
    #[serde(default)]
    pub note_types: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LabelSection {
    #[serde(default = "default_icd_codes")]
    pub icd_codes: Vec<String>,
}

impl Default for LabelSection {
    fn default() -> Self {
        LabelSection {
            icd_codes: default_icd_codes(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    #[serde(default = "default_horizon")]
    pub horizon_hours: f64,
    #[serde(default = "default_modality")]
    pub modality: ModalityRequirement,
    /// Seed for negative-anchor sampling; defaults to `run.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_horizon() -> f64 {
    24.0
}

fn default_modality() -> ModalityRequirement {
    ModalityRequirement::Both
}

impl Default for WindowSection {
    fn default() -> Self {
        WindowSection {
            horizon_hours: default_horizon(),
            modality: default_modality(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TextSection {
    pub embeddings_path: PathBuf,
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    #[serde(default)]
    pub mean_pool: bool,
}

fn default_tokenizer() -> String {
    TOKENIZER_ALNUM_LOWER.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StructuredSection {
    #[serde(default = "crate::structured::default_variables")]
    pub variables: Vec<VariableSpec>,
}

impl Default for StructuredSection {
    fn default() -> Self {
        StructuredSection {
            variables: crate::structured::default_variables(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Cv,
    Temporal,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_split")]
    pub split: SplitKind,
    /// Required when `split` is `temporal`: admissions strictly before the
    /// cutoff train, the rest test.
    #[serde(default, with = "crate::timestamps::ts_opt")]
    pub cutoff: Option<DateTime<Utc>>,
}

fn default_folds() -> usize {
    3
}

fn default_fractions() -> Vec<f64> {
    vec![0.01, 0.05, 0.10]
}

fn default_split() -> SplitKind {
    SplitKind::Cv
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            folds: default_folds(),
            fractions: default_fractions(),
            split: default_split(),
            cutoff: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    #[serde(default = "crate::audit::default_terms")]
    pub terms: Vec<String>,
    #[serde(default = "crate::audit::default_vasopressor_classes")]
    pub vasopressor_classes: Vec<String>,
    /// Fraction of evaluated rows (highest scores first) sent to the
    /// leakage audit.
    #[serde(default = "default_audit_fraction")]
    pub fraction: f64,
}

fn default_audit_fraction() -> f64 {
    0.01
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection {
            terms: crate::audit::default_terms(),
            vasopressor_classes: crate::audit::default_vasopressor_classes(),
            fraction: default_audit_fraction(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub data: DataSection,
    #[serde(default = "RuleSpec::default_sirs")]
    pub rule: RuleSpec,
    #[serde(default)]
    pub label: LabelSection,
    #[serde(default)]
    pub window: WindowSection,
    #[serde(default)]
    pub text: Option<TextSection>,
    #[serde(default)]
    pub structured: StructuredSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub audit: AuditSection,
}

/// A parsed config plus the context needed to resolve and reproduce it.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub path: PathBuf,
    pub base_dir: PathBuf,
    /// Hex sha-256 of the raw config bytes; echoed into every report.
    pub fingerprint: String,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let raw = std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config: PipelineConfig = serde_json::from_slice(&raw).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let fingerprint = hex_digest(&raw);
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig {
        config,
        path: path.to_path_buf(),
        base_dir,
        fingerprint,
    })
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl LoadedConfig {
    pub fn cohort_path(&self) -> PathBuf {
        resolve(&self.base_dir, &self.config.data.cohort_path)
    }

    pub fn embeddings_path(&self) -> Option<PathBuf> {
        self.config
            .text
            .as_ref()
            .map(|t| resolve(&self.base_dir, &t.embeddings_path))
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.config
            .run
            .out_dir
            .as_ref()
            .map(|d| resolve(&self.base_dir, d))
    }

    /// Full validation pass. Empty result means the config is runnable.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let push = |issues: &mut Vec<ConfigIssue>, key: &str, message: String| {
            issues.push(ConfigIssue {
                key: key.to_string(),
                message,
            });
        };
        let cfg = &self.config;

        let cohort = self.cohort_path();
        if !cohort.is_file() {
            push(
                &mut issues,
                "data.cohort_path",
                format!("file not found: {}", cohort.display()),
            );
        }
        if let Some(types) = &cfg.data.note_types {
            if types.is_empty() {
                push(
                    &mut issues,
                    "data.note_types",
                    "when present, must list at least one note type".to_string(),
                );
            }
        }

        if !(cfg.window.horizon_hours.is_finite() && cfg.window.horizon_hours >= 0.0) {
            push(
                &mut issues,
                "window.horizon_hours",
                format!("must be finite and >= 0, got {}", cfg.window.horizon_hours),
            );
        }

        if cfg.window.modality.needs_text() {
            match &cfg.text {
                None => push(
                    &mut issues,
                    "text",
                    format!(
                        "modality {:?} requires a text section with embeddings_path",
                        cfg.window.modality
                    ),
                ),
                Some(text) => {
                    let emb = resolve(&self.base_dir, &text.embeddings_path);
                    if !emb.is_file() {
                        push(
                            &mut issues,
                            "text.embeddings_path",
                            format!("file not found: {}", emb.display()),
                        );
                    }
                    if text.tokenizer != TOKENIZER_ALNUM_LOWER {
                        push(
                            &mut issues,
                            "text.tokenizer",
                            format!(
                                "unknown tokenizer {:?}; supported: {TOKENIZER_ALNUM_LOWER:?}",
                                text.tokenizer
                            ),
                        );
                    }
                }
            }
        }

        if let Err(e) = validate_recipe(&cfg.structured.variables) {
            push(&mut issues, "structured.variables", e.to_string());
        }
        let known: BTreeSet<String> = cfg
            .structured
            .variables
            .iter()
            .map(|v| v.name.clone())
            .collect();
        if let Err(e) = cfg.rule.validate(&known) {
            push(&mut issues, "rule", e.to_string());
        }

        if !(cfg.model.lambda.is_finite() && cfg.model.lambda >= 0.0) {
            push(
                &mut issues,
                "model.lambda",
                format!("must be finite and >= 0, got {}", cfg.model.lambda),
            );
        }
        if cfg.model.select_lambda {
            if cfg.model.lambda_grid.is_empty() {
                push(
                    &mut issues,
                    "model.lambda_grid",
                    "must not be empty when select_lambda is on".to_string(),
                );
            }
            if cfg
                .model
                .lambda_grid
                .iter()
                .any(|l| !(l.is_finite() && *l >= 0.0))
            {
                push(
                    &mut issues,
                    "model.lambda_grid",
                    "entries must be finite and >= 0".to_string(),
                );
            }
            if cfg.model.inner_folds < 2 {
                push(
                    &mut issues,
                    "model.inner_folds",
                    format!("must be at least 2, got {}", cfg.model.inner_folds),
                );
            }
        }

        if cfg.eval.folds < 2 {
            push(
                &mut issues,
                "eval.folds",
                format!("must be at least 2, got {}", cfg.eval.folds),
            );
        }
        if cfg.eval.fractions.is_empty() {
            push(
                &mut issues,
                "eval.fractions",
                "must list at least one fraction".to_string(),
            );
        }
        for f in &cfg.eval.fractions {
            if !(f.is_finite() && *f > 0.0 && *f <= 1.0) {
                push(
                    &mut issues,
                    "eval.fractions",
                    format!("fractions must lie in (0, 1], got {f}"),
                );
            }
        }
        if cfg.eval.split == SplitKind::Temporal && cfg.eval.cutoff.is_none() {
            push(
                &mut issues,
                "eval.cutoff",
                "temporal split requires a cutoff timestamp".to_string(),
            );
        }

        if cfg.audit.terms.is_empty() {
            push(
                &mut issues,
                "audit.terms",
                "must list at least one term".to_string(),
            );
        }
        if !(cfg.audit.fraction.is_finite()
            && cfg.audit.fraction > 0.0
            && cfg.audit.fraction <= 1.0)
        {
            push(
                &mut issues,
                "audit.fraction",
                format!("must lie in (0, 1], got {}", cfg.audit.fraction),
            );
        }

        issues
    }
}
