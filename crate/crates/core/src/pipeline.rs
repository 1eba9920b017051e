//! End-to-end run: cohort to labels to windows to features to evaluation
//! to final model to audits, then five artifacts on disk.
//!
//! Every stage is single-threaded and seeded, so a rerun of the same
//! config against the same inputs reproduces `report.json` and
//! `scores.csv` byte for byte.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::audit::{leakage_scan, vasopressor_scan, AuditReport};
use crate::cohort::{load_cohort, SCHEMA_VERSION};
use crate::config::{ConfigError, LoadedConfig, SplitKind};
use crate::eval::{
    build_report, cross_validate, temporal_split, CrossValidateOptions, EvaluationReport, ScoredRow,
};
use crate::label::{label_cohort, LabelOutcome, LabelSource};
use crate::ridge::{select_lambda, RidgeModel};
use crate::structured::{feature_labels, featurize_structured, VariableSpec};
use crate::text::{featurize_text, EmbeddingTable};
use crate::timestamps::format_utc;
use crate::window::{assemble_dataset, DropStats, ModalityRequirement, ModelingDataset};

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
    data_error: bool,
}

impl PipelineError {
    fn data(stage: &'static str, err: impl std::fmt::Display) -> Self {
        PipelineError {
            stage,
            message: err.to_string(),
            data_error: true,
        }
    }

    fn internal(stage: &'static str, err: impl std::fmt::Display) -> Self {
        PipelineError {
            stage,
            message: err.to_string(),
            data_error: false,
        }
    }

    /// True for malformed inputs (config, cohort, embeddings); false for
    /// failures in later stages.
    pub fn is_data_error(&self) -> bool {
        self.data_error
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Skip malformed cohort records instead of aborting.
    pub skip_invalid: bool,
    /// Overrides `run.out_dir`.
    pub out_dir: Option<PathBuf>,
    /// Overrides `run.seed`.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CohortSummary {
    pub total_lines: usize,
    pub loaded: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelSummary {
    pub total: usize,
    pub positives: usize,
    pub by_source: BTreeMap<String, usize>,
}

fn summarize_labels(labels: &BTreeMap<String, LabelOutcome>) -> LabelSummary {
    let mut by_source = BTreeMap::new();
    let mut positives = 0usize;
    for outcome in labels.values() {
        if let Some(source) = outcome.source() {
            positives += 1;
            let key = match source {
                LabelSource::Rule => "rule",
                LabelSource::Icd => "icd",
                LabelSource::Both => "both",
            };
            *by_source.entry(key.to_string()).or_insert(0) += 1;
        }
    }
    LabelSummary {
        total: labels.len(),
        positives,
        by_source,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureSummary {
    pub width: usize,
    pub text_dimension: Option<usize>,
    pub structured_width: Option<usize>,
    pub tokens_seen: usize,
    pub oov_tokens: usize,
    pub ignored_measurements: usize,
}

/// Design matrix over dataset rows, in row order, plus featurization
/// tallies.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub x: Array2<f64>,
    pub feature_labels: Vec<String>,
    pub summary: FeatureSummary,
}

/// Builds the design matrix for `modality` from an assembled dataset. The
/// dataset's own modality requirement must cover the requested one; rows
/// are featurized in dataset order. Text features need the embedding
/// table.
pub fn featurize_dataset(
    dataset: &ModelingDataset,
    modality: ModalityRequirement,
    table: Option<&EmbeddingTable>,
    mean_pool: bool,
    recipe: &[VariableSpec],
) -> Result<FeatureMatrix, PipelineError> {
    let stage = "features";
    let table = if modality.needs_text() {
        Some(table.ok_or_else(|| {
            PipelineError::internal(stage, "text modality requested without an embedding table")
        })?)
    } else {
        None
    };

    let text_dimension = table.map(EmbeddingTable::dimension);
    let structured_width = modality
        .needs_structured()
        .then(|| recipe.iter().map(|v| v.stats.len()).sum::<usize>());
    let width = text_dimension.unwrap_or(0) + structured_width.unwrap_or(0);
    if width == 0 {
        return Err(PipelineError::internal(stage, "empty feature space"));
    }

    let mut labels = Vec::with_capacity(width);
    if let Some(dim) = text_dimension {
        labels.extend((0..dim).map(|j| format!("emb_{j:03}")));
    }
    if structured_width.is_some() {
        labels.extend(feature_labels(recipe));
    }

    let n = dataset.rows.len();
    let mut x = Array2::<f64>::zeros((n, width));
    let mut tokens_seen = 0usize;
    let mut oov_tokens = 0usize;
    let mut ignored = 0usize;
    for (i, row) in dataset.rows.iter().enumerate() {
        let mut col = 0usize;
        if let Some(table) = table {
            let feat = featurize_text(&row.mdw, table, mean_pool);
            tokens_seen += feat.token_count;
            oov_tokens += feat.oov_count;
            for v in feat.vector {
                x[[i, col]] = v;
                col += 1;
            }
        }
        if structured_width.is_some() {
            let feat = featurize_structured(&row.mdw, recipe);
            ignored += feat.ignored_measurements;
            for v in feat.vector {
                x[[i, col]] = v;
                col += 1;
            }
        }
        debug_assert_eq!(col, width);
    }

    Ok(FeatureMatrix {
        x,
        feature_labels: labels,
        summary: FeatureSummary {
            width,
            text_dimension,
            structured_width,
            tokens_seen,
            oov_tokens,
            ignored_measurements: ignored,
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub lambda: f64,
    pub intercept: f64,
    pub weight_l2_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditBrief {
    pub audited: usize,
    pub leakage_flagged: usize,
    pub leakage_rate: f64,
    pub vasopressor_flagged: usize,
}

/// Everything `report.json` holds.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config_fingerprint: String,
    pub seed: u64,
    pub horizon_hours: f64,
    pub modality: ModalityRequirement,
    pub cohort: CohortSummary,
    pub labels: LabelSummary,
    pub drops: DropStats,
    pub features: FeatureSummary,
    pub evaluation: EvaluationReport,
    pub model: ModelSummary,
    pub audit: AuditBrief,
}

/// Everything `audit.json` holds.
#[derive(Debug, Clone, Serialize)]
pub struct AuditArtifact {
    pub audited_fraction: f64,
    pub top_ids: Vec<String>,
    pub leakage: AuditReport,
    pub vasopressor: AuditReport,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub report: RunReport,
    pub files: Vec<PathBuf>,
}

pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    let issues = loaded.validate();
    if !issues.is_empty() {
        return Err(PipelineError::data("config", ConfigError::Invalid(issues)));
    }
    let cfg = &loaded.config;
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| loaded.out_dir())
        .ok_or_else(|| {
            PipelineError::data(
                "config",
                "run.out_dir is not set and no out_dir override was given",
            )
        })?;
    let seed = opts.seed.unwrap_or(cfg.run.seed);

    let (cohort, load_report) =
        load_cohort(&loaded.cohort_path(), SCHEMA_VERSION, opts.skip_invalid)
            .map_err(|e| PipelineError::data("cohort", e))?;
    for skipped in &load_report.skipped {
        log::warn!("skipped cohort record: {skipped}");
    }
    let cohort = match &cfg.data.note_types {
        Some(types) => {
            let allow: HashSet<String> = types.iter().cloned().collect();
            cohort.filter_note_types(&allow)
        }
        None => cohort,
    };
    let cohort_summary = CohortSummary {
        total_lines: load_report.total_lines,
        loaded: load_report.loaded,
        skipped: load_report.skipped.len(),
    };

    let code_set: BTreeSet<String> = cfg.label.icd_codes.iter().cloned().collect();
    let labels = label_cohort(&cohort, &cfg.rule, &code_set);
    let label_summary = summarize_labels(&labels);
    log::info!(
        "labeled {} encounters, {} positive",
        label_summary.total,
        label_summary.positives
    );

    let window_seed = cfg.window.seed.unwrap_or(seed);
    let dataset = assemble_dataset(
        &cohort,
        &labels,
        cfg.window.horizon_hours,
        cfg.window.modality,
        window_seed,
    )
    .map_err(|e| PipelineError::internal("windowing", e))?;
    log::info!(
        "dataset: {} rows kept of {} encounters",
        dataset.rows.len(),
        dataset.drop_stats.input_encounters
    );

    let table = match &cfg.text {
        Some(text) if cfg.window.modality.needs_text() => Some(
            EmbeddingTable::load(&loaded.embeddings_path().expect("validated"))
                .map_err(|e| PipelineError::data("features", e))?,
        ),
        _ => None,
    };
    let mean_pool = cfg.text.as_ref().map(|t| t.mean_pool).unwrap_or(false);
    let fm = featurize_dataset(
        &dataset,
        cfg.window.modality,
        table.as_ref(),
        mean_pool,
        &cfg.structured.variables,
    )?;

    let ids: Vec<String> = dataset
        .rows
        .iter()
        .map(|r| r.encounter_id.clone())
        .collect();
    let row_labels: Vec<bool> = dataset.rows.iter().map(|r| r.label).collect();
    let y: Vec<f64> = row_labels
        .iter()
        .map(|&l| if l { 1.0 } else { 0.0 })
        .collect();

    let (evaluation, mut scored, final_model) = match cfg.eval.split {
        SplitKind::Cv => {
            let cv_opts = CrossValidateOptions {
                folds: cfg.eval.folds,
                fractions: &cfg.eval.fractions,
                seed,
                model: &cfg.model,
                config_fingerprint: loaded.fingerprint.clone(),
            };
            let (report, rows) = cross_validate(&fm.x, &row_labels, &ids, &cv_opts)
                .map_err(|e| PipelineError::internal("evaluation", e))?;
            let lambda = pick_lambda(&fm.x, &row_labels, cfg, seed)
                .map_err(|e| PipelineError::internal("model", e))?;
            let model = RidgeModel::fit(&fm.x, &y, lambda, fm.feature_labels.clone())
                .map_err(|e| PipelineError::internal("model", e))?;
            (report, rows, model)
        }
        SplitKind::Temporal => {
            let cutoff = cfg.eval.cutoff.expect("validated");
            let admits: Vec<_> = dataset.rows.iter().map(|r| r.admit_time).collect();
            let (train, test) = temporal_split(&admits, cutoff)
                .map_err(|e| PipelineError::internal("evaluation", e))?;
            let train_x = fm.x.select(Axis(0), &train);
            let train_labels: Vec<bool> = train.iter().map(|&i| row_labels[i]).collect();
            let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let lambda = if cfg.model.select_lambda {
                select_lambda(
                    &train_x,
                    &train_labels,
                    &cfg.model.lambda_grid,
                    cfg.model.inner_folds,
                    seed,
                )
                .map_err(|e| PipelineError::internal("model", e))?
            } else {
                cfg.model.lambda
            };
            let model = RidgeModel::fit(&train_x, &train_y, lambda, fm.feature_labels.clone())
                .map_err(|e| PipelineError::internal("model", e))?;
            let test_x = fm.x.select(Axis(0), &test);
            let scores = model
                .score_rows(&test_x)
                .map_err(|e| PipelineError::internal("evaluation", e))?;
            let test_labels: Vec<bool> = test.iter().map(|&i| row_labels[i]).collect();
            let test_ids: Vec<String> = test.iter().map(|&i| ids[i].clone()).collect();
            let report = build_report(
                &scores,
                &test_labels,
                &test_ids,
                &cfg.eval.fractions,
                format!("temporal(cutoff={})", format_utc(cutoff)),
                loaded.fingerprint.clone(),
            )
            .map_err(|e| PipelineError::internal("evaluation", e))?;
            let rows: Vec<ScoredRow> = test
                .iter()
                .zip(&scores)
                .map(|(&i, &score)| ScoredRow {
                    encounter_id: ids[i].clone(),
                    score,
                    label: row_labels[i],
                    fold: 0,
                })
                .collect();
            (report, rows, model)
        }
    };

    let artifact = run_audits(&dataset, &scored, cfg.audit.fraction, cfg);
    let report = RunReport {
        config_fingerprint: loaded.fingerprint.clone(),
        seed,
        horizon_hours: cfg.window.horizon_hours,
        modality: cfg.window.modality,
        cohort: cohort_summary,
        labels: label_summary,
        drops: dataset.drop_stats,
        features: fm.summary.clone(),
        evaluation,
        model: ModelSummary {
            lambda: final_model.lambda,
            intercept: final_model.intercept,
            weight_l2_norm: final_model
                .weights
                .iter()
                .map(|w| w * w)
                .sum::<f64>()
                .sqrt(),
        },
        audit: AuditBrief {
            audited: artifact.leakage.audited,
            leakage_flagged: artifact.leakage.flagged.len(),
            leakage_rate: artifact.leakage.flagged_rate,
            vasopressor_flagged: artifact.vasopressor.flagged.len(),
        },
    };

    scored.sort_by(|a, b| a.encounter_id.cmp(&b.encounter_id));
    let files = write_artifacts(&out_dir, &report, &scored, &final_model, &artifact)
        .map_err(|e| PipelineError::internal("write", e))?;
    Ok(RunSummary {
        out_dir,
        report,
        files,
    })
}

fn pick_lambda(
    x: &Array2<f64>,
    labels: &[bool],
    cfg: &crate::config::PipelineConfig,
    seed: u64,
) -> Result<f64, crate::ridge::ModelError> {
    if cfg.model.select_lambda {
        select_lambda(
            x,
            labels,
            &cfg.model.lambda_grid,
            cfg.model.inner_folds,
            seed,
        )
    } else {
        Ok(cfg.model.lambda)
    }
}

/// Ranks rows by score (descending, id ascending on ties), audits the top
/// fraction for label leakage, and scans every row for vasopressor
/// medication events.
pub fn run_audits(
    dataset: &ModelingDataset,
    scored: &[ScoredRow],
    audited_fraction: f64,
    cfg: &crate::config::PipelineConfig,
) -> AuditArtifact {
    let k = (scored.len() as f64 * audited_fraction).round() as usize;
    let mut ranked: Vec<&ScoredRow> = scored.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.encounter_id.cmp(&b.encounter_id))
    });
    let top_ids: Vec<String> = ranked
        .iter()
        .take(k)
        .map(|r| r.encounter_id.clone())
        .collect();
    let leakage = leakage_scan(dataset, &top_ids, &cfg.audit.terms);
    let vasopressor = vasopressor_scan(dataset, &cfg.audit.vasopressor_classes);
    AuditArtifact {
        audited_fraction,
        top_ids,
        leakage,
        vasopressor,
    }
}

fn write_artifacts(
    out_dir: &Path,
    report: &RunReport,
    scored: &[ScoredRow],
    model: &RidgeModel,
    audit: &AuditArtifact,
) -> Result<Vec<PathBuf>, std::io::Error> {
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();

    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, to_pretty_json(report)?)?;
    files.push(report_path);

    let md_path = out_dir.join("report.md");
    std::fs::write(&md_path, render_markdown(report))?;
    files.push(md_path);

    let scores_path = out_dir.join("scores.csv");
    std::fs::write(&scores_path, render_scores_csv(scored))?;
    files.push(scores_path);

    let model_path = out_dir.join("model.json");
    std::fs::write(&model_path, to_pretty_json(model)?)?;
    files.push(model_path);

    let audit_path = out_dir.join("audit.json");
    std::fs::write(&audit_path, to_pretty_json(audit)?)?;
    files.push(audit_path);

    Ok(files)
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String, std::io::Error> {
    let mut body = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    body.push('\n');
    Ok(body)
}

/// Scores file: one row per evaluated encounter, sorted by id.
pub fn render_scores_csv(scored: &[ScoredRow]) -> String {
    let mut out = String::from("encounter_id,score,label,fold\n");
    for row in scored {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.encounter_id,
            row.score,
            if row.label { 1 } else { 0 },
            row.fold
        );
    }
    out
}

fn percent(v: f64) -> String {
    let p = v * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{:.0}%", p)
    } else {
        format!("{:.2}%", p)
    }
}

pub fn render_markdown(report: &RunReport) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Run report\n");
    let _ = writeln!(md, "- config fingerprint: `{}`", report.config_fingerprint);
    let _ = writeln!(md, "- seed: {}", report.seed);
    let _ = writeln!(md, "- split: {}", report.evaluation.split);
    let _ = writeln!(
        md,
        "- horizon: {} h ahead, modality: {}",
        report.horizon_hours,
        match report.modality {
            ModalityRequirement::Text => "text",
            ModalityRequirement::Structured => "structured",
            ModalityRequirement::Both => "both",
        }
    );
    let _ = writeln!(
        md,
        "- cohort: {} encounters loaded, {} skipped",
        report.cohort.loaded, report.cohort.skipped
    );
    let _ = writeln!(
        md,
        "- labels: {} positive of {} ({})",
        report.labels.positives,
        report.labels.total,
        report
            .labels
            .by_source
            .iter()
            .map(|(k, v)| format!("{k} {v}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let _ = writeln!(
        md,
        "- dataset: {} rows kept, {} dropped without text, {} dropped without measurements",
        report.drops.kept,
        report.drops.dropped_missing_text,
        report.drops.dropped_missing_structured
    );
    let _ = writeln!(
        md,
        "- features: width {} (text {}, structured {}); {} of {} tokens out of vocabulary; {} measurements ignored",
        report.features.width,
        report.features.text_dimension.map_or("none".to_string(), |d| d.to_string()),
        report.features.structured_width.map_or("none".to_string(), |d| d.to_string()),
        report.features.oov_tokens,
        report.features.tokens_seen,
        report.features.ignored_measurements
    );
    let _ = writeln!(
        md,
        "- model: lambda {}, intercept {:.6}, weight norm {:.6}",
        report.model.lambda, report.model.intercept, report.model.weight_l2_norm
    );
    let _ = writeln!(md, "\n## Discrimination\n");
    let _ = writeln!(md, "AUC: **{:.4}**\n", report.evaluation.auc);
    let _ = writeln!(
        md,
        "| Top fraction | Selected | Positives found | Precision | Recall |"
    );
    let _ = writeln!(md, "|---:|---:|---:|---:|---:|");
    for row in &report.evaluation.capture {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} |",
            percent(row.fraction),
            row.k_selected,
            row.positives_found,
            percent(row.precision),
            percent(row.recall)
        );
    }
    let _ = writeln!(md, "\n## Audits\n");
    let _ = writeln!(
        md,
        "- leakage: {} of {} audited encounters flagged ({})",
        report.audit.leakage_flagged,
        report.audit.audited,
        percent(report.audit.leakage_rate)
    );
    let _ = writeln!(
        md,
        "- vasopressor exposure in window: {} of {} rows flagged",
        report.audit.vasopressor_flagged, report.evaluation.n
    );
    md
}

/// Re-runs both audits against an existing run directory's `scores.csv`,
/// rebuilding the dataset from the config, and rewrites `audit.json`.
pub fn audit_existing(
    loaded: &LoadedConfig,
    run_dir: &Path,
    opts: &RunOptions,
) -> Result<AuditArtifact, PipelineError> {
    let issues = loaded.validate();
    if !issues.is_empty() {
        return Err(PipelineError::data("config", ConfigError::Invalid(issues)));
    }
    let cfg = &loaded.config;
    let seed = opts.seed.unwrap_or(cfg.run.seed);

    let scores_path = run_dir.join("scores.csv");
    let scored = read_scores_csv(&scores_path)?;

    let (cohort, _) = load_cohort(&loaded.cohort_path(), SCHEMA_VERSION, opts.skip_invalid)
        .map_err(|e| PipelineError::data("cohort", e))?;
    let cohort = match &cfg.data.note_types {
        Some(types) => {
            let allow: HashSet<String> = types.iter().cloned().collect();
            cohort.filter_note_types(&allow)
        }
        None => cohort,
    };
    let code_set: BTreeSet<String> = cfg.label.icd_codes.iter().cloned().collect();
    let labels = label_cohort(&cohort, &cfg.rule, &code_set);
    let dataset = assemble_dataset(
        &cohort,
        &labels,
        cfg.window.horizon_hours,
        cfg.window.modality,
        cfg.window.seed.unwrap_or(seed),
    )
    .map_err(|e| PipelineError::internal("windowing", e))?;

    let artifact = run_audits(&dataset, &scored, cfg.audit.fraction, cfg);
    let body = to_pretty_json(&artifact).map_err(|e| PipelineError::internal("write", e))?;
    std::fs::write(run_dir.join("audit.json"), body)
        .map_err(|e| PipelineError::internal("write", e))?;
    Ok(artifact)
}

fn read_scores_csv(path: &Path) -> Result<Vec<ScoredRow>, PipelineError> {
    let stage = "audit";
    let body = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::data(stage, format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if i == 0 {
            if line != "encounter_id,score,label,fold" {
                return Err(PipelineError::data(
                    stage,
                    format!("unexpected scores.csv header: {line:?}"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(PipelineError::data(
                stage,
                format!(
                    "scores.csv line {} has {} fields, expected 4",
                    i + 1,
                    parts.len()
                ),
            ));
        }
        let score: f64 = parts[1].parse().map_err(|e| {
            PipelineError::data(stage, format!("scores.csv line {}: bad score: {e}", i + 1))
        })?;
        let label = match parts[2] {
            "1" => true,
            "0" => false,
            other => {
                return Err(PipelineError::data(
                    stage,
                    format!("scores.csv line {}: bad label {other:?}", i + 1),
                ))
            }
        };
        let fold: usize = parts[3].parse().map_err(|e| {
            PipelineError::data(stage, format!("scores.csv line {}: bad fold: {e}", i + 1))
        })?;
        rows.push(ScoredRow {
            encounter_id: parts[0].to_string(),
            score,
            label,
            fold,
        });
    }
    Ok(rows)
}
