//! Dataset splitting and ranking metrics.
//!
//! Cross-validation pools every holdout score before computing metrics, so
//! AUC and capture are calculated once over the full dataset rather than
//! averaged per fold.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ridge::{select_lambda, ModelConfig, ModelError, RidgeModel};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("metric requires at least one positive and one negative")]
    SingleClass,
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("top-fraction selection is empty: round({n} * {fraction}) = 0")]
    ZeroSelection { n: usize, fraction: f64 },
    #[error("fold count must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("too few {class} rows for {k} folds: have {have}, need at least {k}")]
    TooFewRows {
        class: &'static str,
        have: usize,
        k: usize,
    },
    #[error("temporal split leaves the {0} side empty")]
    EmptySide(&'static str),
    #[error("training failed on fold {fold}: {source}")]
    FoldTraining {
        fold: usize,
        #[source]
        source: ModelError,
    },
    #[error("model error: {0}")]
    Model(#[from] ModelError),
}

/// Row-index fold assignment: positives and negatives are shuffled
/// independently with the seed and dealt round-robin, so each fold's
/// positive count is within one of proportional.
pub fn stratified_fold_indices(
    labels: &[bool],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, EvalError> {
    if k < 2 {
        return Err(EvalError::BadFoldCount(k));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k {
        return Err(EvalError::TooFewRows {
            class: "positive",
            have: pos.len(),
            k,
        });
    }
    if neg.len() < k {
        return Err(EvalError::TooFewRows {
            class: "negative",
            have: neg.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold_of = vec![0usize; labels.len()];
    for (pos_idx, &row) in pos.iter().enumerate() {
        fold_of[row] = pos_idx % k;
    }
    for (neg_idx, &row) in neg.iter().enumerate() {
        fold_of[row] = neg_idx % k;
    }
    Ok(fold_of)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

pub fn stratified_folds(
    ids: &[String],
    labels: &[bool],
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, EvalError> {
    let fold_of = stratified_fold_indices(labels, k, seed)?;
    Ok(FoldAssignment {
        k,
        assignment: ids.iter().cloned().zip(fold_of.iter().copied()).collect(),
    })
}

/// Index split by admission time: strictly before the cutoff trains,
/// at or after it tests.
pub fn temporal_split(
    admit_times: &[DateTime<Utc>],
    cutoff: DateTime<Utc>,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    let (train, test): (Vec<usize>, Vec<usize>) =
        (0..admit_times.len()).partition(|&i| admit_times[i] < cutoff);
    if train.is_empty() {
        return Err(EvalError::EmptySide("train"));
    }
    if test.is_empty() {
        return Err(EvalError::EmptySide("test"));
    }
    Ok((train, test))
}

/// Mann-Whitney AUC with midranks, so tied positive-negative pairs count
/// one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    let mut positive_rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the midrank.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &row in &order[i..=j] {
            if labels[row] {
                positive_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let u = positive_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureRow {
    pub fraction: f64,
    pub k_selected: usize,
    pub positives_found: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall over the k = round(n * fraction) highest-scored
/// rows (half away from zero). Score ties at the selection boundary break
/// by ascending encounter_id. With zero total positives, recall is 0.
pub fn top_fraction_capture(
    scores: &[f64],
    labels: &[bool],
    ids: &[String],
    fraction: f64,
) -> Result<CaptureRow, EvalError> {
    if scores.len() != labels.len() || scores.len() != ids.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len().min(ids.len()),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::BadFraction(fraction));
    }
    let n = scores.len();
    let k_selected = (n as f64 * fraction).round() as usize;
    if k_selected == 0 {
        return Err(EvalError::ZeroSelection { n, fraction });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    let positives_found = order[..k_selected.min(n)]
        .iter()
        .filter(|&&i| labels[i])
        .count();
    let total_positives = labels.iter().filter(|&&l| l).count();
    let recall = if total_positives == 0 {
        0.0
    } else {
        positives_found as f64 / total_positives as f64
    };
    Ok(CaptureRow {
        fraction,
        k_selected,
        positives_found,
        precision: positives_found as f64 / k_selected as f64,
        recall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub auc: f64,
    pub capture: Vec<CaptureRow>,
    pub n: usize,
    pub positives: usize,
    pub split: String,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRow {
    pub encounter_id: String,
    pub score: f64,
    pub label: bool,
    pub fold: usize,
}

pub struct CrossValidateOptions<'a> {
    pub folds: usize,
    pub fractions: &'a [f64],
    pub seed: u64,
    pub model: &'a ModelConfig,
    pub config_fingerprint: String,
}

/// K-fold cross-validation: fit on k−1 folds, score the holdout, pool all
/// holdout scores, then compute AUC and capture once over the pool.
pub fn cross_validate(
    x: &Array2<f64>,
    labels: &[bool],
    ids: &[String],
    opts: &CrossValidateOptions,
) -> Result<(EvaluationReport, Vec<ScoredRow>), EvalError> {
    let n = x.nrows();
    if labels.len() != n || ids.len() != n {
        return Err(EvalError::LengthMismatch {
            scores: n,
            labels: labels.len().min(ids.len()),
        });
    }
    let fold_of = stratified_fold_indices(labels, opts.folds, opts.seed)?;
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let generic_labels: Vec<String> = (0..x.ncols()).map(|j| format!("f{j}")).collect();

    let mut scores = vec![0.0f64; n];
    for fold in 0..opts.folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let hold: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let train_x = x.select(Axis(0), &train);
        let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();

        let lambda = if opts.model.select_lambda {
            let train_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
            select_lambda(
                &train_x,
                &train_labels,
                &opts.model.lambda_grid,
                opts.model.inner_folds,
                opts.seed
                    .wrapping_add(fold as u64)
                    .wrapping_mul(0x9E37_79B9),
            )
            .map_err(|source| EvalError::FoldTraining { fold, source })?
        } else {
            opts.model.lambda
        };

        let model = RidgeModel::fit(&train_x, &train_y, lambda, generic_labels.clone())
            .map_err(|source| EvalError::FoldTraining { fold, source })?;
        let hold_x = x.select(Axis(0), &hold);
        let hold_scores = model
            .score_rows(&hold_x)
            .map_err(|source| EvalError::FoldTraining { fold, source })?;
        for (&i, s) in hold.iter().zip(hold_scores) {
            scores[i] = s;
        }
    }

    let rows: Vec<ScoredRow> = (0..n)
        .map(|i| ScoredRow {
            encounter_id: ids[i].clone(),
            score: scores[i],
            label: labels[i],
            fold: fold_of[i],
        })
        .collect();
    let report = build_report(
        &scores,
        labels,
        ids,
        opts.fractions,
        format!("cv(k={})", opts.folds),
        opts.config_fingerprint.clone(),
    )?;
    Ok((report, rows))
}

/// Metrics over one scored set; shared by the CV and temporal paths.
pub fn build_report(
    scores: &[f64],
    labels: &[bool],
    ids: &[String],
    fractions: &[f64],
    split: String,
    config_fingerprint: String,
) -> Result<EvaluationReport, EvalError> {
    let mut capture = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        capture.push(top_fraction_capture(scores, labels, ids, fraction)?);
    }
    Ok(EvaluationReport {
        auc: auc(scores, labels)?,
        capture,
        n: labels.len(),
        positives: labels.iter().filter(|&&l| l).count(),
        split,
        config_fingerprint,
    })
}
