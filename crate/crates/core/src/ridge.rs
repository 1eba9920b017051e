//! L2-regularized linear scoring.
//!
//! Targets are the 0/1 labels; evaluation is rank-based, so no calibration
//! is attempted. Features are z-scored with training statistics, the
//! centered normal equations (XᵀX + λI) w = Xᵀ(y − ȳ) are solved by a
//! direct Cholesky factorization, and the intercept is mean(y).

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training matrix is empty")]
    EmptyInput,
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lambda must be a finite non-negative number, got {0}")]
    InvalidLambda(f64),
    #[error("normal equations are singular; rerun with lambda > 0")]
    SingularSystem,
    #[error("fit produced a non-finite weight")]
    NonFiniteWeights,
    #[error("lambda selection failed: {0}")]
    LambdaSelection(String),
}

/// Model hyperparameters as they appear in the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub lambda: f64,
    pub select_lambda: bool,
    pub lambda_grid: Vec<f64>,
    pub inner_folds: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lambda: 1.0,
            select_lambda: false,
            lambda_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            inner_folds: 3,
        }
    }
}

/// Per-feature z-score parameters fit on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub constant: Vec<bool>,
}

const CONSTANT_SCALE_FLOOR: f64 = 1e-12;

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Standardizer {
        let n = x.nrows() as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut scales = Vec::with_capacity(x.ncols());
        let mut constant = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let scale = var.sqrt();
            // NaN scale (non-finite input) is treated as constant too.
            let is_constant = scale.is_nan() || scale <= CONSTANT_SCALE_FLOOR;
            means.push(mean);
            scales.push(if is_constant { 1.0 } else { scale });
            constant.push(is_constant);
        }
        Standardizer {
            means,
            scales,
            constant,
        }
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn transform_value(&self, feature: usize, value: f64) -> f64 {
        if self.constant[feature] {
            0.0
        } else {
            (value - self.means[feature]) / self.scales[feature]
        }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            for v in col.iter_mut() {
                *v = if self.constant[j] {
                    0.0
                } else {
                    (*v - self.means[j]) / self.scales[j]
                };
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub feature_labels: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub standardizer: Standardizer,
}

/// Solves (XᵀX + λI) w = Xᵀ(y − ȳ) directly; returns (weights, intercept)
/// with intercept = ȳ. X is used as given; callers standardize first.
pub fn solve_normal_equations(
    x: &Array2<f64>,
    y: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, f64), ModelError> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(ModelError::EmptyInput);
    }
    if y.len() != n {
        return Err(ModelError::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(ModelError::InvalidLambda(lambda));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = Array1::from_iter(y.iter().map(|v| v - y_mean));

    let mut a = x.t().dot(x);
    for j in 0..d {
        a[[j, j]] += lambda;
    }
    let b = x.t().dot(&yc);
    let w = cholesky_solve(a, b.to_vec())?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteWeights);
    }
    Ok((w, y_mean))
}

/// In-place Cholesky factorization and solve of a symmetric system.
/// A non-positive pivot (relative to the matrix scale) means the system is
/// not positive definite, which for the normal equations means a
/// rank-deficient design at λ = 0.
fn cholesky_solve(mut a: Array2<f64>, mut b: Vec<f64>) -> Result<Vec<f64>, ModelError> {
    let d = b.len();
    let scale = (0..d).map(|j| a[[j, j]].abs()).fold(0.0f64, f64::max);
    let pivot_floor = scale.max(1.0) * 1e-12;
    for j in 0..d {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= a[[j, k]] * a[[j, k]];
        }
        // A NaN pivot (non-finite input) is rejected along with small ones.
        if diag.is_nan() || diag <= pivot_floor {
            return Err(ModelError::SingularSystem);
        }
        let ljj = diag.sqrt();
        a[[j, j]] = ljj;
        for i in (j + 1)..d {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / ljj;
        }
    }
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= a[[i, k]] * b[k];
        }
        b[i] = v / a[[i, i]];
    }
    for i in (0..d).rev() {
        let mut v = b[i];
        for k in (i + 1)..d {
            v -= a[[k, i]] * b[k];
        }
        b[i] = v / a[[i, i]];
    }
    Ok(b)
}

impl RidgeModel {
    /// Fits on raw features: the standardizer is fit here, on these rows
    /// only, then the standardized normal equations are solved.
    pub fn fit(
        x_raw: &Array2<f64>,
        y: &[f64],
        lambda: f64,
        feature_labels: Vec<String>,
    ) -> Result<RidgeModel, ModelError> {
        let d = x_raw.ncols();
        if feature_labels.len() != d {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                got: feature_labels.len(),
            });
        }
        let standardizer = Standardizer::fit(x_raw);
        let xs = standardizer.transform(x_raw);
        let (weights, intercept) = solve_normal_equations(&xs, y, lambda)?;
        Ok(RidgeModel {
            feature_labels,
            weights,
            intercept,
            lambda,
            standardizer,
        })
    }

    /// Risk score for one raw feature vector.
    pub fn score(&self, x_raw: &[f64]) -> Result<f64, ModelError> {
        if x_raw.len() != self.weights.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.weights.len(),
                got: x_raw.len(),
            });
        }
        let mut score = self.intercept;
        for (j, (&v, &w)) in x_raw.iter().zip(&self.weights).enumerate() {
            score += w * self.standardizer.transform_value(j, v);
        }
        Ok(score)
    }

    pub fn score_rows(&self, x_raw: &Array2<f64>) -> Result<Vec<f64>, ModelError> {
        x_raw
            .axis_iter(Axis(0))
            .map(|row| self.score(row.as_slice().expect("row is contiguous")))
            .collect()
    }
}

/// Picks the grid λ with the best inner-fold mean AUC; ties and
/// equal-scoring neighbors resolve toward the larger λ. A λ whose fit
/// fails on any fold (e.g. singular at 0) is disqualified.
pub fn select_lambda(
    x_raw: &Array2<f64>,
    labels: &[bool],
    grid: &[f64],
    inner_folds: usize,
    seed: u64,
) -> Result<f64, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::LambdaSelection("empty lambda grid".to_string()));
    }
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    grid.dedup();

    let fold_of = crate::eval::stratified_fold_indices(labels, inner_folds, seed)
        .map_err(|e| ModelError::LambdaSelection(e.to_string()))?;
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let labels_dummy: Vec<String> = (0..x_raw.ncols()).map(|j| format!("f{j}")).collect();

    let mut best: Option<(f64, f64)> = None; // (lambda, mean auc)
    'grid: for &lambda in &grid {
        let mut fold_aucs = Vec::new();
        for fold in 0..inner_folds {
            let hold: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == fold).collect();
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != fold).collect();
            if hold.is_empty() || train.is_empty() {
                continue;
            }
            let hold_labels: Vec<bool> = hold.iter().map(|&i| labels[i]).collect();
            if hold_labels.iter().all(|&l| l) || hold_labels.iter().all(|&l| !l) {
                log::warn!("lambda selection: inner fold {fold} has a single class, skipping");
                continue;
            }
            let train_x = x_raw.select(Axis(0), &train);
            let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = match RidgeModel::fit(&train_x, &train_y, lambda, labels_dummy.clone()) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("lambda {lambda} disqualified: fold {fold} fit failed: {e}");
                    continue 'grid;
                }
            };
            let hold_x = x_raw.select(Axis(0), &hold);
            let scores = model.score_rows(&hold_x)?;
            let auc = crate::eval::auc(&scores, &hold_labels)
                .map_err(|e| ModelError::LambdaSelection(e.to_string()))?;
            fold_aucs.push(auc);
        }
        if fold_aucs.is_empty() {
            log::warn!("lambda {lambda} disqualified: no usable inner folds");
            continue;
        }
        let mean = fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64;
        // Grid is ascending, so >= sends exact ties to the larger lambda.
        if best.is_none_or(|(_, best_mean)| mean >= best_mean) {
            best = Some((lambda, mean));
        }
    }
    best.map(|(lambda, _)| lambda)
        .ok_or_else(|| ModelError::LambdaSelection("every grid value was disqualified".to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0))
    }

    /// Gauss-Jordan inverse oracle for (XᵀX + λI) w = Xᵀ(y − ȳ).
    fn oracle_weights(x: &Array2<f64>, y: &[f64], lambda: f64) -> Vec<f64> {
        let d = x.ncols();
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let yc = Array1::from_iter(y.iter().map(|v| v - y_mean));
        let mut a = x.t().dot(x);
        for j in 0..d {
            a[[j, j]] += lambda;
        }
        let b = x.t().dot(&yc);

        let mut aug = Array2::<f64>::zeros((d, 2 * d));
        for i in 0..d {
            for j in 0..d {
                aug[[i, j]] = a[[i, j]];
            }
            aug[[i, d + i]] = 1.0;
        }
        for col in 0..d {
            let pivot_row = (col..d)
                .max_by(|&r1, &r2| {
                    aug[[r1, col]]
                        .abs()
                        .partial_cmp(&aug[[r2, col]].abs())
                        .unwrap()
                })
                .unwrap();
            for j in 0..2 * d {
                let tmp = aug[[col, j]];
                aug[[col, j]] = aug[[pivot_row, j]];
                aug[[pivot_row, j]] = tmp;
            }
            let pivot = aug[[col, col]];
            for j in 0..2 * d {
                aug[[col, j]] /= pivot;
            }
            for i in 0..d {
                if i != col {
                    let factor = aug[[i, col]];
                    for j in 0..2 * d {
                        aug[[i, j]] -= factor * aug[[col, j]];
                    }
                }
            }
        }
        (0..d)
            .map(|i| (0..d).map(|j| aug[[i, d + j]] * b[j]).sum())
            .collect()
    }

    #[test]
    fn identity_design_recovers_centered_targets() {
        let x = Array2::<f64>::eye(3);
        let y = [1.0, 0.0, 1.0];
        let (w, intercept) = solve_normal_equations(&x, &y, 0.0).unwrap();
        let ym = 2.0 / 3.0;
        assert!((intercept - ym).abs() < 1e-12);
        for (wi, yi) in w.iter().zip(&y) {
            assert!((wi - (yi - ym)).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_solved_single_feature() {
        let x = array![[-0.5], [0.5]];
        let (w, intercept) = solve_normal_equations(&x, &[0.0, 1.0], 1.0).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((intercept - 0.5).abs() < 1e-12);
    }

    #[test]
    fn huge_lambda_shrinks_weights_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 30, 5);
        let y: Vec<f64> = (0..30).map(|i| (i % 2) as f64).collect();
        let labels = (0..5).map(|j| format!("f{j}")).collect();
        let model = RidgeModel::fit(&x, &y, 1e9, labels).unwrap();
        assert!(model.weights.iter().all(|w| w.abs() < 1e-6));
        assert!((model.intercept - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weight_norm_is_non_increasing_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.random_range(10..60);
            let d = rng.random_range(1..10);
            let x = random_matrix(&mut rng, n, d);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            let mut prev = f64::INFINITY;
            for lambda in [0.01, 0.1, 1.0, 10.0, 100.0] {
                let (w, _) = solve_normal_equations(&x, &y, lambda).unwrap();
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm <= prev + 1e-12, "norm grew from {prev} to {norm}");
                prev = norm;
            }
        }
    }

    #[test]
    fn singular_at_zero_lambda_names_the_fix() {
        // Two identical columns make XᵀX rank deficient.
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let err = solve_normal_equations(&x, &[0.0, 1.0, 0.0], 0.0).unwrap_err();
        assert!(err.to_string().contains("lambda > 0"));
        assert!(solve_normal_equations(&x, &[0.0, 1.0, 0.0], 0.1).is_ok());
    }

    #[test]
    fn residuals_orthogonal_to_columns_at_zero_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let x = random_matrix(&mut rng, n, 6);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let (w, intercept) = solve_normal_equations(&x, &y, 0.0).unwrap();
        let pred: Vec<f64> = (0..n)
            .map(|i| intercept + (0..6).map(|j| x[[i, j]] * w[j]).sum::<f64>())
            .collect();
        for j in 0..6 {
            let dot: f64 = (0..n).map(|i| x[[i, j]] * (y[i] - pred[i])).sum();
            assert!(dot.abs() < 1e-8, "column {j} residual dot {dot}");
        }
    }

    #[test]
    fn matches_inverse_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let n = rng.random_range(5..50);
            let d = rng.random_range(1..8);
            let x = random_matrix(&mut rng, n, d);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            for lambda in [0.01, 1.0, 100.0] {
                let (w, _) = solve_normal_equations(&x, &y, lambda).unwrap();
                let expect = oracle_weights(&x, &y, lambda);
                for (a, b) in w.iter().zip(&expect) {
                    let denom = b.abs().max(1e-12);
                    assert!((a - b).abs() / denom < 1e-8, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn column_rescaling_leaves_scores_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 25;
        let x = random_matrix(&mut rng, n, 4);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let labels: Vec<String> = (0..4).map(|j| format!("f{j}")).collect();
        let model = RidgeModel::fit(&x, &y, 1.0, labels.clone()).unwrap();

        let mut scaled = x.clone();
        for v in scaled.column_mut(2).iter_mut() {
            *v *= 37.5;
        }
        let model_scaled = RidgeModel::fit(&scaled, &y, 1.0, labels).unwrap();
        for i in 0..n {
            let a = model.score(x.row(i).as_slice().unwrap()).unwrap();
            let b = model_scaled
                .score(scaled.row(i).as_slice().unwrap())
                .unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_columns_contribute_nothing() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [4.0, 5.0]];
        let y = [0.0, 0.0, 1.0, 1.0];
        let labels = vec!["a".to_string(), "b".to_string()];
        let model = RidgeModel::fit(&x, &y, 0.5, labels).unwrap();
        assert!(model.standardizer.constant[1]);
        assert_eq!(model.weights[1], 0.0);
        let s1 = model.score(&[2.5, 5.0]).unwrap();
        let s2 = model.score(&[2.5, 999.0]).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn score_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(&mut rng, 20, 3);
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(0..2) as f64).collect();
        let labels: Vec<String> = (0..3).map(|j| format!("f{j}")).collect();
        let model = RidgeModel::fit(&x, &y, 1.0, labels).unwrap();
        for _ in 0..50 {
            let x1: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x2: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let alpha: f64 = rng.random_range(0.0..1.0);
            let mix: Vec<f64> = x1
                .iter()
                .zip(&x2)
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect();
            let lhs = model.score(&mix).unwrap();
            let rhs = alpha * model.score(&x1).unwrap() + (1.0 - alpha) * model.score(&x2).unwrap();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn score_checks_dimensions() {
        let x = array![[1.0], [2.0]];
        let model = RidgeModel::fit(&x, &[0.0, 1.0], 1.0, vec!["f".to_string()]).unwrap();
        assert!(matches!(
            model.score(&[1.0, 2.0]),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_lambda_and_empty_input() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(
            solve_normal_equations(&x, &[0.0, 1.0], -1.0),
            Err(ModelError::InvalidLambda(_))
        ));
        assert!(matches!(
            solve_normal_equations(&x, &[0.0, 1.0], f64::NAN),
            Err(ModelError::InvalidLambda(_))
        ));
        let empty = Array2::<f64>::zeros((0, 0));
        assert!(matches!(
            solve_normal_equations(&empty, &[], 1.0),
            Err(ModelError::EmptyInput)
        ));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 15, 4);
        let y: Vec<f64> = (0..15).map(|_| rng.random_range(0..2) as f64).collect();
        let labels: Vec<String> = (0..4).map(|j| format!("f{j}")).collect();
        let model = RidgeModel::fit(&x, &y, 0.3, labels).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: RidgeModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
        let probe: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        assert_eq!(model.score(&probe).unwrap(), back.score(&probe).unwrap());
    }

    #[test]
    fn single_grid_value_is_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 30, 3);
        let labels: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let lambda = select_lambda(&x, &labels, &[0.7], 3, 9).unwrap();
        assert_eq!(lambda, 0.7);
    }

    #[test]
    fn ties_break_toward_larger_lambda() {
        // One perfectly separating feature: every lambda ranks identically,
        // so every fold AUC is 1.0 and the tie rule decides.
        let n = 30;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| if i % 2 == 0 { 1.0 } else { -1.0 });
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let lambda = select_lambda(&x, &labels, &[0.01, 1.0, 100.0], 3, 1).unwrap();
        assert_eq!(lambda, 100.0);
    }

    #[test]
    fn rank_deficient_design_disqualifies_zero_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 50;
        let d = 200;
        let x = random_matrix(&mut rng, n, d);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let lambda = select_lambda(&x, &labels, &[0.0, 1.0, 10.0], 3, 2).unwrap();
        assert!(lambda > 0.0, "selected lambda {lambda} should be positive");
    }
}
