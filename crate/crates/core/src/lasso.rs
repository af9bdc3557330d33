//! ℓ1-regularised least squares by cyclic coordinate descent.
//!
//! The objective is `1/(2N) ||y - X c||² + λ ||c||₁` on column-standardized
//! `X` and centered `y`. Every solve works on the Gram form `XᵀX/N`, `Xᵀy/N`,
//! so a sweep costs `O(p²)` regardless of the number of rows.
//!
//! [`fit_cv`] wraps the solver in the usual pipeline: standardize, build a
//! geometric λ path from `λ_max`, score each λ by contiguous-block k-fold
//! cross-validation, refit on all rows and map the coefficients back to the
//! original scale with an unpenalized intercept.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::FeatureMatrix;
use crate::error::{invalid, Result};

/// Columns whose standard deviation falls below this fraction of their
/// magnitude are treated as constant and left out of the penalized design.
const CONSTANT_COLUMN_RTOL: f64 = 1e-12;

/// Solver and cross-validation settings.
///
/// `tol` bounds both the per-sweep coefficient change and the subgradient
/// residual of the scaled problem. Polynomial dictionaries are strongly
/// collinear, so a residual bound converts into a much larger coefficient
/// error; the default is tight for that reason, and the sweep budget is
/// large enough for it on degree-3 dictionaries. The λ floor is low because
/// cross-validation on these dictionaries keeps improving down to tiny λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    /// Maximum number of full coordinate sweeps per λ.
    pub max_iter: usize,
    pub tol: f64,
    pub cv_folds: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { n_lambdas: 100, lambda_min_ratio: 1e-6, max_iter: 100_000, tol: 1e-6, cv_folds: 10 }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambdas == 0 {
            return invalid("n_lambdas must be positive");
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return invalid(format!("lambda_min_ratio must lie in (0, 1), got {}", self.lambda_min_ratio));
        }
        if self.max_iter == 0 {
            return invalid("max_iter must be positive");
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return invalid(format!("tol must be positive, got {}", self.tol));
        }
        if self.cv_folds < 2 {
            return invalid(format!("cv_folds must be at least 2, got {}", self.cv_folds));
        }
        Ok(())
    }
}

/// Descending geometric grid of penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPath {
    pub values: Vec<f64>,
    /// `Xᵀy` vanished, so every λ yields the zero solution. The grid then
    /// starts at 1 so it stays positive.
    pub degenerate: bool,
}

/// Builds the path from `λ_max = max_j |X_jᵀ y| / N` down to
/// `λ_max · lambda_min_ratio`.
pub fn lambda_path(x_std: ArrayView2<'_, f64>, y_centered: ArrayView1<'_, f64>, config: &LassoConfig) -> LambdaPath {
    let n = x_std.nrows() as f64;
    let lambda_max = x_std.axis_iter(Axis(1)).map(|col| (col.dot(&y_centered) / n).abs()).fold(0.0, f64::max);
    geometric_path(lambda_max, config)
}

fn geometric_path(lambda_max: f64, config: &LassoConfig) -> LambdaPath {
    let degenerate = !(lambda_max > 0.0 && lambda_max.is_finite());
    let top = if degenerate { 1.0 } else { lambda_max };
    let k = config.n_lambdas;
    let values = if k == 1 {
        vec![top]
    } else {
        let log_ratio = config.lambda_min_ratio.ln();
        (0..k).map(|i| top * (log_ratio * i as f64 / (k - 1) as f64).exp()).collect()
    };
    LambdaPath { values, degenerate }
}

/// Quadratic part of the problem in Gram form.
#[derive(Debug, Clone)]
pub struct GramProblem {
    /// `XᵀX / N`
    pub gram: Array2<f64>,
    /// `Xᵀy / N`
    pub xty: Array1<f64>,
}

impl GramProblem {
    pub fn new(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let gram = x.t().dot(&x) / n;
        let xty = x.t().dot(&y) / n;
        Self { gram, xty }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    /// `Xᵀ(y - Xc)/N`
    pub fn correlation(&self, coef: &[f64]) -> Array1<f64> {
        &self.xty - &self.gram.dot(&ArrayView1::from(coef))
    }

    /// Largest violation of the Lasso subgradient conditions at `coef`.
    pub fn kkt_violation(&self, lambda: f64, coef: &[f64]) -> f64 {
        let g = self.correlation(coef);
        g.iter()
            .zip(coef)
            .enumerate()
            .filter(|(j, _)| self.gram[[*j, *j]] > 0.0)
            .map(
                |(_, (&gj, &cj))| {
                    if cj == 0.0 {
                        (gj.abs() - lambda).max(0.0)
                    } else {
                        (gj - lambda * cj.signum()).abs()
                    }
                },
            )
            .fold(0.0, f64::max)
    }
}

/// Outcome of one coordinate-descent solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CdSolution {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent in Gram form.
///
/// Stops once a full sweep moves no coefficient by more than
/// `tol · max(1, max|c|)` and the subgradient conditions hold within `tol`.
/// Hitting `max_iter` returns the last iterate with `converged = false`.
pub fn coordinate_descent_gram(
    problem: &GramProblem,
    lambda: f64,
    warm_start: &[f64],
    config: &LassoConfig,
) -> CdSolution {
    let p = problem.dim();
    let g = &problem.gram;
    let mut c = warm_start.to_vec();
    for j in 0..p {
        if g[[j, j]] <= 0.0 {
            c[j] = 0.0;
        }
    }
    // gc = G c, updated incrementally.
    let mut gc = g.dot(&ArrayView1::from(&c[..]));
    for sweep in 1..=config.max_iter {
        let mut max_delta = 0.0_f64;
        let mut max_coef = 0.0_f64;
        for j in 0..p {
            let gjj = g[[j, j]];
            if gjj <= 0.0 {
                continue;
            }
            let old = c[j];
            let rho = problem.xty[j] - gc[j] + gjj * old;
            let new = soft_threshold(rho, lambda) / gjj;
            let delta = new - old;
            if delta != 0.0 {
                c[j] = new;
                gc.scaled_add(delta, &g.column(j));
                max_delta = max_delta.max(delta.abs());
            }
            max_coef = max_coef.max(new.abs());
        }
        if max_delta < config.tol * max_coef.max(1.0) && problem.kkt_violation(lambda, &c) <= config.tol {
            return CdSolution { coefficients: c, converged: true, sweeps: sweep };
        }
        if sweep % 64 == 0 {
            // Refresh against drift from the incremental updates.
            gc = g.dot(&ArrayView1::from(&c[..]));
        }
    }
    CdSolution { coefficients: c, converged: false, sweeps: config.max_iter }
}

/// Coordinate descent on an explicit standardized design.
pub fn coordinate_descent(
    x_std: ArrayView2<'_, f64>,
    y_centered: ArrayView1<'_, f64>,
    lambda: f64,
    warm_start: &[f64],
    config: &LassoConfig,
) -> Result<CdSolution> {
    if x_std.nrows() != y_centered.len() {
        return invalid("design and target row counts differ");
    }
    if warm_start.len() != x_std.ncols() {
        return invalid("warm start length must equal the column count");
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be non-negative, got {lambda}"));
    }
    let problem = GramProblem::new(x_std, y_centered);
    Ok(coordinate_descent_gram(&problem, lambda, warm_start, config))
}

/// `1/(2N) ||y - X c||² + λ ||c||₁`
pub fn lasso_objective(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, lambda: f64, coef: &[f64]) -> f64 {
    let r = &y - &x.dot(&ArrayView1::from(coef));
    r.dot(&r) / (2.0 * x.nrows() as f64) + lambda * coef.iter().map(|c| c.abs()).sum::<f64>()
}

/// Column statistics of a design restricted to some rows.
#[derive(Debug, Clone)]
struct Standardizer {
    x_mean: Vec<f64>,
    /// Zero for columns left out of the penalized design.
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
}

impl Standardizer {
    fn fit(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, rows: &[usize], penalized: &[bool]) -> Self {
        let n = rows.len() as f64;
        let p = x.ncols();
        let mut x_mean = vec![0.0; p];
        let mut x_scale = vec![0.0; p];
        for j in 0..p {
            if !penalized[j] {
                continue;
            }
            let col = x.column(j);
            let mean = rows.iter().map(|&r| col[r]).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (col[r] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            x_mean[j] = mean;
            if sd > CONSTANT_COLUMN_RTOL * mean.abs() && sd > 0.0 {
                x_scale[j] = sd;
            }
        }
        let y_mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n;
        let y_var = rows.iter().map(|&r| (y[r] - y_mean).powi(2)).sum::<f64>() / n;
        let y_sd = y_var.sqrt();
        let y_scale = if y_sd > CONSTANT_COLUMN_RTOL * y_mean.abs() && y_sd > 0.0 { y_sd } else { 1.0 };
        Self { x_mean, x_scale, y_mean, y_scale }
    }

    /// Gram problem of the standardized design and the centered target divided
    /// by `y_scale`.
    fn problem(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, rows: &[usize]) -> GramProblem {
        let p = x.ncols();
        let mut z = Array2::zeros((rows.len(), p));
        let mut t = Array1::zeros(rows.len());
        for (i, &r) in rows.iter().enumerate() {
            for j in 0..p {
                if self.x_scale[j] > 0.0 {
                    z[[i, j]] = (x[[r, j]] - self.x_mean[j]) / self.x_scale[j];
                }
            }
            t[i] = (y[r] - self.y_mean) / self.y_scale;
        }
        GramProblem::new(z.view(), t.view())
    }

    fn unscale(&self, beta: &[f64]) -> (Vec<f64>, f64) {
        let coef: Vec<f64> = beta
            .iter()
            .zip(&self.x_scale)
            .map(|(&b, &s)| if s > 0.0 && b != 0.0 { self.y_scale * b / s } else { 0.0 })
            .collect();
        let intercept = self.y_mean - coef.iter().zip(&self.x_mean).map(|(c, m)| c * m).sum::<f64>();
        (coef, intercept)
    }
}

/// Result of [`fit_cv`], on the original scale of the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// One per dictionary column. Constant columns are absorbed into
    /// `intercept` and reported as zero here.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda_selected: f64,
    pub lambda_path: Vec<f64>,
    pub cv_mean_error: Vec<f64>,
    pub n_nonzero: usize,
    /// Every solve of the final refit met the stopping rule.
    pub converged: bool,
    pub degenerate_path: bool,
    /// Standard deviation the target was divided by before solving; solver
    /// tolerances apply in those units.
    pub y_scale: f64,
    /// Subgradient-condition violation of the final solution, in scaled units.
    pub kkt_violation: f64,
}

impl LassoFit {
    pub fn predict_row(&self, features: &[f64]) -> f64 {
        self.intercept + features.iter().zip(&self.coefficients).map(|(x, c)| x * c).sum::<f64>()
    }
}

fn solve_path(problem: &GramProblem, lambdas: &[f64], config: &LassoConfig) -> Vec<CdSolution> {
    let mut warm = vec![0.0; problem.dim()];
    lambdas
        .iter()
        .map(|&lambda| {
            let sol = coordinate_descent_gram(problem, lambda, &warm, config);
            warm.clone_from(&sol.coefficients);
            sol
        })
        .collect()
}

fn fold_bounds(n: usize, folds: usize, k: usize) -> (usize, usize) {
    (k * n / folds, (k + 1) * n / folds)
}

/// Cross-validated Lasso over the dictionary in `features`.
pub fn fit_cv(features: &FeatureMatrix, config: &LassoConfig) -> Result<LassoFit> {
    config.validate()?;
    let x = features.x.view();
    let y = features.y.view();
    let n = x.nrows();
    if y.len() != n {
        return invalid("design and target row counts differ");
    }
    if n < config.cv_folds {
        return invalid(format!("{n} rows cannot be split into {} folds", config.cv_folds));
    }
    let penalized: Vec<bool> = features.monomials().iter().map(|m| !m.is_constant()).collect();

    let all_rows: Vec<usize> = (0..n).collect();
    let full = Standardizer::fit(x, y, &all_rows, &penalized);
    let full_problem = full.problem(x, y, &all_rows);
    // λ_max in target units.
    let lambda_max = full_problem.xty.iter().fold(0.0_f64, |m, v| m.max(v.abs())) * full.y_scale;
    let path = geometric_path(lambda_max, config);

    let fold_errors: Vec<Vec<f64>> = (0..config.cv_folds)
        .into_par_iter()
        .map(|k| {
            let (lo, hi) = fold_bounds(n, config.cv_folds, k);
            let train: Vec<usize> = (0..lo).chain(hi..n).collect();
            let st = Standardizer::fit(x, y, &train, &penalized);
            let problem = st.problem(x, y, &train);
            let scaled: Vec<f64> = path.values.iter().map(|l| l / st.y_scale).collect();
            solve_path(&problem, &scaled, config)
                .iter()
                .map(|sol| {
                    let (coef, intercept) = st.unscale(&sol.coefficients);
                    let sse: f64 = (lo..hi)
                        .map(|r| {
                            let pred = intercept + x.row(r).iter().zip(&coef).map(|(a, c)| a * c).sum::<f64>();
                            (y[r] - pred).powi(2)
                        })
                        .sum();
                    sse / (hi - lo) as f64
                })
                .collect()
        })
        .collect();

    let cv_mean_error: Vec<f64> = (0..path.values.len())
        .map(|i| fold_errors.iter().map(|e| e[i]).sum::<f64>() / config.cv_folds as f64)
        .collect();
    // Strict comparison scanning from the largest λ breaks ties towards sparsity.
    let mut best = 0;
    for (i, e) in cv_mean_error.iter().enumerate() {
        if *e < cv_mean_error[best] {
            best = i;
        }
    }

    let scaled: Vec<f64> = path.values[..=best].iter().map(|l| l / full.y_scale).collect();
    let sols = solve_path(&full_problem, &scaled, config);
    let last = sols.last().expect("path is non-empty");
    let (coefficients, intercept) = full.unscale(&last.coefficients);
    let n_nonzero = coefficients.iter().filter(|c| **c != 0.0).count();
    Ok(LassoFit {
        n_nonzero,
        intercept,
        kkt_violation: full_problem.kkt_violation(scaled[best], &last.coefficients),
        converged: sols.iter().all(|s| s.converged),
        coefficients,
        lambda_selected: path.values[best],
        lambda_path: path.values,
        cv_mean_error,
        degenerate_path: path.degenerate,
        y_scale: full.y_scale,
    })
}

/// Mean squared coefficient error over the union of `dictionary` and both
/// maps' keys; a missing key reads as zero.
pub fn coefficient_mse(fit: &BTreeMap<String, f64>, truth: &BTreeMap<String, f64>, dictionary: &[String]) -> f64 {
    let mut keys: Vec<&String> = dictionary.iter().chain(fit.keys()).chain(truth.keys()).collect();
    keys.sort();
    keys.dedup();
    if keys.is_empty() {
        return 0.0;
    }
    let sum: f64 = keys
        .iter()
        .map(|k| {
            let a = fit.get(*k).copied().unwrap_or(0.0);
            let b = truth.get(*k).copied().unwrap_or(0.0);
            (a - b).powi(2)
        })
        .sum();
    sum / keys.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Dictionary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    fn standardize(x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.clone();
        for mut col in z.columns_mut() {
            let m = col.mean().unwrap();
            let sd = col.mapv(|v| (v - m).powi(2)).mean().unwrap().sqrt();
            col.mapv_inplace(|v| (v - m) / sd);
        }
        z
    }

    fn centered(y: &Array1<f64>) -> Array1<f64> {
        let m = y.mean().unwrap();
        y.mapv(|v| v - m)
    }

    #[test]
    fn path_is_geometric() {
        let x = standardize(&random_matrix(50, 3, 1));
        let y = centered(&x.column(0).mapv(|v| 2.0 * v + 0.1));
        let path = lambda_path(x.view(), y.view(), &LassoConfig::default());
        assert_eq!(path.values.len(), 100);
        assert!((path.values[99] / path.values[0] - 1e-6).abs() < 1e-18);
        assert!(path.values.windows(2).all(|w| w[1] < w[0]));
        assert!(!path.degenerate);
    }

    #[test]
    fn lambda_max_single_column() {
        let x = Array2::from_shape_vec((4, 1), vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let y = Array1::from(vec![2.0, -2.0, 2.0, -2.0]);
        let path = lambda_path(x.view(), y.view(), &LassoConfig::default());
        assert_eq!(path.values[0], 2.0);
    }

    #[test]
    fn zero_target_gives_degenerate_path() {
        let x = standardize(&random_matrix(20, 2, 2));
        let y = Array1::zeros(20);
        let path = lambda_path(x.view(), y.view(), &LassoConfig::default());
        assert!(path.degenerate);
        assert!(path.values.iter().all(|l| *l > 0.0));
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let x = standardize(&random_matrix(80, 4, 3));
        let y = centered(&(x.column(1).to_owned() * 3.0 - x.column(2)));
        let cfg = LassoConfig::default();
        let path = lambda_path(x.view(), y.view(), &cfg);
        for lambda in [path.values[0], 2.0 * path.values[0]] {
            let sol = coordinate_descent(x.view(), y.view(), lambda, &[0.0; 4], &cfg).unwrap();
            assert!(sol.coefficients.iter().all(|c| *c == 0.0));
            assert!(sol.converged);
        }
    }

    #[test]
    fn soft_threshold_shape() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn objective_decreases_along_path() {
        let x = standardize(&random_matrix(100, 6, 4));
        let y = centered(&(x.column(0).to_owned() - x.column(3).to_owned() * 0.5 + x.column(5).mapv(|v| v * v)));
        let cfg = LassoConfig::default();
        let path = lambda_path(x.view(), y.view(), &cfg);
        let mut warm = vec![0.0; 6];
        for &lambda in &path.values {
            let sol = coordinate_descent(x.view(), y.view(), lambda, &warm, &cfg).unwrap();
            let before = lasso_objective(x.view(), y.view(), lambda, &warm);
            let after = lasso_objective(x.view(), y.view(), lambda, &sol.coefficients);
            assert!(after <= before + 1e-15, "λ={lambda}: {after} > {before}");
            warm = sol.coefficients;
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = LassoConfig { cv_folds: 1, ..Default::default() };
        assert!(c.validate().is_err());
        c = LassoConfig { lambda_min_ratio: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
        c = LassoConfig { tol: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    fn features_from(x: Array2<f64>, y: Array1<f64>) -> FeatureMatrix {
        let p = x.ncols();
        let dictionary = Dictionary::new(vec!["f".into()], p, 1).unwrap();
        // Drop the constant monomial to get exactly `p` linear columns.
        let mut dictionary = dictionary;
        dictionary.monomials.remove(0);
        FeatureMatrix { dictionary, x, y }
    }

    #[test]
    fn fit_cv_rejects_too_few_rows() {
        let fm = features_from(random_matrix(5, 2, 5), Array1::zeros(5));
        assert!(fit_cv(&fm, &LassoConfig::default()).is_err());
    }

    #[test]
    fn zero_target_fits_zero_model() {
        let fm = features_from(random_matrix(200, 3, 6), Array1::zeros(200));
        let fit = fit_cv(&fm, &LassoConfig::default()).unwrap();
        assert!(fit.coefficients.iter().all(|c| *c == 0.0));
        assert_eq!(fit.intercept, 0.0);
        assert_eq!(fit.n_nonzero, 0);
        assert!(fit.degenerate_path);
    }

    #[test]
    fn selected_lambda_is_on_path() {
        let x = random_matrix(300, 4, 7);
        let y = x.column(0).to_owned() * 2.0 + 1.0;
        let fit = fit_cv(&features_from(x, y), &LassoConfig::default()).unwrap();
        assert!(fit.lambda_path.contains(&fit.lambda_selected));
        assert_eq!(fit.cv_mean_error.len(), 100);
    }

    #[test]
    fn coefficient_mse_examples() {
        let dict: Vec<String> = (0..10).map(|i| format!("m{i}")).collect();
        let mut fit = BTreeMap::new();
        fit.insert("m1".to_string(), 1.0);
        let mut truth = fit.clone();
        assert_eq!(coefficient_mse(&fit, &truth, &dict), 0.0);
        truth.insert("m2".to_string(), 2.0);
        assert!((coefficient_mse(&fit, &truth, &dict) - 0.4).abs() < 1e-15);
    }
}
