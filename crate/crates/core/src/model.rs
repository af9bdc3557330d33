//! Recovered scalar ODEs and forecasting by integrating them.
//!
//! A model of order `n` for channel `f` reads
//! `f^(n) = intercept + Σ c_i A_i(f, f', ..., f^(n-1))`. Forecasting rewrites
//! it in companion form, a first-order system in `(f, ..., f^(n-1))`, and
//! integrates with RK4 at the data step.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dictionary::{build_features_multi, derivative_name, Dictionary, FeatureMatrix};
use crate::differentiation::DerivativeStack;
use crate::dynamics::{rk4_step, Dynamics, Rk4Workspace};
use crate::error::{invalid, Error, Result};
use crate::evaluation::smape_term;
use crate::lasso::{fit_cv, LassoConfig, LassoFit};

/// SMAPE charged for each horizon a diverged forecast could not reach.
pub const DIVERGED_SMAPE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOdeModel {
    /// Index into `dictionary.channels` of the modelled channel.
    pub target_channel: usize,
    pub dictionary: Dictionary,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub dt: f64,
    pub fit: LassoFit,
}

impl SparseOdeModel {
    /// Fits the `target_order`-th derivative of `stacks[target_channel]`
    /// against monomials of the lower derivatives of every stack.
    pub fn fit(
        stacks: &[&DerivativeStack],
        channel_names: &[String],
        target_channel: usize,
        target_order: usize,
        max_degree: u32,
        config: &LassoConfig,
    ) -> Result<Self> {
        let features = build_features_multi(stacks, channel_names, target_channel, target_order, max_degree)?;
        Self::from_features(&features, target_channel, stacks[0].dt, config)
    }

    pub fn from_features(
        features: &FeatureMatrix,
        target_channel: usize,
        dt: f64,
        config: &LassoConfig,
    ) -> Result<Self> {
        let fit = fit_cv(features, config)?;
        Ok(Self {
            target_channel,
            dictionary: features.dictionary.clone(),
            coefficients: fit.coefficients.clone(),
            intercept: fit.intercept,
            dt,
            fit,
        })
    }

    pub fn target_order(&self) -> usize {
        self.dictionary.orders
    }

    pub fn channel_name(&self) -> &str {
        &self.dictionary.channels[self.target_channel]
    }

    /// Right-hand side `intercept + Σ c_i A_i(vars)`.
    pub fn eval_highest(&self, vars: &[f64]) -> f64 {
        self.intercept
            + self
                .dictionary
                .monomials
                .iter()
                .zip(&self.coefficients)
                .filter(|(_, c)| **c != 0.0)
                .map(|(m, c)| c * m.eval(vars))
                .sum::<f64>()
    }

    /// Coefficients keyed by monomial name, the intercept folded into `1`.
    pub fn named_coefficients(&self) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        for ((name, m), c) in
            self.dictionary.monomial_names().into_iter().zip(&self.dictionary.monomials).zip(&self.coefficients)
        {
            let value = if m.is_constant() { self.intercept + c } else { *c };
            map.insert(name, value);
        }
        map
    }

    /// Companion-form derivative of a single-channel model.
    pub fn model_rhs(&self, state: &[f64]) -> Result<Vec<f64>> {
        let system = OdeSystem::new(vec![self.clone()])?;
        let mut out = vec![0.0; state.len()];
        system.eval(state, &mut out)?;
        Ok(out)
    }

    pub fn forecast(&self, stack: &DerivativeStack, horizons: &[usize]) -> Result<ForecastReport> {
        OdeSystem::new(vec![self.clone()])?.forecast(&[stack], 0, horizons)
    }

    pub fn to_record(&self) -> EquationRecord {
        EquationRecord {
            channel: self.channel_name().to_string(),
            target_order: self.target_order(),
            max_degree: self.dictionary.max_degree,
            monomials: self.dictionary.monomial_names(),
            coefficients: self.coefficients.clone(),
            intercept: self.intercept,
            lambda_selected: self.fit.lambda_selected,
            lambda_path: self.fit.lambda_path.clone(),
            cv_mean_error: self.fit.cv_mean_error.clone(),
            converged: self.fit.converged,
        }
    }
}

impl fmt::Display for SparseOdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lhs = derivative_name(self.channel_name(), self.target_order());
        write!(f, "{lhs} =")?;
        let mut any = false;
        let mut term = |f: &mut fmt::Formatter<'_>, c: f64, name: &str| -> fmt::Result {
            let sign = if c < 0.0 {
                "- "
            } else if any {
                "+ "
            } else {
                ""
            };
            any = true;
            if name == "1" {
                write!(f, " {sign}{:.6}", c.abs())
            } else {
                write!(f, " {sign}{:.6} * {name}", c.abs())
            }
        };
        if self.intercept != 0.0 {
            term(f, self.intercept, "1")?;
        }
        for (name, c) in self.dictionary.monomial_names().iter().zip(&self.coefficients) {
            if *c != 0.0 {
                term(f, *c, name)?;
            }
        }
        if !any {
            write!(f, " 0")?;
        }
        Ok(())
    }
}

/// Several models sharing one dictionary, one per channel, integrated jointly.
/// A single-channel latent model is the one-element case.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    models: Vec<SparseOdeModel>,
    order: usize,
}

impl OdeSystem {
    pub fn new(mut models: Vec<SparseOdeModel>) -> Result<Self> {
        let Some(first) = models.first() else {
            return invalid("a system needs at least one model");
        };
        let dictionary = first.dictionary.clone();
        let channels = dictionary.channels.len();
        if models.len() != channels {
            return invalid(format!("{} models for a dictionary over {channels} channels", models.len()));
        }
        for m in &models {
            if m.dictionary != dictionary {
                return invalid("models use different dictionaries");
            }
            if m.coefficients.len() != dictionary.len() {
                return invalid("coefficient count does not match the dictionary");
            }
        }
        models.sort_by_key(|m| m.target_channel);
        if models.iter().enumerate().any(|(i, m)| m.target_channel != i) {
            return invalid("need exactly one model per channel");
        }
        Ok(Self { order: dictionary.orders, models })
    }

    pub fn models(&self) -> &[SparseOdeModel] {
        &self.models
    }

    pub fn dt(&self) -> f64 {
        self.models[0].dt
    }

    /// Integrates from the endpoint state of `stacks` and reports channel
    /// `report_channel` at each horizon (in steps of `dt`).
    pub fn forecast(
        &self,
        stacks: &[&DerivativeStack],
        report_channel: usize,
        horizons: &[usize],
    ) -> Result<ForecastReport> {
        if stacks.len() != self.models.len() {
            return invalid("need one derivative stack per channel");
        }
        if report_channel >= self.models.len() {
            return invalid(format!("channel {report_channel} out of range"));
        }
        if horizons.is_empty() || horizons[0] == 0 || horizons.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("horizons must be positive and strictly ascending");
        }
        let mut state = Vec::with_capacity(self.dim());
        for s in stacks {
            if s.max_order < self.order {
                return invalid(format!(
                    "stack holds derivatives up to order {}, model needs {}",
                    s.max_order, self.order
                ));
            }
            if ((s.dt - self.dt()) / self.dt()).abs() > 1e-9 {
                return invalid(format!("stack dt {} differs from model dt {}", s.dt, self.dt()));
            }
            state.extend(s.endpoint_state().into_iter().take(self.order));
        }
        let origin = stacks[0].last_source_index();

        let mut ws = Rk4Workspace::new(state.len());
        let mut predictions = Vec::with_capacity(horizons.len());
        let mut diverged_at = None;
        let mut step = 0;
        let offset = report_channel * self.order;
        'outer: for (i, &h) in horizons.iter().enumerate() {
            while step < h {
                let ok = rk4_step(self, &mut state, self.dt(), &mut ws).is_ok() && state.iter().all(|v| v.is_finite());
                step += 1;
                if !ok {
                    diverged_at = Some(i);
                    break 'outer;
                }
            }
            predictions.push(state[offset]);
        }
        Ok(ForecastReport {
            horizons: horizons.to_vec(),
            predictions,
            truth: None,
            smape_by_horizon: None,
            diverged_at,
            origin,
        })
    }
}

impl Dynamics for OdeSystem {
    fn dim(&self) -> usize {
        self.models.len() * self.order
    }

    fn eval(&self, state: &[f64], out: &mut [f64]) -> Result<()> {
        if state.len() != self.dim() || out.len() != self.dim() {
            return invalid(format!("state must have length {}", self.dim()));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { last_valid: 0 });
        }
        let n = self.order;
        for (c, m) in self.models.iter().enumerate() {
            let block = c * n;
            out[block..block + n - 1].copy_from_slice(&state[block + 1..block + n]);
            out[block + n - 1] = m.eval_highest(state);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub horizons: Vec<usize>,
    /// Aligned with `horizons`; truncated at `diverged_at`.
    pub predictions: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    /// Entry `i` is the SMAPE over horizons `0..=i`; with contiguous horizons
    /// `1..=H` this is the SMAPE at time horizon `horizons[i]`.
    pub smape_by_horizon: Option<Vec<f64>>,
    /// Index of the first horizon that could not be reached.
    pub diverged_at: Option<usize>,
    /// Source-series index of the initial state; horizon `h` predicts sample
    /// `origin + h`.
    pub origin: usize,
}

impl ForecastReport {
    /// Attaches ground truth (aligned with `horizons`) and scores it.
    /// Unreached horizons cost [`DIVERGED_SMAPE`] each.
    pub fn with_truth(mut self, truth: Vec<f64>) -> Result<Self> {
        if truth.len() != self.horizons.len() {
            return invalid(format!("{} truth values for {} horizons", truth.len(), self.horizons.len()));
        }
        let mut total = 0.0;
        let smape = truth
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                total += match self.predictions.get(i) {
                    Some(&f) => smape_term(a, f),
                    None => DIVERGED_SMAPE,
                };
                total / (i + 1) as f64
            })
            .collect();
        self.truth = Some(truth);
        self.smape_by_horizon = Some(smape);
        Ok(self)
    }

    /// Truth taken from a source series, using `origin` for alignment.
    pub fn with_truth_from(self, series: &[f64]) -> Result<Self> {
        let last = self.origin + self.horizons.last().copied().unwrap_or(0);
        if last >= series.len() {
            return invalid(format!("series of length {} does not reach index {last}", series.len()));
        }
        let truth = self.horizons.iter().map(|h| series[self.origin + h]).collect();
        self.with_truth(truth)
    }

    /// CSV `horizon,prediction[,truth,smape]`; unreached predictions are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let scored = self.truth.is_some() && self.smape_by_horizon.is_some();
        if scored {
            w.write_record(["horizon", "prediction", "truth", "smape"])?;
        } else {
            w.write_record(["horizon", "prediction"])?;
        }
        for (i, h) in self.horizons.iter().enumerate() {
            let pred = self.predictions.get(i).map(|v| v.to_string()).unwrap_or_default();
            let mut rec = vec![h.to_string(), pred];
            if let (Some(t), Some(s)) = (&self.truth, &self.smape_by_horizon) {
                rec.push(t[i].to_string());
                rec.push(s[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// JSON form of one fitted equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationRecord {
    pub channel: String,
    pub target_order: usize,
    pub max_degree: u32,
    pub monomials: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda_selected: f64,
    pub lambda_path: Vec<f64>,
    pub cv_mean_error: Vec<f64>,
    pub converged: bool,
}

/// Model file: the dictionary's channels, the sampling step, and one equation
/// per modelled channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dt: f64,
    pub channels: Vec<String>,
    /// Source series column of each entry of `channels`; empty means the
    /// names coincide.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
    pub equations: Vec<EquationRecord>,
}

impl ModelFile {
    pub fn from_models(models: &[SparseOdeModel]) -> Result<Self> {
        let Some(first) = models.first() else {
            return invalid("no models to save");
        };
        Ok(Self {
            dt: first.dt,
            channels: first.dictionary.channels.clone(),
            columns: Vec::new(),
            equations: models.iter().map(SparseOdeModel::to_record).collect(),
        })
    }

    /// Series column feeding each dictionary channel.
    pub fn source_columns(&self) -> Result<Vec<String>> {
        if self.columns.is_empty() {
            Ok(self.channels.clone())
        } else if self.columns.len() == self.channels.len() {
            Ok(self.columns.clone())
        } else {
            invalid("model lists a different number of columns and channels")
        }
    }

    /// Rebuilds the models, checking the stored monomial names against the
    /// regenerated dictionary.
    pub fn into_models(self) -> Result<Vec<SparseOdeModel>> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid("model dt must be positive");
        }
        self.equations
            .into_iter()
            .map(|eq| {
                let dictionary = Dictionary::new(self.channels.clone(), eq.target_order, eq.max_degree)?;
                if dictionary.monomial_names() != eq.monomials {
                    return invalid(format!("monomial list for `{}` does not match its dictionary", eq.channel));
                }
                if eq.coefficients.len() != dictionary.len() {
                    return invalid(format!("coefficient count for `{}` does not match", eq.channel));
                }
                let Some(target_channel) = self.channels.iter().position(|c| *c == eq.channel) else {
                    return invalid(format!("equation channel `{}` not among model channels", eq.channel));
                };
                let n_nonzero = eq.coefficients.iter().filter(|c| **c != 0.0).count();
                let fit = LassoFit {
                    coefficients: eq.coefficients.clone(),
                    intercept: eq.intercept,
                    lambda_selected: eq.lambda_selected,
                    lambda_path: eq.lambda_path,
                    cv_mean_error: eq.cv_mean_error,
                    n_nonzero,
                    converged: eq.converged,
                    degenerate_path: false,
                    y_scale: 1.0,
                    kkt_violation: 0.0,
                };
                Ok(SparseOdeModel {
                    target_channel,
                    dictionary,
                    coefficients: eq.coefficients,
                    intercept: eq.intercept,
                    dt: self.dt,
                    fit,
                })
            })
            .collect()
    }
}
