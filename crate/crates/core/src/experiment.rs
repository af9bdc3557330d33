//! Multi-seed benchmark protocol: simulate, hold out a forecast window, fit
//! every requested target order, forecast and score.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::differentiation::{differentiate, DerivativeStack};
use crate::dynamics::{sample_initial_conditions, SystemSpec};
use crate::error::{invalid, Error, Result};
use crate::lasso::{coefficient_mse, LassoConfig};
use crate::model::{ForecastReport, OdeSystem, SparseOdeModel, DIVERGED_SMAPE};
use crate::timeseries::TimeSeries;

/// Which state variables the fit may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observation {
    /// One channel; every other variable is latent.
    Channel(usize),
    /// All channels, one equation per channel over a shared dictionary.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemSpec,
    pub observed: Observation,
    pub n_seeds: usize,
    /// Samples per simulated series, initial condition included.
    pub series_length: usize,
    pub dt: f64,
    pub target_orders: Vec<usize>,
    pub max_degree: u32,
    /// Forecast horizons in steps; the last `max(horizons)` samples are held out.
    pub horizons: Vec<usize>,
    pub lasso: LassoConfig,
    pub seed: u64,
}

/// Preset names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: [&str; 5] = ["oscillator-x", "rossler-y", "rossler-x", "lorenz-x", "lorenz-full"];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (system, observed, target_orders, max_degree) = match name {
            "oscillator-x" => (SystemSpec::oscillator(), Observation::Channel(0), vec![1, 2, 3], 3),
            "rossler-y" => (SystemSpec::rossler(), Observation::Channel(1), vec![1, 2, 3], 3),
            "rossler-x" => (SystemSpec::rossler(), Observation::Channel(0), vec![1, 2, 3], 3),
            "lorenz-x" => (SystemSpec::lorenz(), Observation::Channel(0), vec![1, 2, 3], 3),
            "lorenz-full" => (SystemSpec::lorenz(), Observation::Full, vec![1], 2),
            other => return invalid(format!("unknown preset `{other}`; known presets: {}", PRESETS.join(", "))),
        };
        Ok(Self {
            name: name.to_string(),
            system,
            observed,
            n_seeds: 20,
            series_length: 5000,
            dt: 0.01,
            target_orders,
            max_degree,
            horizons: (1..=200).collect(),
            lasso: LassoConfig::default(),
            seed: 0,
        })
    }

    pub fn holdout(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.lasso.validate()?;
        if self.n_seeds == 0 {
            return invalid("n_seeds must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid("dt must be positive");
        }
        if self.target_orders.is_empty() || self.target_orders.contains(&0) {
            return invalid("target orders must be positive and non-empty");
        }
        if self.horizons.is_empty() || self.horizons[0] == 0 || self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("horizons must be positive and strictly ascending");
        }
        if let Observation::Channel(c) = self.observed {
            if c >= self.system.dim() {
                return invalid(format!("observed channel {c} out of range"));
            }
        }
        let max_order = *self.target_orders.iter().max().unwrap();
        let train = self.series_length.saturating_sub(self.holdout());
        if train <= 2 * max_order + 1 || train < 2 * max_order + self.lasso.cv_folds {
            return invalid(format!(
                "series length {} leaves {train} training samples, too few for order {max_order}",
                self.series_length
            ));
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of this configuration.
    ///
    /// Blank lines and `#` comments are ignored. Keys: `system`, `observed`
    /// (a channel name or `full`), `n_seeds`, `series_length`, `dt`,
    /// `target_orders` (comma separated), `max_degree`, `horizon` (forecast
    /// steps `1..=horizon`), `seed`, the Lasso settings `n_lambdas`,
    /// `lambda_min_ratio`, `max_iter`, `tol`, `cv_folds`, and system
    /// coefficients as `param.<name>`.
    pub fn apply_overrides(&mut self, text: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidArgument(format!("cannot parse `{v}` for `{key}`")))
        }
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return invalid(format!("line {}: expected `key = value`", lineno + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "system" => {
                    self.system = SystemSpec::by_name(value)?;
                }
                "observed" => {
                    self.observed = if value == "full" {
                        Observation::Full
                    } else {
                        match self.system.channel_names().iter().position(|c| c == value) {
                            Some(i) => Observation::Channel(i),
                            None => return invalid(format!("unknown channel `{value}`")),
                        }
                    };
                }
                "n_seeds" => self.n_seeds = num(key, value)?,
                "series_length" => self.series_length = num(key, value)?,
                "dt" => self.dt = num(key, value)?,
                "target_orders" => {
                    self.target_orders = value.split(',').map(|v| num(key, v.trim())).collect::<Result<_>>()?;
                }
                "max_degree" => self.max_degree = num(key, value)?,
                "horizon" => {
                    let h: usize = num(key, value)?;
                    self.horizons = (1..=h).collect();
                }
                "seed" => self.seed = num(key, value)?,
                "n_lambdas" => self.lasso.n_lambdas = num(key, value)?,
                "lambda_min_ratio" => self.lasso.lambda_min_ratio = num(key, value)?,
                "max_iter" => self.lasso.max_iter = num(key, value)?,
                "tol" => self.lasso.tol = num(key, value)?,
                "cv_folds" => self.lasso.cv_folds = num(key, value)?,
                other => match other.strip_prefix("param.") {
                    Some(p) => self.system.set_param(p, num(key, value)?)?,
                    None => return invalid(format!("line {}: unknown key `{other}`", lineno + 1)),
                },
            }
        }
        Ok(())
    }

    fn observed_channels(&self) -> Vec<usize> {
        match self.observed {
            Observation::Channel(c) => vec![c],
            Observation::Full => (0..self.system.dim()).collect(),
        }
    }

    /// Channel whose forecasts are scored.
    fn scored_channel(&self) -> usize {
        match self.observed {
            Observation::Channel(c) => c,
            Observation::Full => 0,
        }
    }
}

/// Exact coefficients of the equations a fit should recover, when they are
/// known in closed form: channel name, then monomial name to coefficient.
pub fn reference_equations(
    system: &SystemSpec,
    observed: Observation,
    target_order: usize,
    max_degree: u32,
) -> Option<BTreeMap<String, BTreeMap<String, f64>>> {
    let names = system.channel_names();
    match (observed, target_order) {
        (Observation::Full, 1) => {
            let dict = Dictionary::new(names.clone(), 1, max_degree).ok()?;
            let monomial_names = dict.monomial_names();
            let mut out = BTreeMap::new();
            for (ch, terms) in system.polynomial_terms().into_iter().enumerate() {
                let mut eq = BTreeMap::new();
                for (exps, c) in terms {
                    let i = dict.monomials.iter().position(|m| m.exponents == exps)?;
                    eq.insert(monomial_names[i].clone(), c);
                }
                out.insert(names[ch].clone(), eq);
            }
            Some(out)
        }
        (Observation::Channel(c), 2) => match *system {
            // Both coordinates of a planar linear system obey
            // f'' = trace · f' - det · f.
            SystemSpec::Oscillator { a, b, c: cc, d } if max_degree >= 1 => {
                let mut eq = BTreeMap::new();
                eq.insert("f".to_string(), -(a * d - b * cc));
                eq.insert("f'".to_string(), a + d);
                Some(BTreeMap::from([(names[c].clone(), eq)]))
            }
            _ => None,
        },
        _ => None,
    }
}

/// Diagnostics of one fitted equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub channel: String,
    pub monomials: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda_selected: f64,
    pub n_nonzero: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    pub y_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed_index: usize,
    pub initial_condition: Vec<f64>,
    pub fits: Vec<FitSummary>,
    pub report: Option<ForecastReport>,
    /// Wall-clock seconds spent in cross-validated fitting, summed over
    /// equations.
    pub fit_time_seconds: f64,
    pub coefficient_mse: Option<f64>,
    pub error: Option<String>,
}

impl SeedOutcome {
    /// SMAPE curve with failures and unreached horizons charged the maximum.
    fn smape_curve(&self, len: usize) -> Vec<f64> {
        match self.report.as_ref().and_then(|r| r.smape_by_horizon.clone()) {
            Some(s) => s,
            None => vec![DIVERGED_SMAPE; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderResult {
    pub target_order: usize,
    pub per_seed: Vec<SeedOutcome>,
    pub mean_smape_by_horizon: Vec<f64>,
    pub mean_fit_time: f64,
    /// Mean of per-seed coefficient MSE, when reference equations exist.
    pub mean_coefficient_mse: Option<f64>,
    /// Channel, then monomial name, to mean coefficient over seeds that fit.
    pub mean_coefficients: BTreeMap<String, BTreeMap<String, f64>>,
    pub failed_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub horizons: Vec<usize>,
    pub by_order: Vec<OrderResult>,
}

impl ExperimentResult {
    pub fn order(&self, target_order: usize) -> Option<&OrderResult> {
        self.by_order.iter().find(|o| o.target_order == target_order)
    }

    /// Flat CSV `target_order,seed,horizon,smape,fit_time`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["target_order", "seed", "horizon", "smape", "fit_time"])?;
        for order in &self.by_order {
            for seed in &order.per_seed {
                let curve = seed.smape_curve(self.horizons.len());
                for (h, s) in self.horizons.iter().zip(curve) {
                    w.write_record([
                        order.target_order.to_string(),
                        seed.seed_index.to_string(),
                        h.to_string(),
                        s.to_string(),
                        seed.fit_time_seconds.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Neumaier-compensated sum in iteration order.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

fn stacks_for(train: &TimeSeries, channels: &[usize], order: usize) -> Result<Vec<DerivativeStack>> {
    channels.iter().map(|&c| differentiate(train.channel(c), train.dt, order)).collect()
}

fn run_seed_order(
    config: &ExperimentConfig,
    series: &TimeSeries,
    order: usize,
) -> Result<(Vec<SparseOdeModel>, f64, ForecastReport)> {
    let channels = config.observed_channels();
    let names: Vec<String> = channels.iter().map(|&c| series.channel_names[c].clone()).collect();
    let names = if channels.len() == 1 { vec!["f".to_string()] } else { names };
    let train = series.head(series.len() - config.holdout())?;
    let stacks = stacks_for(&train, &channels, order)?;
    let stack_refs: Vec<&DerivativeStack> = stacks.iter().collect();

    let mut models = Vec::with_capacity(channels.len());
    let mut fit_time = 0.0;
    for target in 0..channels.len() {
        let start = Instant::now();
        let model = SparseOdeModel::fit(&stack_refs, &names, target, order, config.max_degree, &config.lasso)?;
        fit_time += start.elapsed().as_secs_f64();
        models.push(model);
    }

    let scored = config.scored_channel();
    let report_channel = channels.iter().position(|&c| c == scored).unwrap_or(0);
    let system = OdeSystem::new(models.clone())?;
    let report = system.forecast(&stack_refs, report_channel, &config.horizons)?;
    let truth: Vec<f64> = series.channel(scored).to_vec();
    let report = report.with_truth_from(&truth)?;
    Ok((models, fit_time, report))
}

fn summarize(model: &SparseOdeModel, channel: &str) -> FitSummary {
    FitSummary {
        channel: channel.to_string(),
        monomials: model.dictionary.monomial_names(),
        coefficients: model.coefficients.clone(),
        intercept: model.intercept,
        lambda_selected: model.fit.lambda_selected,
        n_nonzero: model.fit.n_nonzero,
        converged: model.fit.converged,
        kkt_violation: model.fit.kkt_violation,
        y_scale: model.fit.y_scale,
    }
}

/// Runs every seed and target order of `config`.
///
/// Per-seed failures (diverged simulation, failed fit) are recorded in that
/// seed's outcome and scored as the worst case; they never abort the batch.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let initial = sample_initial_conditions(config.system.dim(), config.n_seeds, config.seed);
    let channel_names = config.system.channel_names();
    let observed: Vec<String> = config.observed_channels().iter().map(|&c| channel_names[c].clone()).collect();

    // outcomes[seed][order]
    let outcomes: Vec<Vec<SeedOutcome>> = initial
        .par_iter()
        .enumerate()
        .map(|(seed_index, x0)| {
            let series = config.system.integrate(x0, config.dt, config.series_length - 1);
            config
                .target_orders
                .iter()
                .map(|&order| {
                    let base = SeedOutcome {
                        seed_index,
                        initial_condition: x0.clone(),
                        fits: Vec::new(),
                        report: None,
                        fit_time_seconds: 0.0,
                        coefficient_mse: None,
                        error: None,
                    };
                    let result = series
                        .as_ref()
                        .map_err(|e| e.to_string())
                        .and_then(|s| run_seed_order(config, s, order).map_err(|e| e.to_string()));
                    match result {
                        Ok((models, fit_time, report)) => {
                            let reference =
                                reference_equations(&config.system, config.observed, order, config.max_degree);
                            let coefficient_mse = reference.map(|truth| {
                                let per_eq: Vec<f64> = models
                                    .iter()
                                    .zip(&observed)
                                    .map(|(m, ch)| {
                                        let empty = BTreeMap::new();
                                        let t = truth.get(ch).unwrap_or(&empty);
                                        coefficient_mse(&m.named_coefficients(), t, &m.dictionary.monomial_names())
                                    })
                                    .collect();
                                mean(&per_eq)
                            });
                            SeedOutcome {
                                fits: models.iter().zip(&observed).map(|(m, ch)| summarize(m, ch)).collect(),
                                report: Some(report),
                                fit_time_seconds: fit_time,
                                coefficient_mse,
                                ..base
                            }
                        }
                        Err(e) => SeedOutcome { error: Some(e), ..base },
                    }
                })
                .collect()
        })
        .collect();

    let n_h = config.horizons.len();
    let by_order = config
        .target_orders
        .iter()
        .enumerate()
        .map(|(k, &order)| {
            let per_seed: Vec<SeedOutcome> = outcomes.iter().map(|o| o[k].clone()).collect();
            let curves: Vec<Vec<f64>> = per_seed.iter().map(|s| s.smape_curve(n_h)).collect();
            let mean_smape_by_horizon =
                (0..n_h).map(|i| compensated_sum(curves.iter().map(|c| c[i])) / curves.len() as f64).collect();
            let fitted: Vec<&SeedOutcome> = per_seed.iter().filter(|s| s.error.is_none()).collect();
            let times: Vec<f64> = fitted.iter().map(|s| s.fit_time_seconds).collect();
            let mses: Vec<f64> = fitted.iter().filter_map(|s| s.coefficient_mse).collect();
            let mut mean_coefficients = BTreeMap::new();
            if !fitted.is_empty() {
                for (e, ch) in observed.iter().enumerate() {
                    let mut eq = BTreeMap::new();
                    for (i, name) in fitted[0].fits[e].monomials.iter().enumerate() {
                        let values: Vec<f64> = fitted
                            .iter()
                            .map(|s| {
                                let f = &s.fits[e];
                                if name == "1" {
                                    f.coefficients[i] + f.intercept
                                } else {
                                    f.coefficients[i]
                                }
                            })
                            .collect();
                        eq.insert(name.clone(), mean(&values));
                    }
                    mean_coefficients.insert(ch.clone(), eq);
                }
            }
            OrderResult {
                target_order: order,
                mean_fit_time: if times.is_empty() { 0.0 } else { mean(&times) },
                mean_coefficient_mse: if mses.is_empty() { None } else { Some(mean(&mses)) },
                failed_seeds: per_seed.len() - fitted.len(),
                mean_smape_by_horizon,
                mean_coefficients,
                per_seed,
            }
        })
        .collect();

    Ok(ExperimentResult { config: config.clone(), horizons: config.horizons.clone(), by_order })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(name).unwrap();
        c.n_seeds = 2;
        c.series_length = 1200;
        c.horizons = (1..=50).collect();
        c.lasso.n_lambdas = 20;
        c
    }

    #[test]
    fn presets_are_valid() {
        for p in PRESETS {
            ExperimentConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(ExperimentConfig::preset("duffing").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::preset("rossler-y").unwrap();
        c.apply_overrides(
            "# comment\nn_seeds = 3\ntarget_orders = 2, 3\nhorizon=10\nparam.a = 0.3\nobserved = z\ntol=1e-6\n",
        )
        .unwrap();
        assert_eq!(c.n_seeds, 3);
        assert_eq!(c.target_orders, vec![2, 3]);
        assert_eq!(c.horizons.len(), 10);
        assert_eq!(c.system, SystemSpec::Rossler { a: 0.3, b: 2.0, c: 4.0 });
        assert_eq!(c.observed, Observation::Channel(2));
        assert_eq!(c.lasso.tol, 1e-6);
        assert!(c.apply_overrides("bogus = 1").is_err());
        assert!(c.apply_overrides("n_seeds = x").is_err());
        assert!(c.apply_overrides("no equals sign").is_err());
    }

    #[test]
    fn too_short_series_rejected() {
        let mut c = small("oscillator-x");
        c.series_length = 55;
        assert!(c.validate().is_err());
    }

    #[test]
    fn oscillator_reference_equation() {
        let r = reference_equations(&SystemSpec::oscillator(), Observation::Channel(0), 2, 3).unwrap();
        let eq = &r["x"];
        assert!((eq["f"] + 1.0).abs() < 1e-15);
        assert!((eq["f'"] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn lorenz_reference_equations() {
        let r = reference_equations(&SystemSpec::lorenz(), Observation::Full, 1, 2).unwrap();
        assert_eq!(r["x"]["x"], -10.0);
        assert_eq!(r["x"]["y"], 10.0);
        assert_eq!(r["y"]["x * z"], -1.0);
        assert_eq!(r["z"]["x * y"], 1.0);
    }

    #[test]
    fn small_run_is_deterministic() {
        let c = small("oscillator-x");
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        for (oa, ob) in a.by_order.iter().zip(&b.by_order) {
            assert_eq!(oa.mean_smape_by_horizon, ob.mean_smape_by_horizon);
            for (sa, sb) in oa.per_seed.iter().zip(&ob.per_seed) {
                assert_eq!(sa.fits, sb.fits);
                assert_eq!(sa.report, sb.report);
            }
        }
    }

    #[test]
    fn failed_seed_is_recorded_not_fatal() {
        let mut c = small("oscillator-x");
        // Strongly unstable linear system: the simulation overflows.
        c.system = SystemSpec::Oscillator { a: 400.0, b: 0.0, c: 0.0, d: 0.0 };
        c.target_orders = vec![2];
        let r = run_experiment(&c).unwrap();
        let o = r.order(2).unwrap();
        assert_eq!(o.failed_seeds, 2);
        assert!(o.per_seed.iter().all(|s| s.error.is_some()));
        assert!(o.mean_smape_by_horizon.iter().all(|s| *s == DIVERGED_SMAPE));
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
