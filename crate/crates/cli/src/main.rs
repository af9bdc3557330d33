use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use latent_ode::differentiation::MAX_ORDER;
use latent_ode::experiment::PRESETS;
use latent_ode::model::DIVERGED_SMAPE;
use latent_ode::{
    differentiate, naive_forecast, run_experiment, sample_initial_conditions, DerivativeStack, Error, ExperimentConfig,
    ForecastReport, LassoConfig, ModelFile, OdeSystem, SparseOdeModel, SystemSpec, TimeSeries,
};

/// Sparse recovery of higher-order ODEs from partially observed series.
#[derive(Parser)]
#[command(name = "latent-ode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a benchmark system and write its trajectory as CSV.
    #[command(allow_negative_numbers = true)]
    Simulate(SimulateArgs),
    /// Fit a sparse higher-order equation to one or more CSV columns.
    #[command(allow_negative_numbers = true)]
    Fit(FitArgs),
    /// Forecast a series with a fitted model.
    Forecast(ForecastArgs),
    /// Score fitted models and the naive baseline on a held-out tail.
    Evaluate(EvaluateArgs),
    /// Run a multi-seed experiment from a preset or config file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// oscillator, rossler or lorenz.
    system: String,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Initial state, comma separated. Overrides --seed.
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    /// Seed for a standard-normal initial state.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    /// Output CSV; standard output if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct LassoArgs {
    #[arg(long, default_value_t = LassoConfig::default().n_lambdas)]
    n_lambdas: usize,
    #[arg(long, default_value_t = LassoConfig::default().lambda_min_ratio)]
    lambda_min_ratio: f64,
    #[arg(long, default_value_t = LassoConfig::default().max_iter)]
    max_iter: usize,
    #[arg(long, default_value_t = LassoConfig::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = LassoConfig::default().cv_folds)]
    cv_folds: usize,
}

impl LassoArgs {
    fn config(&self) -> Result<LassoConfig> {
        let cfg = LassoConfig {
            n_lambdas: self.n_lambdas,
            lambda_min_ratio: self.lambda_min_ratio,
            max_iter: self.max_iter,
            tol: self.tol,
            cv_folds: self.cv_folds,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV with a `t` column.
    input: PathBuf,
    /// Column to model; repeat to model several columns jointly.
    #[arg(long = "channel", required = true)]
    channels: Vec<String>,
    #[arg(long, default_value_t = 2)]
    target_order: usize,
    #[arg(long, default_value_t = 3)]
    degree: u32,
    /// Trailing samples excluded from fitting.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    #[command(flatten)]
    lasso: LassoArgs,
    /// Output model JSON.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// `1..200`, `200` (same as `1..200`) or a comma-separated list.
    #[arg(long, default_value = "1..200")]
    horizons: String,
    /// Forecast from before the last `holdout` samples and score against them.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    /// Column to report for a multi-channel model; defaults to the first.
    #[arg(long)]
    channel: Option<String>,
    /// Output CSV; standard output if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Model JSON; repeat to compare several.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    #[arg(long, default_value = "1..200")]
    horizons: String,
    /// Held-out tail length; defaults to the largest horizon.
    #[arg(long)]
    holdout: Option<usize>,
    /// Column to score; defaults to the first column of the first model.
    #[arg(long)]
    channel: Option<String>,
    /// Window of the naive mean baseline.
    #[arg(long, default_value_t = 24)]
    window: usize,
    /// Output CSV; standard output if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Built-in configuration.
    #[arg(long)]
    preset: Option<String>,
    /// `key = value` overrides; may name its own `preset`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override applied last; repeatable.
    #[arg(long = "set")]
    sets: Vec<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Failure that maps to exit code 1 rather than 2.
#[derive(Debug)]
struct NumericFailure(String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NumericFailure>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Diverged { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Forecast(a) => forecast(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

fn check_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("output directory {} does not exist", dir.display())
        }
        _ => Ok(()),
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_series(path: &Path) -> Result<TimeSeries> {
    check_input(path)?;
    TimeSeries::load(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_horizons(text: &str) -> Result<Vec<usize>> {
    let text = text.trim();
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| anyhow!("bad horizon `{s}`"));
    let horizons: Vec<usize> = if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi) = (parse(lo)?, parse(hi.trim_start_matches('='))?);
        (lo..=hi).collect()
    } else if text.contains(',') {
        text.split(',').map(parse).collect::<Result<_>>()?
    } else {
        (1..=parse(text)?).collect()
    };
    if horizons.is_empty() || horizons[0] == 0 || horizons.windows(2).any(|w| w[1] <= w[0]) {
        bail!("horizons must be positive and strictly ascending");
    }
    Ok(horizons)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut system = SystemSpec::by_name(&args.system)?;
    let overrides = [
        ("a", args.a),
        ("b", args.b),
        ("c", args.c),
        ("d", args.d),
        ("sigma", args.sigma),
        ("rho", args.rho),
        ("beta", args.beta),
    ];
    for (name, value) in overrides {
        if let Some(v) = value {
            system.set_param(name, v)?;
        }
    }
    system.validate()?;
    if !(args.dt > 0.0 && args.dt.is_finite()) {
        bail!("--dt must be positive, got {}", args.dt);
    }
    if args.steps == 0 {
        bail!("--steps must be positive");
    }
    if let Some(p) = &args.output {
        check_output(p)?;
    }
    let x0 = match args.x0 {
        Some(x0) => x0,
        None => sample_initial_conditions(system.dim(), 1, args.seed).remove(0),
    };
    let series = system.integrate(&x0, args.dt, args.steps)?;
    let mut out = sink(args.output.as_deref())?;
    series.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

/// Derivative stacks of `columns`, cut `holdout` samples before the end.
fn stacks_for(series: &TimeSeries, columns: &[String], holdout: usize, order: usize) -> Result<Vec<DerivativeStack>> {
    if holdout >= series.len() {
        bail!("holdout {holdout} leaves no samples of a {}-sample series", series.len());
    }
    let train = series.head(series.len() - holdout)?;
    columns
        .iter()
        .map(|c| {
            let i = train.channel_index(c)?;
            differentiate(train.channel(i), train.dt, order).with_context(|| format!("differentiating `{c}`"))
        })
        .collect()
}

fn fit(args: FitArgs) -> Result<()> {
    let lasso = args.lasso.config()?;
    if args.target_order == 0 || args.target_order > MAX_ORDER {
        bail!("--target-order must be in 1..={MAX_ORDER}");
    }
    if args.degree == 0 {
        bail!("--degree must be positive");
    }
    check_output(&args.output)?;
    let series = load_series(&args.input)?;
    let stacks = stacks_for(&series, &args.channels, args.holdout, args.target_order)?;
    let refs: Vec<&DerivativeStack> = stacks.iter().collect();
    let names = if args.channels.len() == 1 { vec!["f".to_string()] } else { args.channels.clone() };

    let mut models = Vec::with_capacity(names.len());
    for target in 0..names.len() {
        let model = SparseOdeModel::fit(&refs, &names, target, args.target_order, args.degree, &lasso)?;
        let f = &model.fit;
        println!("{model}");
        println!(
            "  lambda = {:e} (path {:e} .. {:e}, {} values), {} nonzero terms, converged: {}",
            f.lambda_selected,
            f.lambda_path.first().copied().unwrap_or(0.0),
            f.lambda_path.last().copied().unwrap_or(0.0),
            f.lambda_path.len(),
            f.n_nonzero,
            f.converged
        );
        models.push(model);
    }
    let mut file = ModelFile::from_models(&models)?;
    file.columns = args.channels.clone();
    let json = serde_json::to_string_pretty(&file)?;
    fs::write(&args.output, json + "\n").with_context(|| format!("writing {}", args.output.display()))?;
    Ok(())
}

struct LoadedModel {
    system: OdeSystem,
    columns: Vec<String>,
}

fn load_model(path: &Path, series_dt: f64) -> Result<LoadedModel> {
    check_input(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let columns = file.source_columns()?;
    if ((file.dt - series_dt) / file.dt).abs() > 1e-9 {
        bail!("model {} was fitted with dt = {} but the series has dt = {}", path.display(), file.dt, series_dt);
    }
    let system = OdeSystem::new(file.into_models()?)?;
    Ok(LoadedModel { system, columns })
}

fn report_index(columns: &[String], channel: Option<&str>) -> Result<usize> {
    match channel {
        None => Ok(0),
        Some(c) => columns.iter().position(|x| x == c).ok_or_else(|| anyhow!("model does not describe column `{c}`")),
    }
}

/// Forecast of `model` from `holdout` samples before the end, scored when
/// the truth is available.
fn model_report(
    model: &LoadedModel,
    series: &TimeSeries,
    channel: Option<&str>,
    horizons: &[usize],
    holdout: usize,
) -> Result<ForecastReport> {
    let order = model.system.models()[0].target_order();
    let report_channel = report_index(&model.columns, channel)?;
    let stacks = stacks_for(series, &model.columns, holdout, order)?;
    let refs: Vec<&DerivativeStack> = stacks.iter().collect();
    let report = model.system.forecast(&refs, report_channel, horizons)?;
    let column = series.channel_index(&model.columns[report_channel])?;
    let truth = series.channel(column).to_vec();
    if holdout > 0 && report.origin + horizons[horizons.len() - 1] < truth.len() {
        Ok(report.with_truth_from(&truth)?)
    } else {
        Ok(report)
    }
}

fn forecast(args: ForecastArgs) -> Result<()> {
    let horizons = parse_horizons(&args.horizons)?;
    if let Some(p) = &args.output {
        check_output(p)?;
    }
    let series = load_series(&args.input)?;
    let model = load_model(&args.model, series.dt)?;
    if args.holdout > 0 && args.holdout < horizons[horizons.len() - 1] {
        eprintln!("note: horizons beyond the held-out tail are not scored");
    }
    let report = model_report(&model, &series, args.channel.as_deref(), &horizons, args.holdout)?;
    let mut out = sink(args.output.as_deref())?;
    report.write_csv(&mut out)?;
    out.flush()?;
    if let Some(s) = report.smape_by_horizon.as_ref().and_then(|s| s.last()) {
        eprintln!("SMAPE over horizons 1..{}: {s:.6}", horizons[horizons.len() - 1]);
    }
    if let Some(i) = report.diverged_at {
        return Err(NumericFailure(format!("forecast diverged before horizon {}", horizons[i])).into());
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let horizons = parse_horizons(&args.horizons)?;
    let max_h = horizons[horizons.len() - 1];
    let holdout = args.holdout.unwrap_or(max_h);
    if holdout < max_h {
        bail!("--holdout {holdout} is shorter than the largest horizon {max_h}");
    }
    if let Some(p) = &args.output {
        check_output(p)?;
    }
    let series = load_series(&args.input)?;
    let models: Vec<LoadedModel> = args.models.iter().map(|p| load_model(p, series.dt)).collect::<Result<_>>()?;

    let column = match (&args.channel, models.first()) {
        (Some(c), _) => c.clone(),
        (None, Some(m)) => m.columns[0].clone(),
        (None, None) => series.channel_names[0].clone(),
    };
    let values = series.channel(series.channel_index(&column)?).to_vec();
    let train_len =
        values.len().checked_sub(holdout).filter(|n| *n > 0).ok_or_else(|| {
            anyhow!("holdout {holdout} leaves no training samples of a {}-sample series", values.len())
        })?;

    let mut headers = vec!["horizon".to_string()];
    let mut curves = Vec::new();
    let mut diverged = Vec::new();
    for (path, model) in args.models.iter().zip(&models) {
        let report = model_report(model, &series, Some(&column), &horizons, holdout)?;
        if report.diverged_at.is_some() {
            diverged.push(path.display().to_string());
        }
        headers.push(path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()));
        curves.push(report.smape_by_horizon.ok_or_else(|| anyhow!("no truth for {}", path.display()))?);
    }
    let naive = ForecastReport {
        horizons: horizons.clone(),
        predictions: naive_forecast(&values[..train_len], args.window, &horizons)?,
        truth: None,
        smape_by_horizon: None,
        diverged_at: None,
        origin: train_len - 1,
    }
    .with_truth_from(&values)?;
    headers.push(format!("naive{}", args.window));
    curves.push(naive.smape_by_horizon.expect("truth attached"));

    let mut out = sink(args.output.as_deref())?;
    writeln!(out, "{}", headers.join(","))?;
    for (i, h) in horizons.iter().enumerate() {
        let row: Vec<String> = curves.iter().map(|c| c[i].to_string()).collect();
        writeln!(out, "{h},{}", row.join(","))?;
    }
    out.flush()?;
    if !diverged.is_empty() {
        eprintln!("note: diverged forecasts scored as {DIVERGED_SMAPE} past divergence: {}", diverged.join(", "));
    }
    Ok(())
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let text = match &args.config {
        Some(p) => {
            check_input(p)?;
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => String::new(),
    };
    let mut preset = args.preset.clone();
    let mut rest = String::new();
    for line in text.lines() {
        let body = line.split('#').next().unwrap_or("");
        match body.split_once('=') {
            Some((k, v)) if k.trim() == "preset" => {
                if preset.is_none() {
                    preset = Some(v.trim().to_string());
                }
            }
            _ => {
                rest.push_str(line);
                rest.push('\n');
            }
        }
    }
    let Some(preset) = preset else {
        bail!("need --preset or a `preset = ...` line in --config; presets: {}", PRESETS.join(", "));
    };
    let mut cfg = ExperimentConfig::preset(&preset)?;
    cfg.apply_overrides(&rest)?;
    for s in &args.sets {
        cfg.apply_overrides(s)?;
    }
    if let Some(p) = &args.config {
        cfg.name = p.file_stem().map_or(cfg.name.clone(), |s| s.to_string_lossy().into_owned());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let cfg = experiment_config(&args)?;
    if !args.out_dir.is_dir() {
        bail!("output directory {} does not exist", args.out_dir.display());
    }
    let result = run_experiment(&cfg)?;
    let json_path = args.out_dir.join(format!("{}.json", cfg.name));
    let csv_path = args.out_dir.join(format!("{}.csv", cfg.name));
    fs::write(&json_path, serde_json::to_string_pretty(&result)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;
    result.write_csv(BufWriter::new(File::create(&csv_path)?))?;

    println!("{}: {} seeds, {} samples, dt {}", cfg.name, cfg.n_seeds, cfg.series_length, cfg.dt);
    let marks: Vec<usize> = [1, 25, 50, 100, 125, 200].into_iter().filter(|h| result.horizons.contains(h)).collect();
    for order in &result.by_order {
        let at: Vec<String> = marks
            .iter()
            .map(|h| {
                let i = result.horizons.iter().position(|x| x == h).unwrap();
                format!("h{h}={:.4}", order.mean_smape_by_horizon[i])
            })
            .collect();
        print!("  order {}: SMAPE {}; fit {:.3} s", order.target_order, at.join(" "), order.mean_fit_time);
        if let Some(mse) = order.mean_coefficient_mse {
            print!("; coefficient MSE {mse:.3e}");
        }
        if order.failed_seeds > 0 {
            print!("; {} failed seeds", order.failed_seeds);
        }
        println!();
    }
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}
