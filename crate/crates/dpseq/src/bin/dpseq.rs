//! `dpseq` — differentially private sequential change detection CLI.

use std::io::Read as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dpseq::audit;
use dpseq::bounds::{self, PrivacyParams};
use dpseq::data;
use dpseq::engine::DetectorConfig;
use dpseq::error::{Error, Result};
use dpseq::formats::ModelFile;
use dpseq::mc::{self, ChangeScenario, ConfigTemplate, TrialPlan};
use dpseq::model::{global_sensitivity, StreamModel};
use dpseq::presets;
use dpseq::report::{write_curve_csv, Report, RunManifest};

#[derive(Parser)]
#[command(name = "dpseq", version, about = "Differentially private multi-stream change detection")]
struct Cli {
    /// Master seed; falls back to DPSEQ_SEED, then OS entropy (recorded in output)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism); never affects results
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate ARL and detection delay by Monte Carlo
    Simulate(SimulateArgs),
    /// Sweep a geometric threshold grid into a delay-vs-ARL tradeoff curve
    Curve(CurveArgs),
    /// Search the threshold meeting an ARL target by stochastic bisection
    Calibrate(CalibrateArgs),
    /// Evaluate the closed-form ARL/delay bounds
    Bounds(BoundsArgs),
    /// Fit per-stream models from CSV data (standardize -> PCA -> Gaussian)
    Fit(FitArgs),
    /// Run the detector over a CSV row stream and report the alarm
    Detect(DetectArgs),
    /// Privacy audits: sensitivity certification and stopping-time ratios
    Audit(AuditArgs),
}

#[derive(Args)]
struct ModelSource {
    /// Built-in preset: laplace-k5 | gauss-k5-trunc2.5
    #[arg(long, conflicts_with = "models")]
    preset: Option<String>,
    /// Model configuration JSON file
    #[arg(long)]
    models: Option<PathBuf>,
}

impl ModelSource {
    fn load(&self) -> Result<Vec<StreamModel>> {
        match (&self.preset, &self.models) {
            (Some(p), None) => presets::by_name(p),
            (None, Some(path)) => Ok(ModelFile::load(path)?.models),
            _ => Err(Error::Usage(
                "specify exactly one of --preset or --models".into(),
            )),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Privacy budget (omit together with --no-noise for the baseline)
    #[arg(long)]
    epsilon: Option<f64>,
    /// Disable noise entirely (non-private SUM-CUSUM)
    #[arg(long)]
    no_noise: bool,
    #[arg(long, conflicts_with = "gamma")]
    threshold: Option<f64>,
    /// ARL target; threshold is set to ln(gamma)/h
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 100_000)]
    horizon: u64,
    /// Change time for the delay block; only 0 (immediate) is supported
    #[arg(long, default_value_t = 0)]
    tau: u64,
    /// Affected streams for the delay block: "all" or comma-separated indices
    #[arg(long, default_value = "all")]
    affected: String,
    /// Skip the delay block
    #[arg(long)]
    no_delay: bool,
    /// Output file (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    no_noise: bool,
    #[arg(long)]
    b_min: f64,
    #[arg(long)]
    b_max: f64,
    #[arg(long)]
    b_steps: usize,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 100_000)]
    horizon: u64,
    #[arg(long, default_value = "all")]
    affected: String,
    /// Output stem: writes <out>.json and <out>.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    no_noise: bool,
    /// ARL target
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 2_000)]
    trials: u64,
    #[arg(long)]
    horizon: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta_max: f64,
    #[arg(long)]
    threshold: f64,
    /// Total post-change information of the affected set
    #[arg(long)]
    itot: f64,
    /// Optional ARL target for the asymptotic threshold rule
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// JSON manifest {streams: [{id, file, pre_rows, post_rows}]}
    #[arg(long)]
    manifest: PathBuf,
    /// Base directory for the manifest's file paths (default: manifest's directory)
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Retained principal components per stream
    #[arg(long, default_value_t = 5)]
    retain: usize,
    /// Truncation level; omitted -> auto (doubling search to 50% of KL)
    #[arg(long)]
    trunc: Option<f64>,
    /// Fitted model JSON output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// Model configuration JSON (fitted files carry their transforms)
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    no_noise: bool,
    #[arg(long)]
    threshold: f64,
    /// CSV input (default: stdin); columns t,x1,x2,...
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[command(subcommand)]
    mode: AuditMode,
}

#[derive(Subcommand)]
enum AuditMode {
    /// Certify |U_t - U~_t| <= delta_max on random neighboring pairs
    Sensitivity {
        #[command(flatten)]
        source: ModelSource,
        #[arg(long, default_value_t = 1000)]
        pairs: u64,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stopping-time log-ratio smoke test on a built-in adversarial pair
    Ratio {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 200_000)]
        runs: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_seed(cli_seed: Option<u64>) -> u64 {
    cli_seed
        .or_else(|| {
            std::env::var("DPSEQ_SEED")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(rand::random)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Usage(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// epsilon / no-noise flags -> template epsilon option
fn resolve_epsilon(epsilon: Option<f64>, no_noise: bool) -> Result<Option<f64>> {
    match (epsilon, no_noise) {
        (Some(_), true) => Err(Error::Usage(
            "--epsilon conflicts with --no-noise".into(),
        )),
        (Some(e), false) => {
            check_positive("--epsilon", e)?;
            Ok(Some(e))
        }
        (None, true) => Ok(None),
        (None, false) => Err(Error::Usage(
            "specify --epsilon or --no-noise".into(),
        )),
    }
}

fn parse_affected(spec: &str, k: usize) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((0..k).collect());
    }
    let mut out = Vec::new();
    for part in spec.split(',') {
        let i: usize = part
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("bad stream index {part:?} in --affected")))?;
        if i >= k {
            return Err(Error::Usage(format!(
                "--affected index {i} out of range for K = {k}"
            )));
        }
        out.push(i);
    }
    if out.is_empty() {
        return Err(Error::Usage("--affected must not be empty".into()));
    }
    Ok(out)
}

fn emit<T: Serialize>(report: &Report<T>, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(p) => report.write_json(p),
        None => {
            println!("{}", report.to_json()?);
            Ok(())
        }
    }
}

fn effective_h(template: &ConfigTemplate) -> Result<f64> {
    Ok(match template.epsilon {
        Some(eps) => {
            let delta = global_sensitivity(&template.models)?;
            bounds::h(PrivacyParams::new(eps, delta)?)
        }
        None => 1.0,
    })
}

fn cmd_simulate(a: &SimulateArgs, seed: u64, command: Vec<String>) -> Result<()> {
    if a.trials == 0 {
        return Err(Error::Usage("--trials must be >= 1".into()));
    }
    let models = a.source.load()?;
    let epsilon = resolve_epsilon(a.epsilon, a.no_noise)?;
    let template = ConfigTemplate { models, epsilon };
    let threshold = match (a.threshold, a.gamma) {
        (Some(b), None) => b,
        (None, Some(g)) => {
            if !(g > 1.0) {
                return Err(Error::Usage(format!("--gamma must be > 1, got {g}")));
            }
            g.ln() / effective_h(&template)?
        }
        (None, None) => return Err(Error::Usage("specify --threshold or --gamma".into())),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let plan = TrialPlan {
        n_trials: a.trials,
        horizon: a.horizon,
        master_seed: seed,
    };
    let config = template.build(threshold, a.horizon)?;
    let arl = mc::estimate_arl(&config, &plan)?;
    let delay = if a.no_delay {
        None
    } else {
        if a.tau != 0 {
            return Err(Error::Usage(
                "delay estimation supports --tau 0 (immediate change) only".into(),
            ));
        }
        let affected = parse_affected(&a.affected, config.k())?;
        let scenario = ChangeScenario::immediate(affected);
        Some(mc::estimate_delay(&config, &plan, &scenario)?)
    };
    #[derive(Serialize)]
    struct SimResult {
        threshold: f64,
        epsilon: Option<f64>,
        arl: mc::EstimateReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        delay: Option<mc::EstimateReport>,
    }
    let report = Report::new(
        RunManifest::new(command, seed),
        SimResult {
            threshold,
            epsilon,
            arl,
            delay,
        },
    );
    emit(&report, a.out.as_ref())
}

fn geometric_grid(b_min: f64, b_max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Usage("--b-steps must be >= 1".into()));
    }
    check_positive("--b-min", b_min)?;
    if steps == 1 {
        return Ok(vec![b_min]);
    }
    if !(b_max > b_min) {
        return Err(Error::Usage(format!(
            "--b-max ({b_max}) must exceed --b-min ({b_min})"
        )));
    }
    let ratio = (b_max / b_min).powf(1.0 / (steps - 1) as f64);
    Ok((0..steps).map(|i| b_min * ratio.powi(i as i32)).collect())
}

fn cmd_curve(a: &CurveArgs, seed: u64, command: Vec<String>) -> Result<()> {
    if a.trials == 0 {
        return Err(Error::Usage("--trials must be >= 1".into()));
    }
    let models = a.source.load()?;
    let epsilon = resolve_epsilon(a.epsilon, a.no_noise)?;
    let template = ConfigTemplate { models, epsilon };
    let grid = geometric_grid(a.b_min, a.b_max, a.b_steps)?;
    let affected = parse_affected(&a.affected, template.models.len())?;
    let scenario = ChangeScenario::immediate(affected);
    let plan = TrialPlan {
        n_trials: a.trials,
        horizon: a.horizon,
        master_seed: seed,
    };
    let points = mc::sweep_curve(&template, &grid, &plan, &scenario)?;
    let manifest = RunManifest::new(command, seed);
    let json_path = a.out.with_extension("json");
    let csv_path = a.out.with_extension("csv");
    write_curve_csv(&csv_path, &manifest, &points)?;
    let report = Report::new(manifest, &points);
    report.write_json(&json_path)?;
    eprintln!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs, seed: u64, command: Vec<String>) -> Result<()> {
    if a.trials == 0 {
        return Err(Error::Usage("--trials must be >= 1".into()));
    }
    let models = a.source.load()?;
    let epsilon = resolve_epsilon(a.epsilon, a.no_noise)?;
    let template = ConfigTemplate { models, epsilon };
    let plan = TrialPlan {
        n_trials: a.trials,
        horizon: a.horizon,
        master_seed: seed,
    };
    let outcome = mc::calibrate_threshold(&template, a.gamma, &plan)?;
    let report = Report::new(RunManifest::new(command, seed), outcome);
    emit(&report, a.out.as_ref())
}

fn cmd_bounds(a: &BoundsArgs, seed: u64, command: Vec<String>) -> Result<()> {
    let p = PrivacyParams::new(a.epsilon, a.delta_max).map_err(|e| Error::Usage(e.to_string()))?;
    #[derive(Serialize)]
    struct BoundsResult {
        h: f64,
        arl_lower_bound: f64,
        wadd_upper_leading: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        asymptotic_threshold: Option<f64>,
    }
    let result = BoundsResult {
        h: bounds::h(p),
        arl_lower_bound: bounds::arl_lower_bound(a.threshold, a.k, p)?,
        wadd_upper_leading: bounds::wadd_upper_leading(a.threshold, a.itot, p)?,
        asymptotic_threshold: match a.gamma {
            Some(g) => Some(bounds::asymptotic_threshold(g, p)?),
            None => None,
        },
    };
    let report = Report::new(RunManifest::new(command, seed), result);
    emit(&report, a.out.as_ref())
}

fn cmd_fit(a: &FitArgs, seed: u64, command: Vec<String>) -> Result<()> {
    let manifest = data::DataManifest::load(&a.manifest)?;
    let base = match &a.data_dir {
        Some(d) => d.clone(),
        None => a
            .manifest
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let fitted = data::fit_manifest(&manifest, &base, a.retain, a.trunc)?;
    for f in &fitted {
        let floored = &f.transform.standardizer.floored;
        if !floored.is_empty() {
            eprintln!(
                "warning: stream {}: {} constant feature(s) floored at 1e-12 variance",
                f.id,
                floored.len()
            );
        }
    }
    let mf = ModelFile::from_fitted(&fitted);
    mf.save(&a.out)?;
    #[derive(Serialize)]
    struct FitSummary {
        streams: Vec<FitStream>,
        output: String,
    }
    #[derive(Serialize)]
    struct FitStream {
        id: String,
        trunc_level: f64,
        kl_info: f64,
        truncated_info: (f64, f64),
    }
    let summary = FitSummary {
        streams: fitted
            .iter()
            .map(|f| {
                Ok(FitStream {
                    id: f.id.clone(),
                    trunc_level: f.trunc_level,
                    kl_info: f.model.kl_info(),
                    truncated_info: f.model.truncated_info()?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        output: a.out.display().to_string(),
    };
    let report = Report::new(RunManifest::new(command, seed), summary);
    println!("{}", report.to_json()?);
    Ok(())
}

fn cmd_detect(a: &DetectArgs, seed: u64, command: Vec<String>) -> Result<()> {
    let mf = ModelFile::load(&a.models)?;
    let epsilon = resolve_epsilon(a.epsilon, a.no_noise)?;
    let text = match &a.input {
        Some(p) => std::fs::read_to_string(p)?,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let expected = mf.raw_row_width();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                // first column is the time index; the rest are features
                if vals.len() != expected + 1 {
                    return Err(Error::Data(format!(
                        "row {i}: {} columns, expected {} (t plus {expected} features)",
                        vals.len(),
                        expected + 1
                    )));
                }
                rows.push(mf.apply_transforms(&vals[1..])?);
            }
            Err(_) if i == 0 => continue, // header row
            Err(e) => {
                return Err(Error::Data(format!("row {i}: non-numeric cell: {e}")));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("no data rows in input".into()));
    }
    let horizon = rows.len() as u64;
    let config = match epsilon {
        Some(eps) => DetectorConfig::live(mf.models.clone(), eps, a.threshold, horizon)?,
        None => DetectorConfig::baseline(mf.models.clone(), a.threshold, horizon)?,
    };
    let mut noise_rng = dpseq::noise::RngHandle::derive(seed, 0, "detect/noise");
    let outcome = dpseq::engine::run(&config, rows, &mut noise_rng)?;
    #[derive(Serialize)]
    struct DetectResult {
        stop_time: Option<u64>,
        alarm: bool,
        threshold: f64,
        epsilon: Option<f64>,
        seed: u64,
    }
    let result = DetectResult {
        stop_time: outcome.alarm.then_some(outcome.stop_time),
        alarm: outcome.alarm,
        threshold: a.threshold,
        epsilon,
        seed,
    };
    let manifest = RunManifest::new(command, seed);
    let line = serde_json::to_string(&Report::new(manifest, result))?;
    match &a.out {
        Some(p) => std::fs::write(p, line + "\n")?,
        None => println!("{line}"),
    }
    Ok(())
}

fn cmd_audit(a: &AuditArgs, seed: u64, command: Vec<String>) -> Result<()> {
    match &a.mode {
        AuditMode::Sensitivity {
            source,
            pairs,
            horizon,
            out,
        } => {
            let models = source.load()?;
            let config = DetectorConfig::baseline(models, f64::INFINITY, *horizon as u64)?;
            let rep = audit::sensitivity_check(&config, *pairs, *horizon, seed)?;
            let report = Report::new(RunManifest::new(command, seed), rep);
            emit(&report, out.as_ref())
        }
        AuditMode::Ratio { epsilon, runs, out } => {
            check_positive("--epsilon", *epsilon)?;
            let (config, series, edit) = audit::adversarial_scalar_pair(*epsilon)?;
            let rep = audit::empirical_privacy_ratio(&config, &series, &edit, *runs, seed, None)?;
            let report = Report::new(RunManifest::new(command, seed), rep);
            emit(&report, out.as_ref())
        }
    }
}

/// The recorded command omits `--jobs`: worker count never affects results,
/// so reruns with different parallelism must produce identical manifests.
fn recorded_command() -> Vec<String> {
    let mut out = Vec::new();
    let mut skip_value = false;
    for arg in std::env::args() {
        if skip_value {
            skip_value = false;
            continue;
        }
        if arg == "--jobs" {
            skip_value = true;
            continue;
        }
        if arg.starts_with("--jobs=") {
            continue;
        }
        out.push(arg);
    }
    out
}

fn run() -> Result<()> {
    let argv = recorded_command();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let seed = resolve_seed(cli.seed);
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, seed, argv),
        Command::Curve(a) => cmd_curve(a, seed, argv),
        Command::Calibrate(a) => cmd_calibrate(a, seed, argv),
        Command::Bounds(a) => cmd_bounds(a, seed, argv),
        Command::Fit(a) => cmd_fit(a, seed, argv),
        Command::Detect(a) => cmd_detect(a, seed, argv),
        Command::Audit(a) => cmd_audit(a, seed, argv),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
