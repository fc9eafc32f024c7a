//! `shmm`: fit, simulate, validate and inspect seasonal hidden Markov models.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use shmm::assumptions::check_assumptions;
use shmm::dataio::ingest::{
    ingest, ingest_plain, ColumnRef, DailySeries, DateFormat, IngestConfig,
};
use shmm::dataio::{load_model, save_model};
use shmm::inference::{fit, FamilySpec, FitConfig, InitialMode};
use shmm::model::ModelDims;
use shmm::rng::{stream_rng, streams};
use shmm::spectral::{population_round_trip, random_screened_model};
use shmm::validate::{bootstrap_report, ReportOptions};
use shmm::{presets, simulate_batch, SeasonalHMM, ShmmError};

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Fit(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<ShmmError>() {
            Some(ShmmError::Fit(_)) => Failure::Fit(e),
            _ => Failure::Usage(e),
        }
    }
}

#[derive(Parser)]
#[command(name = "shmm", version, about = "Seasonal hidden Markov models")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a series by multi-start EM.
    Fit(FitArgs),
    /// Simulate replicate series from a model.
    Simulate(SimulateArgs),
    /// Parametric-bootstrap validation of a model against a series.
    Validate(ValidateArgs),
    /// Spectral recovery round trip on a random model.
    SpectralDemo(SpectralArgs),
    /// Report on invertibility, ergodicity and emission independence.
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Two-state yearly Gaussian model.
    SimStudy,
    /// Four-state zero-inflated precipitation model.
    Precip,
}

/// Emission family; names match the model document tags.
#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Family {
    /// Gaussian mixture with a periodic mean offset.
    #[value(alias = "gaussian-periodic-mean")]
    GaussianPeriodicMean,
    /// Exponential mixture with a periodic scale factor.
    #[value(alias = "exp-periodic-scale")]
    ExpPeriodicScale,
    /// Point mass at zero plus an exponential mixture.
    #[value(alias = "zero-inflated-exp")]
    ZeroInflatedExp,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    /// One value per line.
    Plain,
    /// Delimited text with a date column and a value column.
    Dated,
    /// ECA&D station file (DATE, RR in 0.1 mm, Q_RR flags).
    Ecad,
}

#[derive(Clone, Copy, ValueEnum)]
enum PiMode {
    /// Re-estimated from the first posterior.
    Free,
    /// Stationary law of Q(1)...Q(T).
    Stationary,
}

#[derive(Args)]
struct InputArgs {
    /// Data file.
    #[arg(long)]
    input: PathBuf,
    /// Layout of the data file.
    #[arg(long, value_enum, default_value = "plain")]
    input_format: InputFormat,
    /// Date column: header name or 0-based index (dated format).
    #[arg(long, default_value = "0")]
    date_column: String,
    /// Value column: header name or 0-based index (dated format).
    #[arg(long, default_value = "1")]
    value_column: String,
    /// Quality-flag column; non-zero flags mark missing values.
    #[arg(long)]
    quality_column: Option<String>,
    /// Field delimiter; use "space" for whitespace.
    #[arg(long, default_value = ",")]
    delimiter: String,
    /// Multiplier applied to raw values.
    #[arg(long)]
    scale: Option<f64>,
    /// Raw values below this are missing.
    #[arg(long, allow_negative_numbers = true)]
    missing_below: Option<f64>,
    /// Accept every value (no missing threshold).
    #[arg(long, conflicts_with = "missing_below")]
    keep_negative: bool,
    /// Seed for imputing missing values.
    #[arg(long, default_value_t = 0)]
    impute_seed: u64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Dimension and family defaults.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Emission family (default gaussian_periodic_mean, or the preset's).
    #[arg(long, value_enum)]
    family: Option<Family>,
    /// Number of hidden states K.
    #[arg(long)]
    states: Option<usize>,
    /// Period T.
    #[arg(long)]
    period: Option<usize>,
    /// Trigonometric degree d of the transitions.
    #[arg(long)]
    degree: Option<usize>,
    /// Mixture components per state M (the zero-inflated family counts the dry mass).
    #[arg(long)]
    mixture: Option<usize>,
    /// Trigonometric degree of the emission offsets.
    #[arg(long)]
    emission_degree: Option<usize>,
    /// Number of random starts.
    #[arg(long, default_value_t = 30)]
    starts: usize,
    /// EM iterations per start.
    #[arg(long, default_value_t = 50)]
    short_iters: usize,
    /// Leading observations used by the short runs.
    #[arg(long, default_value_t = 500)]
    short_len: usize,
    /// Stop when the relative log-likelihood gain falls below this.
    #[arg(long, default_value_t = 1e-7)]
    rel_tol: f64,
    /// Iteration cap of the final run.
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Initial law: estimated freely or tied to the stationary law of the transitions.
    #[arg(long, value_enum, default_value = "free")]
    pi_mode: PiMode,
    /// Keep start 0 random instead of estimating it from a segmentation of the data by local level.
    #[arg(long)]
    no_segmented_start: bool,
    /// Seed for the random starts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (model.json, fit_report.txt).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelSource {
    /// Model document.
    #[arg(long, conflicts_with = "preset")]
    model: Option<PathBuf>,
    /// Built-in model instead of a document.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

impl ModelSource {
    fn load(&self) -> anyhow::Result<SeasonalHMM> {
        match (&self.model, self.preset) {
            (Some(p), _) => load_model(p).with_context(|| format!("loading {}", p.display())),
            (None, Some(p)) => Ok(preset_model(p)),
            (None, None) => bail!("one of --model or --preset is required"),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Observations per replicate.
    #[arg(long)]
    length: usize,
    /// Number of replicates (one CSV each).
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Replicate r uses stream r of this seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave the hidden state column out of the CSV files.
    #[arg(long)]
    no_states: bool,
    /// Output directory (rep_NNNN.csv).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    source: ModelSource,
    #[command(flatten)]
    input: InputArgs,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Seed for the replicates.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pool days within ±window of each day of year.
    #[arg(long, default_value_t = 0)]
    window: usize,
    /// Values at or below this are dry.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Longest spell length tabulated separately.
    #[arg(long, default_value_t = 30)]
    max_spell: usize,
    /// Output directory (one CSV per table, summary.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectralArgs {
    /// Number of hidden states K.
    #[arg(long, default_value_t = 2)]
    states: usize,
    /// Period T.
    #[arg(long, default_value_t = 4)]
    period: usize,
    /// Seed for the model draw and the random projection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Relative determinant and singular value tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Also write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn preset_model(p: Preset) -> SeasonalHMM {
    match p {
        Preset::SimStudy => presets::simulation_study(),
        Preset::Precip => presets::precipitation(),
    }
}

fn column(s: &str) -> ColumnRef {
    match s.parse::<usize>() {
        Ok(i) => ColumnRef::Index(i),
        Err(_) => ColumnRef::Name(s.to_string()),
    }
}

fn read_series(args: &InputArgs, period: usize) -> anyhow::Result<DailySeries> {
    let missing_below = if args.keep_negative {
        None
    } else {
        Some(args.missing_below.unwrap_or(0.0))
    };
    let series = match args.input_format {
        InputFormat::Plain => {
            let missing = if args.missing_below.is_some() {
                missing_below
            } else {
                None
            };
            ingest_plain(&args.input, period, missing, args.impute_seed)?
        }
        InputFormat::Dated | InputFormat::Ecad => {
            let mut cfg = if matches!(args.input_format, InputFormat::Ecad) {
                IngestConfig::ecad(args.impute_seed)
            } else {
                let delimiter = match args.delimiter.as_str() {
                    "space" | "whitespace" => b' ',
                    "tab" => b'\t',
                    d if d.len() == 1 => d.as_bytes()[0],
                    d => bail!("delimiter must be one character, got {d:?}"),
                };
                IngestConfig {
                    delimiter,
                    date_column: column(&args.date_column),
                    value_column: column(&args.value_column),
                    quality_column: args.quality_column.as_deref().map(column),
                    date_format: DateFormat::Auto,
                    seed: args.impute_seed,
                    ..IngestConfig::default()
                }
            };
            cfg.missing_below = missing_below;
            if let Some(s) = args.scale {
                cfg.scale = s;
            }
            if period != 365 {
                bail!("dated input uses a 365-day calendar; --period must be 365");
            }
            ingest(&args.input, &cfg)?
        }
    };
    if let Some(s) = args.scale {
        if matches!(args.input_format, InputFormat::Plain) {
            let mut series = series;
            series.values.iter_mut().for_each(|v| *v *= s);
            return Ok(series);
        }
    }
    Ok(series)
}

fn cmd_fit(a: &FitArgs) -> Result<(), Failure> {
    let (family, k, period, degree, m, de) = match a.preset {
        Some(Preset::SimStudy) => (Family::GaussianPeriodicMean, 2, 365, 1, 1, 1),
        Some(Preset::Precip) => (Family::ZeroInflatedExp, 4, 365, 2, 3, 0),
        None => (Family::GaussianPeriodicMean, 0, 0, 0, 1, 0),
    };
    let family = a.family.unwrap_or(family);
    let k = a.states.unwrap_or(k);
    let period = a.period.unwrap_or(period);
    let degree = a.degree.unwrap_or(degree);
    let m = a.mixture.unwrap_or(m);
    let de = a.emission_degree.unwrap_or(de);
    if k == 0 || period == 0 {
        return Err(Failure::Usage(anyhow::anyhow!(
            "--states and --period are required unless a --preset supplies them"
        )));
    }
    let dims = ModelDims::new(k, period, degree).map_err(anyhow::Error::from)?;
    let spec = match family {
        Family::GaussianPeriodicMean => FamilySpec::gaussian(m, de),
        Family::ExpPeriodicScale => FamilySpec::exp_scale(m, de),
        Family::ZeroInflatedExp => FamilySpec::zero_inflated(m),
    };
    let series = read_series(&a.input, period)?;
    let cfg = FitConfig {
        n_starts: a.starts,
        short_run_iters: a.short_iters,
        short_run_len: a.short_len,
        rel_tol: a.rel_tol,
        max_iters: a.max_iters,
        seed: a.seed,
        initial_mode: match a.pi_mode {
            PiMode::Free => InitialMode::Free,
            PiMode::Stationary => InitialMode::Stationary,
        },
        segmented_start: !a.no_segmented_start,
        ..FitConfig::default()
    };
    let outcome = fit(&series.values, dims, spec, &cfg).map_err(anyhow::Error::from)?;
    fs::create_dir_all(&a.out).map_err(anyhow::Error::from)?;
    save_model(&outcome.model, &a.out.join("model.json")).map_err(anyhow::Error::from)?;
    let mut report = outcome.diagnostics.report();
    let _ = writeln!(report, "# final loglik: {:.10}", outcome.loglik);
    let _ = writeln!(
        report,
        "# observations: {} (imputed {})",
        series.len(),
        series.imputed_count()
    );
    fs::write(a.out.join("fit_report.txt"), report).map_err(anyhow::Error::from)?;
    println!(
        "fitted K={} T={} d={} loglik={:.6} converged={} -> {}",
        k,
        period,
        degree,
        outcome.loglik,
        outcome.diagnostics.converged,
        a.out.join("model.json").display()
    );
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    if a.length == 0 || a.reps == 0 {
        bail!("--length and --reps must be >= 1");
    }
    let model = a.source.load()?;
    fs::create_dir_all(&a.out)?;
    let width = (a.reps - 1).to_string().len().max(4);
    for (r, tr) in simulate_batch(&model, a.length, a.reps, a.seed)
        .iter()
        .enumerate()
    {
        let mut s = String::with_capacity(a.length * 24);
        s.push_str(if a.no_states {
            "index,value\n"
        } else {
            "index,state,value\n"
        });
        let states = tr.states.as_deref().expect("simulation keeps states");
        for (i, v) in tr.values.iter().enumerate() {
            if a.no_states {
                let _ = writeln!(s, "{},{}", i + 1, v);
            } else {
                let _ = writeln!(s, "{},{},{}", i + 1, states[i] + 1, v);
            }
        }
        fs::write(a.out.join(format!("rep_{r:0width$}.csv")), s)?;
    }
    println!(
        "wrote {} replicate(s) of length {} to {}",
        a.reps,
        a.length,
        a.out.display()
    );
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> anyhow::Result<()> {
    let model = a.source.load()?;
    let series = read_series(&a.input, model.dims.period)?;
    let opts = ReportOptions {
        window: a.window,
        threshold: a.threshold,
        max_spell: a.max_spell,
        ..ReportOptions::default()
    };
    let report = bootstrap_report(&model, &series, a.reps, a.seed, &opts)?;
    report.write_dir(&a.out)?;
    if !series.provenance.is_empty() {
        let lines: Vec<String> = series
            .provenance
            .iter()
            .map(|p| serde_json::to_string(p).expect("provenance serializes"))
            .collect();
        fs::write(a.out.join("provenance.jsonl"), lines.join("\n") + "\n")?;
    }
    for t in &report.tables {
        if let Some(c) = t.coverage() {
            println!("{:<24} coverage {:.3}", t.name, c);
        }
    }
    Ok(())
}

fn cmd_spectral(a: &SpectralArgs) -> anyhow::Result<()> {
    if a.states == 0 || a.period == 0 {
        bail!("--states and --period must be >= 1");
    }
    let mut rng = stream_rng(a.seed, streams::SPECTRAL);
    let (model, features) = random_screened_model(a.states, a.period, 0.05, 0.01, &mut rng)?;
    let (_, errors) = population_round_trip(&model, &features, &mut rng)?;
    let mut table = String::from("t\to_error\tpi_error\tq_error\n");
    let mut worst: f64 = 0.0;
    for e in &errors {
        let _ = writeln!(
            table,
            "{}\t{:.3e}\t{:.3e}\t{:.3e}",
            e.t, e.o_error, e.pi_error, e.q_error
        );
        worst = worst.max(e.o_error).max(e.pi_error).max(e.q_error);
    }
    let _ = writeln!(table, "max\t{worst:.3e}");
    print!("{table}");
    if let Some(p) = &a.out {
        write_file(p, &table)?;
    }
    Ok(())
}

fn cmd_check(a: &CheckArgs) -> anyhow::Result<()> {
    let model = a.source.load()?;
    let r = check_assumptions(&model, a.tol);
    let singular = r.phases.iter().filter(|p| p.singular).count();
    let min_rel = r
        .phases
        .iter()
        .map(|p| p.relative_det)
        .fold(f64::INFINITY, f64::min);
    let min_sigma = r
        .phases
        .iter()
        .filter_map(|p| p.feature_sigma_min)
        .fold(f64::INFINITY, f64::min);
    println!(
        "states {}  period {}  degree {}",
        model.dims.states, model.dims.period, model.dims.degree
    );
    println!(
        "singular transition matrices: {singular} of {}",
        r.phases.len()
    );
    println!("min relative |det Q(t)|: {min_rel:.3e}");
    println!("alpha (min entry): {:.6e}", r.alpha);
    println!("irreducible: {}", r.irreducible);
    println!("spectral gap of period product: {:.6e}", r.spectral_gap);
    println!("min singular value of O_t: {min_sigma:.3e}");
    println!(
        "transition coefficients identifiable: {}",
        r.beta_identifiable
    );
    for w in &r.warnings {
        println!("warning: {w}");
    }
    if let Some(p) = &a.out {
        write_file(p, &(serde_json::to_string_pretty(&r)? + "\n"))?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(anyhow::anyhow!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => Ok(cmd_simulate(a)?),
        Command::Validate(a) => Ok(cmd_validate(a)?),
        Command::SpectralDemo(a) => Ok(cmd_spectral(a)?),
        Command::Check(a) => Ok(cmd_check(a)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Fit(e)) => {
            eprintln!("fit failed: {e:#}");
            ExitCode::from(2)
        }
    }
}
