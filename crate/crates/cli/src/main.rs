use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use afcmux::io::recipes::{run_recipe, RecipeOptions, RECIPES};
use afcmux::io::report::{run_analyze, run_fit, run_scan, run_simulate};
use afcmux::io::scenario::{preset, ScenarioFile};
use afcmux::io::EventFormat;

const OUT_DIR_ENV: &str = "AFCMUX_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "afcmux",
    version,
    about = "Frequency-multiplexed photon storage simulator and correlation analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write an event file with its provenance sidecar.
    Simulate(RunArgs),
    /// Simulate a filter-cavity scan of the idler.
    Scan(RunArgs),
    /// Correlation analysis of one or more event files.
    Analyze(AnalyzeArgs),
    /// Lorentzian-train fit of a scan's trigger-referenced idler spectrum.
    Fit(FitArgs),
    /// Produce all artifacts of one figure or table.
    Figure(FigureArgs),
    /// Check a scenario file, optionally writing it back fully resolved.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
    Json,
}

impl From<Format> for EventFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => EventFormat::Csv,
            Format::Bin => EventFormat::Bin,
            Format::Json => EventFormat::Json,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (JSON).
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Named preset, used when no scenario file is given.
    #[arg(long, default_value = "default")]
    preset: String,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioFile> {
        match &self.scenario {
            Some(p) => Ok(ScenarioFile::load(p)?),
            None => Ok(preset(&self.preset)?),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the simulated duration in seconds.
    #[arg(long)]
    duration_s: Option<f64>,
    /// Event file to write. Defaults to events.<format> in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Event files; channels from all files are merged.
    #[arg(required = true)]
    events: Vec<PathBuf>,
    /// Scenario whose analysis section sets windows and binning.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(required = true)]
    events: Vec<PathBuf>,
    /// Scenario supplying scan settings and the peak count.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FigureArgs {
    /// One of fig2a, fig2bcd, fig3, fig4ab, fig4cd, tableI, appC, appD, appG, appH.
    recipe: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Multiplies every simulated duration.
    #[arg(long, default_value_t = 1.0)]
    duration_scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write the validated scenario here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    print_line(&serde_json::to_string_pretty(v)?)
}

fn print_line(s: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{s}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run_events(args: &RunArgs, scan: bool) -> Result<()> {
    let mut file = args.scenario.load()?;
    if let Some(d) = args.duration_s {
        file.config.duration_s = d;
        file.validate()?;
    }
    let format: EventFormat = args.format.into();
    let stem = if scan { "scan" } else { "events" };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir().join(format!("{stem}.{}", format.extension())));
    let prov = if scan {
        run_scan(&file, args.seed, &out, format)?
    } else {
        run_simulate(&file, args.seed, &out, format)?
    };
    print_json(&prov)
}

fn analysis_file(path: &Option<PathBuf>) -> Result<Option<ScenarioFile>> {
    path.as_deref()
        .map(ScenarioFile::load)
        .transpose()
        .map_err(Into::into)
}

fn report_dir(out: &Option<PathBuf>, name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| out_dir().join(name))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => run_events(&a, false),
        Command::Scan(a) => run_events(&a, true),
        Command::Analyze(a) => {
            let params = analysis_file(&a.scenario)?
                .map(|f| f.analysis)
                .unwrap_or_default();
            let report = run_analyze(&a.events, &params, &report_dir(&a.out, "analysis"))?;
            print_json(&report)
        }
        Command::Fit(a) => {
            let file = analysis_file(&a.scenario)?;
            let params = file
                .as_ref()
                .map(|f| f.analysis.clone())
                .unwrap_or_default();
            let scan = file.and_then(|f| f.scan);
            let report = run_fit(&a.events, &params, scan, a.bins, &report_dir(&a.out, "fit"))?;
            print_json(&report)
        }
        Command::Figure(a) => {
            if !RECIPES.contains(&a.recipe.as_str()) {
                bail!(
                    "unknown recipe `{}`; available: {}",
                    a.recipe,
                    RECIPES.join(", ")
                );
            }
            let opts = RecipeOptions {
                seed: a.seed,
                duration_scale: a.duration_scale,
            };
            let dir = report_dir(&a.out, &a.recipe);
            let report = run_recipe(&a.recipe, &opts, &dir)?;
            print_json(&report)
        }
        Command::Validate(a) => {
            let file = a.scenario.load()?;
            if let Some(out) = &a.out {
                file.save(out)?;
            }
            print_line(&format!(
                "ok: {} (config sha256 {})",
                file.name,
                file.config_hash()?
            ))
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
