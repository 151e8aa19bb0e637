use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use narrata::harness::RunLog;
use narrata::manifest::{build_providers, execute_manifest, ExecuteOptions, Manifest, ProviderSpec};
use narrata::report::{emit_tables, Analysis, ReportContext};
use narrata::stats::{power_required_runs, PowerInput};
use narrata::{load_library, par, validate_pool, ConstraintPool};

#[derive(Parser)]
#[command(name = "narrata", version, about = "Constraint-selection experiments and their analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment manifest (TOML).
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Override the manifest master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the manifest worker bound.
    #[arg(long, value_name = "N")]
    parallelism: Option<usize>,
    /// Root for the run log and report; defaults to the manifest directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a constraint library file, or the bundled one.
    ValidateLibrary {
        path: Option<PathBuf>,
        /// Use the library named in this manifest.
        #[arg(long, value_name = "PATH", conflicts_with = "path")]
        manifest: Option<PathBuf>,
    },
    /// Execute all outstanding runs of a manifest.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue a non-empty run log, skipping completed run ids.
        #[arg(long)]
        resume: bool,
    },
    /// Like `run`, but only with offline synthetic providers.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Run one analysis over the manifest's run log.
    Analyze {
        #[arg(value_enum)]
        analysis: Which,
        #[command(flatten)]
        common: Common,
    },
    /// Runs per group needed to detect a rate ratio.
    Power(PowerArgs),
    /// Run every analysis enabled in the manifest.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Elements,
    Categories,
    Conditions,
    Axes,
    Network,
    Reasoning,
}

impl From<Which> for Analysis {
    fn from(w: Which) -> Self {
        match w {
            Which::Elements => Analysis::Elements,
            Which::Categories => Analysis::Categories,
            Which::Conditions => Analysis::Conditions,
            Which::Axes => Analysis::Axes,
            Which::Network => Analysis::Network,
            Which::Reasoning => Analysis::Reasoning,
        }
    }
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long, default_value_t = 1.5)]
    rr: f64,
    /// Baseline mean per stratum; repeat for several strata.
    #[arg(long = "mu0", default_value = "0.5", num_args = 1.., value_delimiter = ',')]
    mu0: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    phi: f64,
    #[arg(long, default_value_t = 1.0)]
    exposure: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.80)]
    power: f64,
    /// Percentile of the per-stratum requirement (0-100).
    #[arg(long, default_value_t = 80.0)]
    percentile: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            // thiserror messages often embed their source; print each cause once
            let mut msg = String::new();
            for cause in e.chain() {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::ValidateLibrary { path, manifest } => validate_library(path, manifest),
        Command::Run { common, resume } => run(&common, resume, false),
        Command::Simulate { common, resume } => run(&common, resume, true),
        Command::Analyze { analysis, common } => report(&common, Some(analysis.into())),
        Command::Power(args) => power(&args),
        Command::Report { common } => report(&common, None),
    }
}

fn validate_library(path: Option<PathBuf>, manifest: Option<PathBuf>) -> Result<ExitCode> {
    let pool = match (path, manifest) {
        (Some(p), _) => read_library(&p)?,
        (None, Some(m)) => Manifest::load(&m)?.load_pool()?,
        (None, None) => ConstraintPool::canonical(),
    };
    let report = validate_pool(&pool);
    println!("{report}");
    Ok(if report.is_valid() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn read_library(path: &Path) -> Result<ConstraintPool> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(load_library(BufReader::new(f))?)
}

fn load(common: &Common) -> Result<Manifest> {
    let mut m = Manifest::load(&common.manifest)?;
    if let Some(seed) = common.seed {
        m.seed = seed;
    }
    if let Some(p) = common.parallelism {
        if p == 0 {
            bail!("--parallelism must be at least 1");
        }
        m.parallelism = p;
    }
    Ok(m)
}

/// Run log and report directory. With `--out`, relative manifest paths
/// resolve under it instead of the manifest directory.
fn output_paths(m: &Manifest, common: &Common) -> (PathBuf, PathBuf) {
    match &common.out {
        Some(dir) => {
            let under = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
            (under(&m.output.run_log), under(&m.output.report_dir))
        }
        None => (m.run_log_path(), m.report_dir()),
    }
}

fn run(common: &Common, resume: bool, synthetic_only: bool) -> Result<ExitCode> {
    let m = load(common)?;
    if synthetic_only {
        if let Some(model) = m
            .models
            .iter()
            .find(|x| !matches!(m.providers[&x.provider], ProviderSpec::Synthetic { .. }))
        {
            bail!("simulate needs synthetic providers; model `{}` uses `{}`", model.label, model.provider);
        }
    }
    let pool = m.load_pool()?;
    let providers = build_providers(&m, &pool)?;
    let (log_path, _) = output_paths(&m, common);
    if let Some(dir) = log_path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let log = RunLog::open(&log_path)?;
    let summary = execute_manifest(
        &m,
        &providers,
        &pool,
        &log,
        ExecuteOptions {
            resume,
            seed: None,
            parallelism: None,
        },
    )?;
    eprintln!(
        "{}: planned {}, skipped {}, executed {} ({} valid, {} invalid, {} unparsed), failed {}",
        m.experiment_id,
        summary.planned,
        summary.skipped,
        summary.executed,
        summary.valid,
        summary.invalid,
        summary.parse_errors,
        summary.failed.len()
    );
    for (id, e) in &summary.failed {
        eprintln!("failed {id}: {e}");
    }
    println!("{}", log_path.display());
    Ok(if summary.is_complete() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn report(common: &Common, only: Option<Analysis>) -> Result<ExitCode> {
    let m = load(common)?;
    let pool = m.load_pool()?;
    let (log_path, out) = output_paths(&m, common);
    let records = RunLog::read(&log_path).with_context(|| format!("reading {}", log_path.display()))?;
    let analyses = match only {
        Some(a) => vec![a],
        None => Analysis::enabled(&m.analysis),
    };
    let ctx = ReportContext {
        records: &records,
        pool: &pool,
        spec: &m.analysis,
        seed: m.seed,
    };
    let index = par::with_threads(Some(m.parallelism), || emit_tables(&ctx, &analyses, &out))?;
    for t in &index.tables {
        eprintln!("{}\t{} rows", t.file, t.rows);
    }
    println!("{}", out.join("index.json").display());
    Ok(ExitCode::SUCCESS)
}

fn power(args: &PowerArgs) -> Result<ExitCode> {
    let input = PowerInput {
        rr: args.rr,
        phi: args.phi,
        exposure: args.exposure,
        strata_mu0: args.mu0.clone(),
        alpha: args.alpha,
        power: args.power,
        percentile: args.percentile,
    };
    let r = power_required_runs(&input)?;
    println!("required_runs\t{}", r.required_runs);
    println!("percentile_value\t{:.3}", r.percentile_value);
    for (mu, n) in input.strata_mu0.iter().zip(&r.per_stratum) {
        println!("stratum mu0={mu}\t{n:.3}");
    }
    Ok(ExitCode::SUCCESS)
}
