use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use consensus_core::config::{read_pairs, Settable};
use consensus_core::evaluate::ModeResult;
use consensus_core::runner::{self, RunConfig};
use consensus_core::synth::{self, SynthSpec};
use log::info;

#[derive(Parser)]
#[command(
    name = "consensus",
    version,
    about = "Bias-corrected, expertise-weighted consensus forecasts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mode matrix over an estimates/actuals panel.
    Run(RunArgs),
    /// Generate a synthetic panel with known ground truth.
    Synth(SynthArgs),
    /// Recompute results.csv from the per-event files of a previous run.
    Report {
        /// Output directory of a previous run.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key = value file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeat the run recorded in a manifest.json. Only --out may be combined with it.
    #[arg(long, conflicts_with_all = ["config", "estimates", "actuals", "actuals_check"])]
    manifest: Option<PathBuf>,
    #[arg(long)]
    estimates: Option<PathBuf>,
    #[arg(long)]
    actuals: Option<PathBuf>,
    #[arg(long)]
    actuals_check: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated mode names, or `all`.
    #[arg(long)]
    modes: Option<String>,
    #[arg(long)]
    burn_in: Option<u32>,
    #[arg(long)]
    min_analysts: Option<usize>,
    #[arg(long)]
    surprise_cap_cents: Option<i64>,
    #[arg(long)]
    min_lead_hours: Option<i64>,
    #[arg(long)]
    max_age_days: Option<i64>,
    #[arg(long)]
    exponent: Option<f64>,
}

impl RunArgs {
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        [
            ("estimates", path(&self.estimates)),
            ("actuals", path(&self.actuals)),
            ("actuals_check", path(&self.actuals_check)),
            ("out", path(&self.out)),
            ("modes", self.modes.clone()),
            ("burn_in", self.burn_in.map(|v| v.to_string())),
            ("min_analysts", self.min_analysts.map(|v| v.to_string())),
            (
                "surprise_cap_cents",
                self.surprise_cap_cents.map(|v| v.to_string()),
            ),
            ("min_lead_hours", self.min_lead_hours.map(|v| v.to_string())),
            ("max_age_days", self.max_age_days.map(|v| v.to_string())),
            ("exponent", self.exponent.map(|v| v.to_string())),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[derive(Args)]
struct SynthArgs {
    /// key = value file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for estimates.csv, actuals.csv and ground_truth.json.
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    #[arg(long)]
    n_firms: Option<usize>,
    #[arg(long)]
    n_analysts: Option<usize>,
    #[arg(long)]
    n_brokers: Option<usize>,
    #[arg(long)]
    n_quarters: Option<usize>,
    #[arg(long)]
    analysts_per_event: Option<usize>,
    #[arg(long)]
    coverage_pool: Option<usize>,
    #[arg(long)]
    bias_scale: Option<f64>,
    #[arg(long)]
    skill_spread: Option<f64>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    common_noise_share: Option<f64>,
    #[arg(long)]
    age_coupling: Option<f64>,
    #[arg(long)]
    negative_surprise_target: Option<f64>,
    #[arg(long)]
    heavy_tails: bool,
    #[arg(long)]
    max_revisions: Option<u32>,
    #[arg(long)]
    start_year: Option<i32>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SynthArgs {
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        [
            ("n_firms", self.n_firms.map(|v| v.to_string())),
            ("n_analysts", self.n_analysts.map(|v| v.to_string())),
            ("n_brokers", self.n_brokers.map(|v| v.to_string())),
            ("n_quarters", self.n_quarters.map(|v| v.to_string())),
            (
                "analysts_per_event",
                self.analysts_per_event.map(|v| v.to_string()),
            ),
            ("coverage_pool", self.coverage_pool.map(|v| v.to_string())),
            ("bias_scale", self.bias_scale.map(|v| v.to_string())),
            ("skill_spread", self.skill_spread.map(|v| v.to_string())),
            ("noise_scale", self.noise_scale.map(|v| v.to_string())),
            (
                "common_noise_share",
                self.common_noise_share.map(|v| v.to_string()),
            ),
            ("age_coupling", self.age_coupling.map(|v| v.to_string())),
            (
                "negative_surprise_target",
                self.negative_surprise_target.map(|v| v.to_string()),
            ),
            ("heavy_tails", self.heavy_tails.then(|| "true".to_string())),
            ("max_revisions", self.max_revisions.map(|v| v.to_string())),
            ("start_year", self.start_year.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

fn configure<T: Settable>(
    target: &mut T,
    file: Option<&PathBuf>,
    flags: &[(&str, String)],
) -> Result<()> {
    if let Some(path) = file {
        let pairs = read_pairs(path)?;
        target
            .apply(&pairs)
            .with_context(|| format!("in {}", path.display()))?;
    }
    for (k, v) in flags {
        target
            .set(k, v)
            .with_context(|| format!("--{}", k.replace('_', "-")))?;
    }
    Ok(())
}

fn print_results(results: &[ModeResult]) {
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}%", 100.0 * v));
    println!(
        "{:<20} {:>8} {:>9} {:>9} {:>9}",
        "mode", "events", "median", "average", "trend"
    );
    for r in results {
        let trend = pct(r.trend_stat) + if r.trend_supplementary { "*" } else { "" };
        println!(
            "{:<20} {:>8} {:>9} {:>9} {:>9}",
            r.name,
            r.n_events,
            pct(r.median_stat),
            pct(r.average_stat),
            trend
        );
    }
}

fn run_command(args: RunArgs) -> Result<()> {
    let summary = if let Some(manifest) = &args.manifest {
        runner::run_from_manifest(manifest, args.out.as_deref())?
    } else {
        let mut cfg = RunConfig::default();
        configure(&mut cfg, args.config.as_ref(), &args.flag_pairs())?;
        runner::run(&cfg)?
    };
    info!(
        "{} estimates kept of {}",
        summary.report.estimates_kept, summary.report.estimates_total
    );
    print_results(&summary.results);
    println!(
        "wrote {} files to {}",
        summary.files.len(),
        summary.out.display()
    );
    Ok(())
}

fn synth_command(args: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::default();
    configure(&mut spec, args.config.as_ref(), &args.flag_pairs())?;
    let panel = synth::generate(&spec)?;
    panel.write_to_dir(&args.out)?;
    println!(
        "wrote {} estimates and {} actuals to {}",
        panel.estimates.len(),
        panel.actuals.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => run_command(a),
        Command::Synth(a) => synth_command(a),
        Command::Report { dir } => runner::report(&dir)
            .map(|r| print_results(&r))
            .map_err(Into::into),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
