//! `rydfit`: configuration-driven sweeps of the Rydberg facilitation model.
//!
//! Every run writes one CSV per table plus `manifest.json` into `--out`.
//! Exit codes: 0 success, 2 invalid input or unwritable output, 3 numerical
//! failure (including failed invariant checks).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};

use rydfit_core::delocalize::CONVERGENCE_THRESHOLD;
use rydfit_core::lindblad::Tolerances;
use rydfit_core::observables::DEFAULT_PEAK_PROMINENCE;
use rydfit_core::propagation::{PropagationMode, CALIBRATION_TARGET, CALIBRATION_TOLERANCE, LINEARITY_TOLERANCE};

use rydfit_cli::commands::{self, Outcome, Overrides};
use rydfit_cli::config::{self, ConfigFile};
use rydfit_cli::error::CliError;
use rydfit_cli::output::{write_run, RunManifest, SCHEMA_VERSION};
use rydfit_cli::validate;

#[derive(Debug, Parser)]
#[command(name = "rydfit", version, about = "Facilitation-induced transparency in Rydberg dual- and multi-channel systems")]
struct Cli {
    /// TOML or JSON configuration, or a previous run's manifest.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the Monte-Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the propagation mode of `switch`.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Adiabatic steady state per cell, integrated in z.
    Cw,
    /// Joint time integration of field and atoms.
    Td,
}

impl From<ModeArg> for PropagationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cw => PropagationMode::CwAdiabatic,
            ModeArg::Td => PropagationMode::TimeDependent,
        }
    }
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Two-atom steady-state spectrum versus Δ_c with peaks and correlators.
    Spectrum,
    /// Dressed-state eigencurves and resonance splitting versus V_AB.
    Dressed,
    /// Probe propagation through the medium (localized and co-propagating control).
    Switch,
    /// Monte-Carlo average over delocalized control excitations.
    Montecarlo,
    /// One control atom facilitating a ring of targets.
    Multichannel,
    /// Quick invariant suite; exits 3 if any check fails.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Dressed => "dressed",
            Command::Switch => "switch",
            Command::Montecarlo => "montecarlo",
            Command::Multichannel => "multichannel",
            Command::Validate => "validate",
        }
    }
}

/// Keeps only the section the command uses (defaulted when absent) and
/// resolves it to Γ units.
fn select(file: ConfigFile, command: Command) -> ConfigFile {
    let mut only = ConfigFile { units: file.units, ..Default::default() };
    match command {
        Command::Spectrum => only.spectrum = Some(file.spectrum.unwrap_or_default()),
        Command::Dressed => only.dressed = Some(file.dressed.unwrap_or_default()),
        Command::Switch => only.switch = Some(file.switch.unwrap_or_default()),
        Command::Montecarlo => only.montecarlo = Some(file.montecarlo.unwrap_or_default()),
        Command::Multichannel => only.multichannel = Some(file.multichannel.unwrap_or_default()),
        Command::Validate => {}
    }
    only.resolve()
}

fn dispatch(command: Command, cfg: &ConfigFile, over: Overrides) -> Result<Outcome, CliError> {
    const SELECTED: &str = "section selected";
    match command {
        Command::Spectrum => commands::spectrum(cfg.spectrum.as_ref().expect(SELECTED)),
        Command::Dressed => commands::dressed(cfg.dressed.as_ref().expect(SELECTED)),
        Command::Switch => commands::switch(cfg.switch.as_ref().expect(SELECTED), over),
        Command::Montecarlo => commands::montecarlo(cfg.montecarlo.as_ref().expect(SELECTED), over),
        Command::Multichannel => commands::multichannel(cfg.multichannel.as_ref().expect(SELECTED)),
        Command::Validate => validate::run(),
    }
}

fn tolerances() -> BTreeMap<String, f64> {
    let t = Tolerances::default();
    [
        ("trace", t.trace),
        ("hermiticity", t.hermiticity),
        ("positivity", t.positivity),
        ("steady_residual", t.steady_residual),
        ("linearity", LINEARITY_TOLERANCE),
        ("calibration_target", CALIBRATION_TARGET),
        ("calibration_tolerance", CALIBRATION_TOLERANCE),
        ("mc_convergence", CONVERGENCE_THRESHOLD),
        ("peak_prominence", DEFAULT_PEAK_PROMINENCE),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure {n} threads: {e}")))?;
    }
    let started = SystemTime::now();
    let clock = Instant::now();
    let file = match &cli.config {
        Some(path) => config::load(path)?,
        None => ConfigFile::default(),
    };
    let cfg = select(file, cli.command);
    let over = Overrides { seed: cli.seed, mode: cli.mode.map(Into::into) };
    let outcome = dispatch(cli.command, &cfg, over)?;

    let mut resolved = cfg.clone();
    if let (Some(seed), Some(mc)) = (cli.seed, resolved.montecarlo.as_mut()) {
        mc.seed = seed;
    }
    if let (Some(mode), Some(sw)) = (over.mode, resolved.switch.as_mut()) {
        sw.base.mode = mode;
    }
    let manifest = RunManifest {
        tool: env!("CARGO_BIN_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
        command: cli.command.name().to_string(),
        config: serde_json::to_value(&resolved).expect("configuration serializes"),
        seeds: outcome.seeds.clone(),
        threads: rayon::current_num_threads(),
        started_unix: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        tolerances: tolerances(),
        summary: outcome.summary.clone(),
        files: Vec::new(),
        digest: String::new(),
    };
    let path = write_run(&cli.out, manifest, &outcome.tables)?;
    if !outcome.failed_checks.is_empty() {
        return Err(CliError::Check(format!("{} (outputs in {})", outcome.failed_checks.join(", "), cli.out.display())));
    }
    Ok(path)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(path) => println!("{}", Path::new(&path).display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
