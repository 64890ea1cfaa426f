use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wqed_core::coupling::SiteKind;

mod config;
mod run;

use config::{AxisHz, ExperimentKind, LayoutKind, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }
}

/// Simulations of transmon, qubit and oscillator arrays coupled to a waveguide.
#[derive(Parser, Debug)]
#[command(name = "wqed", version, about)]
struct Cli {
    /// Sweep worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a TOML configuration file.
    Run { config: PathBuf },
    /// Print the default configuration of an experiment as TOML.
    Template {
        #[arg(value_enum)]
        experiment: Experiment,
    },
    /// Eigenvalues, labels and decay channels of the effective Hamiltonian.
    Spectrum {
        #[command(flatten)]
        system: SystemArgs,
        /// Inclusive manifold range, e.g. 0..2.
        #[arg(long, default_value = "0..2", value_parser = parse_range)]
        manifolds: [usize; 2],
    },
    /// Collective decay of a fully excited in-phase array.
    Burst {
        #[command(flatten)]
        system: SystemArgs,
        /// Final time in seconds (default 6/γ).
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long, default_value_t = 601)]
        samples: usize,
    },
    /// Weak-drive transmission map over pair detuning and drive frequency.
    Transmission {
        #[command(flatten)]
        system: SystemArgs,
        /// Drive power P/2π in kHz.
        #[arg(long, default_value_t = 0.7)]
        power_khz: f64,
        /// Detuning axis `start:stop:points` in Hz.
        #[arg(long, value_parser = parse_axis)]
        detuning: Option<AxisHz>,
        /// Drive-frequency axis `start:stop:points` in Hz.
        #[arg(long, value_parser = parse_axis)]
        drive: Option<AxisHz>,
    },
    /// Emission spectrum after a weak drive at the mean pair frequency.
    PowerSpectrum {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value_t = 0.7)]
        power_khz: f64,
        /// Detuning axis `start:stop:points` in Hz.
        #[arg(long, value_parser = parse_axis)]
        detuning: Option<AxisHz>,
    },
    /// Rabi pulse into the dark state followed by a probe pulse.
    PulsedSpec {
        #[command(flatten)]
        system: SystemArgs,
        /// Probe axis `start:stop:points` in Hz.
        #[arg(long, value_parser = parse_axis)]
        probe: Option<AxisHz>,
        /// Probe phase on the first pair in radians (repeatable).
        #[arg(long = "phase")]
        phases: Vec<f64>,
        /// Use only the uniform probe axis.
        #[arg(long)]
        no_transitions: bool,
    },
    /// Steady state under a continuous waveguide drive.
    SteadyState {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value_t = 0.7)]
        power_khz: f64,
        /// Drive frequency in Hz (default ω0 + J).
        #[arg(long)]
        drive_hz: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Experiment {
    Spectrum,
    Burst,
    Transmission,
    PowerSpectrum,
    PulsedSpectroscopy,
    SteadyState,
}

impl From<Experiment> for ExperimentKind {
    fn from(e: Experiment) -> Self {
        match e {
            Experiment::Spectrum => ExperimentKind::Spectrum,
            Experiment::Burst => ExperimentKind::Burst,
            Experiment::Transmission => ExperimentKind::Transmission,
            Experiment::PowerSpectrum => ExperimentKind::PowerSpectrum,
            Experiment::PulsedSpectroscopy => ExperimentKind::PulsedSpectroscopy,
            Experiment::SteadyState => ExperimentKind::SteadyState,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Model {
    Qubit,
    Transmon,
    Harmonic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Layout {
    TwoPair,
    InPhase,
}

#[derive(Args, Debug)]
struct SystemArgs {
    #[arg(long, value_enum, default_value = "transmon")]
    model: Model,
    #[arg(long, default_value = "table1")]
    preset: String,
    /// Defaults to `in-phase` for `burst`, `two-pair` otherwise.
    #[arg(long, value_enum)]
    layout: Option<Layout>,
    #[arg(long, default_value_t = 4)]
    sites: usize,
    /// Pair detuning ω1 − ω2 in Hz.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    detuning_hz: f64,
    /// Levels per site.
    #[arg(long)]
    level_cap: Option<usize>,
}

fn parse_range(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected LOW..HIGH, got '{s}'"))?;
    let lo = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi = b.trim_start_matches('=').trim().parse().map_err(|e| format!("{e}"))?;
    Ok([lo, hi])
}

fn parse_axis(s: &str) -> Result<AxisHz, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected START:STOP:POINTS, got '{s}'"));
    }
    Ok(AxisHz {
        start_hz: parts[0].parse().map_err(|e| format!("{e}"))?,
        stop_hz: parts[1].parse().map_err(|e| format!("{e}"))?,
        points: parts[2].parse().map_err(|e| format!("{e}"))?,
    })
}

fn apply_system(cfg: &mut RunConfig, a: &SystemArgs, default_layout: LayoutKind) {
    cfg.system.model = match a.model {
        Model::Qubit => SiteKind::Qubit,
        Model::Transmon => SiteKind::Transmon,
        Model::Harmonic => SiteKind::Harmonic,
    };
    cfg.system.preset = a.preset.clone();
    cfg.system.layout = match a.layout {
        Some(Layout::TwoPair) => LayoutKind::TwoPair,
        Some(Layout::InPhase) => LayoutKind::InPhase,
        None => default_layout,
    };
    cfg.system.sites = a.sites;
    cfg.system.detuning_hz = a.detuning_hz;
    cfg.system.level_cap = a.level_cap;
}

fn build_config(cli: &Cli) -> Result<Option<RunConfig>, CliError> {
    let mut cfg = match &cli.command {
        Command::Run { config } => RunConfig::load(config)?,
        Command::Template { experiment } => {
            print!("{}", RunConfig::new((*experiment).into()).to_toml());
            return Ok(None);
        }
        Command::Spectrum { system, manifolds } => {
            let mut c = RunConfig::new(ExperimentKind::Spectrum);
            apply_system(&mut c, system, LayoutKind::TwoPair);
            c.spectrum.manifolds = *manifolds;
            c
        }
        Command::Burst { system, t_max, samples } => {
            let mut c = RunConfig::new(ExperimentKind::Burst);
            apply_system(&mut c, system, LayoutKind::InPhase);
            c.burst.t_max_s = *t_max;
            c.burst.samples = *samples;
            c
        }
        Command::Transmission { system, power_khz, detuning, drive } => {
            let mut c = RunConfig::new(ExperimentKind::Transmission);
            apply_system(&mut c, system, LayoutKind::TwoPair);
            c.transmission.power_hz = power_khz * 1e3;
            c.transmission.detuning = detuning.clone();
            c.transmission.drive = drive.clone();
            c
        }
        Command::PowerSpectrum { system, power_khz, detuning } => {
            let mut c = RunConfig::new(ExperimentKind::PowerSpectrum);
            apply_system(&mut c, system, LayoutKind::TwoPair);
            c.power_spectrum.power_hz = power_khz * 1e3;
            c.power_spectrum.detuning = detuning.clone();
            c
        }
        Command::PulsedSpec { system, probe, phases, no_transitions } => {
            let mut c = RunConfig::new(ExperimentKind::PulsedSpectroscopy);
            apply_system(&mut c, system, LayoutKind::TwoPair);
            c.pulsed.probe = probe.clone();
            if !phases.is_empty() {
                c.pulsed.phases_rad = phases.clone();
            }
            c.pulsed.include_transitions = !no_transitions;
            c
        }
        Command::SteadyState { system, power_khz, drive_hz } => {
            let mut c = RunConfig::new(ExperimentKind::SteadyState);
            apply_system(&mut c, system, LayoutKind::TwoPair);
            c.steady_state.power_hz = power_khz * 1e3;
            c.steady_state.drive_hz = *drive_hz;
            c
        }
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    Ok(Some(cfg))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = build_config(&cli).and_then(|cfg| {
        let Some(cfg) = cfg else { return Ok(()) };
        if let Some(n) = cfg.jobs {
            if n == 0 {
                return Err(CliError::Config("jobs must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("jobs: {e}")))?;
        }
        for path in run::execute(&cfg)? {
            println!("{}", path.display());
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wqed: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
