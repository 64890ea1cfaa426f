//! Run configuration. Frequencies carry an `_hz` suffix and are converted
//! to rad/s when resolved; times carry `_s`, angles `_rad`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wqed_core::coupling::{Preset, SiteKind};
use wqed_core::experiments::Axis;
use wqed_core::fock::Truncation;
use wqed_core::liouville::{PropagatorConfig, Quadrature, SteadyStateMethod, SteadyStateOptions};

use crate::CliError;

const TAU: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Spectrum,
    Burst,
    Transmission,
    PowerSpectrum,
    PulsedSpectroscopy,
    SteadyState,
}

impl ExperimentKind {
    pub fn stem(&self) -> &'static str {
        match self {
            Self::Spectrum => "spectrum",
            Self::Burst => "burst",
            Self::Transmission => "transmission",
            Self::PowerSpectrum => "power_spectrum",
            Self::PulsedSpectroscopy => "pulsed_spectroscopy",
            Self::SteadyState => "steady_state",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    /// Two capacitively coupled pairs half a wavelength apart.
    TwoPair,
    /// Sites one wavelength apart.
    InPhase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Sweep worker count; all cores when absent.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub burst: BurstConfig,
    #[serde(default)]
    pub transmission: TransmissionConfig,
    #[serde(default)]
    pub power_spectrum: PowerSpectrumConfig,
    #[serde(default)]
    pub pulsed: PulsedConfig,
    #[serde(default)]
    pub steady_state: SteadyStateConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub model: SiteKind,
    pub preset: String,
    pub omega0_hz: Option<f64>,
    pub anharmonicity_hz: Option<f64>,
    pub capacitive_j_hz: Option<f64>,
    pub gamma_hz: Option<f64>,
    pub cutoff_hz: Option<f64>,
    pub kappa_hz: Option<f64>,
    pub layout: LayoutKind,
    /// Site count for the in-phase layout.
    pub sites: usize,
    /// Pair detuning `ω1 − ω2`.
    pub detuning_hz: f64,
    /// Levels per site; the experiment default when absent.
    pub level_cap: Option<usize>,
    pub truncation: Option<Truncation>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            model: SiteKind::Transmon,
            preset: "table1".into(),
            omega0_hz: None,
            anharmonicity_hz: None,
            capacitive_j_hz: None,
            gamma_hz: None,
            cutoff_hz: None,
            kappa_hz: None,
            layout: LayoutKind::TwoPair,
            sites: 4,
            detuning_hz: 0.0,
            level_cap: None,
            truncation: None,
        }
    }
}

impl SystemConfig {
    pub fn preset(&self) -> Result<Preset, CliError> {
        let mut p = Preset::by_name(&self.preset)
            .ok_or_else(|| CliError::Config(format!("system.preset: unknown preset '{}'", self.preset)))?;
        let set = |slot: &mut f64, v: Option<f64>, name: &str| -> Result<(), CliError> {
            if let Some(hz) = v {
                if !hz.is_finite() || hz < 0.0 {
                    return Err(CliError::Config(format!("system.{name}: expected a non-negative frequency in Hz, got {hz}")));
                }
                *slot = TAU * hz;
            }
            Ok(())
        };
        set(&mut p.omega0, self.omega0_hz, "omega0_hz")?;
        set(&mut p.anharmonicity, self.anharmonicity_hz, "anharmonicity_hz")?;
        set(&mut p.capacitive_j, self.capacitive_j_hz, "capacitive_j_hz")?;
        set(&mut p.gamma, self.gamma_hz, "gamma_hz")?;
        set(&mut p.cutoff, self.cutoff_hz, "cutoff_hz")?;
        set(&mut p.kappa, self.kappa_hz, "kappa_hz")?;
        if p.omega0 == 0.0 || p.gamma == 0.0 {
            return Err(CliError::Config("system: omega0_hz and gamma_hz must be positive".into()));
        }
        Ok(p)
    }

    pub fn detuning(&self) -> f64 {
        TAU * self.detuning_hz
    }
}

/// Solver overrides; unset fields keep each experiment's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub krylov_dim: Option<usize>,
    pub dt_s: Option<f64>,
    pub tol: Option<f64>,
    pub trace_tol: Option<f64>,
    pub max_substeps: Option<usize>,
    pub quadrature: Option<Quadrature>,
    pub second_order: Option<bool>,
    pub steady_method: Option<SteadyStateMethod>,
    pub dense_limit: Option<usize>,
    pub gmres_tol: Option<f64>,
    pub gmres_accept_tol: Option<f64>,
    pub gmres_restart: Option<usize>,
    pub gmres_max_iter: Option<usize>,
    /// Largest Hilbert-space dimension accepted.
    pub max_dim: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            krylov_dim: None,
            dt_s: None,
            tol: None,
            trace_tol: None,
            max_substeps: None,
            quadrature: None,
            second_order: None,
            steady_method: None,
            dense_limit: None,
            gmres_tol: None,
            gmres_accept_tol: None,
            gmres_restart: None,
            gmres_max_iter: None,
            max_dim: 4096,
        }
    }
}

impl SolverConfig {
    pub fn propagator(&self, base: PropagatorConfig) -> Result<PropagatorConfig, CliError> {
        let p = PropagatorConfig {
            krylov_dim: self.krylov_dim.unwrap_or(base.krylov_dim),
            dt: self.dt_s.unwrap_or(base.dt),
            tol: self.tol.unwrap_or(base.tol),
            trace_tol: self.trace_tol.unwrap_or(base.trace_tol),
            max_substeps: self.max_substeps.unwrap_or(base.max_substeps),
            quadrature: self.quadrature.unwrap_or(base.quadrature),
            second_order: self.second_order.unwrap_or(base.second_order),
        };
        if p.krylov_dim == 0 || !(p.dt > 0.0) || !(p.tol > 0.0) || !(p.trace_tol > 0.0) {
            return Err(CliError::Config("solver: krylov_dim, dt_s, tol and trace_tol must be positive".into()));
        }
        Ok(p)
    }

    pub fn steady(&self, base: SteadyStateOptions) -> SteadyStateOptions {
        SteadyStateOptions {
            method: self.steady_method.unwrap_or(base.method),
            dense_limit: self.dense_limit.unwrap_or(base.dense_limit),
            tol: self.gmres_tol.unwrap_or(base.tol),
            accept_tol: self.gmres_accept_tol.unwrap_or(base.accept_tol),
            restart: self.gmres_restart.unwrap_or(base.restart),
            max_iter: self.gmres_max_iter.unwrap_or(base.max_iter),
        }
    }
}

/// Linear frequency axis in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisHz {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub points: usize,
}

impl AxisHz {
    pub fn to_axis(&self, name: &str) -> Result<Axis, CliError> {
        Axis::new(name, TAU * self.start_hz, TAU * self.stop_hz, self.points).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Inclusive manifold range `[low, high]`.
    pub manifolds: [usize; 2],
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { manifolds: [0, 2] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurstConfig {
    /// Final time; `6/γ` when absent.
    pub t_max_s: Option<f64>,
    pub samples: usize,
}

impl Default for BurstConfig {
    fn default() -> Self {
        Self { t_max_s: None, samples: 601 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransmissionConfig {
    /// Drive power as `P/2π` in Hz-equivalent photon flux.
    pub power_hz: f64,
    /// Pair detuning axis; `±8γ` over 41 points when absent.
    pub detuning: Option<AxisHz>,
    /// Drive frequency axis; `ω0 + J ± 6γ` over 41 points when absent.
    pub drive: Option<AxisHz>,
}

impl Default for TransmissionConfig {
    fn default() -> Self {
        Self { power_hz: 700.0, detuning: None, drive: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerSpectrumConfig {
    pub power_hz: f64,
    /// Detuning axis; `±6γ` over 25 points when absent.
    pub detuning: Option<AxisHz>,
    /// Exported half-width of the frequency window; `10γ` when absent.
    pub omega_max_hz: Option<f64>,
    pub window_s: Option<f64>,
    pub dt_s: Option<f64>,
    pub padding: usize,
}

impl Default for PowerSpectrumConfig {
    fn default() -> Self {
        Self { power_hz: 700.0, detuning: None, omega_max_hz: None, window_s: None, dt_s: None, padding: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulsedConfig {
    pub phases_rad: Vec<f64>,
    /// Probe axis; `ω0 − 400 MHz … ω0 + 120 MHz` in 20 MHz steps when absent.
    pub probe: Option<AxisHz>,
    /// Adds the predicted transitions out of the dark state to the probe axis.
    pub include_transitions: bool,
    pub rabi_amplitude_hz: Option<f64>,
    pub rabi_duration_s: Option<f64>,
    pub probe_amplitude_hz: Option<f64>,
    pub probe_duration_s: Option<f64>,
}

impl Default for PulsedConfig {
    fn default() -> Self {
        Self {
            phases_rad: vec![0.0, PI],
            probe: None,
            include_transitions: true,
            rabi_amplitude_hz: None,
            rabi_duration_s: None,
            probe_amplitude_hz: None,
            probe_duration_s: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadyStateConfig {
    pub power_hz: f64,
    /// Waveguide drive frequency; `ω0 + J` when absent.
    pub drive_hz: Option<f64>,
}

impl Default for SteadyStateConfig {
    fn default() -> Self {
        Self { power_hz: 700.0, drive_hz: None }
    }
}

impl RunConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            output_dir: default_output(),
            jobs: None,
            system: SystemConfig::default(),
            solver: SolverConfig::default(),
            spectrum: SpectrumConfig::default(),
            burst: BurstConfig::default(),
            transmission: TransmissionConfig::default(),
            power_spectrum: PowerSpectrumConfig::default(),
            pulsed: PulsedConfig::default(),
            steady_state: SteadyStateConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration serializes")
    }
}
