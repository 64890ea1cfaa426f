//! Experiment protocols on emitter arrays: superradiant burst, waveguide
//! transmission, emission power spectrum and two-pulse spectroscopy, with
//! the closed-form weak-drive references.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::coupling::{self, CouplingError, CouplingTables, Preset, SiteKind, HBAR};
use crate::fock::{self, FockBasis, FockState, Truncation};
use crate::linalg::{self, norm2};
use crate::liouville::{
    self, build_liouvillian, expv, DensityVector, LiouvilleError, Observable, PropagatorConfig, SteadyStateOptions,
    TimeDependentLiouvillian,
};
use crate::sparse::CsrMatrix;
use crate::spectra::{self, ArrayModel, EffectiveHamiltonian, SpectraError};
use crate::C64;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Fock(#[from] fock::FockError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Liouville(#[from] LiouvilleError),
    #[error("invalid sweep axis '{0}': needs at least two points and distinct endpoints")]
    Axis(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("ring-down window {window:.3e} s cannot resolve {resolution:.3e} rad/s")]
    Window { window: f64, resolution: f64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One linearly spaced sweep axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(name: &str, start: f64, stop: f64, points: usize) -> Result<Self, ExperimentError> {
        let axis = Self { name: name.to_string(), start, stop, points };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.points < 2 || !(self.stop != self.start) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(ExperimentError::Axis(self.name.clone()));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.start + step * i as f64).collect()
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.points - 1) as f64
    }
}

/// Cartesian product of axes, iterated with the last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axes: Vec<Axis>,
}

impl SweepGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, ExperimentError> {
        for a in &axes {
            a.validate()?;
        }
        Ok(Self { axes })
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let values: Vec<Vec<f64>> = self.axes.iter().map(Axis::values).collect();
        let mut out = vec![Vec::new()];
        for v in &values {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    v.iter().map(move |&x| {
                        let mut p = prefix.clone();
                        p.push(x);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// Grid coordinates with observable values and run metadata.
#[derive(Clone, Debug, Serialize)]
pub struct ObservableMap {
    pub coordinate_names: Vec<String>,
    pub value_names: Vec<String>,
    pub coordinates: Vec<Vec<f64>>,
    /// Missing values are NaN.
    pub values: Vec<Vec<f64>>,
    pub metadata: serde_json::Value,
}

impl ObservableMap {
    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.value_names.iter().position(|n| n == name)?;
        Some(self.values.iter().map(|row| row[k]).collect())
    }

    pub fn missing(&self) -> usize {
        self.values.iter().filter(|r| r.iter().any(|v| v.is_nan())).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<&str> = self.coordinate_names.iter().chain(&self.value_names).map(String::as_str).collect();
        w.write_record(&header)?;
        for (c, v) in self.coordinates.iter().zip(&self.values) {
            let row: Vec<String> = c.iter().chain(v).map(|x| format!("{x:.12e}")).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv` and `<stem>.meta.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let meta = serde_json::to_string_pretty(&self.metadata)?;
        std::fs::write(dir.join(format!("{stem}.meta.json")), meta)?;
        Ok(())
    }
}

/// Metadata block shared by every experiment.
pub fn run_metadata(experiment: &str, parameters: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "experiment": experiment,
        "toolkit": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "parameters": parameters,
    })
}

/// Basis, couplings and model of one array configuration.
#[derive(Clone, Debug)]
pub struct PreparedArray {
    pub model: ArrayModel,
    pub basis: Arc<FockBasis>,
    pub tables: CouplingTables,
}

impl PreparedArray {
    pub fn new(model: ArrayModel, cap: usize, truncation: Truncation) -> Result<Self, ExperimentError> {
        let cap = model.level_cap(cap)?;
        let basis = Arc::new(FockBasis::new(model.sites(), cap, truncation)?);
        let tables = model.tables(cap)?;
        Ok(Self { model, basis, tables })
    }

    pub fn h_eff(&self, frame: f64) -> Result<EffectiveHamiltonian, ExperimentError> {
        Ok(spectra::build_h_eff_in_frame(self.basis.clone(), &self.model, &self.tables, frame)?)
    }

    /// Waveguide drive `Σ (d̃_{mj} σ̂₋^{mj} + d̃*_{mj} σ̂₊^{mj})` for power `power` (W).
    pub fn waveguide_drive(&self, power: f64, omega_d: f64) -> Result<CsrMatrix, ExperimentError> {
        let n = self.basis.len();
        let mut h = CsrMatrix::zeros(n, n);
        for j in 0..self.tables.sites() {
            for m in 0..self.tables.levels() {
                if self.tables.gamma_at(m, j, m, j).re == 0.0 {
                    continue;
                }
                let d = coupling::dtilde(&self.tables, &self.model.layout, self.model.geometry.as_ref(), power, omega_d, m, j)?;
                let s = fock::sigma_minus(&self.basis, m, j)?;
                h = h.add(&s.scale(d)).add(&s.adjoint().scale(d.conj()));
            }
        }
        Ok(h)
    }

    /// Scattered part of the left-moving output field,
    /// `Σ e^{iω t_j} √(γ_{mj,mj}/2) σ̂₋^{mj}`.
    pub fn output_operator(&self) -> Result<CsrMatrix, ExperimentError> {
        let n = self.basis.len();
        let mut a = CsrMatrix::zeros(n, n);
        for j in 0..self.tables.sites() {
            let model = self.model.layout.emitters[j].model;
            for m in 0..self.tables.levels() {
                let g = self.tables.gamma_at(m, j, m, j).re;
                if g == 0.0 {
                    continue;
                }
                let w = self.tables.phase_frequency(model.transition_frequency(m));
                let phase = C64::from_polar((g / 2.0).sqrt(), w * self.model.layout.position_delay(j));
                a = a.add(&fock::sigma_minus(&self.basis, m, j)?.scale(phase));
            }
        }
        Ok(a)
    }

    /// `Σ_j (e^{iφ_j} â_j + h.c.)`.
    pub fn local_drive(&self, phases: &[f64]) -> Result<CsrMatrix, ExperimentError> {
        if phases.len() != self.basis.sites() {
            return Err(ExperimentError::Parameter(format!(
                "{} phases for {} sites",
                phases.len(),
                self.basis.sites()
            )));
        }
        let n = self.basis.len();
        let mut x = CsrMatrix::zeros(n, n);
        for (j, &phi) in phases.iter().enumerate() {
            x = x.add(&fock::annihilation(&self.basis, j)?.scale(C64::from_polar(1.0, phi)));
        }
        Ok(x.add(&x.adjoint()))
    }
}

/// Closed-form weak-drive transmission of two pairs half a wavelength
/// apart, with `δ = ω̄ − ω_d`. The removable point `δ = −J, Δ = 0` takes
/// its limit along `Δ = 0`, where the bright state reflects fully.
pub fn analytic_transmission(delta: f64, detuning: f64, j: f64, gamma: f64) -> f64 {
    let x = delta + j;
    let num = (x * x - detuning * detuning / 4.0).powi(2);
    let den = num + 4.0 * gamma * gamma * x * x;
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Closed-form weak-drive `|S(ω)|²` with `ω` measured from the drive.
pub fn analytic_spectral_density(omega: f64, detuning: f64, j: f64, gamma: f64, a_in: f64) -> f64 {
    let x = omega - j - detuning / 2.0;
    let den = (x * x - detuning * detuning / 4.0).powi(2) + 4.0 * x * x * gamma * gamma;
    4.0 * gamma * gamma * a_in.powi(4) / den
}

/// Settings for the two-pair steady-state and spectrum protocols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPairSettings {
    pub kind: SiteKind,
    pub preset: Preset,
    /// Per-site level cap.
    pub cap: usize,
    pub truncation: Truncation,
    pub steady: SteadyStateOptions,
}

impl TwoPairSettings {
    pub fn new(kind: SiteKind, preset: Preset) -> Self {
        Self { kind, preset, cap: 3, truncation: Truncation::Full, steady: SteadyStateOptions::default() }
    }

    pub fn prepare(&self, detuning: f64) -> Result<PreparedArray, ExperimentError> {
        PreparedArray::new(ArrayModel::two_pair(self.kind, &self.preset, detuning), self.cap, self.truncation)
    }
}

/// Driven steady state of two pairs in the frame of the drive.
#[derive(Clone, Debug)]
pub struct DrivenSteadyState {
    pub array: PreparedArray,
    pub rho: DensityVector,
    pub residual: f64,
    /// Input amplitude `⟨â_in⟩ = √(P/ħω_d)` (√Hz).
    pub a_in: f64,
    pub output: CsrMatrix,
}

pub fn driven_steady_state(
    settings: &TwoPairSettings,
    detuning: f64,
    omega_d: f64,
    power_hz: f64,
) -> Result<DrivenSteadyState, ExperimentError> {
    let array = settings.prepare(detuning)?;
    let power = coupling::power_from_hz(power_hz, omega_d);
    let h = array.h_eff(omega_d)?;
    let drive = array.waveguide_drive(power, omega_d)?;
    let l = build_liouvillian(&h, &array.tables, array.model.kappa, Some(&drive))?;
    let ss = liouville::steady_state(&l, &settings.steady)?;
    let output = array.output_operator()?;
    Ok(DrivenSteadyState { array, rho: ss.rho, residual: ss.residual, a_in: (power / (HBAR * omega_d)).sqrt(), output })
}

/// `|t|² = |⟨â_out⟩/⟨â_in⟩|²` at one `(Δ, ω_d)` point.
pub fn transmission_point(
    settings: &TwoPairSettings,
    detuning: f64,
    omega_d: f64,
    power_hz: f64,
) -> Result<f64, ExperimentError> {
    let ss = driven_steady_state(settings, detuning, omega_d, power_hz)?;
    let scattered = ss.rho.expectation(&ss.output);
    Ok((linalg::one() + scattered / ss.a_in).norm_sqr())
}

/// Transmission map over a grid with axes `(Δ, ω_d)` in rad/s. Failed
/// points are recorded as NaN.
pub fn transmission_sweep(settings: &TwoPairSettings, grid: &SweepGrid, power_hz: f64) -> Result<ObservableMap, ExperimentError> {
    if grid.axes.len() != 2 {
        return Err(ExperimentError::Parameter("transmission grid needs axes (detuning, drive frequency)".into()));
    }
    let points = grid.points();
    let values: Vec<Vec<f64>> = points
        .par_iter()
        .map(|p| {
            let t = transmission_point(settings, p[0], p[1], power_hz).unwrap_or_else(|e| {
                log::warn!("transmission failed at detuning {:.4e}, drive {:.6e}: {e}", p[0], p[1]);
                f64::NAN
            });
            let delta = settings.preset.omega0 - p[1];
            let oracle = analytic_transmission(delta, p[0], settings.preset.capacitive_j, settings.preset.gamma);
            vec![t, oracle]
        })
        .collect();
    Ok(ObservableMap {
        coordinate_names: vec!["detuning_rad_s".into(), "omega_d_rad_s".into()],
        value_names: vec!["transmission".into(), "transmission_analytic".into()],
        coordinates: points,
        values,
        metadata: run_metadata(
            "transmission",
            serde_json::json!({ "settings": settings, "grid": grid, "power_hz": power_hz }),
        ),
    })
}

/// Detunings at which a transmission column reaches its zeros: the
/// minimum of `|t|²` over negative and over positive `Δ`.
pub fn transmission_zeros(detunings: &[f64], values: &[f64]) -> (Option<f64>, Option<f64>) {
    let pick = |pred: &dyn Fn(f64) -> bool| {
        detunings
            .iter()
            .zip(values)
            .filter(|(d, v)| pred(**d) && v.is_finite())
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(d, _)| *d)
    };
    (pick(&|d| d <= 0.0), pick(&|d| d >= 0.0))
}

/// Superradiant-burst settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstSettings {
    pub kind: SiteKind,
    pub sites: usize,
    pub omega0: f64,
    pub anharmonicity: f64,
    pub gamma: f64,
    /// Final time (s).
    pub t_max: f64,
    pub samples: usize,
    /// Level cap; defaults to `L + 1` so no level of `|1…1⟩`'s manifold is cut.
    pub cap: Option<usize>,
    pub propagator: PropagatorConfig,
}

impl BurstSettings {
    pub fn new(kind: SiteKind, sites: usize, preset: &Preset) -> Self {
        Self {
            kind,
            sites,
            omega0: preset.omega0,
            anharmonicity: preset.anharmonicity,
            gamma: preset.gamma,
            t_max: 6.0 / preset.gamma,
            samples: 601,
            cap: None,
            propagator: PropagatorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BurstResult {
    pub times: Vec<f64>,
    pub occupation: Vec<f64>,
    /// `I = −ħω0 d⟨N̂⟩/dt` from centered differences (W).
    pub intensity: Vec<f64>,
    /// Same quantity from `tr(N̂ L ρ)` (W).
    pub intensity_direct: Vec<f64>,
    pub trace_drift: Vec<f64>,
    /// Time of the largest interior local maximum of the intensity, if any.
    pub peak_time: Option<f64>,
}

/// Centered differences on a uniform grid, one-sided at the ends.
pub fn centered_derivative(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (y[1] - y[0]) / (t[1] - t[0])
            } else if i == n - 1 {
                (y[n - 1] - y[n - 2]) / (t[n - 1] - t[n - 2])
            } else {
                (y[i + 1] - y[i - 1]) / (t[i + 1] - t[i - 1])
            }
        })
        .collect()
}

/// Largest interior local maximum.
pub fn interior_peak(t: &[f64], y: &[f64]) -> Option<f64> {
    (1..y.len().saturating_sub(1))
        .filter(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1])
        .max_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap())
        .map(|i| t[i])
}

/// Collective decay of in-phase sites from `|1…1⟩`, propagated in the
/// population sector of the frame rotating at `ω0`.
pub fn superradiant_burst(settings: &BurstSettings) -> Result<BurstResult, ExperimentError> {
    let l = settings.sites;
    if l == 0 || settings.samples < 3 {
        return Err(ExperimentError::Parameter("burst needs at least one site and three samples".into()));
    }
    let model = ArrayModel::in_phase(settings.kind, l, settings.omega0, settings.anharmonicity, settings.gamma);
    let cap = settings.cap.unwrap_or(l + 1).max(2);
    let array = PreparedArray::new(model, cap, Truncation::UpTo(l))?;
    let h = array.h_eff(settings.omega0)?;
    let liou = build_liouvillian(&h, &array.tables, 0.0, None)?;
    let n = array.basis.len();
    let sector = liouville::coherence_sector(&array.basis, 0);
    let restricted = liou.restrict(&sector);
    let anorm = restricted.norm_inf();

    let initial = FockState::new(&vec![1; l]);
    let k0 = array.basis.index_of(&initial).ok_or_else(|| ExperimentError::Parameter("|1…1⟩ is outside the basis".into()))?;
    let mut x: Vec<C64> = sector.iter().map(|&p| if p == k0 + n * k0 { linalg::one() } else { linalg::zero() }).collect();

    let totals = array.basis.totals();
    let number_weight: Vec<f64> = sector.iter().map(|&p| if p % (n + 1) == 0 { totals[p / (n + 1)] as f64 } else { 0.0 }).collect();
    let trace_weight: Vec<f64> = sector.iter().map(|&p| if p % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
    let dot = |w: &[f64], v: &[C64]| -> f64 { w.iter().zip(v).map(|(a, b)| a * b.re).sum() };

    let dt = settings.t_max / (settings.samples - 1) as f64;
    let times: Vec<f64> = (0..settings.samples).map(|i| i as f64 * dt).collect();
    let scale = HBAR * settings.omega0;
    let mut occupation = Vec::with_capacity(settings.samples);
    let mut direct = Vec::with_capacity(settings.samples);
    let mut drift = Vec::with_capacity(settings.samples);
    let mut lx = vec![linalg::zero(); x.len()];
    for i in 0..settings.samples {
        if i > 0 {
            let cfg = &settings.propagator;
            x = expv(|v, y| restricted.matvec_into(v, y), anorm, dt, &x, cfg.krylov_dim, cfg.tol, cfg.max_substeps)?.w;
        }
        occupation.push(dot(&number_weight, &x));
        restricted.matvec_into(&x, &mut lx);
        direct.push(-scale * dot(&number_weight, &lx));
        drift.push((dot(&trace_weight, &x) - 1.0).abs());
    }
    let intensity: Vec<f64> = centered_derivative(&times, &occupation).iter().map(|d| -scale * d).collect();
    let peak_time = interior_peak(&times, &intensity);
    Ok(BurstResult { times, occupation, intensity, intensity_direct: direct, trace_drift: drift, peak_time })
}

impl BurstResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "occupation", "intensity_W", "intensity_direct_W", "trace_drift"])?;
        for i in 0..self.times.len() {
            w.write_record([
                format!("{:.9e}", self.times[i]),
                format!("{:.12e}", self.occupation[i]),
                format!("{:.12e}", self.intensity[i]),
                format!("{:.12e}", self.intensity_direct[i]),
                format!("{:.3e}", self.trace_drift[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Trapezoidal `∫ I dt` (J).
    pub fn radiated_energy(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.intensity_direct.windows(2))
            .map(|(t, i)| 0.5 * (t[1] - t[0]) * (i[0] + i[1]))
            .sum()
    }
}

/// Emission-spectrum settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrumSettings {
    pub two_pair: TwoPairSettings,
    pub power_hz: f64,
    /// Ring-down length (s); `None` uses `40/γ`.
    pub window: Option<f64>,
    /// Sampling step (s); `None` uses `0.05/γ`.
    pub dt: Option<f64>,
    /// Zero-padding factor for the transform.
    pub padding: usize,
    pub propagator: PropagatorConfig,
}

impl PowerSpectrumSettings {
    pub fn new(kind: SiteKind, preset: Preset, power_hz: f64) -> Self {
        let mut two_pair = TwoPairSettings::new(kind, preset);
        two_pair.truncation = Truncation::UpTo(2);
        Self {
            two_pair,
            power_hz,
            window: None,
            dt: None,
            padding: 4,
            propagator: PropagatorConfig::default(),
        }
    }

    fn window(&self) -> f64 {
        self.window.unwrap_or(40.0 / self.two_pair.preset.gamma)
    }

    fn dt(&self) -> f64 {
        self.dt.unwrap_or(0.05 / self.two_pair.preset.gamma)
    }
}

/// `S(ω)` on transform bins, `ω` measured from the drive frequency.
#[derive(Clone, Debug, Serialize)]
pub struct EmissionSpectrum {
    pub omega: Vec<f64>,
    pub s: Vec<C64>,
    pub correlation_times: Vec<f64>,
    pub correlation: Vec<C64>,
}

impl EmissionSpectrum {
    pub fn magnitude_sq(&self) -> Vec<f64> {
        self.s.iter().map(|v| v.norm_sqr()).collect()
    }
}

/// Drives two pairs at `ω̄` into steady state, switches the drive off and
/// transforms the output correlation `⟨â_out†(t) â_out(0)⟩` obtained with
/// the quantum regression rule over a finite window:
/// `S(ω) = ∫_0^W e^{−iωt} ⟨â_out†(t) â_out(0)⟩ dt`.
pub fn power_spectrum(settings: &PowerSpectrumSettings, detuning: f64) -> Result<EmissionSpectrum, ExperimentError> {
    let preset = &settings.two_pair.preset;
    let window = settings.window();
    let dt = settings.dt();
    let resolution = 2.0 * PI / window;
    if window <= 0.0 || dt <= 0.0 || resolution > preset.gamma {
        return Err(ExperimentError::Window { window, resolution });
    }
    let omega_d = preset.omega0;
    let ss = driven_steady_state(&settings.two_pair, detuning, omega_d, settings.power_hz)?;
    let array = &ss.array;
    let h = array.h_eff(omega_d)?;
    let l0 = build_liouvillian(&h, &array.tables, array.model.kappa, None)?;
    let n = array.basis.len();
    let sector = liouville::coherence_sector(&array.basis, -1);
    let restricted = l0.restrict(&sector);
    let anorm = restricted.norm_inf();

    // X = A ρ_ss in the q = −1 sector
    let rho = liouville::devectorize(&ss.rho);
    let a = ss.output.to_dense();
    let x_full = &a * &rho;
    let mut x: Vec<C64> = sector.iter().map(|&p| x_full[(p % n, p / n)]).collect();
    let weights: Vec<C64> = sector.iter().map(|&p| a[(p % n, p / n)].conj()).collect();
    let corr = |v: &[C64]| -> C64 { weights.iter().zip(v).map(|(w, x)| w * x).sum() };

    let samples = (window / dt).round() as usize + 1;
    let mut times = Vec::with_capacity(samples);
    let mut c = Vec::with_capacity(samples);
    let cfg = &settings.propagator;
    for k in 0..samples {
        if k > 0 {
            x = expv(|v, y| restricted.matvec_into(v, y), anorm, dt, &x, cfg.krylov_dim, cfg.tol, cfg.max_substeps)?.w;
        }
        times.push(k as f64 * dt);
        c.push(corr(&x));
    }

    let nfft = (samples * settings.padding.max(1)).next_power_of_two();
    let mut buf = vec![linalg::zero(); nfft];
    buf[..samples].copy_from_slice(&c);
    FftPlanner::<f64>::new().plan_fft_forward(nfft).process(&mut buf);
    let mut pairs: Vec<(f64, C64)> = (0..nfft)
        .map(|m| {
            let mm = if m < nfft / 2 { m as f64 } else { m as f64 - nfft as f64 };
            let w = 2.0 * PI * mm / (nfft as f64 * dt);
            let end = c[samples - 1] * C64::from_polar(1.0, -w * times[samples - 1]);
            (w, (buf[m] - 0.5 * (c[0] + end)) * dt)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(EmissionSpectrum {
        omega: pairs.iter().map(|p| p.0).collect(),
        s: pairs.iter().map(|p| p.1).collect(),
        correlation_times: times,
        correlation: c,
    })
}

/// `|S(ω)|` over a detuning axis, raw and normalized per detuning, on the
/// frequency window `|ω| ≤ omega_max`.
pub fn power_spectrum_sweep(
    settings: &PowerSpectrumSettings,
    detunings: &Axis,
    omega_max: f64,
) -> Result<ObservableMap, ExperimentError> {
    let rows: Vec<Result<EmissionSpectrum, ExperimentError>> =
        detunings.values().par_iter().map(|&d| power_spectrum(settings, d)).collect();
    let mut coordinates = Vec::new();
    let mut values = Vec::new();
    for (d, row) in detunings.values().iter().zip(rows) {
        match row {
            Ok(spec) => {
                let mag: Vec<f64> = spec.s.iter().map(|v| v.norm()).collect();
                let peak = mag
                    .iter()
                    .zip(&spec.omega)
                    .filter(|(_, w)| w.abs() <= omega_max)
                    .map(|(m, _)| *m)
                    .fold(0.0, f64::max)
                    .max(f64::MIN_POSITIVE);
                for (w, m) in spec.omega.iter().zip(&mag) {
                    if w.abs() <= omega_max {
                        coordinates.push(vec![*d, *w]);
                        values.push(vec![*m, m / peak]);
                    }
                }
            }
            Err(e) => {
                log::warn!("power spectrum failed at detuning {d:.4e}: {e}");
                coordinates.push(vec![*d, f64::NAN]);
                values.push(vec![f64::NAN, f64::NAN]);
            }
        }
    }
    Ok(ObservableMap {
        coordinate_names: vec!["detuning_rad_s".into(), "omega_rad_s".into()],
        value_names: vec!["abs_S".into(), "abs_S_normalized".into()],
        coordinates,
        values,
        metadata: run_metadata(
            "power_spectrum",
            serde_json::json!({ "settings": settings, "detunings": detunings, "omega_max": omega_max }),
        ),
    })
}

/// Weak-drive emission spectrum from the one-excitation resolvent,
/// `|S(ω)| = |⟨G|A|ψ₁⟩| · |⟨G|A (ω − K₁)⁻¹|ψ₁⟩|` with `|ψ₁⟩ = −K₁⁻¹ D|G⟩`,
/// where `K₁` is the one-excitation block of the no-jump generator in the
/// drive frame and `D` the drive's raising part.
pub fn linear_response_spectrum(
    settings: &TwoPairSettings,
    detuning: f64,
    power_hz: f64,
    omegas: &[f64],
) -> Result<Vec<f64>, ExperimentError> {
    let omega_d = settings.preset.omega0;
    let array = PreparedArray::new(ArrayModel::two_pair(settings.kind, &settings.preset, detuning), settings.cap, Truncation::UpTo(1))?;
    let power = coupling::power_from_hz(power_hz, omega_d);
    let h = array.h_eff(omega_d)?;
    let kappa_n = fock::total_number(&array.basis).scale(C64::new(0.0, -0.5 * array.model.kappa));
    let k = h.matrix.add(&kappa_n).to_dense();
    let drive = array.waveguide_drive(power, omega_d)?.to_dense();
    let a = array.output_operator()?.to_dense();
    let one: Vec<usize> = (0..array.basis.len()).filter(|&i| array.basis.state(i).total() == 1).collect();
    let m = one.len();
    let k1 = nalgebra::DMatrix::from_fn(m, m, |r, c| k[(one[r], one[c])]);
    let d = nalgebra::DVector::from_fn(m, |r, _| drive[(one[r], 0)]);
    let arow = nalgebra::DVector::from_fn(m, |r, _| a[(0, one[r])]);
    let psi = -k1.clone().lu().solve(&d).ok_or(LiouvilleError::Linalg(linalg::LinalgError::Singular))?;
    let c = arow.dot(&psi).norm();
    let mut out = Vec::with_capacity(omegas.len());
    for &w in omegas {
        let shifted = nalgebra::DMatrix::<C64>::identity(m, m) * C64::new(w, 0.0) - &k1;
        let y = shifted.lu().solve(&psi).ok_or(LiouvilleError::Linalg(linalg::LinalgError::Singular))?;
        out.push(c * arow.dot(&y).norm());
    }
    Ok(out)
}

/// Local maxima of `y` whose prominence exceeds `rel` times the global
/// maximum.
pub fn find_peaks(y: &[f64], rel: f64) -> Vec<usize> {
    let ymax = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    for i in 1..y.len().saturating_sub(1) {
        if !(y[i] > y[i - 1] && y[i] >= y[i + 1]) {
            continue;
        }
        let left = y[..i].iter().rev().take_while(|&&v| v <= y[i]).fold(y[i], |m, &v| m.min(v));
        let right = y[i + 1..].iter().take_while(|&&v| v <= y[i]).fold(y[i], |m, &v| m.min(v));
        let left_closed = y[..i].iter().any(|&v| v > y[i]);
        let right_closed = y[i + 1..].iter().any(|&v| v > y[i]);
        let base = match (left_closed, right_closed) {
            (true, true) => left.max(right),
            (true, false) => left,
            (false, true) => right,
            (false, false) => left.min(right),
        };
        if y[i] - base >= rel * ymax {
            out.push(i);
        }
    }
    out
}

/// Full width at half maximum of the highest peak, linearly interpolated.
pub fn fwhm(x: &[f64], y: &[f64]) -> Option<f64> {
    let (ip, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    let half = ymax / 2.0;
    let mut lo = None;
    for i in (0..ip).rev() {
        if y[i] < half {
            lo = Some(x[i] + (half - y[i]) / (y[i + 1] - y[i]) * (x[i + 1] - x[i]));
            break;
        }
    }
    let mut hi = None;
    for i in ip + 1..y.len() {
        if y[i] < half {
            hi = Some(x[i - 1] + (y[i - 1] - half) / (y[i - 1] - y[i]) * (x[i] - x[i - 1]));
            break;
        }
    }
    Some(hi? - lo?)
}

/// Detuning magnitude at which two spectral peaks merge into one, from
/// spectra ordered by increasing `|Δ|`: the midpoint between the largest
/// single-peaked `|Δ|` and the next grid value, provided all larger
/// detunings are double-peaked.
pub fn coalescence_detuning(detunings: &[f64], peak_counts: &[usize]) -> Option<f64> {
    let mut last_single = None;
    for (i, &c) in peak_counts.iter().enumerate() {
        if c < 2 {
            last_single = Some(i);
        }
    }
    let i = last_single?;
    if i + 1 >= detunings.len() {
        return None;
    }
    Some(0.5 * (detunings[i].abs() + detunings[i + 1].abs()))
}

/// Gaussian drive pulse `A e^{−(t−μ)²/(2σ²)}` with carrier and site phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Peak amplitude (rad/s).
    pub amplitude: f64,
    /// Center (s).
    pub center: f64,
    /// Width σ (s).
    pub width: f64,
    /// Carrier frequency (rad/s).
    pub carrier: f64,
    /// Per-site phases (rad).
    pub phases: Vec<f64>,
}

impl PulseSpec {
    pub fn envelope(&self, t: f64) -> f64 {
        self.amplitude * (-(t - self.center).powi(2) / (2.0 * self.width * self.width)).exp()
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.width > 0.0) {
            return Err(ExperimentError::Parameter("pulse width must be positive".into()));
        }
        Ok(())
    }
}

/// Two-pulse protocol: a symmetric Rabi pulse followed by a spectroscopy
/// pulse with phase `φ` on the first pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulsedSettings {
    pub two_pair: TwoPairSettings,
    pub detuning: f64,
    /// Rabi pulse; `carrier` sets its frame.
    pub rabi: PulseSpec,
    /// Duration of the Rabi stage (s).
    pub rabi_duration: f64,
    /// Spectroscopy amplitude (rad/s), center (s) and width (s).
    pub probe_amplitude: f64,
    pub probe_center: f64,
    pub probe_width: f64,
    /// Duration of the spectroscopy stage (s).
    pub probe_duration: f64,
    pub propagator: PropagatorConfig,
}

impl PulsedSettings {
    /// Pulse parameters of the reference protocol: 240 ns Rabi pulse at
    /// 4 MHz, 1200 ns spectroscopy pulse at 1 MHz, `σ = T/6`, Rabi carrier
    /// at the collective dark state `ω0 + J`.
    pub fn reference(kind: SiteKind, preset: Preset) -> Self {
        let tau = 2.0 * PI;
        let t_rabi = 240e-9;
        let t_spec = 1200e-9;
        let mut two_pair = TwoPairSettings::new(kind, preset);
        two_pair.truncation = Truncation::UpTo(2);
        Self {
            two_pair,
            detuning: 0.0,
            rabi: PulseSpec {
                amplitude: tau * 4e6,
                center: t_rabi / 2.0,
                width: t_rabi / 6.0,
                carrier: preset.omega0 + preset.capacitive_j,
                phases: vec![0.0; 4],
            },
            rabi_duration: t_rabi,
            probe_amplitude: tau * 1e6,
            probe_center: t_rabi + t_spec / 2.0,
            probe_width: t_spec / 6.0,
            probe_duration: t_spec,
            propagator: PropagatorConfig { dt: 4e-9, krylov_dim: 20, tol: 1e-10, ..PropagatorConfig::default() },
        }
    }

    pub fn dark_frequency(&self) -> f64 {
        self.rabi.carrier
    }
}

fn pulse_liouvillian(
    array: &PreparedArray,
    frame: f64,
    pulse: PulseSpec,
) -> Result<TimeDependentLiouvillian, ExperimentError> {
    pulse.validate()?;
    let h = array.h_eff(frame)?;
    let l0 = build_liouvillian(&h, &array.tables, array.model.kappa, None)?;
    let v = array.local_drive(&pulse.phases)?;
    let f: liouville::Coefficient = Arc::new(move |t| C64::new(pulse.envelope(t), 0.0));
    Ok(TimeDependentLiouvillian::new(l0).with_hamiltonian_term("pulse", &v, f))
}

/// State after the Rabi stage, in the Rabi frame.
pub fn rabi_stage(settings: &PulsedSettings) -> Result<(PreparedArray, DensityVector), ExperimentError> {
    let array = settings.two_pair.prepare(settings.detuning)?;
    let l = pulse_liouvillian(&array, settings.rabi.carrier, settings.rabi.clone())?;
    let r0 = DensityVector::basis_state(array.basis.len(), 0);
    let (_, state) = liouville::evolve(&l, &r0, &[0.0, settings.rabi_duration], &[], &settings.propagator)?;
    Ok((array, state))
}

/// Ground-state population at the end of the protocol for one `(φ, ω_p)`,
/// continuing from a precomputed Rabi-stage state.
pub fn spectroscopy_stage(
    settings: &PulsedSettings,
    array: &PreparedArray,
    after_rabi: &DensityVector,
    phi: f64,
    omega_p: f64,
    amplitude: f64,
) -> Result<f64, ExperimentError> {
    let n = array.basis.len();
    let totals = array.basis.totals();
    let shift = (omega_p - settings.rabi.carrier) * settings.rabi_duration;
    let mut state = after_rabi.clone();
    for j in 0..n {
        for i in 0..n {
            let q = totals[i] as f64 - totals[j] as f64;
            state.data[i + n * j] *= C64::from_polar(1.0, shift * q);
        }
    }
    let probe = PulseSpec {
        amplitude,
        center: settings.probe_center,
        width: settings.probe_width,
        carrier: omega_p,
        phases: vec![phi, phi, 0.0, 0.0],
    };
    let l = pulse_liouvillian(array, omega_p, probe)?;
    let t0 = settings.rabi_duration;
    let (_, fin) = liouville::evolve(&l, &state, &[t0, t0 + settings.probe_duration], &[], &settings.propagator)?;
    Ok(fin.element(0, 0).re)
}

/// Ground-state population map over `(φ, ω_p)`, plus the reference value
/// without a spectroscopy pulse in the metadata.
pub fn pulsed_spectroscopy(settings: &PulsedSettings, phis: &[f64], omegas: &[f64]) -> Result<ObservableMap, ExperimentError> {
    let (array, after) = rabi_stage(settings)?;
    let baseline = spectroscopy_stage(settings, &array, &after, 0.0, settings.dark_frequency(), 0.0)?;
    let points: Vec<Vec<f64>> = phis.iter().flat_map(|&p| omegas.iter().map(move |&w| vec![p, w])).collect();
    let values: Vec<Vec<f64>> = points
        .par_iter()
        .map(|p| {
            let v = spectroscopy_stage(settings, &array, &after, p[0], p[1], settings.probe_amplitude).unwrap_or_else(|e| {
                log::warn!("pulsed spectroscopy failed at phase {:.3}, frequency {:.6e}: {e}", p[0], p[1]);
                f64::NAN
            });
            vec![v]
        })
        .collect();
    Ok(ObservableMap {
        coordinate_names: vec!["phi_rad".into(), "omega_p_rad_s".into()],
        value_names: vec!["ground_population".into()],
        coordinates: points,
        values,
        metadata: run_metadata(
            "pulsed_spectroscopy",
            serde_json::json!({ "settings": settings, "baseline_ground_population": baseline }),
        ),
    })
}

/// A contiguous frequency range where the population departs from the
/// baseline by more than the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Feature {
    pub center: f64,
    pub low: f64,
    pub high: f64,
    /// Signed departure at the center.
    pub depth: f64,
}

pub fn spectral_features(omegas: &[f64], values: &[f64], baseline: f64, threshold: f64) -> Vec<Feature> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < values.len() {
        if (values[i] - baseline).abs() <= threshold || !values[i].is_finite() {
            i += 1;
            continue;
        }
        let start = i;
        while i < values.len() && (values[i] - baseline).abs() > threshold {
            i += 1;
        }
        let best = (start..i)
            .max_by(|&a, &b| (values[a] - baseline).abs().partial_cmp(&(values[b] - baseline).abs()).unwrap())
            .unwrap();
        out.push(Feature { center: omegas[best], low: omegas[start], high: omegas[i - 1], depth: values[best] - baseline });
    }
    out
}

/// Transition frequencies `E_β − E_α` between one-excitation state `from`
/// and every two-excitation eigenstate, for choosing probe grids.
pub fn two_excitation_transitions(array: &PreparedArray, from_energy: f64) -> Result<Vec<f64>, ExperimentError> {
    let h = array.h_eff(0.0)?;
    let vals = spectra::eigenvalues(&h, true)?;
    Ok(vals
        .into_iter()
        .filter(|(n, _)| *n == Some(2))
        .flat_map(|(_, v)| v.into_iter().map(move |l| l.re - from_energy))
        .collect())
}

/// Probe frequencies: a uniform grid over `[low, high]` merged with every
/// transition from the state nearest the Rabi carrier into the
/// two-excitation manifold of each configuration. Values closer than
/// `merge` are collapsed.
pub fn pulsed_probe_grid(
    configs: &[PulsedSettings],
    low: f64,
    high: f64,
    step: f64,
    merge: f64,
) -> Result<Vec<f64>, ExperimentError> {
    if !(step > 0.0) || high <= low {
        return Err(ExperimentError::Parameter("probe grid needs low < high and a positive step".into()));
    }
    let mut out: Vec<f64> = (0..=((high - low) / step).floor() as usize).map(|i| low + i as f64 * step).collect();
    for cfg in configs {
        let array = cfg.two_pair.prepare(cfg.detuning)?;
        let h = array.h_eff(0.0)?;
        let vals = spectra::eigenvalues(&h, true)?;
        let one = vals
            .iter()
            .filter(|(n, _)| *n == Some(1))
            .flat_map(|(_, v)| v.iter().map(|l| l.re))
            .min_by(|a, b| (a - cfg.rabi.carrier).abs().partial_cmp(&(b - cfg.rabi.carrier).abs()).unwrap());
        if let Some(e1) = one {
            out.extend(two_excitation_transitions(&array, e1)?.into_iter().filter(|w| *w >= low && *w <= high));
        }
        out.push(cfg.dark_frequency());
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() < merge);
    Ok(out)
}

/// `⟨N̂⟩` observable helper.
pub fn number_observable(basis: &FockBasis) -> Observable {
    Observable { name: "N".into(), op: fock::total_number(basis) }
}

/// Relative 2-norm distance between two sampled curves.
pub fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| C64::new(x - y, 0.0)).collect();
    let r: Vec<C64> = b.iter().map(|y| C64::new(*y, 0.0)).collect();
    norm2(&d) / norm2(&r).max(f64::MIN_POSITIVE)
}
