//! Waveguide dispersion, collective decay and exchange coefficients, and
//! drive amplitudes.
//!
//! All frequencies and rates are angular (rad/s). The tables are indexed
//! by transitions `(m, j)`: level `m → m+1` on site `j`, flattened as
//! `j·levels + m`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::C64;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Default relative guard band around the cutoff frequency.
pub const DEFAULT_CUTOFF_GUARD: f64 = 1e-3;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("frequency {omega:.6e} rad/s is not above the cutoff {cutoff:.6e} rad/s")]
    NotAboveCutoff { omega: f64, cutoff: f64 },
    #[error("frequency {omega:.6e} rad/s is not below the cutoff {cutoff:.6e} rad/s")]
    NotBelowCutoff { omega: f64, cutoff: f64 },
    #[error("frequency {omega:.6e} rad/s lies inside the guard band around the cutoff {cutoff:.6e} rad/s")]
    InsideGuardBand { omega: f64, cutoff: f64 },
    #[error("drive at {omega:.6e} rad/s is evanescent (cutoff {cutoff:.6e} rad/s); amplitude is zero")]
    DriveBelowCutoff { omega: f64, cutoff: f64 },
    #[error("invalid waveguide geometry: {0}")]
    Geometry(String),
    #[error("invalid emitter layout: {0}")]
    Layout(String),
    #[error("transition ({m}, {j}) out of range")]
    TransitionOutOfRange { m: usize, j: usize },
}

/// Rectangular waveguide with TE10 cutoff `Ω⊥ = cπ/a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveguideGeometry {
    /// Width (m).
    pub a: f64,
    /// Height (m).
    pub b: f64,
    /// Speed of light (m/s).
    pub c: f64,
    /// Relative half-width of the rejected band around the cutoff.
    pub cutoff_guard: f64,
}

impl WaveguideGeometry {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, CouplingError> {
        if !(a > b && b > 0.0 && c > 0.0) {
            return Err(CouplingError::Geometry(format!("need a > b > 0 and c > 0 (a={a}, b={b}, c={c})")));
        }
        Ok(Self { a, b, c, cutoff_guard: DEFAULT_CUTOFF_GUARD })
    }

    /// Geometry whose cutoff equals `omega_perp`, with height `a/2`.
    pub fn with_cutoff(omega_perp: f64) -> Result<Self, CouplingError> {
        if !(omega_perp > 0.0) {
            return Err(CouplingError::Geometry(format!("cutoff must be positive, got {omega_perp}")));
        }
        let a = SPEED_OF_LIGHT * PI / omega_perp;
        Self::new(a, a / 2.0, SPEED_OF_LIGHT)
    }

    pub fn cutoff(&self) -> f64 {
        self.c * PI / self.a
    }

    /// `ω(k_z) = √(c²k_z² + Ω⊥²)`.
    pub fn dispersion(&self, kz: f64) -> f64 {
        (self.c * self.c * kz * kz + self.cutoff().powi(2)).sqrt()
    }

    /// Non-negative `k_z` with `ω(k_z) = ω`.
    pub fn wavenumber(&self, omega: f64) -> Result<f64, CouplingError> {
        let cut = self.cutoff();
        if omega < cut {
            return Err(CouplingError::NotAboveCutoff { omega, cutoff: cut });
        }
        Ok((omega * omega - cut * cut).sqrt() / self.c)
    }

    pub fn group_velocity(&self, omega: f64) -> Result<f64, CouplingError> {
        Ok(self.c * self.velocity_factor(omega)?)
    }

    pub fn phase_velocity(&self, omega: f64) -> Result<f64, CouplingError> {
        Ok(self.c / self.velocity_factor(omega)?)
    }

    fn velocity_factor(&self, omega: f64) -> Result<f64, CouplingError> {
        let cut = self.cutoff();
        if omega <= cut {
            return Err(CouplingError::NotAboveCutoff { omega, cutoff: cut });
        }
        Ok((1.0 - (cut / omega).powi(2)).sqrt())
    }

    fn check_above(&self, omega: f64) -> Result<(), CouplingError> {
        let cut = self.cutoff();
        if (omega - cut).abs() <= self.cutoff_guard * cut {
            return Err(CouplingError::InsideGuardBand { omega, cutoff: cut });
        }
        if omega <= cut {
            return Err(CouplingError::NotAboveCutoff { omega, cutoff: cut });
        }
        Ok(())
    }

    fn check_below(&self, omega: f64) -> Result<(), CouplingError> {
        let cut = self.cutoff();
        if (omega - cut).abs() <= self.cutoff_guard * cut {
            return Err(CouplingError::InsideGuardBand { omega, cutoff: cut });
        }
        if omega >= cut {
            return Err(CouplingError::NotBelowCutoff { omega, cutoff: cut });
        }
        Ok(())
    }
}

/// Level structure of a single emitter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Qubit,
    Transmon,
    Harmonic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteModel {
    pub kind: SiteKind,
    /// 0→1 transition frequency `ω_j` (rad/s).
    pub omega: f64,
    /// Anharmonicity `U_j` (rad/s); ignored unless the kind is a transmon.
    pub anharmonicity: f64,
}

impl SiteModel {
    pub fn qubit(omega: f64) -> Self {
        Self { kind: SiteKind::Qubit, omega, anharmonicity: 0.0 }
    }

    pub fn harmonic(omega: f64) -> Self {
        Self { kind: SiteKind::Harmonic, omega, anharmonicity: 0.0 }
    }

    pub fn transmon(omega: f64, anharmonicity: f64) -> Self {
        Self { kind: SiteKind::Transmon, omega, anharmonicity }
    }

    /// Effective anharmonicity: `U_j` for transmons, zero otherwise.
    pub fn u(&self) -> f64 {
        match self.kind {
            SiteKind::Transmon => self.anharmonicity,
            _ => 0.0,
        }
    }

    /// `ω_{mj} = ω_j − m U_j`.
    pub fn transition_frequency(&self, m: usize) -> f64 {
        self.omega - m as f64 * self.u()
    }

    /// Energy of `n` excitations over `ħ`: `ω n − (U/2) n(n−1)`.
    pub fn level_energy(&self, n: usize) -> f64 {
        let n = n as f64;
        self.omega * n - 0.5 * self.u() * n * (n - 1.0)
    }
}

/// One emitter inside the waveguide.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    /// Transverse coordinate `x_j` (m).
    pub x: f64,
    /// Longitudinal coordinate `z_j` (m).
    pub z: f64,
    /// Single-site decay rate `γ_j` (rad/s).
    pub gamma: f64,
    pub model: SiteModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmitterLayout {
    pub emitters: Vec<Emitter>,
    /// Propagation speed used for the delays `t_jk` (m/s).
    pub c: f64,
}

impl EmitterLayout {
    pub fn new(emitters: Vec<Emitter>) -> Self {
        Self { emitters, c: SPEED_OF_LIGHT }
    }

    /// Emitters centered at `x = a/2` and placed at the given `z` positions.
    pub fn centered(geom: &WaveguideGeometry, models: &[SiteModel], z: &[f64], gamma: f64) -> Self {
        let emitters = models
            .iter()
            .zip(z)
            .map(|(&model, &z)| Emitter { x: geom.a / 2.0, z, gamma, model })
            .collect();
        Self { emitters, c: geom.c }
    }

    pub fn len(&self) -> usize {
        self.emitters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emitters.is_empty()
    }

    /// Propagation delay `t_jk = |z_j − z_k|/c`.
    pub fn delay(&self, j: usize, k: usize) -> f64 {
        (self.emitters[j].z - self.emitters[k].z).abs() / self.c
    }

    /// Delay from the origin, `t_j = z_j/c`.
    pub fn position_delay(&self, j: usize) -> f64 {
        self.emitters[j].z / self.c
    }

    pub fn validate(&self, geom: Option<&WaveguideGeometry>) -> Result<(), CouplingError> {
        for (j, e) in self.emitters.iter().enumerate() {
            if !(e.gamma >= 0.0) {
                return Err(CouplingError::Layout(format!("site {j}: γ must be non-negative")));
            }
            if let Some(g) = geom {
                if !(0.0..=g.a).contains(&e.x) {
                    return Err(CouplingError::Layout(format!("site {j}: x={} outside [0, a={}]", e.x, g.a)));
                }
            }
        }
        Ok(())
    }
}

/// Which coefficient formulas produce a [`CouplingTables`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CouplingRegime {
    /// Transitions above the cutoff with the full dispersive coefficients.
    FullAboveCutoff,
    /// Dispersionless limit with every propagation phase evaluated at one
    /// reference frequency.
    Simplified { reference_frequency: f64 },
    /// Transitions below the cutoff: evanescent exchange only.
    BelowCutoff,
}

fn prefactor(layout: &EmitterLayout, a: Option<f64>, m: usize, j: usize, n: usize, k: usize) -> f64 {
    let ej = &layout.emitters[j];
    let ek = &layout.emitters[k];
    let sines = match a {
        Some(a) => (PI * ej.x / a).sin() * (PI * ek.x / a).sin(),
        None => 1.0,
    };
    0.5 * (ej.gamma * ek.gamma / (ej.model.omega * ek.model.omega)).sqrt()
        * (((m + 1) * (n + 1)) as f64).sqrt()
        * sines
}

/// `χ_{mjk} = ω²/√(ω²−Ω⊥²) · exp(i t_jk √(ω²−Ω⊥²))` with `ω = ω_{mj}`.
fn chi(omega: f64, cutoff: f64, t: f64) -> C64 {
    let q = (omega * omega - cutoff * cutoff).sqrt();
    C64::from_polar(omega * omega / q, t * q)
}

/// `ζ_{mjk} = ω²/√(Ω⊥²−ω²) · exp(−t_jk √(Ω⊥²−ω²))` with `ω = ω_{mj}`.
fn zeta(omega: f64, cutoff: f64, t: f64) -> f64 {
    let q = (cutoff * cutoff - omega * omega).sqrt();
    omega * omega / q * (-t * q).exp()
}

fn check_transition(layout: &EmitterLayout, m: usize, j: usize) -> Result<f64, CouplingError> {
    let e = layout.emitters.get(j).ok_or(CouplingError::TransitionOutOfRange { m, j })?;
    if e.model.kind == SiteKind::Qubit && m > 0 {
        return Err(CouplingError::TransitionOutOfRange { m, j });
    }
    Ok(e.model.transition_frequency(m))
}

/// Full above-cutoff coefficients `(γ_{mj,nk}, J_{mj,nk})`.
pub fn coupling_full_above(
    geom: &WaveguideGeometry,
    layout: &EmitterLayout,
    m: usize,
    j: usize,
    n: usize,
    k: usize,
) -> Result<(C64, C64), CouplingError> {
    let wm = check_transition(layout, m, j)?;
    let wn = check_transition(layout, n, k)?;
    geom.check_above(wm)?;
    geom.check_above(wn)?;
    let cut = geom.cutoff();
    let t = layout.delay(j, k);
    let p = prefactor(layout, Some(geom.a), m, j, n, k);
    let cm = chi(wm, cut, t);
    let cn = chi(wn, cut, t);
    let gamma = (cm + cn.conj()) * p;
    let exchange = C64::new(0.0, -0.5) * (cm - cn.conj()) * p;
    Ok((gamma, exchange))
}

/// Simplified coefficients: `γ = √(γ_jγ_k(m+1)(n+1)) cos(ω_ref t_jk)` and
/// `J = ½√(γ_jγ_k(m+1)(n+1)) sin(ω_ref t_jk)`.
pub fn coupling_simplified(
    layout: &EmitterLayout,
    reference_frequency: f64,
    m: usize,
    j: usize,
    n: usize,
    k: usize,
) -> (f64, f64) {
    let g = (layout.emitters[j].gamma * layout.emitters[k].gamma * ((m + 1) * (n + 1)) as f64).sqrt();
    let phase = reference_frequency * layout.delay(j, k);
    (g * phase.cos(), 0.5 * g * phase.sin())
}

/// Below-cutoff coefficients `(γ⊥_{mj,nk}, J⊥_{mj,nk})`.
pub fn coupling_below(
    geom: &WaveguideGeometry,
    layout: &EmitterLayout,
    m: usize,
    j: usize,
    n: usize,
    k: usize,
) -> Result<(C64, C64), CouplingError> {
    let wm = check_transition(layout, m, j)?;
    let wn = check_transition(layout, n, k)?;
    geom.check_below(wm)?;
    geom.check_below(wn)?;
    let cut = geom.cutoff();
    let t = layout.delay(j, k);
    let p = prefactor(layout, Some(geom.a), m, j, n, k);
    let zm = zeta(wm, cut, t);
    let zn = zeta(wn, cut, t);
    let gamma = C64::new(0.0, -p * (zm - zn));
    let exchange = C64::new(-0.5 * p * (zm + zn), 0.0);
    Ok((gamma, exchange))
}

/// Collective decay and exchange matrices over all transitions `(m, j)`.
#[derive(Clone, Debug)]
pub struct CouplingTables {
    levels: usize,
    sites: usize,
    /// `γ_{(mj),(nk)}` (rad/s).
    pub gamma: DMatrix<C64>,
    /// `J_{(mj),(nk)}` (rad/s).
    pub exchange: DMatrix<C64>,
    pub regime: CouplingRegime,
    /// Largest below-cutoff decay residual that was discarded (rad/s).
    pub discarded_residual: f64,
}

impl CouplingTables {
    /// Builds tables for `levels` transitions per site (`d − 1` for level
    /// cap `d`). Qubit sites only carry their `m = 0` transition.
    pub fn build(
        geom: Option<&WaveguideGeometry>,
        layout: &EmitterLayout,
        levels: usize,
        regime: CouplingRegime,
    ) -> Result<Self, CouplingError> {
        layout.validate(geom)?;
        let sites = layout.len();
        let dim = sites * levels;
        let mut gamma = DMatrix::zeros(dim, dim);
        let mut exchange = DMatrix::zeros(dim, dim);
        let mut residual = 0.0f64;
        let active = |m: usize, j: usize| layout.emitters[j].model.kind != SiteKind::Qubit || m == 0;
        let need_geom = || geom.ok_or_else(|| CouplingError::Geometry("regime needs a waveguide geometry".into()));
        for j in 0..sites {
            for m in 0..levels {
                if !active(m, j) {
                    continue;
                }
                for k in 0..sites {
                    for n in 0..levels {
                        if !active(n, k) {
                            continue;
                        }
                        let (g, x) = match regime {
                            CouplingRegime::FullAboveCutoff => coupling_full_above(need_geom()?, layout, m, j, n, k)?,
                            CouplingRegime::Simplified { reference_frequency } => {
                                let (g, x) = coupling_simplified(layout, reference_frequency, m, j, n, k);
                                (C64::new(g, 0.0), C64::new(x, 0.0))
                            }
                            CouplingRegime::BelowCutoff => {
                                let (g, x) = coupling_below(need_geom()?, layout, m, j, n, k)?;
                                residual = residual.max(g.norm());
                                (C64::new(0.0, 0.0), x)
                            }
                        };
                        gamma[(j * levels + m, k * levels + n)] = g;
                        exchange[(j * levels + m, k * levels + n)] = x;
                    }
                }
            }
        }
        if residual > 0.0 {
            log::warn!("discarded non-Lindblad below-cutoff decay residuals up to {residual:.3e} rad/s");
        }
        Ok(Self { levels, sites, gamma, exchange, regime, discarded_residual: residual })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Flat index of transition `(m, j)`.
    pub fn index(&self, m: usize, j: usize) -> usize {
        j * self.levels + m
    }

    pub fn gamma_at(&self, m: usize, j: usize, n: usize, k: usize) -> C64 {
        self.gamma[(self.index(m, j), self.index(n, k))]
    }

    pub fn exchange_at(&self, m: usize, j: usize, n: usize, k: usize) -> C64 {
        self.exchange[(self.index(m, j), self.index(n, k))]
    }

    /// Frequency used for propagation phases of a field at `local`: the
    /// reference frequency in the simplified regime, `local` otherwise.
    pub fn phase_frequency(&self, local: f64) -> f64 {
        match self.regime {
            CouplingRegime::Simplified { reference_frequency } => reference_frequency,
            _ => local,
        }
    }
}

/// Time-domain drive amplitude `d_{mj}(t)/ħ` (rad/s) for input power
/// `power` (W) at drive frequency `omega_d`.
pub fn drive_amplitude(
    tables: &CouplingTables,
    layout: &EmitterLayout,
    geom: Option<&WaveguideGeometry>,
    power: f64,
    omega_d: f64,
    m: usize,
    j: usize,
    t: f64,
) -> Result<f64, CouplingError> {
    check_drive(geom, omega_d)?;
    let w = check_transition(layout, m, j)?;
    let g = tables.gamma_at(m, j, m, j).re;
    Ok(-(2.0 * g / (HBAR * w)).sqrt() * power.sqrt() * (omega_d * (t + layout.position_delay(j))).sin())
}

/// Rotating-frame drive amplitude `d̃_{mj} = i√(Pγ_{mj,mj}/(2ħω_{mj})) e^{iω_d z_j/c}`
/// (rad/s).
pub fn dtilde(
    tables: &CouplingTables,
    layout: &EmitterLayout,
    geom: Option<&WaveguideGeometry>,
    power: f64,
    omega_d: f64,
    m: usize,
    j: usize,
) -> Result<C64, CouplingError> {
    check_drive(geom, omega_d)?;
    let w = check_transition(layout, m, j)?;
    let g = tables.gamma_at(m, j, m, j).re;
    let amp = (power * g / (2.0 * HBAR * w)).sqrt();
    let phase = tables.phase_frequency(omega_d) * layout.position_delay(j);
    Ok(C64::new(0.0, amp) * C64::from_polar(1.0, phase))
}

fn check_drive(geom: Option<&WaveguideGeometry>, omega_d: f64) -> Result<(), CouplingError> {
    if let Some(g) = geom {
        let cut = g.cutoff();
        if omega_d <= cut {
            return Err(CouplingError::DriveBelowCutoff { omega: omega_d, cutoff: cut });
        }
    }
    Ok(())
}

/// Converts a power quoted as a frequency `P/2π` (Hz) into watts, reading
/// it as the photon flux `P/(ħω)` at frequency `omega`.
pub fn power_from_hz(power_hz: f64, omega: f64) -> f64 {
    HBAR * omega * 2.0 * PI * power_hz
}

/// Named parameter set, stored as angular frequencies (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub omega0: f64,
    pub anharmonicity: f64,
    pub capacitive_j: f64,
    pub gamma: f64,
    pub cutoff: f64,
    pub kappa: f64,
}

impl Preset {
    /// Transmon-array parameters: ω0/2π = 7.28 GHz, U/2π = 218 MHz,
    /// J/2π = 45 MHz, γ/2π = 25 MHz, Ω⊥/2π = 6.55 GHz, κ/2π = 15 kHz.
    pub fn table1() -> Self {
        let tau = 2.0 * PI;
        Self {
            omega0: tau * 7.28e9,
            anharmonicity: tau * 218e6,
            capacitive_j: tau * 45e6,
            gamma: tau * 25e6,
            cutoff: tau * 6.55e9,
            kappa: tau * 15e3,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "table1" | "table_i" | "table-i" => Some(Self::table1()),
            _ => None,
        }
    }
}
