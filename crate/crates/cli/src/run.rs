use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use wqed_core::coupling::{Preset, SiteKind};
use wqed_core::experiments::{self as exp, Axis, SweepGrid, TwoPairSettings};
use wqed_core::fock::{self, FockBasis, FockError, Truncation};
use wqed_core::spectra::{self, ArrayModel, BrightnessBands, SpectrumOptions};

use crate::config::{ExperimentKind, LayoutKind, RunConfig};
use crate::CliError;

const TAU: f64 = 2.0 * PI;

/// Runs one configuration and returns the files written.
pub fn execute(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("output_dir {}: {e}", dir.display())))?;
    let preset = cfg.system.preset()?;
    let stem = cfg.experiment.stem();
    let mut written = match cfg.experiment {
        ExperimentKind::Spectrum => spectrum(cfg, &preset, dir)?,
        ExperimentKind::Burst => burst(cfg, &preset, dir)?,
        ExperimentKind::Transmission => transmission(cfg, &preset, dir)?,
        ExperimentKind::PowerSpectrum => power_spectrum(cfg, &preset, dir)?,
        ExperimentKind::PulsedSpectroscopy => pulsed(cfg, &preset, dir)?,
        ExperimentKind::SteadyState => steady_state(cfg, &preset, dir)?,
    };
    let resolved = dir.join(format!("{stem}.config.toml"));
    std::fs::write(&resolved, cfg.to_toml())?;
    written.push(resolved);
    Ok(written)
}

fn solver<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Solver(e.to_string())
}

fn check_dimension(cfg: &RunConfig, sites: usize, cap: usize, truncation: Truncation) -> Result<(), CliError> {
    match FockBasis::with_max_dim(sites, cap, truncation, cfg.solver.max_dim) {
        Ok(_) => Ok(()),
        Err(e @ (FockError::CapacityExceeded { .. } | FockError::InvalidShape { .. })) => {
            Err(CliError::Config(format!("system: {e}")))
        }
        Err(e) => Err(solver(e)),
    }
}

fn require_two_pair(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.system.layout != LayoutKind::TwoPair {
        return Err(CliError::Config(format!(
            "experiment '{}' needs system.layout = \"two_pair\"",
            cfg.experiment.stem()
        )));
    }
    Ok(())
}

fn two_pair_settings(cfg: &RunConfig, preset: &Preset, cap: usize, truncation: Truncation) -> Result<TwoPairSettings, CliError> {
    require_two_pair(cfg)?;
    let mut s = TwoPairSettings::new(cfg.system.model, *preset);
    s.cap = cfg.system.level_cap.unwrap_or(cap);
    s.truncation = cfg.system.truncation.unwrap_or(truncation);
    s.steady = cfg.solver.steady(s.steady);
    let cap = if cfg.system.model == SiteKind::Qubit { 2 } else { s.cap };
    check_dimension(cfg, 4, cap, s.truncation)?;
    Ok(s)
}

fn metadata(cfg: &RunConfig, extra: serde_json::Value) -> serde_json::Value {
    exp::run_metadata(
        cfg.experiment.stem(),
        serde_json::json!({ "config": cfg, "result": extra }),
    )
}

fn write_meta(dir: &Path, stem: &str, meta: &serde_json::Value) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{stem}.meta.json"));
    std::fs::write(&path, serde_json::to_string_pretty(meta).map_err(solver)?)?;
    Ok(path)
}

fn save_map(cfg: &RunConfig, dir: &Path, mut map: exp::ObservableMap) -> Result<Vec<PathBuf>, CliError> {
    let stem = cfg.experiment.stem();
    let inner = std::mem::take(&mut map.metadata);
    map.metadata = metadata(cfg, inner);
    map.save(dir, stem).map_err(solver)?;
    let missing = map.missing();
    if missing > 0 {
        log::warn!("{missing} of {} grid points failed and are stored as NaN", map.len());
    }
    Ok(vec![dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.meta.json"))])
}

fn spectrum(cfg: &RunConfig, preset: &Preset, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let [lo, hi] = cfg.spectrum.manifolds;
    if lo > hi {
        return Err(CliError::Config(format!("spectrum.manifolds: low {lo} exceeds high {hi}")));
    }
    let sys = &cfg.system;
    let model = match sys.layout {
        LayoutKind::TwoPair => ArrayModel::two_pair(sys.model, preset, sys.detuning()),
        LayoutKind::InPhase => ArrayModel::in_phase(sys.model, sys.sites, preset.omega0, preset.anharmonicity, preset.gamma),
    };
    let cap = model.level_cap(sys.level_cap.unwrap_or(hi + 1)).map_err(solver)?;
    let truncation = sys.truncation.unwrap_or(Truncation::UpTo(hi));
    check_dimension(cfg, model.sites(), cap, truncation)?;
    let basis = Arc::new(FockBasis::new(model.sites(), cap, truncation).map_err(solver)?);
    let tables = model.tables(cap).map_err(solver)?;
    let h = spectra::build_h_eff(basis.clone(), &model, &tables).map_err(solver)?;
    let spec = spectra::diagonalize(&h, &SpectrumOptions::default()).map_err(solver)?;
    let jumps = spectra::collective_jumps(&basis, &tables).map_err(solver)?;
    let channels = spectra::decay_channels(&spec, &jumps).map_err(solver)?;

    let mut shown = spec.clone();
    shown.blocks.retain(|b| b.manifold.is_none_or(|n| (lo..=hi).contains(&n)));
    let exchange = match sys.layout {
        LayoutKind::TwoPair => Some(fock::pair_exchange(&basis).map_err(solver)?),
        LayoutKind::InPhase => None,
    };
    let labels = spectra::classify(&shown, exchange.as_ref(), preset.gamma, &BrightnessBands::default());
    let csv_path = dir.join("spectrum.csv");
    spectra::write_spectrum_csv(BufWriter::new(File::create(&csv_path)?), &shown, &labels).map_err(solver)?;

    let chan_path = dir.join("decay_channels.csv");
    let mut w = csv::Writer::from_path(&chan_path).map_err(solver)?;
    w.write_record(["from_manifold", "from_index", "to_manifold", "to_index", "jump", "rate_rad_s"]).map_err(solver)?;
    for c in channels.channels.iter().filter(|c| (lo..=hi).contains(&c.from_manifold)) {
        w.write_record([
            c.from_manifold.to_string(),
            c.from.to_string(),
            c.to_manifold.to_string(),
            c.to.to_string(),
            c.jump.to_string(),
            format!("{:.17e}", c.rate),
        ])
        .map_err(solver)?;
    }
    w.flush()?;
    let meta = write_meta(
        dir,
        "spectrum",
        &metadata(cfg, serde_json::json!({ "basis_dimension": basis.len(), "level_cap": cap, "states": labels.len() })),
    )?;
    Ok(vec![csv_path, chan_path, meta])
}

fn burst(cfg: &RunConfig, preset: &Preset, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sys = &cfg.system;
    if sys.sites == 0 {
        return Err(CliError::Config("system.sites must be positive".into()));
    }
    if cfg.burst.samples < 3 {
        return Err(CliError::Config("burst.samples must be at least 3".into()));
    }
    let mut s = exp::BurstSettings::new(sys.model, sys.sites, preset);
    if let Some(t) = cfg.burst.t_max_s {
        if !(t > 0.0) {
            return Err(CliError::Config("burst.t_max_s must be positive".into()));
        }
        s.t_max = t;
    }
    s.samples = cfg.burst.samples;
    s.cap = sys.level_cap;
    s.propagator = cfg.solver.propagator(s.propagator)?;
    let cap = match sys.model {
        SiteKind::Qubit => 2,
        _ => sys.level_cap.unwrap_or(sys.sites + 1).max(2),
    };
    check_dimension(cfg, sys.sites, cap, Truncation::UpTo(sys.sites))?;
    let r = exp::superradiant_burst(&s).map_err(solver)?;
    let csv_path = dir.join("burst.csv");
    r.write_csv(BufWriter::new(File::create(&csv_path)?)).map_err(solver)?;
    let meta = write_meta(
        dir,
        "burst",
        &metadata(
            cfg,
            serde_json::json!({
                "peak_time_s": r.peak_time,
                "final_occupation": r.occupation.last(),
                "radiated_energy_J": r.radiated_energy(),
            }),
        ),
    )?;
    Ok(vec![csv_path, meta])
}

fn transmission(cfg: &RunConfig, preset: &Preset, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let s = two_pair_settings(cfg, preset, 3, Truncation::Full)?;
    let t = &cfg.transmission;
    let g = preset.gamma;
    let det = match &t.detuning {
        Some(a) => a.to_axis("detuning")?,
        None => Axis::new("detuning", -8.0 * g, 8.0 * g, 41).map_err(solver)?,
    };
    let drive = match &t.drive {
        Some(a) => a.to_axis("drive")?,
        None => {
            let c = preset.omega0 + preset.capacitive_j;
            Axis::new("drive", c - 6.0 * g, c + 6.0 * g, 41).map_err(solver)?
        }
    };
    let grid = SweepGrid::new(vec![det, drive]).map_err(|e| CliError::Config(e.to_string()))?;
    let map = exp::transmission_sweep(&s, &grid, t.power_hz).map_err(solver)?;
    save_map(cfg, dir, map)
}

fn power_spectrum(cfg: &RunConfig, preset: &Preset, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let p = &cfg.power_spectrum;
    let mut s = exp::PowerSpectrumSettings::new(cfg.system.model, *preset, p.power_hz);
    s.two_pair = two_pair_settings(cfg, preset, 3, Truncation::UpTo(2))?;
    s.window = p.window_s;
    s.dt = p.dt_s;
    s.padding = p.padding;
    s.propagator = cfg.solver.propagator(s.propagator)?;
    let g = preset.gamma;
    let det = match &p.detuning {
        Some(a) => a.to_axis("detuning")?,
        None => Axis::new("detuning", -6.0 * g, 6.0 * g, 25).map_err(solver)?,
    };
    let omega_max = p.omega_max_hz.map_or(10.0 * g, |hz| TAU * hz);
    let map = exp::power_spectrum_sweep(&s, &det, omega_max).map_err(solver)?;
    save_map(cfg, dir, map)
}

fn pulsed(cfg: &RunConfig, preset: &Preset, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let p = &cfg.pulsed;
    if p.phases_rad.is_empty() {
        return Err(CliError::Config("pulsed.phases_rad must not be empty".into()));
    }
    let mut s = exp::PulsedSettings::reference(cfg.system.model, *preset);
    s.two_pair = two_pair_settings(cfg, preset, 3, Truncation::UpTo(2))?;
    s.detuning = cfg.system.detuning();
    if let Some(a) = p.rabi_amplitude_hz {
        s.rabi.amplitude = TAU * a;
    }
    if let Some(t) = p.rabi_duration_s {
        s.rabi_duration = t;
        s.rabi.center = t / 2.0;
        s.rabi.width = t / 6.0;
    }
    if let Some(a) = p.probe_amplitude_hz {
        s.probe_amplitude = TAU * a;
    }
    if let Some(t) = p.probe_duration_s {
        s.probe_duration = t;
        s.probe_width = t / 6.0;
    }
    s.probe_center = s.rabi_duration + s.probe_duration / 2.0;
    s.propagator = cfg.solver.propagator(s.propagator)?;
    let axis = match &p.probe {
        Some(a) => a.to_axis("probe")?,
        None => {
            let w0 = preset.omega0;
            Axis::new("probe", w0 - TAU * 400e6, w0 + TAU * 120e6, 27).map_err(solver)?
        }
    };
    let grid = if p.include_transitions {
        exp::pulsed_probe_grid(std::slice::from_ref(&s), axis.start.min(axis.stop), axis.start.max(axis.stop), axis.step().abs(), TAU * 1e6)
            .map_err(solver)?
    } else {
        axis.values()
    };
    let map = exp::pulsed_spectroscopy(&s, &p.phases_rad, &grid).map_err(solver)?;
    save_map(cfg, dir, map)
}

fn steady_state(cfg: &RunConfig, preset: &Preset, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let s = two_pair_settings(cfg, preset, 3, Truncation::Full)?;
    let p = &cfg.steady_state;
    let wd = p.drive_hz.map_or(preset.omega0 + preset.capacitive_j, |hz| TAU * hz);
    let ss = exp::driven_steady_state(&s, cfg.system.detuning(), wd, p.power_hz).map_err(solver)?;
    let basis = &ss.array.basis;
    let csv_path = dir.join("steady_state.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(solver)?;
    w.write_record(["state_index", "occupations", "population"]).map_err(solver)?;
    for i in 0..basis.len() {
        let occ: String = basis.state(i).0.iter().map(|n| n.to_string()).collect();
        w.write_record([i.to_string(), occ, format!("{:.12e}", ss.rho.element(i, i).re)]).map_err(solver)?;
    }
    w.flush()?;
    let n = ss.rho.expectation(&fock::total_number(basis)).re;
    let t = (wqed_core::C64::new(1.0, 0.0) + ss.rho.expectation(&ss.output) / ss.a_in).norm_sqr();
    let meta = write_meta(
        dir,
        "steady_state",
        &metadata(
            cfg,
            serde_json::json!({
                "drive_rad_s": wd,
                "mean_excitation": n,
                "transmission": t,
                "residual": ss.residual,
                "basis_dimension": basis.len(),
            }),
        ),
    )?;
    Ok(vec![csv_path, meta])
}
