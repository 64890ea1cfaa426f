use std::path::Path;
use std::process::{Command, Output};

fn wqed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wqed")).args(args).output().expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn spectrum_lists_two_pair_manifolds() {
    let dir = tempfile::tempdir().unwrap();
    let out = wqed(&["-o", dir.path().to_str().unwrap(), "spectrum", "--preset", "table1", "--manifolds", "0..2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("spectrum.csv"));
    assert_eq!(rows[0], ["manifold_N", "index", "E_over_hbar_rad_s", "Gamma_rad_s", "symmetry", "brightness"]);
    // 1 + 4 + 10 states for four sites up to two excitations
    assert_eq!(rows.len() - 1, 15);
    let bright = rows[1..].iter().filter(|r| r[0] == "1" && r[5] == "bright").count();
    assert_eq!(bright, 1);
    let meta: serde_json::Value = serde_json::from_str(&read(&dir.path().join("spectrum.meta.json"))).unwrap();
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(meta["parameters"]["config"]["spectrum"]["manifolds"], serde_json::json!([0, 2]));
    assert!(dir.path().join("decay_channels.csv").exists());
    assert!(dir.path().join("spectrum.config.toml").exists());
}

#[test]
fn burst_output_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = wqed(&["-o", d.path().to_str().unwrap(), "burst", "--model", "qubit", "--sites", "3", "--samples", "41"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ca = read(&a.path().join("burst.csv"));
    assert_eq!(ca, read(&b.path().join("burst.csv")));
    let rows = csv_rows(&a.path().join("burst.csv"));
    assert_eq!(rows[0][0], "t_s");
    assert_eq!(rows.len() - 1, 41);
    let n0: f64 = rows[1][1].parse().unwrap();
    assert!((n0 - 3.0).abs() < 1e-12);
}

#[test]
fn transmission_map_tracks_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = wqed(&[
        "-o",
        dir.path().to_str().unwrap(),
        "--jobs",
        "1",
        "transmission",
        "--power-khz",
        "0.7",
        "--detuning=-75e6:75e6:2",
        "--drive",
        "7.30e9:7.35e9:2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("transmission.csv"));
    assert_eq!(rows[0], ["detuning_rad_s", "omega_d_rad_s", "transmission", "transmission_analytic"]);
    assert_eq!(rows.len() - 1, 4);
    for r in &rows[1..] {
        let t: f64 = r[2].parse().unwrap();
        let exact: f64 = r[3].parse().unwrap();
        assert!((t - exact).abs() < 1e-2, "{r:?}");
    }
}

#[test]
fn run_accepts_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("steady.toml");
    std::fs::write(
        &cfg,
        format!(
            "experiment = \"steady_state\"\noutput_dir = {:?}\n\n[system]\nmodel = \"qubit\"\n\n[steady_state]\npower_hz = 700.0\n",
            dir.path().join("out")
        ),
    )
    .unwrap();
    let out = wqed(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("out/steady_state.csv"));
    assert_eq!(rows.len() - 1, 16);
    let total: f64 = rows[1..].iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let resolved = read(&dir.path().join("out/steady_state.config.toml"));
    assert!(resolved.contains("experiment = \"steady_state\""));
}

#[test]
fn template_round_trips() {
    let out = wqed(&["template", "burst"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let value: toml::Value = toml::from_str(&text).unwrap();
    assert_eq!(value["experiment"].as_str(), Some("burst"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "experiment = \"burst\"\n[system]\nomega0 = 7.28e9\n").unwrap();
    let out = wqed(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("omega0"), "{err}");

    let out = wqed(&["-o", dir.path().to_str().unwrap(), "spectrum", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(2));

    let out = wqed(&["-o", dir.path().to_str().unwrap(), "transmission", "--level-cap", "9"]);
    assert_eq!(out.status.code(), Some(2));

    let out = wqed(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hard.toml");
    std::fs::write(
        &cfg,
        format!(
            "experiment = \"steady_state\"\noutput_dir = {:?}\n\n[solver]\nsteady_method = \"iterative\"\ngmres_max_iter = 1\ngmres_accept_tol = 1e-30\n",
            dir.path().join("out")
        ),
    )
    .unwrap();
    let out = wqed(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pulsed_spectroscopy_writes_map() {
    let dir = tempfile::tempdir().unwrap();
    let out = wqed(&[
        "-o",
        dir.path().to_str().unwrap(),
        "pulsed-spec",
        "--model",
        "qubit",
        "--probe",
        "7.32e9:7.33e9:2",
        "--phase",
        "0",
        "--no-transitions",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("pulsed_spectroscopy.csv"));
    assert_eq!(rows[0], ["phi_rad", "omega_p_rad_s", "ground_population"]);
    assert_eq!(rows.len() - 1, 2);
    for r in &rows[1..] {
        let p: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}
