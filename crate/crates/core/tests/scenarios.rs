use std::fs;
use std::path::PathBuf;

use freqbin::output::emit_outputs;
use freqbin::scenario::{load_config, run_scenario, RunOptions};

fn scenario_files() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    files
}

fn run(name: &str) -> freqbin::output::ResultBundle {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    let cfg = load_config(&path).unwrap();
    run_scenario(&cfg, &RunOptions::for_config(&path)).unwrap()
}

#[test]
fn every_bundled_scenario_runs_and_reports_finite_scalars() {
    let files = scenario_files();
    assert!(files.len() >= 6);
    for path in files {
        let cfg = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let bundle = run_scenario(&cfg, &RunOptions::for_config(&path)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!bundle.scalars.is_empty(), "{}", path.display());
        for (k, v) in &bundle.scalars {
            assert!(v.is_finite(), "{}: {k} = {v}", path.display());
        }
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    for path in scenario_files() {
        let cfg = load_config(&path).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [a.path(), b.path()] {
            let bundle = run_scenario(&cfg, &RunOptions::for_config(&path)).unwrap();
            emit_outputs(&bundle, dir, true).unwrap();
        }
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            assert_eq!(
                fs::read(a.path().join(&name)).unwrap(),
                fs::read(b.path().join(&name)).unwrap(),
                "{} / {:?}",
                path.display(),
                name
            );
        }
    }
}

#[test]
fn dip_scenario_sits_at_half_spacing() {
    let b = run("dip_rf_offset.toml");
    assert!((b.scalar("dip_center_ghz").unwrap() - 24.8).abs() < 0.01);
    assert!(b.scalar("dip_min").unwrap().abs() < 1e-9);
    let w = b.scalar("dip_width_mhz").unwrap();
    assert!((75.0..=125.0).contains(&w), "width {w}");
}

#[test]
fn fringe_scenarios() {
    let b = run("fringe_pairs_6_7.toml");
    assert!(b.scalar("visibility_raw").unwrap() < 0.6);
    assert!(b.scalar("visibility").unwrap() >= 0.99);

    let d = run("fringe_dispersion_35m.toml");
    let shift = d.scalar("dispersion_shift_rad").unwrap().abs();
    assert!((0.7..=1.1).contains(&shift), "shift {shift}");

    // Poisson counts stay close to the noiseless contrast
    let s = run("fringe_pairs_5_6.toml");
    assert!(s.scalar("visibility").unwrap() > 0.95);
}

#[test]
fn tomography_synthetic_bell_is_recovered() {
    let b = run("tomo_synthetic_bell.toml");
    assert!(b.scalar("fidelity_bell").unwrap() > 0.999);
    assert!((b.scalar("negativity").unwrap() - 0.5).abs() < 1e-3);
}

#[test]
fn simulated_cglmp_exceeds_classical_bound() {
    let b = run("cglmp_simulated.toml");
    assert!(b.scalar("i3").unwrap() > 2.0);
    assert!((b.scalar("i3_model").unwrap() - 0.9 * 2.872934).abs() < 1e-3);
}

#[test]
fn jsi_scenario_bounds() {
    let b = run("jsi_pairs_3_40.toml");
    let k = b.scalar("schmidt_bound").unwrap();
    assert!(k > 1.0 && k <= 38.0 + 1e-9, "K = {k}");
}

#[test]
fn simulate_scenario_keeps_norm_below_one() {
    let b = run("simulate_qutrit_sidebands.toml");
    let s = b.scalar("survival").unwrap();
    assert!(s > 0.0 && s <= 1.0 + 1e-12);
}
