use std::fs;

use kiw_core::advect::{total_mass, InverseRoute, QuadratureGrid};
use kiw_core::circulation::kelvin_check;
use kiw_core::config::ExperimentConfig;
use kiw_core::flow::dump::{read_flow, write_flow};
use kiw_core::flow::{integrate_flow, Record};
use kiw_core::kiw::{default_test_sets, kiw_residual};
use kiw_core::runner::{run, Command, RunManifest, MANIFEST};

const BASE: &str = r#"{
  "n": 2, "t_final": 0.5, "dt": 0.0625, "levels": 2, "n_paths": 8, "seed": 31,
  "flow": {"drift": {"name": "taylor_green", "params": [0.5]}, "noise": [{"name": "sine_shear", "params": [0.3]}]},
  "kform": {"k0": {"name": "gaussian_form", "params": [1, 1.0, 1.0, 0.5]},
            "drift": {"name": "gaussian_form", "params": [1, 1.5, 0.3, -0.2]},
            "diffusions": [{"form": {"name": "gaussian_form", "params": [1, 0.8, 0.5, 0.7]}, "channel": 0}],
            "convention": "ito", "seeds": [[0.3, -0.2], [1.0, 0.5]]},
  "advect": {"density": {"name": "periodic_bump", "params": [0.9, 1.0, 2.0]},
             "scalar": {"name": "fourier_scalar", "params": [1.0, 1.0, 1.0, 0.3]},
             "entropy": "square", "grid_nodes": 16,
             "diagnostics": ["total_mass", "entropy_integral"], "probes": [[0.3, 0.4]]},
  "kelvin": {"v0": {"name": "fourier_form", "params": [1, 0.8, 0.0, 1.0, 0.3, 0.6, 1.0, 0.0, 1.0]},
             "loop": {"center": [0.2, 0.1], "radius": 1.0, "nodes": 64}},
  "diamond": {"b": {"name": "fourier_vector", "params": [1.0, 1.0, 1.0, 0.0, 0.5, 2.0, 0.0, 0.3]},
              "a": {"name": "fourier_form", "params": [1, 0.4, 0.0, 1.0, 0.1, 0.9, 1.0, 0.0, 0.5]},
              "u": {"name": "taylor_green", "params": [0.5]}, "grid_nodes": 32},
  "dump_flow": [[0.1, 0.2], [2.0, -1.0]]
}"#;

fn config() -> ExperimentConfig {
    let cfg = ExperimentConfig::from_json(BASE.as_bytes()).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn manifest(dir: &std::path::Path) -> RunManifest {
    serde_json::from_slice(&fs::read(dir.join(MANIFEST)).unwrap()).unwrap()
}

#[test]
fn every_command_finalizes_its_manifest() {
    let cfg = config();
    let tmp = tempfile::tempdir().unwrap();
    for cmd in [Command::KiwVerify, Command::Advect, Command::Kelvin, Command::Convergence, Command::Diagnostics] {
        let dir = tmp.path().join(cmd.name());
        let m = run(cmd, &cfg, &dir).unwrap();
        let on_disk = manifest(&dir);
        assert!(on_disk.finalized);
        assert_eq!(on_disk.status, "pass");
        assert_eq!(on_disk.config_hash, cfg.hash());
        assert_eq!(on_disk.files, m.files);
        assert!(m.files.contains(&"flow.bin".to_string()));
        for f in &m.files {
            assert!(dir.join(f).is_file(), "{f} missing for {}", cmd.name());
        }
    }
}

#[test]
fn kiw_report_matches_library_call() {
    let cfg = config();
    let tmp = tempfile::tempdir().unwrap();
    run(Command::KiwVerify, &cfg, tmp.path()).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("kiw_report.json")).unwrap()).unwrap();
    let k = cfg.kform.as_ref().unwrap();
    let direct = kiw_residual(
        &cfg.semimartingale().unwrap(),
        &cfg.model().unwrap(),
        &cfg.driver().unwrap(),
        &k.seeds,
        &default_test_sets(2, 1, k.test_seed),
        cfg.levels,
    )
    .unwrap();
    let levels = report["levels"].as_array().unwrap();
    assert_eq!(levels.len(), direct.levels.len());
    for (a, b) in levels.iter().zip(&direct.levels) {
        assert_eq!(a["rms_residual"].as_f64().unwrap(), b.rms_residual);
    }
}

#[test]
fn flow_dump_round_trips_through_a_file() {
    let cfg = config();
    let sample = integrate_flow(&cfg.model().unwrap(), &cfg.driver().unwrap(), &[vec![0.1, 0.2], vec![2.0, -1.0]], false, &Record::All).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("flow.bin");
    write_flow(&sample, fs::File::create(&path).unwrap()).unwrap();
    let back = read_flow(fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back.n, sample.n);
    assert_eq!(back.n_steps, sample.n_steps);
    assert_eq!(back.seed, sample.seed);
    assert_eq!(back.seeds, sample.seeds);
    assert_eq!(back.steps, sample.steps);
    assert_eq!(back.paths, sample.paths);

    // the copy written by a run is the same bytes
    let dir = tmp.path().join("run");
    run(Command::Advect, &cfg, &dir).unwrap();
    assert_eq!(fs::read(dir.join("flow.bin")).unwrap(), fs::read(&path).unwrap());
}

#[test]
fn truncated_dump_is_rejected() {
    let cfg = config();
    let sample = integrate_flow(&cfg.model().unwrap(), &cfg.driver().unwrap(), &[vec![0.1, 0.2]], false, &Record::Final).unwrap();
    let mut b = Vec::new();
    write_flow(&sample, &mut b).unwrap();
    b.truncate(b.len() - 3);
    assert!(read_flow(b.as_slice()).is_err());
    assert!(read_flow(&b"NOTAFLOW"[..]).is_err());
}

#[test]
fn advect_csv_reports_conserved_mass() {
    let cfg = config();
    let tmp = tempfile::tempdir().unwrap();
    run(Command::Advect, &cfg, tmp.path()).unwrap();
    let mut rdr = csv::Reader::from_path(tmp.path().join("drift.csv")).unwrap();
    let mut rows = 0;
    for r in rdr.records() {
        let r = r.unwrap();
        if &r[1] == "total_mass" {
            assert!(r[2].parse::<f64>().unwrap().abs() < 1e-8);
            rows += 1;
        }
    }
    assert_eq!(rows, cfg.n_paths);

    let chars = cfg.characteristics(InverseRoute::Backward).unwrap();
    let (density, _, _) = cfg.advect_fields().unwrap();
    let dens = kiw_core::advect::advect(kiw_core::advect::AdvectedKind::Density, density.unwrap(), chars).unwrap();
    let grid = QuadratureGrid::new(2, 16).unwrap();
    let m0 = total_mass(&dens, &grid, 0, 0).unwrap();
    let m1 = total_mass(&dens, &grid, 8, 0).unwrap();
    assert!(((m1 - m0) / m0).abs() < 1e-8);
}

#[test]
fn kelvin_pipeline_has_small_defect() {
    let cfg = config();
    let chars = cfg.characteristics(InverseRoute::Backward).unwrap();
    let r = kelvin_check(&cfg.kelvin_data().unwrap(), &chars, &cfg.kelvin_loop().unwrap(), &[4, 8]).unwrap();
    assert_eq!(r.n_excluded(), 0);
    for d in r.terminal_defects() {
        assert!(d.abs() < 1e-2, "defect {d}");
    }
}

#[test]
fn seed_changes_results_but_not_layout() {
    let a = config();
    let mut b = config();
    b.seed += 1;
    let tmp = tempfile::tempdir().unwrap();
    run(Command::Kelvin, &a, &tmp.path().join("a")).unwrap();
    run(Command::Kelvin, &b, &tmp.path().join("b")).unwrap();
    let fa = fs::read_to_string(tmp.path().join("a/kelvin_series.csv")).unwrap();
    let fb = fs::read_to_string(tmp.path().join("b/kelvin_series.csv")).unwrap();
    assert_ne!(fa, fb);
    assert_eq!(fa.lines().count(), fb.lines().count());
    assert_eq!(fa.lines().next(), fb.lines().next());
}
