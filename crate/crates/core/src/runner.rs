//! Subcommand implementations behind the `kiw` binary.
//!
//! Every run writes `manifest.json` (unfinalized) before any result file and
//! rewrites it with timing, exclusion counts and the file list at the end.
//! Result files depend only on the configuration and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::advect::{
    advect, advect_magnetic, diamond_pairing_defect, integral_diagnostic, write_diagnostics_csv, AdvectedKind,
    Characteristics, DiagnosticFields, DiagnosticRow, QuadratureGrid,
};
use crate::circulation::{kelvin_check, kelvin_convergence};
use crate::config::{ConfigError, ExperimentConfig, KiwMode};
use crate::error::Error;
use crate::flow::dump::write_flow;
use crate::flow::{check_exclusions, integrate_flow, Record};
use crate::kiw::{default_test_sets, kiw_duality, kiw_residual, KiwReport};
use crate::report::real;
use crate::stats::{fit_log2_slope, summarize, SlopeFit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    KiwVerify,
    Advect,
    Kelvin,
    Convergence,
    Diagnostics,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::KiwVerify => "kiw-verify",
            Command::Advect => "advect",
            Command::Kelvin => "kelvin",
            Command::Convergence => "convergence",
            Command::Diagnostics => "diagnostics",
        }
    }
}

/// Failure of a run, mapped onto the exit-code contract.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("threshold violated: {}", .0.join("; "))]
    Threshold(Vec<String>),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("run failed: {0}")]
    Failed(String),
}

impl RunError {
    /// 1 threshold or run failure, 2 config error, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Threshold(_) | RunError::Failed(_) => 1,
            RunError::Config(_) => 2,
            RunError::Io(_) => 3,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(e) => RunError::Io(e.to_string()),
            Error::Csv(e) => RunError::Io(e.to_string()),
            other => RunError::Failed(other.to_string()),
        }
    }
}

fn io(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub wall_time_s: Option<f64>,
    pub exclusions: BTreeMap<String, usize>,
    pub files: Vec<String>,
    pub status: String,
    pub finalized: bool,
}

pub const MANIFEST: &str = "manifest.json";

/// Results of a command, held in memory until written.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    exclusions: BTreeMap<String, usize>,
    failures: Vec<String>,
}

impl Outputs {
    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<(), RunError> {
        let mut b = serde_json::to_vec_pretty(v).map_err(|e| RunError::Failed(e.to_string()))?;
        b.push(b'\n');
        self.files.push((name.into(), b));
        Ok(())
    }

    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn check_max(&mut self, what: &str, value: f64, limit: Option<f64>) {
        if let Some(limit) = limit {
            if !(value <= limit) {
                self.failures.push(format!("{what} = {value:e} exceeds {limit:e}"));
            }
        }
    }

    fn check_slope(&mut self, what: &str, slope: Option<&SlopeFit>, limit: Option<f64>) {
        if let Some(limit) = limit {
            match slope {
                Some(s) if s.slope >= limit => {}
                Some(s) => self.failures.push(format!("{what} slope {:.4} below {limit}", s.slope)),
                None => self.failures.push(format!("{what} slope could not be fitted")),
            }
        }
    }
}

fn dump_flow(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let Some(points) = &cfg.dump_flow else {
        return Ok(());
    };
    let sample = integrate_flow(&cfg.model()?, &cfg.driver()?, points, false, &Record::All)?;
    let mut b = Vec::new();
    write_flow(&sample, &mut b)?;
    out.file("flow.bin", b);
    Ok(())
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<(), RunError> {
    let path = dir.join(MANIFEST);
    let mut b = serde_json::to_vec_pretty(m).map_err(|e| RunError::Failed(e.to_string()))?;
    b.push(b'\n');
    fs::write(&path, b).map_err(|e| io(&path, e))
}

/// Runs `command` and writes its outputs under `out_dir`.
pub fn run(command: Command, cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest, RunError> {
    let start = Instant::now();
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let mut manifest = RunManifest {
        command,
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        wall_time_s: None,
        exclusions: BTreeMap::new(),
        files: Vec::new(),
        status: "running".into(),
        finalized: false,
    };
    write_manifest(out_dir, &manifest)?;
    let result = match command {
        Command::KiwVerify => cmd_kiw_verify(cfg),
        Command::Advect => cmd_advect(cfg),
        Command::Kelvin => cmd_kelvin(cfg),
        Command::Convergence => cmd_convergence(cfg),
        Command::Diagnostics => cmd_diagnostics(cfg),
    }
    .and_then(|mut out| {
        dump_flow(cfg, &mut out)?;
        Ok(out)
    });
    let outcome = result.and_then(|out| {
        for (name, bytes) in &out.files {
            let path = out_dir.join(name);
            fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        }
        Ok(out)
    });
    manifest.wall_time_s = Some(start.elapsed().as_secs_f64());
    manifest.finalized = true;
    let err = match outcome {
        Ok(out) => {
            manifest.exclusions = out.exclusions;
            manifest.files = out.files.into_iter().map(|f| f.0).collect();
            (!out.failures.is_empty()).then_some(RunError::Threshold(out.failures))
        }
        Err(e) => Some(e),
    };
    manifest.status = match &err {
        None => "pass".into(),
        Some(e) => e.to_string(),
    };
    write_manifest(out_dir, &manifest)?;
    match err {
        None => Ok(manifest),
        Some(e) => Err(e),
    }
}

/// Reads and validates a config file, applying a seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, RunError> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    let mut cfg = ExperimentConfig::from_json(&bytes)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Output directory: the override, else the config's, else `out`.
pub fn output_dir(cfg: &ExperimentConfig, over: Option<PathBuf>) -> PathBuf {
    over.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn kiw_report(cfg: &ExperimentConfig) -> Result<KiwReport, RunError> {
    let k = cfg.kform.as_ref().ok_or_else(|| RunError::Config("kform: section missing".into()))?;
    if cfg.levels < 2 {
        return Err(RunError::Config("levels: at least 2 refinement levels are needed".into()));
    }
    let sm = cfg.semimartingale()?;
    let model = cfg.model()?;
    let driver = cfg.driver()?;
    let tests = default_test_sets(cfg.n, sm.k, k.test_seed);
    let report = match k.mode {
        KiwMode::Residual => kiw_residual(&sm, &model, &driver, &k.seeds, &tests, cfg.levels)?,
        KiwMode::Duality => kiw_duality(&sm, &model, &driver, &k.seeds, &tests, cfg.levels)?,
    };
    Ok(report)
}

fn cmd_kiw_verify(cfg: &ExperimentConfig) -> Result<Outputs, RunError> {
    let report = kiw_report(cfg)?;
    let mut out = Outputs::default();
    for (i, l) in report.levels.iter().enumerate() {
        out.exclusions.insert(format!("level_{i}"), l.n_excluded);
    }
    out.json("kiw_report.json", &report)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    out.file("kiw_residuals.csv", csv);
    out.check_max("max residual", report.max_abs_residual(), cfg.thresholds.max_residual);
    out.check_slope("residual", report.slope.as_ref(), cfg.thresholds.min_slope);
    Ok(out)
}

fn default_checkpoints(n_steps: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (0..=4).map(|i| (i * n_steps) / 4).collect();
    c.dedup();
    c
}

fn diagnostic_fields(cfg: &ExperimentConfig, chars: Arc<Characteristics>) -> Result<DiagnosticFields, RunError> {
    let a = cfg.advect.as_ref().ok_or_else(|| RunError::Config("advect: section missing".into()))?;
    let (d, s, m) = cfg.advect_fields()?;
    Ok(DiagnosticFields {
        density: d.map(|f| advect(AdvectedKind::Density, f, chars.clone())).transpose()?,
        scalar: s.map(|f| advect(AdvectedKind::Scalar, f, chars.clone())).transpose()?,
        entropy: a.entropy,
        magnetic: m.map(|f| advect_magnetic(f, chars.clone())).transpose()?,
    })
}

/// Diagnostic rows of every retained path and the number of excluded paths.
fn diagnostic_series(
    cfg: &ExperimentConfig,
    chars: Arc<Characteristics>,
    steps: &[usize],
) -> Result<(Vec<DiagnosticRow>, usize), RunError> {
    let a = cfg.advect.as_ref().ok_or_else(|| RunError::Config("advect: section missing".into()))?;
    let fields = diagnostic_fields(cfg, chars.clone())?;
    let grid = QuadratureGrid::new(cfg.n, a.grid_nodes)?;
    let mut rows = Vec::new();
    let mut excluded = 0;
    for path in 0..chars.driver.n_paths {
        let mut mine = Vec::new();
        let res: Result<(), Error> = (|| {
            for &diag in &a.diagnostics {
                for &s in steps {
                    mine.push(DiagnosticRow {
                        t: chars.time(s),
                        path,
                        name: diag.name().into(),
                        value: integral_diagnostic(diag, &fields, &grid, s, path)?,
                    });
                }
            }
            Ok(())
        })();
        match res {
            Ok(()) => rows.extend(mine),
            Err(Error::ExcludedPath(_)) => excluded += 1,
            Err(e) => return Err(e.into()),
        }
    }
    check_exclusions(excluded, chars.driver.n_paths)?;
    Ok((rows, excluded))
}

/// `max_t |v(t) − v(0)| / |v(0)|` per `(path, name)`, in row order.
fn relative_drifts(rows: &[DiagnosticRow]) -> Vec<(usize, String, f64)> {
    let mut out: Vec<(usize, String, f64)> = Vec::new();
    let mut start = 0.0;
    for r in rows {
        match out.last_mut() {
            Some(last) if last.0 == r.path && last.1 == r.name => {
                let d = if start == 0.0 { (r.value - start).abs() } else { ((r.value - start) / start).abs() };
                last.2 = last.2.max(d);
            }
            _ => {
                start = r.value;
                out.push((r.path, r.name.clone(), 0.0));
            }
        }
    }
    out
}

fn cmd_advect(cfg: &ExperimentConfig) -> Result<Outputs, RunError> {
    let a = cfg.advect.as_ref().ok_or_else(|| RunError::Config("advect: section missing".into()))?;
    let chars = cfg.characteristics(a.route)?;
    let steps = match &a.checkpoints {
        Some(c) => c.clone(),
        None => default_checkpoints(chars.driver.n_steps),
    };
    if let Some(&bad) = steps.iter().find(|&&s| s > chars.driver.n_steps) {
        return Err(RunError::Config(format!("advect.checkpoints: step {bad} beyond the grid")));
    }
    let (rows, excluded) = diagnostic_series(cfg, chars, &steps)?;
    let mut out = Outputs::default();
    out.exclusions.insert("paths".into(), excluded);
    let mut csv = Vec::new();
    write_diagnostics_csv(&rows, &mut csv)?;
    out.file("diagnostics.csv", csv);
    let drifts = relative_drifts(&rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path", "name", "relative_drift"]).map_err(Error::from)?;
    for (p, name, d) in &drifts {
        w.write_record([p.to_string(), name.clone(), real(*d)]).map_err(Error::from)?;
        out.check_max(&format!("path {p} {name} relative drift"), *d, cfg.thresholds.max_relative_drift);
    }
    out.file("drift.csv", w.into_inner().map_err(|e| RunError::Io(e.to_string()))?);
    Ok(out)
}

#[derive(Serialize)]
struct KelvinSummary {
    dt: f64,
    n_steps: usize,
    n_paths: usize,
    n_excluded: usize,
    max_abs_defect: f64,
    degenerate_paths: Vec<usize>,
}

fn cmd_kelvin(cfg: &ExperimentConfig) -> Result<Outputs, RunError> {
    let k = cfg.kelvin.as_ref().ok_or_else(|| RunError::Config("kelvin: section missing".into()))?;
    let chars = cfg.characteristics(k.route)?;
    let data = cfg.kelvin_data()?;
    let lp = cfg.kelvin_loop()?;
    let steps = match &k.checkpoints {
        Some(c) => c.clone(),
        None => default_checkpoints(chars.driver.n_steps),
    };
    let report = kelvin_check(&data, &chars, &lp, &steps)?;
    let max = report
        .retained()
        .flat_map(|s| s.defect.iter())
        .fold(0.0f64, |m, d| m.max(d.abs()));
    let mut out = Outputs::default();
    out.exclusions.insert("paths".into(), report.n_excluded());
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    out.file("kelvin_series.csv", csv);
    out.json(
        "kelvin_report.json",
        &KelvinSummary {
            dt: report.dt,
            n_steps: report.n_steps,
            n_paths: report.series.len(),
            n_excluded: report.n_excluded(),
            max_abs_defect: max,
            degenerate_paths: report
                .retained()
                .filter(|s| s.degenerate.iter().any(|d| *d))
                .map(|s| s.path)
                .collect(),
        },
    )?;
    out.check_max("max Kelvin defect", max, cfg.thresholds.max_defect);
    Ok(out)
}

struct SuiteLevel {
    dt: f64,
    rms: f64,
    n_excluded: usize,
}

fn cmd_convergence(cfg: &ExperimentConfig) -> Result<Outputs, RunError> {
    let mut suites: Vec<(String, Vec<SuiteLevel>)> = Vec::new();
    if cfg.kform.is_some() {
        let r = kiw_report(cfg)?;
        suites.push((
            "kiw".into(),
            r.levels
                .iter()
                .map(|l| SuiteLevel {
                    dt: l.dt,
                    rms: l.rms_residual,
                    n_excluded: l.n_excluded,
                })
                .collect(),
        ));
    }
    if let Some(k) = &cfg.kelvin {
        let chars = cfg.characteristics(k.route)?;
        let r = kelvin_convergence(&cfg.kelvin_data()?, &chars, &cfg.kelvin_loop()?, cfg.levels)?;
        suites.push((
            "kelvin".into(),
            r.levels
                .iter()
                .map(|l| SuiteLevel {
                    dt: l.dt,
                    rms: l.rms_defect,
                    n_excluded: l.n_excluded,
                })
                .collect(),
        ));
    }
    if let Some(a) = &cfg.advect {
        let base = cfg.characteristics(a.route)?;
        let mut levels: BTreeMap<String, Vec<SuiteLevel>> = BTreeMap::new();
        for l in 0..cfg.levels {
            let chars = Arc::new(Characteristics {
                driver: Arc::new(base.driver.refined(l)),
                ..(*base).clone()
            });
            let last = chars.driver.n_steps;
            let (rows, excluded) = diagnostic_series(cfg, chars.clone(), &[0, last])?;
            let drifts = relative_drifts(&rows);
            for diag in &a.diagnostics {
                let d: Vec<f64> = drifts.iter().filter(|x| x.1 == diag.name()).map(|x| x.2).collect();
                levels.entry(format!("advect_{}", diag.name())).or_default().push(SuiteLevel {
                    dt: chars.driver.dt(),
                    rms: summarize(&d).1,
                    n_excluded: excluded,
                });
            }
        }
        suites.extend(levels);
    }
    if suites.is_empty() {
        return Err(RunError::Config("convergence needs a kform, kelvin or advect section".into()));
    }
    let mut out = Outputs::default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["suite", "dt", "rms_error", "n_excluded"]).map_err(Error::from)?;
    let mut slopes: BTreeMap<String, Option<SlopeFit>> = BTreeMap::new();
    for (name, levels) in &suites {
        for (i, l) in levels.iter().enumerate() {
            w.write_record([name.clone(), real(l.dt), real(l.rms), l.n_excluded.to_string()])
                .map_err(Error::from)?;
            out.exclusions.insert(format!("{name}_level_{i}"), l.n_excluded);
        }
        let dts: Vec<f64> = levels.iter().map(|l| l.dt).collect();
        let errs: Vec<f64> = levels.iter().map(|l| l.rms).collect();
        let fit = fit_log2_slope(&dts, &errs);
        // conservation drifts sit at a quadrature floor; only their size is checked
        if name.starts_with("advect_") {
            for l in levels {
                out.check_max(&format!("{name} rms drift"), l.rms, cfg.thresholds.max_relative_drift);
            }
        } else {
            out.check_slope(name, fit.as_ref(), cfg.thresholds.min_slope);
        }
        slopes.insert(name.clone(), fit);
    }
    out.file("convergence.csv", w.into_inner().map_err(|e| RunError::Io(e.to_string()))?);
    out.json("slopes.json", &slopes)?;
    Ok(out)
}

fn cmd_diagnostics(cfg: &ExperimentConfig) -> Result<Outputs, RunError> {
    let mut rows: Vec<(String, f64, usize, f64)> = Vec::new();
    let mut excluded = 0;
    if let Some(a) = &cfg.advect {
        let chars = cfg.characteristics(a.route)?;
        let fields = diagnostic_fields(cfg, chars.clone())?;
        let last = chars.driver.n_steps;
        let t = chars.time(last);
        let probes = if a.probes.is_empty() {
            vec![vec![0.25; cfg.n], (0..cfg.n).map(|i| 1.0 - 0.4 * i as f64).collect()]
        } else {
            a.probes.clone()
        };
        for path in 0..chars.driver.n_paths {
            let mut mine = Vec::new();
            let res: Result<(), Error> = (|| {
                for x in &probes {
                    if let Some(m) = &fields.magnetic {
                        mine.push(("closedness".to_string(), t, path, m.closedness_defect(last, path, x)?));
                    }
                    for (name, f) in [
                        ("pullback_identity_density", fields.density.as_ref()),
                        ("pullback_identity_scalar", fields.scalar.as_ref()),
                        ("pullback_identity_potential", fields.magnetic.as_ref().map(|m| &m.potential)),
                    ] {
                        if let Some(f) = f {
                            mine.push((name.to_string(), t, path, f.pullback_identity_error(last, path, x)?));
                        }
                    }
                }
                Ok(())
            })();
            match res {
                Ok(()) => rows.extend(mine),
                Err(Error::ExcludedPath(_)) => excluded += 1,
                Err(e) => return Err(e.into()),
            }
        }
        check_exclusions(excluded, chars.driver.n_paths)?;
    }
    if let Some(d) = &cfg.diamond {
        let (b, a, u) = cfg.diamond_fields()?;
        let grid = QuadratureGrid::new(cfg.n, d.grid_nodes)?;
        let r = diamond_pairing_defect(&b, &a, &u, &grid)?;
        rows.push(("diamond_pairing".into(), 0.0, 0, r.defect));
    }
    if cfg.advect.is_none() && cfg.diamond.is_none() {
        return Err(RunError::Config("diagnostics needs an advect or diamond section".into()));
    }
    let mut out = Outputs::default();
    out.exclusions.insert("paths".into(), excluded);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "t", "path", "value"]).map_err(Error::from)?;
    let mut max = 0.0f64;
    for (name, t, p, v) in &rows {
        w.write_record([name.clone(), real(*t), p.to_string(), real(*v)]).map_err(Error::from)?;
        max = max.max(*v);
    }
    out.file("checks.csv", w.into_inner().map_err(|e| RunError::Io(e.to_string()))?);
    out.check_max("max pointwise check", max, cfg.thresholds.max_defect);
    Ok(out)
}
