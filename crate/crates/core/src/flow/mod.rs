//! Stochastic flows `dφ = b dt + Σ ξ_j ∘ dB^j` with co-propagated Jacobians.
//!
//! The Stratonovich scheme is stochastic Heun on the augmented state `(x, J)`;
//! the Itô scheme is Euler–Maruyama with the corrected drift `b̂`. In both cases
//! the Jacobian update is the exact derivative of the discrete one-step map.

mod driver;
pub mod dump;

pub use driver::{make_driver, BrownianDriver, ChannelSpec};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exterior::JacobianSample;
use crate::fields::{FieldJet, FieldKind, Jet, MAX_DIM};
use crate::linalg::Mat;

/// Paths whose state norm exceeds this are excluded.
pub const BLOWUP_NORM: f64 = 1e10;
/// Retained paths keep `|det J|` inside `[DET_MIN, DET_MAX]`.
pub const DET_MIN: f64 = 1e-8;
pub const DET_MAX: f64 = 1e8;
/// Largest tolerated fraction of excluded paths.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    StratonovichHeun,
    ItoEulerCorrected,
}

/// Drift `b` and noise fields `ξ_j`; `ξ_j` is driven by flow channel `B^j`.
///
/// `b` is always the Stratonovich drift; the Itô scheme applies the
/// correction itself.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub drift: FieldJet,
    pub noise: Vec<FieldJet>,
    pub scheme: Scheme,
}

impl FlowModel {
    pub fn new(drift: FieldJet, noise: Vec<FieldJet>, scheme: Scheme) -> Result<Self> {
        let n = drift.dim();
        for f in std::iter::once(&drift).chain(&noise) {
            if f.kind() != FieldKind::Vector || f.dim() != n {
                return Err(Error::DimensionMismatch(
                    "flow coefficients must be vector fields of one dimension".into(),
                ));
            }
        }
        let need = match scheme {
            Scheme::StratonovichHeun => 1,
            Scheme::ItoEulerCorrected => 2,
        };
        if noise.iter().any(|f| f.max_order() < need) || drift.max_order() < 1 {
            return Err(Error::MissingDerivatives(need));
        }
        Ok(Self {
            drift,
            noise,
            scheme,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    fn check_driver(&self, driver: &BrownianDriver) -> Result<()> {
        if driver.spec.flow_channels.len() < self.noise.len() {
            return Err(Error::Channel(driver.spec.flow_channels.len()));
        }
        Ok(())
    }
}

/// `b̂ = b + ½ Σ_j (ξ_j·∇) ξ_j`.
///
/// ```
/// use kiw_core::fields::catalog_field;
/// use kiw_core::flow::ito_drift_correction;
/// let b = catalog_field("constant_vector", &[0.0], 1).unwrap();
/// let xi = catalog_field("linear_vector", &[1.0], 1).unwrap();
/// assert_eq!(ito_drift_correction(&b, &[xi], 0.0, &[3.0]).unwrap(), vec![1.5]);
/// ```
pub fn ito_drift_correction(b: &FieldJet, xis: &[FieldJet], t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let bj = b.jet(t, x, 0)?;
    let jets: Vec<Jet> = xis.iter().map(|f| f.jet(t, x, 1)).collect::<Result<_>>()?;
    Ok(corrected_drift(&bj, &jets))
}

fn corrected_drift(b: &Jet, xis: &[Jet]) -> Vec<f64> {
    let n = b.n;
    let mut out = b.value.clone();
    for xi in xis {
        for (i, o) in out.iter_mut().enumerate() {
            *o += 0.5 * (0..n).map(|l| xi.value[l] * xi.d1(i, l)).sum::<f64>();
        }
    }
    out
}

/// `D b̂ = D b + ½ Σ_j (Dξ_j Dξ_j + ξ_j^l ∂_l Dξ_j)`.
fn corrected_drift_gradient(b: &Jet, xis: &[Jet]) -> Mat {
    let n = b.n;
    let mut m = grad(b);
    for xi in xis {
        let d = grad(xi);
        let dd = d.mul(&d);
        for i in 0..n {
            for j in 0..n {
                let second: f64 = (0..n).map(|l| xi.value[l] * xi.d2(i, j, l)).sum();
                m.set(i, j, m.get(i, j) + 0.5 * (dd.get(i, j) + second));
            }
        }
    }
    m
}

fn grad(f: &Jet) -> Mat {
    Mat::from_fn(f.n, |i, j| f.d1(i, j))
}

/// Position and Jacobian of one tracked point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowState {
    pub x: [f64; MAX_DIM],
    pub j: Mat,
}

impl FlowState {
    pub fn start(x: &[f64]) -> Self {
        let mut p = [0.0; MAX_DIM];
        p[..x.len()].copy_from_slice(x);
        Self {
            x: p,
            j: Mat::identity(x.len()),
        }
    }

    pub fn point(&self) -> &[f64] {
        &self.x[..self.j.n]
    }

    /// Whether the state is inside the retention bounds.
    pub fn healthy(&self) -> bool {
        let norm = self.point().iter().map(|v| v * v).sum::<f64>().sqrt();
        let det = self.j.det().abs();
        norm.is_finite()
            && norm <= BLOWUP_NORM
            && self.j.is_finite()
            && (DET_MIN..=DET_MAX).contains(&det)
    }
}

/// Increments `ΔB^j` for one step.
fn flow_increments(model: &FlowModel, driver: &BrownianDriver, path: usize, step: usize) -> Result<Vec<f64>> {
    (0..model.noise.len())
        .map(|j| driver.flow_increment(path, j, step))
        .collect()
}

/// Evaluates drift and diffusion jets at `x` and returns `(velocity, gradient)`
/// of the one-step increment `b dt + Σ ξ_j dB_j`, with `b` replaced by `b̂`
/// under the Itô scheme.
fn increment_field(
    model: &FlowModel,
    t: f64,
    x: &[f64],
    dt: f64,
    db: &[f64],
    ito: bool,
) -> Result<(Vec<f64>, Mat)> {
    let n = x.len();
    let order = if ito { 2 } else { 1 };
    let bj = model.drift.jet(t, x, 1)?;
    let xis: Vec<Jet> = model
        .noise
        .iter()
        .map(|f| f.jet(t, x, order))
        .collect::<Result<_>>()?;
    let (bv, bg) = if ito {
        (corrected_drift(&bj, &xis), corrected_drift_gradient(&bj, &xis))
    } else {
        (bj.value.clone(), grad(&bj))
    };
    let mut v: Vec<f64> = bv.iter().map(|b| b * dt).collect();
    let mut g = Mat::zeros(n).add_scaled(dt, &bg);
    for (xi, &d) in xis.iter().zip(db) {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi += xi.value[i] * d;
        }
        g = g.add_scaled(d, &grad(xi));
    }
    Ok((v, g))
}

fn shifted(x: &[f64], v: &[f64]) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| a + b).collect()
}

/// One step of the scheme from `t` to `t + dt` with increments `db`.
/// Negative `dt` and negated `db` integrate backward in time.
pub fn step_state(model: &FlowModel, t: f64, dt: f64, db: &[f64], s: &FlowState) -> Result<FlowState> {
    let n = s.j.n;
    let x = s.point();
    match model.scheme {
        Scheme::ItoEulerCorrected => {
            let (v, g) = increment_field(model, t, x, dt, db, true)?;
            let mut out = FlowState::start(&shifted(x, &v));
            out.j = s.j.add_scaled(1.0, &g.mul(&s.j));
            Ok(out)
        }
        Scheme::StratonovichHeun => {
            let (v0, g0) = increment_field(model, t, x, dt, db, false)?;
            let xp = shifted(x, &v0);
            let jp = s.j.add_scaled(1.0, &g0.mul(&s.j));
            let (v1, g1) = increment_field(model, t + dt, &xp, dt, db, false)?;
            let xn: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * (v0[i] + v1[i])).collect();
            let mut out = FlowState::start(&xn);
            out.j = s
                .j
                .add_scaled(0.5, &g0.mul(&s.j))
                .add_scaled(0.5, &g1.mul(&jp));
            Ok(out)
        }
    }
}

/// Which grid steps a path record keeps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Record {
    All,
    Final,
    Steps(Vec<usize>),
}

impl Record {
    fn steps(&self, n_steps: usize) -> Vec<usize> {
        match self {
            Record::All => (0..=n_steps).collect(),
            Record::Final => vec![n_steps],
            Record::Steps(s) => s.clone(),
        }
    }
}

/// Tracked point at one recorded time.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPoint {
    pub x: Vec<f64>,
    pub jac: JacobianSample,
}

/// One retained path: `states[r][s]` is seed `s` at recorded step `steps[r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathFlow {
    pub path: usize,
    pub steps: Vec<usize>,
    pub states: Vec<Vec<FlowPoint>>,
}

impl PathFlow {
    /// Record index of grid step `step`.
    pub fn record_of(&self, step: usize) -> Option<usize> {
        self.steps.iter().position(|&s| s == step)
    }
}

/// Flow of all seeds on all paths; excluded paths are `None`.
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub n: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub seeds: Vec<Vec<f64>>,
    pub steps: Vec<usize>,
    pub paths: Vec<Option<PathFlow>>,
}

impl FlowSample {
    pub fn n_excluded(&self) -> usize {
        self.paths.iter().filter(|p| p.is_none()).count()
    }

    pub fn excluded_fraction(&self) -> f64 {
        self.n_excluded() as f64 / self.paths.len().max(1) as f64
    }

    pub fn retained(&self) -> impl Iterator<Item = &PathFlow> {
        self.paths.iter().flatten()
    }

    /// Fails when more than 1% of paths were excluded.
    pub fn check_exclusions(&self) -> Result<()> {
        check_exclusions(self.n_excluded(), self.paths.len())
    }
}

pub fn check_exclusions(excluded: usize, total: usize) -> Result<()> {
    if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
        return Err(Error::TooManyExcluded { excluded, total });
    }
    Ok(())
}

/// Integrates every seed along one path. `Ok(None)` means the path blew up.
pub fn integrate_path(
    model: &FlowModel,
    driver: &BrownianDriver,
    path: usize,
    seeds: &[Vec<f64>],
    want_inverse: bool,
    record: &Record,
) -> Result<Option<PathFlow>> {
    model.check_driver(driver)?;
    let n = model.dim();
    if seeds.iter().any(|s| s.len() != n) {
        return Err(Error::DimensionMismatch("seed point dimension".into()));
    }
    let steps = record.steps(driver.n_steps);
    if steps.iter().any(|&s| s > driver.n_steps) {
        return Err(Error::Grid("recorded step beyond the driver grid".into()));
    }
    let dt = driver.dt();
    let mut states: Vec<FlowState> = seeds.iter().map(|s| FlowState::start(s)).collect();
    let mut out = vec![Vec::new(); steps.len()];
    let snapshot = |k: usize, states: &[FlowState], out: &mut Vec<Vec<FlowPoint>>| -> Result<()> {
        for (r, _) in steps.iter().enumerate().filter(|(_, &s)| s == k) {
            out[r] = states
                .iter()
                .map(|s| {
                    let jac = if want_inverse {
                        JacobianSample::inverted(s.j)?
                    } else {
                        JacobianSample::new(s.j)?
                    };
                    Ok(FlowPoint {
                        x: s.point().to_vec(),
                        jac,
                    })
                })
                .collect::<Result<_>>()?;
        }
        Ok(())
    };
    snapshot(0, &states, &mut out)?;
    for k in 0..driver.n_steps {
        let db = flow_increments(model, driver, path, k)?;
        let t = driver.time(k);
        for s in states.iter_mut() {
            *s = step_state(model, t, dt, &db, s)?;
            if !s.healthy() {
                return Ok(None);
            }
        }
        snapshot(k + 1, &states, &mut out)?;
    }
    Ok(Some(PathFlow {
        path,
        steps,
        states: out,
    }))
}

/// Integrates all paths in parallel; results are independent of scheduling.
pub fn integrate_flow(
    model: &FlowModel,
    driver: &BrownianDriver,
    seeds: &[Vec<f64>],
    want_inverse: bool,
    record: &Record,
) -> Result<FlowSample> {
    let paths: Vec<Option<PathFlow>> = (0..driver.n_paths)
        .into_par_iter()
        .map(|p| integrate_path(model, driver, p, seeds, want_inverse, record))
        .collect::<Result<_>>()?;
    Ok(FlowSample {
        n: model.dim(),
        n_steps: driver.n_steps,
        dt: driver.dt(),
        seed: driver.seed,
        seeds: seeds.to_vec(),
        steps: record.steps(driver.n_steps),
        paths,
    })
}

/// Forward map of a single point up to grid step `upto`.
pub fn forward_point(
    model: &FlowModel,
    driver: &BrownianDriver,
    path: usize,
    x: &[f64],
    upto: usize,
) -> Result<FlowState> {
    model.check_driver(driver)?;
    let dt = driver.dt();
    let mut s = FlowState::start(x);
    for k in 0..upto {
        let db = flow_increments(model, driver, path, k)?;
        s = step_state(model, driver.time(k), dt, &db, &s)?;
        if !s.healthy() {
            return Err(Error::ExcludedPath(path));
        }
    }
    Ok(s)
}

/// Approximate inverse of the time-`upto` map by integrating the
/// Stratonovich equation backward from `z`; the Jacobian is that of the
/// backward map.
pub fn backward_point(
    model: &FlowModel,
    driver: &BrownianDriver,
    path: usize,
    z: &[f64],
    upto: usize,
) -> Result<FlowState> {
    model.check_driver(driver)?;
    let heun = FlowModel {
        scheme: Scheme::StratonovichHeun,
        ..model.clone()
    };
    let dt = driver.dt();
    let mut s = FlowState::start(z);
    for k in (0..upto).rev() {
        let db: Vec<f64> = flow_increments(model, driver, path, k)?
            .into_iter()
            .map(|d| -d)
            .collect();
        s = step_state(&heun, driver.time(k + 1), -dt, &db, &s)?;
        if !s.healthy() {
            return Err(Error::ExcludedPath(path));
        }
    }
    Ok(s)
}

/// Tolerance of [`inverse_point`] relative to `max(1, |z|)`.
pub const INVERSE_TOL: f64 = 1e-13;

/// Solves `φ(y) = z` for the discrete time-`upto` map by Newton iteration
/// started from the backward integration. Returns `y` together with the
/// forward state at `y` (so `Dφ^{-1}(z) = J(y)^{-1}`).
pub fn inverse_point(
    model: &FlowModel,
    driver: &BrownianDriver,
    path: usize,
    z: &[f64],
    upto: usize,
) -> Result<(Vec<f64>, FlowState)> {
    let mut y = backward_point(model, driver, path, z, upto)?.point().to_vec();
    let scale = z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut best = f64::INFINITY;
    for _ in 0..50 {
        let f = forward_point(model, driver, path, &y, upto)?;
        let r: Vec<f64> = f.point().iter().zip(z).map(|(a, b)| a - b).collect();
        let err = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err <= INVERSE_TOL * scale {
            return Ok((y, f));
        }
        // stop once Newton stalls at roundoff
        if err >= best && err <= 1e3 * INVERSE_TOL * scale {
            return Ok((y, f));
        }
        best = best.min(err);
        let jinv = f.j.inverse().ok_or(Error::SingularJacobian(f.j.det()))?;
        let step = jinv.mul_vec(&r);
        for (yi, si) in y.iter_mut().zip(&step) {
            *yi -= si;
        }
    }
    Err(Error::InverseFailed(z.to_vec()))
}
