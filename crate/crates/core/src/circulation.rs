//! Material loops, circulation and the pathwise stochastic Kelvin theorem.
//!
//! The circulation integrand `v` is supplied data. Its evolution is
//! reconstructed along characteristics from
//! `φ_t^*v(t) = v₀ + ∫₀ᵗ φ_s^*(ρ⁻¹F) ds`, so that with `ψ = φ_t⁻¹`
//! `v(t, x) = Dψ(x)ᵀ w(ψ(x))` and `w(y) = v₀(y) + ∫₀ᵗ J_s(y)ᵀ (ρ⁻¹F)(φ_s(y)) ds`.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advect::Characteristics;
use crate::error::{Error, Result};
use crate::fields::{FieldJet, FieldKind};
use crate::flow::{check_exclusions, step_state, FlowState};
use crate::report::real;
use crate::stats::{fit_log2_slope, summarize, SlopeFit};

pub const MIN_NODES: usize = 16;
/// Segments shorter than this fraction of the loop scale flag degeneration.
pub const DEGENERATE_FRACTION: f64 = 1e-8;

/// Closed polygon; the last node connects back to the first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loop {
    pub nodes: Vec<Vec<f64>>,
    /// Parameter of each node on the initial loop, in `[0, 1)`.
    pub arc: Vec<f64>,
}

impl Loop {
    pub fn new(nodes: Vec<Vec<f64>>, arc: Vec<f64>) -> Result<Self> {
        if nodes.len() < MIN_NODES {
            return Err(Error::Invalid(format!(
                "a loop needs at least {MIN_NODES} nodes, got {}",
                nodes.len()
            )));
        }
        if arc.len() != nodes.len() {
            return Err(Error::Invalid("one arc parameter per node required".into()));
        }
        let n = nodes[0].len();
        if n < 2 || nodes.iter().any(|p| p.len() != n) {
            return Err(Error::DimensionMismatch("loop nodes need a common dimension n >= 2".into()));
        }
        if let Some(p) = nodes.iter().find(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(p.clone()));
        }
        Ok(Self { nodes, arc })
    }

    /// `m` equally spaced nodes on a circle in the `x1 x2` plane, counterclockwise.
    pub fn circle(center: &[f64], radius: f64, m: usize) -> Result<Self> {
        let nodes = (0..m)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / m as f64;
                let mut p = center.to_vec();
                p[0] += radius * a.cos();
                p[1] += radius * a.sin();
                p
            })
            .collect();
        Self::new(nodes, (0..m).map(|j| j as f64 / m as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    /// Same loop with node `k` first.
    pub fn rotated(&self, k: usize) -> Self {
        let mut l = self.clone();
        l.nodes.rotate_left(k % self.len());
        l.arc.rotate_left(k % self.len());
        l
    }

    /// `(midpoint, node_{j+1} - node_j)` for every segment.
    pub fn segments(&self) -> impl Iterator<Item = (Vec<f64>, Vec<f64>)> + '_ {
        let m = self.len();
        (0..m).map(move |j| {
            let (a, b) = (&self.nodes[j], &self.nodes[(j + 1) % m]);
            let mid = a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect();
            let d = a.iter().zip(b).map(|(p, q)| q - p).collect();
            (mid, d)
        })
    }

    pub fn min_segment(&self) -> f64 {
        self.segments().map(|(_, d)| norm(&d)).fold(f64::INFINITY, f64::min)
    }

    /// Largest distance of a node from the node centroid.
    pub fn scale(&self) -> f64 {
        let n = self.dim();
        let m = self.len() as f64;
        let c: Vec<f64> = (0..n).map(|i| self.nodes.iter().map(|p| p[i]).sum::<f64>() / m).collect();
        self.nodes
            .iter()
            .map(|p| norm(&p.iter().zip(&c).map(|(a, b)| a - b).collect::<Vec<_>>()))
            .fold(0.0, f64::max)
    }

    pub fn is_degenerate(&self) -> bool {
        self.min_segment() < DEGENERATE_FRACTION * self.scale()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Maps every node through `φ_t` on one path.
pub fn advect_loop(lp: &Loop, chars: &Characteristics, step: usize, path: usize) -> Result<Loop> {
    let nodes = lp
        .nodes
        .iter()
        .map(|x| Ok(chars.forward(step, path, x)?.point().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Loop {
        nodes,
        arc: lp.arc.clone(),
    })
}

/// `Σ_j v(mid_j) · (node_{j+1} - node_j)` for a 1-form given pointwise.
pub fn circulation_with<F>(lp: &Loop, v: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut sum = 0.0;
    for (j, (mid, d)) in lp.segments().enumerate() {
        if d.iter().all(|c| *c == 0.0) {
            return Err(Error::DegenerateLoop(format!("nodes {j} and {} coincide", (j + 1) % lp.len())));
        }
        sum += dot(&v(&mid)?, &d);
    }
    Ok(sum)
}

pub fn circulation(v: &FieldJet, lp: &Loop) -> Result<f64> {
    if v.kind() != FieldKind::KForm(1) || v.dim() != lp.dim() {
        return Err(Error::Invalid("circulation needs a 1-form in the loop's dimension".into()));
    }
    circulation_with(lp, |x| v.eval(0.0, x))
}

fn increments(chars: &Characteristics, path: usize, step: usize) -> Result<Vec<f64>> {
    (0..chars.model.noise.len())
        .map(|j| chars.driver.flow_increment(path, j, step))
        .collect()
}

/// States `φ_s(y)` for `s = 0..=upto`.
fn trajectory(chars: &Characteristics, path: usize, y: &[f64], upto: usize) -> Result<Vec<FlowState>> {
    let dt = chars.driver.dt();
    let mut s = FlowState::start(y);
    let mut out = Vec::with_capacity(upto + 1);
    out.push(s);
    for k in 0..upto {
        s = step_state(&chars.model, chars.time(k), dt, &increments(chars, path, k)?, &s)?;
        if !s.healthy() {
            return Err(Error::ExcludedPath(path));
        }
        out.push(s);
    }
    Ok(out)
}

/// `J_sᵀ f(φ_s(y))` integrated over `[0, t_upto]` by the trapezoid rule.
fn pulled_back_forcing(
    chars: &Characteristics,
    forcing: &FieldJet,
    path: usize,
    y: &[f64],
    upto: usize,
) -> Result<Vec<f64>> {
    let n = y.len();
    let dt = chars.driver.dt();
    let mut acc = vec![0.0; n];
    for (k, s) in trajectory(chars, path, y, upto)?.iter().enumerate() {
        let w = if k == 0 || k == upto { 0.5 * dt } else { dt };
        let f = forcing.eval(0.0, s.point())?;
        let jt = s.j.transpose().mul_vec(&f);
        for (a, b) in acc.iter_mut().zip(&jt) {
            *a += w * b;
        }
    }
    Ok(acc)
}

/// Supplied data of a Kelvin experiment.
#[derive(Clone, Debug)]
pub struct KelvinData {
    pub v0: FieldJet,
    /// `ρ⁻¹F`; `None` means no forcing.
    pub forcing: Option<FieldJet>,
}

impl KelvinData {
    pub fn new(v0: FieldJet, forcing: Option<FieldJet>) -> Result<Self> {
        for f in std::iter::once(&v0).chain(forcing.as_ref()) {
            if f.kind() != FieldKind::KForm(1) {
                return Err(Error::Invalid("Kelvin data must be 1-forms".into()));
            }
            if f.dim() != v0.dim() {
                return Err(Error::DimensionMismatch("Kelvin data in different dimensions".into()));
            }
        }
        Ok(Self { v0, forcing })
    }

    /// `φ_t^*v(t)` at `y`.
    pub fn pulled_back(&self, chars: &Characteristics, step: usize, path: usize, y: &[f64]) -> Result<Vec<f64>> {
        let mut w = self.v0.eval(0.0, y)?;
        if let Some(f) = &self.forcing {
            if step > 0 {
                for (a, b) in w.iter_mut().zip(pulled_back_forcing(chars, f, path, y, step)?) {
                    *a += b;
                }
            }
        }
        Ok(w)
    }

    /// `v(t, x)` reconstructed along the characteristic through `x`.
    pub fn evaluate(&self, chars: &Characteristics, step: usize, path: usize, x: &[f64]) -> Result<Vec<f64>> {
        let inv = chars.inverse(step, path, x)?;
        let w = self.pulled_back(chars, step, path, &inv.y)?;
        Ok(inv.dpsi.transpose().mul_vec(&w))
    }
}

/// Kelvin series of one path at the checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CirculationSeries {
    pub path: usize,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub circulation: Vec<f64>,
    pub forcing_accum: Vec<f64>,
    pub defect: Vec<f64>,
    /// Whether the advected loop had a near-coincident segment.
    pub degenerate: Vec<bool>,
}

/// `I(t)`, the accumulated forcing `∫₀ᵗ ∮_{c_s} ρ⁻¹F ds` and the defect
/// `I(t) − I(0) − forcing` at the checkpoints of one path.
pub fn kelvin_path(
    data: &KelvinData,
    chars: &Characteristics,
    lp: &Loop,
    checkpoints: &[usize],
    path: usize,
) -> Result<CirculationSeries> {
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    if last > chars.driver.n_steps {
        return Err(Error::Grid(format!("checkpoint {last} beyond {} steps", chars.driver.n_steps)));
    }
    let i0 = circulation(&data.v0, lp)?;
    // nodes advected step by step, with the forcing circulation on each loop
    let trajs = lp
        .nodes
        .iter()
        .map(|x| trajectory(chars, path, x, last))
        .collect::<Result<Vec<_>>>()?;
    let loop_at = |s: usize| Loop {
        nodes: trajs.iter().map(|t| t[s].point().to_vec()).collect(),
        arc: lp.arc.clone(),
    };
    let dt = chars.driver.dt();
    let mut accum = vec![0.0; last + 1];
    if let Some(f) = &data.forcing {
        let mut prev = circulation(f, lp)?;
        for s in 1..=last {
            let cur = circulation(f, &loop_at(s))?;
            accum[s] = accum[s - 1] + 0.5 * dt * (prev + cur);
            prev = cur;
        }
    }
    let mut out = CirculationSeries {
        path,
        steps: checkpoints.to_vec(),
        times: checkpoints.iter().map(|&s| chars.time(s)).collect(),
        circulation: Vec::new(),
        forcing_accum: Vec::new(),
        defect: Vec::new(),
        degenerate: Vec::new(),
    };
    for &s in checkpoints {
        let ct = loop_at(s);
        let i = if s == 0 {
            i0
        } else {
            circulation_with(&ct, |x| data.evaluate(chars, s, path, x))?
        };
        out.circulation.push(i);
        out.forcing_accum.push(accum[s]);
        out.defect.push(i - i0 - accum[s]);
        out.degenerate.push(ct.is_degenerate());
    }
    Ok(out)
}

/// Kelvin series for a set of paths; excluded paths are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KelvinReport {
    pub dt: f64,
    pub n_steps: usize,
    pub series: Vec<Option<CirculationSeries>>,
}

impl KelvinReport {
    pub fn n_excluded(&self) -> usize {
        self.series.iter().filter(|s| s.is_none()).count()
    }

    pub fn retained(&self) -> impl Iterator<Item = &CirculationSeries> {
        self.series.iter().flatten()
    }

    /// Final-checkpoint defects of the retained paths.
    pub fn terminal_defects(&self) -> Vec<f64> {
        self.retained().filter_map(|s| s.defect.last().copied()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "path", "I", "forcing_accum", "defect"])?;
        for s in self.retained() {
            for r in 0..s.steps.len() {
                out.write_record([
                    real(s.times[r]),
                    s.path.to_string(),
                    real(s.circulation[r]),
                    real(s.forcing_accum[r]),
                    real(s.defect[r]),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs [`kelvin_path`] on every path of the driver in parallel.
pub fn kelvin_check(
    data: &KelvinData,
    chars: &Characteristics,
    lp: &Loop,
    checkpoints: &[usize],
) -> Result<KelvinReport> {
    if lp.dim() != chars.dim() || data.v0.dim() != chars.dim() {
        return Err(Error::DimensionMismatch("loop, data and flow dimensions differ".into()));
    }
    let series = (0..chars.driver.n_paths)
        .into_par_iter()
        .map(|p| match kelvin_path(data, chars, lp, checkpoints, p) {
            Ok(s) => Ok(Some(s)),
            Err(Error::ExcludedPath(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let report = KelvinReport {
        dt: chars.driver.dt(),
        n_steps: chars.driver.n_steps,
        series,
    };
    check_exclusions(report.n_excluded(), report.series.len())?;
    Ok(report)
}

/// Terminal defect statistics of one refinement level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KelvinLevel {
    pub dt: f64,
    pub n_steps: usize,
    pub n_excluded: usize,
    pub mean_abs_defect: f64,
    pub rms_defect: f64,
    pub max_abs_defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KelvinConvergence {
    pub levels: Vec<KelvinLevel>,
    pub slope: Option<SlopeFit>,
}

impl KelvinConvergence {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["dt", "mean_abs_defect", "rms_defect", "max_abs_defect", "n_excluded"])?;
        for l in &self.levels {
            out.write_record([
                real(l.dt),
                real(l.mean_abs_defect),
                real(l.rms_defect),
                real(l.max_abs_defect),
                l.n_excluded.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Terminal Kelvin defect on `levels` successive refinements of the driver.
pub fn kelvin_convergence(data: &KelvinData, chars: &Characteristics, lp: &Loop, levels: u32) -> Result<KelvinConvergence> {
    let mut out = Vec::new();
    for l in 0..levels {
        let c = Characteristics {
            driver: std::sync::Arc::new(chars.driver.refined(l)),
            ..chars.clone()
        };
        let r = kelvin_check(data, &c, lp, &[c.driver.n_steps])?;
        let (mean_abs_defect, rms_defect, max_abs_defect) = summarize(&r.terminal_defects());
        out.push(KelvinLevel {
            dt: r.dt,
            n_steps: r.n_steps,
            n_excluded: r.n_excluded(),
            mean_abs_defect,
            rms_defect,
            max_abs_defect,
        });
    }
    let dts: Vec<f64> = out.iter().map(|l| l.dt).collect();
    let errs: Vec<f64> = out.iter().map(|l| l.rms_defect).collect();
    Ok(KelvinConvergence {
        slope: fit_log2_slope(&dts, &errs),
        levels: out,
    })
}

/// `(∮_{c_t} v(t), ∮_{c_0} φ_t^*v(t))`, both by the midpoint rule.
pub fn change_of_variables(
    data: &KelvinData,
    chars: &Characteristics,
    lp: &Loop,
    step: usize,
    path: usize,
) -> Result<(f64, f64)> {
    let ct = advect_loop(lp, chars, step, path)?;
    let lhs = circulation_with(&ct, |x| data.evaluate(chars, step, path, x))?;
    let rhs = circulation_with(lp, |y| {
        let f = chars.forward(step, path, y)?;
        Ok(f.j.transpose().mul_vec(&data.evaluate(chars, step, path, f.point())?))
    })?;
    Ok((lhs, rhs))
}
