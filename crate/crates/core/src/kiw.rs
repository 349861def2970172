//! Pathwise evaluation of both sides of the Kunita–Itô–Wentzell formula.
//!
//! The k-form semimartingale is `K(s, y) = K₀(y) + s G(y) + Σ_i I_i(s) Ĥ_i(y)`
//! where `I_i(s) = ∫ m_i dW^i` and `m_i(s) = 1 + λ_i N^i_s` (`λ_i = 0` gives a
//! constant diffusion). Because every constituent form is fixed in space, the
//! left side `φ_t^* K(t)` can be evaluated exactly along a sampled flow and
//! compared with the integrated right side.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exterior::{
    double_lie_derivative_jet, form_degree, lie_derivative_jet, multi_indices, pullback,
    KFormValue,
};
use crate::fields::{FieldJet, Jet};
use crate::flow::{check_exclusions, integrate_path, BrownianDriver, FlowModel, FlowPoint, PathFlow, Record};
use crate::report::real;
use crate::stats::{fit_log2_slope, summarize, SlopeFit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Ito,
    Stratonovich,
}

/// `m(s) = 1 + λ N_s` with `N` the K channel `channel`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub lambda: f64,
    pub channel: usize,
}

/// Diffusion form `H_i(s) = m_i(s) Ĥ_i` driven by K channel `W^channel`.
#[derive(Clone, Debug)]
pub struct Diffusion {
    pub form: FieldJet,
    pub channel: usize,
    pub modulation: Option<Modulation>,
}

#[derive(Clone, Debug)]
pub struct SemimartingaleForm {
    pub n: usize,
    pub k: usize,
    pub k0: FieldJet,
    pub drift: FieldJet,
    pub diffusions: Vec<Diffusion>,
    pub convention: Convention,
}

impl SemimartingaleForm {
    pub fn new(
        k0: FieldJet,
        drift: FieldJet,
        diffusions: Vec<Diffusion>,
        convention: Convention,
    ) -> Result<Self> {
        let n = k0.dim();
        let k = form_degree(k0.kind())?;
        for f in std::iter::once(&drift).chain(diffusions.iter().map(|d| &d.form)) {
            if f.dim() != n || form_degree(f.kind())? != k {
                return Err(Error::DimensionMismatch(
                    "K₀, G and all H_i must share degree and dimension".into(),
                ));
            }
        }
        let mut channels: Vec<usize> = diffusions.iter().map(|d| d.channel).collect();
        channels.sort_unstable();
        if channels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid("two diffusions bound to one channel".into()));
        }
        Ok(Self {
            n,
            k,
            k0,
            drift,
            diffusions,
            convention,
        })
    }

    /// Itô form of a Stratonovich semimartingale:
    /// `G' = G + ½ Σ_i λ_i χ(N^i = W^i) Ĥ_i`, same diffusions.
    pub fn to_ito(&self) -> Result<Self> {
        if self.convention == Convention::Ito {
            return Ok(self.clone());
        }
        let mut terms = vec![(1.0, self.drift.clone())];
        for d in &self.diffusions {
            if let Some(m) = d.modulation {
                if m.channel == d.channel {
                    terms.push((0.5 * m.lambda, d.form.clone()));
                }
            }
        }
        Ok(Self {
            drift: FieldJet::linear_combination(terms)?,
            convention: Convention::Ito,
            ..self.clone()
        })
    }

    /// `[K₀, G, Ĥ_1, ..]`.
    fn basis(&self) -> Vec<&FieldJet> {
        let mut b = vec![&self.k0, &self.drift];
        b.extend(self.diffusions.iter().map(|d| &d.form));
        b
    }

    fn check_driver(&self, driver: &BrownianDriver) -> Result<()> {
        let m = driver.spec.k_channels.len();
        for d in &self.diffusions {
            if d.channel >= m {
                return Err(Error::Channel(d.channel));
            }
            if let Some(md) = d.modulation {
                if md.channel >= m {
                    return Err(Error::Channel(md.channel));
                }
            }
        }
        Ok(())
    }
}

/// Scalar coefficient processes of one path on the grid.
#[derive(Clone, Debug)]
pub struct CoefficientPaths {
    pub times: Vec<f64>,
    /// `I_i(t_k)`.
    pub integrals: Vec<Vec<f64>>,
    /// `m_i(t_k)`.
    pub modulation: Vec<Vec<f64>>,
    /// `ΔW^i` over `[t_k, t_{k+1}]`.
    pub dw: Vec<Vec<f64>>,
}

impl CoefficientPaths {
    /// Weights of `[K₀, G, Ĥ_1, ..]` at grid step `k`.
    pub fn weights(&self, k: usize) -> Vec<f64> {
        let mut w = vec![1.0, self.times[k]];
        w.extend(self.integrals.iter().map(|i| i[k]));
        w
    }
}

pub fn coefficient_paths(
    sm: &SemimartingaleForm,
    driver: &BrownianDriver,
    path: usize,
) -> Result<CoefficientPaths> {
    sm.check_driver(driver)?;
    let l = driver.n_steps;
    let times = (0..=l).map(|k| driver.time(k)).collect();
    let mut integrals = Vec::new();
    let mut modulation = Vec::new();
    let mut dws = Vec::new();
    for d in &sm.diffusions {
        let dw: Vec<f64> = (0..l)
            .map(|s| driver.k_increment(path, d.channel, s))
            .collect::<Result<_>>()?;
        let m: Vec<f64> = match d.modulation {
            None => vec![1.0; l + 1],
            Some(md) => {
                let mut n = 0.0;
                let mut out = vec![1.0];
                for s in 0..l {
                    n += driver.k_increment(path, md.channel, s)?;
                    out.push(1.0 + md.lambda * n);
                }
                out
            }
        };
        let mut acc = 0.0;
        let mut integ = vec![0.0];
        for s in 0..l {
            let h = match sm.convention {
                Convention::Ito => m[s],
                Convention::Stratonovich => 0.5 * (m[s] + m[s + 1]),
            };
            acc += h * dw[s];
            integ.push(acc);
        }
        integrals.push(integ);
        modulation.push(m);
        dws.push(dw);
    }
    Ok(CoefficientPaths {
        times,
        integrals,
        modulation,
        dw: dws,
    })
}

/// `K(t_step, x)` on path `path`.
pub fn eval_k(
    sm: &SemimartingaleForm,
    driver: &BrownianDriver,
    path: usize,
    step: usize,
    x: &[f64],
) -> Result<KFormValue> {
    if step > driver.n_steps {
        return Err(Error::Grid(format!("step {step} beyond {} grid steps", driver.n_steps)));
    }
    let c = coefficient_paths(sm, driver, path)?;
    let w = c.weights(step);
    let mut out = KFormValue::zeros(sm.n, sm.k);
    for (wf, f) in w.iter().zip(sm.basis()) {
        out = out.add_scaled(*wf, &KFormValue::new(sm.n, sm.k, f.eval(driver.time(step), x)?)?)?;
    }
    Ok(out)
}

/// Test-vector tuples: every coordinate basis tuple `e_J`, then three seeded
/// random constant tuples with entries in `[-1, 1)`.
pub fn default_test_sets(n: usize, k: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut sets: Vec<Vec<Vec<f64>>> = multi_indices(n, k)
        .iter()
        .map(|idx| {
            idx.iter()
                .map(|&j| {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    e
                })
                .collect()
        })
        .collect();
    if k > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..3 {
            sets.push(
                (0..k)
                    .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
            );
        }
    }
    sets
}

/// Contracts a form with every test tuple.
pub fn contract_tests(v: &KFormValue, tests: &[Vec<Vec<f64>>]) -> Vec<f64> {
    tests
        .iter()
        .map(|set| {
            let refs: Vec<&[f64]> = set.iter().map(|v| v.as_slice()).collect();
            v.evaluate(&refs)
        })
        .collect()
}

/// Pulled-back constituent forms and their Lie derivatives at one grid point.
struct StepTerms {
    /// `φ^* F_f`.
    p: Vec<KFormValue>,
    /// `φ^* 𝓛_b F_f`.
    lb: Vec<KFormValue>,
    /// `φ^* 𝓛_{ξ_j} F_f`, indexed `[j][f]`.
    lx: Vec<Vec<KFormValue>>,
    /// `φ^* 𝓛_{ξ_j} 𝓛_{ξ_j} F_f`, indexed `[j][f]`.
    ll: Vec<Vec<KFormValue>>,
}

fn step_terms(
    sm: &SemimartingaleForm,
    model: &FlowModel,
    t: f64,
    pt: &FlowPoint,
    second: bool,
) -> Result<StepTerms> {
    let y = &pt.x;
    let order = if second { 2 } else { 1 };
    let fj: Vec<Jet> = sm
        .basis()
        .iter()
        .map(|f| f.jet(t, y, order))
        .collect::<Result<_>>()?;
    let bj = model.drift.jet(t, y, 1)?;
    let xj: Vec<Jet> = model
        .noise
        .iter()
        .map(|f| f.jet(t, y, order))
        .collect::<Result<_>>()?;
    let pull = |v: KFormValue| pullback(&pt.jac, &v);
    let p = fj
        .iter()
        .map(|j| pull(KFormValue::from_jet(j, sm.k)?))
        .collect::<Result<_>>()?;
    let lb = fj
        .iter()
        .map(|j| pull(lie_derivative_jet(&bj, j, sm.k)?))
        .collect::<Result<_>>()?;
    let lx = xj
        .iter()
        .map(|x| {
            fj.iter()
                .map(|j| pull(lie_derivative_jet(x, j, sm.k)?))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let ll = if second {
        xj.iter()
            .map(|x| {
                fj.iter()
                    .map(|j| pull(double_lie_derivative_jet(x, j, sm.k)?))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(StepTerms { p, lb, lx, ll })
}

fn combine(weights: &[f64], forms: &[KFormValue]) -> Vec<f64> {
    let mut out = vec![0.0; forms[0].comps.len()];
    for (w, f) in weights.iter().zip(forms) {
        for (o, c) in out.iter_mut().zip(&f.comps) {
            *o += w * c;
        }
    }
    out
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Left and right sides at every grid step for one seed of one path.
pub struct SideSeries {
    pub lhs: Vec<KFormValue>,
    pub rhs: Vec<KFormValue>,
}

/// Evaluates `φ_{t_k}^* K(t_k)` and the right side of the formula in the
/// convention of `sm` at every grid step.
///
/// Drift integrals use the trapezoid rule; Itô integrals take the left point
/// and Stratonovich integrals the average of the two endpoints. The cross
/// variation `d[W^i, B^j]` is the realized `ΔW^i ΔB^j` on identified channels
/// and zero otherwise.
pub fn side_series(
    sm: &SemimartingaleForm,
    model: &FlowModel,
    driver: &BrownianDriver,
    flow: &PathFlow,
    seed: usize,
) -> Result<SideSeries> {
    let l = driver.n_steps;
    if flow.steps.len() != l + 1 || flow.steps.iter().enumerate().any(|(i, &s)| i != s) {
        return Err(Error::Grid("KIW evaluation needs the flow at every grid step".into()));
    }
    if sm.n != model.dim() {
        return Err(Error::DimensionMismatch("semimartingale and flow dimensions differ".into()));
    }
    let path = flow.path;
    let coeffs = coefficient_paths(sm, driver, path)?;
    let ito = sm.convention == Convention::Ito;
    let n_noise = model.noise.len();
    let db: Vec<Vec<f64>> = (0..n_noise)
        .map(|j| (0..l).map(|s| driver.flow_increment(path, j, s)).collect())
        .collect::<Result<_>>()?;
    let identified: Vec<Vec<bool>> = sm
        .diffusions
        .iter()
        .map(|d| (0..n_noise).map(|j| driver.spec.identified(d.channel, j)).collect())
        .collect();

    let nc = KFormValue::zeros(sm.n, sm.k).comps.len();
    // drift integrand, diffusion integrands H_i, transport integrands per ξ_j
    let integrands = |s: usize, st: &StepTerms| -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let w = coeffs.weights(s);
        let mut drift = st.p[1].comps.clone();
        axpy(&mut drift, 1.0, &combine(&w, &st.lb));
        if ito {
            for j in 0..n_noise {
                axpy(&mut drift, 0.5, &combine(&w, &st.ll[j]));
            }
        }
        let h = (0..sm.diffusions.len())
            .map(|i| st.p[2 + i].comps.iter().map(|c| coeffs.modulation[i][s] * c).collect())
            .collect();
        let x = (0..n_noise).map(|j| combine(&w, &st.lx[j])).collect();
        (drift, h, x)
    };

    let mut lhs = Vec::with_capacity(l + 1);
    let mut rhs = Vec::with_capacity(l + 1);
    let mut acc = vec![0.0; nc];
    let mut prev: Option<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
    for s in 0..=l {
        let pt = &flow.states[s][seed];
        let st = step_terms(sm, model, coeffs.times[s], pt, ito)?;
        let w = coeffs.weights(s);
        lhs.push(KFormValue::new(sm.n, sm.k, combine(&w, &st.p))?);
        let (drift, h, x) = integrands(s, &st);
        // cross-variation integrands m_i φ^* 𝓛_{ξ_j} Ĥ_i, indexed i * N + j
        let cross: Vec<Vec<f64>> = (0..sm.diffusions.len())
            .flat_map(|i| {
                let st = &st;
                let coeffs = &coeffs;
                (0..n_noise).map(move |j| {
                    st.lx[j][2 + i].comps.iter().map(|c| coeffs.modulation[i][s] * c).collect()
                })
            })
            .collect();
        if let Some((pd, ph, px, pc)) = prev.take() {
            let k = s - 1;
            let dt = coeffs.times[s] - coeffs.times[k];
            axpy(&mut acc, 0.5 * dt, &pd);
            axpy(&mut acc, 0.5 * dt, &drift);
            for i in 0..sm.diffusions.len() {
                let dw = coeffs.dw[i][k];
                if ito {
                    axpy(&mut acc, dw, &ph[i]);
                } else {
                    axpy(&mut acc, 0.5 * dw, &ph[i]);
                    axpy(&mut acc, 0.5 * dw, &h[i]);
                }
            }
            for j in 0..n_noise {
                let b = db[j][k];
                if ito {
                    axpy(&mut acc, b, &px[j]);
                } else {
                    axpy(&mut acc, 0.5 * b, &px[j]);
                    axpy(&mut acc, 0.5 * b, &x[j]);
                }
            }
            if ito {
                for i in 0..sm.diffusions.len() {
                    for j in 0..n_noise {
                        if identified[i][j] {
                            axpy(&mut acc, coeffs.dw[i][k] * db[j][k], &pc[i * n_noise + j]);
                        }
                    }
                }
            }
        } else {
            acc = st.p[0].comps.clone();
        }
        rhs.push(KFormValue::new(sm.n, sm.k, acc.clone())?);
        prev = Some((drift, h, x, cross));
    }
    Ok(SideSeries { lhs, rhs })
}

#[allow(clippy::too_many_arguments)]
fn rhs_at(
    sm: &SemimartingaleForm,
    want: Convention,
    model: &FlowModel,
    driver: &BrownianDriver,
    flow: &PathFlow,
    seed: usize,
    tests: &[Vec<Vec<f64>>],
    step: usize,
) -> Result<Vec<f64>> {
    if sm.convention != want {
        return Err(Error::Invalid(format!(
            "semimartingale is given in {:?} form",
            sm.convention
        )));
    }
    if step > driver.n_steps {
        return Err(Error::Grid(format!("step {step} beyond the grid")));
    }
    let series = side_series(sm, model, driver, flow, seed)?;
    Ok(contract_tests(&series.rhs[step], tests))
}

/// Itô right side contracted with each test tuple at grid step `step`.
pub fn kiw_rhs_ito(
    sm: &SemimartingaleForm,
    model: &FlowModel,
    driver: &BrownianDriver,
    flow: &PathFlow,
    seed: usize,
    tests: &[Vec<Vec<f64>>],
    step: usize,
) -> Result<Vec<f64>> {
    rhs_at(sm, Convention::Ito, model, driver, flow, seed, tests, step)
}

/// Stratonovich right side contracted with each test tuple at grid step `step`.
pub fn kiw_rhs_stratonovich(
    sm: &SemimartingaleForm,
    model: &FlowModel,
    driver: &BrownianDriver,
    flow: &PathFlow,
    seed: usize,
    tests: &[Vec<Vec<f64>>],
    step: usize,
) -> Result<Vec<f64>> {
    rhs_at(sm, Convention::Stratonovich, model, driver, flow, seed, tests, step)
}

/// Grid steps where residuals are measured: `L/3`, `2L/3` and `L`, rounded.
pub fn checkpoints(n_steps: usize) -> Vec<usize> {
    let l = n_steps as f64;
    let mut c = vec![(l / 3.0).round() as usize, (2.0 * l / 3.0).round() as usize, n_steps];
    c.dedup();
    c
}

/// Statistics of one refinement level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KiwLevel {
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub n_excluded: usize,
    pub mean_abs_residual: f64,
    pub rms_residual: f64,
    pub max_abs_residual: f64,
    /// Per retained path: terminal residual per seed and test tuple.
    pub terminal_residuals: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KiwReport {
    /// `residual` (LHS − RHS) or `duality` (Stratonovich RHS − converted Itô RHS).
    pub mode: String,
    pub convention: Convention,
    pub n: usize,
    pub k: usize,
    pub n_test_sets: usize,
    pub seeds: Vec<Vec<f64>>,
    pub checkpoints_fraction: Vec<f64>,
    pub levels: Vec<KiwLevel>,
    pub slope: Option<SlopeFit>,
}

impl KiwReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["dt", "mean_abs_residual", "rms_residual", "n_excluded"])?;
        for l in &self.levels {
            out.write_record([
                real(l.dt),
                real(l.mean_abs_residual),
                real(l.rms_residual),
                l.n_excluded.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.levels.iter().fold(0.0, |m, l| m.max(l.max_abs_residual))
    }
}

/// What a level compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Residual,
    Duality,
}

fn run_levels(
    mode: Mode,
    sm: &SemimartingaleForm,
    model: &FlowModel,
    base: &BrownianDriver,
    seeds: &[Vec<f64>],
    tests: &[Vec<Vec<f64>>],
    levels: u32,
) -> Result<KiwReport> {
    if levels < 2 {
        return Err(Error::Invalid("at least two refinement levels are required".into()));
    }
    if mode == Mode::Duality && sm.convention != Convention::Stratonovich {
        return Err(Error::Invalid("duality runs need a Stratonovich semimartingale".into()));
    }
    let converted = sm.to_ito()?;
    let mut out = Vec::new();
    let mut driver = base.clone();
    for level in 0..levels {
        if level > 0 {
            driver = driver.refine();
        }
        let cps = checkpoints(driver.n_steps);
        let per_path: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..driver.n_paths)
            .into_par_iter()
            .map(|p| -> Result<Option<(Vec<f64>, Vec<f64>)>> {
                let Some(flow) = integrate_path(model, &driver, p, seeds, false, &Record::All)? else {
                    return Ok(None);
                };
                let mut all = Vec::new();
                let mut terminal = Vec::new();
                for s in 0..seeds.len() {
                    let diff: Vec<KFormValue> = match mode {
                        Mode::Residual => {
                            let series = side_series(sm, model, &driver, &flow, s)?;
                            cps.iter()
                                .map(|&c| series.lhs[c].add_scaled(-1.0, &series.rhs[c]))
                                .collect::<Result<_>>()?
                        }
                        Mode::Duality => {
                            let a = side_series(sm, model, &driver, &flow, s)?;
                            let b = side_series(&converted, model, &driver, &flow, s)?;
                            cps.iter()
                                .map(|&c| a.rhs[c].add_scaled(-1.0, &b.rhs[c]))
                                .collect::<Result<_>>()?
                        }
                    };
                    for (ci, d) in diff.iter().enumerate() {
                        let r = contract_tests(d, tests);
                        if ci + 1 == diff.len() {
                            terminal.extend(&r);
                        }
                        all.extend(r);
                    }
                }
                Ok(Some((all, terminal)))
            })
            .collect::<Result<_>>()?;
        let n_excluded = per_path.iter().filter(|p| p.is_none()).count();
        check_exclusions(n_excluded, driver.n_paths)?;
        let all: Vec<f64> = per_path.iter().flatten().flat_map(|p| p.0.iter().copied()).collect();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(vec![driver.dt()]));
        }
        let (mean_abs, rms, max) = summarize(&all);
        out.push(KiwLevel {
            dt: driver.dt(),
            n_steps: driver.n_steps,
            n_paths: driver.n_paths,
            n_excluded,
            mean_abs_residual: mean_abs,
            rms_residual: rms,
            max_abs_residual: max,
            terminal_residuals: per_path.into_iter().flatten().map(|p| p.1).collect(),
        });
    }
    let dts: Vec<f64> = out.iter().map(|l| l.dt).collect();
    let rms: Vec<f64> = out.iter().map(|l| l.rms_residual).collect();
    Ok(KiwReport {
        mode: match mode {
            Mode::Residual => "residual",
            Mode::Duality => "duality",
        }
        .into(),
        convention: sm.convention,
        n: sm.n,
        k: sm.k,
        n_test_sets: tests.len(),
        seeds: seeds.to_vec(),
        checkpoints_fraction: vec![1.0 / 3.0, 2.0 / 3.0, 1.0],
        levels: out,
        slope: fit_log2_slope(&dts, &rms),
    })
}

/// Residual `⟨φ_t^*K(t) − RHS, tests⟩` over `levels` coupled refinements of `base`.
pub fn kiw_residual(
    sm: &SemimartingaleForm,
    model: &FlowModel,
    base: &BrownianDriver,
    seeds: &[Vec<f64>],
    tests: &[Vec<Vec<f64>>],
    levels: u32,
) -> Result<KiwReport> {
    run_levels(Mode::Residual, sm, model, base, seeds, tests, levels)
}

/// Difference between the Stratonovich right side of `sm` and the Itô right
/// side of its converted form, over coupled refinements.
pub fn kiw_duality(
    sm: &SemimartingaleForm,
    model: &FlowModel,
    base: &BrownianDriver,
    seeds: &[Vec<f64>],
    tests: &[Vec<Vec<f64>>],
    levels: u32,
) -> Result<KiwReport> {
    run_levels(Mode::Duality, sm, model, base, seeds, tests, levels)
}
