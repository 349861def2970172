//! Pathwise solutions of the homogeneous transport equation
//! `dK + 𝓛_b K dt + 𝓛_ξ K ∘ dW = 0` by characteristics, and the integral
//! diagnostics built on them.
//!
//! A solution at grid step `t` is the initial datum pushed forward by the
//! discrete flow: with `ψ = φ_t⁻¹`,
//! - scalar: `s₀(ψ(x))`
//! - k-form: `ψ^*K₀`
//! - density: `D₀(ψ(x)) det Dψ(x)`

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exterior::{
    exterior_derivative, pullback_linear, wedge, ExteriorDerivativeField,
    KFormValue,
};
use crate::fields::{fd_jet, FieldJet, FieldKind, DEFAULT_FD_STEP};
use crate::flow::{backward_point, forward_point, inverse_point, BrownianDriver, FlowModel, FlowState};
use crate::linalg::Mat;
use crate::report::real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvectedKind {
    Scalar,
    KForm(usize),
    Density,
    MagneticPotential,
}

/// How `φ_t⁻¹(x)` is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseRoute {
    /// Integrate the flow backward from `x` on the same Brownian path. The
    /// result is a smooth diffeomorphism close to, but not exactly, the
    /// inverse of the forward scheme.
    #[default]
    Backward,
    /// Newton-invert the discrete forward map to roundoff.
    ExactInverse,
}

/// `ψ(x)` and `Dψ(x)` for `ψ = φ_t⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseSample {
    pub y: Vec<f64>,
    pub dpsi: Mat,
}

/// A flow model on one Brownian driver, queried pointwise.
#[derive(Clone, Debug)]
pub struct Characteristics {
    pub model: FlowModel,
    pub driver: Arc<BrownianDriver>,
    pub route: InverseRoute,
}

impl Characteristics {
    pub fn new(model: FlowModel, driver: Arc<BrownianDriver>, route: InverseRoute) -> Self {
        Self { model, driver, route }
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn time(&self, step: usize) -> f64 {
        self.driver.time(step)
    }

    pub fn forward(&self, step: usize, path: usize, x: &[f64]) -> Result<FlowState> {
        forward_point(&self.model, &self.driver, path, x, step)
    }

    pub fn inverse(&self, step: usize, path: usize, x: &[f64]) -> Result<InverseSample> {
        if step == 0 {
            return Ok(InverseSample {
                y: x.to_vec(),
                dpsi: Mat::identity(x.len()),
            });
        }
        match self.route {
            InverseRoute::Backward => {
                let s = backward_point(&self.model, &self.driver, path, x, step)?;
                Ok(InverseSample {
                    y: s.point().to_vec(),
                    dpsi: s.j,
                })
            }
            InverseRoute::ExactInverse => {
                let (y, f) = inverse_point(&self.model, &self.driver, path, x, step)?;
                let dpsi = f.j.inverse().ok_or(Error::SingularJacobian(f.j.det()))?;
                Ok(InverseSample { y, dpsi })
            }
        }
    }

    /// Fails unless drift and noise fields are `2π`-periodic in every axis.
    pub fn check_periodic(&self) -> Result<()> {
        check_periodic("drift", &self.model.drift)?;
        for (j, xi) in self.model.noise.iter().enumerate() {
            check_periodic(&format!("noise {j}"), xi)?;
        }
        Ok(())
    }
}

/// Compares a field with its translates by `2π e_l` at a few fixed points.
pub fn check_periodic(name: &str, f: &FieldJet) -> Result<()> {
    let n = f.dim();
    let probes = [0.3, 1.7, 4.1, 5.9];
    for p in 0..probes.len() {
        let x: Vec<f64> = (0..n).map(|l| probes[(p + l) % probes.len()]).collect();
        let v = f.eval(0.0, &x)?;
        for l in 0..n {
            let mut xs = x.clone();
            xs[l] += 2.0 * PI;
            let w = f.eval(0.0, &xs)?;
            let scale = v.iter().fold(1.0f64, |m, a| m.max(a.abs()));
            if v.iter().zip(&w).any(|(a, b)| (a - b).abs() > 1e-9 * scale) {
                return Err(Error::NotPeriodic(format!("{name} changes under x{} -> x{} + 2π", l + 1, l + 1)));
            }
        }
    }
    Ok(())
}

/// Initial datum transported by a flow.
#[derive(Clone, Debug)]
pub struct AdvectedField {
    pub kind: AdvectedKind,
    pub initial: FieldJet,
    pub chars: Arc<Characteristics>,
}

/// Builds the transported field. Densities take a scalar or top-form
/// initial coefficient; magnetic potentials are 1-forms in n = 2 or 3.
pub fn advect(kind: AdvectedKind, initial: FieldJet, chars: Arc<Characteristics>) -> Result<AdvectedField> {
    let n = initial.dim();
    if n != chars.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial field in dimension {n}, flow in dimension {}",
            chars.dim()
        )));
    }
    let ok = match kind {
        AdvectedKind::Scalar => initial.kind() == FieldKind::Scalar,
        AdvectedKind::KForm(k) => initial.kind() == FieldKind::KForm(k),
        AdvectedKind::Density => matches!(initial.kind(), FieldKind::Scalar) || initial.kind() == FieldKind::KForm(n),
        AdvectedKind::MagneticPotential => initial.kind() == FieldKind::KForm(1) && (n == 2 || n == 3),
    };
    if !ok {
        return Err(Error::Unsupported(format!(
            "cannot advect a {:?} field in dimension {n} as {kind:?}",
            initial.kind()
        )));
    }
    Ok(AdvectedField { kind, initial, chars })
}

impl AdvectedField {
    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    /// Kind of the values returned by [`AdvectedField::evaluate`].
    pub fn value_kind(&self) -> FieldKind {
        match self.kind {
            AdvectedKind::Scalar => FieldKind::Scalar,
            AdvectedKind::KForm(k) => FieldKind::KForm(k),
            AdvectedKind::Density => FieldKind::KForm(self.dim()),
            AdvectedKind::MagneticPotential => FieldKind::KForm(1),
        }
    }

    fn form_degree(&self) -> usize {
        match self.kind {
            AdvectedKind::KForm(k) => k,
            _ => 1,
        }
    }

    /// Value at `x` given the inverse characteristic through `x`.
    pub fn value_from(&self, inv: &InverseSample) -> Result<Vec<f64>> {
        let v0 = self.initial.eval(0.0, &inv.y)?;
        match self.kind {
            AdvectedKind::Scalar => Ok(v0),
            AdvectedKind::Density => Ok(vec![v0[0] * inv.dpsi.det()]),
            AdvectedKind::KForm(_) | AdvectedKind::MagneticPotential => {
                let k0 = KFormValue::new(self.dim(), self.form_degree(), v0)?;
                Ok(pullback_linear(&inv.dpsi, &k0)?.comps)
            }
        }
    }

    /// Solution at grid step `step` on `path`.
    pub fn evaluate(&self, step: usize, path: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.value_from(&self.chars.inverse(step, path, x)?)
    }

    /// The solution at one `(step, path)` as a field with finite-difference
    /// derivatives.
    pub fn snapshot(&self, step: usize, path: usize) -> Result<FieldJet> {
        let me = self.clone();
        fd_jet(self.value_kind(), self.dim(), DEFAULT_FD_STEP, move |_, x| me.evaluate(step, path, x))
    }

    /// Relative mismatch between `φ_t^*K(t)` and `K₀` at the seed `x0`.
    pub fn pullback_identity_error(&self, step: usize, path: usize, x0: &[f64]) -> Result<f64> {
        let f = self.chars.forward(step, path, x0)?;
        let kt = self.evaluate(step, path, f.point())?;
        let back = match self.kind {
            AdvectedKind::Scalar => kt,
            AdvectedKind::Density => vec![kt[0] * f.j.det()],
            AdvectedKind::KForm(_) | AdvectedKind::MagneticPotential => {
                let v = KFormValue::new(self.dim(), self.form_degree(), kt)?;
                pullback_linear(&f.j, &v)?.comps
            }
        };
        let k0 = self.initial.eval(0.0, x0)?;
        Ok(relative_diff(&back, &k0))
    }

    pub fn check_periodic(&self) -> Result<()> {
        check_periodic("initial field", &self.initial)?;
        self.chars.check_periodic()
    }
}

fn relative_diff(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Advected magnetic potential `A(t)` with `B(t) = dA(t)`.
#[derive(Clone, Debug)]
pub struct MagneticAdvection {
    pub potential: AdvectedField,
    initial_b: FieldJet,
}

pub fn advect_magnetic(a0: FieldJet, chars: Arc<Characteristics>) -> Result<MagneticAdvection> {
    let potential = advect(AdvectedKind::MagneticPotential, a0.clone(), chars)?;
    Ok(MagneticAdvection {
        potential,
        initial_b: ExteriorDerivativeField::new(a0)?,
    })
}

impl MagneticAdvection {
    /// `B(t) = dA(t)` with derivatives of the reconstructed potential taken by
    /// central differences.
    pub fn field(&self, step: usize, path: usize) -> Result<FieldJet> {
        ExteriorDerivativeField::new(self.potential.snapshot(step, path)?)
    }

    /// `B(t) = ψ^*B₀` evaluated without differencing.
    pub fn field_exact(&self, step: usize, path: usize, x: &[f64]) -> Result<KFormValue> {
        let inv = self.potential.chars.inverse(step, path, x)?;
        self.field_from(&inv)
    }

    fn field_from(&self, inv: &InverseSample) -> Result<KFormValue> {
        let n = self.potential.dim();
        let b0 = KFormValue::new(n, 2, self.initial_b.eval(0.0, &inv.y)?)?;
        pullback_linear(&inv.dpsi, &b0)
    }

    /// `max |d B(t)(x)|` with `B` from [`MagneticAdvection::field`].
    pub fn closedness_defect(&self, step: usize, path: usize, x: &[f64]) -> Result<f64> {
        let b = self.field(step, path)?;
        Ok(exterior_derivative(&b, 0.0, x)?.norm_inf())
    }
}

/// Uniform periodic trapezoid rule on `[0, 2π)^n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub n: usize,
    pub nodes_per_axis: usize,
}

pub const DEFAULT_NODES_PER_AXIS: usize = 64;

impl QuadratureGrid {
    pub fn new(n: usize, nodes_per_axis: usize) -> Result<Self> {
        if !(1..=3).contains(&n) || nodes_per_axis == 0 {
            return Err(Error::Invalid(format!(
                "quadrature grid needs 1 <= n <= 3 and at least one node, got n = {n}, N = {nodes_per_axis}"
            )));
        }
        Ok(Self { n, nodes_per_axis })
    }

    pub fn len(&self) -> usize {
        self.nodes_per_axis.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight(&self) -> f64 {
        (2.0 * PI / self.nodes_per_axis as f64).powi(self.n as i32)
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        let h = 2.0 * PI / self.nodes_per_axis as f64;
        let mut rest = i;
        (0..self.n)
            .map(|_| {
                let c = rest % self.nodes_per_axis;
                rest /= self.nodes_per_axis;
                c as f64 * h
            })
            .collect()
    }

    /// `Σ w f(x_i)`; nodes are evaluated in parallel and summed in index order.
    pub fn integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let vals: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|i| f(&self.node(i)))
            .collect::<Result<_>>()?;
        Ok(vals.iter().sum::<f64>() * self.weight())
    }
}

/// `Φ` in the entropy functional `∫ D Φ(s)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyFunction {
    #[default]
    Identity,
    Square,
    Exp,
}

impl EntropyFunction {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            EntropyFunction::Identity => s,
            EntropyFunction::Square => s * s,
            EntropyFunction::Exp => s.exp(),
        }
    }
}

fn require_kind(f: &AdvectedField, kind: AdvectedKind, what: &str) -> Result<()> {
    if f.kind != kind {
        return Err(Error::Invalid(format!("{what} must be advected as {kind:?}, got {:?}", f.kind)));
    }
    Ok(())
}

/// `∫ D(t)` over the torus.
pub fn total_mass(density: &AdvectedField, grid: &QuadratureGrid, step: usize, path: usize) -> Result<f64> {
    require_kind(density, AdvectedKind::Density, "density")?;
    density.check_periodic()?;
    grid.integrate(|x| Ok(density.evaluate(step, path, x)?[0]))
}

/// `∫ D(t) Φ(s(t))` over the torus.
pub fn entropy_integral(
    density: &AdvectedField,
    scalar: &AdvectedField,
    phi: EntropyFunction,
    grid: &QuadratureGrid,
    step: usize,
    path: usize,
) -> Result<f64> {
    require_kind(density, AdvectedKind::Density, "density")?;
    require_kind(scalar, AdvectedKind::Scalar, "entropy scalar")?;
    density.check_periodic()?;
    scalar.check_periodic()?;
    let shared = Arc::ptr_eq(&density.chars, &scalar.chars);
    grid.integrate(|x| {
        let inv = density.chars.inverse(step, path, x)?;
        let s = if shared {
            scalar.value_from(&inv)?
        } else {
            scalar.evaluate(step, path, x)?
        };
        Ok(density.value_from(&inv)?[0] * phi.apply(s[0]))
    })
}

/// `∫ A(t) ∧ dA(t)` over the 3-torus, with `dA(t) = ψ^*dA₀`. Equals the
/// `∫ B·curl⁻¹B` helicity when `B` has zero mean.
pub fn magnetic_helicity(mag: &MagneticAdvection, grid: &QuadratureGrid, step: usize, path: usize) -> Result<f64> {
    let a = &mag.potential;
    if a.dim() != 3 {
        return Err(Error::Unsupported(format!("helicity needs n = 3, got {}", a.dim())));
    }
    a.check_periodic()?;
    grid.integrate(|x| {
        let inv = a.chars.inverse(step, path, x)?;
        let av = KFormValue::new(3, 1, a.value_from(&inv)?)?;
        Ok(wedge(&av, &mag.field_from(&inv)?)?.comps[0])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    TotalMass,
    EntropyIntegral,
    MagneticHelicity,
}

impl Diagnostic {
    pub fn name(self) -> &'static str {
        match self {
            Diagnostic::TotalMass => "total_mass",
            Diagnostic::EntropyIntegral => "entropy_integral",
            Diagnostic::MagneticHelicity => "magnetic_helicity",
        }
    }
}

/// Advected fields a diagnostic may draw on.
#[derive(Clone, Debug, Default)]
pub struct DiagnosticFields {
    pub density: Option<AdvectedField>,
    pub scalar: Option<AdvectedField>,
    pub entropy: EntropyFunction,
    pub magnetic: Option<MagneticAdvection>,
}

fn missing(diag: Diagnostic, what: &str) -> Error {
    Error::Invalid(format!("{} needs a {what} field", diag.name()))
}

pub fn integral_diagnostic(
    diag: Diagnostic,
    fields: &DiagnosticFields,
    grid: &QuadratureGrid,
    step: usize,
    path: usize,
) -> Result<f64> {
    match diag {
        Diagnostic::TotalMass => {
            let d = fields.density.as_ref().ok_or_else(|| missing(diag, "density"))?;
            total_mass(d, grid, step, path)
        }
        Diagnostic::EntropyIntegral => {
            let d = fields.density.as_ref().ok_or_else(|| missing(diag, "density"))?;
            let s = fields.scalar.as_ref().ok_or_else(|| missing(diag, "scalar"))?;
            entropy_integral(d, s, fields.entropy, grid, step, path)
        }
        Diagnostic::MagneticHelicity => {
            let m = fields.magnetic.as_ref().ok_or_else(|| missing(diag, "magnetic potential"))?;
            magnetic_helicity(m, grid, step, path)
        }
    }
}

/// One row of a diagnostic time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub path: usize,
    pub name: String,
    pub value: f64,
}

pub fn write_diagnostics_csv<W: Write>(rows: &[DiagnosticRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "path", "name", "value"])?;
    for r in rows {
        out.write_record([real(r.t), r.path.to_string(), r.name.clone(), real(r.value)])?;
    }
    out.flush()?;
    Ok(())
}

/// Both sides of `⟨b ⋄ a, u⟩ = −∫ b · 𝓛_u a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingDefect {
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
}

/// Supported pairs, selected from the kinds of `a` and `b`:
/// - `a` scalar, `b` density: `b ⋄ a = −b ∇a`
/// - `a` density (top form), `b` scalar: `b ⋄ a = a ∇b`
/// - `a` 1-form, `b` vector density:
///   `(b ⋄ a)_i = −b^j ∂_i a_j + a_i div b + b^j ∂_j a_i`
pub fn diamond_pairing_defect(
    b: &FieldJet,
    a: &FieldJet,
    u: &FieldJet,
    grid: &QuadratureGrid,
) -> Result<PairingDefect> {
    let n = grid.n;
    for (name, f) in [("b", b), ("a", a), ("u", u)] {
        if f.dim() != n {
            return Err(Error::DimensionMismatch(format!("{name} lives in dimension {}, grid in {n}", f.dim())));
        }
        check_periodic(name, f)?;
    }
    if u.kind() != FieldKind::Vector {
        return Err(Error::Invalid("u must be a vector field".into()));
    }
    let density_b = b.kind() == FieldKind::Scalar || b.kind() == FieldKind::KForm(n);
    let case = match a.kind() {
        FieldKind::Scalar if density_b => 0,
        FieldKind::KForm(1) if b.kind() == FieldKind::Vector => 2,
        FieldKind::KForm(k) if k == n && b.kind() == FieldKind::Scalar => 1,
        other => {
            return Err(Error::Unsupported(format!(
                "no diamond formula for a of kind {other:?} paired with b of kind {:?}",
                b.kind()
            )))
        }
    };
    let sides = |x: &[f64]| -> Result<(f64, f64)> {
        let aj = a.jet(0.0, x, 1)?;
        let bj = b.jet(0.0, x, 1)?;
        let uj = u.jet(0.0, x, 1)?;
        let uv = &uj.value;
        let div = |j: &crate::fields::Jet| (0..n).map(|l| j.d1(l, l)).sum::<f64>();
        Ok(match case {
            0 => {
                let bv = bj.value[0];
                let lhs: f64 = (0..n).map(|l| -bv * aj.d1(0, l) * uv[l]).sum();
                let lie: f64 = (0..n).map(|l| uv[l] * aj.d1(0, l)).sum();
                (lhs, -bv * lie)
            }
            1 => {
                let av = aj.value[0];
                let lhs: f64 = (0..n).map(|l| av * bj.d1(0, l) * uv[l]).sum();
                let lie: f64 = (0..n).map(|l| aj.d1(0, l) * uv[l]).sum::<f64>() + av * div(&uj);
                (lhs, -bj.value[0] * lie)
            }
            _ => {
                let (av, bv) = (&aj.value, &bj.value);
                let divb = div(&bj);
                let mut lhs = 0.0;
                let mut rhs = 0.0;
                for i in 0..n {
                    let mut d = av[i] * divb;
                    for j in 0..n {
                        d += -bv[j] * aj.d1(j, i) + bv[j] * aj.d1(i, j);
                    }
                    lhs += d * uv[i];
                }
                for j in 0..n {
                    let mut lie = 0.0;
                    for i in 0..n {
                        lie += uv[i] * aj.d1(j, i) + av[i] * uj.d1(i, j);
                    }
                    rhs -= bv[j] * lie;
                }
                (lhs, rhs)
            }
        })
    };
    let pairs: Vec<(f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| sides(&grid.node(i)))
        .collect::<Result<_>>()?;
    let w = grid.weight();
    let lhs = pairs.iter().map(|p| p.0).sum::<f64>() * w;
    let rhs = pairs.iter().map(|p| p.1).sum::<f64>() * w;
    Ok(PairingDefect {
        lhs,
        rhs,
        defect: (lhs - rhs).abs(),
    })
}
