//! Analytic test-field library.
//!
//! Each catalog entry is a sum of scalar atoms per component (quadratic
//! polynomials, Gaussians, plane waves, periodic bumps), which gives exact
//! first and second derivatives. The machine-readable description shipped in
//! `catalog.json` mirrors [`CATALOG`].

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::{Backend, FieldJet, FieldKind, Jet, SmoothField, MAX_DIM};
use crate::error::{Error, Result};

/// Manifest row describing one catalog entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub kind: String,
    pub dims: Vec<usize>,
    pub params: String,
    pub count: String,
}

/// `(name, kind, dims, params, count)` for every entry.
pub const CATALOG: &[(&str, &str, &[usize], &str, &str)] = &[
    ("constant_scalar", "scalar", &[1, 2, 3], "c", "1"),
    ("constant_vector", "vector", &[1, 2, 3], "c_1..c_n", "n"),
    ("constant_form", "kform", &[1, 2, 3], "k, c_1..c_C", "1+C"),
    (
        "quadratic_scalar",
        "scalar",
        &[1, 2, 3],
        "c0, a_1..a_n, q_lm for l<=m in row-major order; value c0 + a.x + sum q_lm x_l x_m",
        "P = 1+n+n(n+1)/2",
    ),
    ("quadratic_vector", "vector", &[1, 2, 3], "one quadratic_scalar block per component", "n*P"),
    ("quadratic_form", "kform", &[1, 2, 3], "k, then one quadratic_scalar block per component", "1+C*P"),
    ("linear_vector", "vector", &[1, 2, 3], "A row-major; u = A x", "n*n"),
    ("rigid_rotation", "vector", &[2, 3], "none; u = (-x2, x1[, 0])", "0"),
    ("shear", "vector", &[2, 3], "a; u = (a x2, 0[, 0])", "1"),
    ("sine_shear", "vector", &[2, 3], "a; u = (a sin x2, 0[, 0])", "1"),
    ("gaussian_bump", "scalar", &[1, 2, 3], "sigma; exp(-|x|^2 / 2 sigma^2)", "1"),
    ("gaussian_vector", "vector", &[1, 2, 3], "sigma, a_1..a_n; component c = a_c exp(-|x|^2 / 2 sigma^2)", "1+n"),
    ("gaussian_form", "kform", &[1, 2, 3], "k, sigma, a_1..a_C; component c = a_c exp(-|x|^2 / 2 sigma^2)", "2+C"),
    ("fourier_scalar", "scalar", &[1, 2, 3], "amp, m_1..m_n, phase; amp sin(m.x + phase)", "n+2"),
    ("fourier_vector", "vector", &[1, 2, 3], "one fourier_scalar block per component", "n*(n+2)"),
    ("fourier_form", "kform", &[1, 2, 3], "k, then one fourier_scalar block per component", "1+C*(n+2)"),
    ("periodic_bump", "scalar", &[1, 2, 3], "sigma, c_1..c_n; exp(sum (cos(x_l - c_l) - 1) / sigma^2)", "1+n"),
    ("taylor_green", "vector", &[2], "a; u = a (sin x1 cos x2, -cos x1 sin x2)", "1"),
    ("abc_vector", "vector", &[3], "A, B, C; (A sin x3 + C cos x2, B sin x1 + A cos x3, C sin x2 + B cos x1)", "3"),
    ("abc_form", "kform", &[3], "A, B, C; the abc_vector components as a one-form", "3"),
];

/// Manifest of all catalog entries.
pub fn catalog_manifest() -> Vec<CatalogEntry> {
    CATALOG
        .iter()
        .map(|(name, kind, dims, params, count)| CatalogEntry {
            name: name.to_string(),
            kind: kind.to_string(),
            dims: dims.to_vec(),
            params: params.to_string(),
            count: count.to_string(),
        })
        .collect()
}

/// Shipped copy of the manifest.
pub const CATALOG_JSON: &str = include_str!("../../catalog.json");

#[derive(Clone, Debug)]
enum Atom {
    /// `c0 + a.x + x^T S x / 2` with symmetric `S`.
    Quadratic { c0: f64, lin: Vec<f64>, hess: Vec<f64> },
    Gaussian { amp: f64, sigma: f64 },
    Fourier { amp: f64, wave: Vec<f64>, phase: f64 },
    PeriodicBump { sigma: f64, center: Vec<f64> },
}

impl Atom {
    fn linear(n: usize, c0: f64, lin: Vec<f64>) -> Atom {
        Atom::Quadratic {
            c0,
            lin,
            hess: vec![0.0; n * n],
        }
    }

    fn quadratic(n: usize, block: &[f64]) -> Atom {
        let c0 = block[0];
        let lin = block[1..=n].to_vec();
        let mut hess = vec![0.0; n * n];
        let mut q = block[n + 1..].iter();
        for l in 0..n {
            for m in l..n {
                let c = *q.next().expect("quadratic block length checked by caller");
                if l == m {
                    hess[l * n + l] = 2.0 * c;
                } else {
                    hess[l * n + m] = c;
                    hess[m * n + l] = c;
                }
            }
        }
        Atom::Quadratic { c0, lin, hess }
    }

    /// Adds value, gradient and Hessian of the atom into the output slices.
    fn accumulate(&self, x: &[f64], order: u8, v: &mut f64, g: &mut [f64], h: &mut [f64]) {
        let n = x.len();
        match self {
            Atom::Quadratic { c0, lin, hess } => {
                let mut val = *c0;
                for l in 0..n {
                    let sx: f64 = (0..n).map(|m| hess[l * n + m] * x[m]).sum();
                    val += lin[l] * x[l] + 0.5 * x[l] * sx;
                    if order >= 1 {
                        g[l] += lin[l] + sx;
                    }
                }
                *v += val;
                if order >= 2 {
                    for (o, s) in h.iter_mut().zip(hess) {
                        *o += s;
                    }
                }
            }
            Atom::Gaussian { amp, sigma } => {
                let s2 = sigma * sigma;
                let r2: f64 = x.iter().map(|a| a * a).sum();
                let val = amp * (-0.5 * r2 / s2).exp();
                *v += val;
                if order >= 1 {
                    for l in 0..n {
                        g[l] += -val * x[l] / s2;
                    }
                }
                if order >= 2 {
                    for l in 0..n {
                        for m in 0..n {
                            let delta = if l == m { 1.0 / s2 } else { 0.0 };
                            h[l * n + m] += val * (x[l] * x[m] / (s2 * s2) - delta);
                        }
                    }
                }
            }
            Atom::Fourier { amp, wave, phase } => {
                let theta: f64 = phase + wave.iter().zip(x).map(|(m, a)| m * a).sum::<f64>();
                let (s, c) = theta.sin_cos();
                *v += amp * s;
                if order >= 1 {
                    for l in 0..n {
                        g[l] += amp * c * wave[l];
                    }
                }
                if order >= 2 {
                    for l in 0..n {
                        for m in 0..n {
                            h[l * n + m] -= amp * s * wave[l] * wave[m];
                        }
                    }
                }
            }
            Atom::PeriodicBump { sigma, center } => {
                let s2 = sigma * sigma;
                let e: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(a, c)| ((a - c).cos() - 1.0) / s2)
                    .sum();
                let val = e.exp();
                *v += val;
                let de: Vec<f64> = x.iter().zip(center).map(|(a, c)| -(a - c).sin() / s2).collect();
                if order >= 1 {
                    for l in 0..n {
                        g[l] += val * de[l];
                    }
                }
                if order >= 2 {
                    for l in 0..n {
                        for m in 0..n {
                            let diag = if l == m {
                                -(x[l] - center[l]).cos() / s2
                            } else {
                                0.0
                            };
                            h[l * n + m] += val * (de[l] * de[m] + diag);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
struct ComponentField {
    name: &'static str,
    kind: FieldKind,
    n: usize,
    comps: Vec<Vec<Atom>>,
}

impl SmoothField for ComponentField {
    fn kind(&self) -> FieldKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn jet(&self, _t: f64, x: &[f64], order: u8) -> Result<Jet> {
        let n = self.n;
        let mut jet = Jet::zeros(n, self.comps.len(), order);
        for (c, atoms) in self.comps.iter().enumerate() {
            let mut v = 0.0;
            let mut g = [0.0; MAX_DIM];
            let mut h = [0.0; MAX_DIM * MAX_DIM];
            for atom in atoms {
                atom.accumulate(x, order, &mut v, &mut g[..n], &mut h[..n * n]);
            }
            jet.value[c] = v;
            if order >= 1 {
                jet.d1[c * n..(c + 1) * n].copy_from_slice(&g[..n]);
            }
            if order >= 2 {
                jet.d2[c * n * n..(c + 1) * n * n].copy_from_slice(&h[..n * n]);
            }
        }
        let _ = self.name;
        Ok(jet)
    }
}

fn expect_count(name: &str, params: &[f64], expected: usize) -> Result<()> {
    if params.len() != expected {
        return Err(Error::ParamCount {
            name: name.to_string(),
            expected,
            got: params.len(),
        });
    }
    Ok(())
}

fn form_degree(name: &str, params: &[f64], n: usize) -> Result<usize> {
    let k = *params.first().ok_or_else(|| Error::ParamCount {
        name: name.to_string(),
        expected: 1,
        got: 0,
    })?;
    if k < 0.0 || k.fract() != 0.0 || k as usize > n {
        return Err(Error::Invalid(format!(
            "`{name}`: degree {k} is not an integer in 0..={n}"
        )));
    }
    Ok(k as usize)
}

fn quad_block(n: usize) -> usize {
    1 + n + n * (n + 1) / 2
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// Builds an analytic catalog field.
///
/// ```
/// use kiw_core::fields::catalog_field;
/// let u = catalog_field("rigid_rotation", &[], 2).unwrap();
/// assert_eq!(u.eval(0.0, &[1.0, 2.0]).unwrap(), vec![-2.0, 1.0]);
/// ```
pub fn catalog_field(name: &str, params: &[f64], n: usize) -> Result<FieldJet> {
    let entry = CATALOG
        .iter()
        .find(|e| e.0 == name)
        .ok_or_else(|| Error::UnknownField(name.to_string()))?;
    if !entry.2.contains(&n) {
        return Err(Error::UnsupportedDimension {
            name: name.to_string(),
            n,
        });
    }
    let static_name = entry.0;
    let (kind, comps): (FieldKind, Vec<Vec<Atom>>) = match name {
        "constant_scalar" => {
            expect_count(name, params, 1)?;
            (FieldKind::Scalar, vec![vec![Atom::linear(n, params[0], vec![0.0; n])]])
        }
        "constant_vector" => {
            expect_count(name, params, n)?;
            (
                FieldKind::Vector,
                params.iter().map(|&c| vec![Atom::linear(n, c, vec![0.0; n])]).collect(),
            )
        }
        "constant_form" => {
            let k = form_degree(name, params, n)?;
            let cc = FieldKind::KForm(k).components(n);
            expect_count(name, params, 1 + cc)?;
            (
                FieldKind::KForm(k),
                params[1..].iter().map(|&c| vec![Atom::linear(n, c, vec![0.0; n])]).collect(),
            )
        }
        "quadratic_scalar" => {
            expect_count(name, params, quad_block(n))?;
            (FieldKind::Scalar, vec![vec![Atom::quadratic(n, params)]])
        }
        "quadratic_vector" => {
            let p = quad_block(n);
            expect_count(name, params, n * p)?;
            (
                FieldKind::Vector,
                params.chunks(p).map(|b| vec![Atom::quadratic(n, b)]).collect(),
            )
        }
        "quadratic_form" => {
            let k = form_degree(name, params, n)?;
            let cc = FieldKind::KForm(k).components(n);
            let p = quad_block(n);
            expect_count(name, params, 1 + cc * p)?;
            (
                FieldKind::KForm(k),
                params[1..].chunks(p).map(|b| vec![Atom::quadratic(n, b)]).collect(),
            )
        }
        "linear_vector" => {
            expect_count(name, params, n * n)?;
            (
                FieldKind::Vector,
                params.chunks(n).map(|row| vec![Atom::linear(n, 0.0, row.to_vec())]).collect(),
            )
        }
        "rigid_rotation" => {
            expect_count(name, params, 0)?;
            let mut comps = vec![
                vec![Atom::linear(n, 0.0, unit(n, 1).iter().map(|v| -v).collect())],
                vec![Atom::linear(n, 0.0, unit(n, 0))],
            ];
            if n == 3 {
                comps.push(vec![Atom::linear(n, 0.0, vec![0.0; n])]);
            }
            (FieldKind::Vector, comps)
        }
        "shear" | "sine_shear" => {
            expect_count(name, params, 1)?;
            let a = params[0];
            let first = if name == "shear" {
                Atom::linear(n, 0.0, unit(n, 1).iter().map(|v| a * v).collect())
            } else {
                Atom::Fourier {
                    amp: a,
                    wave: unit(n, 1),
                    phase: 0.0,
                }
            };
            let mut comps = vec![vec![first]];
            for _ in 1..n {
                comps.push(vec![Atom::linear(n, 0.0, vec![0.0; n])]);
            }
            (FieldKind::Vector, comps)
        }
        "gaussian_bump" => {
            expect_count(name, params, 1)?;
            positive(name, params[0])?;
            (
                FieldKind::Scalar,
                vec![vec![Atom::Gaussian {
                    amp: 1.0,
                    sigma: params[0],
                }]],
            )
        }
        "gaussian_vector" => {
            expect_count(name, params, 1 + n)?;
            positive(name, params[0])?;
            (
                FieldKind::Vector,
                params[1..]
                    .iter()
                    .map(|&a| vec![Atom::Gaussian { amp: a, sigma: params[0] }])
                    .collect(),
            )
        }
        "gaussian_form" => {
            let k = form_degree(name, params, n)?;
            let cc = FieldKind::KForm(k).components(n);
            expect_count(name, params, 2 + cc)?;
            positive(name, params[1])?;
            (
                FieldKind::KForm(k),
                params[2..]
                    .iter()
                    .map(|&a| vec![Atom::Gaussian { amp: a, sigma: params[1] }])
                    .collect(),
            )
        }
        "fourier_scalar" => {
            expect_count(name, params, n + 2)?;
            (FieldKind::Scalar, vec![vec![fourier(n, params)]])
        }
        "fourier_vector" => {
            expect_count(name, params, n * (n + 2))?;
            (
                FieldKind::Vector,
                params.chunks(n + 2).map(|b| vec![fourier(n, b)]).collect(),
            )
        }
        "fourier_form" => {
            let k = form_degree(name, params, n)?;
            let cc = FieldKind::KForm(k).components(n);
            expect_count(name, params, 1 + cc * (n + 2))?;
            (
                FieldKind::KForm(k),
                params[1..].chunks(n + 2).map(|b| vec![fourier(n, b)]).collect(),
            )
        }
        "periodic_bump" => {
            expect_count(name, params, 1 + n)?;
            positive(name, params[0])?;
            (
                FieldKind::Scalar,
                vec![vec![Atom::PeriodicBump {
                    sigma: params[0],
                    center: params[1..].to_vec(),
                }]],
            )
        }
        "taylor_green" => {
            expect_count(name, params, 1)?;
            let a = 0.5 * params[0];
            let wave = |s: f64| vec![1.0, s];
            (
                FieldKind::Vector,
                vec![
                    vec![
                        Atom::Fourier { amp: a, wave: wave(1.0), phase: 0.0 },
                        Atom::Fourier { amp: a, wave: wave(-1.0), phase: 0.0 },
                    ],
                    vec![
                        Atom::Fourier { amp: -a, wave: wave(1.0), phase: 0.0 },
                        Atom::Fourier { amp: a, wave: wave(-1.0), phase: 0.0 },
                    ],
                ],
            )
        }
        "abc_vector" | "abc_form" => {
            expect_count(name, params, 3)?;
            let (a, b, c) = (params[0], params[1], params[2]);
            let sin = |amp: f64, axis: usize| Atom::Fourier { amp, wave: unit(3, axis), phase: 0.0 };
            let cos = |amp: f64, axis: usize| Atom::Fourier {
                amp,
                wave: unit(3, axis),
                phase: FRAC_PI_2,
            };
            let kind = if name == "abc_vector" {
                FieldKind::Vector
            } else {
                FieldKind::KForm(1)
            };
            (
                kind,
                vec![
                    vec![sin(a, 2), cos(c, 1)],
                    vec![sin(b, 0), cos(a, 2)],
                    vec![sin(c, 1), cos(b, 0)],
                ],
            )
        }
        _ => unreachable!("catalog table and constructor out of sync for `{name}`"),
    };
    debug_assert_eq!(comps.len(), kind.components(n));
    Ok(FieldJet::new(
        ComponentField {
            name: static_name,
            kind,
            n,
            comps,
        },
        Backend::Analytic,
    ))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("`{name}`: width must be positive, got {v}")))
    }
}

fn fourier(n: usize, block: &[f64]) -> Atom {
    Atom::Fourier {
        amp: block[0],
        wave: block[1..=n].to_vec(),
        phase: block[n + 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_vector_has_zero_derivatives() {
        let u = catalog_field("constant_vector", &[1.0, 0.0], 2).unwrap();
        let jet = u.jet(0.0, &[0.4, -1.2], 2).unwrap();
        assert_eq!(jet.value, vec![1.0, 0.0]);
        assert!(jet.d1.iter().chain(&jet.d2).all(|&v| v == 0.0));
    }

    #[test]
    fn rigid_rotation_is_divergence_free() {
        let u = catalog_field("rigid_rotation", &[], 2).unwrap();
        for x in [[0.0, 0.0], [1.0, -3.0], [2.5, 0.1]] {
            let jet = u.jet(0.0, &x, 1).unwrap();
            assert_eq!(jet.d1(0, 0) + jet.d1(1, 1), 0.0);
            assert_eq!(jet.value, vec![-x[1], x[0]]);
        }
    }

    #[test]
    fn gaussian_peak() {
        let g = catalog_field("gaussian_bump", &[1.0], 2).unwrap();
        let jet = g.jet(0.0, &[0.0, 0.0], 1).unwrap();
        assert_eq!(jet.value, vec![1.0]);
        assert_eq!(jet.d1, vec![0.0, 0.0]);
    }

    #[test]
    fn abc_is_beltrami() {
        // curl u = u for the ABC field
        let u = catalog_field("abc_vector", &[1.0, 0.7, 0.4], 3).unwrap();
        let x = [0.3, 1.1, -2.0];
        let j = u.jet(0.0, &x, 1).unwrap();
        let curl = [
            j.d1(2, 1) - j.d1(1, 2),
            j.d1(0, 2) - j.d1(2, 0),
            j.d1(1, 0) - j.d1(0, 1),
        ];
        for i in 0..3 {
            assert!((curl[i] - j.value[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn quadratic_block_layout() {
        // x1^2 + 3 x1 x2 + 2 x2 - 1
        let f = catalog_field("quadratic_scalar", &[-1.0, 0.0, 2.0, 1.0, 3.0, 0.0], 2).unwrap();
        let jet = f.jet(0.0, &[2.0, 1.0], 2).unwrap();
        assert_eq!(jet.value[0], 4.0 + 6.0 + 2.0 - 1.0);
        assert_eq!(jet.d1, vec![4.0 + 3.0, 6.0 + 2.0]);
        assert_eq!(jet.d2, vec![2.0, 3.0, 3.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(catalog_field("nope", &[], 2), Err(Error::UnknownField(_))));
        assert!(matches!(
            catalog_field("constant_vector", &[1.0], 2),
            Err(Error::ParamCount { expected: 2, got: 1, .. })
        ));
        assert!(matches!(
            catalog_field("taylor_green", &[1.0], 3),
            Err(Error::UnsupportedDimension { .. })
        ));
        assert!(catalog_field("constant_form", &[2.5, 1.0], 2).is_err());
    }

    #[test]
    fn shipped_manifest_matches_table() {
        let shipped: Vec<CatalogEntry> = serde_json::from_str(CATALOG_JSON).unwrap();
        assert_eq!(shipped, catalog_manifest());
    }
}
