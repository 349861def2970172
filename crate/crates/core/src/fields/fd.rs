//! Central-difference jets for fields known only through point evaluation.

use std::fmt;

use super::{Backend, FieldJet, FieldKind, Jet, SmoothField};
use crate::error::{Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-4;

type EvalFn = dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + Send + Sync;

struct FdField {
    kind: FieldKind,
    n: usize,
    h: f64,
    eval: Box<EvalFn>,
}

impl fmt::Debug for FdField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FdField")
            .field("kind", &self.kind)
            .field("n", &self.n)
            .field("h", &self.h)
            .finish()
    }
}

impl FdField {
    fn value(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let v = (self.eval)(t, x)?;
        let expected = self.kind.components(self.n);
        if v.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "evaluator returned {} components, expected {expected}",
                v.len()
            )));
        }
        Ok(v)
    }
}

impl SmoothField for FdField {
    fn kind(&self) -> FieldKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn jet(&self, t: f64, x: &[f64], order: u8) -> Result<Jet> {
        let n = self.n;
        let h = self.h;
        let cc = self.kind.components(n);
        let mut jet = Jet::zeros(n, cc, order);
        jet.value = self.value(t, x)?;
        if order == 0 {
            return Ok(jet);
        }
        let mut y = x.to_vec();
        let shifted = |y: &mut Vec<f64>, moves: &[(usize, f64)]| -> Result<Vec<f64>> {
            for &(l, d) in moves {
                y[l] += d;
            }
            let v = self.value(t, y);
            y.copy_from_slice(x);
            v
        };
        for l in 0..n {
            let plus = shifted(&mut y, &[(l, h)])?;
            let minus = shifted(&mut y, &[(l, -h)])?;
            for c in 0..cc {
                jet.d1[c * n + l] = (plus[c] - minus[c]) / (2.0 * h);
                if order >= 2 {
                    jet.d2[(c * n + l) * n + l] =
                        (plus[c] - 2.0 * jet.value[c] + minus[c]) / (h * h);
                }
            }
        }
        if order >= 2 {
            for l in 0..n {
                for m in l + 1..n {
                    let pp = shifted(&mut y, &[(l, h), (m, h)])?;
                    let pm = shifted(&mut y, &[(l, h), (m, -h)])?;
                    let mp = shifted(&mut y, &[(l, -h), (m, h)])?;
                    let mm = shifted(&mut y, &[(l, -h), (m, -h)])?;
                    for c in 0..cc {
                        let v = (pp[c] - pm[c] - mp[c] + mm[c]) / (4.0 * h * h);
                        jet.d2[(c * n + l) * n + m] = v;
                        jet.d2[(c * n + m) * n + l] = v;
                    }
                }
            }
        }
        Ok(jet)
    }
}

/// Wraps a point evaluator as a field whose derivatives come from central
/// differences with step `h`.
pub fn fd_jet<F>(kind: FieldKind, n: usize, h: f64, eval: F) -> Result<FieldJet>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    Ok(FieldJet::new(
        FdField {
            kind,
            n,
            h,
            eval: Box::new(eval),
        },
        Backend::FiniteDifference { h },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::catalog_field;

    #[test]
    fn matches_analytic_derivatives() {
        let f = catalog_field("fourier_scalar", &[1.3, 1.0, 2.0, 0.4], 2).unwrap();
        let g = f.to_finite_difference(DEFAULT_FD_STEP).unwrap();
        let x = [0.2, -0.9];
        let a = f.jet(0.0, &x, 2).unwrap();
        let b = g.jet(0.0, &x, 2).unwrap();
        assert_eq!(a.value, b.value);
        for (p, q) in a.d1.iter().zip(&b.d1) {
            assert!((p - q).abs() < 1e-7);
        }
        for (p, q) in a.d2.iter().zip(&b.d2) {
            assert!((p - q).abs() < 1e-5);
        }
        assert_eq!(b.d2[1], b.d2[2]);
    }

    #[test]
    fn rejects_bad_step() {
        assert!(fd_jet(FieldKind::Scalar, 1, 0.0, |_, _| Ok(vec![0.0])).is_err());
    }
}
