//! Smooth spatial fields that report values and derivatives up to order two.
//!
//! Every field is exposed through [`FieldJet`], a cheap-to-clone handle around a
//! [`SmoothField`] implementation. Analytic catalog entries live in [`catalog`];
//! [`fd`] wraps an arbitrary evaluation closure with central differences.

pub mod catalog;
pub mod fd;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catalog::{catalog_field, catalog_manifest, CatalogEntry, CATALOG};
pub use fd::{fd_jet, DEFAULT_FD_STEP};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// What a field's component array represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Scalar,
    Vector,
    KForm(usize),
}

impl FieldKind {
    /// Number of stored components in dimension `n`.
    pub fn components(self, n: usize) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Vector => n,
            FieldKind::KForm(k) => binomial(n, k),
        }
    }

    /// Form degree; scalars are 0-forms, vectors have none.
    pub fn degree(self) -> Option<usize> {
        match self {
            FieldKind::Scalar => Some(0),
            FieldKind::Vector => None,
            FieldKind::KForm(k) => Some(k),
        }
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// A point value together with first and second partials of every component.
///
/// `d1[c * n + l]` is the partial of component `c` along axis `l`,
/// `d2[(c * n + l) * n + m]` the mixed second partial.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub n: usize,
    pub order: u8,
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl Jet {
    pub fn zeros(n: usize, components: usize, order: u8) -> Self {
        Self {
            n,
            order,
            value: vec![0.0; components],
            d1: if order >= 1 { vec![0.0; components * n] } else { Vec::new() },
            d2: if order >= 2 {
                vec![0.0; components * n * n]
            } else {
                Vec::new()
            },
        }
    }

    pub fn components(&self) -> usize {
        self.value.len()
    }

    #[inline]
    pub fn d1(&self, c: usize, l: usize) -> f64 {
        self.d1[c * self.n + l]
    }

    #[inline]
    pub fn d2(&self, c: usize, l: usize, m: usize) -> f64 {
        self.d2[(c * self.n + l) * self.n + m]
    }

    pub fn require(&self, order: u8) -> Result<()> {
        if self.order < order {
            Err(Error::MissingDerivatives(order))
        } else {
            Ok(())
        }
    }

    /// `self += a * other`, truncated to the lower of the two orders.
    pub fn axpy(&mut self, a: f64, other: &Jet) {
        let order = self.order.min(other.order);
        self.truncate(order);
        for (s, o) in self.value.iter_mut().zip(&other.value) {
            *s += a * o;
        }
        for (s, o) in self.d1.iter_mut().zip(&other.d1) {
            *s += a * o;
        }
        for (s, o) in self.d2.iter_mut().zip(&other.d2) {
            *s += a * o;
        }
    }

    pub fn scaled(mut self, a: f64) -> Self {
        self.value.iter_mut().for_each(|v| *v *= a);
        self.d1.iter_mut().for_each(|v| *v *= a);
        self.d2.iter_mut().for_each(|v| *v *= a);
        self
    }

    pub fn truncate(&mut self, order: u8) {
        if order < 2 {
            self.d2.clear();
        }
        if order < 1 {
            self.d1.clear();
        }
        self.order = self.order.min(order);
    }

    pub fn is_finite(&self) -> bool {
        self.value
            .iter()
            .chain(&self.d1)
            .chain(&self.d2)
            .all(|v| v.is_finite())
    }
}

/// A field that can be evaluated with derivatives at `(t, x)`.
///
/// Implementations must be pure: the same `(t, x, order)` always yields the
/// same bits.
pub trait SmoothField: Send + Sync + fmt::Debug {
    fn kind(&self) -> FieldKind;
    fn dim(&self) -> usize;
    fn max_order(&self) -> u8 {
        2
    }
    fn jet(&self, t: f64, x: &[f64], order: u8) -> Result<Jet>;
}

/// How a jet's derivatives are produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Analytic,
    FiniteDifference { h: f64 },
}

/// Shared handle to an immutable smooth field.
#[derive(Clone)]
pub struct FieldJet {
    inner: Arc<dyn SmoothField>,
    backend: Backend,
}

impl fmt::Debug for FieldJet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldJet")
            .field("field", &self.inner)
            .field("backend", &self.backend)
            .finish()
    }
}

impl FieldJet {
    pub fn new<F: SmoothField + 'static>(field: F, backend: Backend) -> Self {
        Self {
            inner: Arc::new(field),
            backend,
        }
    }

    pub fn kind(&self) -> FieldKind {
        self.inner.kind()
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn components(&self) -> usize {
        self.kind().components(self.dim())
    }

    pub fn max_order(&self) -> u8 {
        self.inner.max_order()
    }

    pub fn jet(&self, t: f64, x: &[f64], order: u8) -> Result<Jet> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, field lives in dimension {}",
                x.len(),
                self.dim()
            )));
        }
        if order > self.max_order() {
            return Err(Error::MissingDerivatives(order));
        }
        self.inner.jet(t, x, order)
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jet(t, x, 0)?.value)
    }

    pub fn d1(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jet(t, x, 1)?.d1)
    }

    pub fn d2(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jet(t, x, 2)?.d2)
    }

    /// Same field with derivatives recomputed by central differences of `eval`.
    pub fn to_finite_difference(&self, h: f64) -> Result<FieldJet> {
        let source = self.clone();
        fd_jet(self.kind(), self.dim(), h, move |t, x| source.eval(t, x))
    }

    /// The identically zero field of the given kind.
    pub fn zero(kind: FieldKind, n: usize) -> FieldJet {
        FieldJet::new(
            LinearCombination {
                kind,
                n,
                terms: Vec::new(),
            },
            Backend::Analytic,
        )
    }

    /// `Σ c_i F_i` over fields of identical kind and dimension.
    pub fn linear_combination(terms: Vec<(f64, FieldJet)>) -> Result<FieldJet> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Invalid("empty linear combination".into()))?;
        let (kind, n) = (first.1.kind(), first.1.dim());
        if terms.iter().any(|(_, f)| f.kind() != kind || f.dim() != n) {
            return Err(Error::DimensionMismatch(
                "linear combination of fields with different kinds".into(),
            ));
        }
        let backend = if terms
            .iter()
            .all(|(_, f)| f.backend() == Backend::Analytic)
        {
            Backend::Analytic
        } else {
            first.1.backend()
        };
        Ok(FieldJet::new(LinearCombination { kind, n, terms }, backend))
    }
}

#[derive(Debug)]
struct LinearCombination {
    kind: FieldKind,
    n: usize,
    terms: Vec<(f64, FieldJet)>,
}

impl SmoothField for LinearCombination {
    fn kind(&self) -> FieldKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn max_order(&self) -> u8 {
        self.terms.iter().map(|(_, f)| f.max_order()).min().unwrap_or(2)
    }

    fn jet(&self, t: f64, x: &[f64], order: u8) -> Result<Jet> {
        let mut out = Jet::zeros(self.n, self.kind.components(self.n), order);
        for (c, f) in &self.terms {
            out.axpy(*c, &f.jet(t, x, order)?);
        }
        Ok(out)
    }
}
