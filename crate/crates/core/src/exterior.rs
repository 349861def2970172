//! Pointwise exterior calculus on k-forms stored over increasing multi-indices.
//!
//! Indices are 0-based internally; `dx^1` in the docs is axis `0`.
//! A k-form `K` is evaluated on vectors by
//! `K(v_1, .., v_k) = Σ_I K_I det[v_a^{I_b}]`, which fixes every sign below.

use std::ops::Deref;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::fields::{binomial, Backend, FieldJet, FieldKind, Jet, SmoothField, MAX_DIM};
use crate::linalg::Mat;

/// Strictly increasing list of axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    len: usize,
    idx: [usize; MAX_DIM],
}

impl MultiIndex {
    pub fn new(indices: &[usize]) -> Result<Self> {
        if indices.len() > MAX_DIM || indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!(
                "multi-index {indices:?} is not strictly increasing"
            )));
        }
        let mut idx = [0; MAX_DIM];
        idx[..indices.len()].copy_from_slice(indices);
        Ok(Self {
            len: indices.len(),
            idx,
        })
    }

    /// 1-based rendering, as in `dx^1 ∧ dx^3`.
    pub fn one_based(&self) -> Vec<usize> {
        self.iter().map(|i| i + 1).collect()
    }
}

impl Deref for MultiIndex {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.idx[..self.len]
    }
}

type Tables = Vec<Vec<Vec<MultiIndex>>>;

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        (0..=MAX_DIM)
            .map(|n| {
                (0..=n)
                    .map(|k| {
                        (0u32..1 << n)
                            .filter(|mask| mask.count_ones() as usize == k)
                            .map(|mask| {
                                let v: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                                MultiIndex::new(&v).expect("bitmask indices are increasing")
                            })
                            .collect::<Vec<_>>()
                    })
                    .map(|mut v| {
                        v.sort_by(|a, b| a.deref().cmp(b.deref()));
                        v
                    })
                    .collect()
            })
            .collect()
    })
}

/// Increasing multi-indices of length `k` in `n` dimensions, lexicographic.
pub fn multi_indices(n: usize, k: usize) -> &'static [MultiIndex] {
    if n > MAX_DIM || k > n {
        return &[];
    }
    &tables()[n][k]
}

/// Storage slot of an increasing multi-index.
pub fn index_of(n: usize, idx: &[usize]) -> Option<usize> {
    multi_indices(n, idx.len())
        .iter()
        .position(|m| m.deref() == idx)
}

/// Sorts in place and returns the permutation sign, or 0 on a repeated index.
pub fn sort_with_sign(v: &mut [usize]) -> f64 {
    let mut sign = 1.0;
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            } else if v[j] == v[j + 1] {
                return 0.0;
            }
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        0.0
    } else {
        sign
    }
}

/// Components of a degree-`k` form at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct KFormValue {
    pub n: usize,
    pub k: usize,
    pub comps: Vec<f64>,
}

impl KFormValue {
    pub fn new(n: usize, k: usize, comps: Vec<f64>) -> Result<Self> {
        if n == 0 || n > MAX_DIM {
            return Err(Error::DimensionMismatch(format!("dimension {n} not in 1..={MAX_DIM}")));
        }
        if comps.len() != binomial(n, k) {
            return Err(Error::DimensionMismatch(format!(
                "a {k}-form in dimension {n} has {} components, got {}",
                binomial(n, k),
                comps.len()
            )));
        }
        Ok(Self { n, k, comps })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            comps: vec![0.0; binomial(n, k)],
        }
    }

    pub fn scalar(n: usize, v: f64) -> Self {
        Self { n, k: 0, comps: vec![v] }
    }

    /// `dx^{i_1} ∧ .. ∧ dx^{i_k}` for arbitrary (unsorted) axes.
    pub fn basis(n: usize, axes: &[usize]) -> Result<Self> {
        if axes.iter().any(|&a| a >= n) {
            return Err(Error::DimensionMismatch(format!("axes {axes:?} outside dimension {n}")));
        }
        let mut sorted = axes.to_vec();
        let sign = sort_with_sign(&mut sorted);
        let mut out = Self::zeros(n, axes.len());
        if sign != 0.0 {
            let c = index_of(n, &sorted).expect("sorted axes are a valid multi-index");
            out.comps[c] = sign;
        }
        Ok(out)
    }

    /// Coefficient on an arbitrary index list, with antisymmetric sign.
    pub fn component(&self, axes: &[usize]) -> f64 {
        let mut sorted = axes.to_vec();
        let sign = sort_with_sign(&mut sorted);
        if sign == 0.0 {
            return 0.0;
        }
        index_of(self.n, &sorted).map_or(0.0, |c| sign * self.comps[c])
    }

    /// Reads a form-valued jet's point values.
    pub fn from_jet(jet: &Jet, k: usize) -> Result<Self> {
        Self::new(jet.n, k, jet.value.clone())
    }

    /// Evaluates the form on `k` vectors.
    pub fn evaluate(&self, vecs: &[&[f64]]) -> f64 {
        contract(self.n, self.k, &self.comps, vecs)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            n: self.n,
            k: self.k,
            comps: self.comps.iter().map(|c| a * c).collect(),
        }
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: f64, other: &KFormValue) -> Result<Self> {
        same_shape(self, other)?;
        Ok(Self {
            n: self.n,
            k: self.k,
            comps: self.comps.iter().zip(&other.comps).map(|(x, y)| x + a * y).collect(),
        })
    }

    pub fn norm_inf(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn max_abs_diff(&self, other: &KFormValue) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.is_finite())
    }
}

fn same_shape(a: &KFormValue, b: &KFormValue) -> Result<()> {
    if a.n != b.n || a.k != b.k {
        return Err(Error::DimensionMismatch(format!(
            "forms of shape ({}, {}) and ({}, {})",
            a.n, a.k, b.n, b.k
        )));
    }
    Ok(())
}

fn det_small(k: usize, m: &[[f64; MAX_DIM]; MAX_DIM]) -> f64 {
    match k {
        0 => 1.0,
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
    }
}

/// `Σ_I K_I det[v_a^{I_b}]`: the form with components `comps` evaluated on `vecs`.
pub fn contract(n: usize, k: usize, comps: &[f64], vecs: &[&[f64]]) -> f64 {
    debug_assert_eq!(vecs.len(), k);
    if k == 0 {
        return comps[0];
    }
    let mut total = 0.0;
    let mut m = [[0.0; MAX_DIM]; MAX_DIM];
    for (c, idx) in multi_indices(n, k).iter().enumerate() {
        if comps[c] == 0.0 {
            continue;
        }
        for (a, v) in vecs.iter().enumerate() {
            for (b, &i) in idx.iter().enumerate() {
                m[a][b] = v[i];
            }
        }
        total += comps[c] * det_small(k, &m);
    }
    total
}

fn unit(i: usize) -> [f64; MAX_DIM] {
    let mut e = [0.0; MAX_DIM];
    e[i] = 1.0;
    e
}

/// Evaluates a form on the basis vectors of `idx`, with some slots replaced.
fn contract_replaced(
    n: usize,
    comps: &[f64],
    idx: &[usize],
    replace: &[(usize, &[f64; MAX_DIM])],
) -> f64 {
    let mut vecs: [[f64; MAX_DIM]; MAX_DIM] = [[0.0; MAX_DIM]; MAX_DIM];
    for (p, &j) in idx.iter().enumerate() {
        vecs[p] = unit(j);
    }
    for &(p, v) in replace {
        vecs[p] = *v;
    }
    let refs: Vec<&[f64]> = vecs[..idx.len()].iter().map(|v| &v[..n]).collect();
    contract(n, idx.len(), comps, &refs)
}

/// Degree of a form-valued field; vectors are rejected.
pub fn form_degree(kind: FieldKind) -> Result<usize> {
    kind.degree()
        .ok_or_else(|| Error::Degree("expected a scalar or k-form field, got a vector field".into()))
}

/// Field kind carrying a form of degree `k`.
pub fn form_kind(k: usize) -> FieldKind {
    if k == 0 {
        FieldKind::Scalar
    } else {
        FieldKind::KForm(k)
    }
}

fn require_vector(f: &FieldJet, n: usize) -> Result<()> {
    if f.kind() != FieldKind::Vector {
        return Err(Error::Degree("expected a vector field".into()));
    }
    if f.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "vector field in dimension {} paired with dimension {n}",
            f.dim()
        )));
    }
    Ok(())
}

/// `(out, a, b, sign)` entries of a bilinear product on component arrays.
#[derive(Clone, Debug)]
struct Bilinear {
    out_len: usize,
    terms: Vec<(usize, usize, usize, f64)>,
}

impl Bilinear {
    fn wedge(n: usize, j: usize, k: usize) -> Self {
        let mut terms = Vec::new();
        for (ia, a) in multi_indices(n, j).iter().enumerate() {
            for (ib, b) in multi_indices(n, k).iter().enumerate() {
                let mut cat: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
                let sign = sort_with_sign(&mut cat);
                if sign != 0.0 {
                    terms.push((index_of(n, &cat).expect("sorted"), ia, ib, sign));
                }
            }
        }
        Self {
            out_len: binomial(n, j + k),
            terms,
        }
    }

    /// `a` is a vector, `b` a `k`-form; output is `ι_a b`.
    fn interior(n: usize, k: usize) -> Self {
        let mut terms = Vec::new();
        for (o, idx) in multi_indices(n, k - 1).iter().enumerate() {
            for i in 0..n {
                let mut cat: Vec<usize> = std::iter::once(i).chain(idx.iter().copied()).collect();
                let sign = sort_with_sign(&mut cat);
                if sign != 0.0 {
                    terms.push((o, i, index_of(n, &cat).expect("sorted"), sign));
                }
            }
        }
        Self {
            out_len: binomial(n, k - 1),
            terms,
        }
    }

    fn apply(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_len];
        for &(o, ia, ib, s) in &self.terms {
            out[o] += s * a[ia] * b[ib];
        }
        out
    }

    fn jet(&self, a: &Jet, b: &Jet, order: u8) -> Jet {
        let n = a.n;
        let mut out = Jet::zeros(n, self.out_len, order);
        out.value = self.apply(&a.value, &b.value);
        for &(o, ia, ib, s) in &self.terms {
            let (av, bv) = (a.value[ia], b.value[ib]);
            if order >= 1 {
                for l in 0..n {
                    out.d1[o * n + l] += s * (a.d1(ia, l) * bv + av * b.d1(ib, l));
                }
            }
            if order >= 2 {
                for l in 0..n {
                    for m in 0..n {
                        out.d2[(o * n + l) * n + m] += s
                            * (a.d2(ia, l, m) * bv
                                + a.d1(ia, l) * b.d1(ib, m)
                                + a.d1(ia, m) * b.d1(ib, l)
                                + av * b.d2(ib, l, m));
                    }
                }
            }
        }
        out
    }
}

/// Graded-antisymmetric product, `dx^i ∧ dx^j = −dx^j ∧ dx^i`.
///
/// ```
/// use kiw_core::exterior::{wedge, KFormValue};
/// let a = KFormValue::basis(2, &[0]).unwrap();
/// let b = KFormValue::basis(2, &[1]).unwrap();
/// assert_eq!(wedge(&a, &b).unwrap().comps, vec![1.0]);
/// assert_eq!(wedge(&b, &a).unwrap().comps, vec![-1.0]);
/// ```
pub fn wedge(a: &KFormValue, b: &KFormValue) -> Result<KFormValue> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch(format!(
            "wedge of forms in dimensions {} and {}",
            a.n, b.n
        )));
    }
    if a.k + b.k > a.n {
        return Err(Error::Degree(format!(
            "wedge of degrees {} and {} overflows dimension {}",
            a.k, b.k, a.n
        )));
    }
    let table = Bilinear::wedge(a.n, a.k, b.k);
    Ok(KFormValue {
        n: a.n,
        k: a.k + b.k,
        comps: table.apply(&a.comps, &b.comps),
    })
}

/// `ι_X K`, contracting `X` into the first slot.
pub fn interior_product(x: &[f64], k: &KFormValue) -> Result<KFormValue> {
    if k.k == 0 {
        return Err(Error::Degree("interior product of a 0-form".into()));
    }
    if x.len() != k.n {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} against a form in dimension {}",
            x.len(),
            k.n
        )));
    }
    let table = Bilinear::interior(k.n, k.k);
    Ok(KFormValue {
        n: k.n,
        k: k.k - 1,
        comps: table.apply(x, &k.comps),
    })
}

/// `(out, input, axis, sign)` for `(dK)_J = Σ_a (−1)^a ∂_{J_a} K_{J \ J_a}`.
fn d_table(n: usize, k: usize) -> Vec<(usize, usize, usize, f64)> {
    let mut terms = Vec::new();
    for (o, idx) in multi_indices(n, k + 1).iter().enumerate() {
        for a in 0..idx.len() {
            let rest: Vec<usize> = idx
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(_, &i)| i)
                .collect();
            let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
            terms.push((o, index_of(n, &rest).expect("subset of increasing"), idx[a], sign));
        }
    }
    terms
}

/// Exterior derivative from a form jet with first derivatives.
///
/// A top-degree form yields the empty zero form of degree `n + 1`.
pub fn exterior_derivative_jet(jet: &Jet, k: usize) -> Result<KFormValue> {
    jet.require(1)?;
    let n = jet.n;
    let mut out = KFormValue {
        n,
        k: k + 1,
        comps: vec![0.0; binomial(n, k + 1)],
    };
    for (o, i, axis, s) in d_table(n, k) {
        out.comps[o] += s * jet.d1(i, axis);
    }
    Ok(out)
}

/// `dK` at `(t, x)`. Top-degree input gives the zero form of degree `n + 1`.
pub fn exterior_derivative(k: &FieldJet, t: f64, x: &[f64]) -> Result<KFormValue> {
    let deg = form_degree(k.kind())?;
    exterior_derivative_jet(&k.jet(t, x, 1)?, deg)
}

/// As [`exterior_derivative`] but rejects top-degree input.
pub fn exterior_derivative_strict(k: &FieldJet, t: f64, x: &[f64]) -> Result<KFormValue> {
    let deg = form_degree(k.kind())?;
    if deg >= k.dim() {
        return Err(Error::Degree(format!(
            "d of a {deg}-form in dimension {}",
            k.dim()
        )));
    }
    exterior_derivative(k, t, x)
}

/// Column `j` of the velocity gradient: `((Du) e_j)^i = ∂_j u^i`.
fn du_col(u: &Jet, j: usize) -> [f64; MAX_DIM] {
    let mut v = [0.0; MAX_DIM];
    for (i, vi) in v.iter_mut().enumerate().take(u.n) {
        *vi = u.d1(i, j);
    }
    v
}

/// `∂_l (Du) e_j`.
fn ddu_col(u: &Jet, j: usize, l: usize) -> [f64; MAX_DIM] {
    let mut v = [0.0; MAX_DIM];
    for (i, vi) in v.iter_mut().enumerate().take(u.n) {
        *vi = u.d2(i, j, l);
    }
    v
}

fn partial_comps(jet: &Jet, l: usize) -> Vec<f64> {
    (0..jet.components()).map(|c| jet.d1(c, l)).collect()
}

fn second_partial_comps(jet: &Jet, l: usize, m: usize) -> Vec<f64> {
    (0..jet.components()).map(|c| jet.d2(c, l, m)).collect()
}

/// `(𝓛_u K)_J = u^l ∂_l K_J + Σ_p K(e_{j_1}, .., (Du) e_{j_p}, .., e_{j_k})`.
pub fn lie_derivative_jet(u: &Jet, kj: &Jet, k: usize) -> Result<KFormValue> {
    u.require(1)?;
    kj.require(1)?;
    let n = u.n;
    let mut out = KFormValue::zeros(n, k);
    for (o, idx) in multi_indices(n, k).iter().enumerate() {
        let mut v: f64 = (0..n).map(|l| u.value[l] * kj.d1(o, l)).sum();
        for (p, &j) in idx.iter().enumerate() {
            v += contract_replaced(n, &kj.value, idx, &[(p, &du_col(u, j))]);
        }
        out.comps[o] = v;
    }
    Ok(out)
}

/// Lie derivative of a form field along a vector field at `(t, x)`.
pub fn lie_derivative(u: &FieldJet, k: &FieldJet, t: f64, x: &[f64]) -> Result<KFormValue> {
    require_vector(u, k.dim())?;
    let deg = form_degree(k.kind())?;
    lie_derivative_jet(&u.jet(t, x, 1)?, &k.jet(t, x, 1)?, deg)
}

/// Jacobi-Lie bracket `[u, w] = u·∇w − w·∇u` from jets.
pub fn lie_bracket_jet(u: &Jet, w: &Jet) -> Result<Vec<f64>> {
    u.require(1)?;
    w.require(1)?;
    let n = u.n;
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|l| u.value[l] * w.d1(i, l) - w.value[l] * u.d1(i, l))
                .sum()
        })
        .collect())
}

/// Lie derivative of a vector field, the bracket `[u, w]`.
pub fn lie_derivative_vector(u: &FieldJet, w: &FieldJet, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    require_vector(u, w.dim())?;
    require_vector(w, u.dim())?;
    lie_bracket_jet(&u.jet(t, x, 1)?, &w.jet(t, x, 1)?)
}

/// `𝓛_u 𝓛_u K` from second-order jets, as explicit index sums.
///
/// Besides the transport, mixed and cross terms this keeps the diagonal
/// `K(.., (Du)^2 e_{j_p}, ..)` contribution, without which the result does
/// not agree with applying the single Lie derivative twice.
pub fn double_lie_derivative_jet(u: &Jet, kj: &Jet, k: usize) -> Result<KFormValue> {
    u.require(2)?;
    kj.require(2)?;
    let n = u.n;
    let du = Mat::from_fn(n, |i, j| u.d1(i, j));
    let du2 = du.mul(&du);
    let dk: Vec<Vec<f64>> = (0..n).map(|l| partial_comps(kj, l)).collect();
    let mut out = KFormValue::zeros(n, k);
    for (o, idx) in multi_indices(n, k).iter().enumerate() {
        let mut v = 0.0;
        for l in 0..n {
            for m in 0..n {
                v += u.value[l] * u.d1(m, l) * kj.d1(o, m);
                v += u.value[l] * u.value[m] * kj.d2(o, l, m);
            }
        }
        for (p, &jp) in idx.iter().enumerate() {
            let col = du_col(u, jp);
            for l in 0..n {
                v += 2.0 * u.value[l] * contract_replaced(n, &dk[l], idx, &[(p, &col)]);
            }
            let mut w = [0.0; MAX_DIM];
            for (i, wi) in w.iter_mut().enumerate().take(n) {
                *wi = (0..n).map(|l| u.value[l] * u.d2(i, jp, l)).sum();
            }
            v += contract_replaced(n, &kj.value, idx, &[(p, &w)]);
            v += contract_replaced(n, &kj.value, idx, &[(p, &du2.column(jp))]);
            for (q, &jq) in idx.iter().enumerate() {
                if q != p {
                    v += contract_replaced(n, &kj.value, idx, &[(p, &col), (q, &du_col(u, jq))]);
                }
            }
        }
        out.comps[o] = v;
    }
    Ok(out)
}

/// `𝓛_u 𝓛_u K` at `(t, x)`.
pub fn double_lie_derivative(u: &FieldJet, k: &FieldJet, t: f64, x: &[f64]) -> Result<KFormValue> {
    require_vector(u, k.dim())?;
    let deg = form_degree(k.kind())?;
    double_lie_derivative_jet(&u.jet(t, x, 2)?, &k.jet(t, x, 2)?, deg)
}

/// Jacobian `J^i_j = ∂_j φ^i` of a diffeomorphism at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianSample {
    pub j: Mat,
    pub jinv: Option<Mat>,
}

impl JacobianSample {
    pub fn new(j: Mat) -> Result<Self> {
        let det = j.det();
        if !(det.is_finite() && det != 0.0) {
            return Err(Error::SingularJacobian(det));
        }
        Ok(Self { j, jinv: None })
    }

    /// Attaches a supplied inverse after checking `‖J·Jinv − I‖_∞ < 1e-8`.
    pub fn with_inverse(j: Mat, jinv: Mat) -> Result<Self> {
        let s = Self::new(j)?;
        let err = j.mul(&jinv).max_abs_diff(&Mat::identity(j.n));
        if !(err < 1e-8) {
            return Err(Error::Invalid(format!(
                "supplied inverse Jacobian is off by {err:e}"
            )));
        }
        Ok(Self {
            jinv: Some(jinv),
            ..s
        })
    }

    /// Computes the inverse directly.
    pub fn inverted(j: Mat) -> Result<Self> {
        let s = Self::new(j)?;
        let jinv = j.inverse().ok_or(Error::SingularJacobian(j.det()))?;
        Ok(Self {
            jinv: Some(jinv),
            ..s
        })
    }

    pub fn det(&self) -> f64 {
        self.j.det()
    }

    pub fn inverse(&self) -> Result<&Mat> {
        self.jinv.as_ref().ok_or(Error::MissingInverse)
    }
}

/// `(A^*K)_J = K(A e_{j_1}, .., A e_{j_k})` for a linear map `A`.
pub fn pullback_linear(a: &Mat, k: &KFormValue) -> Result<KFormValue> {
    if a.n != k.n {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} Jacobian against a form in dimension {}",
            a.n, a.n, k.n
        )));
    }
    let n = k.n;
    let cols: Vec<[f64; MAX_DIM]> = (0..n).map(|j| a.column(j)).collect();
    let comps = multi_indices(n, k.k)
        .iter()
        .map(|idx| {
            let vecs: Vec<&[f64]> = idx.iter().map(|&j| &cols[j][..n]).collect();
            contract(n, k.k, &k.comps, &vecs)
        })
        .collect();
    Ok(KFormValue { n, k: k.k, comps })
}

/// `(φ^*K)(x)` from `K(φ(x))` and the Jacobian at `x`.
///
/// ```
/// use kiw_core::exterior::{pullback, JacobianSample, KFormValue};
/// use kiw_core::linalg::Mat;
/// let j = JacobianSample::new(Mat::from_row_slice(2, &[2.0, 0.0, 0.0, 2.0])).unwrap();
/// let vol = KFormValue::basis(2, &[0, 1]).unwrap();
/// assert_eq!(pullback(&j, &vol).unwrap().comps, vec![4.0]);
/// ```
pub fn pullback(j: &JacobianSample, k_at_phi: &KFormValue) -> Result<KFormValue> {
    pullback_linear(&j.j, k_at_phi)
}

/// `(φ_*K)(φ(x))` from `K(x)`: the pullback by the inverse Jacobian.
pub fn pushforward_form(j: &JacobianSample, k_at_x: &KFormValue) -> Result<KFormValue> {
    pullback_linear(j.inverse()?, k_at_x)
}

/// `(φ_*u)(φ(x)) = J u(x)`.
pub fn pushforward_vector(j: &JacobianSample, u_at_x: &[f64]) -> Result<Vec<f64>> {
    if u_at_x.len() != j.j.n {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} against a {}x{} Jacobian",
            u_at_x.len(),
            j.j.n,
            j.j.n
        )));
    }
    Ok(j.j.mul_vec(u_at_x))
}

/// The field `𝓛_u K` with analytic first derivatives (uses second jets of `u`, `K`).
#[derive(Debug)]
pub struct LieField {
    u: FieldJet,
    k: FieldJet,
    deg: usize,
}

impl LieField {
    pub fn new(u: FieldJet, k: FieldJet) -> Result<FieldJet> {
        require_vector(&u, k.dim())?;
        let deg = form_degree(k.kind())?;
        let backend = derived_backend(&[&u, &k]);
        Ok(FieldJet::new(Self { u, k, deg }, backend))
    }
}

fn derived_backend(fields: &[&FieldJet]) -> Backend {
    fields
        .iter()
        .map(|f| f.backend())
        .find(|b| *b != Backend::Analytic)
        .unwrap_or(Backend::Analytic)
}

impl SmoothField for LieField {
    fn kind(&self) -> FieldKind {
        self.k.kind()
    }

    fn dim(&self) -> usize {
        self.k.dim()
    }

    fn max_order(&self) -> u8 {
        self.u.max_order().min(self.k.max_order()).saturating_sub(1)
    }

    fn jet(&self, t: f64, x: &[f64], order: u8) -> Result<Jet> {
        let n = self.dim();
        let u = self.u.jet(t, x, order + 1)?;
        let kj = self.k.jet(t, x, order + 1)?;
        let value = lie_derivative_jet(&u, &kj, self.deg)?;
        let mut out = Jet::zeros(n, value.comps.len(), order);
        out.value = value.comps;
        if order >= 1 {
            let dk: Vec<Vec<f64>> = (0..n).map(|l| partial_comps(&kj, l)).collect();
            for (o, idx) in multi_indices(n, self.deg).iter().enumerate() {
                for l in 0..n {
                    let mut v = 0.0;
                    for m in 0..n {
                        v += u.d1(m, l) * kj.d1(o, m) + u.value[m] * kj.d2(o, l, m);
                    }
                    for (q, &j) in idx.iter().enumerate() {
                        v += contract_replaced(n, &dk[l], idx, &[(q, &du_col(&u, j))]);
                        v += contract_replaced(n, &kj.value, idx, &[(q, &ddu_col(&u, j, l))]);
                    }
                    out.d1[o * n + l] = v;
                }
            }
        }
        Ok(out)
    }
}

/// The field `dK`.
#[derive(Debug)]
pub struct ExteriorDerivativeField {
    k: FieldJet,
    deg: usize,
    table: Vec<(usize, usize, usize, f64)>,
}

impl ExteriorDerivativeField {
    pub fn new(k: FieldJet) -> Result<FieldJet> {
        let deg = form_degree(k.kind())?;
        if deg >= k.dim() {
            return Err(Error::Degree(format!("d of a top-degree form in dimension {}", k.dim())));
        }
        let table = d_table(k.dim(), deg);
        let backend = k.backend();
        Ok(FieldJet::new(Self { k, deg, table }, backend))
    }
}

impl SmoothField for ExteriorDerivativeField {
    fn kind(&self) -> FieldKind {
        form_kind(self.deg + 1)
    }

    fn dim(&self) -> usize {
        self.k.dim()
    }

    fn max_order(&self) -> u8 {
        self.k.max_order().saturating_sub(1)
    }

    fn jet(&self, t: f64, x: &[f64], order: u8) -> Result<Jet> {
        let n = self.dim();
        let kj = self.k.jet(t, x, order + 1)?;
        let mut out = Jet::zeros(n, binomial(n, self.deg + 1), order);
        for &(o, i, axis, s) in &self.table {
            out.value[o] += s * kj.d1(i, axis);
            if order >= 1 {
                for l in 0..n {
                    out.d1[o * n + l] += s * kj.d2(i, axis, l);
                }
            }
        }
        Ok(out)
    }
}

/// The field `ι_u K`.
#[derive(Debug)]
pub struct InteriorField {
    u: FieldJet,
    k: FieldJet,
    deg: usize,
    table: Bilinear,
}

impl InteriorField {
    pub fn new(u: FieldJet, k: FieldJet) -> Result<FieldJet> {
        require_vector(&u, k.dim())?;
        let deg = form_degree(k.kind())?;
        if deg == 0 {
            return Err(Error::Degree("interior product of a 0-form".into()));
        }
        let table = Bilinear::interior(k.dim(), deg);
        let backend = derived_backend(&[&u, &k]);
        Ok(FieldJet::new(Self { u, k, deg, table }, backend))
    }
}

impl SmoothField for InteriorField {
    fn kind(&self) -> FieldKind {
        form_kind(self.deg - 1)
    }

    fn dim(&self) -> usize {
        self.k.dim()
    }

    fn max_order(&self) -> u8 {
        self.u.max_order().min(self.k.max_order())
    }

    fn jet(&self, t: f64, x: &[f64], order: u8) -> Result<Jet> {
        let u = self.u.jet(t, x, order)?;
        let kj = self.k.jet(t, x, order)?;
        Ok(self.table.jet(&u, &kj, order))
    }
}

/// The field `α ∧ β`.
#[derive(Debug)]
pub struct WedgeField {
    a: FieldJet,
    b: FieldJet,
    deg: usize,
    table: Bilinear,
}

impl WedgeField {
    pub fn new(a: FieldJet, b: FieldJet) -> Result<FieldJet> {
        let (j, k) = (form_degree(a.kind())?, form_degree(b.kind())?);
        let n = a.dim();
        if b.dim() != n {
            return Err(Error::DimensionMismatch("wedge of fields in different dimensions".into()));
        }
        if j + k > n {
            return Err(Error::Degree(format!("wedge of degrees {j} and {k} in dimension {n}")));
        }
        let table = Bilinear::wedge(n, j, k);
        let backend = derived_backend(&[&a, &b]);
        Ok(FieldJet::new(
            Self {
                a,
                b,
                deg: j + k,
                table,
            },
            backend,
        ))
    }
}

impl SmoothField for WedgeField {
    fn kind(&self) -> FieldKind {
        form_kind(self.deg)
    }

    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn max_order(&self) -> u8 {
        self.a.max_order().min(self.b.max_order())
    }

    fn jet(&self, t: f64, x: &[f64], order: u8) -> Result<Jet> {
        let a = self.a.jet(t, x, order)?;
        let b = self.b.jet(t, x, order)?;
        Ok(self.table.jet(&a, &b, order))
    }
}

/// `φ^*K` for the affine map `φ(x) = A x + c`, with exact derivatives.
#[derive(Debug)]
pub struct LinearPullbackField {
    a: Mat,
    c: Vec<f64>,
    k: FieldJet,
    deg: usize,
}

impl LinearPullbackField {
    pub fn new(a: Mat, c: Vec<f64>, k: FieldJet) -> Result<FieldJet> {
        let deg = form_degree(k.kind())?;
        if a.n != k.dim() || c.len() != k.dim() {
            return Err(Error::DimensionMismatch("affine map and field dimensions differ".into()));
        }
        let backend = k.backend();
        Ok(FieldJet::new(Self { a, c, k, deg }, backend))
    }
}

impl SmoothField for LinearPullbackField {
    fn kind(&self) -> FieldKind {
        self.k.kind()
    }

    fn dim(&self) -> usize {
        self.k.dim()
    }

    fn max_order(&self) -> u8 {
        self.k.max_order()
    }

    fn jet(&self, t: f64, x: &[f64], order: u8) -> Result<Jet> {
        let n = self.dim();
        let mut y = self.a.mul_vec(x);
        for (yi, ci) in y.iter_mut().zip(&self.c) {
            *yi += ci;
        }
        let kj = self.k.jet(t, &y, order)?;
        let pull = |comps: Vec<f64>| -> Result<Vec<f64>> {
            Ok(pullback_linear(&self.a, &KFormValue::new(n, self.deg, comps)?)?.comps)
        };
        let mut out = Jet::zeros(n, kj.components(), order);
        out.value = pull(kj.value.clone())?;
        if order >= 1 {
            let pd: Vec<Vec<f64>> = (0..n)
                .map(|m| pull(partial_comps(&kj, m)))
                .collect::<Result<_>>()?;
            for c in 0..kj.components() {
                for l in 0..n {
                    out.d1[c * n + l] = (0..n).map(|m| self.a.get(m, l) * pd[m][c]).sum();
                }
            }
        }
        if order >= 2 {
            for m in 0..n {
                for r in 0..n {
                    let pd = pull(second_partial_comps(&kj, m, r))?;
                    for (c, v) in pd.iter().enumerate() {
                        for l in 0..n {
                            for s in 0..n {
                                out.d2[(c * n + l) * n + s] += self.a.get(m, l) * self.a.get(r, s) * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
