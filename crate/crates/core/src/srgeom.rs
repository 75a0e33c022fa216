//! Polynomial vector-field frames on R^n with exact derivatives up to
//! order 2, Lie brackets, and bracket-span rank reports.
//!
//! Fields are restricted to polynomial coefficients so that Jacobians
//! and Hessians are exact; every downstream second-order formula is
//! then free of finite-difference noise.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::numeric::{nelder_mead, span_rank, unit_sphere_samples};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Sparse polynomials
// ---------------------------------------------------------------------------

/// Sparse multivariate polynomial: exponent tuple -> coefficient.
///
/// Exponent tuples have the ambient dimension as length. The map is
/// ordered so that serialization and evaluation are deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    terms: BTreeMap<Vec<u32>, f64>,
    dim: usize,
}

impl Poly {
    pub fn zero(dim: usize) -> Self {
        Poly { terms: BTreeMap::new(), dim }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Poly::zero(dim);
        if c != 0.0 {
            p.terms.insert(vec![0; dim], c);
        }
        p
    }

    /// The coordinate monomial `x_j` (0-indexed).
    pub fn coordinate(dim: usize, j: usize) -> Self {
        let mut exps = vec![0; dim];
        exps[j] = 1;
        let mut p = Poly::zero(dim);
        p.terms.insert(exps, 1.0);
        p
    }

    pub fn add_term(&mut self, exponents: Vec<u32>, coeff: f64) {
        assert_eq!(exponents.len(), self.dim);
        let entry = self.terms.entry(exponents).or_insert(0.0);
        *entry += coeff;
        if *entry == 0.0 {
            // keep the table minimal; exact zero only arises from cancellation
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|&c| c == 0.0)
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= s;
        }
        out
    }

    pub fn add(&self, other: &Poly) -> Poly {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            *out.terms.entry(e.clone()).or_insert(0.0) += c;
        }
        out.prune();
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        assert_eq!(self.dim, other.dim);
        let mut out = Poly::zero(self.dim);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *out.terms.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        out.prune();
        out
    }

    /// Exact partial derivative with respect to `x_j`.
    pub fn diff(&self, j: usize) -> Poly {
        let mut out = Poly::zero(self.dim);
        for (e, c) in &self.terms {
            if e[j] > 0 {
                let mut d = e.clone();
                d[j] -= 1;
                *out.terms.entry(d).or_insert(0.0) += c * e[j] as f64;
            }
        }
        out.prune();
        out
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| *c != 0.0);
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            let mut term = *c;
            for (j, &p) in e.iter().enumerate() {
                for _ in 0..p {
                    term *= x[j];
                }
            }
            acc += term;
        }
        acc
    }

    fn terms_json(&self) -> BTreeMap<String, f64> {
        self.terms
            .iter()
            .map(|(e, c)| {
                let key = e
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                (key, *c)
            })
            .collect()
    }

    fn from_terms_json(dim: usize, table: &BTreeMap<String, f64>) -> Result<Poly> {
        let mut p = Poly::zero(dim);
        for (key, &coeff) in table {
            let exps: Vec<u32> = key
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u32>()
                        .map_err(|_| Error::InvalidFrame(format!("bad multi-index '{key}'")))
                })
                .collect::<Result<_>>()?;
            if exps.len() != dim {
                return Err(Error::InvalidFrame(format!(
                    "multi-index '{key}' has length {} but n = {dim}",
                    exps.len()
                )));
            }
            p.add_term(exps, coeff);
        }
        p.prune();
        Ok(p)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(e, c)| {
                let vars: String = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(j, &p)| {
                        if p == 1 {
                            format!("x{}", j + 1)
                        } else {
                            format!("x{}^{}", j + 1, p)
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ");
                if vars.is_empty() {
                    format!("{c}")
                } else {
                    format!("{c} {vars}")
                }
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

// ---------------------------------------------------------------------------
// Frames and jets
// ---------------------------------------------------------------------------

/// A polynomial vector field on R^n: one polynomial per component.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyField {
    components: Vec<Poly>,
}

impl PolyField {
    pub fn new(components: Vec<Poly>) -> Self {
        PolyField { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &Poly {
        &self.components[i]
    }

    pub fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.components.iter().map(|p| p.eval(x)))
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |r, c| self.components[r].diff(c).eval(x))
    }

    /// Lie bracket [self, other] = J_other * self - J_self * other,
    /// computed symbolically so the result is again polynomial.
    pub fn bracket(&self, other: &PolyField) -> PolyField {
        let n = self.dim();
        let mut components = Vec::with_capacity(n);
        for r in 0..n {
            let mut comp = Poly::zero(self.components[0].dim());
            for c in 0..n {
                comp = comp.add(&other.components[r].diff(c).mul(&self.components[c]));
                comp = comp.add(&self.components[r].diff(c).mul(&other.components[c]).scale(-1.0));
            }
            components.push(comp);
        }
        PolyField { components }
    }

    /// Constant-coefficient combination of frame fields.
    pub fn combine(fields: &[PolyField], coeffs: &DVector<f64>) -> PolyField {
        let n = fields[0].dim();
        let dim = fields[0].components[0].dim();
        let mut components = vec![Poly::zero(dim); n];
        for (f, &c) in fields.iter().zip(coeffs.iter()) {
            for (acc, p) in components.iter_mut().zip(&f.components) {
                *acc = acc.add(&p.scale(c));
            }
        }
        PolyField { components }
    }
}

/// Value, Jacobian and Hessian of one frame field at a point.
///
/// `hessian[i]` is the symmetric matrix of second derivatives of the
/// i-th component; symmetry is exact because differentiation of the
/// coefficient tables is exact.
#[derive(Debug, Clone)]
pub struct Jet2 {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub hessian: Vec<DMatrix<f64>>,
}

impl Jet2 {
    /// Hessian of component `i` applied quadratically: v^T H_i w.
    pub fn hessian_quad(&self, i: usize, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        (v.transpose() * &self.hessian[i] * w)[(0, 0)]
    }
}

/// Bracket-span dimensions at a point for a fixed section.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BracketReport {
    pub dim_delta: usize,
    pub dim_delta2: usize,
    pub dim_with_section: usize,
    pub section_coeffs: Vec<f64>,
}

/// Result of the section sweep behind the pre-medium-fat test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreMediumFatScan {
    pub min_dim: usize,
    pub worst_section: Vec<f64>,
    /// min_dim >= n - 1. The sweep samples constant-coefficient
    /// sections only, so this is a heuristic lower bound on the
    /// universal quantifier over smooth sections.
    pub passes: bool,
    pub n_samples: usize,
}

/// A frame of m polynomial vector fields spanning a distribution on R^n.
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFrame {
    dim_n: usize,
    rank_m: usize,
    fields: Vec<PolyField>,
    name: Option<String>,
}

impl PolyFrame {
    pub fn new(dim_n: usize, fields: Vec<PolyField>, name: Option<String>) -> Result<Self> {
        if dim_n == 0 || fields.is_empty() {
            return Err(Error::InvalidFrame(
                "need dim_n >= 1 and at least one field".into(),
            ));
        }
        for f in &fields {
            if f.dim() != dim_n {
                return Err(Error::InvalidFrame(format!(
                    "field has {} components, expected {dim_n}",
                    f.dim()
                )));
            }
        }
        Ok(PolyFrame { dim_n, rank_m: fields.len(), fields, name })
    }

    pub fn dim_n(&self) -> usize {
        self.dim_n
    }

    pub fn rank_m(&self) -> usize {
        self.rank_m
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn field(&self, i: usize) -> Result<&PolyField> {
        self.fields.get(i).ok_or(Error::IndexOutOfRange { index: i, rank: self.rank_m })
    }

    /// Exact value, Jacobian, Hessian of field `i` at `x` (0-indexed).
    pub fn eval_jet(&self, i: usize, x: &DVector<f64>) -> Result<Jet2> {
        let field = self.field(i)?;
        let n = self.dim_n;
        let value = field.value(x);
        let jacobian = field.jacobian(x);
        let mut hessian = Vec::with_capacity(n);
        for comp in 0..n {
            let mut h = DMatrix::zeros(n, n);
            for a in 0..n {
                let da = field.component(comp).diff(a);
                for b in a..n {
                    let v = da.diff(b).eval(x);
                    h[(a, b)] = v;
                    h[(b, a)] = v;
                }
            }
            hessian.push(h);
        }
        Ok(Jet2 { value, jacobian, hessian })
    }

    /// Value of field `i` at `x`.
    pub fn field_value(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.field(i)?.value(x))
    }

    /// All field values stacked as the n x m matrix B(x).
    pub fn b_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.dim_n, self.rank_m);
        for (i, f) in self.fields.iter().enumerate() {
            b.set_column(i, &f.value(x));
        }
        b
    }

    /// Lie bracket [X^i, X^j] evaluated at `x`.
    pub fn lie_bracket(&self, i: usize, j: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let fi = self.field(i)?;
        let fj = self.field(j)?;
        Ok(fj.jacobian(x) * fi.value(x) - fi.jacobian(x) * fj.value(x))
    }

    /// Symbolic bracket field [X^i, X^j].
    pub fn bracket_field(&self, i: usize, j: usize) -> Result<PolyField> {
        Ok(self.field(i)?.bracket(self.field(j)?))
    }

    fn check_independent(&self, x: &DVector<f64>) -> Result<()> {
        let values: Vec<DVector<f64>> = self.fields.iter().map(|f| f.value(x)).collect();
        if span_rank(&values, self.dim_n) < self.rank_m {
            return Err(Error::DegenerateFrame);
        }
        Ok(())
    }

    /// Dimensions of Delta, Delta + [Delta, Delta], and the same plus
    /// [X, [Delta, Delta]] for the constant-coefficient section
    /// X = sum_k c_k X^k, all at the point `x`.
    ///
    /// Ranks are read off singular values with the crate threshold.
    pub fn bracket_span(&self, x: &DVector<f64>, section_coeffs: &DVector<f64>) -> Result<BracketReport> {
        if section_coeffs.len() != self.rank_m {
            return Err(Error::DimensionMismatch(format!(
                "section has {} coefficients, frame rank is {}",
                section_coeffs.len(),
                self.rank_m
            )));
        }
        let norm = section_coeffs.norm();
        if norm == 0.0 {
            return Err(Error::PreconditionViolated("section coefficients all zero".into()));
        }
        self.check_independent(x)?;
        let coeffs = section_coeffs / norm;

        let mut generators: Vec<DVector<f64>> =
            self.fields.iter().map(|f| f.value(x)).collect();
        let dim_delta = span_rank(&generators, self.dim_n);

        let mut bracket_fields = Vec::new();
        for i in 0..self.rank_m {
            for j in (i + 1)..self.rank_m {
                bracket_fields.push(self.fields[i].bracket(&self.fields[j]));
            }
        }
        for bf in &bracket_fields {
            generators.push(bf.value(x));
        }
        let dim_delta2 = span_rank(&generators, self.dim_n);

        let section = PolyField::combine(&self.fields, &coeffs);
        for bf in &bracket_fields {
            generators.push(section.bracket(bf).value(x));
        }
        let dim_with_section = span_rank(&generators, self.dim_n);

        Ok(BracketReport {
            dim_delta,
            dim_delta2,
            dim_with_section,
            section_coeffs: coeffs.iter().copied().collect(),
        })
    }

    /// Minimize `dim_with_section` over unit sections: deterministic
    /// low-discrepancy sphere sweep followed by Nelder-Mead refinement
    /// of a nuclear-norm surrogate around the discrete minimizer.
    pub fn pre_medium_fat_scan(&self, x: &DVector<f64>, n_sphere_samples: usize) -> Result<PreMediumFatScan> {
        if n_sphere_samples < self.rank_m {
            return Err(Error::PreconditionViolated(format!(
                "need at least m = {} sphere samples",
                self.rank_m
            )));
        }
        self.check_independent(x)?;

        let samples = unit_sphere_samples(self.rank_m, n_sphere_samples);
        let mut best: Option<(usize, DVector<f64>)> = None;
        for c in &samples {
            let report = self.bracket_span(x, c)?;
            let dim = report.dim_with_section;
            if best.as_ref().map(|(d, _)| dim < *d).unwrap_or(true) {
                best = Some((dim, c.clone()));
            }
        }
        let (mut min_dim, mut worst) = best.expect("at least one sample");

        // Continuous surrogate: sum of singular values of the part of
        // the section brackets orthogonal to Delta + [Delta, Delta].
        let refined = {
            let frame = self.clone();
            let x = x.clone();
            let surrogate = move |c: &DVector<f64>| -> f64 {
                let norm = c.norm();
                if norm < 1e-9 {
                    return f64::INFINITY;
                }
                let c = c / norm;
                match frame.section_extra_singular_values(&x, &c) {
                    Ok(sv) => sv.iter().sum(),
                    Err(_) => f64::INFINITY,
                }
            };
            nelder_mead(surrogate, &worst, 0.2, 120)
        };
        if refined.norm() > 1e-9 {
            let report = self.bracket_span(x, &refined)?;
            if report.dim_with_section < min_dim {
                min_dim = report.dim_with_section;
                worst = DVector::from_vec(report.section_coeffs.clone());
            }
        }

        Ok(PreMediumFatScan {
            min_dim,
            worst_section: worst.iter().copied().collect(),
            passes: min_dim + 1 >= self.dim_n,
            n_samples: samples.len(),
        })
    }

    /// Singular values of the section brackets projected orthogonally
    /// to Delta + [Delta, Delta] at x.
    fn section_extra_singular_values(&self, x: &DVector<f64>, coeffs: &DVector<f64>) -> Result<Vec<f64>> {
        let mut base: Vec<DVector<f64>> = self.fields.iter().map(|f| f.value(x)).collect();
        let mut bracket_fields = Vec::new();
        for i in 0..self.rank_m {
            for j in (i + 1)..self.rank_m {
                let bf = self.fields[i].bracket(&self.fields[j]);
                base.push(bf.value(x));
                bracket_fields.push(bf);
            }
        }
        if bracket_fields.is_empty() {
            return Ok(vec![]);
        }
        // orthonormal basis of the base span
        let m = DMatrix::from_fn(self.dim_n, base.len(), |r, c| base[c][r]);
        let (u, s, _) = crate::numeric::svd_sorted(&m);
        let thr = crate::numeric::rank_threshold(&s);
        let rank = s.iter().filter(|&&sv| sv > thr).count();
        let section = PolyField::combine(&self.fields, coeffs);
        let mut cols = Vec::new();
        for bf in &bracket_fields {
            let mut v = section.bracket(bf).value(x);
            for k in 0..rank {
                let uk = u.column(k);
                let proj = uk.dot(&v);
                v -= DVector::from_column_slice(uk.as_slice()) * proj;
            }
            cols.push(v);
        }
        let mm = DMatrix::from_fn(self.dim_n, cols.len(), |r, c| cols[c][r]);
        let svd = mm.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Ok(sv)
    }
}

// ---------------------------------------------------------------------------
// Presets and serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FrameJson {
    n: usize,
    m: usize,
    fields: Vec<Vec<PolyJson>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolyJson {
    coeffs: BTreeMap<String, f64>,
}

impl PolyFrame {
    /// Parse the frame definition format: `{"n", "m", "fields"}` where
    /// `fields[i][comp].coeffs` maps comma-separated multi-indices to
    /// coefficients, e.g. `"2,0,0": 0.5` for x^2/2.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: FrameJson = serde_json::from_str(text)?;
        if raw.fields.len() != raw.m {
            return Err(Error::InvalidFrame(format!(
                "declared m = {} but {} fields given",
                raw.m,
                raw.fields.len()
            )));
        }
        let mut fields = Vec::with_capacity(raw.m);
        for comps in &raw.fields {
            if comps.len() != raw.n {
                return Err(Error::InvalidFrame(format!(
                    "field has {} components, expected n = {}",
                    comps.len(),
                    raw.n
                )));
            }
            let polys: Vec<Poly> = comps
                .iter()
                .map(|c| Poly::from_terms_json(raw.n, &c.coeffs))
                .collect::<Result<_>>()?;
            fields.push(PolyField::new(polys));
        }
        PolyFrame::new(raw.n, fields, raw.name)
    }

    pub fn to_json(&self) -> String {
        let raw = FrameJson {
            n: self.dim_n,
            m: self.rank_m,
            fields: self
                .fields
                .iter()
                .map(|f| {
                    f.components
                        .iter()
                        .map(|p| PolyJson { coeffs: p.terms_json() })
                        .collect()
                })
                .collect(),
            name: self.name.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("frame serialization")
    }

    /// Load a preset by name: `heisenberg`, `martinet`, `engel`,
    /// `flat-rn` (= flat-r2) or `flat-r<k>`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "heisenberg" => Ok(heisenberg()),
            "martinet" => Ok(martinet()),
            "engel" => Ok(engel()),
            "flat-rn" => Ok(flat_rn(2)),
            _ => {
                if let Some(rest) = name.strip_prefix("flat-r") {
                    if let Ok(k) = rest.parse::<usize>() {
                        if k >= 1 {
                            return Ok(flat_rn(k));
                        }
                    }
                }
                Err(Error::UnknownPreset(name.to_string()))
            }
        }
    }
}

/// Heisenberg frame on R^3: X1 = dx - (y/2) dz, X2 = dy + (x/2) dz.
pub fn heisenberg() -> PolyFrame {
    let n = 3;
    let mut x1c3 = Poly::coordinate(n, 1).scale(-0.5); // -y/2
    x1c3.prune();
    let x1 = PolyField::new(vec![Poly::constant(n, 1.0), Poly::zero(n), x1c3]);
    let x2 = PolyField::new(vec![
        Poly::zero(n),
        Poly::constant(n, 1.0),
        Poly::coordinate(n, 0).scale(0.5), // x/2
    ]);
    PolyFrame::new(n, vec![x1, x2], Some("heisenberg".into())).unwrap()
}

/// Martinet frame on R^3: X1 = dx, X2 = dy + (x^2/2) dz.
pub fn martinet() -> PolyFrame {
    let n = 3;
    let x1 = PolyField::new(vec![Poly::constant(n, 1.0), Poly::zero(n), Poly::zero(n)]);
    let mut xsq = Poly::zero(n);
    xsq.add_term(vec![2, 0, 0], 0.5);
    let x2 = PolyField::new(vec![Poly::zero(n), Poly::constant(n, 1.0), xsq]);
    PolyFrame::new(n, vec![x1, x2], Some("martinet".into())).unwrap()
}

/// Engel frame on R^4: X1 = dx, X2 = dy + x dz + (x^2/2) dw.
pub fn engel() -> PolyFrame {
    let n = 4;
    let x1 = PolyField::new(vec![
        Poly::constant(n, 1.0),
        Poly::zero(n),
        Poly::zero(n),
        Poly::zero(n),
    ]);
    let mut xsq = Poly::zero(n);
    xsq.add_term(vec![2, 0, 0, 0], 0.5);
    let x2 = PolyField::new(vec![
        Poly::zero(n),
        Poly::constant(n, 1.0),
        Poly::coordinate(n, 0),
        xsq,
    ]);
    PolyFrame::new(n, vec![x1, x2], Some("engel".into())).unwrap()
}

/// Identity frame on R^k (Riemannian baseline, m = n).
pub fn flat_rn(k: usize) -> PolyFrame {
    let fields = (0..k)
        .map(|i| {
            let comps = (0..k)
                .map(|j| if i == j { Poly::constant(k, 1.0) } else { Poly::zero(k) })
                .collect();
            PolyField::new(comps)
        })
        .collect();
    PolyFrame::new(k, fields, Some(format!("flat-r{k}"))).unwrap()
}
