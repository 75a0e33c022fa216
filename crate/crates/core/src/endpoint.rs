//! The end-point map E(u) = gamma^u(1), the energy C(u), and their
//! first and second differentials in discretized form.
//!
//! All time integrals use the trapezoid rule on the bundle grid,
//! applied segment by segment so that the quadrature is exactly linear
//! in the piecewise-constant control values.

use nalgebra::{DMatrix, DVector};

use crate::flow::{integrate, Control, IntegrateOpts, TrajectoryBundle};
use crate::numeric::{numerical_rank, rank_threshold, svd_sorted};
use crate::srgeom::PolyFrame;
use crate::Result;

/// End-point of the controlled trajectory.
pub fn endpoint(
    frame: &PolyFrame,
    control: &Control,
    x0: &DVector<f64>,
    opts: IntegrateOpts,
) -> Result<DVector<f64>> {
    Ok(integrate(frame, control, x0, opts)?.endpoint().clone())
}

/// First variation along a control direction: the path delta^1_v and
/// the end-point derivative D_u E(v).
#[derive(Debug, Clone)]
pub struct FirstVariation {
    /// delta^1_v(t_k) = S(t_k) int_0^{t_k} S(s)^-1 B(s) v(s) ds
    pub delta1: Vec<DVector<f64>>,
    pub d_endpoint: DVector<f64>,
}

/// D_u E(v) = int_0^1 S(1) S(t)^-1 B(t) v(t) dt together with the
/// variation path.
pub fn d_endpoint(bundle: &TrajectoryBundle, v: &Control) -> Result<FirstVariation> {
    bundle.check_control(v)?;
    let n = bundle.x0().len();
    let k_total = bundle.n_steps();
    let h = 1.0 / k_total as f64;

    // cumulative trapezoid of g(s) = S^-1(s) B(s) v(s), segment-wise
    let mut cum = DVector::zeros(n);
    let mut delta1 = Vec::with_capacity(k_total + 1);
    delta1.push(DVector::zeros(n));
    for k in 0..k_total {
        let seg = bundle.segment_of_interval(k);
        let vv = v.value(seg);
        let g0 = &bundle.s_inv()[k] * &bundle.b()[k] * &vv;
        let g1 = &bundle.s_inv()[k + 1] * &bundle.b()[k + 1] * &vv;
        cum += (g0 + g1) * (h / 2.0);
        delta1.push(&bundle.s()[k + 1] * &cum);
    }
    Ok(FirstVariation { d_endpoint: delta1[k_total].clone(), delta1 })
}

/// Matrix form of D_u E on the piecewise-constant basis, with SVD and
/// corank at the shared numerical-rank threshold.
///
/// Columns are indexed segment-major: column k*m + i carries the basis
/// control supported on segment k, component i.
#[derive(Debug, Clone)]
pub struct EndpointOperator {
    pub matrix: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
    pub corank: usize,
    pub threshold: f64,
}

impl EndpointOperator {
    pub fn rank(&self) -> usize {
        self.singular_values.len() - self.null_count()
    }

    fn null_count(&self) -> usize {
        self.singular_values
            .iter()
            .filter(|&&s| s <= self.threshold)
            .count()
    }

    /// Apply the discretized differential to a control direction.
    pub fn apply(&self, v: &Control) -> DVector<f64> {
        &self.matrix * v.to_coeffs()
    }

    /// Least-squares solve of p . D_u E = rhs over covectors p,
    /// returning the minimizer and the relative residual.
    pub fn covector_least_squares(&self, rhs: &DVector<f64>) -> (DVector<f64>, f64) {
        let n = self.matrix.nrows();
        let mut p = DVector::zeros(n);
        for (j, &s) in self.singular_values.iter().enumerate() {
            if s > self.threshold {
                let uj = self.u.column(j);
                let vj = self.v_t.row(j).transpose();
                let coef = vj.dot(rhs) / s;
                p += DVector::from_column_slice(uj.as_slice()) * coef;
            }
        }
        let residual = (self.matrix.transpose() * &p - rhs).norm();
        let rel = residual / rhs.norm().max(1e-300);
        (p, rel)
    }
}

/// Assemble the operator by accumulating the per-interval trapezoid
/// weights into the owning segment's columns.
pub fn d_endpoint_operator(bundle: &TrajectoryBundle) -> EndpointOperator {
    let n = bundle.x0().len();
    let m = bundle.control().m();
    let segments = bundle.control().n_segments();
    let k_total = bundle.n_steps();
    let h = 1.0 / k_total as f64;

    let mut matrix = DMatrix::zeros(n, segments * m);
    let mut m_cache: Vec<DMatrix<f64>> = Vec::with_capacity(k_total + 1);
    for k in 0..=k_total {
        m_cache.push(bundle.m_at(k));
    }
    for k in 0..k_total {
        let seg = bundle.segment_of_interval(k);
        for i in 0..m {
            for r in 0..n {
                matrix[(r, seg * m + i)] +=
                    (m_cache[k][(r, i)] + m_cache[k + 1][(r, i)]) * (h / 2.0);
            }
        }
    }

    let (u, s, v_t) = svd_sorted(&matrix);
    let threshold = rank_threshold(&s);
    let corank = n - numerical_rank(&s);
    EndpointOperator { matrix, u, singular_values: s, v_t, corank, threshold }
}

/// Second differential of E evaluated as a quadratic along v:
/// D^2_u E(v) = 2 int_0^1 S(1) S(t)^-1 [A^u_v(t) + D^u_v(t)] dt,
/// where A^u_v applies the field Jacobians to delta^1_v and D^u_v
/// applies the field Hessians quadratically to delta^1_v.
pub fn d2_endpoint(bundle: &TrajectoryBundle, v: &Control) -> Result<DVector<f64>> {
    bundle.check_control(v)?;
    let n = bundle.x0().len();
    let m = bundle.control().m();
    let k_total = bundle.n_steps();
    let h = 1.0 / k_total as f64;
    let jets = bundle.jets();
    let variation = d_endpoint(bundle, v)?;
    let s1 = bundle.s().last().unwrap();

    // integrand I(t_k) for the segment's control values
    let integrand = |k: usize, seg: usize| -> DVector<f64> {
        let vv = v.value(seg);
        let uu = bundle.control().value(seg);
        let d1 = &variation.delta1[k];
        let mut out = DVector::zeros(n);
        for i in 0..m {
            let jet = &jets[k][i];
            if vv[i] != 0.0 {
                out += &jet.jacobian * d1 * vv[i];
            }
            if uu[i] != 0.0 {
                for comp in 0..n {
                    out[comp] += 0.5 * uu[i] * jet.hessian_quad(comp, d1, d1);
                }
            }
        }
        out
    };

    let mut acc = DVector::zeros(n);
    for k in 0..k_total {
        let seg = bundle.segment_of_interval(k);
        let i0 = &bundle.s_inv()[k] * integrand(k, seg);
        let i1 = &bundle.s_inv()[k + 1] * integrand(k + 1, seg);
        acc += (i0 + i1) * (h / 2.0);
    }
    Ok(s1 * acc * 2.0)
}

/// Symmetric bilinear form of the second differential by polarization:
/// B(v, w) = (D^2E(v+w) - D^2E(v-w)) / 4.
pub fn d2_endpoint_bilinear(
    bundle: &TrajectoryBundle,
    v: &Control,
    w: &Control,
) -> Result<DVector<f64>> {
    let plus = Control::from_coeffs(&(v.to_coeffs() + w.to_coeffs()), v.m());
    let minus = Control::from_coeffs(&(v.to_coeffs() - w.to_coeffs()), v.m());
    Ok((d2_endpoint(bundle, &plus)? - d2_endpoint(bundle, &minus)?) / 4.0)
}

/// D_u C(v) = int <u, v>, exact for piecewise-constant controls.
pub fn d_energy(control: &Control, v: &Control) -> Result<f64> {
    if control.n_segments() != v.n_segments() || control.m() != v.m() {
        return Err(crate::Error::SegmentationMismatch {
            expected: control.n_segments(),
            got: v.n_segments(),
        });
    }
    Ok(control.to_coeffs().dot(&v.to_coeffs()) / control.n_segments() as f64)
}

/// D^2_u C(v) = ||v||^2_{L^2}.
pub fn d2_energy(v: &Control) -> f64 {
    v.l2_norm_sq()
}
