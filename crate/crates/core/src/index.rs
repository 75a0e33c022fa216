//! Quadratic forms of the second-order theory: the restriction of
//! lambda . D^2 E to the kernel of D_u E, negative indices, the
//! oscillatory probe family with its closed-form window quadratic, and
//! the quantified-openness experiment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::endpoint::{d2_endpoint, d_endpoint_operator, EndpointOperator};
use crate::extremal::{abnormal_covectors, reconstruct};
use crate::flow::{integrate, Control, IntegrateOpts, TrajectoryBundle};
use crate::numeric::complete_orthonormal;
use crate::srgeom::PolyFrame;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Kernel bases and restricted forms
// ---------------------------------------------------------------------------

/// L^2-orthonormal controls spanning the discretized kernel of D_u E,
/// capped at `dim_cap`.
///
/// Near-null right-singular vectors (singular value at or below the
/// operator threshold) come first; the orthonormal completion of the
/// row space follows in a deterministic order.
pub fn kernel_basis(op: &EndpointOperator, like: &Control, dim_cap: usize) -> Vec<Control> {
    let d = op.matrix.ncols();
    let m = like.m();
    let k = like.n_segments();
    let scale = (k as f64).sqrt(); // coefficient-unit to L^2-unit

    let mut coeff_vecs: Vec<DVector<f64>> = Vec::new();
    let mut row_space: Vec<DVector<f64>> = Vec::new();
    for (j, &s) in op.singular_values.iter().enumerate() {
        let v = op.v_t.row(j).transpose();
        if s > op.threshold {
            row_space.push(v);
        } else {
            coeff_vecs.push(v);
        }
    }
    let mut known = row_space.clone();
    known.extend(coeff_vecs.iter().cloned());
    coeff_vecs.extend(complete_orthonormal(&known, d));
    coeff_vecs.truncate(dim_cap);
    coeff_vecs
        .into_iter()
        .map(|v| Control::from_coeffs(&(v * scale), m))
        .collect()
}

/// Gram matrix of v -> lambda . D^2_u E(v) on a kernel basis.
#[derive(Debug, Clone)]
pub struct RestrictedForm {
    pub gram: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub kernel_dim: usize,
}

/// Assemble the restricted quadratic form by polarization of the
/// quadratic values: B(v, w) = (Q(v+w) - Q(v-w)) / 4.
pub fn restricted_form(
    bundle: &TrajectoryBundle,
    lambda: &DVector<f64>,
    basis: &[Control],
) -> Result<RestrictedForm> {
    let dim = basis.len();
    let q = |v: &Control| -> Result<f64> { Ok(lambda.dot(&d2_endpoint(bundle, v)?)) };
    let mut gram = DMatrix::zeros(dim, dim);
    for (i, v) in basis.iter().enumerate() {
        gram[(i, i)] = q(v)?;
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            let plus =
                Control::from_coeffs(&(basis[i].to_coeffs() + basis[j].to_coeffs()), basis[i].m());
            let minus =
                Control::from_coeffs(&(basis[i].to_coeffs() - basis[j].to_coeffs()), basis[i].m());
            let b = (q(&plus)? - q(&minus)?) / 4.0;
            gram[(i, j)] = b;
            gram[(j, i)] = b;
        }
    }
    Ok(RestrictedForm { gram, lambda: lambda.clone(), kernel_dim: dim })
}

/// Negative index of a symmetric matrix: eigenvalues below
/// -tol * max(spectral radius, 1).
pub fn negative_index(gram: &DMatrix<f64>, tol: f64) -> usize {
    if gram.nrows() == 0 {
        return 0;
    }
    let eig = gram.clone().symmetric_eigen();
    let radius = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    let cutoff = -tol * radius.max(1.0);
    eig.eigenvalues.iter().filter(|&&l| l < cutoff).count()
}

/// Ten smallest eigenvalues (ascending), for reporting.
pub fn spectrum_head(gram: &DMatrix<f64>) -> Vec<f64> {
    let eig = gram.clone().symmetric_eigen();
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.truncate(10);
    v
}

// ---------------------------------------------------------------------------
// Oscillatory probes
// ---------------------------------------------------------------------------

/// Cos/sin probe family on a window [t_bar, t_bar + delta]: component
/// `i_bar` carries sum_k a_k cos(2 pi k (t - t_bar)/delta), component
/// `j_bar` the matching sine series; everything else is zero. In the
/// continuum the squared L^2 norm is delta * sum_k a_k^2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscProbe {
    pub t_bar: f64,
    pub delta: f64,
    pub i_bar: usize,
    pub j_bar: usize,
    pub coeffs: Vec<f64>,
}

impl OscProbe {
    fn check(&self, m: usize) -> Result<()> {
        if self.delta <= 0.0 || self.t_bar < 0.0 || self.t_bar + self.delta > 1.0 + 1e-12 {
            return Err(Error::WindowOutOfRange { t0: self.t_bar, t1: self.t_bar + self.delta });
        }
        if self.i_bar >= m || self.j_bar >= m || self.i_bar == self.j_bar {
            return Err(Error::IndexOutOfRange { index: self.i_bar.max(self.j_bar), rank: m });
        }
        Ok(())
    }

    pub fn continuum_norm_sq(&self) -> f64 {
        self.delta * self.coeffs.iter().map(|a| a * a).sum::<f64>()
    }
}

/// Piecewise-constant realization of the probe: each segment takes the
/// exact average of the windowed series over the segment (the L^2
/// projection), so the discrete norm converges at O(1/n_segments).
pub fn osc_probe(probe: &OscProbe, n_segments: usize, m: usize) -> Result<Control> {
    probe.check(m)?;
    let w0 = probe.t_bar;
    let w1 = probe.t_bar + probe.delta;
    let omega = 2.0 * std::f64::consts::PI / probe.delta;
    let int_cos = |k: f64, t: f64| (k * omega * (t - w0)).sin() / (k * omega);
    let int_sin = |k: f64, t: f64| -(k * omega * (t - w0)).cos() / (k * omega);
    let mut values = DMatrix::zeros(n_segments, m);
    for seg in 0..n_segments {
        let lo = (seg as f64 / n_segments as f64).max(w0);
        let hi = ((seg + 1) as f64 / n_segments as f64).min(w1);
        if hi <= lo {
            continue;
        }
        let seg_len = 1.0 / n_segments as f64;
        let mut ci = 0.0;
        let mut sj = 0.0;
        for (kk, &a) in probe.coeffs.iter().enumerate() {
            let k = (kk + 1) as f64;
            ci += a * (int_cos(k, hi) - int_cos(k, lo));
            sj += a * (int_sin(k, hi) - int_sin(k, lo));
        }
        values[(seg, probe.i_bar)] = ci / seg_len;
        values[(seg, probe.j_bar)] = sj / seg_len;
    }
    Control::new(values)
}

/// Window quadratic data: the exact second differential paired with
/// lambda, the closed-form model from the window matrix M, and M
/// itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GohQuadratic {
    pub q_exact: f64,
    pub q_model: f64,
    pub m_matrix: Vec<Vec<f64>>,
}

/// Window matrix M_ij = 2 p(t_bar) . D X^i (X^j) at gamma(t_bar), with
/// p(t) = lambda . S(1) S(t)^-1 interpolated linearly on the grid.
pub fn window_matrix(
    bundle: &TrajectoryBundle,
    lambda: &DVector<f64>,
    t_bar: f64,
) -> Result<DMatrix<f64>> {
    let frame = bundle.frame();
    let m = frame.rank_m();
    let lift = reconstruct(bundle, lambda, 1)?;
    let k_total = bundle.n_steps() as f64;
    let pos = (t_bar * k_total).clamp(0.0, k_total);
    let k0 = pos.floor() as usize;
    let k1 = (k0 + 1).min(bundle.n_steps());
    let frac = pos - k0 as f64;
    let p = &lift.p[k0] * (1.0 - frac) + &lift.p[k1] * frac;
    let x = &bundle.gamma()[k0] * (1.0 - frac) + &bundle.gamma()[k1] * frac;
    let mut mm = DMatrix::zeros(m, m);
    for i in 0..m {
        let jet_i = frame.eval_jet(i, &x)?;
        for j in 0..m {
            let xj = frame.field_value(j, &x)?;
            mm[(i, j)] = 2.0 * p.dot(&(&jet_i.jacobian * xj));
        }
    }
    Ok(mm)
}

/// Closed-form value of the window quadratic for the cos/sin probe
/// family: (M_ji - M_ij) * delta^2/(4 pi) * sum_k a_k^2 / k.
///
/// The quadratic pairs the pointwise control with the window matrix
/// applied to its running integral, Q(v) = int <v(t), M w(t)> dt; this
/// orientation is the one that reproduces lambda . D^2 E on the probe
/// (checked against the exact second differential).
pub fn probe_model_value(m_matrix: &DMatrix<f64>, probe: &OscProbe) -> f64 {
    let anti = m_matrix[(probe.j_bar, probe.i_bar)] - m_matrix[(probe.i_bar, probe.j_bar)];
    let series: f64 = probe
        .coeffs
        .iter()
        .enumerate()
        .map(|(kk, &a)| a * a / (kk + 1) as f64)
        .sum();
    anti * probe.delta * probe.delta / (4.0 * std::f64::consts::PI) * series
}

/// Window quadratic evaluated by quadrature for an arbitrary control
/// direction (the generic route, exposed alongside the closed form):
/// int <v(t), M w(t)> dt with w the running integral of v.
pub fn window_quadratic_quadrature(
    m_matrix: &DMatrix<f64>,
    v: &Control,
    t_bar: f64,
    delta: f64,
) -> f64 {
    let k = v.n_segments();
    let h = 1.0 / k as f64;
    let mut acc = 0.0;
    let mut w = DVector::zeros(v.m());
    for seg in 0..k {
        let lo = (seg as f64 * h).max(t_bar);
        let hi = ((seg + 1) as f64 * h).min(t_bar + delta);
        if hi <= lo {
            continue;
        }
        let val = v.value(seg);
        // exact over the sub-interval: w is linear, v constant
        let w_mid = &w + &val * ((hi - lo) / 2.0);
        acc += val.dot(&(m_matrix * &w_mid)) * (hi - lo);
        w += &val * (hi - lo);
    }
    acc
}

/// Exact-vs-model comparison of the localized second differential.
pub fn goh_quadratic(
    bundle: &TrajectoryBundle,
    lambda: &DVector<f64>,
    probe: &OscProbe,
) -> Result<GohQuadratic> {
    let frame = bundle.frame();
    probe.check(frame.rank_m())?;
    let control = osc_probe(probe, bundle.control().n_segments(), frame.rank_m())?;
    let q_exact = lambda.dot(&d2_endpoint(bundle, &control)?);
    let mm = window_matrix(bundle, lambda, probe.t_bar)?;
    let q_model = probe_model_value(&mm, probe);
    Ok(GohQuadratic {
        q_exact,
        q_model,
        m_matrix: (0..mm.nrows())
            .map(|r| (0..mm.ncols()).map(|c| mm[(r, c)]).collect())
            .collect(),
    })
}

/// Full index report (the external JSON interface).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexReport {
    pub corank: usize,
    pub kernel_dim: usize,
    pub negative_index: usize,
    pub spectrum_head: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goh: Option<GohQuadratic>,
}

/// Assemble the index report for a control and covector, optionally
/// with a probe comparison attached.
pub fn index_report(
    frame: &PolyFrame,
    control: &Control,
    x0: &DVector<f64>,
    lambda: &DVector<f64>,
    dim_cap: usize,
    probe: Option<&OscProbe>,
    iopts: IntegrateOpts,
) -> Result<IndexReport> {
    let bundle = integrate(frame, control, x0, iopts)?;
    let op = d_endpoint_operator(&bundle);
    let basis = kernel_basis(&op, control, dim_cap);
    let form = restricted_form(&bundle, lambda, &basis)?;
    let goh = probe.map(|p| goh_quadratic(&bundle, lambda, p)).transpose()?;
    Ok(IndexReport {
        corank: op.corank,
        kernel_dim: basis.len(),
        negative_index: negative_index(&form.gram, crate::RANK_RTOL),
        spectrum_head: spectrum_head(&form.gram),
        goh,
    })
}

// ---------------------------------------------------------------------------
// Openness experiment
// ---------------------------------------------------------------------------

/// Options for the quantified-openness experiment.
#[derive(Debug, Clone)]
pub struct OpennessOpts {
    pub n_targets: usize,
    pub radii: Vec<f64>,
    /// explicit target directions override the deterministic sample
    pub directions: Option<Vec<DVector<f64>>>,
    pub kernel_cap: usize,
    pub max_iters: usize,
    /// success when |E - x| <= rel_tol * radius
    pub rel_tol: f64,
    pub iopts: IntegrateOpts,
}

impl Default for OpennessOpts {
    fn default() -> Self {
        OpennessOpts {
            n_targets: 8,
            radii: vec![0.08, 0.04, 0.02, 0.01],
            directions: None,
            kernel_cap: 12,
            max_iters: 30,
            rel_tol: 1e-3,
            iopts: IntegrateOpts::default(),
        }
    }
}

/// One attempted target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpennessRow {
    pub radius: f64,
    pub direction: Vec<f64>,
    pub success: bool,
    pub w1_norm: f64,
    pub w2_norm: f64,
    pub residual: f64,
}

/// Aggregated experiment results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpennessReport {
    pub success_rate: f64,
    /// envelope of w2/rho and w1/sqrt(rho) over successful targets
    pub empirical_k: f64,
    /// largest radius at which every sampled target succeeded
    pub empirical_rho: f64,
    pub split_norms: Vec<OpennessRow>,
}

fn axis_directions(n: usize, count: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::new();
    for i in 0..n {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        dirs.push(v.clone());
        dirs.push(-v);
    }
    let extra = crate::numeric::unit_sphere_samples(n, count.saturating_sub(dirs.len()).max(1));
    for v in extra {
        if dirs.len() >= count {
            break;
        }
        dirs.push(v);
    }
    dirs.truncate(count.max(1));
    dirs
}

/// Solve E(u + w1 + w2) = x with w1 constrained to the discretized
/// kernel of D_u E and w2 to its row space: Gauss-Newton on the row
/// space interleaved with a kernel-space correction for the components
/// the first-order step cannot reach.
pub fn openness_experiment(
    frame: &PolyFrame,
    u: &Control,
    x0: &DVector<f64>,
    opts: &OpennessOpts,
) -> Result<OpennessReport> {
    let base_bundle = integrate(frame, u, x0, opts.iopts)?;
    let base_endpoint = base_bundle.endpoint().clone();
    let op = d_endpoint_operator(&base_bundle);
    let null_cov = abnormal_covectors(&op, None);
    let kernel = kernel_basis(&op, u, opts.kernel_cap);

    // quadratic reach of each kernel direction into the null components
    let kernel_quad: Vec<Vec<f64>> = kernel
        .iter()
        .map(|v| {
            let d2 = d2_endpoint(&base_bundle, v).expect("segmentation matches");
            null_cov.iter().map(|q| 0.5 * q.dot(&d2)).collect()
        })
        .collect();

    let dirs = opts
        .directions
        .clone()
        .unwrap_or_else(|| axis_directions(frame.dim_n(), opts.n_targets));

    let mut rows = Vec::new();
    for &radius in &opts.radii {
        for dir in &dirs {
            let target = &base_endpoint + dir * radius;
            rows.push(reach_target(
                frame,
                u,
                x0,
                &target,
                &base_endpoint,
                &op,
                &null_cov,
                &kernel,
                &kernel_quad,
                radius,
                dir,
                opts,
            ));
        }
    }

    let successes: Vec<&OpennessRow> = rows.iter().filter(|r| r.success).collect();
    let success_rate = successes.len() as f64 / rows.len().max(1) as f64;
    let mut empirical_k = 0.0_f64;
    for r in &successes {
        let rho = r.radius;
        empirical_k = empirical_k.max(r.w2_norm / rho).max(r.w1_norm / rho.sqrt());
    }
    let mut empirical_rho = 0.0_f64;
    for &radius in &opts.radii {
        let all = rows.iter().filter(|r| r.radius == radius).all(|r| r.success);
        if all {
            empirical_rho = empirical_rho.max(radius);
        }
    }
    Ok(OpennessReport { success_rate, empirical_k, empirical_rho, split_norms: rows })
}

#[allow(clippy::too_many_arguments)]
fn reach_target(
    frame: &PolyFrame,
    u: &Control,
    x0: &DVector<f64>,
    target: &DVector<f64>,
    base_endpoint: &DVector<f64>,
    base_op: &EndpointOperator,
    null_cov: &[DVector<f64>],
    kernel: &[Control],
    kernel_quad: &[Vec<f64>],
    radius: f64,
    dir: &DVector<f64>,
    opts: &OpennessOpts,
) -> OpennessRow {
    let m = u.m();
    let segments = u.n_segments() as f64;
    let dim = u.to_coeffs().len();
    let mut w1 = DVector::zeros(dim);
    let mut w2 = DVector::zeros(dim);
    let tol = opts.rel_tol * radius;

    // kernel correction first: match the null components of the offset
    // with the quadratic reach of the kernel directions
    if !null_cov.is_empty() && !kernel.is_empty() {
        let offset = target - base_endpoint;
        for (qi, q) in null_cov.iter().enumerate() {
            let mu = q.dot(&offset);
            if mu.abs() < 1e-14 {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (ki, reach) in kernel_quad.iter().enumerate() {
                let r = reach[qi];
                if r * mu > 0.0 && best.map(|(_, s)| r.abs() > s).unwrap_or(true) {
                    best = Some((ki, r.abs()));
                }
            }
            if let Some((ki, _)) = best {
                let scale = (mu / kernel_quad[ki][qi]).sqrt();
                w1 += kernel[ki].to_coeffs() * scale;
            }
        }
    }

    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let coeffs = u.to_coeffs() + &w1 + &w2;
        let control = Control::from_coeffs(&coeffs, m);
        let Ok(bundle) = integrate(frame, &control, x0, opts.iopts) else {
            break;
        };
        let r = target - bundle.endpoint();
        residual = r.norm();
        if residual <= tol {
            break;
        }
        // Gauss-Newton step, then projected onto the base row space so
        // that w2 stays complementary to the kernel
        let op_now = d_endpoint_operator(&bundle);
        let mut step = DVector::zeros(dim);
        for (j, &s) in op_now.singular_values.iter().enumerate() {
            if s > op_now.threshold {
                let uj = DVector::from_column_slice(op_now.u.column(j).as_slice());
                let vj = op_now.v_t.row(j).transpose();
                step += vj * (uj.dot(&r) / s);
            }
        }
        let mut projected = DVector::zeros(dim);
        for (j, &s) in base_op.singular_values.iter().enumerate() {
            if s > base_op.threshold {
                let vj = base_op.v_t.row(j).transpose();
                projected += &vj * vj.dot(&step);
            }
        }
        if projected.norm() < 1e-16 {
            break;
        }
        w2 += projected;
    }

    let l2 = |w: &DVector<f64>| (w.norm_squared() / segments).sqrt();
    OpennessRow {
        radius,
        direction: dir.iter().copied().collect(),
        success: residual <= tol,
        w1_norm: l2(&w1),
        w2_norm: l2(&w2),
        residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srgeom::{flat_rn, heisenberg, martinet};
    use approx::assert_relative_eq;

    fn bundle(frame: &PolyFrame, control: &Control) -> TrajectoryBundle {
        integrate(
            frame,
            control,
            &DVector::zeros(frame.dim_n()),
            IntegrateOpts::default(),
        )
        .unwrap()
    }

    #[test]
    fn kernel_basis_dimensions() {
        let flat = flat_rn(2);
        let u = Control::constant(8, &[0.4, 0.1]);
        let op = d_endpoint_operator(&bundle(&flat, &u));
        let basis = kernel_basis(&op, &u, usize::MAX);
        assert_eq!(basis.len(), 14);

        let mart = martinet();
        let u = Control::constant(64, &[0.0, 1.0]);
        let op = d_endpoint_operator(&bundle(&mart, &u));
        let basis = kernel_basis(&op, &u, usize::MAX);
        assert_eq!(basis.len(), 126);

        let capped = kernel_basis(&op, &u, 10);
        assert_eq!(capped.len(), 10);
    }

    #[test]
    fn kernel_basis_is_l2_orthonormal_and_null() {
        let mart = martinet();
        let u = Control::constant(32, &[0.0, 1.0]);
        let b = bundle(&mart, &u);
        let op = d_endpoint_operator(&b);
        let basis = kernel_basis(&op, &u, 12);
        let k = u.n_segments() as f64;
        for (i, vi) in basis.iter().enumerate() {
            assert!((op.apply(vi)).norm() < 1e-8, "basis vector not null");
            for (j, vj) in basis.iter().enumerate() {
                let dot = vi.to_coeffs().dot(&vj.to_coeffs()) / k;
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn restricted_form_flat_zero() {
        let flat = flat_rn(2);
        let u = Control::constant(8, &[0.4, 0.1]);
        let b = bundle(&flat, &u);
        let op = d_endpoint_operator(&b);
        let basis = kernel_basis(&op, &u, 6);
        let form = restricted_form(&b, &DVector::from_vec(vec![0.3, -0.8]), &basis).unwrap();
        assert!(form.gram.amax() < 1e-12);
        assert_eq!(negative_index(&form.gram, 1e-9), 0);
    }

    #[test]
    fn restricted_form_martinet_psd_on_plane() {
        // the window matrix vanishes along x = 0; the remaining form is
        // the square of the first-component running integral, PSD
        let mart = martinet();
        let u = Control::constant(32, &[0.0, 1.0]);
        let b = bundle(&mart, &u);
        let op = d_endpoint_operator(&b);
        let basis = kernel_basis(&op, &u, 16);
        let lambda = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let form = restricted_form(&b, &lambda, &basis).unwrap();
        assert_eq!(negative_index(&form.gram, 1e-9), 0);
        for (i, v) in basis.iter().enumerate() {
            let q = lambda.dot(&d2_endpoint(&b, v).unwrap());
            assert_relative_eq!(form.gram[(i, i)], q, epsilon = 1e-8);
        }
    }

    #[test]
    fn negative_index_counts() {
        let zero = DMatrix::zeros(4, 4);
        assert_eq!(negative_index(&zero, 1e-9), 0);
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0, 3.0]));
        assert_eq!(negative_index(&diag, 1e-9), 2);
    }

    #[test]
    fn negative_index_invariant_under_rotation() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let d = 6;
        let diag =
            DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, -0.5, 0.0, 0.1, 1.0, 3.0]));
        for _ in 0..2 {
            let raw = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            let qr = raw.qr();
            let q = qr.q();
            let rotated = &q * &diag * q.transpose();
            assert_eq!(negative_index(&rotated, 1e-9), negative_index(&diag, 1e-9));
        }
    }

    #[test]
    fn osc_probe_norms() {
        let probe = OscProbe { t_bar: 0.25, delta: 0.5, i_bar: 0, j_bar: 1, coeffs: vec![1.0] };
        let v = osc_probe(&probe, 512, 2).unwrap();
        let expected = probe.continuum_norm_sq();
        assert!((v.l2_norm_sq() - expected).abs() / expected < 0.01);

        let probe2 =
            OscProbe { t_bar: 0.4, delta: 0.25, i_bar: 0, j_bar: 1, coeffs: vec![1.0, 1.0] };
        let v2 = osc_probe(&probe2, 512, 2).unwrap();
        let expected2 = probe2.continuum_norm_sq();
        assert!((v2.l2_norm_sq() - expected2).abs() / expected2 < 0.01);

        let zero = osc_probe(
            &OscProbe { t_bar: 0.1, delta: 0.3, i_bar: 0, j_bar: 1, coeffs: vec![0.0, 0.0] },
            64,
            2,
        )
        .unwrap();
        assert_eq!(zero.l2_norm_sq(), 0.0);
    }

    #[test]
    fn osc_probe_norm_convergence_rate() {
        let probe =
            OscProbe { t_bar: 0.23, delta: 0.5, i_bar: 0, j_bar: 1, coeffs: vec![1.0, 0.5] };
        let expected = probe.continuum_norm_sq();
        let mut errs = Vec::new();
        for segs in [64usize, 128, 256, 512, 1024] {
            let v = osc_probe(&probe, segs, 2).unwrap();
            errs.push(((v.l2_norm_sq() - expected).abs(), segs as f64));
        }
        let slope = ((errs[4].0.max(1e-300)).ln() - (errs[0].0.max(1e-300)).ln())
            / (errs[4].1.ln() - errs[0].1.ln());
        assert!(slope <= -0.8, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn window_out_of_range() {
        let probe = OscProbe { t_bar: 0.8, delta: 0.5, i_bar: 0, j_bar: 1, coeffs: vec![1.0] };
        assert!(matches!(osc_probe(&probe, 64, 2), Err(Error::WindowOutOfRange { .. })));
    }

    #[test]
    fn goh_quadratic_flat_zero() {
        let flat = flat_rn(2);
        let u = Control::constant(64, &[0.3, 0.3]);
        let b = bundle(&flat, &u);
        let probe = OscProbe { t_bar: 0.25, delta: 0.5, i_bar: 0, j_bar: 1, coeffs: vec![1.0] };
        let g = goh_quadratic(&b, &DVector::from_vec(vec![1.0, 1.0]), &probe).unwrap();
        assert_eq!(g.q_exact, 0.0);
        assert_eq!(g.q_model, 0.0);
        assert!(g.m_matrix.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn goh_quadratic_martinet_zero_matrix() {
        // M vanishes along x = 0, so the model is zero; the exact value
        // is the pure Hessian term int (int v_1)^2 = delta^3 / (8 pi^2)
        // for the single-frequency probe
        let mart = martinet();
        let u = Control::constant(64, &[0.0, 1.0]);
        let b = bundle(&mart, &u);
        let probe = OscProbe { t_bar: 0.25, delta: 0.5, i_bar: 0, j_bar: 1, coeffs: vec![1.0] };
        let g = goh_quadratic(&b, &DVector::from_vec(vec![0.0, 0.0, 1.0]), &probe).unwrap();
        for row in &g.m_matrix {
            for &x in row {
                assert!(x.abs() < 1e-12);
            }
        }
        assert_eq!(g.q_model, 0.0);
        let hand = probe.delta.powi(3) / (8.0 * std::f64::consts::PI.powi(2));
        assert!(
            (g.q_exact - hand).abs() / hand < 0.03,
            "q_exact {} vs hand value {hand}",
            g.q_exact
        );
    }

    #[test]
    fn goh_quadratic_heisenberg_window_model_is_exact() {
        // step-2 structure: p_3 is constant and the first variation's
        // horizontal components integrate v exactly, so the window
        // model reproduces the second differential up to discretization
        let heis = heisenberg();
        let u = Control::constant(2560, &[1.0, 0.0]);
        let b = integrate(
            &heis,
            &u,
            &DVector::zeros(3),
            IntegrateOpts { substeps: 2, ..Default::default() },
        )
        .unwrap();
        let lambda = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let mm = window_matrix(&b, &lambda, 0.5).unwrap();
        assert_relative_eq!(mm[(0, 1)], -1.0, epsilon = 1e-6);
        assert_relative_eq!(mm[(1, 0)], 1.0, epsilon = 1e-6);

        for &delta in &[0.2, 0.1, 0.05, 0.025] {
            let probe = OscProbe { t_bar: 0.5, delta, i_bar: 0, j_bar: 1, coeffs: vec![1.0] };
            let g = goh_quadratic(&b, &lambda, &probe).unwrap();
            let expected = delta * delta / (2.0 * std::f64::consts::PI);
            assert_relative_eq!(g.q_model, expected, epsilon = 1e-9);
            // the gap is the probe-projection floor, ~(pi h / delta)^2 / 3
            // relative; the flipped orientation would sit at 200%
            assert!(
                (g.q_exact - g.q_model).abs() <= 0.01 * g.q_model.abs(),
                "delta {delta}: exact {} model {}",
                g.q_exact,
                g.q_model
            );
        }
    }

    /// Engel carries genuine window error (the frozen coefficients and
    /// the Hessian term both vary along the path): the normalized gap
    /// scales as delta^2.
    #[test]
    fn goh_quadratic_engel_delta_squared_scaling() {
        let frame = crate::srgeom::engel();
        let u = Control::constant(2560, &[1.0, 0.3]);
        let b = integrate(
            &frame,
            &u,
            &DVector::zeros(4),
            IntegrateOpts { substeps: 2, ..Default::default() },
        )
        .unwrap();
        let lambda = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let mut scaled = Vec::new();
        for &delta in &[0.2, 0.1, 0.05, 0.025] {
            let probe = OscProbe { t_bar: 0.5, delta, i_bar: 0, j_bar: 1, coeffs: vec![1.0] };
            let g = goh_quadratic(&b, &lambda, &probe).unwrap();
            let vnorm2 = probe.continuum_norm_sq();
            scaled.push(((g.q_exact - g.q_model).abs() / vnorm2, delta));
        }
        let slope = (scaled[0].0.ln() - scaled[3].0.ln()) / (scaled[0].1.ln() - scaled[3].1.ln());
        assert!(slope >= 1.8, "scaling slope {slope}: {scaled:?}");
    }

    /// Synthetic antisymmetric window model: closed form vs quadrature,
    /// and negative-index growth on probe spans.
    #[test]
    fn antisymmetric_model_and_index_growth() {
        let beta = 0.8;
        let mm = DMatrix::from_row_slice(2, 2, &[0.0, beta, -beta, 0.0]);
        let probe =
            OscProbe { t_bar: 0.2, delta: 0.5, i_bar: 0, j_bar: 1, coeffs: vec![1.0, 0.7] };
        let closed = probe_model_value(&mm, &probe);
        // literal closed form: - sum_k delta^2 a_k^2 beta / (2 pi k)
        let literal: f64 = probe
            .coeffs
            .iter()
            .enumerate()
            .map(|(kk, &a)| {
                -probe.delta * probe.delta * a * a * beta
                    / (2.0 * std::f64::consts::PI * (kk + 1) as f64)
            })
            .sum();
        assert_relative_eq!(closed, literal, epsilon = 1e-12);
        let v = osc_probe(&probe, 512, 2).unwrap();
        let quad = window_quadratic_quadrature(&mm, &v, probe.t_bar, probe.delta);
        assert!(
            (closed - quad).abs() / closed.abs() < 0.02,
            "closed {closed} vs quadrature {quad}"
        );

        for n_bar in [2usize, 4, 8] {
            let mut basis: Vec<Control> = Vec::new();
            for k in 1..=n_bar {
                let mut coeffs = vec![0.0; n_bar];
                coeffs[k - 1] = 1.0;
                let p1 = OscProbe {
                    t_bar: 0.2,
                    delta: 0.5,
                    i_bar: 0,
                    j_bar: 1,
                    coeffs: coeffs.clone(),
                };
                let p2 = OscProbe { t_bar: 0.2, delta: 0.5, i_bar: 1, j_bar: 0, coeffs };
                basis.push(osc_probe(&p1, 512, 2).unwrap());
                basis.push(osc_probe(&p2, 512, 2).unwrap());
            }
            let dim = basis.len();
            let q = |v: &Control| window_quadratic_quadrature(&mm, v, 0.2, 0.5);
            let mut gram = DMatrix::zeros(dim, dim);
            for i in 0..dim {
                for j in i..dim {
                    let plus =
                        Control::from_coeffs(&(basis[i].to_coeffs() + basis[j].to_coeffs()), 2);
                    let minus =
                        Control::from_coeffs(&(basis[i].to_coeffs() - basis[j].to_coeffs()), 2);
                    let bval = (q(&plus) - q(&minus)) / 4.0;
                    gram[(i, j)] = bval;
                    gram[(j, i)] = bval;
                }
            }
            let idx = negative_index(&gram, 1e-9);
            assert!(idx >= n_bar, "negative index {idx} < {n_bar}");
        }
    }

    #[test]
    fn openness_flat_submersion() {
        let flat = flat_rn(2);
        let u = Control::constant(16, &[0.5, 0.2]);
        let report = openness_experiment(
            &flat,
            &u,
            &DVector::zeros(2),
            &OpennessOpts { n_targets: 6, radii: vec![0.1, 0.05], ..Default::default() },
        )
        .unwrap();
        assert_eq!(report.success_rate, 1.0);
        for row in &report.split_norms {
            assert!(row.w1_norm == 0.0, "w1 used on a submersion point");
        }
    }

    #[test]
    fn openness_heisenberg_submersion() {
        let heis = heisenberg();
        let u = Control::constant(32, &[1.0, 0.0]);
        let report = openness_experiment(
            &heis,
            &u,
            &DVector::zeros(3),
            &OpennessOpts { n_targets: 6, radii: vec![0.04, 0.02], ..Default::default() },
        )
        .unwrap();
        assert_eq!(report.success_rate, 1.0, "rows: {:#?}", report.split_norms);
        let k_at = |radius: f64| {
            report
                .split_norms
                .iter()
                .filter(|r| r.radius == radius && r.success)
                .map(|r| r.w2_norm / r.radius)
                .fold(0.0_f64, f64::max)
        };
        let (k1, k2) = (k_at(0.04), k_at(0.02));
        assert!(k1 > 0.0 && k2 > 0.0);
        let ratio = (k1 / k2).max(k2 / k1);
        assert!(ratio < 2.0, "K ratio {ratio}");
    }

    #[test]
    fn openness_martinet_sqrt_envelope() {
        let mart = martinet();
        let u = Control::constant(32, &[0.0, 1.0]);
        let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let radii = vec![0.02, 0.01, 0.005, 0.0025];
        let report = openness_experiment(
            &mart,
            &u,
            &DVector::zeros(3),
            &OpennessOpts {
                radii: radii.clone(),
                directions: Some(vec![e3.clone(), -e3]),
                ..Default::default()
            },
        )
        .unwrap();
        let mut pts = Vec::new();
        for row in &report.split_norms {
            if row.direction[2] > 0.0 {
                assert!(row.success, "+e3 at radius {} failed", row.radius);
                pts.push((row.radius.ln(), row.w1_norm.ln()));
            } else {
                assert!(!row.success, "-e3 should be unreachable");
            }
        }
        let slope = (pts[0].1 - pts[3].1) / (pts[0].0 - pts[3].0);
        assert!((slope - 0.5).abs() <= 0.15, "w1 slope {slope}");
    }
}
