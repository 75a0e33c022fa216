//! Normal extremals via Hamiltonian shooting, extremal reconstruction
//! from a terminal covector, abnormal covector detection, and Goh
//! condition diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::endpoint::EndpointOperator;
use crate::flow::TrajectoryBundle;
use crate::srgeom::PolyFrame;
use crate::{Error, Result, GOH_TOL};

/// Classification of an extremal lift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremalKind {
    Normal,
    Abnormal,
}

/// A lifted path (gamma(t), p(t)) in T*R^n with its classification.
///
/// Covectors follow the row convention: `p . v` pairs p with tangent
/// vectors, and p is stored as a plain vector of components.
#[derive(Debug, Clone)]
pub struct Extremal {
    pub grid: Vec<f64>,
    pub gamma: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    pub kind: ExtremalKind,
    pub terminal_covector: DVector<f64>,
    pub multiplier0: u8,
}

impl Extremal {
    pub fn endpoint(&self) -> &DVector<f64> {
        self.gamma.last().unwrap()
    }

    /// CSV dump: columns t, gamma_1..n, p_1..n.
    pub fn to_csv(&self) -> String {
        let n = self.gamma[0].len();
        let mut out = String::new();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("gamma_{i}")));
        header.extend((1..=n).map(|i| format!("p_{i}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for k in 0..self.grid.len() {
            let mut row = vec![format!("{}", self.grid[k])];
            row.extend((0..n).map(|i| format!("{}", self.gamma[k][i])));
            row.extend((0..n).map(|i| format!("{}", self.p[k][i])));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Sub-Riemannian Hamiltonian for an orthonormal frame:
/// H(x, p) = (1/2) sum_i (p . X^i(x))^2.
pub fn hamiltonian(frame: &PolyFrame, x: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let mut h = 0.0;
    for i in 0..frame.rank_m() {
        let xi = frame.field(i).expect("index in range").value(x);
        let pi = p.dot(&xi);
        h += pi * pi;
    }
    0.5 * h
}

fn hamiltonian_rates(
    frame: &PolyFrame,
    x: &DVector<f64>,
    p: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = frame.dim_n();
    let mut xdot = DVector::zeros(n);
    let mut pdot = DVector::zeros(n);
    for i in 0..frame.rank_m() {
        let jet = frame.eval_jet(i, x).expect("index in range");
        let pi = p.dot(&jet.value);
        xdot += &jet.value * pi;
        // dH/dx_j = sum_i (p . X^i)(p^T J_i e_j)
        pdot -= jet.jacobian.transpose() * p * pi;
    }
    (xdot, pdot)
}

/// Integrate the Hamiltonian system on [0, t_final] by fixed-step RK4.
///
/// Shooting with covector lambda*p for time 1 agrees with shooting p
/// for time lambda (positive homogeneity of the quadratic Hamiltonian).
pub fn shoot_normal_for_time(
    frame: &PolyFrame,
    x0: &DVector<f64>,
    p0: &DVector<f64>,
    t_final: f64,
    substeps: usize,
    blowup: f64,
) -> Result<Extremal> {
    let k_total = substeps.max(1);
    let h = t_final / k_total as f64;
    let mut x = x0.clone();
    let mut p = p0.clone();
    let mut grid = Vec::with_capacity(k_total + 1);
    let mut gamma = Vec::with_capacity(k_total + 1);
    let mut ps = Vec::with_capacity(k_total + 1);
    grid.push(0.0);
    gamma.push(x.clone());
    ps.push(p.clone());
    for k in 0..k_total {
        let (kx1, kp1) = hamiltonian_rates(frame, &x, &p);
        let (kx2, kp2) = hamiltonian_rates(frame, &(&x + &kx1 * (h / 2.0)), &(&p + &kp1 * (h / 2.0)));
        let (kx3, kp3) = hamiltonian_rates(frame, &(&x + &kx2 * (h / 2.0)), &(&p + &kp2 * (h / 2.0)));
        let (kx4, kp4) = hamiltonian_rates(frame, &(&x + &kx3 * h), &(&p + &kp3 * h));
        x += (kx1 + kx2 * 2.0 + kx3 * 2.0 + kx4) * (h / 6.0);
        p += (kp1 + kp2 * 2.0 + kp3 * 2.0 + kp4) * (h / 6.0);
        let t = (k + 1) as f64 * h;
        if !x.iter().all(|v| v.is_finite()) || !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        if x.amax().max(p.amax()) > blowup {
            return Err(Error::BlowUp { t, bound: blowup });
        }
        grid.push(t);
        gamma.push(x.clone());
        ps.push(p.clone());
    }
    let terminal = ps.last().unwrap().clone();
    Ok(Extremal {
        grid,
        gamma,
        p: ps,
        kind: ExtremalKind::Normal,
        terminal_covector: terminal,
        multiplier0: 1,
    })
}

/// Normal extremal on [0, 1] from an initial covector; the endpoint is
/// the exponential of p0 at x0.
pub fn shoot_normal(
    frame: &PolyFrame,
    x0: &DVector<f64>,
    p0: &DVector<f64>,
    substeps: usize,
) -> Result<Extremal> {
    shoot_normal_for_time(frame, x0, p0, 1.0, substeps, crate::flow::DEFAULT_BLOWUP)
}

/// Reconstruct the extremal lift p(t) = p1 . S(1) S(t)^-1 along an
/// integrated trajectory. `multiplier0 = 0` tags the lift abnormal,
/// `1` tags it normal.
pub fn reconstruct(bundle: &TrajectoryBundle, p1: &DVector<f64>, multiplier0: u8) -> Result<Extremal> {
    if multiplier0 == 0 && p1.norm() == 0.0 {
        return Err(Error::ZeroCovector);
    }
    let s1 = bundle.s().last().unwrap();
    let p: Vec<DVector<f64>> = bundle
        .s_inv()
        .iter()
        .map(|sinv| (s1 * sinv).transpose() * p1)
        .collect();
    Ok(Extremal {
        grid: bundle.grid().to_vec(),
        gamma: bundle.gamma().to_vec(),
        p,
        kind: if multiplier0 == 0 { ExtremalKind::Abnormal } else { ExtremalKind::Normal },
        terminal_covector: p1.clone(),
        multiplier0,
    })
}

/// Extract the control realized by a normal extremal: u(t) = B(t)* p(t)*,
/// sampled at control-segment midpoints of the extremal grid.
pub fn control_from_extremal(
    frame: &PolyFrame,
    extremal: &Extremal,
    n_segments: usize,
) -> crate::flow::Control {
    let k_grid = extremal.grid.len() - 1;
    crate::flow::Control::from_fn(n_segments, frame.rank_m(), |t| {
        // nearest grid node to the midpoint time
        let k = ((t * k_grid as f64).round() as usize).min(k_grid);
        let b = frame.b_matrix(&extremal.gamma[k]);
        let u = b.transpose() * &extremal.p[k];
        u.iter().copied().collect()
    })
}

/// Orthonormal basis of (Im D_u E)^perp from the left singular vectors
/// below the rank threshold; empty exactly when the corank is zero.
pub fn abnormal_covectors(op: &EndpointOperator, tol: Option<f64>) -> Vec<DVector<f64>> {
    let threshold = tol.unwrap_or(op.threshold);
    let n = op.matrix.nrows();
    let mut out = Vec::new();
    for (j, &s) in op.singular_values.iter().enumerate() {
        if s <= threshold {
            out.push(DVector::from_column_slice(op.u.column(j).as_slice()));
        }
    }
    // thin SVD lists min(n, cols) values; any remaining directions of
    // R^n outside the span are also null (cols < n never happens for
    // the discretizations used here, but stay correct regardless)
    if op.singular_values.len() < n {
        let existing: Vec<DVector<f64>> = (0..op.singular_values.len())
            .map(|j| DVector::from_column_slice(op.u.column(j).as_slice()))
            .collect();
        out.extend(crate::numeric::complete_orthonormal(&existing, n));
    }
    out
}

/// Goh condition diagnostics for an extremal lift.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GohDiagnostics {
    /// max over grid times and field pairs of |p(t) . [X^i, X^j](gamma(t))|
    pub residual: f64,
    /// residual / max_t |p(t)|
    pub normalized: f64,
    pub goh_holds: bool,
    /// dimension of the subspace of abnormal covectors whose lifts
    /// satisfy the Goh condition at tolerance
    pub goh_rank: usize,
}

fn bracket_residual_vector(
    frame: &PolyFrame,
    extremal: &Extremal,
    bracket_values: &[Vec<DVector<f64>>],
) -> Vec<f64> {
    let mut out = Vec::new();
    let weight = 1.0 / (extremal.grid.len() as f64).sqrt();
    for (k, p) in extremal.p.iter().enumerate() {
        for pair_values in bracket_values {
            out.push(p.dot(&pair_values[k]) * weight);
        }
    }
    let _ = frame;
    out
}

/// Compute Goh diagnostics for `extremal` along `bundle`; `goh_rank`
/// is estimated from the operator's abnormal covector basis by the
/// kernel dimension of the Gram matrix of residuals.
pub fn goh_diagnostics(
    bundle: &TrajectoryBundle,
    extremal: &Extremal,
    op: &EndpointOperator,
    tol: Option<f64>,
) -> Result<GohDiagnostics> {
    let tol = tol.unwrap_or(GOH_TOL);
    let frame = bundle.frame();
    let m = frame.rank_m();

    // bracket fields evaluated along the grid, one list per pair i < j
    let mut bracket_values: Vec<Vec<DVector<f64>>> = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let field = frame.bracket_field(i, j)?;
            bracket_values.push(bundle.gamma().iter().map(|x| field.value(x)).collect());
        }
    }

    let mut residual = 0.0_f64;
    let mut p_max = 0.0_f64;
    for (k, p) in extremal.p.iter().enumerate() {
        p_max = p_max.max(p.norm());
        for pair_values in &bracket_values {
            residual = residual.max(p.dot(&pair_values[k]).abs());
        }
    }
    let normalized = if p_max > 0.0 { residual / p_max } else { 0.0 };

    let covectors = abnormal_covectors(op, None);
    let goh_rank = if covectors.is_empty() {
        0
    } else {
        let lifts: Vec<Extremal> = covectors
            .iter()
            .map(|q| reconstruct(bundle, q, 0))
            .collect::<Result<_>>()?;
        let vecs: Vec<Vec<f64>> = lifts
            .iter()
            .map(|l| bracket_residual_vector(frame, l, &bracket_values))
            .collect();
        let scale = lifts
            .iter()
            .flat_map(|l| l.p.iter().map(|p| p.norm()))
            .fold(0.0_f64, f64::max)
            .max(1e-300);
        let r = covectors.len();
        let gram = DMatrix::from_fn(r, r, |a, b| {
            vecs[a].iter().zip(&vecs[b]).map(|(x, y)| x * y).sum::<f64>()
        });
        let eig = gram.symmetric_eigen();
        let cutoff = (tol * scale) * (tol * scale);
        eig.eigenvalues.iter().filter(|&&l| l.max(0.0) <= cutoff).count()
    };

    Ok(GohDiagnostics {
        residual,
        normalized,
        goh_holds: normalized <= tol,
        goh_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::d_endpoint_operator;
    use crate::flow::{integrate, Control, IntegrateOpts};
    use crate::srgeom::{engel, flat_rn, heisenberg, martinet};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b, c])
    }

    #[test]
    fn hamiltonian_values() {
        let frame = heisenberg();
        assert_eq!(hamiltonian(&frame, &v3(0.0, 0.0, 0.0), &v3(0.0, 0.0, 3.0)), 0.0);
        assert_eq!(hamiltonian(&frame, &v3(0.0, 0.0, 0.0), &v3(1.0, 0.0, 0.0)), 0.5);
        let flat = flat_rn(3);
        let p = v3(1.0, -2.0, 2.0);
        assert_relative_eq!(hamiltonian(&flat, &v3(0.3, 0.1, -0.5), &p), p.norm_squared() / 2.0);
    }

    #[test]
    fn shoot_straight_heisenberg() {
        let frame = heisenberg();
        let ext = shoot_normal(&frame, &v3(0.0, 0.0, 0.0), &v3(1.0, 0.0, 0.0), 256).unwrap();
        assert!((ext.endpoint() - v3(1.0, 0.0, 0.0)).norm() < 1e-10);
        for (x, p) in ext.gamma.iter().zip(&ext.p) {
            assert!((hamiltonian(&frame, x, p) - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn shoot_vertical_covector_is_stationary() {
        let frame = heisenberg();
        let ext = shoot_normal(&frame, &v3(0.0, 0.0, 0.0), &v3(0.0, 0.0, 5.0), 64).unwrap();
        assert!(ext.endpoint().norm() < 1e-12);
    }

    #[test]
    fn shoot_flat_straight_lines() {
        let frame = flat_rn(3);
        let x0 = v3(0.2, -0.1, 0.4);
        let p = v3(0.5, 1.5, -1.0);
        let ext = shoot_normal(&frame, &x0, &p, 64).unwrap();
        assert!((ext.endpoint() - (&x0 + &p)).norm() < 1e-12);
    }

    #[test]
    fn hamiltonian_constant_along_random_extremals() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for frame in [heisenberg(), engel()] {
            for _ in 0..5 {
                let p0 = DVector::from_fn(frame.dim_n(), |_, _| rng.gen_range(-1.5..1.5));
                let x0 = DVector::zeros(frame.dim_n());
                let ext = shoot_normal(&frame, &x0, &p0, 256).unwrap();
                let h0 = hamiltonian(&frame, &x0, &p0);
                for (x, p) in ext.gamma.iter().zip(&ext.p) {
                    let drift = (hamiltonian(&frame, x, p) - h0).abs();
                    assert!(drift <= 1e-6 * (1.0 + h0), "drift {drift}");
                }
            }
        }
    }

    #[test]
    fn exp_time_homogeneity() {
        let frame = heisenberg();
        let x0 = v3(0.0, 0.0, 0.0);
        let p = v3(0.8, -0.4, 1.3);
        for lambda in [0.5, 2.0] {
            let scaled = shoot_normal(&frame, &x0, &(&p * lambda), 512).unwrap();
            let timed = shoot_normal_for_time(&frame, &x0, &p, lambda, 512, 1e6).unwrap();
            assert!(
                (scaled.endpoint() - timed.endpoint()).norm() < 1e-9,
                "lambda {lambda}"
            );
        }
    }

    #[test]
    fn reconstruct_constant_covector_cases() {
        let mart = martinet();
        let bundle = integrate(
            &mart,
            &Control::constant(64, &[0.0, 1.0]),
            &v3(0.0, 0.0, 0.0),
            IntegrateOpts::default(),
        )
        .unwrap();
        let ext = reconstruct(&bundle, &v3(0.0, 0.0, 1.0), 0).unwrap();
        assert_eq!(ext.kind, ExtremalKind::Abnormal);
        for p in &ext.p {
            assert!((p - v3(0.0, 0.0, 1.0)).norm() < 1e-12);
        }

        let flat = flat_rn(2);
        let bundle = integrate(
            &flat,
            &Control::constant(8, &[0.4, -0.2]),
            &DVector::zeros(2),
            IntegrateOpts::default(),
        )
        .unwrap();
        let p1 = DVector::from_vec(vec![1.0, 2.0]);
        let ext = reconstruct(&bundle, &p1, 1).unwrap();
        for p in &ext.p {
            assert!((p - &p1).norm() < 1e-13);
        }
    }

    #[test]
    fn reconstruct_heisenberg_straight_line_adjoint() {
        let frame = heisenberg();
        let control = Control::constant(64, &[1.0, 0.0]);
        let bundle = integrate(&frame, &control, &v3(0.0, 0.0, 0.0), IntegrateOpts::default()).unwrap();
        let ext = reconstruct(&bundle, &v3(1.0, 0.0, 0.0), 1).unwrap();
        // u(t) = B(t)* p(t)* must reproduce the constant control
        let u = control_from_extremal(&frame, &ext, 64);
        let residual = (u.to_coeffs() - control.to_coeffs()).amax();
        assert!(residual <= 1e-8, "adjoint residual {residual}");
    }

    #[test]
    fn zero_covector_rejected() {
        let frame = flat_rn(2);
        let bundle = integrate(
            &frame,
            &Control::constant(4, &[1.0, 0.0]),
            &DVector::zeros(2),
            IntegrateOpts::default(),
        )
        .unwrap();
        assert!(matches!(
            reconstruct(&bundle, &DVector::zeros(2), 0),
            Err(Error::ZeroCovector)
        ));
    }

    #[test]
    fn abnormal_covectors_match_corank() {
        let flat = flat_rn(2);
        let b = integrate(
            &flat,
            &Control::constant(8, &[0.3, 0.3]),
            &DVector::zeros(2),
            IntegrateOpts::default(),
        )
        .unwrap();
        assert!(abnormal_covectors(&d_endpoint_operator(&b), None).is_empty());

        let heis = heisenberg();
        let b = integrate(
            &heis,
            &Control::constant(64, &[1.0, 0.0]),
            &v3(0.0, 0.0, 0.0),
            IntegrateOpts::default(),
        )
        .unwrap();
        assert!(abnormal_covectors(&d_endpoint_operator(&b), None).is_empty());

        let mart = martinet();
        let b = integrate(
            &mart,
            &Control::constant(64, &[0.0, 1.0]),
            &v3(0.0, 0.0, 0.0),
            IntegrateOpts::default(),
        )
        .unwrap();
        let op = d_endpoint_operator(&b);
        let cov = abnormal_covectors(&op, None);
        assert_eq!(cov.len(), 1);
        let q = &cov[0];
        assert!((q[2].abs() - 1.0).abs() < 1e-9, "covector {q}");
        assert!(q[0].abs() < 1e-9 && q[1].abs() < 1e-9);
        // Lagrange residual: q annihilates the image of the operator
        let opnorm = (op.matrix.transpose() * q).norm();
        assert!(opnorm <= op.threshold * 10.0, "residual {opnorm}");
    }

    #[test]
    fn goh_martinet_singular_line() {
        let mart = martinet();
        let bundle = integrate(
            &mart,
            &Control::constant(64, &[0.0, 1.0]),
            &v3(0.0, 0.0, 0.0),
            IntegrateOpts::default(),
        )
        .unwrap();
        let op = d_endpoint_operator(&bundle);
        let ext = reconstruct(&bundle, &v3(0.0, 0.0, 1.0), 0).unwrap();
        let diag = goh_diagnostics(&bundle, &ext, &op, None).unwrap();
        assert!(diag.residual <= 1e-12, "residual {}", diag.residual);
        assert!(diag.goh_holds);
        assert_eq!(diag.goh_rank, 1);
    }

    #[test]
    fn goh_rank_zero_when_corank_zero() {
        let heis = heisenberg();
        let bundle = integrate(
            &heis,
            &Control::constant(64, &[1.0, 0.0]),
            &v3(0.0, 0.0, 0.0),
            IntegrateOpts::default(),
        )
        .unwrap();
        let op = d_endpoint_operator(&bundle);
        let ext = reconstruct(&bundle, &v3(1.0, 0.0, 0.0), 1).unwrap();
        let diag = goh_diagnostics(&bundle, &ext, &op, None).unwrap();
        assert_eq!(diag.goh_rank, 0);

        let flat = flat_rn(2);
        let bundle = integrate(
            &flat,
            &Control::constant(16, &[1.0, 1.0]),
            &DVector::zeros(2),
            IntegrateOpts::default(),
        )
        .unwrap();
        let op = d_endpoint_operator(&bundle);
        let ext = reconstruct(&bundle, &DVector::from_vec(vec![1.0, 0.0]), 1).unwrap();
        let diag = goh_diagnostics(&bundle, &ext, &op, None).unwrap();
        assert_eq!(diag.goh_rank, 0);
    }

    #[test]
    fn extremal_csv_has_schema() {
        let frame = heisenberg();
        let ext = shoot_normal(&frame, &v3(0.0, 0.0, 0.0), &v3(1.0, 0.0, 0.0), 8).unwrap();
        let csv = ext.to_csv();
        assert!(csv.starts_with("t,gamma_1,gamma_2,gamma_3,p_1,p_2,p_3\n"));
        assert_eq!(csv.lines().count(), 10);
    }

    /// Loop closure: shoot, extract u = B* p*, re-integrate, reconstruct
    /// with the terminal covector; the reconstructed lift must match.
    #[test]
    fn shooting_reconstruction_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for frame in [heisenberg(), engel()] {
            for _ in 0..3 {
                let p0 = DVector::from_fn(frame.dim_n(), |_, _| rng.gen_range(-1.0..1.0));
                let x0 = DVector::zeros(frame.dim_n());
                let segments = 256;
                let substeps = 4;
                let ext = shoot_normal(&frame, &x0, &p0, segments * substeps).unwrap();
                let u = control_from_extremal(&frame, &ext, segments);
                let bundle = integrate(&frame, &u, &x0, IntegrateOpts::default()).unwrap();
                let rec = reconstruct(&bundle, ext.p.last().unwrap(), 1).unwrap();
                let mut sup = 0.0_f64;
                for (a, b) in ext.p.iter().zip(&rec.p) {
                    sup = sup.max((a - b).amax());
                }
                assert!(sup <= 1e-5, "loop closure sup error {sup}");
                // energy identity: 2 H(x0, p0) = ||u||^2
                let h0 = hamiltonian(&frame, &x0, &p0);
                let rel = (2.0 * h0 - u.l2_norm_sq()).abs() / (1.0 + 2.0 * h0);
                assert!(rel <= 1e-4, "energy identity error {rel}");
            }
        }
    }
}
