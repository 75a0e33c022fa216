//! Minimizing horizontal paths by constrained control optimization:
//! multi-start augmented-Lagrangian minimization of the energy subject
//! to the end-point constraint, Lagrange multiplier extraction,
//! second-order certificates, and the barrier penalty functional.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::endpoint::{d2_endpoint, d2_energy, d_endpoint_operator, EndpointOperator};
use crate::extremal::{abnormal_covectors, goh_diagnostics, reconstruct, GohDiagnostics};
use crate::flow::{energy, integrate, Control, IntegrateOpts, TrajectoryBundle};
use crate::index::kernel_basis;
use crate::lbfgs::{self, LbfgsOpts};
use crate::srgeom::PolyFrame;
use crate::{Error, Result, GOH_TOL};

// ---------------------------------------------------------------------------
// Options and results
// ---------------------------------------------------------------------------

/// Solver options for the constrained energy minimization.
#[derive(Debug, Clone)]
pub struct GeodesicOpts {
    pub segments: usize,
    pub substeps: usize,
    pub restarts: usize,
    /// end-point feasibility tolerance |E(u) - y|
    pub tol: f64,
    /// inner L-BFGS gradient tolerance (L^2 norm)
    pub gtol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub seed: u64,
    pub blowup: f64,
    /// relative residual threshold for the normal multiplier fit
    pub stationarity_tol: f64,
    pub goh_tol: f64,
    /// resample the result to constant speed before extracting
    /// multipliers when the speed profile is uneven
    pub reparametrize: bool,
    /// extra high-accuracy polish of the best restart
    pub polish: bool,
    /// optional warm-start control (counts as the first restart seed)
    pub warm_start: Option<Control>,
}

impl Default for GeodesicOpts {
    fn default() -> Self {
        GeodesicOpts {
            segments: crate::flow::DEFAULT_SEGMENTS,
            substeps: crate::flow::DEFAULT_SUBSTEPS,
            restarts: 8,
            tol: 1e-8,
            gtol: 1e-10,
            max_outer: 14,
            max_inner: 220,
            seed: 1234,
            blowup: crate::flow::DEFAULT_BLOWUP,
            stationarity_tol: 1e-5,
            goh_tol: GOH_TOL,
            reparametrize: true,
            polish: true,
            warm_start: None,
        }
    }
}

impl GeodesicOpts {
    pub fn integrate_opts(&self) -> IntegrateOpts {
        IntegrateOpts { substeps: self.substeps, blowup: self.blowup }
    }
}

/// One converged restart.
#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub control: Control,
    pub endpoint_error: f64,
    pub energy: f64,
    pub restart_index: usize,
}

/// Multiplier fit for a converged control.
#[derive(Debug, Clone)]
pub struct MultiplierFit {
    pub multiplier: Option<DVector<f64>>,
    pub multiplier0: u8,
    /// relative residual of the normal least-squares fit
    pub residual: f64,
    pub abnormal: Vec<DVector<f64>>,
}

/// Full output of the geodesic solver.
#[derive(Debug, Clone)]
pub struct GeodesicResult {
    pub control: Control,
    pub endpoint: DVector<f64>,
    pub endpoint_error: f64,
    pub energy: f64,
    pub distance: f64,
    pub multiplier: Option<DVector<f64>>,
    pub multiplier0: u8,
    pub stationarity_residual: f64,
    pub corank: usize,
    pub abnormal_covectors: Vec<DVector<f64>>,
    pub goh: GohDiagnostics,
    pub n_restarts_used: usize,
}

/// JSON shape of a geodesic result (the external interface).
#[derive(Debug, Serialize, Deserialize)]
pub struct GeodesicResultJson {
    pub distance: f64,
    pub energy: f64,
    pub endpoint_error: f64,
    pub multiplier: Option<Vec<f64>>,
    pub multiplier0: u8,
    pub corank: usize,
    pub goh_rank: usize,
    pub goh_residual: f64,
    pub restarts: usize,
}

impl GeodesicResult {
    pub fn to_json_struct(&self) -> GeodesicResultJson {
        GeodesicResultJson {
            distance: self.distance,
            energy: self.energy,
            endpoint_error: self.endpoint_error,
            multiplier: self.multiplier.as_ref().map(|p| p.iter().copied().collect()),
            multiplier0: self.multiplier0,
            corank: self.corank,
            goh_rank: self.goh.goh_rank,
            goh_residual: self.goh.normalized,
            restarts: self.n_restarts_used,
        }
    }
}

// ---------------------------------------------------------------------------
// Augmented Lagrangian core
// ---------------------------------------------------------------------------

/// Objective add-on evaluated alongside the energy, with its L^2
/// gradient contribution (used by the barrier functional).
trait ExtraTerm: Sync {
    fn eval(&self, u: &DVector<f64>, grad: &mut DVector<f64>, k: f64) -> f64;
}

struct NoExtra;

impl ExtraTerm for NoExtra {
    fn eval(&self, _u: &DVector<f64>, _grad: &mut DVector<f64>, _k: f64) -> f64 {
        0.0
    }
}

struct AlProblem<'a, X: ExtraTerm> {
    frame: &'a PolyFrame,
    x0: &'a DVector<f64>,
    y: &'a DVector<f64>,
    m: usize,
    segments: usize,
    iopts: IntegrateOpts,
    extra: &'a X,
}

impl<X: ExtraTerm> AlProblem<'_, X> {
    /// Augmented Lagrangian value and L^2 gradient at the coefficient
    /// vector `w`; infeasible integrations map to +infinity.
    fn eval(&self, w: &DVector<f64>, lambda: &DVector<f64>, mu: f64) -> (f64, DVector<f64>) {
        let control = Control::from_coeffs(w, self.m);
        let bundle = match integrate(self.frame, &control, self.x0, self.iopts) {
            Ok(b) => b,
            Err(_) => return (f64::INFINITY, DVector::zeros(w.len())),
        };
        let r = bundle.endpoint() - self.y;
        let mut grad = w.clone(); // L^2 gradient of C(u) is u itself
        let covec = lambda + &r * mu;
        add_adjoint_gradient(&bundle, &covec, &mut grad);
        let mut f = energy(&control) + lambda.dot(&r) + 0.5 * mu * r.norm_squared();
        f += self.extra.eval(w, &mut grad, self.segments as f64);
        (f, grad)
    }

    fn endpoint_error(&self, w: &DVector<f64>) -> f64 {
        let control = Control::from_coeffs(w, self.m);
        match integrate(self.frame, &control, self.x0, self.iopts) {
            Ok(b) => (b.endpoint() - self.y).norm(),
            Err(_) => f64::INFINITY,
        }
    }
}

/// Accumulate the L^2 gradient of u -> covec . E(u): the adjoint field
/// t -> B(t)^T (S(1) S(t)^-1)^T covec, averaged per segment with the
/// same trapezoid weights as the end-point quadrature.
fn add_adjoint_gradient(bundle: &TrajectoryBundle, covec: &DVector<f64>, grad: &mut DVector<f64>) {
    let m = bundle.control().m();
    let k_total = bundle.n_steps();
    let h = 1.0 / k_total as f64;
    let segments = bundle.control().n_segments();
    let s1t = bundle.s().last().unwrap().transpose();
    let pulled = s1t * covec;
    let mut node = Vec::with_capacity(k_total + 1);
    for k in 0..=k_total {
        node.push(bundle.b()[k].transpose() * (bundle.s_inv()[k].transpose() * &pulled));
    }
    let seg_len = 1.0 / segments as f64;
    for k in 0..k_total {
        let seg = k / bundle.substeps();
        for i in 0..m {
            // divide by the segment measure to convert the coefficient
            // pairing into the L^2 representation
            grad[seg * m + i] += (node[k][i] + node[k + 1][i]) * (h / 2.0) / seg_len;
        }
    }
}

fn l2_dot(k: f64) -> impl Fn(&DVector<f64>, &DVector<f64>) -> f64 {
    move |a: &DVector<f64>, b: &DVector<f64>| a.dot(b) / k
}

/// Run the augmented Lagrangian from one seed. Returns the final
/// coefficients and endpoint error.
fn augmented_lagrangian<X: ExtraTerm>(
    problem: &AlProblem<X>,
    w0: DVector<f64>,
    opts: &GeodesicOpts,
) -> (DVector<f64>, f64) {
    let dot = l2_dot(problem.segments as f64);
    let n = problem.y.len();
    let mut lambda = DVector::zeros(n);
    let mut mu = 10.0;
    let mut w = w0;
    let mut last_err = problem.endpoint_error(&w);
    if !last_err.is_finite() {
        return (w, f64::INFINITY);
    }
    for outer in 0..opts.max_outer {
        let gtol_inner = (1e-6 / 10f64.powi(outer as i32)).max(opts.gtol);
        let mut eval = |x: &DVector<f64>| problem.eval(x, &lambda, mu);
        let res = lbfgs::minimize(
            &mut eval,
            &dot,
            w.clone(),
            &LbfgsOpts {
                memory: 12,
                max_iters: opts.max_inner,
                gtol: gtol_inner,
                step_floor: 1e-18,
            },
        );
        w = res.x;
        let err = problem.endpoint_error(&w);
        if !err.is_finite() {
            return (w, f64::INFINITY);
        }
        let control = Control::from_coeffs(&w, problem.m);
        let bundle = integrate(problem.frame, &control, problem.x0, problem.iopts)
            .expect("endpoint_error was finite");
        let r = bundle.endpoint() - problem.y;
        lambda += &r * mu;
        if err <= opts.tol && res.grad_norm <= opts.gtol.max(1e-9) && outer >= 1 {
            break;
        }
        if err > 0.25 * last_err {
            mu = (mu * 10.0).min(1e9);
        }
        last_err = err;
    }
    if opts.polish {
        // final high-accuracy pass with the multiplier frozen
        let before = problem.endpoint_error(&w);
        let mut eval = |x: &DVector<f64>| problem.eval(x, &lambda, mu);
        let res = lbfgs::minimize(
            &mut eval,
            &dot,
            w.clone(),
            &LbfgsOpts { memory: 12, max_iters: 160, gtol: opts.gtol, step_floor: 1e-18 },
        );
        let after = problem.endpoint_error(&res.x);
        if after <= before.max(opts.tol) {
            w = res.x;
        }
    }
    let err = problem.endpoint_error(&w);
    (w, err)
}

// ---------------------------------------------------------------------------
// Restart seeds
// ---------------------------------------------------------------------------

/// Straight-coefficient initial guess: the least-squares constant
/// control B(x0)^+ (y - x0).
fn straight_seed(frame: &PolyFrame, x0: &DVector<f64>, y: &DVector<f64>, segments: usize) -> Control {
    let b = frame.b_matrix(x0);
    let sol = b
        .pseudo_inverse(1e-12)
        .map(|pinv| pinv * (y - x0))
        .unwrap_or_else(|_| DVector::zeros(frame.rank_m()));
    Control::constant(segments, sol.as_slice())
}

/// Random low-frequency Fourier control seeded per restart index.
fn fourier_seed(
    frame: &PolyFrame,
    x0: &DVector<f64>,
    y: &DVector<f64>,
    segments: usize,
    seed: u64,
    restart: usize,
) -> Control {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (restart as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15));
    let m = frame.rank_m();
    let scale = ((y - x0).norm().max(0.5)) * (0.6 + 0.3 * ((restart % 4) as f64));
    let coeffs: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0) * scale).collect())
        .collect();
    Control::from_fn(segments, m, |t| {
        (0..m)
            .map(|i| {
                let c = &coeffs[i];
                let w = 2.0 * std::f64::consts::PI;
                c[0] * 0.7
                    + c[1] * (w * t).cos()
                    + c[2] * (w * t).sin()
                    + c[3] * (2.0 * w * t).cos()
                    + c[4] * (2.0 * w * t).sin()
                    + 0.5 * (c[5] * (3.0 * w * t).cos() + c[6] * (3.0 * w * t).sin())
            })
            .collect()
    })
}

fn seeds(frame: &PolyFrame, x0: &DVector<f64>, y: &DVector<f64>, opts: &GeodesicOpts) -> Vec<Control> {
    let mut list = Vec::with_capacity(opts.restarts.max(1));
    if let Some(w) = &opts.warm_start {
        let resampled = w.resample(opts.segments).unwrap_or_else(|_| w.clone());
        list.push(resampled);
    }
    list.push(straight_seed(frame, x0, y, opts.segments));
    let mut r = 0;
    while list.len() < opts.restarts.max(1) {
        list.push(fourier_seed(frame, x0, y, opts.segments, opts.seed, r));
        r += 1;
    }
    list.truncate(opts.restarts.max(1));
    list
}

// ---------------------------------------------------------------------------
// Public solver entry points
// ---------------------------------------------------------------------------

/// Run every restart and return the converged outcomes sorted by
/// energy (ties broken by the serialized control, for determinism).
pub fn solve_geodesic_all(
    frame: &PolyFrame,
    x0: &DVector<f64>,
    y: &DVector<f64>,
    opts: &GeodesicOpts,
) -> Vec<RestartOutcome> {
    let problem = AlProblem {
        frame,
        x0,
        y,
        m: frame.rank_m(),
        segments: opts.segments,
        iopts: opts.integrate_opts(),
        extra: &NoExtra,
    };
    let seeds = seeds(frame, x0, y, opts);
    let mut outcomes: Vec<RestartOutcome> = seeds
        .into_par_iter()
        .enumerate()
        .filter_map(|(idx, seed)| {
            let (w, err) = augmented_lagrangian(&problem, seed.to_coeffs(), opts);
            if err <= opts.tol {
                let control = Control::from_coeffs(&w, frame.rank_m());
                let e = energy(&control);
                Some(RestartOutcome { control, endpoint_error: err, energy: e, restart_index: idx })
            } else {
                None
            }
        })
        .collect();
    outcomes.sort_by(|a, b| {
        a.energy
            .partial_cmp(&b.energy)
            .unwrap()
            .then_with(|| a.control.to_csv().cmp(&b.control.to_csv()))
    });
    outcomes
}

/// Best-of-restarts energy minimizer with multipliers and Goh
/// diagnostics attached.
pub fn solve_geodesic(
    frame: &PolyFrame,
    x0: &DVector<f64>,
    y: &DVector<f64>,
    opts: &GeodesicOpts,
) -> Result<GeodesicResult> {
    let outcomes = solve_geodesic_all(frame, x0, y, opts);
    let n_restarts_used = opts.restarts.max(1);
    let Some(best) = outcomes.first() else {
        let problem = AlProblem {
            frame,
            x0,
            y,
            m: frame.rank_m(),
            segments: opts.segments,
            iopts: opts.integrate_opts(),
            extra: &NoExtra,
        };
        let (_, err) = augmented_lagrangian(
            &problem,
            straight_seed(frame, x0, y, opts.segments).to_coeffs(),
            opts,
        );
        return Err(Error::NoConvergence { best: err });
    };

    let mut control = best.control.clone();
    if opts.reparametrize {
        if let Some(re) = reparametrize_constant_speed(&control) {
            // keep the reparametrized control only if it stays feasible
            // and does not cost energy; polish it back onto the
            // constraint otherwise
            if let Ok(bundle) = integrate(frame, &re, x0, opts.integrate_opts()) {
                let err = (bundle.endpoint() - y).norm();
                if err <= opts.tol && energy(&re) <= best.energy + opts.tol {
                    control = re;
                } else {
                    let problem = AlProblem {
                        frame,
                        x0,
                        y,
                        m: frame.rank_m(),
                        segments: opts.segments,
                        iopts: opts.integrate_opts(),
                        extra: &NoExtra,
                    };
                    let (w, err) = augmented_lagrangian(&problem, re.to_coeffs(), opts);
                    let candidate = Control::from_coeffs(&w, frame.rank_m());
                    if err <= opts.tol && energy(&candidate) <= best.energy + opts.tol {
                        control = candidate;
                    }
                }
            }
        }
    }

    finish_result(frame, x0, y, control, n_restarts_used, opts)
}

/// Attach operator, multiplier, corank and Goh diagnostics to a
/// feasible control.
pub fn finish_result(
    frame: &PolyFrame,
    x0: &DVector<f64>,
    y: &DVector<f64>,
    control: Control,
    n_restarts_used: usize,
    opts: &GeodesicOpts,
) -> Result<GeodesicResult> {
    let bundle = integrate(frame, &control, x0, opts.integrate_opts())?;
    let op = d_endpoint_operator(&bundle);
    let fit = extract_multiplier(&bundle, &op, opts.stationarity_tol)?;
    let e = energy(&control);
    let extremal = if op.corank > 0 {
        reconstruct(&bundle, &fit.abnormal[0], 0)?
    } else {
        let p = fit
            .multiplier
            .clone()
            .unwrap_or_else(|| DVector::zeros(frame.dim_n()));
        reconstruct(&bundle, &p, 1)?
    };
    let goh = goh_diagnostics(&bundle, &extremal, &op, Some(opts.goh_tol))?;
    Ok(GeodesicResult {
        endpoint: bundle.endpoint().clone(),
        endpoint_error: (bundle.endpoint() - y).norm(),
        energy: e,
        distance: (2.0 * e).sqrt(),
        multiplier: fit.multiplier,
        multiplier0: fit.multiplier0,
        stationarity_residual: fit.residual,
        corank: op.corank,
        abnormal_covectors: fit.abnormal,
        goh,
        control,
        n_restarts_used,
    })
}

/// Least-squares multiplier extraction: solve min_p |p . D_u E - D_u C|
/// on the discretized operator. A failing normal fit with positive
/// corank reports the abnormal covector instead.
pub fn extract_multiplier(
    bundle: &TrajectoryBundle,
    op: &EndpointOperator,
    tol: f64,
) -> Result<MultiplierFit> {
    let segments = bundle.control().n_segments() as f64;
    // D_u C on the coefficient basis is u / K
    let rhs = bundle.control().to_coeffs() / segments;
    let (p, residual) = op.covector_least_squares(&rhs);
    let abnormal = abnormal_covectors(op, None);
    if residual <= tol {
        Ok(MultiplierFit { multiplier: Some(p), multiplier0: 1, residual, abnormal })
    } else if op.corank > 0 {
        Ok(MultiplierFit {
            multiplier: Some(abnormal[0].clone()),
            multiplier0: 0,
            residual,
            abnormal,
        })
    } else {
        Err(Error::Ambiguous { residual })
    }
}

/// Resample a control to constant pointwise norm along its own arc
/// length; returns None when the speed profile is already constant to
/// 0.1% or the control is degenerate.
pub fn reparametrize_constant_speed(control: &Control) -> Option<Control> {
    let k = control.n_segments();
    let speeds: Vec<f64> = (0..k).map(|s| control.value(s).norm()).collect();
    let mean: f64 = speeds.iter().sum::<f64>() / k as f64;
    if mean <= 1e-12 {
        return None;
    }
    let (lo, hi) = speeds
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if (hi - lo) / mean <= 1e-3 {
        return None;
    }
    if lo <= 1e-12 {
        // zero-speed slices cannot be reparametrized cleanly
        return None;
    }
    let mut cum = vec![0.0_f64; k + 1];
    for s in 0..k {
        cum[s + 1] = cum[s] + speeds[s] / k as f64;
    }
    let length = cum[k];
    let m = control.m();
    let values = nalgebra::DMatrix::from_fn(k, m, |r, c| {
        let target = length * (r as f64 + 0.5) / k as f64;
        let seg = match cum.binary_search_by(|w| w.partial_cmp(&target).unwrap()) {
            Ok(i) => i.min(k - 1),
            Err(i) => i.saturating_sub(1).min(k - 1),
        };
        control.value(seg)[c] * length / speeds[seg]
    });
    Control::new(values).ok()
}

// ---------------------------------------------------------------------------
// Penalty functional with barrier
// ---------------------------------------------------------------------------

/// Barrier h on [0, delta^2): zero on [0, delta^2/4], C^1,
/// nondecreasing, blowing up at delta^2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PenaltyBarrier {
    pub delta: f64,
}

impl PenaltyBarrier {
    pub fn new(delta: f64) -> Result<Self> {
        if delta <= 0.0 {
            return Err(Error::PreconditionViolated("barrier delta must be positive".into()));
        }
        Ok(PenaltyBarrier { delta })
    }

    /// h(alpha) = (alpha - delta^2/4)^2 / (delta^2 - alpha) past the
    /// dead zone.
    pub fn h(&self, alpha: f64) -> f64 {
        let d2 = self.delta * self.delta;
        let q = d2 / 4.0;
        if alpha <= q {
            0.0
        } else if alpha >= d2 {
            f64::INFINITY
        } else {
            let excess = alpha - q;
            excess * excess / (d2 - alpha)
        }
    }

    pub fn h_prime(&self, alpha: f64) -> f64 {
        let d2 = self.delta * self.delta;
        let q = d2 / 4.0;
        if alpha <= q {
            0.0
        } else if alpha >= d2 {
            f64::INFINITY
        } else {
            let excess = alpha - q;
            let den = d2 - alpha;
            (2.0 * excess * den + excess * excess) / (den * den)
        }
    }
}

struct BarrierTerm<'a> {
    barrier: PenaltyBarrier,
    u_hat: &'a DVector<f64>,
}

impl ExtraTerm for BarrierTerm<'_> {
    fn eval(&self, u: &DVector<f64>, grad: &mut DVector<f64>, k: f64) -> f64 {
        let diff = u - self.u_hat;
        let alpha = diff.norm_squared() / k;
        let h = self.barrier.h(alpha);
        if !h.is_finite() {
            return f64::INFINITY;
        }
        let hp = self.barrier.h_prime(alpha);
        if hp != 0.0 {
            *grad += diff * (2.0 * hp);
        }
        h
    }
}

/// Result of the penalty minimization.
#[derive(Debug, Clone)]
pub struct PenaltyResult {
    pub value: f64,
    pub control: Control,
    pub endpoint_error: f64,
    pub barrier_active: bool,
}

/// W(y) = inf { C(u) + h(||u - u_hat||^2) : E(u) = y }, multi-start
/// with restarts seeded near u_hat.
pub fn penalty_w(
    frame: &PolyFrame,
    x0: &DVector<f64>,
    y: &DVector<f64>,
    u_hat: &Control,
    barrier: &PenaltyBarrier,
    opts: &GeodesicOpts,
) -> Result<PenaltyResult> {
    let u_hat = u_hat.resample(opts.segments)?;
    let hat_coeffs = u_hat.to_coeffs();
    let term = BarrierTerm { barrier: *barrier, u_hat: &hat_coeffs };
    let problem = AlProblem {
        frame,
        x0,
        y,
        m: frame.rank_m(),
        segments: opts.segments,
        iopts: opts.integrate_opts(),
        extra: &term,
    };
    // seeds: u_hat itself plus small perturbations inside the dead zone
    let mut seed_list: Vec<DVector<f64>> = vec![hat_coeffs.clone()];
    for r in 0..opts.restarts.saturating_sub(1) {
        let p = fourier_seed(frame, x0, y, opts.segments, opts.seed.wrapping_add(17), r);
        let scale = 0.2 * barrier.delta / p.l2_norm().max(1e-9);
        seed_list.push(&hat_coeffs + p.to_coeffs() * scale);
    }
    let outcomes: Vec<(f64, DVector<f64>, f64)> = seed_list
        .into_par_iter()
        .filter_map(|w0| {
            let (w, err) = augmented_lagrangian(&problem, w0, opts);
            if err <= opts.tol {
                let control = Control::from_coeffs(&w, frame.rank_m());
                let alpha =
                    (control.to_coeffs() - &hat_coeffs).norm_squared() / opts.segments as f64;
                let value = energy(&control) + barrier.h(alpha);
                Some((value, w, err))
            } else {
                None
            }
        })
        .collect();
    let best = outcomes
        .into_iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .ok_or(Error::NoConvergence { best: f64::INFINITY })?;
    let control = Control::from_coeffs(&best.1, frame.rank_m());
    let alpha = (control.to_coeffs() - &hat_coeffs).norm_squared() / opts.segments as f64;
    Ok(PenaltyResult {
        value: best.0,
        endpoint_error: best.2,
        barrier_active: alpha > barrier.delta * barrier.delta / 4.0,
        control,
    })
}

// ---------------------------------------------------------------------------
// Second-order certificate
// ---------------------------------------------------------------------------

/// Smallest eigenvalue of v -> ||v||^2 - p . D^2_u E(v) on the
/// discretized kernel of D_u E.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub min_eig_on_kernel: f64,
    pub kernel_dim: usize,
}

pub fn second_order_certificate(
    bundle: &TrajectoryBundle,
    multiplier: &DVector<f64>,
) -> Result<Certificate> {
    let op = d_endpoint_operator(bundle);
    let basis = kernel_basis(&op, bundle.control(), usize::MAX);
    let dim = basis.len();
    if dim == 0 {
        return Ok(Certificate { min_eig_on_kernel: f64::INFINITY, kernel_dim: 0 });
    }
    let q = |v: &Control| -> Result<f64> {
        Ok(d2_energy(v) - multiplier.dot(&d2_endpoint(bundle, v)?))
    };
    let mut gram = nalgebra::DMatrix::zeros(dim, dim);
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
    let eig = gram.symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Certificate { min_eig_on_kernel: min_eig, kernel_dim: dim })
}
