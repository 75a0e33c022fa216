//! Limited-memory BFGS with a strong Wolfe line search, over a vector
//! space with an injectable inner product (the controls live in L^2,
//! whose dot product carries a 1/K weight relative to coefficients).

use nalgebra::DVector;

pub struct LbfgsOpts {
    pub memory: usize,
    pub max_iters: usize,
    pub gtol: f64,
    /// give up when the step length collapses below this
    pub step_floor: f64,
}

impl Default for LbfgsOpts {
    fn default() -> Self {
        LbfgsOpts { memory: 10, max_iters: 200, gtol: 1e-9, step_floor: 1e-16 }
    }
}

pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iters: usize,
    pub evals: usize,
}

/// Minimize f with gradient, both produced by `eval`; `dot` defines the
/// inner product (and the norm used for `gtol`).
pub fn minimize<F, D>(
    eval: &mut F,
    dot: &D,
    x0: DVector<f64>,
    opts: &LbfgsOpts,
) -> LbfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    D: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    let mut evals = 0usize;
    let mut x = x0;
    let (mut f, mut g) = eval(&x);
    evals += 1;
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut iters = 0;
    while iters < opts.max_iters {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= opts.gtol || !f.is_finite() {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &q);
            q -= &y_hist[i] * alpha[i];
        }
        let gamma = if k > 0 {
            let yy = dot(&y_hist[k - 1], &y_hist[k - 1]);
            if yy > 0.0 { dot(&s_hist[k - 1], &y_hist[k - 1]) / yy } else { 1.0 }
        } else {
            1.0
        };
        let mut dir = q * gamma;
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &dir);
            dir += &s_hist[i] * (alpha[i] - beta);
        }
        dir = -dir;

        let mut dg0 = dot(&g, &dir);
        if dg0 >= 0.0 {
            // not a descent direction: restart on steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -g.clone();
            dg0 = dot(&g, &dir);
            if dg0 >= 0.0 {
                break;
            }
        }

        match wolfe_search(eval, dot, &x, f, &g, &dir, dg0, &mut evals, opts.step_floor) {
            Some((step, xn, fn_, gn)) => {
                let s = &xn - &x;
                let y = &gn - &g;
                let sy = dot(&s, &y);
                if sy > 1e-14 * dot(&y, &y).max(1e-300) {
                    if s_hist.len() == opts.memory {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho_hist.remove(0);
                    }
                    s_hist.push(s);
                    y_hist.push(y);
                    rho_hist.push(1.0 / sy);
                }
                x = xn;
                f = fn_;
                g = gn;
                let _ = step;
            }
            None => break,
        }
        iters += 1;
    }
    let grad_norm = dot(&g, &g).sqrt();
    LbfgsResult { x, f, grad_norm, iters, evals }
}

/// Strong Wolfe line search (bracket + bisection zoom); returns the
/// accepted step, point, value and gradient.
#[allow(clippy::too_many_arguments)]
fn wolfe_search<F, D>(
    eval: &mut F,
    dot: &D,
    x: &DVector<f64>,
    f0: f64,
    _g0: &DVector<f64>,
    dir: &DVector<f64>,
    dg0: f64,
    evals: &mut usize,
    step_floor: f64,
) -> Option<(f64, DVector<f64>, f64, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    D: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let phi = |t: f64, eval: &mut F, evals: &mut usize| {
        let xt = x + dir * t;
        let (ft, gt) = eval(&xt);
        *evals += 1;
        (xt, ft, gt)
    };

    let mut t_prev = 0.0;
    let mut f_prev = f0;
    let mut t = 1.0;
    let mut bracket: Option<(f64, f64)> = None;
    let mut last = None;

    for i in 0..20 {
        let (xt, ft, gt) = phi(t, eval, evals);
        let dgt = dot(&gt, dir);
        if !ft.is_finite() || ft > f0 + C1 * t * dg0 || (i > 0 && ft >= f_prev) {
            bracket = Some((t_prev, t));
            last = Some((xt, ft, gt));
            break;
        }
        if dgt.abs() <= -C2 * dg0 {
            return Some((t, xt, ft, gt));
        }
        if dgt >= 0.0 {
            bracket = Some((t, t_prev));
            last = Some((xt, ft, gt));
            break;
        }
        t_prev = t;
        f_prev = ft;
        t *= 2.0;
        last = Some((xt, ft, gt));
    }

    let (mut lo, mut hi) = bracket?;
    let _ = last;
    let mut f_lo = if lo == 0.0 {
        f0
    } else {
        let (_, fl, _) = phi(lo, eval, evals);
        fl
    };
    let mut best = None;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if mid.abs() < step_floor || (hi - lo).abs() < step_floor {
            break;
        }
        let (xm, fm, gm) = phi(mid, eval, evals);
        let dgm = dot(&gm, dir);
        if !fm.is_finite() || fm > f0 + C1 * mid * dg0 || fm >= f_lo {
            hi = mid;
        } else {
            if dgm.abs() <= -C2 * dg0 {
                return Some((mid, xm, fm, gm));
            }
            if dgm * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = mid;
            f_lo = fm;
            best = Some((mid, xm, fm, gm));
        }
    }
    // fall back to the best Armijo point seen in the zoom
    best.filter(|(_, _, fm, _)| *fm < f0)
}
