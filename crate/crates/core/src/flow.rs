//! Piecewise-constant controls on [0, 1] and RK4 integration of the
//! horizontal trajectory together with the variational matrices S(t),
//! S(t)^-1 and the field matrix B(t) on the time grid.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::srgeom::{Jet2, PolyFrame};
use crate::{Error, Result};

/// Default number of control segments.
pub const DEFAULT_SEGMENTS: usize = 64;
/// Default RK4 substeps per control segment.
pub const DEFAULT_SUBSTEPS: usize = 4;
/// Default chart-exit bound on the state norm.
pub const DEFAULT_BLOWUP: f64 = 1e6;

// ---------------------------------------------------------------------------
// Controls
// ---------------------------------------------------------------------------

/// A discretized element of L^2([0,1], R^m): one constant value per
/// time slice. Row k of `values` is the value on [k/K, (k+1)/K).
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    values: DMatrix<f64>,
}

impl Control {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "control needs at least one segment and one component".into(),
            ));
        }
        Ok(Control { values })
    }

    pub fn zeros(n_segments: usize, m: usize) -> Self {
        Control { values: DMatrix::zeros(n_segments, m) }
    }

    pub fn constant(n_segments: usize, value: &[f64]) -> Self {
        let m = value.len();
        Control {
            values: DMatrix::from_fn(n_segments, m, |_, c| value[c]),
        }
    }

    /// Sample a function of time at segment midpoints.
    pub fn from_fn<F: Fn(f64) -> Vec<f64>>(n_segments: usize, m: usize, f: F) -> Self {
        let values = DMatrix::from_fn(n_segments, m, |k, c| {
            let t = (k as f64 + 0.5) / n_segments as f64;
            f(t)[c]
        });
        Control { values }
    }

    pub fn n_segments(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn value(&self, segment: usize) -> DVector<f64> {
        self.values.row(segment).transpose()
    }

    /// Squared L^2 norm: (1/K) sum_k |u_k|^2, exact for piecewise
    /// constant controls.
    pub fn l2_norm_sq(&self) -> f64 {
        let k = self.n_segments() as f64;
        self.values.iter().map(|v| v * v).sum::<f64>() / k
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// Flatten to a coefficient vector, segment-major: index k*m + i.
    pub fn to_coeffs(&self) -> DVector<f64> {
        let (k, m) = (self.n_segments(), self.m());
        DVector::from_fn(k * m, |idx, _| self.values[(idx / m, idx % m)])
    }

    pub fn from_coeffs(coeffs: &DVector<f64>, m: usize) -> Self {
        let k = coeffs.len() / m;
        Control {
            values: DMatrix::from_fn(k, m, |r, c| coeffs[r * m + c]),
        }
    }

    /// L^2-orthogonal projection onto the piecewise-constant space with
    /// `new_segments` slices. Refinement replicates, coarsening by an
    /// integer factor averages, other ratios use exact interval overlaps.
    pub fn resample(&self, new_segments: usize) -> Result<Control> {
        if new_segments == 0 {
            return Err(Error::DimensionMismatch("new_segments must be >= 1".into()));
        }
        let old = self.n_segments();
        let m = self.m();
        if new_segments == old {
            return Ok(self.clone());
        }
        if new_segments % old == 0 {
            let f = new_segments / old;
            let values = DMatrix::from_fn(new_segments, m, |r, c| self.values[(r / f, c)]);
            return Ok(Control { values });
        }
        if old % new_segments == 0 {
            let f = old / new_segments;
            let values = DMatrix::from_fn(new_segments, m, |r, c| {
                let first = self.values[(r * f, c)];
                if (1..f).all(|j| self.values[(r * f + j, c)] == first) {
                    first
                } else {
                    (0..f).map(|j| self.values[(r * f + j, c)]).sum::<f64>() / f as f64
                }
            });
            return Ok(Control { values });
        }
        let values = DMatrix::from_fn(new_segments, m, |r, c| {
            let lo = r as f64 / new_segments as f64;
            let hi = (r + 1) as f64 / new_segments as f64;
            let mut acc = 0.0;
            let j0 = (lo * old as f64).floor() as usize;
            let j1 = ((hi * old as f64).ceil() as usize).min(old);
            for j in j0..j1 {
                let a = (j as f64 / old as f64).max(lo);
                let b = ((j + 1) as f64 / old as f64).min(hi);
                if b > a {
                    acc += (b - a) * self.values[(j, c)];
                }
            }
            acc * new_segments as f64
        });
        Ok(Control { values })
    }

    /// CSV serialization: header `u1,...,um`, one row per segment.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.m()).map(|i| format!("u{i}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for k in 0..self.n_segments() {
            let row: Vec<String> = (0..self.m())
                .map(|c| format!("{}", self.values[(k, c)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Control> {
        let mut rows = Vec::new();
        let mut m = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if lineno == 0 {
                m = line.split(',').count();
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Serde(format!("bad control value '{s}'")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != m {
                return Err(Error::Serde(format!(
                    "row {} has {} columns, expected {m}",
                    lineno,
                    vals.len()
                )));
            }
            rows.push(vals);
        }
        if rows.is_empty() || m == 0 {
            return Err(Error::Serde("empty control file".into()));
        }
        let values = DMatrix::from_fn(rows.len(), m, |r, c| rows[r][c]);
        Ok(Control { values })
    }
}

/// Energy C(u) = (1/2) ||u||_{L^2}^2, exact quadrature.
pub fn energy(control: &Control) -> f64 {
    0.5 * control.l2_norm_sq()
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// Integration options: substep factor and chart-exit bound.
#[derive(Debug, Clone, Copy)]
pub struct IntegrateOpts {
    pub substeps: usize,
    pub blowup: f64,
}

impl Default for IntegrateOpts {
    fn default() -> Self {
        IntegrateOpts { substeps: DEFAULT_SUBSTEPS, blowup: DEFAULT_BLOWUP }
    }
}

/// Horizontal path gamma(t) plus variational data on the time grid.
///
/// The grid refines the control's segment grid by the substep factor,
/// so each RK4 step sees a constant control value. `S` solves
/// dS/dt = A(t) S with S(0) = I; its inverse is integrated through its
/// own equation d(S^-1)/dt = -S^-1 A(t) rather than by matrix inversion.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    grid: Vec<f64>,
    gamma: Vec<DVector<f64>>,
    s: Vec<DMatrix<f64>>,
    s_inv: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    control: Control,
    frame: PolyFrame,
    substeps: usize,
    x0: DVector<f64>,
    jets: OnceLock<Vec<Vec<Jet2>>>,
}

impl TrajectoryBundle {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn gamma(&self) -> &[DVector<f64>] {
        &self.gamma
    }

    pub fn endpoint(&self) -> &DVector<f64> {
        self.gamma.last().unwrap()
    }

    pub fn s(&self) -> &[DMatrix<f64>] {
        &self.s
    }

    pub fn s_inv(&self) -> &[DMatrix<f64>] {
        &self.s_inv
    }

    pub fn b(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    pub fn control(&self) -> &Control {
        &self.control
    }

    pub fn frame(&self) -> &PolyFrame {
        &self.frame
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    /// Control segment index owning grid interval [t_k, t_{k+1}).
    pub fn segment_of_interval(&self, k: usize) -> usize {
        k / self.substeps
    }

    /// M(t_k) = S(1) S(t_k)^-1 B(t_k), the integrand matrix of the
    /// first differential of the end-point map.
    pub fn m_at(&self, k: usize) -> DMatrix<f64> {
        let s1 = self.s.last().unwrap();
        s1 * &self.s_inv[k] * &self.b[k]
    }

    /// Jets of every frame field along the path, built lazily and
    /// cached (used by second differentials).
    pub fn jets(&self) -> &Vec<Vec<Jet2>> {
        self.jets.get_or_init(|| {
            self.gamma
                .iter()
                .map(|x| {
                    (0..self.frame.rank_m())
                        .map(|i| self.frame.eval_jet(i, x).expect("valid index"))
                        .collect()
                })
                .collect()
        })
    }

    pub fn check_control(&self, v: &Control) -> Result<()> {
        if v.n_segments() != self.control.n_segments() || v.m() != self.control.m() {
            return Err(Error::SegmentationMismatch {
                expected: self.control.n_segments(),
                got: v.n_segments(),
            });
        }
        Ok(())
    }
}

/// Integrate the horizontal trajectory and variational matrices by
/// fixed-step RK4 on the coupled system (gamma, S, S^-1).
pub fn integrate(
    frame: &PolyFrame,
    control: &Control,
    x0: &DVector<f64>,
    opts: IntegrateOpts,
) -> Result<TrajectoryBundle> {
    if control.m() != frame.rank_m() {
        return Err(Error::DimensionMismatch(format!(
            "control has m = {}, frame rank is {}",
            control.m(),
            frame.rank_m()
        )));
    }
    if x0.len() != frame.dim_n() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has dimension {}, frame lives on R^{}",
            x0.len(),
            frame.dim_n()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) || !control.values().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { t: 0.0 });
    }
    let substeps = opts.substeps.max(1);
    let n = frame.dim_n();
    let k_total = control.n_segments() * substeps;
    let h = 1.0 / k_total as f64;

    let mut grid = Vec::with_capacity(k_total + 1);
    let mut gamma = Vec::with_capacity(k_total + 1);
    let mut s_list = Vec::with_capacity(k_total + 1);
    let mut s_inv_list = Vec::with_capacity(k_total + 1);
    let mut b_list = Vec::with_capacity(k_total + 1);

    let mut x = x0.clone();
    let mut s = DMatrix::identity(n, n);
    let mut s_inv = DMatrix::identity(n, n);

    // velocity and A matrix at a state for a fixed segment value
    let rates = |x: &DVector<f64>, u: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let mut v = DVector::zeros(n);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..frame.rank_m() {
            let field = frame.field(i).expect("index in range");
            v += field.value(x) * u[i];
            a += field.jacobian(x) * u[i];
        }
        (v, a)
    };

    grid.push(0.0);
    gamma.push(x.clone());
    s_list.push(s.clone());
    s_inv_list.push(s_inv.clone());
    b_list.push(frame.b_matrix(&x));

    for k in 0..k_total {
        let seg = k / substeps;
        let u = control.value(seg);
        let t = k as f64 * h;

        let (v1, a1) = rates(&x, &u);
        let ks1 = &a1 * &s;
        let ki1 = -(&s_inv * &a1);

        let x2 = &x + &v1 * (h / 2.0);
        let (v2, a2) = rates(&x2, &u);
        let ks2 = &a2 * (&s + &ks1 * (h / 2.0));
        let ki2 = -((&s_inv + &ki1 * (h / 2.0)) * &a2);

        let x3 = &x + &v2 * (h / 2.0);
        let (v3, a3) = rates(&x3, &u);
        let ks3 = &a3 * (&s + &ks2 * (h / 2.0));
        let ki3 = -((&s_inv + &ki2 * (h / 2.0)) * &a3);

        let x4 = &x + &v3 * h;
        let (v4, a4) = rates(&x4, &u);
        let ks4 = &a4 * (&s + &ks3 * h);
        let ki4 = -((&s_inv + &ki3 * h) * &a4);

        x += (v1 + v2 * 2.0 + v3 * 2.0 + v4) * (h / 6.0);
        s += (ks1 + ks2 * 2.0 + ks3 * 2.0 + ks4) * (h / 6.0);
        s_inv += (ki1 + ki2 * 2.0 + ki3 * 2.0 + ki4) * (h / 6.0);

        let t_next = (k + 1) as f64 * h;
        if !x.iter().all(|v| v.is_finite()) || !s.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: t_next });
        }
        let state_norm = x.amax().max(s.amax()).max(s_inv.amax());
        if state_norm > opts.blowup {
            return Err(Error::BlowUp { t, bound: opts.blowup });
        }

        grid.push(t_next);
        gamma.push(x.clone());
        s_list.push(s.clone());
        s_inv_list.push(s_inv.clone());
        b_list.push(frame.b_matrix(&x));
    }

    Ok(TrajectoryBundle {
        grid,
        gamma,
        s: s_list,
        s_inv: s_inv_list,
        b: b_list,
        control: control.clone(),
        frame: frame.clone(),
        substeps,
        x0: x0.clone(),
        jets: OnceLock::new(),
    })
}
