//! Shared numerical building blocks: sorted SVD, rank thresholds,
//! basis completion, low-discrepancy sequences and Nelder-Mead.

use nalgebra::{DMatrix, DVector};

use crate::RANK_RTOL;

/// SVD of `m` with singular values sorted in descending order.
///
/// Returns `(u, sigma, v_t)` with `u: n x r`, `v_t: r x d`, `r = min(n, d)`.
pub fn svd_sorted(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());

    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt_sorted = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
    let s_sorted: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    (u_sorted, s_sorted, vt_sorted)
}

/// The crate-wide numerical rank threshold for a descending singular
/// value list: `RANK_RTOL * max(sigma_max, 1)`.
pub fn rank_threshold(singular_values: &[f64]) -> f64 {
    let smax = singular_values.first().copied().unwrap_or(0.0);
    RANK_RTOL * smax.max(1.0)
}

/// Numerical rank at the shared threshold.
pub fn numerical_rank(singular_values: &[f64]) -> usize {
    let thr = rank_threshold(singular_values);
    singular_values.iter().filter(|&&s| s > thr).count()
}

/// Rank of the column span of a set of vectors.
pub fn span_rank(columns: &[DVector<f64>], dim: usize) -> usize {
    if columns.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(dim, columns.len(), |r, c| columns[c][r]);
    let svd = m.svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    numerical_rank(&s)
}

/// Complete an orthonormal set to an orthonormal basis of R^d by
/// modified Gram-Schmidt over the identity seeds. Returns only the new
/// vectors, in a deterministic order.
pub fn complete_orthonormal(existing: &[DVector<f64>], dim: usize) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = existing.to_vec();
    let mut added = Vec::new();
    for seed in 0..dim {
        if basis.len() >= dim {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[seed] = 1.0;
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm > 1e-10 {
            v /= norm;
            // second orthogonalization pass for numerical cleanliness
            for b in &basis {
                let proj = b.dot(&v);
                v -= b * proj;
            }
            v /= v.norm();
            basis.push(v.clone());
            added.push(v);
        }
    }
    added
}

/// Halton low-discrepancy sequence value (index starts at 1).
pub fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

const HALTON_BASES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Deterministic low-discrepancy sample of unit directions in R^m.
///
/// Directions come in antipodal-inequivalent form (first nonzero
/// coordinate positive); for m = 1 the single direction is returned.
pub fn unit_sphere_samples(m: usize, count: usize) -> Vec<DVector<f64>> {
    assert!(m >= 1);
    if m == 1 {
        return vec![DVector::from_element(1, 1.0)];
    }
    let mut out = Vec::with_capacity(count);
    if m == 2 {
        // projective circle: evenly spaced angles in [0, pi)
        for k in 0..count {
            let theta = std::f64::consts::PI * (k as f64 + 0.5) / count as f64;
            out.push(DVector::from_vec(vec![theta.cos(), theta.sin()]));
        }
        return out;
    }
    // Halton points mapped through Box-Muller, then normalized.
    let mut k = 1;
    while out.len() < count {
        let mut v = DVector::zeros(m);
        for j in 0..m {
            let u1 = halton(k, HALTON_BASES[(2 * j) % HALTON_BASES.len()]).max(1e-12);
            let u2 = halton(k, HALTON_BASES[(2 * j + 1) % HALTON_BASES.len()]);
            v[j] = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
        let norm = v.norm();
        if norm > 1e-9 {
            v /= norm;
            if v.iter().find(|x| x.abs() > 1e-12).map(|x| *x < 0.0) == Some(true) {
                v = -v;
            }
            out.push(v);
        }
        k += 1;
    }
    out
}

/// Plain Nelder-Mead minimization on R^d.
pub fn nelder_mead<F: FnMut(&DVector<f64>) -> f64>(
    mut f: F,
    x0: &DVector<f64>,
    scale: f64,
    max_iter: usize,
) -> DVector<f64> {
    let d = x0.len();
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.clone(), f(x0)));
    for j in 0..d {
        let mut x = x0.clone();
        x[j] += scale;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let centroid: DVector<f64> = simplex[..d]
            .iter()
            .fold(DVector::zeros(d), |acc, (x, _)| acc + x)
            / d as f64;
        let worst = simplex[d].clone();
        let reflected = &centroid + (&centroid - &worst.0) * alpha;
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = &centroid + (&reflected - &centroid) * gamma;
            let fe = f(&expanded);
            simplex[d] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (reflected, fr);
        } else {
            let contracted = &centroid + (&worst.0 - &centroid) * rho;
            let fc = f(&contracted);
            if fc < worst.1 {
                simplex[d] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    entry.0 = &best + (&entry.0 - &best) * sigma;
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex[0].0.clone()
}
