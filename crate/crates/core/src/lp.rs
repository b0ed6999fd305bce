//! Thin wrappers over `minilp` for the strict-positivity programs.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

/// Optimum of `max t  s.t.  A z = b,  z_j >= t,  t <= 1`.
#[derive(Debug, Clone)]
pub struct MaxMinSolution {
    pub z: DVector<f64>,
    /// Optimal minimum entry (capped at 1).
    pub t: f64,
}

/// Solves the max-min-entry program. `None` when `A z = b` has no solution
/// at all (or the solver fails).
pub fn max_min_entry(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<MaxMinSolution> {
    let (m, n) = a.shape();
    assert_eq!(b.len(), m);
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let z: Vec<_> = (0..n)
        .map(|_| pb.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let t = pb.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    for i in 0..m {
        let expr: Vec<_> = (0..n)
            .filter(|&j| a[(i, j)] != 0.0)
            .map(|j| (z[j], a[(i, j)]))
            .collect();
        if expr.is_empty() {
            if b[i].abs() > 0.0 {
                return None;
            }
            continue;
        }
        pb.add_constraint(expr.as_slice(), ComparisonOp::Eq, b[i]);
    }
    for &zj in &z {
        pb.add_constraint(&[(zj, 1.0), (t, -1.0)], ComparisonOp::Ge, 0.0);
    }
    let sol = pb.solve().ok()?;
    let zv = DVector::from_iterator(n, z.iter().map(|&v| sol[v]));
    let zv = polish(a, b, zv);
    let t = zv.iter().copied().fold(f64::INFINITY, f64::min).min(sol[t]);
    Some(MaxMinSolution { z: zv, t })
}

/// Removes the equality residual with the minimum-norm correction.
pub fn polish(a: &DMatrix<f64>, b: &DVector<f64>, z: DVector<f64>) -> DVector<f64> {
    let res = b - a * &z;
    if res.amax() == 0.0 {
        return z;
    }
    let svd = a.clone().svd(true, true);
    let eps = 1e-13 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    match svd.solve(&res, eps) {
        Ok(dz) => {
            let cand = &z + dz;
            if (b - a * &cand).norm() <= res.norm() {
                cand
            } else {
                z
            }
        }
        Err(_) => z,
    }
}

/// Numerical rank from singular values with relative threshold `tol`.
pub fn rank(a: &DMatrix<f64>, tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().max()
}
