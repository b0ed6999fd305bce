//! Persistence and permanence certificates.
//!
//! Strict positivity is decided by linear programs that maximize the
//! smallest entry of the unknown vector; a strictly positive optimum is a
//! certificate, and the optimizer is returned as an auditable witness.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::HamiltonianFactors;
use crate::ensemble::trial_rng;
use crate::error::{invalid, HlvError, Result};
use crate::lp;
use crate::model::InteractionSystem;
use crate::stats::Proportion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCertificate {
    pub feasible: bool,
    pub witness: Option<Vec<f64>>,
    /// Optimal smallest entry of `z` (negative when infeasible).
    pub slack: f64,
    pub rank_ok: bool,
    pub residual: f64,
}

/// Default positivity threshold `1e-9 ||rhs|| / ||M||`.
fn slack_threshold(m: &DMatrix<f64>, rhs: &DVector<f64>) -> f64 {
    let nm = lp::spectral_norm(m);
    if nm == 0.0 {
        return 0.0;
    }
    1e-9 * rhs.norm() / nm
}

/// Decides `{z > 0 : M z = rhs}` and reports the rank of `M` relative to its
/// row count.
pub fn positive_solution(m: &DMatrix<f64>, rhs: &DVector<f64>, tol: f64) -> FeasibilityCertificate {
    let rank_ok = lp::rank(m, tol) == m.nrows();
    let thr = slack_threshold(m, rhs);
    match lp::max_min_entry(m, rhs) {
        None => FeasibilityCertificate {
            feasible: false,
            witness: None,
            slack: f64::NEG_INFINITY,
            rank_ok,
            residual: f64::INFINITY,
        },
        Some(sol) => {
            let residual = (rhs - m * &sol.z).norm();
            let res_ok = residual <= tol.max(1e-12) * rhs.norm().max(1.0);
            let feasible = sol.t > thr && res_ok;
            FeasibilityCertificate {
                feasible,
                witness: feasible.then(|| sol.z.iter().copied().collect()),
                slack: sol.t,
                rank_ok,
                residual,
            }
        }
    }
}

/// Cone condition: rank of `B` (`M x N`) is `M` and `rbar = B z` for some
/// `z > 0`.
pub fn cone_condition(b: &DMatrix<f64>, rbar: &[f64], tol: f64) -> Result<FeasibilityCertificate> {
    let (m, n) = b.shape();
    if rbar.len() != m {
        return Err(HlvError::Dimension(format!("rbar has length {} but B has {m} rows", rbar.len())));
    }
    if m > n {
        return Err(HlvError::Dimension(format!("cone condition needs M <= N (got M = {m}, N = {n})")));
    }
    Ok(positive_solution(b, &DVector::from_column_slice(rbar), tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongPersistence {
    pub persistent: bool,
    pub rank_a: usize,
    pub rank_ok: bool,
    /// `A v = r` with `v > 0`.
    pub generalists: FeasibilityCertificate,
    /// `B x = rbar` with `x > 0`.
    pub specialists: FeasibilityCertificate,
}

/// Limitation-free systems with positive factors are strongly persistent
/// iff `rank A = M` and both `A v = r`, `B x = rbar` have positive solutions.
pub fn strong_persistence(sys: &InteractionSystem, factors: &HamiltonianFactors, tol: f64) -> Result<StrongPersistence> {
    if !factors.positive {
        return Err(HlvError::NotApplicable("factors are not positive".into()));
    }
    if !sys.is_limitation_free() {
        return Err(HlvError::NotApplicable("system has self-limitation terms".into()));
    }
    let a = sys.a_matrix();
    let rank_a = lp::rank(&a, tol);
    let generalists = positive_solution(&a, &DVector::from_column_slice(&sys.r), tol);
    let specialists = positive_solution(&sys.b_matrix(), &DVector::from_column_slice(&sys.rbar), tol);
    let rank_ok = rank_a == sys.m;
    Ok(StrongPersistence {
        persistent: rank_ok && generalists.feasible && specialists.feasible,
        rank_a,
        rank_ok,
        generalists,
        specialists,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermanenceReport {
    /// Row-major `(N + M) x (N + M)` matrix.
    pub matrix_m: Vec<Vec<f64>>,
    pub pd: bool,
    pub min_eig_sym: f64,
    pub has_positive_equilibrium: bool,
    pub equilibrium: Option<Vec<f64>>,
    pub permanent: bool,
}

/// Assembles `[[Gamma, -A_pert], [B_pert, D]] diag(1/rho, 1/sigma)` and tests
/// its symmetric part for positive definiteness; the equilibrium is that of
/// the system with interactions `A + A_pert`, `B + B_pert`.
pub fn permanence(
    sys: &InteractionSystem,
    factors: &HamiltonianFactors,
    a_pert: &DMatrix<f64>,
    b_pert: &DMatrix<f64>,
    tol: f64,
) -> Result<PermanenceReport> {
    let (n, m) = (sys.n, sys.m);
    if a_pert.shape() != (n, m) || b_pert.shape() != (m, n) {
        return Err(HlvError::Dimension("perturbations must be N x M and M x N".into()));
    }
    if factors.rho.len() != n || factors.sigma.len() != m {
        return Err(HlvError::Dimension("factor lengths must be N and M".into()));
    }
    if factors.rho.iter().chain(&factors.sigma).any(|&v| v == 0.0) {
        return Err(invalid("factors", "zero entry in the diagonal scaling"));
    }
    if !factors.positive {
        return Err(HlvError::NotApplicable("factors are not positive".into()));
    }
    let gamma = sys.gamma_matrix();
    let d = sys.d_matrix();
    let mut blk = DMatrix::zeros(n + m, n + m);
    blk.view_mut((0, 0), (n, n)).copy_from(&gamma);
    blk.view_mut((0, n), (n, m)).copy_from(&(-a_pert));
    blk.view_mut((n, 0), (m, n)).copy_from(b_pert);
    blk.view_mut((n, n), (m, m)).copy_from(&d);
    let scale = DVector::from_iterator(n + m, factors.rho.iter().chain(&factors.sigma).map(|v| 1.0 / v));
    let mm = blk * DMatrix::from_diagonal(&scale);
    let sym = (&mm + mm.transpose()) * 0.5;
    let min_eig_sym = sym.symmetric_eigen().eigenvalues.min();
    let pd = min_eig_sym > tol;

    // [[Gamma, -(A + A_pert)], [B + B_pert, D]] (x; v) = (-r; rbar)
    let mut full = DMatrix::zeros(n + m, n + m);
    full.view_mut((0, 0), (n, n)).copy_from(&gamma);
    full.view_mut((0, n), (n, m)).copy_from(&(-(sys.a_matrix() + a_pert)));
    full.view_mut((n, 0), (m, n)).copy_from(&(sys.b_matrix() + b_pert));
    full.view_mut((n, n), (m, m)).copy_from(&d);
    let rhs = DVector::from_iterator(n + m, sys.r.iter().map(|r| -r).chain(sys.rbar.iter().copied()));
    let cert = positive_solution(&full, &rhs, 1e-9);
    Ok(PermanenceReport {
        matrix_m: (0..n + m).map(|i| (0..n + m).map(|j| mm[(i, j)]).collect()).collect(),
        pd,
        min_eig_sym,
        has_positive_equilibrium: cert.feasible,
        equilibrium: cert.witness,
        permanent: pd && cert.feasible,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSolution {
    /// Generalist factors (gauge `v = 1`, so `sigma = w`).
    pub sigma: Vec<f64>,
    pub weights: Vec<f64>,
    /// `rho_i = (B^T w)_i / r_i`.
    pub rho: Vec<f64>,
    /// Optimal smallest signed margin.
    pub margin: f64,
}

/// Finds `w > 0` (normalized `sum w = 1`) with `sign((B^T w)_i) =
/// rho_sign_i * sign(r_i)` for all `i`, maximizing the smallest margin.
/// Infeasible patterns are reported with the indices that stay violated at
/// the optimum.
pub fn adaptive_solve(b: &DMatrix<f64>, r: &[f64], rho_signs: Option<&[f64]>) -> Result<AdaptiveSolution> {
    let (m, n) = b.shape();
    if r.len() != n {
        return Err(HlvError::Dimension(format!("r has length {} but B has {n} columns", r.len())));
    }
    if let Some(i) = r.iter().position(|&v| v == 0.0) {
        return Err(invalid("r", format!("r_{i} is zero")));
    }
    let signs: Vec<f64> = match rho_signs {
        Some(s) if s.len() != n => return Err(HlvError::Dimension("rho_signs must have length N".into())),
        Some(s) => s.iter().map(|v| v.signum()).collect(),
        None => vec![1.0; n],
    };
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let w: Vec<_> = (0..m).map(|_| pb.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    let t = pb.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    let sum: Vec<_> = w.iter().map(|&v| (v, 1.0)).collect();
    pb.add_constraint(sum.as_slice(), ComparisonOp::Eq, 1.0);
    for &wk in &w {
        pb.add_constraint(&[(wk, 1.0), (t, -1.0)], ComparisonOp::Ge, 0.0);
    }
    let dirs: Vec<f64> = (0..n).map(|i| signs[i] * r[i].signum()).collect();
    for i in 0..n {
        let mut expr: Vec<_> = (0..m).filter(|&k| b[(k, i)] != 0.0).map(|k| (w[k], dirs[i] * b[(k, i)])).collect();
        expr.push((t, -1.0));
        pb.add_constraint(expr.as_slice(), ComparisonOp::Ge, 0.0);
    }
    let sol = pb
        .solve()
        .map_err(|e| HlvError::Infeasible(format!("adaptive program failed: {e}")))?;
    let wv: Vec<f64> = w.iter().map(|&v| sol[v]).collect();
    let proj: Vec<f64> = (0..n).map(|i| (0..m).map(|k| b[(k, i)] * wv[k]).sum()).collect();
    let margin = sol[t];
    if !(margin > 1e-12) {
        let violated: Vec<usize> = (0..n).filter(|&i| dirs[i] * proj[i] <= 1e-12).collect();
        return Err(HlvError::Infeasible(format!("sign pattern unattainable; violated indices {violated:?}")));
    }
    Ok(AdaptiveSolution {
        sigma: wv.clone(),
        rho: (0..n).map(|i| proj[i] / r[i]).collect(),
        weights: wv,
        margin,
    })
}

/// Random-matrix model for the positive-solution experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MatrixModel {
    /// Entries uniform on `[-k, k]` over a random pattern: a permutation
    /// (one entry per row and column) plus extra entries while the row and
    /// column counts stay within the caps.
    Sparse { k: f64, max_row: usize, max_col: usize, extra_fraction: f64 },
    /// Dense standard Gaussian entries.
    DenseGaussian,
}

impl Default for MatrixModel {
    fn default() -> Self {
        MatrixModel::Sparse { k: 1.0, max_row: 3, max_col: 3, extra_fraction: 0.5 }
    }
}

pub fn sample_matrix<R: Rng>(model: &MatrixModel, n: usize, rng: &mut R) -> DMatrix<f64> {
    match *model {
        MatrixModel::DenseGaussian => DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng)),
        MatrixModel::Sparse { k, max_row, max_col, extra_fraction } => {
            let mut a = DMatrix::zeros(n, n);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let mut rows = vec![0usize; n];
            let mut cols = vec![0usize; n];
            let draw = |rng: &mut R| loop {
                let v = rng.gen_range(-k..=k);
                if v != 0.0 {
                    break v;
                }
            };
            for i in 0..n {
                a[(i, perm[i])] = draw(rng);
                rows[i] += 1;
                cols[perm[i]] += 1;
            }
            let extras = (extra_fraction * n as f64).round() as usize;
            for _ in 0..extras {
                let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
                if a[(i, j)] == 0.0 && rows[i] < max_row && cols[j] < max_col {
                    a[(i, j)] = draw(rng);
                    rows[i] += 1;
                    cols[j] += 1;
                }
            }
            a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub n: usize,
    pub frequency: Proportion,
    pub outcomes: Vec<bool>,
}

/// Frequency with which `A Y = 1` has a solution `Y > 0` for random `A`.
pub fn positive_solution_frequency(n: usize, trials: usize, model: &MatrixModel, seed: u64) -> Result<FrequencyReport> {
    if trials == 0 || n == 0 {
        return Err(invalid("trials/N", "must be at least 1"));
    }
    let rhs = DVector::from_element(n, 1.0);
    let outcomes: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let a = sample_matrix(model, n, &mut rng);
            positive_solution(&a, &rhs, 1e-10).feasible
        })
        .collect();
    let k = outcomes.iter().filter(|&&o| o).count();
    Ok(FrequencyReport { n, frequency: Proportion::wilson(k, trials), outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cone_examples() {
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let c = cone_condition(&b, &[3.0], 1e-9).unwrap();
        assert!(c.feasible && c.rank_ok);
        let z = c.witness.unwrap();
        assert!((z[0] - 1.0).abs() < 1e-9 && (z[1] - 1.0).abs() < 1e-9);
        assert!(!cone_condition(&b, &[-1.0], 1e-9).unwrap().feasible);
        assert!(cone_condition(&b, &[1.0, 2.0], 1e-9).is_err());
    }

    #[test]
    fn adaptive_examples() {
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let s = adaptive_solve(&b, &[2.0, 3.0], None).unwrap();
        assert!((s.rho[0] - s.weights[0] / 2.0).abs() < 1e-12);
        assert!((s.rho[1] - s.weights[0] / 3.0).abs() < 1e-12);
        let b = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let err = adaptive_solve(&b, &[1.0, 1.0], None).unwrap_err().to_string();
        assert!(err.contains("[1]"), "{err}");
    }

    #[test]
    fn one_by_one_frequency_is_half() {
        let model = MatrixModel::Sparse { k: 1.0, max_row: 1, max_col: 1, extra_fraction: 0.0 };
        let r = positive_solution_frequency(1, 4000, &model, 3).unwrap();
        assert!(r.frequency.lo < 0.5 && r.frequency.hi > 0.5, "{:?}", r.frequency);
    }
}
