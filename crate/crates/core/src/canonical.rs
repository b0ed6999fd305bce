//! Hamiltonian factorization, canonical coordinates and closed-form
//! equilibria of star systems.
//!
//! With `x_i = C_i exp(sum_k a_ik q_k)` and `v_k = exp(p_k)` the two-group
//! system becomes
//!
//! ```text
//! dq_j/dt = exp(p_j) - mu_j
//! dp_j/dt = rbar_j - sum_k b_jk C_k exp(A_k . q) - sum_l d_jl exp(p_l)
//! dC_i/dt = C_i (gbar_i - sum_k gamma_ik C_k exp(A_k . q)),  gbar = -r + A mu
//! ```
//!
//! When `sigma_l b_lk = rho_k a_kl`, `Gamma = D = 0` and `gbar = 0`, the
//! scaled positions `qs = sigma q` and `p` are canonical for
//! `H = Phi(C, qs) + Psi(p)`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{guarded_exp, invalid, HlvError, Result};
use crate::model::InteractionSystem;
use crate::star::StarSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianFactors {
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub positive: bool,
}

impl HamiltonianFactors {
    /// Largest relative violation of `sigma_l b_lk = rho_k a_kl`.
    pub fn max_violation(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..a.nrows() {
            for l in 0..a.ncols() {
                let lhs = self.sigma[l] * b[(l, k)];
                let rhs = self.rho[k] * a[(k, l)];
                if lhs == 0.0 && rhs == 0.0 {
                    continue;
                }
                worst = worst.max((lhs - rhs).abs() / (lhs.abs() + rhs.abs() + f64::EPSILON));
            }
        }
        worst
    }
}

/// Solves `sigma_l b_lk = rho_k a_kl` by propagating ratios over the
/// bipartite graph of nonzero entries. `sigma_1 = 1` fixes the gauge of its
/// component; other components are anchored at `+1` on their first node.
///
/// Returns `Ok(None)` when no consistent nonzero solution exists, and an
/// error when both matrices vanish.
pub fn find_factors(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<Option<HamiltonianFactors>> {
    let (n, m) = a.shape();
    if b.shape() != (m, n) {
        return Err(HlvError::Dimension(format!(
            "A is {n}x{m} so B must be {m}x{n}, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    if a.iter().chain(b.iter()).all(|&v| v == 0.0) {
        return Err(HlvError::Degenerate("A and B are both zero; no ratio anchors the factors".into()));
    }
    // Nodes 0..m are sigma_l, m..m+n are rho_k.
    let mut adj: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); n + m];
    for k in 0..n {
        for l in 0..m {
            let (akl, blk) = (a[(k, l)], b[(l, k)]);
            match (akl != 0.0, blk != 0.0) {
                (false, false) => {}
                (true, true) => {
                    adj[l].push((m + k, k, l));
                    adj[m + k].push((l, k, l));
                }
                _ => return Ok(None),
            }
        }
    }
    let mut val = vec![0.0f64; n + m];
    let mut comp = vec![usize::MAX; n + m];
    let mut n_comp = 0;
    for start in 0..(n + m) {
        if comp[start] != usize::MAX {
            continue;
        }
        val[start] = 1.0;
        comp[start] = n_comp;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(w, k, l) in &adj[u] {
                // sigma_l b_lk = rho_k a_kl
                let implied = if u < m {
                    val[u] * b[(l, k)] / a[(k, l)]
                } else {
                    val[u] * a[(k, l)] / b[(l, k)]
                };
                if comp[w] == usize::MAX {
                    comp[w] = n_comp;
                    val[w] = implied;
                    queue.push_back(w);
                } else {
                    let rel = (val[w] - implied).abs() / (val[w].abs() + implied.abs());
                    if rel > tol {
                        return Ok(None);
                    }
                }
            }
        }
        n_comp += 1;
    }
    // A component can be made positive iff its values share one sign.
    let mut positive = true;
    for c in 0..n_comp {
        let members: Vec<usize> = (0..n + m).filter(|&i| comp[i] == c).collect();
        let pos = members.iter().all(|&i| val[i] > 0.0);
        let neg = members.iter().all(|&i| val[i] < 0.0);
        if neg {
            for &i in &members {
                val[i] = -val[i];
            }
        } else if !pos {
            positive = false;
        }
    }
    let f = HamiltonianFactors {
        sigma: val[..m].to_vec(),
        rho: val[m..].to_vec(),
        positive,
    };
    if f.max_violation(a, b) > tol {
        return Ok(None);
    }
    Ok(Some(f))
}

/// Transformed system with offsets `mu` and (optional) Hamiltonian factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalSystem {
    pub base: InteractionSystem,
    pub factors: Option<HamiltonianFactors>,
    pub mu: Vec<f64>,
    pub gamma_bar: Vec<f64>,
}

impl CanonicalSystem {
    pub fn new(base: InteractionSystem, factors: Option<HamiltonianFactors>, mu: Vec<f64>) -> Result<Self> {
        base.validate()?;
        if mu.len() != base.m {
            return Err(HlvError::Dimension(format!("`mu` must have length M = {}", base.m)));
        }
        if mu.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("mu", "offsets must be positive and finite"));
        }
        if let Some(f) = &factors {
            if f.rho.len() != base.n || f.sigma.len() != base.m {
                return Err(HlvError::Dimension("factor lengths must be N and M".into()));
            }
            if f.rho.iter().chain(&f.sigma).any(|&v| v == 0.0 || !v.is_finite()) {
                return Err(invalid("factors", "rho and sigma must be nonzero"));
            }
        }
        let gamma_bar = gamma_bar(&base, &mu);
        Ok(Self { base, factors, mu, gamma_bar })
    }

    /// Finds factors automatically (relative tolerance `tol`).
    pub fn build(base: InteractionSystem, mu: Vec<f64>, tol: f64) -> Result<Self> {
        let f = find_factors(&base.a_matrix(), &base.b_matrix(), tol)?;
        Self::new(base, f, mu)
    }

    pub fn n(&self) -> usize {
        self.base.n
    }
    pub fn m(&self) -> usize {
        self.base.m
    }

    fn scale(&self, l: usize) -> f64 {
        self.factors.as_ref().map_or(1.0, |f| f.sigma[l])
    }

    /// True iff `gbar = 0`, `Gamma = 0` and `D = 0` (within `tol`).
    pub fn reduction_valid(&self, tol: f64) -> bool {
        self.base.is_limitation_free() && self.gamma_bar.iter().all(|g| g.abs() <= tol)
    }

    /// Unscaled positions `q_l = qs_l / sigma_l`.
    pub fn unscaled_q(&self, qs: &[f64]) -> Vec<f64> {
        qs.iter().enumerate().map(|(l, &v)| v / self.scale(l)).collect()
    }

    /// Exponents `A_i . q` for each `x_i`.
    pub fn exponents(&self, qs: &[f64]) -> Vec<f64> {
        let q = self.unscaled_q(qs);
        (0..self.n())
            .map(|i| (0..self.m()).map(|k| self.base.a[i][k] * q[k]).sum())
            .collect()
    }
}

/// `gbar_i = -r_i + sum_m a_im mu_m`.
pub fn gamma_bar(sys: &InteractionSystem, mu: &[f64]) -> Vec<f64> {
    (0..sys.n)
        .map(|i| -sys.r[i] + (0..sys.m).map(|k| sys.a[i][k] * mu[k]).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalState {
    /// Scaled positions `sigma_j q_j`.
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
}

impl CanonicalState {
    pub fn validate(&self) -> Result<()> {
        if self.c.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(invalid("C", "constants must be positive and finite"));
        }
        if self.q.iter().chain(&self.p).any(|v| !v.is_finite()) {
            return Err(invalid("q/p", "coordinates must be finite"));
        }
        Ok(())
    }
}

/// Maps abundances to canonical coordinates in the gauge `q(0) = 0`.
pub fn to_canonical(sys: &CanonicalSystem, x0: &[f64], v0: &[f64]) -> Result<CanonicalState> {
    if x0.len() != sys.n() || v0.len() != sys.m() {
        return Err(HlvError::Dimension("abundance vectors must have lengths N and M".into()));
    }
    if x0.iter().chain(v0).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("x0/v0", "abundances must be strictly positive"));
    }
    Ok(CanonicalState {
        q: vec![0.0; sys.m()],
        p: v0.iter().map(|v| v.ln()).collect(),
        c: x0.to_vec(),
    })
}

pub fn from_canonical(sys: &CanonicalSystem, s: &CanonicalState) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = sys.exponents(&s.q);
    let mut x = Vec::with_capacity(sys.n());
    for i in 0..sys.n() {
        x.push(s.c[i] * guarded_exp(e[i])?);
    }
    let v = s.p.iter().map(|&p| guarded_exp(p)).collect::<Result<Vec<_>>>()?;
    Ok((x, v))
}

/// Time derivatives of the stored coordinates `(qs, p, C)`; note
/// `d qs_j/dt = sigma_j (exp(p_j) - mu_j)`.
pub fn transformed_rhs(sys: &CanonicalSystem, s: &CanonicalState) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (n, m) = (sys.n(), sys.m());
    let e = sys.exponents(&s.q);
    let mut xs = Vec::with_capacity(n);
    for i in 0..n {
        xs.push(s.c[i] * guarded_exp(e[i])?);
    }
    let ep = s.p.iter().map(|&p| guarded_exp(p)).collect::<Result<Vec<_>>>()?;
    let dq = (0..m).map(|j| sys.scale(j) * (ep[j] - sys.mu[j])).collect();
    let dp = (0..m)
        .map(|j| {
            let f = sys.base.rbar[j] - (0..n).map(|k| sys.base.b[j][k] * xs[k]).sum::<f64>();
            f - (0..m).map(|l| sys.base.d[j][l] * ep[l]).sum::<f64>()
        })
        .collect();
    let dc = (0..n)
        .map(|i| s.c[i] * (sys.gamma_bar[i] - (0..n).map(|k| sys.base.gamma[i][k] * xs[k]).sum::<f64>()))
        .collect();
    Ok((dq, dp, dc))
}

/// `H = Phi(C, qs) + Psi(p)`; requires factors.
pub fn hamiltonian(sys: &CanonicalSystem, s: &CanonicalState) -> Result<f64> {
    let f = sys
        .factors
        .as_ref()
        .ok_or_else(|| HlvError::NotApplicable("no Hamiltonian factors for this system".into()))?;
    let e = sys.exponents(&s.q);
    let mut phi = 0.0;
    for k in 0..sys.n() {
        phi += f.rho[k] * s.c[k] * guarded_exp(e[k])?;
    }
    for k in 0..sys.m() {
        phi -= sys.base.rbar[k] * s.q[k];
    }
    let mut psi = 0.0;
    for k in 0..sys.m() {
        psi += f.sigma[k] * (guarded_exp(s.p[k])? - sys.mu[k] * s.p[k]);
    }
    Ok(phi + psi)
}

/// `E = v - mu ln v + sum_i (rho_i x_i - rbar m_i / a_i ln x_i)`.
///
/// Conserved along limitation-free Hamiltonian star trajectories when
/// `sum m_i = 1`; other weights are accepted (see [`lyapunov_weights`]).
pub fn motion_integral(x: &[f64], v: f64, m: &[f64], mu: f64, star: &StarSystem) -> Result<f64> {
    if x.len() != star.n() || m.len() != star.n() {
        return Err(HlvError::Dimension("x and m must have one entry per species".into()));
    }
    if !(v > 0.0) || x.iter().any(|&xi| !(xi > 0.0)) {
        return Err(invalid("x/v", "abundances must be positive"));
    }
    let mut e = v - mu * v.ln();
    for i in 0..star.n() {
        if star.a[i] == 0.0 {
            return Err(invalid("a", format!("a_{i} is zero")));
        }
        e += star.rho[i] * x[i] - star.rbar * m[i] / star.a[i] * x[i].ln();
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarEquilibrium {
    pub xbar: Vec<f64>,
    pub vbar: f64,
}

/// Positive equilibrium of the star with diagonal self-limitation
/// `gamma_i` on specialists and `d` on the generalist.
///
/// `vbar = (rbar + sum mu_i th_i) / (d + sum th_i)` with `mu_i = r_i/a_i`,
/// `th_i = a_i b_i / gamma_i`, and `xbar_i = a_i (vbar - mu_i) / gamma_i`.
/// `Ok(None)` when some component is not strictly positive.
pub fn star_equilibrium(a: &[f64], b: &[f64], r: &[f64], gamma: &[f64], d: f64, rbar: f64) -> Result<Option<StarEquilibrium>> {
    let n = a.len();
    if b.len() != n || r.len() != n || gamma.len() != n {
        return Err(HlvError::Dimension("a, b, r, gamma must share a length".into()));
    }
    if let Some(i) = (0..n).find(|&i| a[i] == 0.0 || gamma[i] == 0.0) {
        return Err(invalid("a/gamma", format!("zero entry at index {i}")));
    }
    let th: Vec<f64> = (0..n).map(|i| a[i] * b[i] / gamma[i]).collect();
    let den = d + th.iter().sum::<f64>();
    if den == 0.0 {
        return Err(HlvError::Degenerate("d + sum(a b / gamma) vanishes".into()));
    }
    let vbar = (rbar + (0..n).map(|i| r[i] / a[i] * th[i]).sum::<f64>()) / den;
    let xbar: Vec<f64> = (0..n).map(|i| a[i] * (vbar - r[i] / a[i]) / gamma[i]).collect();
    if vbar > 0.0 && xbar.iter().all(|&x| x > 0.0) {
        Ok(Some(StarEquilibrium { xbar, vbar }))
    } else {
        Ok(None)
    }
}

/// Weights turning [`motion_integral`] into a Lyapunov function of the
/// self-limited star: `m_i = b_i xbar_i / rbar` with `mu = vbar`. Then
/// `E = v - vbar ln v + sum rho_i (x_i - xbar_i ln x_i)` and
/// `dE/dt = -d (v - vbar)^2 - sum rho_i gamma_i (x_i - xbar_i)^2`.
pub fn lyapunov_weights(star: &StarSystem, eq: &StarEquilibrium) -> Result<(Vec<f64>, f64)> {
    if star.rbar == 0.0 {
        return Err(HlvError::Degenerate("rbar = 0 leaves the weights undefined".into()));
    }
    let m = (0..star.n()).map(|i| star.b[i] * eq.xbar[i] / star.rbar).collect();
    Ok((m, eq.vbar))
}

pub fn lyapunov_function(star: &StarSystem, eq: &StarEquilibrium, x: &[f64], v: f64) -> Result<f64> {
    let (m, mu) = lyapunov_weights(star, eq)?;
    motion_integral(x, v, &m, mu, star)
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dm(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn factor_examples() {
        let f = find_factors(&dm(1, 1, &[2.0]), &dm(1, 1, &[3.0]), 1e-12).unwrap().unwrap();
        assert_eq!(f.sigma, vec![1.0]);
        assert_relative_eq!(f.rho[0], 1.5);
        assert!(f.positive);

        let f = find_factors(&dm(2, 1, &[1.0, 2.0]), &dm(1, 2, &[2.0, 4.0]), 1e-12).unwrap().unwrap();
        assert_eq!(f.rho, vec![2.0, 2.0]);

        let f = find_factors(&dm(2, 2, &[1.0, 0.0, 0.0, 1.0]), &dm(2, 2, &[1.0, 0.0, 0.0, -1.0]), 1e-12)
            .unwrap()
            .unwrap();
        assert!(!f.positive);
    }

    #[test]
    fn factor_failures() {
        assert!(find_factors(&dm(1, 1, &[0.0]), &dm(1, 1, &[0.0]), 1e-12).is_err());
        // One-sided support.
        assert!(find_factors(&dm(1, 1, &[1.0]), &dm(1, 1, &[0.0]), 1e-12).unwrap().is_none());
        // Inconsistent cycle: rho_1 = 1 from column 1, rho_1 = 2 via column 2.
        let a = dm(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = dm(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        assert!(find_factors(&a, &b, 1e-9).unwrap().is_none());
    }

    fn unit_sys() -> CanonicalSystem {
        let base = InteractionSystem::new(vec![1.0], vec![1.0], vec![vec![1.0]], vec![vec![1.0]]).unwrap();
        CanonicalSystem::build(base, vec![1.0], 1e-12).unwrap()
    }

    #[test]
    fn coordinates_and_energy() {
        let s = unit_sys();
        let st = to_canonical(&s, &[1.0], &[1.0]).unwrap();
        assert_eq!((st.q[0], st.p[0], st.c[0]), (0.0, 0.0, 1.0));
        assert_relative_eq!(hamiltonian(&s, &st).unwrap(), 2.0);
        let st2 = CanonicalState { q: vec![0.0], p: vec![2f64.ln()], c: vec![1.0] };
        assert_relative_eq!(hamiltonian(&s, &st2).unwrap(), 1.0 + 2.0 - 2f64.ln(), epsilon = 1e-15);
        let (dq, dp, dc) = transformed_rhs(&s, &st).unwrap();
        assert_eq!((dq[0], dp[0], dc[0]), (0.0, 0.0, 0.0));
        let (x, v) = from_canonical(&s, &CanonicalState { q: vec![1.0], p: vec![0.0], c: vec![1.0] }).unwrap();
        assert_relative_eq!(x[0], std::f64::consts::E);
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn overflow_is_reported() {
        let s = unit_sys();
        let st = CanonicalState { q: vec![800.0], p: vec![0.0], c: vec![1.0] };
        assert!(matches!(from_canonical(&s, &st), Err(HlvError::Overflow { .. })));
    }

    #[test]
    fn equilibrium_residual() {
        let (a, b, r, g) = ([1.0, 2.0], [1.5, 0.5], [0.5, 1.2], [0.3, 0.2]);
        let eq = star_equilibrium(&a, &b, &r, &g, 0.1, 2.0).unwrap().unwrap();
        for i in 0..2 {
            let res = -r[i] + a[i] * eq.vbar - g[i] * eq.xbar[i];
            assert!(res.abs() < 1e-12);
        }
        let res = 2.0 - b[0] * eq.xbar[0] - b[1] * eq.xbar[1] - 0.1 * eq.vbar;
        assert!(res.abs() < 1e-12);
    }
}
