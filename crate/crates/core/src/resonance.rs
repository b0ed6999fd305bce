//! Two weakly coupled star systems and their slow resonance dynamics.
//!
//! With the specialists' constants frozen, each star reduces to
//! `dq_k/dt = e^{p_k} - mu_k`,
//! `dp_k/dt = -Phi_k'(q_k) + kappa g_k(q_other) - eps d_k e^{p_k}`,
//! where `g_1(q_2) = -sum_j bt1_j C2_j e^{a2_j q_2}` (and symmetrically),
//! the cross terms of the abundance equations written with a plus sign.
//!
//! Linearizing about the uncoupled equilibria gives
//! `q1'' + w1^2 q1 = kappa mu1 g12 q2 - eps mu1 d1 q1'`; averaging over the
//! common fast period yields, with `Delta = phi2 - phi1`,
//!
//! ```text
//! 2w dQ1/dtau = -ebar delta1 w Q1 + b12 Q2 sin Delta,   2w Q1 dphi1/dtau = -b12 Q2 cos Delta
//! 2w dQ2/dtau = -ebar delta2 w Q2 + b21 Q1 sin Delta,   2w Q2 dphi2/dtau =  b21 Q1 cos Delta
//! ```
//!
//! with `b12 = mu1 g12`, `b21 = -mu2 g21`, `delta_k = mu_k d_k`, `tau = kappa t`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HlvError, Result, EXP_GUARD};
use crate::integrate::{Trajectory, TrajectoryMeta};
use crate::ode::{self, AdaptiveOptions};
use crate::star::{self, StarSystem};

/// Amplitude below which an oscillation counts as extinct.
pub const EXTINCTION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStarSystem {
    pub star1: StarSystem,
    pub star2: StarSystem,
    /// Effect of the second hub on the first star's specialists (length N1).
    #[serde(default)]
    pub a_tilde1: Vec<f64>,
    /// Effect of the second star's specialists on the first hub (length N2).
    pub b_tilde1: Vec<f64>,
    /// Effect of the first hub on the second star's specialists (length N2).
    #[serde(default)]
    pub a_tilde2: Vec<f64>,
    /// Effect of the first star's specialists on the second hub (length N1).
    pub b_tilde2: Vec<f64>,
    pub kappa: f64,
    pub epsilon: f64,
    pub d1: f64,
    pub d2: f64,
    #[serde(default)]
    pub gamma1: Vec<f64>,
    #[serde(default)]
    pub gamma2: Vec<f64>,
}

impl TwoStarSystem {
    /// Coupling through the hubs only (`a_tilde = 0`, `gamma = 0`).
    pub fn new(star1: StarSystem, star2: StarSystem, b_tilde1: Vec<f64>, b_tilde2: Vec<f64>, kappa: f64, epsilon: f64, d: (f64, f64)) -> Result<Self> {
        let (n1, n2) = (star1.n(), star2.n());
        let s = Self {
            star1,
            star2,
            a_tilde1: vec![0.0; n1],
            b_tilde1,
            a_tilde2: vec![0.0; n2],
            b_tilde2,
            kappa,
            epsilon,
            d1: d.0,
            d2: d.1,
            gamma1: vec![0.0; n1],
            gamma2: vec![0.0; n2],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (n1, n2) = (self.star1.n(), self.star2.n());
        let fill = |v: &Vec<f64>, n: usize| v.is_empty() || v.len() == n;
        if self.b_tilde1.len() != n2 || self.b_tilde2.len() != n1 {
            return Err(HlvError::Dimension("b_tilde1 needs N2 entries, b_tilde2 needs N1".into()));
        }
        if !fill(&self.a_tilde1, n1) || !fill(&self.a_tilde2, n2) || !fill(&self.gamma1, n1) || !fill(&self.gamma2, n2) {
            return Err(HlvError::Dimension("a_tilde/gamma vectors must match their star".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(invalid("kappa", "must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(invalid("epsilon", "must be nonnegative"));
        }
        if !(self.d1 >= 0.0 && self.d2 >= 0.0) {
            return Err(invalid("d1/d2", "must be nonnegative"));
        }
        Ok(())
    }

    /// `eps / kappa`.
    pub fn ebar(&self) -> f64 {
        self.epsilon / self.kappa
    }

    /// Coupling felt by the first hub, as a function of `q2`.
    pub fn g1(&self, q2: f64) -> f64 {
        let s = &self.star2;
        -(0..s.n()).map(|j| self.b_tilde1[j] * s.c[j] * (s.a[j] * q2).exp()).sum::<f64>()
    }

    pub fn g1_prime(&self, q2: f64) -> f64 {
        let s = &self.star2;
        -(0..s.n()).map(|j| self.b_tilde1[j] * s.c[j] * s.a[j] * (s.a[j] * q2).exp()).sum::<f64>()
    }

    /// Coupling felt by the second hub, as a function of `q1`.
    pub fn g2(&self, q1: f64) -> f64 {
        let s = &self.star1;
        -(0..s.n()).map(|i| self.b_tilde2[i] * s.c[i] * (s.a[i] * q1).exp()).sum::<f64>()
    }

    pub fn g2_prime(&self, q1: f64) -> f64 {
        let s = &self.star1;
        -(0..s.n()).map(|i| self.b_tilde2[i] * s.c[i] * s.a[i] * (s.a[i] * q1).exp()).sum::<f64>()
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let (q1, p1, q2, p2) = (y[0], y[1], y[2], y[3]);
        let (s1, s2) = (&self.star1, &self.star2);
        let (v, w) = (p1.exp(), p2.exp());
        dy[0] = v - s1.mu;
        dy[1] = -s1.dphi(q1) + self.kappa * self.g1(q2) - self.epsilon * self.d1 * v;
        dy[2] = w - s2.mu;
        dy[3] = -s2.dphi(q2) + self.kappa * self.g2(q1) - self.epsilon * self.d2 * w;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceModel {
    pub omega1: f64,
    pub omega2: f64,
    pub g12: f64,
    pub g21: f64,
    pub b12: f64,
    pub b21: f64,
    pub ebar: f64,
    /// Damping rates `mu_k d_k`.
    pub delta: [f64; 2],
    /// Constant forcing `ebar mu_k d_k` (shifts the equilibrium only).
    pub mu_tilde: [f64; 2],
    pub qbar: [f64; 2],
    pub mu: [f64; 2],
}

impl ResonanceModel {
    /// Shared resonant frequency.
    pub fn omega(&self) -> f64 {
        0.5 * (self.omega1 + self.omega2)
    }

    pub fn r(&self) -> f64 {
        self.g12 * self.g21
    }
}

fn interior_min(s: &StarSystem) -> Result<f64> {
    let prof = star::profile(s)?;
    prof.global_min()
        .map(|m| m.q)
        .ok_or_else(|| HlvError::NotApplicable("star has no interior potential minimum".into()))
}

/// Linearization about the uncoupled equilibria.
pub fn linearize(sys: &TwoStarSystem) -> Result<ResonanceModel> {
    sys.validate()?;
    let q1 = interior_min(&sys.star1)?;
    let q2 = interior_min(&sys.star2)?;
    let (s1, s2) = (&sys.star1, &sys.star2);
    let w1 = (s1.mu * s1.d2phi(q1)).sqrt();
    let w2 = (s2.mu * s2.d2phi(q2)).sqrt();
    if !(w1 > 0.0 && w2 > 0.0) {
        return Err(HlvError::NotApplicable("degenerate minimum: zero frequency".into()));
    }
    let g12 = sys.g1_prime(q2);
    let g21 = sys.g2_prime(q1);
    let ebar = sys.ebar();
    let delta = [s1.mu * sys.d1, s2.mu * sys.d2];
    Ok(ResonanceModel {
        omega1: w1,
        omega2: w2,
        g12,
        g21,
        b12: s1.mu * g12,
        b21: -s2.mu * g21,
        ebar,
        delta,
        mu_tilde: [ebar * delta[0], ebar * delta[1]],
        qbar: [q1, q2],
        mu: [s1.mu, s2.mu],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detuning {
    Resonant,
    /// Solutions stay small regular perturbations of the uncoupled cycles.
    Nonresonant,
}

/// Resonant iff `|w1 - w2| <= factor * kappa` (inclusive).
pub fn detuning(model: &ResonanceModel, kappa: f64, factor: f64) -> Detuning {
    if (model.omega1 - model.omega2).abs() <= factor * kappa {
        Detuning::Resonant
    } else {
        Detuning::Nonresonant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockedRates {
    pub lambda: [Complex64; 2],
    pub max_re: f64,
    pub growth: bool,
}

/// The 2x2 matrix of the phase-locked system `dQ/dtau = L Q`.
pub fn locked_matrix(model: &ResonanceModel, sign: f64) -> Matrix2<f64> {
    let w = model.omega();
    let e = model.ebar;
    Matrix2::new(
        -e * model.delta[0] * w,
        sign * model.b12,
        sign * model.b21,
        -e * model.delta[1] * w,
    ) / (2.0 * w)
}

/// Closed-form eigenvalues of the phase-locked linear system on the branch
/// `sin Delta = sign`.
pub fn phase_locked_rates(model: &ResonanceModel, sign: f64) -> LockedRates {
    let w = model.omega();
    let e = model.ebar;
    let (d1, d2) = (model.delta[0], model.delta[1]);
    let disc = Complex64::new(e * e * w * w * (d1 - d2).powi(2) + 4.0 * sign * sign * model.b12 * model.b21, 0.0).sqrt();
    let base = Complex64::new(-e * w * (d1 + d2), 0.0);
    let l1 = (base + disc) / (4.0 * w);
    let l2 = (base - disc) / (4.0 * w);
    let max_re = l1.re.max(l2.re);
    LockedRates { lambda: [l1, l2], max_re, growth: max_re > 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Unstable,
    Stable,
    Damped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    #[serde(rename = "R")]
    pub r: f64,
    pub b12: f64,
    pub b21: f64,
    pub ebar: f64,
    pub lambda_max: f64,
    pub verdict: Verdict,
}

/// `unstable` iff `R < 0` and the locked system grows; `damped` when
/// `R < 0` but damping wins; `stable` when `R >= 0`.
pub fn instability_criterion(model: &ResonanceModel) -> StabilityReport {
    let rates = phase_locked_rates(model, 1.0);
    let r = model.r();
    let verdict = if r >= 0.0 {
        Verdict::Stable
    } else if rates.growth {
        Verdict::Unstable
    } else {
        Verdict::Damped
    };
    StabilityReport { r, b12: model.b12, b21: model.b21, ebar: model.ebar, lambda_max: rates.max_re, verdict }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowTrajectory {
    pub tau: Vec<f64>,
    /// Rows `(Q1, Q2, phi1, phi2)`.
    pub states: Vec<[f64; 4]>,
    /// Slow time at which an amplitude fell below the extinction threshold.
    pub extinction: Option<f64>,
}

impl SlowTrajectory {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("tau,Q1,Q2,phi1,phi2\n");
        for (t, s) in self.tau.iter().zip(&self.states) {
            out.push_str(&format!("{t:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n", s[0], s[1], s[2], s[3]));
        }
        out
    }
}

fn slow_rhs(model: &ResonanceModel, y: &[f64], dy: &mut [f64]) {
    let w = model.omega();
    let (q1, q2) = (y[0], y[1]);
    let delta = y[3] - y[2];
    let (s, c) = delta.sin_cos();
    dy[0] = (-model.ebar * model.delta[0] * w * q1 + model.b12 * q2 * s) / (2.0 * w);
    dy[1] = (-model.ebar * model.delta[1] * w * q2 + model.b21 * q1 * s) / (2.0 * w);
    dy[2] = -model.b12 * q2 * c / (2.0 * w * q1);
    dy[3] = model.b21 * q1 * c / (2.0 * w * q2);
}

/// Integrates the resonance system, sampling at `samples` points in
/// `[0, tau_end]`; stops with an extinction event once an amplitude drops
/// below [`EXTINCTION`].
pub fn integrate_resonance(model: &ResonanceModel, q0: [f64; 2], phi0: [f64; 2], tau_end: f64, samples: usize, rtol: f64) -> Result<SlowTrajectory> {
    if !(q0[0] > 0.0 && q0[1] > 0.0) {
        return Err(invalid("Q0", "amplitudes must be positive"));
    }
    if !(tau_end > 0.0) || samples < 2 {
        return Err(invalid("tau_end/samples", "need tau_end > 0 and at least two samples"));
    }
    let opts = AdaptiveOptions::new(rtol, rtol * 1e-3 * q0[0].min(q0[1]));
    let grid = crate::integrate::linspace(0.0, tau_end, samples);
    let mut y = vec![q0[0], q0[1], phi0[0], phi0[1]];
    let mut tau = vec![0.0];
    let mut states = vec![[y[0], y[1], y[2], y[3]]];
    for win in grid.windows(2) {
        let out = ode::solve_dopri5(|_, y, dy| slow_rhs(model, y, dy), win[0], &y, &[win[1]], &opts);
        let ok = out.ok().and_then(|o| o.states.into_iter().last());
        match ok {
            Some(next) if next.iter().all(|v| v.is_finite()) && next[0] >= EXTINCTION && next[1] >= EXTINCTION => {
                y = next;
                tau.push(win[1]);
                states.push([y[0], y[1], y[2], y[3]]);
            }
            _ => {
                return Ok(SlowTrajectory { tau, states, extinction: Some(win[1]) });
            }
        }
    }
    Ok(SlowTrajectory { tau, states, extinction: None })
}

/// Equilibrium `(q1*, q2*)` of the coupled reduced system (`p_k = ln mu_k`),
/// by Newton's method from the uncoupled minima.
pub fn coupled_equilibrium(sys: &TwoStarSystem) -> Result<[f64; 2]> {
    let mut q = Vector2::new(interior_min(&sys.star1)?, interior_min(&sys.star2)?);
    let (s1, s2) = (&sys.star1, &sys.star2);
    let (k, e) = (sys.kappa, sys.epsilon);
    for _ in 0..100 {
        let f = Vector2::new(
            -s1.dphi(q[0]) + k * sys.g1(q[1]) - e * sys.d1 * s1.mu,
            -s2.dphi(q[1]) + k * sys.g2(q[0]) - e * sys.d2 * s2.mu,
        );
        let j = Matrix2::new(-s1.d2phi(q[0]), k * sys.g1_prime(q[1]), k * sys.g2_prime(q[0]), -s2.d2phi(q[1]));
        let step = j.lu().solve(&f).ok_or_else(|| HlvError::Degenerate("singular Jacobian at equilibrium".into()))?;
        q -= step;
        if step.norm() <= 1e-14 * (1.0 + q.norm()) {
            return Ok([q[0], q[1]]);
        }
    }
    Err(HlvError::Integration("equilibrium Newton iteration did not converge".into()))
}

/// Initial state placing each star at `q* + Q sin(phi)` with velocity
/// `w Q cos(phi)`.
pub fn initial_state(sys: &TwoStarSystem, model: &ResonanceModel, q0: [f64; 2], phi0: [f64; 2]) -> Result<[f64; 4]> {
    let eq = coupled_equilibrium(sys)?;
    let w = model.omega();
    let mu = [sys.star1.mu, sys.star2.mu];
    let mut y = [0.0; 4];
    for k in 0..2 {
        let vel = mu[k] + w * q0[k] * phi0[k].cos();
        if !(vel > 0.0) {
            return Err(invalid("Q0", "amplitude too large for a positive hub abundance"));
        }
        y[2 * k] = eq[k] + q0[k] * phi0[k].sin();
        y[2 * k + 1] = vel.ln();
    }
    Ok(y)
}

/// Direct simulation of the coupled reduced system, labels `q1,p1,q2,p2`.
pub fn simulate_two_star(sys: &TwoStarSystem, y0: [f64; 4], times: &[f64], rtol: f64, atol: f64) -> Result<Trajectory> {
    sys.validate()?;
    let mut opts = AdaptiveOptions::new(rtol, atol);
    opts.escape_bound = Some(EXP_GUARD);
    let out = ode::solve_dopri5(|_, y, dy| sys.rhs(y, dy), times.first().copied().unwrap_or(0.0), &y0, times, &opts)?;
    Ok(Trajectory {
        times: out.times,
        states: out.states,
        labels: ["q1", "p1", "q2", "p2"].iter().map(|s| s.to_string()).collect(),
        energy: None,
        meta: TrajectoryMeta {
            integrator: "dopri5".into(),
            rtol: Some(rtol),
            atol: Some(atol),
            step: None,
            accepted: out.accepted,
            rejected: out.rejected,
            escape: out.escape,
        },
    })
}

/// Oscillation envelope: the largest `|value - center|` in consecutive
/// windows of length `period`, reported at each window's midpoint.
pub fn envelope(times: &[f64], values: &[f64], center: f64, period: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let Some(&t0) = times.first() else { return out };
    let mut start = t0;
    let mut amp: f64 = 0.0;
    for (&t, &v) in times.iter().zip(values) {
        if t >= start + period {
            out.push((start + 0.5 * period, amp));
            start += period * ((t - start) / period).floor();
            amp = 0.0;
        }
        amp = amp.max((v - center).abs());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub early: f64,
    pub late: f64,
    pub escaped: bool,
    pub growth: bool,
}

/// Long-horizon simulation from small amplitudes: growth when the combined
/// envelope rises tenfold (or the run escapes).
pub fn simulated_growth(sys: &TwoStarSystem, amplitude: f64, tau_end: f64) -> Result<GrowthCheck> {
    let model = linearize(sys)?;
    let w = model.omega();
    let period = 2.0 * std::f64::consts::PI / w;
    let t_end = tau_end / sys.kappa;
    // Generic start: not an eigenvector of either locked branch.
    let y0 = initial_state(sys, &model, [amplitude, 0.6 * amplitude], [0.0, 1.0])?;
    let n = ((t_end / period) * 32.0).ceil() as usize + 1;
    let times = crate::integrate::linspace(0.0, t_end, n);
    let tr = simulate_two_star(sys, y0, &times, 1e-10, 1e-14)?;
    let eq = coupled_equilibrium(sys)?;
    let e1 = envelope(&tr.times, &tr.column(0), eq[0], period);
    let e2 = envelope(&tr.times, &tr.column(2), eq[1], period);
    let comb: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| a.1.hypot(b.1)).collect();
    let k = (comb.len() / 20).max(1);
    let early = comb.iter().take(k).copied().fold(0.0, f64::max);
    let late = comb.iter().rev().take(k).copied().fold(0.0, f64::max);
    let escaped = tr.meta.escape.is_some();
    Ok(GrowthCheck { early, late, escaped, growth: escaped || late > 10.0 * early })
}

/// Fixed regression suite of twelve coupled pairs with identical
/// frequencies, spanning stable, unstable and damped verdicts.
///
/// Pairs with opposite-signed couplings use the symmetric well
/// `Phi = 2 cosh q`: its vanishing third derivative keeps the O(kappa)
/// equilibrium shift from detuning the two stars.
pub fn regression_suite() -> Vec<(String, TwoStarSystem)> {
    let unit = StarSystem::unit();
    let pair = StarSystem::new(vec![1.0, 0.5], vec![1.0, 1.0], 1.0, 1.0, vec![1.0, 1.0]).expect("valid star");
    let sym = StarSystem::new(vec![1.0, -1.0], vec![1.0, -1.0], 0.0, 1.0, vec![1.0, 1.0]).expect("valid star");
    let kappa = 0.01;
    // (b_tilde1, b_tilde2, ebar, d, star: 0 unit / 1 two-species / 2 symmetric)
    let cases: [(f64, f64, f64, f64, u8); 12] = [
        (1.0, 1.0, 0.0, 0.0, 0),
        (1.0, 1.0, 0.1, 1.0, 0),
        (2.0, 0.5, 0.2, 1.0, 1),
        (1.0, -1.0, 0.0, 0.0, 2),
        (-1.0, 1.0, 0.0, 0.0, 2),
        (1.0, -1.0, 0.1, 1.0, 2),
        (2.0, -0.5, 0.2, 1.0, 2),
        (1.0, -1.0, 3.0, 1.0, 2),
        (-1.0, 1.0, 5.0, 1.0, 2),
        (-1.0, -1.0, 0.0, 0.0, 1),
        (0.5, -0.5, 0.05, 1.0, 2),
        (0.5, -0.5, 0.8, 1.0, 2),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(i, &(bt1, bt2, ebar, d, kind))| {
            let (s, pattern) = match kind {
                0 => (unit.clone(), vec![1.0]),
                1 => (pair.clone(), vec![1.0, 1.0]),
                _ => (sym.clone(), vec![1.0, 0.0]),
            };
            let bt = |b: f64| pattern.iter().map(|p| p * b).collect::<Vec<f64>>();
            let sys = TwoStarSystem::new(s.clone(), s, bt(bt1), bt(bt2), kappa, ebar * kappa, (d, d)).expect("valid pair");
            (format!("case{:02}", i + 1), sys)
        })
        .collect()
}
