//! Slow-environment averaging for star systems.
//!
//! Coefficients `a(tau)`, `b(tau)`, `rbar(tau)` drift on the slow time
//! `tau = eps t`, the generalist has self-limitation `eps dbar` and the
//! specialists `kappa gamma_i` with `kappa = beta eps`. Writing
//! `x_i = C_i exp(a_i q)`, `v = exp(p)`:
//!
//! ```text
//! dq/dt = e^p - mu,   dp/dt = -Phi_q - eps dbar e^p,
//! dC_i/dt = eps C_i (beta (ghat_i - gamma_i C_i e^{a_i q}) - q a_i'(tau)),
//! ```
//!
//! and the averaged energy/constant evolution over one fast period is
//!
//! ```text
//! dE/dtau = S1 + S2 + S3,     dCbar_i/dtau = W_i
//! S1 = -dbar <e^P (e^P - mu)>,  S2 = <Phi_tau>,
//! S3 = sum_i rho_i Cbar_i (beta ghat_i th_i - beta gamma_i Cbar_i <e^{2 a_i Q}> - a_i' <Q e^{a_i Q}>)
//! W_i = Cbar_i (beta (ghat_i - gamma_i Cbar_i th_i) - a_i' <Q>),   th_i = <e^{a_i Q}>.
//! ```

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, HlvError, Result};
use crate::integrate::{Trajectory, TrajectoryMeta};
use crate::ode::{self, AdaptiveOptions};
use crate::star::{self, ExtremumKind, LevelComponent, PotentialProfile, StarSystem};
use crate::stats;

/// Step used for central differences in `tau` when no derivative is known.
pub const FD_STEP: f64 = 1e-4;

/// A closed-form coefficient with no known derivative.
#[derive(Clone)]
pub struct CustomCoef(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl fmt::Debug for CustomCoef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomCoef(..)")
    }
}

/// A coefficient as a function of slow time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coef {
    Const(f64),
    /// Linear interpolation, held constant outside the table.
    Table { tau: Vec<f64>, values: Vec<f64> },
    /// `mean + amp sin(freq tau + phase)`.
    Sine { mean: f64, amp: f64, freq: f64, #[serde(default)] phase: f64 },
    #[serde(skip)]
    Custom(CustomCoef),
}

impl From<f64> for Coef {
    fn from(v: f64) -> Self {
        Coef::Const(v)
    }
}

impl Coef {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Coef::Custom(CustomCoef(Arc::new(f)))
    }

    pub fn value(&self, tau: f64) -> f64 {
        match self {
            Coef::Const(v) => *v,
            Coef::Table { tau: ts, values } => {
                if tau <= ts[0] {
                    return values[0];
                }
                let last = ts.len() - 1;
                if tau >= ts[last] {
                    return values[last];
                }
                let k = ts.partition_point(|&t| t <= tau) - 1;
                let s = (tau - ts[k]) / (ts[k + 1] - ts[k]);
                values[k] + s * (values[k + 1] - values[k])
            }
            Coef::Sine { mean, amp, freq, phase } => mean + amp * (freq * tau + phase).sin(),
            Coef::Custom(f) => (f.0)(tau),
        }
    }

    /// Analytic derivative when available.
    pub fn derivative(&self, tau: f64) -> Option<f64> {
        match self {
            Coef::Const(_) => Some(0.0),
            Coef::Table { tau: ts, values } => {
                if tau < ts[0] || tau >= ts[ts.len() - 1] {
                    return Some(0.0);
                }
                let k = ts.partition_point(|&t| t <= tau) - 1;
                Some((values[k + 1] - values[k]) / (ts[k + 1] - ts[k]))
            }
            Coef::Sine { amp, freq, phase, .. } => Some(amp * freq * (freq * tau + phase).cos()),
            Coef::Custom(_) => None,
        }
    }

    fn is_frozen(&self) -> bool {
        match self {
            Coef::Const(_) => true,
            Coef::Table { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
            Coef::Sine { amp, freq, .. } => *amp == 0.0 || *freq == 0.0,
            Coef::Custom(_) => false,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match self {
            Coef::Table { tau, values } => {
                if tau.is_empty() || tau.len() != values.len() {
                    return Err(invalid(name, "table needs equal, non-empty tau/values"));
                }
                if tau.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(invalid(name, "table tau must be strictly increasing"));
                }
                Ok(())
            }
            Coef::Const(v) if !v.is_finite() => Err(invalid(name, "must be finite")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlowEnvironment {
    pub a: Vec<Coef>,
    pub b: Vec<Coef>,
    pub rbar: Coef,
    pub mu: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub dbar: f64,
    pub gamma_hat: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl SlowEnvironment {
    /// Frozen coefficients, no self-limitation.
    pub fn frozen(star: &StarSystem, epsilon: f64) -> Self {
        let n = star.n();
        Self {
            a: star.a.iter().map(|&v| Coef::Const(v)).collect(),
            b: star.b.iter().map(|&v| Coef::Const(v)).collect(),
            rbar: Coef::Const(star.rbar),
            mu: star.mu,
            epsilon,
            beta: 0.0,
            dbar: 0.0,
            gamma_hat: vec![0.0; n],
            gamma: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || self.b.len() != n || self.gamma_hat.len() != n || self.gamma.len() != n {
            return Err(HlvError::Dimension("a, b, gamma_hat and gamma must share a nonzero length".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        if !(self.beta >= 0.0) {
            return Err(invalid("beta", "must be nonnegative"));
        }
        if !(self.mu > 0.0) {
            return Err(invalid("mu", "must be positive"));
        }
        for (i, c) in self.a.iter().enumerate() {
            c.validate(&format!("a[{i}]"))?;
        }
        for (i, c) in self.b.iter().enumerate() {
            c.validate(&format!("b[{i}]"))?;
        }
        self.rbar.validate("rbar")
    }

    pub fn is_frozen(&self) -> bool {
        self.a.iter().chain(&self.b).chain(std::iter::once(&self.rbar)).all(Coef::is_frozen)
    }

    fn has_derivatives(&self) -> bool {
        self.a
            .iter()
            .chain(&self.b)
            .chain(std::iter::once(&self.rbar))
            .all(|c| !matches!(c, Coef::Custom(_)))
    }

    /// The frozen star at slow time `tau` with constants `cbar`.
    pub fn star_at(&self, tau: f64, cbar: &[f64]) -> Result<StarSystem> {
        let a: Vec<f64> = self.a.iter().map(|c| c.value(tau)).collect();
        let b: Vec<f64> = self.b.iter().map(|c| c.value(tau)).collect();
        StarSystem::new(a, b, self.rbar.value(tau), self.mu, cbar.to_vec())
    }

    /// `ln v`-independent part of the rates: `r_i(tau) = a_i(tau) mu - kappa ghat_i`.
    pub fn rates_at(&self, tau: f64) -> Vec<f64> {
        let kappa = self.beta * self.epsilon;
        (0..self.n()).map(|i| self.a[i].value(tau) * self.mu - kappa * self.gamma_hat[i]).collect()
    }
}

/// Balance value of `mu` making the averaged `C` dynamics stationary:
/// `mu = (rbar + sum b_k r_k / gamma_k) / (sum b_k a_k / gamma_k)`.
pub fn mu_balance(a: &[f64], b: &[f64], r: &[f64], gamma: &[f64], rbar: f64) -> Result<f64> {
    let n = a.len();
    if b.len() != n || r.len() != n || gamma.len() != n {
        return Err(HlvError::Dimension("a, b, r, gamma must share a length".into()));
    }
    if let Some(i) = gamma.iter().position(|&g| g == 0.0) {
        return Err(invalid("gamma", format!("gamma_{i} is zero")));
    }
    let den: f64 = (0..n).map(|k| b[k] * a[k] / gamma[k]).sum();
    if den == 0.0 {
        return Err(HlvError::Degenerate("sum b_k a_k / gamma_k vanishes".into()));
    }
    Ok((rbar + (0..n).map(|k| b[k] * r[k] / gamma[k]).sum::<f64>()) / den)
}

/// Momentum on the upper branch (`dq/dt > 0`) for energy `e` at position `q`.
pub fn upper_momentum(star: &StarSystem, q: f64, e: f64) -> Result<f64> {
    let s = (star.level(e) - star.phi(q)) / star.mu;
    if s < 0.0 {
        return Err(HlvError::EmptyLevelSet { level: star.level(e), minimum: star.phi(q) });
    }
    let (wu, _) = star::kinetic_branches(s);
    Ok(star.mu.ln() + wu.ln_1p())
}

/// `<f(Q, P)>` over the orbit of energy `e` in the global-minimum well.
/// At an equilibrium energy the orbit degenerates and `f(q*, ln mu)` is
/// returned.
pub fn period_average(star: &StarSystem, e: f64, f: &dyn Fn(f64, f64) -> f64) -> Result<f64> {
    let prof = star::profile(star)?;
    let level = star.level(e);
    let q0 = prof
        .global_min()
        .ok_or_else(|| HlvError::NotPeriodic { class: "no well".into() })?
        .q;
    match star::level_component(star, &prof, level, q0)? {
        LevelComponent::Point(q) => Ok(f(q, star.mu.ln())),
        LevelComponent::Interval(a, b) => Ok(star::orbit_averages(star, level, a, b, &[f])?.1[0]),
        _ => Err(HlvError::NotPeriodic { class: "non-periodic level set".into() }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedState {
    pub tau: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "Cbar")]
    pub cbar: Vec<f64>,
    /// A point of the tracked well (updated to its minimum while evolving).
    pub q_anchor: f64,
}

/// Where the tracked orbit sits relative to the barriers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    /// Level below every barrier bounding the well.
    Below,
    /// Level above at least one barrier inside the orbit.
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitInfo {
    pub period: f64,
    pub q_minus: f64,
    pub q_plus: f64,
    pub q_well: f64,
    pub equilibrium: bool,
    pub approach: Approach,
    /// Distance (in `Phi`) to the nearest relevant barrier; `inf` if none.
    pub margin: f64,
    /// Local maxima enclosed by the orbit.
    pub interior_maxima: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedDerivatives {
    pub de: f64,
    pub dc: Vec<f64>,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub theta: Vec<f64>,
    pub q_mean: f64,
    pub orbit: OrbitInfo,
    pub s2_method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RhsOutcome {
    Derivatives(AveragedDerivatives),
    /// The level set no longer bounds a periodic orbit around the well.
    OrbitLost { level: f64 },
}

fn basin_min(prof: &PotentialProfile, q: f64) -> Option<f64> {
    let left = prof
        .extrema
        .iter()
        .filter(|e| e.kind == ExtremumKind::Max && e.q < q)
        .map(|e| e.q)
        .fold(f64::NEG_INFINITY, f64::max);
    let right = prof
        .extrema
        .iter()
        .filter(|e| e.kind == ExtremumKind::Max && e.q > q)
        .map(|e| e.q)
        .fold(f64::INFINITY, f64::min);
    prof.minima().find(|m| m.q > left && m.q < right).map(|m| m.q).or_else(|| {
        // Anchor sitting on a maximum: take the lower neighbouring minimum.
        prof.minima()
            .filter(|m| (m.q - q).abs() > 0.0)
            .min_by(|a, b| (a.q - q).abs().total_cmp(&(b.q - q).abs()))
            .map(|m| m.q)
    })
}

/// Classifies the tracked orbit: equilibrium, periodic (with barrier margin)
/// or lost.
fn locate_orbit(star: &StarSystem, prof: &PotentialProfile, level: f64, anchor: f64) -> Result<Option<OrbitInfo>> {
    let q_well = basin_min(prof, anchor).ok_or_else(|| HlvError::NotPeriodic { class: "no well".into() })?;
    let phi_well = star.phi(q_well);
    let tol = star::degeneracy_tol(level);
    if level <= phi_well + tol {
        let margin = prof
            .maxima()
            .map(|m| m.phi - phi_well)
            .fold(f64::INFINITY, f64::min);
        return Ok(Some(OrbitInfo {
            period: f64::NAN,
            q_minus: q_well,
            q_plus: q_well,
            q_well,
            equilibrium: true,
            approach: Approach::Below,
            margin,
            interior_maxima: 0,
        }));
    }
    match star::level_component(star, prof, level, q_well)? {
        LevelComponent::Interval(a, b) => {
            let inside: Vec<f64> = prof.maxima().filter(|m| m.q > a && m.q < b).map(|m| m.phi).collect();
            let interior = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let outer_l = prof.maxima().filter(|m| m.q <= a).map(|m| m.q).fold(f64::NEG_INFINITY, f64::max);
            let outer_r = prof.maxima().filter(|m| m.q >= b).map(|m| m.q).fold(f64::INFINITY, f64::min);
            let outer = prof
                .maxima()
                .filter(|m| m.q == outer_l || m.q == outer_r)
                .map(|m| m.phi - level)
                .fold(f64::INFINITY, f64::min);
            let (approach, margin) = if interior.is_finite() {
                (Approach::Above, (level - interior).min(outer))
            } else {
                (Approach::Below, outer)
            };
            Ok(Some(OrbitInfo {
                period: f64::NAN,
                q_minus: a,
                q_plus: b,
                q_well,
                equilibrium: false,
                approach,
                margin,
                interior_maxima: inside.len(),
            }))
        }
        LevelComponent::Point(_) => Ok(Some(OrbitInfo {
            period: f64::NAN,
            q_minus: q_well,
            q_plus: q_well,
            q_well,
            equilibrium: true,
            approach: Approach::Below,
            margin: f64::INFINITY,
            interior_maxima: 0,
        })),
        _ => Ok(None),
    }
}

fn env_profile(star: &StarSystem) -> Result<PotentialProfile> {
    star::profile(star)
}

/// Averaged right-hand side at `state`.
pub fn averaged_rhs(env: &SlowEnvironment, state: &AveragedState) -> Result<RhsOutcome> {
    env.validate()?;
    let n = env.n();
    let tau = state.tau;
    let star = env.star_at(tau, &state.cbar)?;
    let prof = env_profile(&star)?;
    let level = star.level(state.e);
    let Some(mut orbit) = locate_orbit(&star, &prof, level, state.q_anchor)? else {
        return Ok(RhsOutcome::OrbitLost { level });
    };
    let a: Vec<f64> = star.a.clone();
    let da: Vec<f64> = env.a.iter().map(|c| c.derivative(tau).unwrap_or(f64::NAN)).collect();
    let db: Vec<f64> = env.b.iter().map(|c| c.derivative(tau).unwrap_or(f64::NAN)).collect();
    let drbar = env.rbar.derivative(tau).unwrap_or(f64::NAN);
    let analytic = env.has_derivatives();
    let da_fd: Vec<f64> = if analytic {
        da.clone()
    } else {
        env.a
            .iter()
            .map(|c| (c.value(tau + FD_STEP) - c.value(tau - FD_STEP)) / (2.0 * FD_STEP))
            .collect()
    };

    // Observables: e^{a_i Q}, e^{2 a_i Q}, Q e^{a_i Q} (i = 1..N), Q, (e^P - mu)^2,
    // and for finite differences Phi(q; tau +/- h).
    let mu = env.mu;
    let (theta, e2, qe, q_mean, kin2, fd_pair) = if orbit.equilibrium {
        let q = orbit.q_well;
        let th: Vec<f64> = a.iter().map(|ai| (ai * q).exp()).collect();
        let fd = if analytic {
            None
        } else {
            let sp = env.star_at(tau + FD_STEP, &state.cbar)?;
            let sm = env.star_at(tau - FD_STEP, &state.cbar)?;
            Some((sp.phi(q), sm.phi(q)))
        };
        (
            th.clone(),
            th.iter().map(|t| t * t).collect::<Vec<_>>(),
            th.iter().map(|t| q * t).collect::<Vec<_>>(),
            q,
            0.0,
            fd,
        )
    } else {
        let mut obs: Vec<Box<dyn Fn(f64, f64) -> f64>> = Vec::with_capacity(3 * n + 4);
        for i in 0..n {
            let ai = a[i];
            obs.push(Box::new(move |q, _| (ai * q).exp()));
        }
        for i in 0..n {
            let ai = a[i];
            obs.push(Box::new(move |q, _| (2.0 * ai * q).exp()));
        }
        for i in 0..n {
            let ai = a[i];
            obs.push(Box::new(move |q, _| q * (ai * q).exp()));
        }
        obs.push(Box::new(|q, _| q));
        obs.push(Box::new(move |_, p| {
            let w = p.exp() - mu;
            w * w
        }));
        if !analytic {
            let sp = env.star_at(tau + FD_STEP, &state.cbar)?;
            let sm = env.star_at(tau - FD_STEP, &state.cbar)?;
            obs.push(Box::new(move |q, _| sp.phi(q)));
            obs.push(Box::new(move |q, _| sm.phi(q)));
        }
        let refs: Vec<&dyn Fn(f64, f64) -> f64> = obs.iter().map(|b| b.as_ref()).collect();
        let (t, avg) = star::orbit_averages(&star, level, orbit.q_minus, orbit.q_plus, &refs)?;
        orbit.period = t;
        let fd = (!analytic).then(|| (avg[3 * n + 2], avg[3 * n + 3]));
        (
            avg[..n].to_vec(),
            avg[n..2 * n].to_vec(),
            avg[2 * n..3 * n].to_vec(),
            avg[3 * n],
            avg[3 * n + 1],
            fd,
        )
    };

    let rho = &star.rho;
    let cbar = &state.cbar;
    // <e^P (e^P - mu)> = <(e^P - mu)^2> because <e^P - mu> = <dQ/dt> = 0.
    let s1 = -env.dbar * kin2;
    let s2 = match fd_pair {
        Some((p, m)) => (p - m) / (2.0 * FD_STEP),
        None => {
            let mut s = -drbar * q_mean;
            for i in 0..n {
                let drho = (db[i] * a[i] - star.b[i] * da[i]) / (a[i] * a[i]);
                s += cbar[i] * (drho * theta[i] + rho[i] * da[i] * qe[i]);
            }
            s
        }
    };
    let beta = env.beta;
    let mut s3 = 0.0;
    let mut dc = vec![0.0; n];
    for i in 0..n {
        let ap = da_fd[i];
        s3 += rho[i] * cbar[i] * (beta * env.gamma_hat[i] * theta[i] - beta * env.gamma[i] * cbar[i] * e2[i] - ap * qe[i]);
        dc[i] = cbar[i] * (beta * (env.gamma_hat[i] - env.gamma[i] * cbar[i] * theta[i]) - ap * q_mean);
    }
    Ok(RhsOutcome::Derivatives(AveragedDerivatives {
        de: s1 + s2 + s3,
        dc,
        s1,
        s2,
        s3,
        theta,
        q_mean,
        orbit,
        s2_method: if analytic { "analytic".into() } else { "finite-difference".into() },
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Burst,
    Stabilized,
    EnvironmentDestabilized,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Burst => "burst",
            EventKind::Stabilized => "stabilized",
            EventKind::EnvironmentDestabilized => "environment-destabilized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeEvent {
    pub tau: f64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedTrajectory {
    pub states: Vec<AveragedState>,
    pub events: Vec<RegimeEvent>,
    pub s2_method: String,
}

impl AveragedTrajectory {
    /// CSV `tau,E,C1..CN`.
    pub fn to_csv_string(&self) -> String {
        let n = self.states.first().map_or(0, |s| s.cbar.len());
        let mut out = String::from("tau,E");
        for i in 1..=n {
            out.push_str(&format!(",C{i}"));
        }
        out.push('\n');
        for s in &self.states {
            out.push_str(&format!("{:.16e},{:.16e}", s.tau, s.e));
            for c in &s.cbar {
                out.push_str(&format!(",{c:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Levels this close to a barrier count as on the separatrix, where the
/// period diverges and averages stop being meaningful.
const SEPARATRIX_GAP: f64 = 1e-7;

/// Derivatives while the orbit stays in the regime with `interior` enclosed
/// maxima; `None` once it has crossed a barrier.
fn derivs(env: &SlowEnvironment, s: &AveragedState, interior: usize) -> Result<Option<AveragedDerivatives>> {
    Ok(match averaged_rhs(env, s)? {
        RhsOutcome::Derivatives(d) if d.orbit.margin > SEPARATRIX_GAP * (1.0 + s.e.abs()) && d.orbit.interior_maxima == interior => {
            Some(d)
        }
        _ => None,
    })
}

fn advance(s: &AveragedState, k: &AveragedDerivatives, h: f64, anchor: f64) -> AveragedState {
    AveragedState {
        tau: s.tau + h,
        e: s.e + h * k.de,
        cbar: s.cbar.iter().zip(&k.dc).map(|(c, d)| c + h * d).collect(),
        q_anchor: anchor,
    }
}

/// One classical Runge–Kutta step; `None` when any stage leaves the regime.
fn rk4(env: &SlowEnvironment, s: &AveragedState, k1: &AveragedDerivatives, h: f64) -> Result<Option<AveragedState>> {
    let anchor = k1.orbit.q_well;
    let m = k1.orbit.interior_maxima;
    let Some(k2) = derivs(env, &advance(s, k1, 0.5 * h, anchor), m)? else { return Ok(None) };
    let Some(k3) = derivs(env, &advance(s, &k2, 0.5 * h, anchor), m)? else { return Ok(None) };
    let Some(k4) = derivs(env, &advance(s, &k3, h, anchor), m)? else { return Ok(None) };
    let n = s.cbar.len();
    let e = s.e + h / 6.0 * (k1.de + 2.0 * k2.de + 2.0 * k3.de + k4.de);
    let cbar: Vec<f64> = (0..n)
        .map(|i| s.cbar[i] + h / 6.0 * (k1.dc[i] + 2.0 * k2.dc[i] + 2.0 * k3.dc[i] + k4.dc[i]))
        .collect();
    if cbar.iter().any(|&c| !(c > 0.0)) {
        return Err(HlvError::Integration(format!("Cbar left the positive cone at tau = {:.6e}", s.tau + h)));
    }
    let next = AveragedState { tau: s.tau + h, e, cbar, q_anchor: anchor };
    // The endpoint itself must still be inside the regime.
    Ok(derivs(env, &next, m)?.map(|_| next))
}

/// Integrates the averaged system on `[init.tau, tau_end]` with `steps`
/// RK4 steps. The first barrier crossing is located by bisection and ends
/// the run with a `burst` (or `environment-destabilized`, when approached
/// from below with `S2 > |S1|`) event; otherwise a final `stabilized`
/// event is emitted.
pub fn evolve_averaged(env: &SlowEnvironment, init: &AveragedState, tau_end: f64, steps: usize) -> Result<AveragedTrajectory> {
    env.validate()?;
    if init.cbar.len() != env.n() {
        return Err(HlvError::Dimension("Cbar must have one entry per specialist".into()));
    }
    if !(tau_end > init.tau) || steps == 0 {
        return Err(invalid("tau_end/steps", "need tau_end > tau0 and steps >= 1"));
    }
    let s2_method = if env.has_derivatives() { "analytic" } else { "finite-difference" }.to_string();
    let mut s = init.clone();
    let k0 = match averaged_rhs(env, &s)? {
        RhsOutcome::Derivatives(d) => d,
        RhsOutcome::OrbitLost { .. } => {
            return Err(HlvError::NotPeriodic { class: "initial orbit is not periodic".into() });
        }
    };
    s.q_anchor = k0.orbit.q_well;
    let mut states = vec![s.clone()];
    let h = (tau_end - init.tau) / steps as f64;
    let mut k = k0;
    for _ in 0..steps {
        match rk4(env, &s, &k, h)? {
            Some(next) => {
                s = next;
                k = derivs(env, &s, k.orbit.interior_maxima)?.expect("checked inside rk4");
                s.q_anchor = k.orbit.q_well;
                states.push(s.clone());
            }
            None => {
                // Bisect on the step length for the crossing.
                let (mut lo, mut hi) = (0.0, h);
                let mut best = s.clone();
                for _ in 0..30 {
                    let mid = 0.5 * (lo + hi);
                    match rk4(env, &s, &k, mid)? {
                        Some(st) => {
                            lo = mid;
                            best = st;
                        }
                        None => hi = mid,
                    }
                    if hi - lo <= 1e-7 * h.abs() {
                        break;
                    }
                }
                let kb = derivs(env, &best, k.orbit.interior_maxima)?;
                if best.tau > s.tau {
                    states.push(best.clone());
                }
                let (s1, s2, approach) = match &kb {
                    Some(d) => (d.s1, d.s2, d.orbit.approach),
                    None => (k.s1, k.s2, k.orbit.approach),
                };
                let kind = if approach == Approach::Below && s2 > s1.abs() {
                    EventKind::EnvironmentDestabilized
                } else {
                    EventKind::Burst
                };
                return Ok(AveragedTrajectory {
                    states,
                    events: vec![RegimeEvent { tau: s.tau + 0.5 * (lo + hi), kind, s1: Some(s1), s2: Some(s2) }],
                    s2_method,
                });
            }
        }
    }
    let tau = s.tau;
    Ok(AveragedTrajectory {
        states,
        events: vec![RegimeEvent { tau, kind: EventKind::Stabilized, s1: Some(k.s1), s2: Some(k.s2) }],
        s2_method,
    })
}

/// Direct simulation of the slow-environment star in abundance form,
/// integrated in `(ln x, ln v, q)`; samples report `(q, p, C)` with
/// `C_i = x_i exp(-a_i(tau) q)` and the instantaneous energy
/// `H = Phi(C, q; tau) + Psi(p)`.
pub fn simulate_direct(
    env: &SlowEnvironment,
    q0: f64,
    p0: f64,
    c0: &[f64],
    times: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<Trajectory> {
    env.validate()?;
    let n = env.n();
    if c0.len() != n {
        return Err(HlvError::Dimension("C0 must have one entry per specialist".into()));
    }
    let eps = env.epsilon;
    let kappa = env.beta * eps;
    let mu = env.mu;
    let y0: Vec<f64> = (0..n)
        .map(|i| c0[i].ln() + env.a[i].value(0.0) * q0)
        .chain([p0, q0])
        .collect();
    let mut opts = AdaptiveOptions::new(rtol, atol);
    opts.escape_bound = Some(crate::error::EXP_GUARD);
    let out = ode::solve_dopri5(
        |t, y, dy| {
            let tau = eps * t;
            let v = y[n].exp();
            let mut gv = env.rbar.value(tau) - eps * env.dbar * v;
            for i in 0..n {
                let a = env.a[i].value(tau);
                let x = y[i].exp();
                let r = a * mu - kappa * env.gamma_hat[i];
                dy[i] = -r + a * v - kappa * env.gamma[i] * x;
                gv -= env.b[i].value(tau) * x;
            }
            dy[n] = gv;
            dy[n + 1] = v - mu;
        },
        0.0,
        &y0,
        times,
        &opts,
    )?;
    let mut states = Vec::with_capacity(out.times.len());
    let mut energy = Vec::with_capacity(out.times.len());
    for (t, y) in out.times.iter().zip(&out.states) {
        let tau = eps * t;
        let q = y[n + 1];
        let p = y[n];
        let c: Vec<f64> = (0..n).map(|i| (y[i] - env.a[i].value(tau) * q).exp()).collect();
        let star = env.star_at(tau, &c)?;
        energy.push(star.energy(q, p));
        states.push([q, p].into_iter().chain(c).collect());
    }
    Ok(Trajectory {
        times: out.times,
        states,
        labels: ["q".to_string(), "p".to_string()]
            .into_iter()
            .chain((1..=n).map(|i| format!("C{i}")))
            .collect(),
        energy: Some(energy),
        meta: TrajectoryMeta {
            integrator: "dopri5-log".into(),
            rtol: Some(rtol),
            atol: Some(atol),
            step: None,
            accepted: out.accepted,
            rejected: out.rejected,
            escape: out.escape,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub time: f64,
    pub height: f64,
    pub prominence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstReport {
    pub bursts: Vec<Burst>,
    pub intervals: Vec<f64>,
    pub threshold: f64,
    pub rare_regime: bool,
    pub warning: Option<String>,
}

impl BurstReport {
    pub fn mean_interval(&self) -> Option<f64> {
        (!self.intervals.is_empty()).then(|| stats::mean(&self.intervals))
    }

    pub fn interval_cv(&self) -> Option<f64> {
        if self.intervals.len() < 2 {
            return None;
        }
        let m = stats::mean(&self.intervals);
        let var = self.intervals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (self.intervals.len() - 1) as f64;
        Some(var.sqrt() / m)
    }
}

/// Topographic prominence of every strict local maximum.
fn prominences(y: &[f64]) -> Vec<(usize, f64)> {
    let n = y.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            // Plateau handling: walk to the end of equal values.
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let peak = (i + j) / 2;
                let h = y[i];
                let mut lmin = h;
                let mut k = i;
                while k > 0 {
                    k -= 1;
                    if y[k] > h {
                        break;
                    }
                    lmin = lmin.min(y[k]);
                }
                let mut rmin = h;
                let mut k = j;
                while k + 1 < n {
                    k += 1;
                    if y[k] > h {
                        break;
                    }
                    rmin = rmin.min(y[k]);
                }
                out.push((peak, h - lmin.max(rmin)));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Peak detection with a prominence threshold (default: five median
/// absolute deviations of the signal). `fast_period`, when known, enables
/// the sampling check and the rare-burst flag (mean interval above ten
/// periods).
pub fn detect_bursts(times: &[f64], values: &[f64], prominence: Option<f64>, fast_period: Option<f64>) -> Result<BurstReport> {
    if times.len() != values.len() {
        return Err(HlvError::Dimension("times and values must have equal length".into()));
    }
    let threshold = prominence.unwrap_or_else(|| 5.0 * stats::mad(values));
    let mut warning = None;
    if let Some(tp) = fast_period {
        if times.len() >= 2 {
            let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
            if dt > tp / 20.0 {
                warning = Some(format!(
                    "sampling too sparse: {:.1} samples per fast period (need 20)",
                    tp / dt
                ));
            }
        }
    }
    let bursts: Vec<Burst> = prominences(values)
        .into_iter()
        .filter(|&(_, p)| p > threshold)
        .map(|(i, p)| Burst { time: times[i], height: values[i], prominence: p })
        .collect();
    let intervals: Vec<f64> = bursts.windows(2).map(|w| w[1].time - w[0].time).collect();
    let rare_regime = match (fast_period, intervals.is_empty()) {
        (Some(tp), false) => stats::mean(&intervals) > 10.0 * tp,
        _ => false,
    };
    Ok(BurstReport { bursts, intervals, threshold, rare_regime, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn balance_examples() {
        assert_relative_eq!(mu_balance(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], 0.0).unwrap(), 2.0 / 3.0);
        assert_relative_eq!(mu_balance(&[1.0, 2.0], &[3.0, 1.0], &[1.0, 2.0], &[0.5, 2.0], 0.0).unwrap(), 1.0);
        assert!(mu_balance(&[1.0, -1.0], &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn coefficient_tables() {
        let c = Coef::Table { tau: vec![0.0, 1.0, 3.0], values: vec![1.0, 3.0, 2.0] };
        assert_eq!(c.value(0.5), 2.0);
        assert_eq!(c.value(2.0), 2.5);
        assert_eq!(c.value(10.0), 2.0);
        assert_eq!(c.derivative(2.0), Some(-0.5));
        let bad = Coef::Table { tau: vec![0.0, 0.0], values: vec![1.0, 1.0] };
        assert!(bad.validate("x").is_err());
    }

    #[test]
    fn frozen_is_stationary() {
        let env = SlowEnvironment::frozen(&StarSystem::unit(), 0.01);
        let st = AveragedState { tau: 0.0, e: 3.0, cbar: vec![1.0], q_anchor: 0.0 };
        match averaged_rhs(&env, &st).unwrap() {
            RhsOutcome::Derivatives(d) => {
                assert!(d.de.abs() < 1e-14 && d.dc[0].abs() < 1e-14);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sinusoid_has_no_bursts() {
        let t: Vec<f64> = (0..2000).map(|k| k as f64 * 0.01).collect();
        let y: Vec<f64> = t.iter().map(|t| t.sin()).collect();
        let r = detect_bursts(&t, &y, None, Some(2.0 * std::f64::consts::PI)).unwrap();
        assert!(r.bursts.is_empty());
    }
}
