//! One-generalist (star) systems.
//!
//! With `M = 1` the reduced Hamiltonian is `H = Phi(q) + Psi(p)`,
//!
//! ```text
//! Phi(q) = sum_i rho_i C_i exp(a_i q) - rbar q,   Psi(p) = exp(p) - mu p,
//! ```
//!
//! so an orbit of energy `E` lives on `{Phi(q) <= E - mu (1 - ln mu)}`.

use serde::{Deserialize, Serialize};

use crate::error::{guarded_exp, invalid, HlvError, Result};
use crate::model::InteractionSystem;
use crate::quad;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarSystem {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub r: Vec<f64>,
    pub rbar: f64,
    pub mu: f64,
    pub rho: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
}

impl StarSystem {
    /// Hamiltonian star: `r_i = a_i mu`.
    pub fn new(a: Vec<f64>, b: Vec<f64>, rbar: f64, mu: f64, c: Vec<f64>) -> Result<Self> {
        let r = a.iter().map(|ai| ai * mu).collect();
        Self::with_rates(a, b, r, rbar, mu, c)
    }

    pub fn with_rates(a: Vec<f64>, b: Vec<f64>, r: Vec<f64>, rbar: f64, mu: f64, c: Vec<f64>) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(invalid("a", "a star needs at least one specialist"));
        }
        if b.len() != n || r.len() != n || c.len() != n {
            return Err(HlvError::Dimension("a, b, r and C must share a length".into()));
        }
        if let Some(i) = a.iter().position(|&v| v == 0.0 || !v.is_finite()) {
            return Err(invalid("a", format!("a_{i} must be nonzero and finite")));
        }
        if b.iter().chain(&r).any(|v| !v.is_finite()) || !rbar.is_finite() {
            return Err(invalid("b/r/rbar", "entries must be finite"));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(invalid("mu", "must be positive"));
        }
        if c.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("C", "constants must be positive"));
        }
        let rho = a.iter().zip(&b).map(|(a, b)| b / a).collect();
        Ok(Self { a, b, r, rbar, mu, rho, c })
    }

    /// A potential given directly as `sum_k w_k exp(s_k q) - rbar q`
    /// (constants `C = 1`, `rho = w`, `b = w s`).
    pub fn from_terms(weights: Vec<f64>, exponents: Vec<f64>, rbar: f64, mu: f64) -> Result<Self> {
        if weights.len() != exponents.len() {
            return Err(HlvError::Dimension("weights and exponents must share a length".into()));
        }
        let b = weights.iter().zip(&exponents).map(|(w, s)| w * s).collect();
        let n = weights.len();
        let mut s = Self::new(exponents, b, rbar, mu, vec![1.0; n])?;
        s.rho = weights;
        Ok(s)
    }

    /// `a = b = C = rbar = mu = 1`: `Phi(q) = e^q - q`.
    pub fn unit() -> Self {
        Self::new(vec![1.0], vec![1.0], 1.0, 1.0, vec![1.0]).expect("valid unit star")
    }

    /// Star view of an `M = 1` interaction system with constants `C`.
    pub fn from_system(sys: &InteractionSystem, c: Vec<f64>, mu: f64) -> Result<Self> {
        if sys.m != 1 {
            return Err(invalid("M", "a star system has exactly one generalist"));
        }
        let a = sys.a.iter().map(|row| row[0]).collect();
        Self::with_rates(a, sys.b[0].clone(), sys.r.clone(), sys.rbar[0], mu, c)
    }

    /// The underlying limitation-free interaction system.
    pub fn to_system(&self) -> Result<InteractionSystem> {
        InteractionSystem::new(
            self.r.clone(),
            vec![self.rbar],
            self.a.iter().map(|&a| vec![a]).collect(),
            vec![self.b.clone()],
        )
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn is_hamiltonian(&self, tol: f64) -> bool {
        self.a
            .iter()
            .zip(&self.r)
            .all(|(a, r)| (r - a * self.mu).abs() <= tol * (1.0 + r.abs()))
    }

    /// Coefficients `rho_i C_i` of the exponential terms.
    pub fn weights(&self) -> Vec<f64> {
        self.rho.iter().zip(&self.c).map(|(r, c)| r * c).collect()
    }

    /// `n`-th derivative of `Phi` without overflow checks.
    pub fn dphi_n(&self, q: f64, order: u32) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n() {
            s += self.rho[i] * self.c[i] * self.a[i].powi(order as i32) * (self.a[i] * q).exp();
        }
        match order {
            0 => s - self.rbar * q,
            1 => s - self.rbar,
            _ => s,
        }
    }

    pub fn phi(&self, q: f64) -> f64 {
        self.dphi_n(q, 0)
    }
    pub fn dphi(&self, q: f64) -> f64 {
        self.dphi_n(q, 1)
    }
    pub fn d2phi(&self, q: f64) -> f64 {
        self.dphi_n(q, 2)
    }

    /// `Phi(q)` with the exponent guard.
    pub fn potential(&self, q: f64) -> Result<f64> {
        let mut s = -self.rbar * q;
        for i in 0..self.n() {
            s += self.rho[i] * self.c[i] * guarded_exp(self.a[i] * q)?;
        }
        Ok(s)
    }

    /// `Psi(p) = exp(p) - mu p`.
    pub fn kinetic(&self, p: f64) -> f64 {
        p.exp() - self.mu * p
    }

    /// `min Psi = mu (1 - ln mu)`, attained at `p = ln mu`.
    pub fn kinetic_min(&self) -> f64 {
        self.mu * (1.0 - self.mu.ln())
    }

    pub fn energy(&self, q: f64, p: f64) -> f64 {
        self.phi(q) + self.kinetic(p)
    }

    /// Level of `Phi` reached by an orbit of energy `e`.
    pub fn level(&self, e: f64) -> f64 {
        e - self.kinetic_min()
    }

    /// Copy with species `idx` removed; `None` if it was the only one.
    pub fn without(&self, idx: usize) -> Option<Self> {
        if self.n() <= 1 || idx >= self.n() {
            return None;
        }
        let drop = |v: &Vec<f64>| -> Vec<f64> {
            v.iter().enumerate().filter(|&(i, _)| i != idx).map(|(_, &x)| x).collect()
        };
        Some(Self {
            a: drop(&self.a),
            b: drop(&self.b),
            r: drop(&self.r),
            rbar: self.rbar,
            mu: self.mu,
            rho: drop(&self.rho),
            c: drop(&self.c),
        })
    }

    /// Default extremum search window `[-50/max|a|, 50/max|a|]`.
    pub fn default_window(&self) -> (f64, f64) {
        let amax = self.a.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        (-50.0 / amax, 50.0 / amax)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumKind {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub q: f64,
    pub phi: f64,
    pub kind: ExtremumKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialProfile {
    pub extrema: Vec<Extremum>,
    pub coercive_left: bool,
    pub coercive_right: bool,
    pub window: (f64, f64),
    /// Set when the slope at a window edge disagrees with its asymptotic
    /// sign, i.e. further extrema lie outside the window.
    pub window_truncated: bool,
}

impl PotentialProfile {
    pub fn minima(&self) -> impl Iterator<Item = &Extremum> {
        self.extrema.iter().filter(|e| e.kind == ExtremumKind::Min)
    }
    pub fn maxima(&self) -> impl Iterator<Item = &Extremum> {
        self.extrema.iter().filter(|e| e.kind == ExtremumKind::Max)
    }
    pub fn global_min(&self) -> Option<&Extremum> {
        self.minima().min_by(|a, b| a.phi.total_cmp(&b.phi))
    }
    pub fn has_unique_min(&self) -> bool {
        self.minima().count() == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Sign of `Phi(q)`'s dominant behaviour as `q -> +inf` (`Right`) or
/// `-inf` (`Left`): returns (limit of Phi is +inf, asymptotic sign of Phi').
fn asymptotics(star: &StarSystem, side: Side) -> (bool, f64) {
    let w = star.weights();
    let dir = if side == Side::Right { 1.0 } else { -1.0 };
    // Growing exponents, grouped by value, largest growth first.
    let mut growing: Vec<(f64, f64)> = star
        .a
        .iter()
        .zip(&w)
        .filter(|(a, _)| **a * dir > 0.0)
        .map(|(a, w)| (*a, *w))
        .collect();
    growing.sort_by(|x, y| (y.0 * dir).total_cmp(&(x.0 * dir)));
    let mut i = 0;
    while i < growing.len() {
        let mut j = i;
        let mut s = 0.0;
        while j < growing.len() && growing[j].0 == growing[i].0 {
            s += growing[j].1;
            j += 1;
        }
        if s != 0.0 {
            // d/dq of s e^{a q} has sign s * sign(a) = s * dir.
            return (s > 0.0, (s * dir).signum());
        }
        i = j;
    }
    // Linear term -rbar q -> +inf iff -rbar dir > 0.
    let lin = -star.rbar * dir;
    (lin > 0.0, -star.rbar.signum())
}

pub fn is_coercive(star: &StarSystem, side: Side) -> bool {
    asymptotics(star, side).0
}

/// Locates all extrema of `Phi` in `window` by a sign scan of `Phi'` on
/// `grid` points followed by bisection.
pub fn analyze_potential_grid(star: &StarSystem, window: (f64, f64), grid: usize) -> Result<PotentialProfile> {
    let (lo, hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(invalid("q_window", "window must be a finite interval"));
    }
    let grid = grid.max(3);
    let h = (hi - lo) / (grid - 1) as f64;
    let mut extrema = Vec::new();
    let mut q_prev = lo;
    let mut d_prev = star.dphi(lo);
    for k in 1..grid {
        let q = if k == grid - 1 { hi } else { lo + k as f64 * h };
        let d = star.dphi(q);
        if d_prev != 0.0 && d != 0.0 && d_prev.signum() != d.signum() {
            let qs = quad::bisect_newton(|x| star.dphi(x), |x| star.d2phi(x), q_prev, q).unwrap_or(0.5 * (q_prev + q));
            let kind = if d_prev < 0.0 { ExtremumKind::Min } else { ExtremumKind::Max };
            extrema.push(Extremum { q: qs, phi: star.phi(qs), kind });
        } else if d == 0.0 && k < grid - 1 {
            // Exact zero on a grid point: decide by neighbours.
            let dn = star.dphi(q + h);
            if d_prev.signum() != dn.signum() && d_prev != 0.0 && dn != 0.0 {
                let kind = if d_prev < 0.0 { ExtremumKind::Min } else { ExtremumKind::Max };
                extrema.push(Extremum { q, phi: star.phi(q), kind });
                d_prev = dn;
            }
            q_prev = q;
            continue;
        }
        q_prev = q;
        if d != 0.0 {
            d_prev = d;
        }
    }
    let (coercive_right, sr) = asymptotics(star, Side::Right);
    let (coercive_left, sl) = asymptotics(star, Side::Left);
    let dl = star.dphi(lo);
    let dr = star.dphi(hi);
    let window_truncated = (sr != 0.0 && dr != 0.0 && dr.signum() != sr) || (sl != 0.0 && dl != 0.0 && dl.signum() != sl);
    Ok(PotentialProfile {
        extrema,
        coercive_left,
        coercive_right,
        window,
        window_truncated,
    })
}

pub fn analyze_potential(star: &StarSystem, window: (f64, f64)) -> Result<PotentialProfile> {
    analyze_potential_grid(star, window, 4001)
}

/// Profile on the default window.
pub fn profile(star: &StarSystem) -> Result<PotentialProfile> {
    analyze_potential(star, star.default_window())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum OrbitClass {
    Equilibrium { q: f64 },
    Periodic { q_minus: f64, q_plus: f64, period: f64 },
    Soliton { q_turn: f64, q_plateau: f64 },
    Kink { q_minus: f64, q_plus: f64 },
    Unbounded { direction: Direction },
}

impl OrbitClass {
    pub fn name(&self) -> &'static str {
        match self {
            OrbitClass::Equilibrium { .. } => "equilibrium",
            OrbitClass::Periodic { .. } => "periodic",
            OrbitClass::Soliton { .. } => "soliton",
            OrbitClass::Kink { .. } => "kink",
            OrbitClass::Unbounded { .. } => "unbounded",
        }
    }
}

/// Shape of the level-set component, before any period is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelComponent {
    Point(f64),
    Interval(f64, f64),
    /// Simple turning point, degenerate (local-maximum) endpoint.
    HalfDegenerate { turn: f64, plateau: f64 },
    BothDegenerate(f64, f64),
    Unbounded(Direction),
}

enum Endpoint {
    Simple(f64),
    Degenerate(f64),
    Open,
}

/// Degeneracy tolerance for a given level.
pub fn degeneracy_tol(level: f64) -> f64 {
    1e-9 * (1.0 + level.abs())
}

const FAR_LIMIT: f64 = 1e7;

fn walk(star: &StarSystem, prof: &PotentialProfile, level: f64, q0: f64, side: Side, tol: f64) -> Endpoint {
    let dir = if side == Side::Right { 1.0 } else { -1.0 };
    let mut ext: Vec<&Extremum> = prof.extrema.iter().filter(|e| (e.q - q0) * dir > 0.0).collect();
    ext.sort_by(|x, y| ((x.q - q0) * dir).total_cmp(&((y.q - q0) * dir)));
    let f = |q: f64| star.phi(q) - level;
    let mut last = q0;
    for e in ext {
        if e.kind == ExtremumKind::Max {
            if e.phi > level + tol {
                let root = quad::bisect_newton(f, |q| star.dphi(q), last, e.q).unwrap_or(e.q);
                return Endpoint::Simple(root);
            }
            if e.phi >= level - tol {
                return Endpoint::Degenerate(e.q);
            }
        }
        last = e.q;
    }
    // Beyond the last extremum Phi is monotone: expand until it exceeds the level.
    let mut step = (prof.window.1 - prof.window.0).abs().max(1.0) / 64.0;
    let mut a = last;
    loop {
        let b = a + dir * step;
        let fb = f(b);
        if fb.is_nan() {
            return Endpoint::Open;
        }
        if fb > 0.0 {
            let root = quad::bisect_newton(f, |q| star.dphi(q), a, b).unwrap_or(b);
            return Endpoint::Simple(root);
        }
        let exp_max = star.a.iter().map(|ai| (ai * b).abs()).fold(0.0, f64::max);
        if exp_max > 700.0 || b.abs() > FAR_LIMIT {
            return Endpoint::Open;
        }
        a = b;
        step *= 2.0;
    }
}

/// Level-set component of `{Phi <= level}` containing `q_start`.
pub fn level_component(star: &StarSystem, prof: &PotentialProfile, level: f64, q_start: f64) -> Result<LevelComponent> {
    let tol = degeneracy_tol(level);
    let phi0 = star.phi(q_start);
    if phi0 > level + tol {
        return Err(HlvError::EmptyLevelSet { level, minimum: phi0 });
    }
    let at_min = prof
        .minima()
        .find(|m| (m.q - q_start).abs() <= 1e-12 * (1.0 + m.q.abs()));
    if let Some(m) = at_min {
        if (m.phi - level).abs() <= tol {
            return Ok(LevelComponent::Point(m.q));
        }
    }
    let r = walk(star, prof, level, q_start, Side::Right, tol);
    let l = walk(star, prof, level, q_start, Side::Left, tol);
    Ok(match (l, r) {
        (Endpoint::Open, Endpoint::Open) => LevelComponent::Unbounded(Direction::Both),
        (Endpoint::Open, _) => LevelComponent::Unbounded(Direction::Left),
        (_, Endpoint::Open) => LevelComponent::Unbounded(Direction::Right),
        (Endpoint::Simple(a), Endpoint::Simple(b)) => LevelComponent::Interval(a, b),
        (Endpoint::Simple(a), Endpoint::Degenerate(b)) => LevelComponent::HalfDegenerate { turn: a, plateau: b },
        (Endpoint::Degenerate(a), Endpoint::Simple(b)) => LevelComponent::HalfDegenerate { turn: b, plateau: a },
        (Endpoint::Degenerate(a), Endpoint::Degenerate(b)) => LevelComponent::BothDegenerate(a, b),
    })
}

/// Default starting point: the global-minimum well, or a point far out on a
/// non-coercive side when `Phi` has no minimum.
fn default_start(star: &StarSystem, prof: &PotentialProfile, level: f64) -> Result<f64> {
    if let Some(m) = prof.global_min() {
        if m.phi > level + degeneracy_tol(level) {
            return Err(HlvError::EmptyLevelSet { level, minimum: m.phi });
        }
        return Ok(m.q);
    }
    for (side, edge) in [(Side::Right, prof.window.1), (Side::Left, prof.window.0)] {
        if is_coercive(star, side) {
            continue;
        }
        let dir = if side == Side::Right { 1.0 } else { -1.0 };
        let mut q = edge;
        for _ in 0..64 {
            if star.phi(q) <= level {
                return Ok(q);
            }
            q += dir * (prof.window.1 - prof.window.0).abs().max(1.0);
            if star.a.iter().any(|a| (a * q).abs() > 700.0) {
                break;
            }
        }
    }
    let inf = prof.extrema.iter().map(|e| e.phi).fold(f64::INFINITY, f64::min);
    Err(HlvError::EmptyLevelSet { level, minimum: inf })
}

/// Orbit class at energy `e` for the well holding the global minimum.
pub fn classify_orbit(star: &StarSystem, e: f64) -> Result<OrbitClass> {
    let prof = profile(star)?;
    classify_orbit_with(star, &prof, e, None)
}

/// Orbit class at energy `e` for the component containing `q_start`
/// (default: the global-minimum well).
pub fn classify_orbit_with(star: &StarSystem, prof: &PotentialProfile, e: f64, q_start: Option<f64>) -> Result<OrbitClass> {
    let level = star.level(e);
    let q0 = match q_start {
        Some(q) => q,
        None => default_start(star, prof, level)?,
    };
    Ok(match level_component(star, prof, level, q0)? {
        LevelComponent::Point(q) => OrbitClass::Equilibrium { q },
        LevelComponent::Interval(a, b) => OrbitClass::Periodic {
            q_minus: a,
            q_plus: b,
            period: period_between(star, level, a, b)?.value[0],
        },
        LevelComponent::HalfDegenerate { turn, plateau } => OrbitClass::Soliton { q_turn: turn, q_plateau: plateau },
        LevelComponent::BothDegenerate(a, b) => OrbitClass::Kink { q_minus: a, q_plus: b },
        LevelComponent::Unbounded(d) => OrbitClass::Unbounded { direction: d },
    })
}

/// Roots of `w - ln(1 + w) = s` on each branch: `(w_up > 0, w_dn in (-1, 0))`.
/// `w_dn` is returned as `expm1(-y)` so it stays accurate near `-1`.
pub fn kinetic_branches(s: f64) -> (f64, f64) {
    let (wu, wd, _) = kinetic_branches_log(s);
    (wu, wd)
}

/// As [`kinetic_branches`], also returning `y = -ln(1 + w_dn)`.
pub fn kinetic_branches_log(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    // g(w) = w - ln1p(w), increasing on w > 0.
    let g = |w: f64| -> f64 {
        if w.abs() < 1e-2 {
            let w2 = w * w;
            w2 * (0.5 - w / 3.0 + w2 / 4.0 - w2 * w / 5.0 + w2 * w2 / 6.0 - w2 * w2 * w / 7.0 + w2 * w2 * w2 / 8.0)
        } else {
            w - w.ln_1p()
        }
    };
    let mut w = if s < 1.0 { (2.0 * s).sqrt() } else { s + (1.0 + s).ln() };
    let (mut lo, mut hi) = (0.0f64, s + (1.0 + s).ln() + 2.0 * (2.0 * s).sqrt() + 1.0);
    for _ in 0..100 {
        let fw = g(w) - s;
        if fw > 0.0 {
            hi = hi.min(w);
        } else {
            lo = lo.max(w);
        }
        let step = fw * (1.0 + w) / w;
        let mut next = w - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() <= 4.0 * f64::EPSILON * w {
            w = next;
            break;
        }
        w = next;
    }
    let w_up = w;

    // Lower branch in y = -ln(1 + w) > 0: k(y) = y - 1 + e^{-y} = s.
    let k = |y: f64| -> f64 {
        if y < 1e-2 {
            let y2 = y * y;
            y2 * (0.5 - y / 6.0 + y2 / 24.0 - y2 * y / 120.0 + y2 * y2 / 720.0 - y2 * y2 * y / 5040.0)
        } else {
            y + (-y).exp_m1()
        }
    };
    let mut y = if s < 1.0 { (2.0 * s).sqrt() } else { s + 1.0 };
    let (mut lo, mut hi) = (0.0f64, s + 1.0 + (2.0 * s).sqrt() + 1.0);
    for _ in 0..100 {
        let fy = k(y) - s;
        if fy > 0.0 {
            hi = hi.min(y);
        } else {
            lo = lo.max(y);
        }
        let d = -(-y).exp_m1();
        let mut next = y - fy / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 4.0 * f64::EPSILON * y {
            y = next;
            break;
        }
        y = next;
    }
    (w_up, (-y).exp_m1(), y)
}

/// Evaluates `level - Phi(q)` with a Taylor expansion near the turning
/// points, where direct subtraction loses all digits.
struct Gap<'a> {
    star: &'a StarSystem,
    level: f64,
    qm: f64,
    qp: f64,
    dm: [f64; 3],
    dp: [f64; 3],
}

impl<'a> Gap<'a> {
    fn new(star: &'a StarSystem, level: f64, qm: f64, qp: f64) -> Self {
        let d = |q| [star.dphi_n(q, 1), star.dphi_n(q, 2), star.dphi_n(q, 3)];
        Self { star, level, qm, qp, dm: d(qm), dp: d(qp) }
    }

    fn at(&self, q: f64) -> f64 {
        let span = self.qp - self.qm;
        let taylor = |delta: f64, d: &[f64; 3]| -(d[0] * delta + d[1] * delta * delta / 2.0 + d[2] * delta.powi(3) / 6.0);
        let dl = q - self.qm;
        let dr = q - self.qp;
        if dl.abs() < 1e-4 * span {
            taylor(dl, &self.dm).max(0.0)
        } else if dr.abs() < 1e-4 * span {
            taylor(dr, &self.dp).max(0.0)
        } else {
            (self.level - self.star.phi(q)).max(0.0)
        }
    }
}

/// Two-branch period quadrature on `(q_minus, q_plus)`; with observables,
/// returns `[T, int f dt ...]` (time integrals, not averages).
fn orbit_quadrature(
    star: &StarSystem,
    level: f64,
    q_minus: f64,
    q_plus: f64,
    observables: &[&dyn Fn(f64, f64) -> f64],
    rel_tol: f64,
) -> quad::QuadResult {
    let gap = Gap::new(star, level, q_minus, q_plus);
    let half = 0.5 * (q_plus - q_minus);
    let mu = star.mu;
    let dim = 1 + observables.len();
    quad::integrate_vec(
        |theta, out: &mut [f64]| {
            let q = q_minus + half * (1.0 - theta.cos());
            let jac = half * theta.sin();
            let s = gap.at(q) / mu;
            let (wu, wd, y) = kinetic_branches_log(s);
            if wu <= 0.0 || wd >= 0.0 {
                out.iter_mut().for_each(|o| *o = 0.0);
                return;
            }
            let du = jac / (mu * wu);
            let dd = jac / (mu * -wd);
            out[0] = du + dd;
            if dim > 1 {
                let pu = (mu * (1.0 + wu)).ln();
                let pd = mu.ln() - y;
                for (j, f) in observables.iter().enumerate() {
                    out[j + 1] = f(q, pu) * du + f(q, pd) * dd;
                }
            }
        },
        dim,
        0.0,
        std::f64::consts::PI,
        rel_tol,
        0.0,
        20_000,
    )
}

/// Period of the orbit on `{Phi <= level}` between simple turning points.
pub fn period_between(star: &StarSystem, level: f64, q_minus: f64, q_plus: f64) -> Result<quad::QuadResult> {
    let r = orbit_quadrature(star, level, q_minus, q_plus, &[], 1e-9);
    if !r.value[0].is_finite() || r.value[0] <= 0.0 {
        return Err(HlvError::Integration("period quadrature failed".into()));
    }
    Ok(r)
}

/// Period of the orbit of energy `e`; errors when it is not periodic.
pub fn period(star: &StarSystem, e: f64) -> Result<f64> {
    match classify_orbit(star, e)? {
        OrbitClass::Periodic { period, .. } => Ok(period),
        other => Err(HlvError::NotPeriodic { class: other.name().into() }),
    }
}

/// As [`period`], failing with [`HlvError::PeriodCap`] above `cap`.
pub fn period_capped(star: &StarSystem, e: f64, cap: f64) -> Result<f64> {
    let t = period(star, e)?;
    if t > cap {
        return Err(HlvError::PeriodCap { cap, estimate: t });
    }
    Ok(t)
}

/// Period averages `<f_k>` of observables `f_k(q, p)` over the orbit
/// between `q_minus` and `q_plus`; returns `(T, averages)`.
pub fn orbit_averages(
    star: &StarSystem,
    level: f64,
    q_minus: f64,
    q_plus: f64,
    observables: &[&dyn Fn(f64, f64) -> f64],
) -> Result<(f64, Vec<f64>)> {
    let r = orbit_quadrature(star, level, q_minus, q_plus, observables, 1e-10);
    let t = r.value[0];
    if !(t.is_finite() && t > 0.0) {
        return Err(HlvError::Integration("orbit quadrature failed".into()));
    }
    Ok((t, r.value[1..].iter().map(|v| v / t).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PersistenceKind {
    PI,
    PII,
    PIII,
    Fails,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersistenceVerdict {
    pub kind: PersistenceKind,
    /// Index of the largest `a_i` (lowest index on ties).
    pub i_plus: usize,
    /// Index of the smallest `a_i` (lowest index on ties).
    pub i_minus: usize,
    pub tie_plus: bool,
    pub tie_minus: bool,
}

impl PersistenceVerdict {
    pub fn persistent(&self) -> bool {
        self.kind != PersistenceKind::Fails
    }
}

/// Sign criteria for coercivity of `Phi` on both sides:
///
/// * PI: all `a_i > 0`, `b_{i+} > 0`, `rbar > 0`;
/// * PII: all `a_i < 0`, `b_{i-} < 0`, `rbar < 0`;
/// * PIII: mixed signs, `b_{i+} > 0` and `b_{i-} < 0`.
pub fn persistence_criteria(star: &StarSystem) -> PersistenceVerdict {
    let n = star.n();
    let mut ip = 0;
    let mut im = 0;
    for i in 1..n {
        if star.a[i] > star.a[ip] {
            ip = i;
        }
        if star.a[i] < star.a[im] {
            im = i;
        }
    }
    let tie_plus = (0..n).filter(|&i| star.a[i] == star.a[ip]).count() > 1;
    let tie_minus = (0..n).filter(|&i| star.a[i] == star.a[im]).count() > 1;
    let all_pos = star.a.iter().all(|&a| a > 0.0);
    let all_neg = star.a.iter().all(|&a| a < 0.0);
    let kind = if all_pos {
        if star.b[ip] > 0.0 && star.rbar > 0.0 {
            PersistenceKind::PI
        } else {
            PersistenceKind::Fails
        }
    } else if all_neg {
        if star.b[im] < 0.0 && star.rbar < 0.0 {
            PersistenceKind::PII
        } else {
            PersistenceKind::Fails
        }
    } else if star.b[ip] > 0.0 && star.b[im] < 0.0 {
        PersistenceKind::PIII
    } else {
        PersistenceKind::Fails
    };
    PersistenceVerdict { kind, i_plus: ip, i_minus: im, tie_plus, tie_minus }
}

/// Species whose removal makes the star fail the persistence criteria.
pub fn domino_check(star: &StarSystem) -> Result<Vec<usize>> {
    if !persistence_criteria(star).persistent() {
        return Err(HlvError::NotApplicable("the star is not persistent to begin with".into()));
    }
    if star.n() == 1 {
        return Ok(vec![0]);
    }
    Ok((0..star.n())
        .filter(|&i| {
            let reduced = star.without(i).expect("n > 1");
            !persistence_criteria(&reduced).persistent()
        })
        .collect())
}

/// Samples `Phi` on a uniform grid, for plotting.
pub fn sample_profile(star: &StarSystem, window: (f64, f64), points: usize) -> Vec<(f64, f64)> {
    let points = points.max(2);
    let h = (window.1 - window.0) / (points - 1) as f64;
    (0..points)
        .map(|k| {
            let q = window.0 + k as f64 * h;
            (q, star.phi(q))
        })
        .collect()
}
