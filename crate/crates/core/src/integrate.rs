//! Time integration: adaptive stepping of the full system in log-abundance
//! coordinates, kick–drift–kick stepping of the star Hamiltonian, and the
//! transformed `(q, p, C)` system.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::canonical::{self, CanonicalState, CanonicalSystem};
use crate::error::{invalid, HlvError, Result, EXP_GUARD};
use crate::model::InteractionSystem;
use crate::ode::{self, AdaptiveOptions, Escape};
use crate::star::StarSystem;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub integrator: String,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub step: Option<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub escape: Option<Escape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub energy: Option<Vec<f64>>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[j]).collect()
    }

    /// CSV with header `t,<labels>[,H]`, full precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = String::from("t");
        for l in &self.labels {
            header.push(',');
            header.push_str(l);
        }
        if self.energy.is_some() {
            header.push_str(",H");
        }
        writeln!(w, "{header}")?;
        for (k, t) in self.times.iter().enumerate() {
            let mut line = format!("{t:.16e}");
            for v in &self.states[k] {
                line.push_str(&format!(",{v:.16e}"));
            }
            if let Some(e) = &self.energy {
                line.push_str(&format!(",{:.16e}", e[k]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

/// `n` equally spaced points from `t0` to `t1` inclusive.
pub fn linspace(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t1],
        _ => (0..n)
            .map(|k| if k == n - 1 { t1 } else { t0 + (t1 - t0) * k as f64 / (n - 1) as f64 })
            .collect(),
    }
}

fn lv_labels(n: usize, m: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).chain((1..=m).map(|j| format!("v{j}"))).collect()
}

/// Integrates the two-group system in `(ln x, ln v)` from `t = 0`, sampling
/// at `times`. Escapes (`|ln x| > 700`) end the run early and are recorded
/// in `meta.escape`.
pub fn integrate_lv(sys: &InteractionSystem, x0: &[f64], v0: &[f64], times: &[f64], rtol: f64, atol: f64) -> Result<Trajectory> {
    integrate_lv_with(sys, x0, v0, times, &AdaptiveOptions::new(rtol, atol))
}

pub fn integrate_lv_with(sys: &InteractionSystem, x0: &[f64], v0: &[f64], times: &[f64], opts: &AdaptiveOptions) -> Result<Trajectory> {
    sys.validate()?;
    let (n, m) = (sys.n, sys.m);
    if x0.len() != n || v0.len() != m {
        return Err(HlvError::Dimension("initial abundances must have lengths N and M".into()));
    }
    if x0.iter().chain(v0).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("x0/v0", "abundances must be strictly positive"));
    }
    let y0: Vec<f64> = x0.iter().chain(v0).map(|v| v.ln()).collect();
    let mut opts = opts.clone();
    opts.escape_bound = Some(opts.escape_bound.unwrap_or(EXP_GUARD));
    let mut x = vec![0.0; n];
    let mut v = vec![0.0; m];
    let out = ode::solve_dopri5(
        |_, y, dy| {
            for i in 0..n {
                x[i] = y[i].exp();
            }
            for j in 0..m {
                v[j] = y[n + j].exp();
            }
            let (gx, gv) = dy.split_at_mut(n);
            sys.per_capita(&x, &v, gx, gv);
        },
        0.0,
        &y0,
        times,
        &opts,
    )?;
    Ok(Trajectory {
        states: out.states.iter().map(|s| s.iter().map(|u| u.exp()).collect()).collect(),
        times: out.times,
        labels: lv_labels(n, m),
        energy: None,
        meta: TrajectoryMeta {
            integrator: "dopri5-log".into(),
            rtol: Some(opts.rtol),
            atol: Some(opts.atol),
            step: None,
            accepted: out.accepted,
            rejected: out.rejected,
            escape: out.escape,
        },
    })
}

/// One kick–drift–kick step for `H = Phi(q) + Psi(p)`.
#[inline]
pub fn verlet_step(star: &StarSystem, q: f64, p: f64, h: f64) -> (f64, f64) {
    let p_half = p - 0.5 * h * star.dphi(q);
    let q_new = q + h * (p_half.exp() - star.mu);
    let p_new = p_half - 0.5 * h * star.dphi(q_new);
    (q_new, p_new)
}

/// Applies `steps` kick–drift–kick steps (negative `h` runs backwards).
pub fn symplectic_flow(star: &StarSystem, mut q: f64, mut p: f64, h: f64, steps: usize) -> (f64, f64) {
    for _ in 0..steps {
        (q, p) = verlet_step(star, q, p, h);
    }
    (q, p)
}

/// Fixed-step symplectic run on `[0, t_end]`, recording every `stride`-th
/// step (and the last). A step whose energy jump exceeds `0.1 |H|` aborts.
pub fn integrate_symplectic(star: &StarSystem, q0: f64, p0: f64, h: f64, t_end: f64, stride: usize) -> Result<Trajectory> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid("h", "step must be positive"));
    }
    if !(t_end >= 0.0) {
        return Err(invalid("t_end", "must be nonnegative"));
    }
    let stride = stride.max(1);
    let full = (t_end / h * (1.0 + 1e-12)).floor() as usize;
    let rest = t_end - full as f64 * h;
    let (mut q, mut p) = (q0, p0);
    let mut e_prev = star.energy(q, p);
    let mut times = vec![0.0];
    let mut states = vec![vec![q, p]];
    let mut energy = vec![e_prev];
    let total = full + usize::from(rest > 1e-12 * h);
    for k in 1..=total {
        let hk = if k > full { rest } else { h };
        (q, p) = verlet_step(star, q, p, hk);
        let e = star.energy(q, p);
        let t = if k > full { t_end } else { k as f64 * h };
        if !e.is_finite() || (e - e_prev).abs() > 0.1 * e_prev.abs().max(f64::MIN_POSITIVE) {
            return Err(HlvError::StepTooLarge {
                time: t,
                rel_jump: (e - e_prev).abs() / e_prev.abs(),
            });
        }
        e_prev = e;
        if k % stride == 0 || k == total {
            times.push(t);
            states.push(vec![q, p]);
            energy.push(e);
        }
    }
    Ok(Trajectory {
        times,
        states,
        labels: vec!["q".into(), "p".into()],
        energy: Some(energy),
        meta: TrajectoryMeta {
            integrator: "stormer-verlet".into(),
            step: Some(h),
            accepted: total,
            ..Default::default()
        },
    })
}

/// Times of the first `count` upward crossings (`dq/dt > 0`) of
/// `q = q_section`, located by cubic Hermite interpolation within a step.
pub fn section_crossings(
    star: &StarSystem,
    q0: f64,
    p0: f64,
    h: f64,
    q_section: f64,
    count: usize,
    t_max: f64,
) -> Result<Vec<f64>> {
    let (mut q, mut p) = (q0, p0);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(count);
    let qdot = |p: f64| p.exp() - star.mu;
    while out.len() < count {
        if t > t_max {
            return Err(HlvError::Integration(format!(
                "only {} section crossings before t = {t_max}",
                out.len()
            )));
        }
        let (qn, pn) = verlet_step(star, q, p, h);
        let (f0, f1) = (q - q_section, qn - q_section);
        if f0 < 0.0 && f1 >= 0.0 {
            let (d0, d1) = (qdot(p), qdot(pn));
            let s = crate::quad::bisect(|s| ode::hermite(0.0, f0, d0 * h, 1.0, f1, d1 * h, s), 0.0, 1.0).unwrap_or(0.5);
            out.push(t + s * h);
        }
        q = qn;
        p = pn;
        t += h;
    }
    Ok(out)
}

fn transformed_labels(n: usize, m: usize) -> Vec<String> {
    (1..=m)
        .map(|j| format!("q{j}"))
        .chain((1..=m).map(|j| format!("p{j}")))
        .chain((1..=n).map(|i| format!("C{i}")))
        .collect()
}

/// Adaptive integration of the transformed system (with `ln C` as the
/// internal variable). States are `(qs, p, C)`; `energy` holds `H` when the
/// reduction to a conserved-`C` Hamiltonian is valid.
pub fn integrate_transformed(sys: &CanonicalSystem, s0: &CanonicalState, times: &[f64], rtol: f64, atol: f64) -> Result<Trajectory> {
    s0.validate()?;
    let (n, m) = (sys.n(), sys.m());
    if s0.q.len() != m || s0.p.len() != m || s0.c.len() != n {
        return Err(HlvError::Dimension("state lengths must be (M, M, N)".into()));
    }
    let y0: Vec<f64> = s0.q.iter().chain(&s0.p).copied().chain(s0.c.iter().map(|c| c.ln())).collect();
    let mut opts = AdaptiveOptions::new(rtol, atol);
    opts.escape_bound = Some(EXP_GUARD);
    let mut st = s0.clone();
    let out = ode::solve_dopri5(
        |_, y, dy| {
            st.q.copy_from_slice(&y[..m]);
            st.p.copy_from_slice(&y[m..2 * m]);
            for i in 0..n {
                st.c[i] = y[2 * m + i].exp();
            }
            match canonical::transformed_rhs(sys, &st) {
                Ok((dq, dp, dc)) => {
                    dy[..m].copy_from_slice(&dq);
                    dy[m..2 * m].copy_from_slice(&dp);
                    for i in 0..n {
                        dy[2 * m + i] = dc[i] / st.c[i];
                    }
                }
                Err(_) => dy.iter_mut().for_each(|d| *d = f64::NAN),
            }
        },
        0.0,
        &y0,
        times,
        &opts,
    )?;
    let states: Vec<Vec<f64>> = out
        .states
        .iter()
        .map(|y| y[..2 * m].iter().copied().chain(y[2 * m..].iter().map(|v| v.exp())).collect())
        .collect();
    let energy = if sys.factors.is_some() && sys.reduction_valid(1e-12) {
        Some(
            states
                .iter()
                .map(|s| canonical::hamiltonian(sys, &split_state(sys, s)))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(Trajectory {
        times: out.times,
        states,
        labels: transformed_labels(n, m),
        energy,
        meta: TrajectoryMeta {
            integrator: "dopri5-transformed".into(),
            rtol: Some(rtol),
            atol: Some(atol),
            step: None,
            accepted: out.accepted,
            rejected: out.rejected,
            escape: out.escape,
        },
    })
}

/// Splits a flat `(qs, p, C)` row into a [`CanonicalState`].
pub fn split_state(sys: &CanonicalSystem, row: &[f64]) -> CanonicalState {
    let m = sys.m();
    CanonicalState {
        q: row[..m].to_vec(),
        p: row[m..2 * m].to_vec(),
        c: row[2 * m..].to_vec(),
    }
}

/// Maps every sample of a transformed trajectory back to `(x, v)`.
pub fn map_to_abundances(sys: &CanonicalSystem, traj: &Trajectory) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(traj.len());
    for row in &traj.states {
        let (x, v) = canonical::from_canonical(sys, &split_state(sys, row))?;
        states.push(x.into_iter().chain(v).collect());
    }
    Ok(Trajectory {
        times: traj.times.clone(),
        states,
        labels: lv_labels(sys.n(), sys.m()),
        energy: traj.energy.clone(),
        meta: traj.meta.clone(),
    })
}
