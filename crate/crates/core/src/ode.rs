//! Explicit adaptive integration (Dormand-Prince 5(4)) for nonstiff systems.
//!
//! Steps are truncated so that every requested sample time is hit exactly;
//! no interpolation error enters the emitted samples. [`hermite`] is used by
//! callers that need to locate events between stored samples.

use crate::error::{HlvError, Result};

#[derive(Debug, Clone)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
    /// Stop with an escape record when any component exceeds this magnitude.
    pub escape_bound: Option<f64>,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
            escape_bound: None,
        }
    }
}

impl AdaptiveOptions {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Escape {
    pub time: f64,
    pub component: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct OdeOutput {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
    pub escape: Option<Escape>,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Work {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
        }
    }
}

fn check_finite(v: &[f64], t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(HlvError::Integration(format!(
            "non-finite right-hand side at t = {t:.6e}"
        )))
    }
}

/// Integrates `dy/dt = f(t, y)` from `t0`, emitting the state at each of
/// `samples` (sorted, all `>= t0`).
pub fn solve_dopri5<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    samples: &[f64],
    opts: &AdaptiveOptions,
) -> Result<OdeOutput>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(crate::error::invalid("rtol/atol", "tolerances must be positive"));
    }
    if samples.windows(2).any(|w| !(w[1] > w[0])) || samples.first().is_some_and(|&s| s < t0) {
        return Err(crate::error::invalid(
            "samples",
            "sample times must be strictly increasing and not before t0",
        ));
    }
    let n = y0.len();
    let mut out = OdeOutput {
        times: Vec::with_capacity(samples.len()),
        states: Vec::with_capacity(samples.len()),
        accepted: 0,
        rejected: 0,
        escape: None,
    };
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut w = Work::new(n);

    f(t, &y, &mut w.k[0]);
    check_finite(&w.k[0], t)?;

    let mut idx = 0;
    while idx < samples.len() && samples[idx] <= t0 {
        out.times.push(samples[idx]);
        out.states.push(y.clone());
        idx += 1;
    }
    let Some(&t_end) = samples.last() else {
        return Ok(out);
    };
    if idx == samples.len() {
        return Ok(out);
    }

    let mut h = match opts.h_init {
        Some(h) => h,
        None => initial_step(&mut f, t, &y, &w.k[0], opts, t_end - t0),
    };
    h = h.min(opts.h_max);

    let mut steps = 0usize;
    while idx < samples.len() {
        if steps >= opts.max_steps {
            return Err(HlvError::Integration(format!(
                "step budget of {} exhausted at t = {t:.6e}",
                opts.max_steps
            )));
        }
        steps += 1;
        let target = samples[idx];
        let mut hit = false;
        let mut h_try = h;
        if t + h_try >= target {
            h_try = target - t;
            hit = true;
        }
        if h_try <= f64::EPSILON * t.abs().max(1.0) {
            return Err(HlvError::Integration(format!(
                "step size underflow at t = {t:.6e}"
            )));
        }

        let err_norm = dp_step(&mut f, t, &y, h_try, &mut w, opts.rtol, opts.atol);
        if !err_norm.is_finite() {
            out.rejected += 1;
            h = h_try * 0.25;
            continue;
        }
        if err_norm <= 1.0 {
            out.accepted += 1;
            t = if hit { target } else { t + h_try };
            std::mem::swap(&mut y, &mut w.y_new);
            // FSAL: stage 7 is the derivative at the new point.
            let k7 = std::mem::take(&mut w.k[6]);
            w.k[6] = std::mem::replace(&mut w.k[0], k7);

            if let Some(bound) = opts.escape_bound {
                if let Some((i, &v)) = y.iter().enumerate().find(|(_, v)| v.abs() > bound) {
                    out.escape = Some(Escape {
                        time: t,
                        component: i,
                        value: v,
                    });
                    return Ok(out);
                }
            }
            if hit {
                out.times.push(target);
                out.states.push(y.clone());
                idx += 1;
            }
            let fac = if err_norm == 0.0 {
                5.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            // A truncated step says nothing about the natural step size.
            h = if hit { h.max(h_try * fac) } else { h_try * fac };
            h = h.min(opts.h_max);
        } else {
            out.rejected += 1;
            h = h_try * (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok(out)
}

fn initial_step<F>(f: &mut F, t: f64, y: &[f64], f0: &[f64], opts: &AdaptiveOptions, span: f64) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len().max(1) as f64;
    let sc = |i: usize| opts.atol + opts.rtol * y[i].abs();
    let d0 = (y.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().enumerate().map(|(i, v)| (v / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span.abs());
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    f(t + h0, &y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .enumerate()
        .map(|(i, (a, b))| ((a - b) / sc(i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span.abs()).max(1e-12)
}

fn dp_step<F>(f: &mut F, t: f64, y: &[f64], h: f64, w: &mut Work, rtol: f64, atol: f64) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let Work { k, tmp, y_new, err } = w;
    let [k1, k2, k3, k4, k5, k6, k7] = k;
    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    f(t + C2 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    f(t + C3 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    f(t + C4 * h, tmp, k4);
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    f(t + C5 * h, tmp, k5);
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    f(t + h, tmp, k6);
    for i in 0..n {
        y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    }
    f(t + h, y_new, k7);
    for i in 0..n {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    let mut acc = 0.0;
    for i in 0..n {
        let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
        acc += (err[i] / sc).powi(2);
    }
    if n == 0 {
        0.0
    } else {
        (acc / n as f64).sqrt()
    }
}

/// Cubic Hermite interpolation between `(t0, y0, dy0)` and `(t1, y1, dy1)`.
pub fn hermite(t0: f64, y0: f64, dy0: f64, t1: f64, y1: f64, dy1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    h00 * y0 + h10 * h * dy0 + h01 * y1 + h11 * h * dy1
}
