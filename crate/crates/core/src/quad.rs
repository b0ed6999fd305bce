//! Adaptive Gauss–Kronrod quadrature and bracketed root finding.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone)]
pub struct QuadResult {
    pub value: Vec<f64>,
    /// Error estimate of the first component (the one driving refinement).
    pub error: f64,
    pub intervals: usize,
    pub converged: bool,
}

struct Piece {
    a: f64,
    b: f64,
    value: Vec<f64>,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn gk15<F>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> (Vec<f64>, f64)
where
    F: FnMut(f64, &mut [f64]),
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = vec![0.0; dim];
    let mut g = 0.0;
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let nodes: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for &s in nodes {
            f(c + s * h * x, buf);
            for d in 0..dim {
                k[d] += w * buf[d];
            }
            if j % 2 == 1 {
                g += WG[j / 2] * buf[0];
            }
        }
    }
    for v in &mut k {
        *v *= h;
    }
    let err = (k[0] - g * h).abs();
    (k, err)
}

/// Integrates a vector-valued function over `[a, b]`; refinement is driven
/// by the first component.
pub fn integrate_vec<F>(
    mut f: F,
    dim: usize,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> QuadResult
where
    F: FnMut(f64, &mut [f64]),
{
    assert!(dim >= 1);
    let mut buf = vec![0.0; dim];
    let (v, e) = gk15(&mut f, a, b, dim, &mut buf);
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value: v, err: e });
    let total = |heap: &BinaryHeap<Piece>| -> (Vec<f64>, f64) {
        let mut s = vec![0.0; dim];
        let mut err = 0.0;
        for p in heap.iter() {
            for d in 0..dim {
                s[d] += p.value[d];
            }
            err += p.err;
        }
        (s, err)
    };
    loop {
        let (s, err) = total(&heap);
        if err <= abs_tol.max(rel_tol * s[0].abs()) {
            return QuadResult { value: s, error: err, intervals: heap.len(), converged: true };
        }
        if heap.len() >= max_intervals {
            return QuadResult { value: s, error: err, intervals: heap.len(), converged: false };
        }
        let worst = heap.pop().expect("non-empty heap");
        let m = 0.5 * (worst.a + worst.b);
        if !(m > worst.a && m < worst.b) {
            // Interval cannot be split further in floating point.
            heap.push(Piece { err: 0.0, ..worst });
            continue;
        }
        let (v1, e1) = gk15(&mut f, worst.a, m, dim, &mut buf);
        let (v2, e2) = gk15(&mut f, m, worst.b, dim, &mut buf);
        heap.push(Piece { a: worst.a, b: m, value: v1, err: e1 });
        heap.push(Piece { a: m, b: worst.b, value: v2, err: e2 });
    }
}

pub fn integrate<F>(mut f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> QuadResult
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(|x, out: &mut [f64]| out[0] = f(x), 1, a, b, rel_tol, abs_tol, 2000)
}

/// Bisection on a sign-changing bracket down to adjacent floating-point
/// values. Returns `None` when `f(lo)` and `f(hi)` have the same strict sign.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64) -> Option<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return None;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo.min(hi) && mid < lo.max(hi)) {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Bisection followed by one Newton step, kept only if it stays in the
/// final bracket and reduces the residual.
pub fn bisect_newton<F, D>(mut f: F, mut df: D, lo: f64, hi: f64) -> Option<f64>
where
    F: FnMut(f64) -> f64,
    D: FnMut(f64) -> f64,
{
    let x = bisect(&mut f, lo, hi)?;
    let fx = f(x);
    let d = df(x);
    if d != 0.0 && d.is_finite() {
        let y = x - fx / d;
        let (l, h) = (lo.min(hi), lo.max(hi));
        if y >= l && y <= h && f(y).abs() < fx.abs() {
            return Some(y);
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| x.powi(5) - 2.0 * x * x + 1.0, -1.0, 2.0, 1e-14, 0.0);
        assert_relative_eq!(r.value[0], 64.0 / 6.0 - 1.0 / 6.0 - 6.0 + 3.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_sqrt_singularity() {
        let r = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10, 0.0);
        assert_relative_eq!(r.value[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn vector_components() {
        let r = integrate_vec(
            |x, o: &mut [f64]| {
                o[0] = x.cos();
                o[1] = x.sin();
            },
            2,
            0.0,
            std::f64::consts::PI,
            1e-13,
            0.0,
            500,
        );
        assert_relative_eq!(r.value[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(r.value[1], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn roots() {
        let x = bisect_newton(|x| x * x - 2.0, |x| 2.0 * x, 0.0, 2.0).unwrap();
        assert_relative_eq!(x, 2f64.sqrt(), epsilon = 1e-15);
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0).is_none());
    }
}
