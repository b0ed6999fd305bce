//! Seeded Monte Carlo studies over random potentials and random matrices.
//!
//! Every trial draws from its own ChaCha8 stream keyed by `(seed, stream)`,
//! and results are collected in trial order, so reports are identical for
//! any number of worker threads.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HlvError, Result};
use crate::lp;
use crate::persistence;
use crate::star::{self, ExtremumKind, LevelComponent, PotentialProfile, Side, StarSystem};
use crate::stats::Proportion;

/// Independent generator for one trial.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `f` on a dedicated pool of `workers` threads (`None`: rayon default).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(invalid("workers", "must be at least 1")),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| HlvError::Integration(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn normal(mean: f64, sd: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sd).map_err(|e| invalid("sigma", e.to_string()))
}

/// `Phi(q) = sum_k b_k exp(a_k q)` with Gaussian coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomPotential {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    /// No term depends on `q`: the potential is constant.
    pub degenerate: bool,
}

impl RandomPotential {
    pub fn draw<R: Rng>(n: usize, bbar: f64, sigma_b: f64, sigma_a: f64, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(invalid("N", "must be at least 1"));
        }
        let db = normal(bbar, sigma_b)?;
        let da = normal(0.0, sigma_a)?;
        let b: Vec<f64> = (0..n).map(|_| db.sample(rng)).collect();
        let a: Vec<f64> = (0..n).map(|_| da.sample(rng)).collect();
        let degenerate = a.iter().zip(&b).all(|(a, b)| *a == 0.0 || *b == 0.0);
        Ok(Self { b, a, degenerate })
    }

    pub fn phi(&self, q: f64) -> f64 {
        self.b.iter().zip(&self.a).map(|(b, a)| b * (a * q).exp()).sum()
    }

    /// The `q`-dependent part as a star (`rbar = 0`, `mu = 1`); `None` when
    /// degenerate. Constant terms are dropped.
    pub fn star(&self) -> Result<Option<StarSystem>> {
        let (w, s): (Vec<f64>, Vec<f64>) = self
            .b
            .iter()
            .zip(&self.a)
            .filter(|(b, a)| **a != 0.0 && **b != 0.0)
            .map(|(b, a)| (*b, *a))
            .unzip();
        if w.is_empty() {
            return Ok(None);
        }
        StarSystem::from_terms(w, s, 0.0, 1.0).map(Some)
    }
}

/// Draw for `seed`, as a single trial.
pub fn random_potential(n: usize, bbar: f64, sigma_b: f64, sigma_a: f64, seed: u64) -> Result<RandomPotential> {
    RandomPotential::draw(n, bbar, sigma_b, sigma_a, &mut trial_rng(seed, 0))
}

/// Profile on a window widened until no extremum can lie outside it.
pub fn full_profile(star: &StarSystem) -> Result<PotentialProfile> {
    let amax = star.a.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mut w = star.default_window();
    loop {
        let prof = star::analyze_potential(star, w)?;
        if !prof.window_truncated || w.1 * amax >= 690.0 {
            return Ok(prof);
        }
        w = ((2.0 * w.0).max(-690.0 / amax), (2.0 * w.1).min(690.0 / amax));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusParams {
    pub bbar: f64,
    pub sigma_b: f64,
    pub sigma_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusTrial {
    pub trial: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub coercive_left: bool,
    pub coercive_right: bool,
    /// Number of local minima; `None` when the scan was skipped.
    pub minima: Option<usize>,
    pub degenerate: bool,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub n_low: usize,
    pub n_high: usize,
    pub trials: usize,
    pub seed: u64,
    pub params: CensusParams,
    pub unstable: Proportion,
    pub log: Vec<CensusTrial>,
}

/// Classifies one potential: stable iff coercive on both sides with a
/// unique minimum.
pub fn census_verdict(pot: &RandomPotential) -> Result<(bool, bool, Option<usize>)> {
    let Some(star) = pot.star()? else {
        return Ok((false, false, None));
    };
    let cl = star::is_coercive(&star, Side::Left);
    let cr = star::is_coercive(&star, Side::Right);
    if !(cl && cr) {
        return Ok((cl, cr, None));
    }
    let prof = full_profile(&star)?;
    Ok((cl, cr, Some(prof.minima().count())))
}

/// Fraction of "non-parabolic" potentials with `N` uniform on
/// `[n_low, n_high]`.
pub fn stability_census(n_low: usize, n_high: usize, trials: usize, params: &CensusParams, seed: u64) -> Result<CensusReport> {
    if n_low == 0 || n_high < n_low {
        return Err(invalid("N range", "need 1 <= N_low <= N_high"));
    }
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    if !(params.sigma_a >= 0.0 && params.sigma_b >= 0.0) {
        return Err(invalid("sigma", "deviations must be nonnegative"));
    }
    let log: Vec<CensusTrial> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<CensusTrial> {
            let mut rng = trial_rng(seed, t as u64);
            let n = rng.gen_range(n_low..=n_high);
            let pot = RandomPotential::draw(n, params.bbar, params.sigma_b, params.sigma_a, &mut rng)?;
            let (cl, cr, minima) = census_verdict(&pot)?;
            Ok(CensusTrial {
                trial: t,
                n,
                coercive_left: cl,
                coercive_right: cr,
                minima,
                degenerate: pot.degenerate,
                stable: cl && cr && minima == Some(1),
            })
        })
        .collect::<Result<_>>()?;
    let unstable = log.iter().filter(|t| !t.stable).count();
    Ok(CensusReport {
        n_low,
        n_high,
        trials,
        seed,
        params: params.clone(),
        unstable: Proportion::wilson(unstable, trials),
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    /// Mean magnitude of `a` and `b`.
    pub mean: f64,
    pub sigma: f64,
    pub rbar: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        Self { mean: 1.0, sigma: 0.5, rbar: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTrial {
    pub mix_index: usize,
    pub trial: usize,
    pub periodic: bool,
    pub soliton: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mix: f64,
    pub periodic: Proportion,
    pub soliton: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub params: CurveParams,
    pub points: Vec<CurvePoint>,
    pub log: Vec<CurveTrial>,
}

impl CurveReport {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("mix,P_periodic,P_periodic_lo,P_periodic_hi,P_soliton,P_soliton_lo,P_soliton_hi\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.mix, p.periodic.p, p.periodic.lo, p.periodic.hi, p.soliton.p, p.soliton.lo, p.soliton.hi
            ));
        }
        out
    }
}

/// Star with magnitudes `|Normal(mean, sigma^2)|` and the sign of each `b_i`
/// flipped with probability `mix`.
pub fn draw_mixed_star<R: Rng>(n: usize, mix: f64, params: &CurveParams, rng: &mut R) -> Result<StarSystem> {
    let d = normal(params.mean, params.sigma)?;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ai: f64 = d.sample(rng).abs();
        if ai == 0.0 {
            ai = f64::MIN_POSITIVE;
        }
        let bi: f64 = d.sample(rng).abs();
        let flip = rng.gen_bool(mix);
        a.push(ai);
        b.push(if flip { -bi } else { bi });
    }
    StarSystem::new(a, b, params.rbar, 1.0, vec![1.0; n])
}

/// `(has a periodic well, admits a soliton energy)`.
pub fn orbit_types(star: &StarSystem) -> Result<(bool, bool)> {
    let prof = full_profile(star)?;
    let mut periodic = false;
    for m in prof.minima() {
        // A level slightly above the well bottom (below every neighbour barrier).
        let barrier = prof
            .maxima()
            .map(|x| x.phi - m.phi)
            .filter(|h| *h > 0.0)
            .fold(1.0f64, f64::min);
        let level = m.phi + 1e-3 * barrier.max(1e-12) + 2.0 * star::degeneracy_tol(m.phi);
        if matches!(star::level_component(star, &prof, level, m.q)?, LevelComponent::Interval(..)) {
            periodic = true;
            break;
        }
    }
    let mut soliton = false;
    let ext = &prof.extrema;
    'outer: for (k, e) in ext.iter().enumerate() {
        if e.kind != ExtremumKind::Max {
            continue;
        }
        for j in [k.wrapping_sub(1), k + 1] {
            if let Some(m) = ext.get(j).filter(|m| m.kind == ExtremumKind::Min && m.phi < e.phi) {
                if matches!(
                    star::level_component(star, &prof, e.phi, m.q)?,
                    LevelComponent::HalfDegenerate { plateau, .. } if (plateau - e.q).abs() <= 1e-9 * (1.0 + e.q.abs())
                ) {
                    soliton = true;
                    break 'outer;
                }
            }
        }
    }
    Ok((periodic, soliton))
}

/// Orbit-type probabilities for each mixing probability in `mix_grid`.
pub fn orbit_probability_curve(n: usize, mix_grid: &[f64], trials: usize, params: &CurveParams, seed: u64) -> Result<CurveReport> {
    if n == 0 || trials == 0 {
        return Err(invalid("N/trials", "must be at least 1"));
    }
    if let Some(m) = mix_grid.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(invalid("mix", format!("{m} is outside [0, 1]")));
    }
    let cells: Vec<(usize, usize)> = (0..mix_grid.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let log: Vec<CurveTrial> = cells
        .into_par_iter()
        .map(|(i, t)| -> Result<CurveTrial> {
            let mut rng = trial_rng(seed, ((i as u64) << 32) | t as u64);
            let star = draw_mixed_star(n, mix_grid[i], params, &mut rng)?;
            let (periodic, soliton) = orbit_types(&star)?;
            Ok(CurveTrial { mix_index: i, trial: t, periodic, soliton })
        })
        .collect::<Result<_>>()?;
    let points = mix_grid
        .iter()
        .enumerate()
        .map(|(i, &mix)| {
            let cell = &log[i * trials..(i + 1) * trials];
            CurvePoint {
                mix,
                periodic: Proportion::wilson(cell.iter().filter(|c| c.periodic).count(), trials),
                soliton: Proportion::wilson(cell.iter().filter(|c| c.soliton).count(), trials),
            }
        })
        .collect();
    Ok(CurveReport { n, trials, seed, params: params.clone(), points, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub r0: f64,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub frequency: Proportion,
    pub log: Vec<bool>,
}

/// Frequency of `rank B = M` and a positive solution of `B z = rbar`, with
/// `b_jk ~ N(0, 1)` and `rbar_j ~ N(r0, sigma^2)`.
pub fn theorem2_frequency(m: usize, n: usize, r0: f64, sigma: f64, trials: usize, seed: u64) -> Result<Theorem2Report> {
    if m == 0 || n < m {
        return Err(invalid("M/N", "need 1 <= M <= N"));
    }
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let dr = normal(r0, sigma)?;
    let log: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<bool> {
            let mut rng = trial_rng(seed, t as u64);
            let b = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
            let rbar: Vec<f64> = (0..m).map(|_| dr.sample(&mut rng)).collect();
            let cert = persistence::cone_condition(&b, &rbar, 1e-9)?;
            Ok(cert.rank_ok && cert.feasible && lp::rank(&b, 1e-9) == m)
        })
        .collect::<Result<_>>()?;
    let k = log.iter().filter(|&&ok| ok).count();
    Ok(Theorem2Report { m, n, r0, sigma, trials, seed, frequency: Proportion::wilson(k, trials), log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let x: f64 = trial_rng(7, 3).gen();
        let y: f64 = trial_rng(7, 3).gen();
        let z: f64 = trial_rng(7, 4).gen();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn constant_potential_is_degenerate() {
        let p = random_potential(5, 1.0, 0.0, 0.0, 1).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.phi(3.0), 5.0);
        assert!(p.star().unwrap().is_none());
    }

    #[test]
    fn pure_predator_prey_has_no_solitons() {
        let r = orbit_probability_curve(10, &[0.0], 30, &CurveParams::default(), 5).unwrap();
        assert_eq!(r.points[0].soliton.successes, 0);
        assert_eq!(r.points[0].periodic.successes, 30);
    }

    #[test]
    fn single_row_sign_argument() {
        // M = 1, sigma = 0: feasible iff some b_k > 0, i.e. 1 - 2^-N.
        let r = theorem2_frequency(1, 2, 1.0, 1e-12, 2000, 9).unwrap();
        assert!(r.frequency.lo <= 0.75 && 0.75 <= r.frequency.hi, "{:?}", r.frequency);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let p = CensusParams { bbar: 1.0, sigma_b: 10.0, sigma_a: 5.0 };
        let a = with_workers(Some(1), || stability_census(1, 20, 40, &p, 3)).unwrap().unwrap();
        let b = with_workers(Some(3), || stability_census(1, 20, 40, &p, 3)).unwrap().unwrap();
        assert_eq!(a, b);
    }
}
