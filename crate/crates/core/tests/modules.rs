use std::f64::consts::PI;

use approx::assert_relative_eq;
use hlv_core::canonical;
use hlv_core::averaging::{self, AveragedState, EventKind, RhsOutcome, SlowEnvironment};
use hlv_core::ensemble::{self, CensusParams, RandomPotential};
use hlv_core::integrate::{self, linspace};
use hlv_core::model::{self, InteractionSystem, SignPattern};
use hlv_core::resonance::{self, TwoStarSystem};
use hlv_core::star::{self, OrbitClass, StarSystem};

fn pair_star() -> StarSystem {
    StarSystem::new(vec![1.0, 0.5], vec![1.0, 1.0], 1.0, 1.0, vec![1.0, 1.0]).unwrap()
}

#[test]
fn linear_frequency_matches_small_oscillations() {
    let s = pair_star();
    let sys = TwoStarSystem::new(s.clone(), s.clone(), vec![1.0, 1.0], vec![1.0, 1.0], 0.01, 0.0, (0.0, 0.0)).unwrap();
    let m = resonance::linearize(&sys).unwrap();
    // Small orbit around the minimum of star 1, timed by section returns.
    let q0 = m.qbar[0];
    let p0 = averaging::upper_momentum(&s, q0, s.energy(q0, 0.0) + 1e-6).unwrap();
    let c = integrate::section_crossings(&s, q0 - 1e-12, p0, 1e-3, q0, 6, 1e3).unwrap();
    let measured = (c[5] - c[0]) / 5.0;
    let predicted = 2.0 * PI / m.omega1;
    assert!((measured - predicted).abs() / predicted < 0.01, "{measured} vs {predicted}");
}

#[test]
fn slow_envelope_tracks_full_simulation() {
    let sym = StarSystem::new(vec![1.0, -1.0], vec![1.0, -1.0], 0.0, 1.0, vec![1.0, 1.0]).unwrap();
    let sys = TwoStarSystem::new(sym.clone(), sym, vec![1.0, 0.0], vec![-1.0, 0.0], 0.01, 0.0, (0.0, 0.0)).unwrap();
    let m = resonance::linearize(&sys).unwrap();
    let (q0, phi0) = ([1e-3, 1e-3], [0.0, if m.b12 > 0.0 { PI / 2.0 } else { -PI / 2.0 }]);
    let slow = resonance::integrate_resonance(&m, q0, phi0, 1.0, 11, 1e-10).unwrap();

    let period = 2.0 * PI / m.omega();
    let t_end = 1.0 / sys.kappa;
    let times = linspace(0.0, t_end, (t_end / period * 64.0) as usize);
    let y0 = resonance::initial_state(&sys, &m, q0, phi0).unwrap();
    let full = resonance::simulate_two_star(&sys, y0, &times, 1e-11, 1e-15).unwrap();
    let eq = resonance::coupled_equilibrium(&sys).unwrap();
    let env = resonance::envelope(&full.times, &full.column(0), eq[0], period);
    for (tau, s) in slow.tau.iter().zip(&slow.states).skip(1) {
        let (_, amp) = env
            .iter()
            .min_by(|a, b| (a.0 * sys.kappa - tau).abs().total_cmp(&(b.0 * sys.kappa - tau).abs()))
            .unwrap();
        assert!((amp - s[0]).abs() / s[0] < 0.10, "tau={tau}: envelope {amp} vs slow {}", s[0]);
    }
}

#[test]
fn single_species_constant_grows_exponentially() {
    // For one species <Phi'> = 0 pins C theta = rbar / (b a) = 1, so
    // dC/dtau = beta C (gamma_hat - gamma) exactly.
    let mut env = SlowEnvironment::frozen(&StarSystem::unit(), 0.01);
    env.beta = 1.0;
    env.gamma_hat = vec![1.5];
    env.gamma = vec![1.0];
    let init = AveragedState { tau: 0.0, e: 2.5, cbar: vec![1.0], q_anchor: 0.0 };
    let tr = averaging::evolve_averaged(&env, &init, 1.0, 50).unwrap();
    for s in &tr.states {
        assert_relative_eq!(s.cbar[0], (0.5 * s.tau).exp(), max_relative = 1e-6);
        let RhsOutcome::Derivatives(d) = averaging::averaged_rhs(&env, s).unwrap() else {
            panic!("orbit lost at tau = {}", s.tau);
        };
        assert_relative_eq!(s.cbar[0] * d.theta[0], 1.0, max_relative = 1e-8);
    }
}

fn double_well() -> StarSystem {
    // 2 cosh 2q - 12 cosh q: minima at q = +-0.9624 (Phi = -5.5), barrier Phi(0) = -5.
    StarSystem::from_terms(vec![0.5, 0.5, -3.0, -3.0], vec![2.0, -2.0, 1.0, -1.0], 0.0, 1.0).unwrap()
}

#[test]
fn bursts_are_found_near_a_soliton_orbit() {
    // Just below the barrier: long dwell near the hyperbolic point, one hub
    // spike per period.
    let dw = double_well();
    let e = dw.kinetic_min() + (-5.0 - 1e-4);
    let q0 = star::profile(&dw).unwrap().global_min().unwrap().q;
    let p0 = averaging::upper_momentum(&dw, q0, e).unwrap();
    let period = star::period(&dw, e).unwrap();
    let tr = integrate::integrate_symplectic(&dw, q0, p0, 1e-3, 12.0 * period, 10).unwrap();
    let v: Vec<f64> = tr.column(1).iter().map(|p| p.exp()).collect();
    let rep = averaging::detect_bursts(&tr.times, &v, None, Some(period)).unwrap();
    assert!(rep.bursts.len() >= 10, "{rep:?}");
    let mean = rep.mean_interval().unwrap();
    assert!((mean - period).abs() / period < 0.05, "mean interval {mean} vs period {period}");
    assert!(rep.interval_cv().unwrap() < 0.05);
}

#[test]
fn drifting_through_the_separatrix_makes_bursts_irregular() {
    // Damping carries the orbit from above the barrier down through the
    // soliton level; the dwell time diverges there, so intervals spread out.
    let dw = double_well();
    let mut env = SlowEnvironment::frozen(&dw, 0.01);
    env.dbar = 1.0;
    let qm = star::profile(&dw).unwrap().global_min().unwrap().q;
    let e0 = dw.kinetic_min() + (-4.5);
    let p0 = averaging::upper_momentum(&dw, qm, e0).unwrap();
    let times = linspace(0.0, 100.0, 100_001);
    let tr = averaging::simulate_direct(&env, qm, p0, &[1.0; 4], &times, 1e-10, 1e-12).unwrap();
    let v: Vec<f64> = tr.column(1).iter().map(|p| p.exp()).collect();
    let rep = averaging::detect_bursts(&tr.times, &v, None, None).unwrap();
    assert!(rep.bursts.len() >= 4, "{rep:?}");
    let cv = rep.interval_cv().unwrap();
    assert!(cv > 0.1, "cv = {cv}");
}

#[test]
fn orbit_average_matches_time_average() {
    let s = StarSystem::unit();
    let e = 3.0;
    let quad = averaging::period_average(&s, e, &|q, _| q.exp()).unwrap();
    // <Phi'> = 0 on a closed orbit gives <e^Q> = 1 exactly.
    assert_relative_eq!(quad, 1.0, max_relative = 1e-10);
    let period = star::period(&s, e).unwrap();
    let h = period / 20_000.0;
    let tr = integrate::integrate_symplectic(&s, 0.0, averaging::upper_momentum(&s, 0.0, e).unwrap(), h, 50.0 * period, 1).unwrap();
    let q = tr.column(0);
    // Trapezoid over exactly 50 periods.
    let steps = q.len() - 1;
    let sum: f64 = (0..steps).map(|k| 0.5 * (q[k].exp() + q[k + 1].exp())).sum();
    let time_avg = sum / steps as f64;
    assert!((time_avg - quad).abs() < 1e-4, "{time_avg} vs {quad}");
}

#[test]
fn averaged_slope_matches_direct_simulation() {
    let s = StarSystem::unit();
    let mut env = SlowEnvironment::frozen(&s, 0.01);
    env.dbar = 1.0;
    let e0 = 3.0;
    let period = star::period(&s, e0).unwrap();
    let t1 = 20.0;
    let times = linspace(0.0, t1 + period, 40_001);
    let tr = averaging::simulate_direct(&env, 0.0, averaging::upper_momentum(&s, 0.0, e0).unwrap(), &[1.0], &times, 1e-11, 1e-13).unwrap();
    let h = tr.energy.unwrap();
    let window_mean = |t0: f64| {
        let pts: Vec<f64> = tr.times.iter().zip(&h).filter(|(t, _)| **t >= t0 && **t <= t0 + period).map(|(_, h)| *h).collect();
        pts.iter().sum::<f64>() / pts.len() as f64
    };
    let slope = (window_mean(t1) - window_mean(0.0)) / (t1 * env.epsilon);
    let mid = averaging::evolve_averaged(&env, &AveragedState { tau: 0.0, e: e0, cbar: vec![1.0], q_anchor: 0.0 }, 0.5 * t1 * env.epsilon, 10).unwrap();
    let RhsOutcome::Derivatives(d) = averaging::averaged_rhs(&env, mid.states.last().unwrap()).unwrap() else {
        panic!("orbit lost");
    };
    assert!((d.de - slope).abs() / slope.abs() < 0.10, "averaged {} vs direct {slope}", d.de);
}

#[test]
fn balance_offset_is_the_hub_equilibrium() {
    let mut rng = hlv_core::ensemble::trial_rng(3, 0);
    use rand::Rng;
    let mut checked = 0;
    for _ in 0..20 {
        let n = rng.gen_range(1..=4);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
        let gamma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        // A well-supplied hub keeps every specialist above its threshold r / a.
        let rbar = rng.gen_range(2.0..5.0);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.5)).collect();
        let mu = averaging::mu_balance(&a, &b, &r, &gamma, rbar).unwrap();
        if let Some(eq) = canonical::star_equilibrium(&a, &b, &r, &gamma, 0.0, rbar).unwrap() {
            assert_relative_eq!(mu, eq.vbar, max_relative = 1e-10);
            checked += 1;
        }
    }
    assert!(checked >= 10, "only {checked} instances had a positive equilibrium");
}

#[test]
fn smooth_oscillation_has_no_bursts() {
    let t = linspace(0.0, 100.0, 5001);
    let v: Vec<f64> = t.iter().map(|t| 1.0 + 1e-3 * t.sin()).collect();
    let rep = averaging::detect_bursts(&t, &v, Some(0.5), Some(2.0 * PI)).unwrap();
    assert!(rep.bursts.is_empty());
}

#[test]
fn all_positive_weights_are_almost_always_stable() {
    // With every weight positive, Phi is strictly convex; it fails only when
    // all exponents share a sign.
    let params = CensusParams { bbar: 50.0, sigma_b: 1.0, sigma_a: 1.0 };
    let r = ensemble::stability_census(20, 30, 200, &params, 7).unwrap();
    assert_eq!(r.unstable.successes, 0, "{:?}", r.unstable);
}

#[test]
fn census_is_reproducible_for_a_seed() {
    let params = CensusParams { bbar: 1.0, sigma_b: 10.0, sigma_a: 5.0 };
    let a = ensemble::stability_census(1, 50, 50, &params, 11).unwrap();
    let b = ensemble::stability_census(1, 50, 50, &params, 11).unwrap();
    assert_eq!(a, b);
    let c = ensemble::stability_census(1, 50, 50, &params, 12).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn single_term_potential_verdicts() {
    // b e^{a q} alone is monotone: never coercive on both sides.
    let pot = RandomPotential { b: vec![2.0], a: vec![1.5], degenerate: false };
    let (cl, cr, minima) = ensemble::census_verdict(&pot).unwrap();
    assert!(!(cl && cr) && minima.is_none());
    // e^q + e^{-q} has exactly one minimum.
    let pot = RandomPotential { b: vec![1.0, 1.0], a: vec![1.0, -1.0], degenerate: false };
    assert_eq!(ensemble::census_verdict(&pot).unwrap(), (true, true, Some(1)));
}

#[test]
fn double_well_has_both_orbit_types() {
    let dw = double_well();
    let (periodic, soliton) = ensemble::orbit_types(&dw).unwrap();
    assert!(periodic && soliton);
    let (periodic, soliton) = ensemble::orbit_types(&StarSystem::unit()).unwrap();
    assert!(periodic && !soliton);
}

#[test]
fn unit_star_orbit_classes() {
    let s = StarSystem::unit();
    assert!(matches!(star::classify_orbit(&s, 3.0).unwrap(), OrbitClass::Periodic { .. }));
    assert_relative_eq!(star::period(&s, 3.0).unwrap(), 7.368852434, max_relative = 1e-8);
}

#[test]
fn classical_pair_is_plus_plus() {
    let sys = InteractionSystem::new(vec![1.0], vec![1.0], vec![vec![1.0]], vec![vec![1.0]]).unwrap();
    assert_eq!(model::classify_signs(&sys), SignPattern::PP);
}

#[test]
fn averaged_energy_decays_under_damping() {
    let mut env = SlowEnvironment::frozen(&StarSystem::unit(), 0.01);
    env.dbar = 1.0;
    let init = AveragedState { tau: 0.0, e: 3.0, cbar: vec![1.0], q_anchor: 0.0 };
    let tr = averaging::evolve_averaged(&env, &init, 1.0, 20).unwrap();
    assert!(tr.states.windows(2).all(|w| w[1].e < w[0].e));
    assert_eq!(tr.events.len(), 1);
    assert_eq!(tr.events[0].kind, EventKind::Stabilized);
}
