use std::fs;

use hlv_core::averaging::{self, AveragedState, SlowEnvironment};
use hlv_core::canonical::{self, CanonicalSystem, HamiltonianFactors};
use hlv_core::ensemble::{self, CensusParams, CurveParams};
use hlv_core::integrate::{self, linspace};
use hlv_core::model::{self, InteractionSystem, SignPattern};
use hlv_core::persistence::{self, FeasibilityCertificate, MatrixModel, PermanenceReport, StrongPersistence};
use hlv_core::resonance::{self, Detuning, LockedRates, ResonanceModel, StabilityReport};
use hlv_core::star::{self, OrbitClass, PersistenceVerdict, PotentialProfile, Side, StarSystem};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::*;
use crate::config::{self, AverageConfig, ResonanceInput, StarSpec};
use crate::output::{sha256_hex, InputEcho, Output};
use crate::CliError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 2;

pub struct Status {
    pub code: i32,
    pub summary: String,
}

fn ok(summary: impl Into<String>) -> Status {
    Status { code: EXIT_OK, summary: summary.into() }
}

pub struct Ctx<'a> {
    pub global: &'a GlobalOpts,
    pub seed: u64,
    pub out: Output,
    pub input: Option<InputEcho>,
}

impl Ctx<'_> {
    /// Reads `--input` (or the built-in default) and echoes it for the manifest.
    fn read_input(&mut self, default: (&str, &str)) -> Result<(String, String), CliError> {
        let (name, text) = match &self.global.input {
            Some(p) => (p.display().to_string(), fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
            None => (default.0.to_string(), default.1.to_string()),
        };
        let content: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Input { path: name.clone(), message: e.to_string() })?;
        self.input = Some(InputEcho { path: name.clone(), sha256: sha256_hex(text.as_bytes()), content });
        Ok((name, text))
    }

    fn load<T: DeserializeOwned>(&mut self, default: (&str, &str)) -> Result<T, CliError> {
        let (name, text) = self.read_input(default)?;
        serde_json::from_str(&text).map_err(|e| CliError::Input { path: name, message: e.to_string() })
    }

    fn load_system(&mut self) -> Result<InteractionSystem, CliError> {
        let (name, text) = self.read_input(config::CLASSICAL_PAIR)?;
        InteractionSystem::from_json_str(&text).map_err(|e| CliError::Input { path: name, message: e.to_string() })
    }

    fn load_star(&mut self) -> Result<StarSystem, CliError> {
        let spec: StarSpec = self.load(config::UNIT_STAR)?;
        Ok(spec.build()?)
    }

    fn trials(&self, default: usize) -> usize {
        self.global.trials.unwrap_or(default)
    }

    fn parallel<T: Send>(&self, f: impl FnOnce() -> hlv_core::Result<T> + Send) -> Result<T, CliError> {
        Ok(ensemble::with_workers(self.global.workers, f)??)
    }
}

fn initial(values: &Option<Vec<f64>>, n: usize, name: &str) -> Result<Vec<f64>, CliError> {
    match values {
        None => Ok(vec![1.0; n]),
        Some(v) if v.len() == n => Ok(v.clone()),
        Some(v) => Err(CliError::Usage(format!("--{name} has {} entries but the system needs {n}", v.len()))),
    }
}

pub fn run(ctx: &mut Ctx<'_>, command: &Command) -> Result<Status, CliError> {
    match command {
        Command::Check(a) => check(ctx, a),
        Command::Simulate(a) => simulate(ctx, a),
        Command::Canonical(a) => canonical_run(ctx, a),
        Command::Star(c) => star_cmd(ctx, c),
        Command::Average(a) => average(ctx, a),
        Command::Resonance(a) => resonance_cmd(ctx, a),
        Command::Ensemble(c) => ensemble_cmd(ctx, c),
        Command::Netgen(a) => netgen(ctx, a),
    }
}

#[derive(Serialize)]
struct CheckReport {
    sign_pattern: SignPattern,
    limitation_free: bool,
    factors: Option<HamiltonianFactors>,
    /// `B z = rbar`, `z > 0`; absent when `M > N`.
    cone_condition: Option<FeasibilityCertificate>,
    strong_persistence: Option<StrongPersistence>,
    permanence: Option<PermanenceReport>,
    /// Sign criteria of the potential, for one-generalist systems.
    star_persistence: Option<PersistenceVerdict>,
    certified: bool,
}

fn check(ctx: &mut Ctx<'_>, args: &CheckArgs) -> Result<Status, CliError> {
    let sys = ctx.load_system()?;
    let factors = canonical::find_factors(&sys.a_matrix(), &sys.b_matrix(), args.tol)?;
    let cone = if sys.m <= sys.n { Some(persistence::cone_condition(&sys.b_matrix(), &sys.rbar, args.tol)?) } else { None };
    let positive = factors.as_ref().filter(|f| f.positive);
    let strong = match positive {
        Some(f) if sys.is_limitation_free() => Some(persistence::strong_persistence(&sys, f, args.tol)?),
        _ => None,
    };
    let permanence = match positive {
        Some(f) if !sys.is_limitation_free() => Some(persistence::permanence(
            &sys,
            f,
            &DMatrix::zeros(sys.n, sys.m),
            &DMatrix::zeros(sys.m, sys.n),
            args.tol,
        )?),
        _ => None,
    };
    let star_persistence = (sys.m == 1)
        .then(|| StarSystem::from_system(&sys, vec![1.0; sys.n], 1.0).ok())
        .flatten()
        .map(|s| star::persistence_criteria(&s));
    let certified = cone.as_ref().map_or(true, |c| c.feasible)
        && strong.as_ref().map_or(true, |s| s.persistent)
        && permanence.as_ref().map_or(true, |p| p.permanent);
    let report = CheckReport {
        sign_pattern: model::classify_signs(&sys),
        limitation_free: sys.is_limitation_free(),
        factors,
        cone_condition: cone,
        strong_persistence: strong,
        permanence,
        star_persistence,
        certified,
    };
    ctx.out.write_json("check.json", &report)?;
    Ok(Status {
        code: if certified { EXIT_OK } else { EXIT_NEGATIVE },
        summary: format!("sign pattern {}; certificates {}", report.sign_pattern, if certified { "feasible" } else { "negative" }),
    })
}

fn simulate(ctx: &mut Ctx<'_>, args: &SimulateArgs) -> Result<Status, CliError> {
    let sys = ctx.load_system()?;
    let x0 = initial(&args.x0, sys.n, "x0")?;
    let v0 = initial(&args.v0, sys.m, "v0")?;
    let times = linspace(0.0, args.t_end, args.samples);
    let tr = integrate::integrate_lv(&sys, &x0, &v0, &times, ctx.global.rtol, ctx.global.atol)?;
    ctx.out.write_table("trajectory", &tr.to_csv_string(), &tr, "abundances")?;
    let end = tr.times.last().copied().unwrap_or(0.0);
    Ok(ok(match &tr.meta.escape {
        Some(e) => format!("integration stopped at t = {end}: {e:?}"),
        None => format!("{} samples to t = {end}", tr.len()),
    }))
}

#[derive(Serialize)]
struct CanonicalReport {
    factors: Option<HamiltonianFactors>,
    mu: Vec<f64>,
    gamma_bar: Vec<f64>,
    reduction_valid: bool,
    state: canonical::CanonicalState,
    hamiltonian: Option<f64>,
    integrator: String,
}

fn canonical_run(ctx: &mut Ctx<'_>, args: &CanonicalArgs) -> Result<Status, CliError> {
    let sys = ctx.load_system()?;
    let x0 = initial(&args.x0, sys.n, "x0")?;
    let v0 = initial(&args.v0, sys.m, "v0")?;
    let mu = match &args.mu {
        Some(mu) => mu.clone(),
        None => persistence::positive_solution(&sys.a_matrix(), &DVector::from_column_slice(&sys.r), 1e-9)
            .witness
            .ok_or_else(|| CliError::Usage("A mu = r has no positive solution; pass --mu".into()))?,
    };
    let cs = CanonicalSystem::build(sys, mu, 1e-9)?;
    let s0 = canonical::to_canonical(&cs, &x0, &v0)?;
    let hamiltonian = canonical::hamiltonian(&cs, &s0).ok();
    let positive = cs.factors.as_ref().is_some_and(|f| f.positive);
    let tr = if cs.m() == 1 && positive && cs.reduction_valid(1e-12) {
        let star = StarSystem::from_system(&cs.base, s0.c.clone(), cs.mu[0])?;
        let steps = (args.t_end / args.h).round().max(1.0) as usize;
        let stride = (steps / args.samples.saturating_sub(1).max(1)).max(1);
        integrate::integrate_symplectic(&star, 0.0, s0.p[0], args.h, args.t_end, stride)?
    } else {
        let times = linspace(0.0, args.t_end, args.samples);
        integrate::integrate_transformed(&cs, &s0, &times, ctx.global.rtol, ctx.global.atol)?
    };
    let report = CanonicalReport {
        factors: cs.factors.clone(),
        mu: cs.mu.clone(),
        gamma_bar: cs.gamma_bar.clone(),
        reduction_valid: cs.reduction_valid(1e-12),
        state: s0,
        hamiltonian,
        integrator: tr.meta.integrator.clone(),
    };
    ctx.out.write_json("canonical.json", &report)?;
    ctx.out.write_table("canonical_trajectory", &tr.to_csv_string(), &tr, "canonical coordinates")?;
    Ok(ok(format!("{} run, {} samples", report.integrator, tr.len())))
}

#[derive(Serialize)]
struct ClassifyReport {
    #[serde(rename = "E")]
    e: f64,
    level: f64,
    class: &'static str,
    q_minus: Option<f64>,
    q_plus: Option<f64>,
    period: Option<f64>,
    orbit: OrbitClass,
}

#[derive(Serialize)]
struct ProfileReport {
    profile: PotentialProfile,
    coercive_left: bool,
    coercive_right: bool,
    persistence: PersistenceVerdict,
}

fn star_cmd(ctx: &mut Ctx<'_>, cmd: &StarCommand) -> Result<Status, CliError> {
    let s = ctx.load_star()?;
    match cmd {
        StarCommand::Classify(EnergyArg { e }) => {
            let orbit = star::classify_orbit(&s, *e)?;
            let (q_minus, q_plus, period) = match orbit {
                OrbitClass::Periodic { q_minus, q_plus, period } => (Some(q_minus), Some(q_plus), Some(period)),
                OrbitClass::Kink { q_minus, q_plus } => (Some(q_minus), Some(q_plus), None),
                _ => (None, None, None),
            };
            let report = ClassifyReport { e: *e, level: s.level(*e), class: orbit.name(), q_minus, q_plus, period, orbit };
            ctx.out.write_json("classify.json", &report)?;
            Ok(ok(format!("{} orbit at E = {e}", report.class)))
        }
        StarCommand::Period(EnergyArg { e }) => {
            let period = star::period(&s, *e)?;
            ctx.out.write_json("period.json", &serde_json::json!({ "E": e, "period": period }))?;
            Ok(ok(format!("T({e}) = {period}")))
        }
        StarCommand::Profile(args) => {
            let window = match &args.window {
                Some(w) => (w[0], w[1]),
                None => s.default_window(),
            };
            if !(window.0 < window.1) {
                return Err(CliError::Usage("--window needs lo < hi".into()));
            }
            let report = ProfileReport {
                profile: star::profile(&s)?,
                coercive_left: star::is_coercive(&s, Side::Left),
                coercive_right: star::is_coercive(&s, Side::Right),
                persistence: star::persistence_criteria(&s),
            };
            ctx.out.write_json("profile.json", &report)?;
            let samples = star::sample_profile(&s, window, args.points);
            let mut csv = String::from("q,Phi\n");
            for (q, phi) in &samples {
                csv.push_str(&format!("{q:.16e},{phi:.16e}\n"));
            }
            ctx.out.write_table("potential", &csv, &samples, "potential")?;
            let minima = report.profile.minima().count();
            Ok(ok(format!("{minima} minima, {} maxima", report.profile.maxima().count())))
        }
    }
}

fn average(ctx: &mut Ctx<'_>, args: &AverageArgs) -> Result<Status, CliError> {
    let cfg: AverageConfig = ctx.load(config::AVERAGE_UNIT)?;
    let env: SlowEnvironment = cfg.environment;
    env.validate()?;
    let tau_end = args.tau_end.unwrap_or(cfg.tau_end);
    let steps = args.steps.unwrap_or(cfg.steps);
    let cbar = cfg.initial.cbar.clone().unwrap_or_else(|| vec![1.0; env.n()]);
    let star0 = env.star_at(0.0, &cbar)?;
    let q_anchor = match cfg.initial.q_anchor {
        Some(q) => q,
        None => star::profile(&star0)?
            .global_min()
            .map(|m| m.q)
            .ok_or_else(|| CliError::Usage("the initial potential has no minimum; set initial.q_anchor".into()))?,
    };
    let init = AveragedState { tau: 0.0, e: cfg.initial.e, cbar: cbar.clone(), q_anchor };
    let tr = averaging::evolve_averaged(&env, &init, tau_end, steps)?;
    ctx.out.write_table("averaged", &tr.to_csv_string(), &tr.states, "averaged energy")?;
    ctx.out.write_json("events.json", &serde_json::json!({ "events": tr.events, "s2_method": tr.s2_method }))?;
    if args.direct {
        let t_end = tau_end / env.epsilon;
        let times = linspace(0.0, t_end, (t_end * args.density).ceil() as usize + 1);
        let p0 = averaging::upper_momentum(&star0, q_anchor, cfg.initial.e)?;
        let direct = averaging::simulate_direct(&env, q_anchor, p0, &cbar, &times, ctx.global.rtol, ctx.global.atol)?;
        ctx.out.write_table("direct", &direct.to_csv_string(), &direct, "direct simulation")?;
        let hub: Vec<f64> = direct.column(1).iter().map(|p| p.exp()).collect();
        let fast = star::period(&star0, cfg.initial.e).ok();
        let bursts = averaging::detect_bursts(&direct.times, &hub, None, fast)?;
        ctx.out.write_json("bursts.json", &bursts)?;
    }
    let kinds: Vec<&str> = tr.events.iter().map(|e| e.kind.as_str()).collect();
    Ok(ok(format!("{} states, events: [{}]", tr.states.len(), kinds.join(", "))))
}

#[derive(Serialize)]
struct ResonanceReport {
    source: String,
    model: ResonanceModel,
    detuning: Detuning,
    stability: StabilityReport,
    locked_plus: LockedRates,
    locked_minus: LockedRates,
    extinction: Option<f64>,
}

fn resonance_cmd(ctx: &mut Ctx<'_>, args: &ResonanceArgs) -> Result<Status, CliError> {
    let (source, sys) = match args.case {
        Some(k) => {
            if ctx.global.input.is_some() {
                return Err(CliError::Usage("--case and --input are exclusive".into()));
            }
            let suite = resonance::regression_suite();
            let (name, sys) = suite
                .into_iter()
                .nth(k.wrapping_sub(1))
                .ok_or_else(|| CliError::Usage(format!("--case must be in 1..=12, got {k}")))?;
            (name, sys)
        }
        None => {
            let spec: ResonanceInput = ctx.load(config::RESONANCE_PAIR)?;
            let name = ctx.input.as_ref().map(|i| i.path.clone()).unwrap_or_default();
            (name, spec.build()?)
        }
    };
    let model = resonance::linearize(&sys)?;
    let slow = resonance::integrate_resonance(
        &model,
        [args.q0[0], args.q0[1]],
        [args.phi0[0], args.phi0[1]],
        args.tau_end,
        args.samples,
        ctx.global.rtol,
    )?;
    let report = ResonanceReport {
        source,
        detuning: resonance::detuning(&model, sys.kappa, args.detuning_factor),
        stability: resonance::instability_criterion(&model),
        locked_plus: resonance::phase_locked_rates(&model, 1.0),
        locked_minus: resonance::phase_locked_rates(&model, -1.0),
        extinction: slow.extinction,
        model,
    };
    ctx.out.write_json("resonance.json", &report)?;
    ctx.out.write_table("slow", &slow.to_csv_string(), &slow, "slow amplitudes and phases")?;
    Ok(ok(format!("R = {:.6e}, verdict {:?}", report.stability.r, report.stability.verdict)))
}

fn ensemble_cmd(ctx: &mut Ctx<'_>, cmd: &EnsembleCommand) -> Result<Status, CliError> {
    let seed = ctx.seed;
    match cmd {
        EnsembleCommand::Census(a) => {
            let trials = ctx.trials(1000);
            let params = CensusParams { bbar: a.bbar, sigma_b: a.sigma_b, sigma_a: a.sigma_a };
            let r = ctx.parallel(|| ensemble::stability_census(a.n_low, a.n_high, trials, &params, seed))?;
            ctx.out.write_json("census.json", &r)?;
            let p = r.unstable;
            Ok(ok(format!("unstable fraction {:.4} [{:.4}, {:.4}]", p.p, p.lo, p.hi)))
        }
        EnsembleCommand::Curves(a) => {
            let trials = ctx.trials(150);
            if !(a.mix_step > 0.0 && a.mix_step <= 1.0) {
                return Err(CliError::Usage("--mix-step must lie in (0, 1]".into()));
            }
            let k = (1.0 / a.mix_step).round() as usize;
            let grid: Vec<f64> = (0..=k).map(|i| (i as f64 * a.mix_step).min(1.0)).collect();
            let params = CurveParams { mean: a.mean, sigma: a.sigma, rbar: a.rbar };
            let r = ctx.parallel(|| ensemble::orbit_probability_curve(a.n, &grid, trials, &params, seed))?;
            ctx.out.write_json("curves.json", &r)?;
            ctx.out.write_table("curves", &r.to_csv_string(), &r.points, "orbit probabilities")?;
            Ok(ok(format!("{} grid points, {trials} trials each", grid.len())))
        }
        EnsembleCommand::Theorem2(a) => {
            let trials = ctx.trials(200);
            let r = ctx.parallel(|| ensemble::theorem2_frequency(a.m, a.n, a.r0, a.sigma, trials, seed))?;
            ctx.out.write_json("theorem2.json", &r)?;
            let p = r.frequency;
            Ok(ok(format!("cone condition frequency {:.4} [{:.4}, {:.4}]", p.p, p.lo, p.hi)))
        }
        EnsembleCommand::Theorem3(a) => {
            let trials = ctx.trials(400);
            let matrix = if a.dense { MatrixModel::DenseGaussian } else { MatrixModel::default() };
            let r = ctx.parallel(|| persistence::positive_solution_frequency(a.n, trials, &matrix, seed))?;
            ctx.out.write_json("theorem3.json", &r)?;
            let p = r.frequency;
            Ok(ok(format!("positive solution frequency {:.4} [{:.4}, {:.4}]", p.p, p.lo, p.hi)))
        }
    }
}

#[derive(Serialize)]
struct NetworkReport {
    nodes: usize,
    edges: usize,
    connectance: f64,
    max_degree: usize,
    mean_degree: f64,
    power_law_exponent: Option<f64>,
}

fn netgen(ctx: &mut Ctx<'_>, args: &NetgenArgs) -> Result<Status, CliError> {
    let topo = model::generate_scale_free(args.nodes, args.m_attach, ctx.seed)?;
    let degrees = topo.degrees();
    let edges = degrees.iter().sum::<usize>() / 2;
    let max_degree = degrees.iter().copied().max().unwrap_or(0);
    let report = NetworkReport {
        nodes: args.nodes,
        edges,
        connectance: model::connectance(&topo)?,
        max_degree,
        mean_degree: 2.0 * edges as f64 / args.nodes as f64,
        power_law_exponent: model::fit_power_law(&degrees, args.m_attach),
    };
    ctx.out.write_bytes("edges.txt", topo.to_edge_list().as_bytes())?;
    ctx.out.write_json("network.json", &report)?;
    let mut counts = vec![0usize; max_degree + 1];
    for &d in &degrees {
        counts[d] += 1;
    }
    let mut csv = String::from("degree,count\n");
    let mut rows = Vec::new();
    for (d, &c) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
        csv.push_str(&format!("{d},{c}\n"));
        rows.push((d, c));
    }
    ctx.out.write_table("degrees", &csv, &rows, "degree distribution")?;
    Ok(ok(format!("{} nodes, {edges} edges", args.nodes)))
}
