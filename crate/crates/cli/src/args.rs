use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "hlv", version, about = "Hamiltonian analysis of two-group Lotka-Volterra food webs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct GlobalOpts {
    /// Input JSON file (model, star or run configuration, depending on the subcommand).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "hlv-out")]
    pub out: PathBuf,
    /// Random seed [env: HLV_SEED] [default: 42].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub rtol: f64,
    #[arg(long, global = true, default_value_t = 1e-12)]
    pub atol: f64,
    /// Monte Carlo trials (ensemble subcommands; each has its own default).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads for Monte Carlo runs; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Tables as CSV.
    Csv,
    /// Tables as JSON.
    Json,
    /// Tables as CSV plus an SVG line chart.
    Svg,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Sign class, Hamiltonian factors, persistence and permanence certificates.
    Check(CheckArgs),
    /// Direct integration of the Lotka-Volterra system.
    Simulate(SimulateArgs),
    /// Canonical transformation and a run in canonical coordinates.
    Canonical(CanonicalArgs),
    /// Star-system potential analysis.
    #[command(subcommand)]
    Star(StarCommand),
    /// Slow-environment averaged evolution with regime events.
    Average(AverageArgs),
    /// Linearization, instability verdict and slow run for two coupled stars.
    Resonance(ResonanceArgs),
    /// Seeded Monte Carlo studies.
    #[command(subcommand)]
    Ensemble(EnsembleCommand),
    /// Scale-free topology by preferential attachment.
    Netgen(NetgenArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct CheckArgs {
    /// Relative tolerance for factor detection and rank decisions.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    /// Initial specialist abundances (comma separated; default all ones).
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
    /// Initial generalist abundances (comma separated; default all ones).
    #[arg(long, value_delimiter = ',')]
    pub v0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1001)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct CanonicalArgs {
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub v0: Option<Vec<f64>>,
    /// Offsets mu (default: the positive solution of A mu = r).
    #[arg(long, value_delimiter = ',')]
    pub mu: Option<Vec<f64>>,
    /// Symplectic step for one-generalist Hamiltonian systems.
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    #[arg(long, default_value_t = 50.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1001)]
    pub samples: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StarCommand {
    /// Orbit class at energy E.
    Classify(EnergyArg),
    /// Period of the periodic orbit at energy E.
    Period(EnergyArg),
    /// Extrema, coercivity and a sampled potential curve.
    Profile(ProfileArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct EnergyArg {
    #[arg(long = "E", visible_alias = "energy")]
    pub e: f64,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct ProfileArgs {
    /// Sampling window `lo hi` (default: |a q| <= 50).
    #[arg(long, num_args = 2)]
    pub window: Option<Vec<f64>>,
    #[arg(long, default_value_t = 401)]
    pub points: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct AverageArgs {
    /// Override the configured final slow time.
    #[arg(long)]
    pub tau_end: Option<f64>,
    /// Override the configured number of RK4 steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Also run the direct simulation and detect bursts in the hub abundance.
    #[arg(long)]
    pub direct: bool,
    /// Samples per unit of fast time for the direct run.
    #[arg(long, default_value_t = 20.0)]
    pub density: f64,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct ResonanceArgs {
    /// Use a case (1-12) of the built-in regression suite instead of --input.
    #[arg(long)]
    pub case: Option<usize>,
    /// Initial slow amplitudes `Q1,Q2`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1e-3, 1e-3])]
    pub q0: Vec<f64>,
    /// Initial phases `phi1,phi2`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.0, std::f64::consts::FRAC_PI_2])]
    pub phi0: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub tau_end: f64,
    #[arg(long, default_value_t = 201)]
    pub samples: usize,
    /// Resonance window: |w1 - w2| <= factor * kappa.
    #[arg(long, default_value_t = 1.0)]
    pub detuning_factor: f64,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleCommand {
    /// Fraction of random potentials that are not single-well.
    Census(CensusArgs),
    /// Probability of periodic and soliton orbits against the sign mix.
    Curves(CurvesArgs),
    /// Frequency of the cone condition for random consumer-resource webs.
    Theorem2(Theorem2Args),
    /// Frequency of positive solutions for sparse random matrices.
    Theorem3(Theorem3Args),
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct CensusArgs {
    #[arg(long, default_value_t = 1)]
    pub n_low: usize,
    #[arg(long, default_value_t = 100)]
    pub n_high: usize,
    #[arg(long, default_value_t = 1.0)]
    pub bbar: f64,
    #[arg(long, default_value_t = 10.0)]
    pub sigma_b: f64,
    #[arg(long, default_value_t = 5.0)]
    pub sigma_a: f64,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct CurvesArgs {
    #[arg(long = "N", visible_alias = "n", default_value_t = 10)]
    pub n: usize,
    /// Grid spacing of the mix fraction on [0, 1].
    #[arg(long, default_value_t = 0.1)]
    pub mix_step: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mean: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 5.0)]
    pub rbar: f64,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct Theorem2Args {
    #[arg(long = "M", visible_alias = "m", default_value_t = 3)]
    pub m: usize,
    #[arg(long = "N", visible_alias = "n", default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub r0: f64,
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct Theorem3Args {
    #[arg(long = "N", visible_alias = "n", default_value_t = 10)]
    pub n: usize,
    /// Dense Gaussian entries instead of the sparse pattern.
    #[arg(long)]
    pub dense: bool,
}

#[derive(Debug, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct NetgenArgs {
    #[arg(long, default_value_t = 1000)]
    pub nodes: usize,
    #[arg(long, default_value_t = 2)]
    pub m_attach: usize,
}
