//! Input file schemas that are specific to the command line.

use hlv_core::averaging::SlowEnvironment;
use hlv_core::resonance::TwoStarSystem;
use hlv_core::star::StarSystem;
use serde::{Deserialize, Serialize};

pub const UNIT_STAR: (&str, &str) = ("builtin:unit_star.json", include_str!("../data/unit_star.json"));
pub const CLASSICAL_PAIR: (&str, &str) = ("builtin:classical_pair.json", include_str!("../data/classical_pair.json"));
pub const AVERAGE_UNIT: (&str, &str) = ("builtin:average_unit.json", include_str!("../data/average_unit.json"));
pub const RESONANCE_PAIR: (&str, &str) = ("builtin:resonance_pair.json", include_str!("../data/resonance_pair.json"));

fn one() -> f64 {
    1.0
}

/// A star given by its rates; `r` defaults to the Hamiltonian choice `a mu`
/// and `C` to ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub rbar: f64,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(rename = "C", default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub r: Option<Vec<f64>>,
}

impl StarSpec {
    pub fn build(&self) -> hlv_core::Result<StarSystem> {
        let c = self.c.clone().unwrap_or_else(|| vec![1.0; self.a.len()]);
        match &self.r {
            Some(r) => StarSystem::with_rates(self.a.clone(), self.b.clone(), r.clone(), self.rbar, self.mu, c),
            None => StarSystem::new(self.a.clone(), self.b.clone(), self.rbar, self.mu, c),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "Cbar", default)]
    pub cbar: Option<Vec<f64>>,
    /// A point in the well to follow (default: the global minimum).
    #[serde(default)]
    pub q_anchor: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AverageConfig {
    pub environment: SlowEnvironment,
    pub initial: InitialSpec,
    pub tau_end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceInput {
    pub star1: StarSpec,
    pub star2: StarSpec,
    pub b_tilde1: Vec<f64>,
    pub b_tilde2: Vec<f64>,
    pub kappa: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub d1: f64,
    #[serde(default)]
    pub d2: f64,
}

impl ResonanceInput {
    pub fn build(&self) -> hlv_core::Result<TwoStarSystem> {
        TwoStarSystem::new(
            self.star1.build()?,
            self.star2.build()?,
            self.b_tilde1.clone(),
            self.b_tilde2.clone(),
            self.kappa,
            self.epsilon,
            (self.d1, self.d2),
        )
    }
}
