//! Hamiltonian analysis of two-group Lotka–Volterra food webs.
//!
//! * [`model`] — systems, sign classes, network topology;
//! * [`canonical`] — factorization, canonical coordinates, equilibria;
//! * [`star`] — one-generalist potentials, orbit taxonomy, periods;
//! * [`persistence`] — cone conditions and permanence certificates;
//! * [`integrate`] — adaptive and symplectic time stepping;
//! * [`averaging`] — slow-environment averaged dynamics;
//! * [`resonance`] — weakly coupled stars and their resonance system;
//! * [`ensemble`] — seeded Monte Carlo studies.

pub mod averaging;
pub mod canonical;
pub mod ensemble;
pub mod error;
pub mod integrate;
pub mod lp;
pub mod model;
pub mod ode;
pub mod persistence;
pub mod quad;
pub mod resonance;
pub mod star;
pub mod stats;

pub use error::{HlvError, Result};

/// Library version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
