//! Controllability analysis for discrete-time linear systems driven by a
//! finite-state Markov trend with multiplicative noise.
//!
//! Everything is computed exactly on the finite tree of trend paths:
//! the forward system and its dual, backward stochastic Riccati schemes and
//! their ε→0 controllability metric, a brute-force operator oracle, invariant
//! subspace conditions, and intervention (actuator subset) selection.

pub mod bsrds;
pub mod error;
pub mod fixtures;
pub mod intervention;
pub mod invariance;
pub mod linalg;
pub mod model;
pub mod pathspace;
pub mod report;
pub mod system;
pub mod trend;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
pub use system::{CoefficientMap, SwitchedSystem};
pub use trend::{InitialLaw, PathTree, TrendMode, TrendModel};

use serde::{Deserialize, Serialize};

/// Numerical tolerances shared by all engines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative singular-value threshold for ranks.
    pub rank: f64,
    /// Relative least-squares residual threshold for range inclusion.
    pub residual: f64,
    /// Relative threshold on λ_min for positive definiteness.
    pub definiteness: f64,
    /// Relative Frobenius change for declaring the ε-trace converged.
    pub convergence: f64,
    pub eps_seq: Vec<f64>,
    pub node_cap: usize,
    pub control_cap: usize,
    pub codomain_cap: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank: 1e-8,
            residual: 1e-8,
            definiteness: 1e-8,
            convergence: 1e-6,
            eps_seq: vec![1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12],
            node_cap: trend::DEFAULT_NODE_CAP,
            control_cap: 100_000,
            codomain_cap: 4096,
        }
    }
}

impl Tolerances {
    /// Defaults overridden by `MJCTRL_TOL_RANK`, `MJCTRL_TOL_RESIDUAL`,
    /// `MJCTRL_TOL_DEFINITENESS` and `MJCTRL_TOL_CONVERGENCE` when set.
    pub fn from_env() -> Self {
        let mut t = Self::default();
        let read = |key: &str, slot: &mut f64| {
            if let Some(v) = std::env::var(key).ok().and_then(|s| s.parse::<f64>().ok()) {
                if v.is_finite() && v > 0.0 {
                    *slot = v;
                }
            }
        };
        read("MJCTRL_TOL_RANK", &mut t.rank);
        read("MJCTRL_TOL_RESIDUAL", &mut t.residual);
        read("MJCTRL_TOL_DEFINITENESS", &mut t.definiteness);
        read("MJCTRL_TOL_CONVERGENCE", &mut t.convergence);
        t
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tolerances.rank", self.rank),
            ("tolerances.residual", self.residual),
            ("tolerances.definiteness", self.definiteness),
            ("tolerances.convergence", self.convergence),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(name, "must be a positive finite number"));
            }
        }
        if self.eps_seq.is_empty() {
            return Err(Error::validation("eps_seq", "must not be empty"));
        }
        if self.eps_seq.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::validation("eps_seq", "entries must be positive"));
        }
        if self.eps_seq.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::validation("eps_seq", "must be strictly decreasing"));
        }
        Ok(())
    }
}
