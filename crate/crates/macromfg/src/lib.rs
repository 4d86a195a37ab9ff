//! Simulation engine for a heterogeneous macro-finance economy solved as a
//! mean-field game.
//!
//! The model tracks n groups of agents (the two-group case is experts vs
//! households). Each agent's capital follows an OU-type SDE pulled toward a
//! relative average capitalization — a blend of the group mean and the global
//! mean — while the capital price follows a geometric Brownian motion that
//! feeds the investment-cost drift term. The group mean-capital vector m_t has
//! an explicit equilibrium representation
//!
//! ```text
//! m_t = v_t [ m_0 + ∫ v_s⁻¹ L dB_s + ∫ v_s⁻¹ S dW_s ],   dv = A_t v dt, v_0 = I
//! ```
//!
//! which this crate evaluates directly, verifies against an independent
//! Euler–Maruyama oracle, and compares with finite-player ensembles
//! (propagation of chaos). An entropy-regularized variant replaces the pointwise
//! consumption/risk controls with Gibbs densities over bounded action grids.
//!
//! Module map:
//! - [`config`]: scenario parameters, validation, TOML load/save
//! - [`noise`]: correlated Brownian increments, reproducible per (seed, path)
//! - [`price`]: capital-price GBM, investment cost, drift coefficients
//! - [`meanfield`]: coefficient matrix A_t, fundamental solution, closed-form
//!   equilibrium and its EM oracle
//! - [`agents`]: finite-player / representative capital-wealth simulation,
//!   optimal consumption, adjoint and Hamiltonian first-order conditions
//! - [`relaxed`]: Gibbs saving/risk policies and relaxed wealth dynamics
//! - [`engine`]: end-to-end runs, convergence studies, diagnostics
//! - [`io`]: CSV schemas and binary noise dumps

// Validation guards use the `!(x > 0.0)` form: NaN parameters must fail too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod config;
pub mod engine;
pub mod io;
pub mod linalg;
pub mod meanfield;
pub mod noise;
pub mod price;
pub mod relaxed;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Scenario rejected by validation; the message lists every violation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Scenario file could not be parsed.
    #[error("scenario parse error: {0}")]
    Parse(String),

    /// Correlation matrix admits no real lower-triangular factorization.
    #[error("correlation matrix not positive semidefinite: pivot {pivot:.6e} at index {index}")]
    NotPsd { index: usize, pivot: f64 },

    /// Argument outside a function's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A simulation produced non-finite state or a solver lost accuracy.
    #[error("numerical abort: {0}")]
    Numerical(String),

    /// Two per-grid inputs do not share the same time grid.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// CSV schema violation (arity, version, malformed rows).
    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Uniform time grid on [0, T] with `steps` intervals of width `dt`.
///
/// Node k sits at t_k = k·dt; arrays indexed by node have `steps + 1` entries,
/// arrays of increments have `steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Build a grid for a horizon that `dt` divides to within one part in 1e9.
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon and dt must be positive (horizon={horizon}, dt={dt})"
            )));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "horizon {horizon} shorter than one step {dt}"
            )));
        }
        let err = (steps * dt - horizon).abs();
        if err > 1e-9 * horizon.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "dt={dt} does not divide horizon={horizon} (residual {err:.3e})"
            )));
        }
        Ok(Self { dt, steps: steps as usize })
    }

    /// Time of node k.
    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.t(self.steps)
    }

    /// All node times, 0..=steps.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.t(k)).collect()
    }

    /// Grid with half the step width (twice the steps) on the same horizon.
    pub fn refined(&self) -> Self {
        Self { dt: self.dt / 2.0, steps: self.steps * 2 }
    }
}
