//! Capital-price GBM dq = μ_q q dt + σ_q q dW, the logarithmic investment
//! cost Φ(x) = log(κx + 1)/κ, the q-theory investment rate ι* = (q − 1)/κ,
//! and the capital-drift coefficient each group's SDE reverts at.

use crate::config::{DriftForm, GroupParams, PriceParams};
use crate::{Error, Result};

/// Discretization of the price SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceScheme {
    /// q_{t+dt} = q_t · exp((μ − σ²/2)dt + σ dW); exact at the grid nodes.
    ExactLognormal,
    /// q_{t+dt} = q_t (1 + μ dt + σ dW) with a positivity floor.
    EulerMaruyama,
}

/// Simulated price path on the grid (steps + 1 nodes, q[0] = q0).
#[derive(Debug, Clone)]
pub struct PricePath {
    pub q: Vec<f64>,
    pub dt: f64,
    /// Number of EM steps clamped by the positivity floor (always 0 for the
    /// exact scheme).
    pub clamp_events: usize,
}

impl PricePath {
    pub fn steps(&self) -> usize {
        self.q.len() - 1
    }
}

/// Drive the price along the supplied common-noise increments.
pub fn simulate_price(params: &PriceParams, dw: &[f64], dt: f64, scheme: PriceScheme) -> PricePath {
    let mut q = Vec::with_capacity(dw.len() + 1);
    q.push(params.q0);
    let mut clamp_events = 0usize;
    match scheme {
        PriceScheme::ExactLognormal => {
            let drift = (params.mu_q - 0.5 * params.sigma_q * params.sigma_q) * dt;
            for &d in dw {
                let prev = *q.last().unwrap();
                q.push(prev * (drift + params.sigma_q * d).exp());
            }
        }
        PriceScheme::EulerMaruyama => {
            for &d in dw {
                let prev = *q.last().unwrap();
                let mut next = prev * (1.0 + params.mu_q * dt + params.sigma_q * d);
                if next <= 0.0 {
                    next = prev * 1e-6;
                    clamp_events += 1;
                }
                q.push(next);
            }
        }
    }
    PricePath { q, dt, clamp_events }
}

/// Investment cost Φ(x) = log(κx + 1)/κ; increasing, concave, Φ(0) = 0.
pub fn phi_cost(x: f64, kappa: f64) -> Result<f64> {
    let arg = kappa * x + 1.0;
    if arg <= 0.0 {
        return Err(Error::Domain(format!(
            "phi_cost: kappa*x + 1 = {arg} must be positive (x = {x}, kappa = {kappa})"
        )));
    }
    Ok(arg.ln() / kappa)
}

/// Optimal internal investment rate ι*(q) = (q − 1)/κ.
pub fn optimal_iota(q: f64, kappa: f64) -> f64 {
    (q - 1.0) / kappa
}

/// Capital-drift coefficient of a group at price q:
/// |Φ(ι*(q)) − δ| = |log(q)/κ − δ| for investment-cost groups, 1 − δ for
/// household-linear groups.
pub fn drift_coefficient(group: &GroupParams, q: f64, kappa: f64) -> f64 {
    match group.drift_form {
        DriftForm::InvestmentCost => (q.ln() / kappa - group.delta).abs(),
        DriftForm::HouseholdLinear => 1.0 - group.delta,
    }
}
