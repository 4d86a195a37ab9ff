//! Entropy-regularized (bounded-rationality) policies: Gibbs densities over
//! bounded action grids for the saving and risk controls, and the relaxed
//! wealth dynamics they induce.
//!
//! Saving density over consumption c on a compact grid:
//!
//! ```text
//! π_c(c) ∝ exp[ (c^{−γ} − y_t e^{ρt}) / λ_c − 1 ],   y_t = e^{−r(T−t)}
//! ```
//!
//! Risk density over the retained fraction φ ∈ [φ̃, 1], with the deterministic
//! adjoint (z = 0) reduction:
//!
//! ```text
//! π_φ(φ) ∝ exp[ (z q_t (k σ_q + σ) e^{ρt} − φ) / λ_φ − 1 ]  →  exp(−φ/λ_φ)
//! ```
//!
//! These expressions are not self-normalizing; every emitted policy is
//! normalized numerically over its grid so the trapezoid mass is 1 (to 1e−9).
//! The relaxed wealth SDE averages the drift over π_c (affine in c, so the
//! policy-mean consumption suffices) and carries diffusion
//! sqrt(∫ v(φ)² π_φ dφ) — the policy-averaged *squared* common-risk exposure,
//! whose square root degenerates exactly to the classical coefficient on a
//! single-point grid.

use rand::Rng;

use crate::agents::{
    capital_step, common_risk_exposure, crra_utility, wealth_drift, wealth_step, AgentPaths,
};
use crate::config::{GroupParams, PriceParams, ScenarioConfig};
use crate::linalg::{trapezoid, trapezoid_weights};
use crate::meanfield::MeanFieldPath;
use crate::noise::{NoiseBundle, NoiseMode};
use crate::price::{drift_coefficient, PricePath};
use crate::{Error, Result, TimeGrid};

/// A normalized Gibbs density over a bounded action grid.
#[derive(Debug, Clone)]
pub struct RelaxedPolicy {
    /// Action values (uniformly spaced; a single point is a Dirac policy).
    pub grid: Vec<f64>,
    /// Unnormalized log-density at each grid point.
    pub log_weights: Vec<f64>,
    /// Log partition value: trapezoid ∫ exp(log_weights) = exp(normalizer).
    pub normalizer: f64,
    pub temperature: f64,
    /// Trapezoid quadrature weights of the grid.
    quad: Vec<f64>,
    /// Normalized density at each grid point, computed once in shifted form
    /// so the trapezoid mass is 1 to machine precision even for huge scores.
    dens: Vec<f64>,
}

impl RelaxedPolicy {
    fn from_log_weights(grid: Vec<f64>, log_weights: Vec<f64>, temperature: f64) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Domain("policy grid is empty".into()));
        }
        let h = if grid.len() > 1 { grid[1] - grid[0] } else { 0.0 };
        let quad = trapezoid_weights(grid.len(), h);
        // Shifted log-sum-exp keeps huge Gibbs scores finite.
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
        let sum: f64 = scaled.iter().zip(&quad).map(|(s, w)| w * s).sum();
        let normalizer = max + sum.ln();
        let dens = scaled.iter().map(|s| s / sum).collect();
        Ok(Self { grid, log_weights, normalizer, temperature, quad, dens })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Normalized density at grid index i.
    #[inline]
    pub fn density(&self, i: usize) -> f64 {
        self.dens[i]
    }

    /// Trapezoid mass of the normalized density (1 up to rounding).
    pub fn mass(&self) -> f64 {
        (0..self.len()).map(|i| self.quad[i] * self.density(i)).sum()
    }

    /// Policy mean ∫ a π(a) da.
    pub fn mean(&self) -> f64 {
        self.mean_of(|a| a)
    }

    /// Policy average ∫ f(a) π(a) da.
    pub fn mean_of(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.quad[i] * self.density(i) * f(self.grid[i]);
        }
        acc
    }

    /// Action with the largest density.
    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for i in 1..self.len() {
            if self.log_weights[i] > self.log_weights[best] {
                best = i;
            }
        }
        self.grid[best]
    }

    /// Shannon entropy of the normalized density values, p_i ∝ π_i. With a
    /// uniform base the Gibbs family makes this nondecreasing in the
    /// temperature on any fixed grid (quadrature-weighted probabilities would
    /// break that near the uniform limit through the endpoint half-weights).
    pub fn discrete_entropy(&self) -> f64 {
        let total: f64 = self.dens.iter().sum();
        -self
            .dens
            .iter()
            .map(|&d| {
                let p = d / total;
                if p > 0.0 {
                    p * p.ln()
                } else {
                    0.0
                }
            })
            .sum::<f64>()
    }

    /// Differential entropy −∫ π ln π by trapezoid quadrature. On a
    /// collapsing grid this diverges to −∞ with ln(grid width); a
    /// single-point Dirac policy reports 0 (the discrete value).
    pub fn differential_entropy(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            let d = self.density(i);
            if d > 0.0 {
                acc -= self.quad[i] * d * d.ln();
            }
        }
        acc
    }

    /// Draw one action from the induced discrete distribution.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let p: Vec<f64> = (0..self.len()).map(|i| self.quad[i] * self.density(i)).collect();
        let total: f64 = p.iter().sum();
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u <= acc {
                return self.grid[i];
            }
        }
        *self.grid.last().unwrap()
    }
}

/// Gibbs saving policy at time t over a consumption grid.
pub fn saving_policy(
    t: f64,
    group: &GroupParams,
    r: f64,
    horizon: f64,
    grid: &[f64],
    lambda_c: f64,
) -> Result<RelaxedPolicy> {
    if grid.is_empty() {
        return Err(Error::Domain("saving policy: empty grid".into()));
    }
    if grid.iter().any(|&c| c <= 0.0) {
        return Err(Error::Domain("saving policy: actions must be positive".into()));
    }
    if !(lambda_c > 0.0) {
        return Err(Error::Domain(format!("saving policy: lambda_c = {lambda_c}")));
    }
    let y = (-r * (horizon - t)).exp();
    let shift = y * (group.rho * t).exp();
    let lw: Vec<f64> = grid
        .iter()
        .map(|&c| (c.powf(-group.gamma) - shift) / lambda_c - 1.0)
        .collect();
    RelaxedPolicy::from_log_weights(grid.to_vec(), lw, lambda_c)
}

/// Gibbs risk policy at time t over a retained-fraction grid ⊆ [φ̃, 1].
/// With the deterministic adjoint (z_w = 0) the score reduces to −φ/λ_φ.
#[allow(clippy::too_many_arguments)]
pub fn risk_policy(
    t: f64,
    group: &GroupParams,
    price: &PriceParams,
    sigma_common: f64,
    q_t: f64,
    k_t: f64,
    z_w: f64,
    grid: &[f64],
    lambda_phi: f64,
) -> Result<RelaxedPolicy> {
    if grid.is_empty() {
        return Err(Error::Domain("risk policy: empty grid".into()));
    }
    if !(lambda_phi > 0.0) {
        return Err(Error::Domain(format!("risk policy: lambda_phi = {lambda_phi}")));
    }
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo + 1e-12 < group.phi_floor || hi > 1.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "risk policy: grid [{lo}, {hi}] outside [{}, 1]",
            group.phi_floor
        )));
    }
    let gain = z_w * q_t * (k_t * price.sigma_q + sigma_common) * (group.rho * t).exp();
    let lw: Vec<f64> = grid.iter().map(|&phi| (gain - phi) / lambda_phi - 1.0).collect();
    RelaxedPolicy::from_log_weights(grid.to_vec(), lw, lambda_phi)
}

/// Per-group policy schedule: one saving policy per grid node plus the
/// time-invariant risk policy (its z = 0 score does not depend on t, q or k).
#[derive(Debug, Clone)]
pub struct GroupPolicies {
    pub saving: Vec<RelaxedPolicy>,
    pub risk: RelaxedPolicy,
}

/// Build the policy schedules for a BoundedRationality scenario.
pub fn build_policies(config: &ScenarioConfig) -> Result<Vec<GroupPolicies>> {
    let grid = config.grid()?;
    let horizon = grid.horizon();
    let lambda_c = config
        .lambda_c
        .ok_or_else(|| Error::InvalidConfig("lambda_c required".into()))?;
    let lambda_phi = config
        .lambda_phi
        .ok_or_else(|| Error::InvalidConfig("lambda_phi required".into()))?;
    let c_grid = config
        .c_grid
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("c_grid required".into()))?
        .values();
    let phi_grid = config
        .phi_grid
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("phi_grid required".into()))?
        .values();

    config
        .groups
        .iter()
        .enumerate()
        .map(|(g, gp)| {
            let saving = (0..=grid.steps)
                .map(|k| saving_policy(grid.t(k), gp, config.r, horizon, &c_grid, lambda_c))
                .collect::<Result<Vec<_>>>()?;
            let risk = risk_policy(
                0.0,
                gp,
                &config.price,
                config.sigma_common,
                config.price.q0,
                config.k0[g],
                0.0,
                &phi_grid,
                lambda_phi,
            )?;
            Ok(GroupPolicies { saving, risk })
        })
        .collect()
}

/// Representative-agent wealth under relaxed controls: drift at the
/// policy-mean consumption, diffusion sqrt of the policy-averaged squared
/// common-risk exposure. Capital follows the classical dynamics (the
/// relaxation acts on c and φ only).
pub fn simulate_relaxed_wealth(
    config: &ScenarioConfig,
    policies: &[GroupPolicies],
    bundle: &NoiseBundle,
    price: &PricePath,
    mf: &MeanFieldPath,
) -> Result<AgentPaths> {
    if bundle.mode != NoiseMode::GroupLevel {
        return Err(Error::GridMismatch(
            "relaxed simulation needs a GroupLevel bundle".into(),
        ));
    }
    if price.steps() != bundle.steps || mf.steps() != bundle.steps {
        return Err(Error::GridMismatch(format!(
            "steps disagree: price {}, mean field {}, noise {}",
            price.steps(),
            mf.steps(),
            bundle.steps
        )));
    }
    let n_groups = config.n_groups();
    if policies.len() != n_groups {
        return Err(Error::GridMismatch(format!(
            "{} policy schedules for {n_groups} groups",
            policies.len()
        )));
    }
    let grid = TimeGrid::new(bundle.dt * bundle.steps as f64, bundle.dt)?;

    let mut k = vec![Vec::with_capacity(bundle.steps + 1); n_groups];
    let mut w = vec![Vec::with_capacity(bundle.steps + 1); n_groups];
    let mut c = vec![Vec::with_capacity(bundle.steps + 1); n_groups];
    for g in 0..n_groups {
        k[g].push(config.k0[g]);
        w[g].push(config.w0[g]);
    }
    let mut negative_capital_steps = 0u64;

    for step in 0..=bundle.steps {
        let q = price.q[step];
        for (g, pol) in policies.iter().enumerate() {
            c[g].push(pol.saving[step].mean());
        }
        if step == bundle.steps {
            break;
        }
        let dw = bundle.dw[step];
        for (g, gp) in config.groups.iter().enumerate() {
            let d = drift_coefficient(gp, q, config.price.kappa);
            let rel = mf.m_rel[step][g];
            let db = bundle.db[g][step];
            let ka = k[g][step];
            let wa = w[g][step];
            let drift = wealth_drift(
                wa,
                ka,
                c[g][step],
                rel,
                q,
                d,
                config.price.mu_q,
                config.price.sigma_q,
                config.sigma_common,
                gp.corr_with_market,
                gp.sigma_idio,
                config.r,
            );
            let mean_sq = policies[g].risk.mean_of(|phi| {
                let v = common_risk_exposure(phi, q, ka, config.price.sigma_q, config.sigma_common);
                v * v
            });
            if mean_sq < 0.0 {
                return Err(Error::Numerical(format!(
                    "negative policy-averaged squared exposure {mean_sq} at step {step}"
                )));
            }
            let exposure = mean_sq.sqrt();
            let k_next =
                capital_step(ka, rel, d, grid.dt, gp.sigma_idio, db, config.sigma_common, dw);
            let w_next = wealth_step(wa, drift, grid.dt, q, gp.sigma_idio, db, exposure, dw);
            if !k_next.is_finite() || !w_next.is_finite() {
                return Err(Error::Numerical(format!(
                    "relaxed state diverged at step {} group {g}",
                    step + 1
                )));
            }
            if k_next < 0.0 {
                negative_capital_steps += 1;
            }
            k[g].push(k_next);
            w[g].push(w_next);
        }
    }

    let objective = (0..n_groups)
        .map(|g| {
            let rho = config.groups[g].rho;
            let gamma = config.groups[g].gamma;
            let util: Result<Vec<f64>> = c[g]
                .iter()
                .enumerate()
                .map(|(kk, &ck)| Ok((-rho * grid.t(kk)).exp() * crra_utility(ck, gamma)?))
                .collect();
            match util {
                Ok(u) => trapezoid(&u, grid.dt) + w[g].last().unwrap(),
                Err(_) => f64::NAN,
            }
        })
        .collect();

    Ok(AgentPaths {
        k,
        w,
        c,
        group_of: (0..n_groups).collect(),
        objective,
        negative_capital_steps,
        dt: grid.dt,
    })
}

/// Itemized entropy-regularized payoff of one group.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveBreakdown {
    /// ∫ e^{−ρt} E_π[U(c)] dt.
    pub utility: f64,
    /// ∫ e^{−ρt} E_π[φ²]/2 dt (entering the payoff with a minus sign).
    pub risk_cost: f64,
    /// λ_c ∫ e^{−ρt} H(π_c) dt with H the differential entropy.
    pub saving_entropy: f64,
    /// λ_φ ∫ e^{−ρt} H(π_φ) dt.
    pub risk_entropy: f64,
    pub terminal_wealth: f64,
}

impl ObjectiveBreakdown {
    pub fn total(&self) -> f64 {
        self.utility - self.risk_cost + self.saving_entropy + self.risk_entropy
            + self.terminal_wealth
    }
}

/// Entropy-regularized payoff per group:
/// ∫ e^{−ρt}(E[U] − E[φ²]/2 + λ_c H(π_c) + λ_φ H(π_φ)) dt + w_T.
pub fn relaxed_objective_breakdown(
    paths: &AgentPaths,
    policies: &[GroupPolicies],
    config: &ScenarioConfig,
) -> Result<Vec<ObjectiveBreakdown>> {
    let grid = TimeGrid::new(paths.dt * paths.steps() as f64, paths.dt)?;
    let lambda_c = config.lambda_c.unwrap_or(0.0);
    let lambda_phi = config.lambda_phi.unwrap_or(0.0);
    let mut out = Vec::with_capacity(config.n_groups());
    for (g, gp) in config.groups.iter().enumerate() {
        let disc: Vec<f64> = (0..=grid.steps).map(|k| (-gp.rho * grid.t(k)).exp()).collect();
        let mut util = Vec::with_capacity(grid.steps + 1);
        let mut cost = Vec::with_capacity(grid.steps + 1);
        let mut ent_c = Vec::with_capacity(grid.steps + 1);
        let risk = &policies[g].risk;
        let risk_sq = risk.mean_of(|phi| phi * phi);
        let risk_ent = risk.differential_entropy();
        for (d, pol) in disc.iter().zip(&policies[g].saving) {
            let eu = pol.mean_of(|cv| crra_utility(cv, gp.gamma).unwrap_or(f64::NAN));
            util.push(d * eu);
            cost.push(d * 0.5 * risk_sq);
            ent_c.push(d * pol.differential_entropy());
        }
        let ent_phi: Vec<f64> = disc.iter().map(|d| d * risk_ent).collect();
        out.push(ObjectiveBreakdown {
            utility: trapezoid(&util, grid.dt),
            risk_cost: trapezoid(&cost, grid.dt),
            saving_entropy: lambda_c * trapezoid(&ent_c, grid.dt),
            risk_entropy: lambda_phi * trapezoid(&ent_phi, grid.dt),
            terminal_wealth: *paths.w[g].last().unwrap(),
        });
    }
    Ok(out)
}

/// Total entropy-regularized payoff per group.
pub fn relaxed_objective(
    paths: &AgentPaths,
    policies: &[GroupPolicies],
    config: &ScenarioConfig,
) -> Result<Vec<f64>> {
    Ok(relaxed_objective_breakdown(paths, policies, config)?
        .iter()
        .map(ObjectiveBreakdown::total)
        .collect())
}
