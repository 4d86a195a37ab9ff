//! Finite-player and representative-agent capital/wealth/consumption
//! dynamics, the optimal consumption rule, the deterministic adjoint and the
//! Hamiltonian first-order condition it derives from.
//!
//! Capital of agent i in group j:
//!
//! ```text
//! dk = [k̂ʲ − D_j(q_t)·k] dt + σ_j dBʲ + σ dW
//! ```
//!
//! where k̂ʲ is the relative average capitalization (empirical for finite
//! players, M_{j,t} from the mean-field path for the representative agent)
//! and D_j the group's drift coefficient. Wealth:
//!
//! ```text
//! dw = [r w + q(k̂ʲ − D_j k) + k μ_q q + σ_q σ q + p'_j σ_q σ_j q − k q r − c] dt
//!      + q σ_j dBʲ + φ_j q (k σ_q + σ) dW
//! ```
//!
//! Consumption follows ĉ_t = e^{−ρt/γ} y_t^{−1/γ} with the deterministic
//! adjoint y_t = e^{−r(T−t)}; each agent's realized objective is
//! ∫ e^{−ρt} U(c) dt + w_T by trapezoidal quadrature.

use crate::config::{GroupParams, ScenarioConfig};
use crate::meanfield::MeanFieldPath;
use crate::noise::{NoiseBundle, NoiseMode};
use crate::price::{drift_coefficient, PricePath};
use crate::{Error, Result, TimeGrid};

/// CRRA utility U(c) = (c^{1−γ} − 1)/(1 − γ) for c > 0, γ ≠ 1.
pub fn crra_utility(c: f64, gamma: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!("crra_utility: c = {c} must be > 0")));
    }
    Ok((c.powf(1.0 - gamma) - 1.0) / (1.0 - gamma))
}

/// Optimal consumption ĉ_t = e^{−ρt/γ}·e^{r(T−t)/γ}; a group's own discount
/// rate ρ stands in for the expert rate (households carry ρ = r).
pub fn optimal_consumption(t: f64, group: &GroupParams, r: f64, horizon: f64) -> f64 {
    ((r * (horizon - t) - group.rho * t) / group.gamma).exp()
}

/// First-order condition of the Hamiltonian in c:
/// ∂H/∂c = −y_t + e^{−ρt} c^{−γ} with y_t = e^{−r(T−t)}.
/// Zero exactly at ĉ_t; monotone decreasing in c.
pub fn foc_residual(c: f64, t: f64, group: &GroupParams, r: f64, horizon: f64) -> f64 {
    -(-r * (horizon - t)).exp() + (-group.rho * t).exp() * c.powf(-group.gamma)
}

/// The c-dependent part of the Hamiltonian, e^{−ρt} U(c) − y_t·c, used by the
/// finite-difference cross-check of the first-order condition.
pub fn hamiltonian_consumption_terms(
    c: f64,
    t: f64,
    group: &GroupParams,
    r: f64,
    horizon: f64,
) -> Result<f64> {
    let y = (-r * (horizon - t)).exp();
    Ok((-group.rho * t).exp() * crra_utility(c, group.gamma)? - y * c)
}

/// Deterministic adjoint y_t = e^{−r(T−t)} on a grid.
#[derive(Debug, Clone)]
pub struct AdjointPath {
    pub y: Vec<f64>,
    pub dt: f64,
}

/// Closed-form adjoint.
pub fn adjoint_path(r: f64, grid: TimeGrid) -> AdjointPath {
    let horizon = grid.horizon();
    let y = (0..=grid.steps)
        .map(|k| (-r * (horizon - grid.t(k))).exp())
        .collect();
    AdjointPath { y, dt: grid.dt }
}

/// Adjoint by explicit Euler on the terminal-value problem, stepping in
/// reversed time from y_T = 1. Agrees with the closed form at O(dt).
pub fn adjoint_backward_integrated(r: f64, grid: TimeGrid) -> AdjointPath {
    let mut y = vec![0.0; grid.steps + 1];
    y[grid.steps] = 1.0;
    for k in (0..grid.steps).rev() {
        y[k] = y[k + 1] * (1.0 - r * grid.dt);
    }
    AdjointPath { y, dt: grid.dt }
}

/// Capital/wealth/consumption trajectories of a simulated ensemble.
#[derive(Debug, Clone)]
pub struct AgentPaths {
    /// Capital, indexed [agent][node].
    pub k: Vec<Vec<f64>>,
    /// Wealth, indexed [agent][node].
    pub w: Vec<Vec<f64>>,
    /// Consumption rate, indexed [agent][node].
    pub c: Vec<Vec<f64>>,
    pub group_of: Vec<usize>,
    /// Realized ∫ e^{−ρt} U(c) dt + w_T per agent (NaN when a custom
    /// consumption rule leaves U undefined).
    pub objective: Vec<f64>,
    /// Count of agent-steps where capital sat below zero (not enforced away:
    /// the linear closed form holds only for unconstrained dynamics).
    pub negative_capital_steps: u64,
    pub dt: f64,
}

impl AgentPaths {
    pub fn n_agents(&self) -> usize {
        self.k.len()
    }

    pub fn steps(&self) -> usize {
        self.k[0].len() - 1
    }

    /// Per-group mean of one per-agent field (`&self.k`, `&self.w`, `&self.c`)
    /// at every node.
    pub fn group_means(&self, data: &[Vec<f64>], n_groups: usize) -> Vec<Vec<f64>> {
        let steps = self.steps();
        let mut counts = vec![0usize; n_groups];
        for &g in &self.group_of {
            counts[g] += 1;
        }
        let mut out = vec![vec![0.0; n_groups]; steps + 1];
        for (a, series) in data.iter().enumerate() {
            let g = self.group_of[a];
            for (k, &x) in series.iter().enumerate() {
                out[k][g] += x;
            }
        }
        for row in &mut out {
            for (g, x) in row.iter_mut().enumerate() {
                *x /= counts[g] as f64;
            }
        }
        out
    }
}

/// One Euler step of the capital SDE.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn capital_step(
    k: f64,
    rel_avg: f64,
    d_coef: f64,
    dt: f64,
    sigma_idio: f64,
    db: f64,
    sigma_common: f64,
    dw: f64,
) -> f64 {
    k + (rel_avg - d_coef * k) * dt + sigma_idio * db + sigma_common * dw
}

/// Wealth drift b^w at the current state.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn wealth_drift(
    w: f64,
    k: f64,
    c: f64,
    rel_avg: f64,
    q: f64,
    d_coef: f64,
    mu_q: f64,
    sigma_q: f64,
    sigma_common: f64,
    corr_wm: f64,
    sigma_idio: f64,
    r: f64,
) -> f64 {
    r * w + q * (rel_avg - d_coef * k) + k * mu_q * q + sigma_q * sigma_common * q
        + corr_wm * sigma_q * sigma_idio * q
        - k * q * r
        - c
}

/// Retained common-risk exposure φ q (k σ_q + σ): the dW coefficient of wealth.
#[inline]
pub(crate) fn common_risk_exposure(
    phi: f64,
    q: f64,
    k: f64,
    sigma_q: f64,
    sigma_common: f64,
) -> f64 {
    phi * q * (k * sigma_q + sigma_common)
}

/// One Euler step of the wealth SDE given precomputed drift and dW exposure.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn wealth_step(
    w: f64,
    drift: f64,
    dt: f64,
    q: f64,
    sigma_idio: f64,
    db: f64,
    exposure: f64,
    dw: f64,
) -> f64 {
    w + drift * dt + q * sigma_idio * db + exposure * dw
}

/// Relative average capitalization per group from group means and counts:
/// k̂ʲ = (1 − λ_j)·k̂_j + λ_j·k̄ with k̄ the count-weighted global mean.
pub fn empirical_relative_averages(
    config: &ScenarioConfig,
    group_means: &[f64],
    counts: &[usize],
) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    let global: f64 = group_means
        .iter()
        .zip(counts)
        .map(|(m, &c)| m * c as f64)
        .sum::<f64>()
        / total as f64;
    config
        .groups
        .iter()
        .zip(group_means)
        .map(|(g, &m)| (1.0 - g.lambda) * m + g.lambda * global)
        .collect()
}

fn objective_of(
    config: &ScenarioConfig,
    group: usize,
    c: &[f64],
    w_terminal: f64,
    grid: TimeGrid,
) -> f64 {
    let rho = config.groups[group].rho;
    let gamma = config.groups[group].gamma;
    let mut util = Vec::with_capacity(c.len());
    for (k, &ck) in c.iter().enumerate() {
        match crra_utility(ck, gamma) {
            Ok(u) => util.push((-rho * grid.t(k)).exp() * u),
            Err(_) => return f64::NAN,
        }
    }
    crate::linalg::trapezoid(&util, grid.dt) + w_terminal
}

/// Finite-player ensemble. The relative average is recomputed each step from
/// the currently simulated agents; the bundle may hold more agent series than
/// `config.n_agents` requests (the leading ones are used), which couples
/// experiments across ensemble sizes.
pub fn simulate_finite_players(
    config: &ScenarioConfig,
    bundle: &NoiseBundle,
    price: &PricePath,
) -> Result<AgentPaths> {
    if bundle.mode != NoiseMode::AgentLevel {
        return Err(Error::GridMismatch(
            "finite-player simulation needs an AgentLevel bundle".into(),
        ));
    }
    if price.steps() != bundle.steps {
        return Err(Error::GridMismatch(format!(
            "price path has {} steps, noise bundle has {}",
            price.steps(),
            bundle.steps
        )));
    }
    let n_groups = config.n_groups();
    let grid = TimeGrid::new(bundle.dt * bundle.steps as f64, bundle.dt)?;
    let horizon = grid.horizon();

    // Map requested agents onto bundle series.
    let mut series_idx = Vec::new();
    let mut group_of = Vec::new();
    for j in 0..n_groups {
        let range = bundle.agent_series_range(j);
        let want = config.n_agents[j];
        if want > range.len() {
            return Err(Error::GridMismatch(format!(
                "group {j} wants {want} agents but the bundle holds {}",
                range.len()
            )));
        }
        for s in range.take(want) {
            series_idx.push(s);
            group_of.push(j);
        }
    }
    let n_agents = series_idx.len();
    let counts = config.n_agents.clone();

    let mut k = vec![Vec::with_capacity(bundle.steps + 1); n_agents];
    let mut w = vec![Vec::with_capacity(bundle.steps + 1); n_agents];
    let mut c = vec![Vec::with_capacity(bundle.steps + 1); n_agents];
    for (a, &g) in group_of.iter().enumerate() {
        k[a].push(config.k0[g]);
        w[a].push(config.w0[g]);
    }
    let mut negative_capital_steps = 0u64;

    for step in 0..=bundle.steps {
        let t = grid.t(step);
        let q = price.q[step];
        let cons: Vec<f64> = config
            .groups
            .iter()
            .map(|g| optimal_consumption(t, g, config.r, horizon))
            .collect();
        for (a, &g) in group_of.iter().enumerate() {
            c[a].push(cons[g]);
        }
        if step == bundle.steps {
            break;
        }

        // Empirical group means of current capital.
        let mut means = vec![0.0; n_groups];
        for (a, &g) in group_of.iter().enumerate() {
            means[g] += k[a][step];
        }
        for (g, m) in means.iter_mut().enumerate() {
            *m /= counts[g] as f64;
        }
        let rel = empirical_relative_averages(config, &means, &counts);
        let d: Vec<f64> = config
            .groups
            .iter()
            .map(|g| drift_coefficient(g, q, config.price.kappa))
            .collect();
        let dw = bundle.dw[step];

        for (a, &g) in group_of.iter().enumerate() {
            let gp = &config.groups[g];
            let db = bundle.db[series_idx[a]][step];
            let ka = k[a][step];
            let wa = w[a][step];
            let drift = wealth_drift(
                wa,
                ka,
                cons[g],
                rel[g],
                q,
                d[g],
                config.price.mu_q,
                config.price.sigma_q,
                config.sigma_common,
                gp.corr_with_market,
                gp.sigma_idio,
                config.r,
            );
            let exposure = common_risk_exposure(gp.phi, q, ka, config.price.sigma_q, config.sigma_common);
            let k_next = capital_step(ka, rel[g], d[g], grid.dt, gp.sigma_idio, db, config.sigma_common, dw);
            let w_next = wealth_step(wa, drift, grid.dt, q, gp.sigma_idio, db, exposure, dw);
            if !k_next.is_finite() || !w_next.is_finite() {
                return Err(Error::Numerical(format!(
                    "finite-player state diverged at step {} agent {a} (group {g})",
                    step + 1
                )));
            }
            if k_next < 0.0 {
                negative_capital_steps += 1;
            }
            k[a].push(k_next);
            w[a].push(w_next);
        }
    }

    let objective = (0..n_agents)
        .map(|a| objective_of(config, group_of[a], &c[a], *w[a].last().unwrap(), grid))
        .collect();
    Ok(AgentPaths { k, w, c, group_of, objective, negative_capital_steps, dt: grid.dt })
}

/// Representative agent per group driven by the mean-field relative averages
/// M_{j,t}, with pluggable consumption rule and risk fraction (the standard
/// entry point [`simulate_representative`] wires in the optimal feedback).
pub fn simulate_representative_with(
    config: &ScenarioConfig,
    bundle: &NoiseBundle,
    price: &PricePath,
    mf: &MeanFieldPath,
    consumption: impl Fn(usize, f64) -> f64,
    risk_fraction: impl Fn(usize) -> f64,
) -> Result<AgentPaths> {
    if bundle.mode != NoiseMode::GroupLevel {
        return Err(Error::GridMismatch(
            "representative simulation needs a GroupLevel bundle".into(),
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
        let t = grid.t(step);
        let q = price.q[step];
        for (g, cg) in c.iter_mut().enumerate() {
            cg.push(consumption(g, t));
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
            let exposure =
                common_risk_exposure(risk_fraction(g), q, ka, config.price.sigma_q, config.sigma_common);
            let k_next = capital_step(ka, rel, d, grid.dt, gp.sigma_idio, db, config.sigma_common, dw);
            let w_next = wealth_step(wa, drift, grid.dt, q, gp.sigma_idio, db, exposure, dw);
            if !k_next.is_finite() || !w_next.is_finite() {
                return Err(Error::Numerical(format!(
                    "representative state diverged at step {} group {g}",
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
        .map(|g| objective_of(config, g, &c[g], *w[g].last().unwrap(), grid))
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

/// Representative agent with the optimal consumption feedback and each
/// group's configured risk fraction.
pub fn simulate_representative(
    config: &ScenarioConfig,
    bundle: &NoiseBundle,
    price: &PricePath,
    mf: &MeanFieldPath,
) -> Result<AgentPaths> {
    let horizon = config.grid()?.horizon();
    simulate_representative_with(
        config,
        bundle,
        price,
        mf,
        |g, t| optimal_consumption(t, &config.groups[g], config.r, horizon),
        |g| config.groups[g].phi,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ScenarioConfig, Variant};
    use crate::meanfield::solve_meanfield;
    use crate::noise::{generate_path, NoiseMode};
    use crate::price::{simulate_price, PriceScheme};
    use approx::assert_relative_eq;

    fn two_group() -> ScenarioConfig {
        ScenarioConfig::two_group_default(Variant::NoAggregateShock)
    }

    fn silence(cfg: &mut ScenarioConfig) {
        cfg.price.sigma_q = 0.0;
        cfg.price.mu_q = 0.0;
        cfg.sigma_common = 0.0;
        for g in &mut cfg.groups {
            g.sigma_idio = 0.0;
        }
    }

    #[test]
    fn crra_utility_reference_values() {
        assert_eq!(crra_utility(1.0, 2.0).unwrap(), 0.0);
        assert_eq!(crra_utility(1.0, 0.5).unwrap(), 0.0);
        assert_relative_eq!(crra_utility(2.0, 2.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(crra_utility(4.0, 0.5).unwrap(), 2.0, epsilon = 1e-15);
        assert!(crra_utility(0.0, 2.0).is_err());
        assert!(crra_utility(-1.0, 2.0).is_err());
    }

    #[test]
    fn crra_utility_is_increasing_and_concave() {
        for gamma in [0.5, 2.0, 4.0] {
            let cs: Vec<f64> = (1..100).map(|i| 0.1 * i as f64).collect();
            let us: Vec<f64> = cs.iter().map(|&c| crra_utility(c, gamma).unwrap()).collect();
            for w in us.windows(2) {
                assert!(w[1] > w[0]);
            }
            for w in us.windows(3) {
                assert!(w[2] - 2.0 * w[1] + w[0] < 1e-12);
            }
        }
    }

    #[test]
    fn optimal_consumption_reference_values() {
        let cfg = two_group();
        let mut g = cfg.groups[0].clone();
        g.rho = 0.05;
        g.gamma = 2.0;
        let (r, horizon) = (0.02, 10.0);
        // t = T: only the discount factor remains.
        assert_relative_eq!(
            optimal_consumption(horizon, &g, r, horizon),
            (-0.05f64 * 10.0 / 2.0).exp(),
            epsilon = 1e-15
        );
        // rho = r: the exponent collapses to (rT - 2rt)/gamma.
        let mut geq = g.clone();
        geq.rho = r;
        let c0 = optimal_consumption(0.0, &geq, r, horizon);
        let ct = optimal_consumption(horizon, &geq, r, horizon);
        assert_relative_eq!(c0, (r * horizon / 2.0).exp(), epsilon = 1e-14);
        assert_relative_eq!(ct, (-r * horizon / 2.0).exp(), epsilon = 1e-14);
        assert_relative_eq!(c0 * ct, 1.0, epsilon = 1e-14);
        // t = 0: e^{rT/gamma} = e^{0.1}.
        assert_relative_eq!(
            optimal_consumption(0.0, &g, r, horizon),
            0.1f64.exp(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn foc_residual_vanishes_at_the_feedback_policy() {
        let cfg = two_group();
        let grid = cfg.grid().unwrap();
        let horizon = grid.horizon();
        for g in &cfg.groups {
            for k in 0..=grid.steps {
                let t = grid.t(k);
                let c = optimal_consumption(t, g, cfg.r, horizon);
                let res = foc_residual(c, t, g, cfg.r, horizon);
                assert!(
                    res.abs() <= 1e-12,
                    "group {} t={t}: residual {res:e}",
                    g.label
                );
            }
        }
    }

    #[test]
    fn foc_residual_sign_brackets_the_optimum() {
        let cfg = two_group();
        let g = &cfg.groups[0];
        let (t, horizon) = (3.0, cfg.horizon);
        let c = optimal_consumption(t, g, cfg.r, horizon);
        assert!(foc_residual(2.0 * c, t, g, cfg.r, horizon) < 0.0);
        assert!(foc_residual(0.5 * c, t, g, cfg.r, horizon) > 0.0);
    }

    #[test]
    fn finite_difference_of_hamiltonian_confirms_foc() {
        let cfg = two_group();
        let g = &cfg.groups[0];
        let (t, horizon) = (2.5, cfg.horizon);
        let c = optimal_consumption(t, g, cfg.r, horizon);
        let h = 1e-5 * c;
        let plus = hamiltonian_consumption_terms(c + h, t, g, cfg.r, horizon).unwrap();
        let minus = hamiltonian_consumption_terms(c - h, t, g, cfg.r, horizon).unwrap();
        let deriv = (plus - minus) / (2.0 * h);
        assert!(deriv.abs() < 1e-6, "dH/dc at the optimum = {deriv:e}");
    }

    #[test]
    fn adjoint_reference_values_and_backward_integration() {
        let grid = TimeGrid::new(10.0, 1.0 / 52.0).unwrap();
        let a = adjoint_path(0.02, grid);
        assert_relative_eq!(a.y[grid.steps], 1.0, epsilon = 1e-15);
        assert_relative_eq!(a.y[0], (-0.2f64).exp(), epsilon = 1e-14);
        let flat = adjoint_path(0.0, grid);
        assert!(flat.y.iter().all(|&y| y == 1.0));
        // y is positive and increasing in t for r > 0, and the reversed-time
        // Euler integration converges to it at first order.
        assert!(a.y.windows(2).all(|w| w[0] > 0.0 && w[1] > w[0]));
        let mut gaps = Vec::new();
        for refine in [1usize, 2, 4] {
            let g = TimeGrid::new(10.0, 1.0 / (52.0 * refine as f64)).unwrap();
            let closed = adjoint_path(0.02, g);
            let euler = adjoint_backward_integrated(0.02, g);
            let gap = closed
                .y
                .iter()
                .zip(&euler.y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            gaps.push(gap);
        }
        assert!((gaps[0] / gaps[1] - 2.0).abs() < 0.1, "{gaps:?}");
        assert!((gaps[1] / gaps[2] - 2.0).abs() < 0.1, "{gaps:?}");
    }

    #[test]
    fn decoupled_deterministic_agent_follows_scalar_ode() {
        // sigma = 0 everywhere, lambda = 0, one agent per group: the group
        // mean is the agent itself, so dk = (1 - D) k dt.
        let mut cfg = two_group();
        silence(&mut cfg);
        cfg.groups[0].lambda = 0.0;
        cfg.groups[1].lambda = 0.0;
        cfg.n_agents = vec![1, 1];
        cfg.horizon = 2.0;
        cfg.dt = 1.0 / 1024.0;
        let bundle = generate_path(&cfg, NoiseMode::AgentLevel, 0).unwrap();
        let price = simulate_price(&cfg.price, &bundle.dw, bundle.dt, PriceScheme::ExactLognormal);
        let paths = simulate_finite_players(&cfg, &bundle, &price).unwrap();
        for (g, gp) in cfg.groups.iter().enumerate() {
            let d = drift_coefficient(gp, cfg.price.q0, cfg.price.kappa);
            let expect = cfg.k0[g] * ((1.0 - d) * cfg.horizon).exp();
            let got = *paths.k[g].last().unwrap();
            assert!(
                (got - expect).abs() < 5.0 * (1.0 - d).abs() * cfg.dt * expect.abs().max(1.0),
                "group {g}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn single_agent_groups_with_full_tracking_share_the_global_average() {
        let mut cfg = two_group();
        cfg.groups[0].lambda = 1.0;
        cfg.groups[1].lambda = 1.0;
        let means = [3.0, 1.0];
        let rel = empirical_relative_averages(&cfg, &means, &[1, 1]);
        assert_relative_eq!(rel[0], 2.0, epsilon = 1e-15);
        assert_relative_eq!(rel[1], 2.0, epsilon = 1e-15);
        // Counts weight the global mean.
        let rel = empirical_relative_averages(&cfg, &means, &[3, 1]);
        assert_relative_eq!(rel[0], 2.5, epsilon = 1e-15);
    }

    #[test]
    fn representative_matches_mean_field_without_noise() {
        let mut cfg = two_group();
        silence(&mut cfg);
        cfg.horizon = 4.0;
        cfg.dt = 1.0 / 512.0;
        let bundle = generate_path(&cfg, NoiseMode::GroupLevel, 0).unwrap();
        let price = simulate_price(&cfg.price, &bundle.dw, bundle.dt, PriceScheme::ExactLognormal);
        let mf = solve_meanfield(&cfg, &bundle, &price).unwrap();
        let rep = simulate_representative(&cfg, &bundle, &price, &mf).unwrap();
        let mut max_gap = 0.0f64;
        for k in 0..=bundle.steps {
            for g in 0..2 {
                max_gap = max_gap.max((rep.k[g][k] - mf.m[k][g]).abs());
            }
        }
        assert!(max_gap < 0.05 * cfg.dt.sqrt().max(50.0 * cfg.dt), "gap {max_gap}");
        assert!(max_gap < 50.0 * cfg.dt, "gap {max_gap} not O(dt)");
    }

    #[test]
    fn wealth_is_a_pure_consumption_drain_when_everything_else_is_off() {
        let mut cfg = two_group();
        silence(&mut cfg);
        cfg.r = 0.0;
        for g in &mut cfg.groups {
            g.rho = 0.0;
        }
        cfg.m0 = vec![0.0, 0.0];
        cfg.k0 = vec![0.0, 0.0];
        cfg.w0 = vec![5.0, 5.0];
        cfg.horizon = 1.0;
        cfg.dt = 1.0 / 512.0;
        let bundle = generate_path(&cfg, NoiseMode::GroupLevel, 0).unwrap();
        let price = simulate_price(&cfg.price, &bundle.dw, bundle.dt, PriceScheme::ExactLognormal);
        let mf = solve_meanfield(&cfg, &bundle, &price).unwrap();
        let rep = simulate_representative(&cfg, &bundle, &price, &mf).unwrap();
        // rho = r = 0 makes the feedback consumption exactly 1.
        assert!(rep.c[0].iter().all(|&c| (c - 1.0).abs() < 1e-15));
        for g in 0..2 {
            let w_t = *rep.w[g].last().unwrap();
            assert_relative_eq!(w_t, 5.0 - 1.0 * cfg.horizon, epsilon = 1e-10);
        }
    }

    #[test]
    fn wealth_accounting_grows_at_the_risk_free_rate() {
        let mut cfg = two_group();
        silence(&mut cfg);
        cfg.m0 = vec![0.0, 0.0];
        cfg.k0 = vec![0.0, 0.0];
        cfg.w0 = vec![2.0, 2.0];
        cfg.horizon = 3.0;
        cfg.dt = 1.0 / 1024.0;
        let bundle = generate_path(&cfg, NoiseMode::GroupLevel, 0).unwrap();
        let price = simulate_price(&cfg.price, &bundle.dw, bundle.dt, PriceScheme::ExactLognormal);
        let mf = solve_meanfield(&cfg, &bundle, &price).unwrap();
        let rep =
            simulate_representative_with(&cfg, &bundle, &price, &mf, |_, _| 0.0, |g| {
                cfg.groups[g].phi
            })
            .unwrap();
        let expect = 2.0 * (cfg.r * cfg.horizon).exp();
        for g in 0..2 {
            let got = *rep.w[g].last().unwrap();
            assert!((got - expect).abs() < 1e-4, "w_T = {got}, expect {expect}");
        }
        // Utility of zero consumption is undefined; objective is flagged.
        assert!(rep.objective.iter().all(|o| o.is_nan()));
    }

    #[test]
    fn ensemble_of_representatives_centers_on_the_mean_field() {
        // Fresh idiosyncratic noise per replica, same relative averages: the
        // replica-vs-mean-field gap is mean zero, shrinking like 1/sqrt(paths).
        let mut cfg = two_group();
        cfg.horizon = 2.0;
        cfg.n_paths = 200;
        let mf_bundle = generate_path(&cfg, NoiseMode::GroupLevel, 0).unwrap();
        let price =
            simulate_price(&cfg.price, &mf_bundle.dw, mf_bundle.dt, PriceScheme::ExactLognormal);
        let mf = solve_meanfield(&cfg, &mf_bundle, &price).unwrap();
        let steps = mf_bundle.steps;
        let mut gaps = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for p in 1..=cfg.n_paths as u64 {
            let b = generate_path(&cfg, NoiseMode::GroupLevel, p).unwrap();
            let rep = simulate_representative(&cfg, &b, &price, &mf).unwrap();
            for g in 0..2 {
                let gap = rep.k[g][steps] - mf.m[steps][g];
                gaps[g] += gap;
                sq[g] += gap * gap;
            }
        }
        let n = cfg.n_paths as f64;
        for g in 0..2 {
            let mean = gaps[g] / n;
            let sd = ((sq[g] / n - mean * mean).max(0.0)).sqrt();
            let se = sd / n.sqrt();
            assert!(
                mean.abs() < 5.0 * se + 20.0 * cfg.dt,
                "group {g}: bias {mean} exceeds 5 se = {:.3e}",
                5.0 * se
            );
        }
    }

    #[test]
    fn negative_capital_is_counted_not_projected() {
        let mut cfg = two_group();
        cfg.k0 = vec![0.001, 0.001];
        cfg.m0 = vec![0.0, 0.0];
        for g in &mut cfg.groups {
            g.sigma_idio = 0.5;
        }
        cfg.horizon = 2.0;
        let bundle = generate_path(&cfg, NoiseMode::GroupLevel, 0).unwrap();
        let price = simulate_price(&cfg.price, &bundle.dw, bundle.dt, PriceScheme::ExactLognormal);
        let mf = solve_meanfield(&cfg, &bundle, &price).unwrap();
        let rep = simulate_representative(&cfg, &bundle, &price, &mf).unwrap();
        assert!(rep.negative_capital_steps > 0);
        assert!(rep.k.iter().flatten().any(|&k| k < 0.0));
    }

    #[test]
    fn oversubscribed_bundle_is_rejected() {
        let mut cfg = two_group();
        cfg.n_agents = vec![4, 4];
        let bundle = generate_path(&cfg, NoiseMode::AgentLevel, 0).unwrap();
        let price = simulate_price(&cfg.price, &bundle.dw, bundle.dt, PriceScheme::ExactLognormal);
        let mut bigger = cfg.clone();
        bigger.n_agents = vec![8, 4];
        assert!(simulate_finite_players(&bigger, &bundle, &price).is_err());
        // Using fewer agents than the bundle holds is allowed.
        let mut smaller = cfg.clone();
        smaller.n_agents = vec![2, 2];
        assert!(simulate_finite_players(&smaller, &bundle, &price).is_ok());
    }
}
