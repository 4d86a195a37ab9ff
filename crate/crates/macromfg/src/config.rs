//! Scenario parameters: per-group economic constants, price dynamics, grid
//! and Monte-Carlo settings, plus validation and TOML load/save.
//!
//! One schema covers every model variant. The classic two-group economy is
//! the n = 2 case with `drift_form = "InvestmentCost"` for experts and
//! `"HouseholdLinear"` for households; the n-group generalization uses
//! investment-cost drift throughout.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg::semidefinite_cholesky;
use crate::{Error, Result, TimeGrid};

/// Diagonal drift term of a group's capital SDE.
///
/// `InvestmentCost` groups pay the investment cost Φ and depreciate at δ, so
/// capital reverts at rate |Φ(ι*_t) − δ| = |log(q_t)/κ − δ|. `HouseholdLinear`
/// groups trade capital at the fixed speed 1 − δ instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftForm {
    InvestmentCost,
    HouseholdLinear,
}

/// Model variant selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Common noise W drives only the capital price.
    NoAggregateShock,
    /// W also loads directly on every capital process with weight σ.
    AggregateShock,
    /// n interacting groups, all with investment-cost drift.
    GeneralNGroup,
    /// Entropy-regularized (Gibbs) saving and risk policies.
    BoundedRationality,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::NoAggregateShock => "NoAggregateShock",
            Variant::AggregateShock => "AggregateShock",
            Variant::GeneralNGroup => "GeneralNGroup",
            Variant::BoundedRationality => "BoundedRationality",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NoAggregateShock" => Ok(Variant::NoAggregateShock),
            "AggregateShock" => Ok(Variant::AggregateShock),
            "GeneralNGroup" => Ok(Variant::GeneralNGroup),
            "BoundedRationality" => Ok(Variant::BoundedRationality),
            other => Err(Error::Parse(format!(
                "unknown variant {other:?}; expected NoAggregateShock, AggregateShock, \
                 GeneralNGroup or BoundedRationality"
            ))),
        }
    }
}

/// Per-group economic constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub label: String,
    /// Preference λ ∈ [0, 1] for tracking the global average over the group average.
    pub lambda: f64,
    /// Limit population fraction α ∈ (0, 1]; fractions sum to 1 across groups.
    pub alpha: f64,
    /// Depreciation / adjustment speed δ > 0.
    pub delta: f64,
    /// Idiosyncratic capital volatility σ_k ≥ 0.
    pub sigma_idio: f64,
    /// Discount rate of the group's objective (households discount at r).
    pub rho: f64,
    /// CRRA curvature γ > 0, γ ≠ 1.
    pub gamma: f64,
    /// Retained fraction of capital risk, φ ∈ [0, 1].
    pub phi: f64,
    /// Equity-constraint floor φ̃ ∈ [0, 1], φ ≥ φ̃.
    pub phi_floor: f64,
    /// Instantaneous correlation p' ∈ [−1, 1] between the group's idiosyncratic
    /// shock and the market shock W.
    pub corr_with_market: f64,
    pub drift_form: DriftForm,
}

/// Capital-price GBM parameters dq = μ_q q dt + σ_q q dW and the adjustment
/// cost κ of the investment technology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceParams {
    pub q0: f64,
    pub mu_q: f64,
    pub sigma_q: f64,
    pub kappa: f64,
}

/// Uniform action grid for the bounded-rationality policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    /// Materialize the grid values (linspace, single point when points == 1).
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.min];
        }
        let h = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.min + i as f64 * h).collect()
    }

    pub fn spacing(&self) -> f64 {
        if self.points <= 1 {
            0.0
        } else {
            (self.max - self.min) / (self.points - 1) as f64
        }
    }
}

/// Complete parameterization of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub variant: Variant,
    pub groups: Vec<GroupParams>,
    /// Pairwise idiosyncratic correlations p_{j,o}, unit diagonal, n×n row-major.
    pub cross_corr: Vec<Vec<f64>>,
    /// Common-noise loading σ on capital; forced to 0 in NoAggregateShock.
    pub sigma_common: f64,
    pub price: PriceParams,
    /// Risk-free rate.
    pub r: f64,
    /// Horizon T in years.
    pub horizon: f64,
    /// Step width in years; must divide the horizon.
    pub dt: f64,
    /// Finite-player counts per group.
    pub n_agents: Vec<usize>,
    /// Monte-Carlo ensemble size.
    pub n_paths: usize,
    /// RNG seed. TOML integers are signed, so the full 64-bit pattern is
    /// stored bit-cast (seeds >= 2^63 appear negative in the file).
    #[serde(with = "seed_bits")]
    pub seed: u64,
    /// Initial group mean capital.
    pub m0: Vec<f64>,
    /// Per-group initial capital of simulated agents.
    pub k0: Vec<f64>,
    /// Per-group initial wealth of simulated agents.
    pub w0: Vec<f64>,
    /// Entropy temperature for the saving policy (BoundedRationality only).
    #[serde(default)]
    pub lambda_c: Option<f64>,
    /// Entropy temperature for the risk policy (BoundedRationality only).
    #[serde(default)]
    pub lambda_phi: Option<f64>,
    #[serde(default)]
    pub c_grid: Option<GridSpec>,
    #[serde(default)]
    pub phi_grid: Option<GridSpec>,
}

mod seed_bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(*seed as i64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        Ok(i64::deserialize(d)? as u64)
    }
}

/// Outcome of `validate`: empty list means the scenario is usable.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            writeln!(f, "valid")
        } else {
            for v in &self.violations {
                writeln!(f, "violation: {v}")?;
            }
            Ok(())
        }
    }
}

impl ScenarioConfig {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.dt)
    }

    /// Full correlation matrix of (W, B¹, …, Bⁿ): row/column 0 is the market
    /// shock, entry (0, j+1) is group j's p', block (j+1, o+1) is p_{j,o}.
    pub fn full_correlation_matrix(&self) -> DMatrix<f64> {
        let n = self.n_groups();
        let mut r = DMatrix::<f64>::identity(n + 1, n + 1);
        for (j, g) in self.groups.iter().enumerate() {
            r[(0, j + 1)] = g.corr_with_market;
            r[(j + 1, 0)] = g.corr_with_market;
        }
        for j in 0..n {
            for o in 0..n {
                if j != o {
                    let p = self
                        .cross_corr
                        .get(j)
                        .and_then(|row| row.get(o))
                        .copied()
                        .unwrap_or(f64::NAN);
                    r[(j + 1, o + 1)] = p;
                }
            }
        }
        r
    }

    /// Check every invariant; the report carries all failures at once.
    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();
        let n = self.n_groups();
        if n == 0 {
            rep.push("at least one group is required");
            return rep;
        }

        for (j, g) in self.groups.iter().enumerate() {
            let tag = format!("group {} ({})", j, g.label);
            if !(0.0..=1.0).contains(&g.lambda) {
                rep.push(format!("{tag}: lambda {} outside [0, 1]", g.lambda));
            }
            if !(g.alpha > 0.0 && g.alpha <= 1.0) {
                rep.push(format!("{tag}: alpha {} outside (0, 1]", g.alpha));
            }
            if !(g.delta > 0.0) {
                rep.push(format!("{tag}: delta {} must be > 0", g.delta));
            }
            if g.drift_form == DriftForm::HouseholdLinear && g.delta >= 1.0 {
                rep.push(format!(
                    "{tag}: HouseholdLinear drift needs delta < 1 (got {})",
                    g.delta
                ));
            }
            if !(g.sigma_idio >= 0.0) {
                rep.push(format!("{tag}: sigma_idio {} must be >= 0", g.sigma_idio));
            }
            if !(g.gamma > 0.0) || g.gamma == 1.0 {
                rep.push(format!("{tag}: gamma {} must be > 0 and != 1", g.gamma));
            }
            if g.rho < self.r {
                rep.push(format!(
                    "{tag}: discount rate rho {} below risk-free rate {}",
                    g.rho, self.r
                ));
            }
            if !(0.0..=1.0).contains(&g.phi) {
                rep.push(format!("{tag}: phi {} outside [0, 1]", g.phi));
            }
            if !(0.0..=1.0).contains(&g.phi_floor) {
                rep.push(format!("{tag}: phi_floor {} outside [0, 1]", g.phi_floor));
            }
            if g.phi < g.phi_floor {
                rep.push(format!(
                    "{tag}: phi {} below its floor {}",
                    g.phi, g.phi_floor
                ));
            }
            if !(-1.0..=1.0).contains(&g.corr_with_market) {
                rep.push(format!(
                    "{tag}: corr_with_market {} outside [-1, 1]",
                    g.corr_with_market
                ));
            }
        }

        let alpha_sum: f64 = self.groups.iter().map(|g| g.alpha).sum();
        if (alpha_sum - 1.0).abs() > 1e-9 {
            rep.push(format!("alpha sum != 1 (got {alpha_sum})"));
        }

        if self.cross_corr.len() != n || self.cross_corr.iter().any(|row| row.len() != n) {
            rep.push(format!("cross_corr must be {n}x{n}"));
        } else {
            for j in 0..n {
                if (self.cross_corr[j][j] - 1.0).abs() > 1e-12 {
                    rep.push(format!("cross_corr[{j}][{j}] must be 1"));
                }
                for o in (j + 1)..n {
                    if (self.cross_corr[j][o] - self.cross_corr[o][j]).abs() > 1e-12 {
                        rep.push(format!("cross_corr not symmetric at ({j}, {o})"));
                    }
                    if self.cross_corr[j][o].abs() > 1.0 {
                        rep.push(format!(
                            "cross_corr[{j}][{o}] = {} outside [-1, 1]",
                            self.cross_corr[j][o]
                        ));
                    }
                }
            }
            // PSD check by attempted factorization of the assembled matrix.
            if let Err(e) = semidefinite_cholesky(&self.full_correlation_matrix()) {
                rep.push(format!("correlation matrix not PSD: {e}"));
            }
        }

        if !(self.price.q0 > 0.0) {
            rep.push(format!("price.q0 {} must be > 0", self.price.q0));
        }
        if !(self.price.kappa > 0.0) {
            rep.push(format!("price.kappa {} must be > 0", self.price.kappa));
        }
        if !(self.price.sigma_q >= 0.0) {
            rep.push(format!("price.sigma_q {} must be >= 0", self.price.sigma_q));
        }

        if !(self.sigma_common >= 0.0) {
            rep.push(format!("sigma_common {} must be >= 0", self.sigma_common));
        }
        if self.variant == Variant::NoAggregateShock && self.sigma_common != 0.0 {
            rep.push(format!(
                "variant NoAggregateShock forces sigma_common = 0 (got {})",
                self.sigma_common
            ));
        }

        if let Err(e) = TimeGrid::new(self.horizon, self.dt) {
            rep.push(e.to_string());
        }

        for (name, v) in [("n_agents", &self.n_agents)] {
            if v.len() != n {
                rep.push(format!("{name} must have one entry per group"));
            } else if v.contains(&0) {
                rep.push(format!("{name} entries must be >= 1"));
            }
        }
        for (name, v) in [("m0", &self.m0), ("k0", &self.k0), ("w0", &self.w0)] {
            if v.len() != n {
                rep.push(format!("{name} must have one entry per group"));
            } else if v.iter().any(|x| !x.is_finite()) {
                rep.push(format!("{name} entries must be finite"));
            }
        }
        if self.n_paths == 0 {
            rep.push("n_paths must be >= 1");
        }

        if self.variant == Variant::BoundedRationality {
            match self.lambda_c {
                Some(l) if l > 0.0 => {}
                other => rep.push(format!(
                    "BoundedRationality needs lambda_c > 0 (got {other:?})"
                )),
            }
            match self.lambda_phi {
                Some(l) if l > 0.0 => {}
                other => rep.push(format!(
                    "BoundedRationality needs lambda_phi > 0 (got {other:?})"
                )),
            }
            match &self.c_grid {
                Some(g) if g.min > 0.0 && g.max >= g.min && g.points >= 1 => {}
                other => rep.push(format!(
                    "BoundedRationality needs a positive c_grid (got {other:?})"
                )),
            }
            match &self.phi_grid {
                Some(g) if g.min >= 0.0 && g.max <= 1.0 && g.max >= g.min && g.points >= 1 => {
                    let max_floor = self
                        .groups
                        .iter()
                        .map(|gr| gr.phi_floor)
                        .fold(0.0f64, f64::max);
                    if g.min + 1e-12 < max_floor {
                        rep.push(format!(
                            "phi_grid.min {} below the binding phi_floor {max_floor}",
                            g.min
                        ));
                    }
                }
                other => rep.push(format!(
                    "BoundedRationality needs phi_grid within [0, 1] (got {other:?})"
                )),
            }
        }

        rep
    }

    /// Load a scenario from a TOML file; parse or validation failure aborts.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg = Self::load_unchecked(path)?;
        let report = cfg.validate();
        if !report.is_valid() {
            return Err(Error::InvalidConfig(report.violations.join("; ")));
        }
        Ok(cfg)
    }

    /// Parse a scenario file without validating it (the `validate` CLI
    /// subcommand reports violations instead of aborting).
    pub fn load_unchecked(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {}", path.display(), e)))
    }

    /// Save the scenario as TOML. `load(save(c)) == c` field for field.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML serialization, for run manifests.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Default two-group economy (experts and households), 800 weekly steps.
    pub fn two_group_default(variant: Variant) -> Self {
        let sigma_common = match variant {
            Variant::NoAggregateShock => 0.0,
            _ => 0.05,
        };
        let r = 0.02;
        let mut cfg = ScenarioConfig {
            variant,
            groups: vec![
                GroupParams {
                    label: "experts".into(),
                    lambda: 0.6,
                    alpha: 0.5,
                    delta: 0.05,
                    sigma_idio: 0.10,
                    rho: 0.05,
                    gamma: 2.0,
                    phi: 0.8,
                    phi_floor: 0.5,
                    corr_with_market: 0.2,
                    drift_form: DriftForm::InvestmentCost,
                },
                GroupParams {
                    label: "households".into(),
                    lambda: 0.4,
                    alpha: 0.5,
                    delta: 0.08,
                    sigma_idio: 0.08,
                    rho: r,
                    gamma: 2.0,
                    phi: 0.2,
                    phi_floor: 0.0,
                    corr_with_market: 0.1,
                    drift_form: DriftForm::HouseholdLinear,
                },
            ],
            cross_corr: vec![vec![1.0, -0.5], vec![-0.5, 1.0]],
            sigma_common,
            // q0 sits where the leading eigenvalue of A vanishes; mu_q = sigma_q^2/2
            // makes log q a driftless walk, so the economy cycles between expert
            // accumulation (low q) and fire-sale reversion (high q) regimes.
            price: PriceParams { q0: 1.55, mu_q: 0.0006125, sigma_q: 0.035, kappa: 0.35 },
            r,
            horizon: 800.0 / 52.0,
            dt: 1.0 / 52.0,
            n_agents: vec![64, 64],
            n_paths: 100,
            seed: 7,
            m0: vec![1.0, 1.0],
            k0: vec![1.0, 1.0],
            w0: vec![1.0, 1.0],
            lambda_c: None,
            lambda_phi: None,
            c_grid: None,
            phi_grid: None,
        };
        if variant == Variant::BoundedRationality {
            cfg.groups[0].phi_floor = 0.5;
            cfg.groups[1].phi = 0.6;
            cfg.groups[1].phi_floor = 0.5;
            cfg.lambda_c = Some(0.5);
            cfg.lambda_phi = Some(0.5);
            cfg.c_grid = Some(GridSpec { min: 1e-3, max: 5.0, points: 512 });
            cfg.phi_grid = Some(GridSpec { min: 0.5, max: 1.0, points: 256 });
        }
        cfg
    }

    /// Four heterogeneous groups with investment-cost drift throughout.
    pub fn four_group_default() -> Self {
        let lambdas = [0.7, 0.5, 0.4, 0.6];
        let alphas = [0.4, 0.3, 0.2, 0.1];
        let deltas = [0.04, 0.06, 0.08, 0.05];
        let sigmas = [0.12, 0.09, 0.07, 0.05];
        let rhos = [0.05, 0.04, 0.03, 0.02];
        let phis = [0.4, 0.3, 0.2, 0.1];
        let floors = [0.2, 0.15, 0.1, 0.05];
        let corrs = [0.2, 0.1, 0.0, -0.1];
        let groups = (0..4)
            .map(|j| GroupParams {
                label: format!("group{}", j + 1),
                lambda: lambdas[j],
                alpha: alphas[j],
                delta: deltas[j],
                sigma_idio: sigmas[j],
                rho: rhos[j],
                gamma: 2.0,
                phi: phis[j],
                phi_floor: floors[j],
                corr_with_market: corrs[j],
                drift_form: DriftForm::InvestmentCost,
            })
            .collect();
        let mut cross = vec![vec![0.05; 4]; 4];
        for (j, row) in cross.iter_mut().enumerate() {
            row[j] = 1.0;
        }
        ScenarioConfig {
            variant: Variant::GeneralNGroup,
            groups,
            cross_corr: cross,
            sigma_common: 0.03,
            // Row sums of A are 1 - |Phi - delta_j|; q0 = e^{kappa(1+delta_bar)}
            // puts every group near criticality.
            price: PriceParams { q0: 1.70, mu_q: 0.0006125, sigma_q: 0.035, kappa: 0.5 },
            r: 0.02,
            horizon: 800.0 / 52.0,
            dt: 1.0 / 52.0,
            n_agents: vec![32, 32, 32, 32],
            n_paths: 100,
            seed: 42,
            m0: vec![1.0; 4],
            k0: vec![1.0; 4],
            w0: vec![1.0; 4],
            lambda_c: None,
            lambda_phi: None,
            c_grid: None,
            phi_grid: None,
        }
    }

    /// Builtin scenario for a variant name (used by the CLI when no file is given).
    pub fn builtin(variant: Variant) -> Self {
        match variant {
            Variant::GeneralNGroup => Self::four_group_default(),
            v => Self::two_group_default(v),
        }
    }
}
