//! End-to-end scenario runs and convergence studies.
//!
//! One Monte-Carlo sample = one (W, B) bundle → price path → fundamental
//! solution → closed-form mean field → representative agents (classical or
//! relaxed). Samples are path-parallel with deterministic per-path seeding;
//! the merge is ordered, so a (config, seed) pair always produces
//! byte-identical outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::agents::{simulate_finite_players, simulate_representative};
use crate::config::{ScenarioConfig, Variant};
use crate::io::{
    aggregates_schema, diagnostics_table, meanfield_table, policies_table, write_csv, Table,
};
use crate::linalg::loglog_slope;
use crate::meanfield::{em_oracle, solve_meanfield, MeanFieldPath};
use crate::noise::{generate_path, NoiseMode};
use crate::price::{simulate_price, PriceScheme};
use crate::relaxed::{build_policies, simulate_relaxed_wealth, GroupPolicies};
use crate::{Error, Result};

/// Tunables of a run that are not part of the scenario itself.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Reuse path 0's common-noise series on every path (conditional-mean
    /// diagnostics: the ensemble then averages over idiosyncratic noise only).
    pub frozen_w: bool,
    pub scheme: PriceScheme,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { frozen_w: false, scheme: PriceScheme::ExactLognormal }
    }
}

/// Ensemble mean and standard error of one group's simulated series.
#[derive(Debug, Clone)]
pub struct GroupSeries {
    pub k_mean: Vec<f64>,
    pub k_se: Vec<f64>,
    pub w_mean: Vec<f64>,
    pub w_se: Vec<f64>,
    pub c_mean: Vec<f64>,
    pub c_se: Vec<f64>,
}

/// Everything a seeded run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Mean-field path of Monte-Carlo path 0 (the representative realization
    /// exported to meanfield.csv).
    pub mf: MeanFieldPath,
    pub agg: Vec<GroupSeries>,
    pub diagnostics: BTreeMap<String, f64>,
    pub seed: u64,
    pub config_digest: String,
    pub dt: f64,
    /// Policy schedules of a BoundedRationality run.
    pub policies: Option<Vec<GroupPolicies>>,
}

struct PathOutput {
    mf: Option<MeanFieldPath>,
    k: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    gap: f64,
    residual: f64,
    clamps: usize,
    negcap: u64,
}

fn simulate_one_path(
    config: &ScenarioConfig,
    opts: RunOptions,
    policies: Option<&[GroupPolicies]>,
    frozen_dw: Option<&[f64]>,
    path_idx: u64,
) -> Result<PathOutput> {
    let mut bundle = generate_path(config, NoiseMode::GroupLevel, path_idx)?;
    if let Some(dw) = frozen_dw {
        bundle.dw = dw.to_vec();
    }
    let price = simulate_price(&config.price, &bundle.dw, bundle.dt, opts.scheme);
    let mf = solve_meanfield(config, &bundle, &price)?;
    let em = em_oracle(config, &bundle, &price)?;
    let gap = mf.max_abs_gap(&em);
    let residual = mf.fundamental.as_ref().map(|f| f.max_residual).unwrap_or(f64::NAN);

    let rep = match (config.variant, policies) {
        (Variant::BoundedRationality, Some(p)) => {
            simulate_relaxed_wealth(config, p, &bundle, &price, &mf)?
        }
        _ => simulate_representative(config, &bundle, &price, &mf)?,
    };
    let n = config.n_groups();
    Ok(PathOutput {
        k: rep.group_means(&rep.k, n),
        w: rep.group_means(&rep.w, n),
        c: rep.group_means(&rep.c, n),
        mf: (path_idx == 0).then_some(mf),
        gap,
        residual,
        clamps: price.clamp_events,
        negcap: rep.negative_capital_steps,
    })
}

/// Mean and standard error (sample std / √n) across paths of a
/// [path][node] collection.
fn mean_se(series: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = series.len();
    let len = series[0].len();
    let mut mean = vec![0.0; len];
    let mut se = vec![0.0; len];
    for s in series {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    if n > 1 {
        for s in series {
            for k in 0..len {
                let d = s[k] - mean[k];
                se[k] += d * d;
            }
        }
        for v in &mut se {
            *v = (*v / (n - 1) as f64).sqrt() / (n as f64).sqrt();
        }
    }
    (mean, se)
}

/// Run a scenario with explicit options.
pub fn run_with(config: &ScenarioConfig, opts: RunOptions) -> Result<RunResult> {
    let report = config.validate();
    if !report.is_valid() {
        return Err(Error::InvalidConfig(report.violations.join("; ")));
    }
    let policies = match config.variant {
        Variant::BoundedRationality => Some(build_policies(config)?),
        _ => None,
    };
    let frozen_dw = if opts.frozen_w {
        Some(generate_path(config, NoiseMode::GroupLevel, 0)?.dw)
    } else {
        None
    };

    let outputs: Vec<PathOutput> = (0..config.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            simulate_one_path(config, opts, policies.as_deref(), frozen_dw.as_deref(), p)
        })
        .collect::<Result<Vec<_>>>()?;

    let n_groups = config.n_groups();
    let mut agg = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        // Path outputs hold [node][group]; pull out this group's series.
        let k: Vec<Vec<f64>> = outputs
            .iter()
            .map(|o| o.k.iter().map(|row| row[g]).collect())
            .collect();
        let w: Vec<Vec<f64>> = outputs
            .iter()
            .map(|o| o.w.iter().map(|row| row[g]).collect())
            .collect();
        let c: Vec<Vec<f64>> = outputs
            .iter()
            .map(|o| o.c.iter().map(|row| row[g]).collect())
            .collect();
        let (k_mean, k_se) = mean_se(&k);
        let (w_mean, w_se) = mean_se(&w);
        let (c_mean, c_se) = mean_se(&c);
        agg.push(GroupSeries { k_mean, k_se, w_mean, w_se, c_mean, c_se });
    }

    let mf = outputs[0].mf.clone().expect("path 0 keeps its mean field");
    let mut diagnostics = BTreeMap::new();
    let gaps: Vec<f64> = outputs.iter().map(|o| o.gap).collect();
    diagnostics.insert(
        "closed_vs_em_gap_mean".into(),
        gaps.iter().sum::<f64>() / gaps.len() as f64,
    );
    diagnostics.insert(
        "closed_vs_em_gap_max".into(),
        gaps.iter().copied().fold(0.0, f64::max),
    );
    diagnostics.insert(
        "fundamental_residual_max".into(),
        outputs.iter().map(|o| o.residual).fold(0.0, f64::max),
    );
    diagnostics.insert(
        "price_clamp_events".into(),
        outputs.iter().map(|o| o.clamps).sum::<usize>() as f64,
    );
    diagnostics.insert(
        "negative_capital_steps".into(),
        outputs.iter().map(|o| o.negcap).sum::<u64>() as f64,
    );
    diagnostics.insert("n_paths".into(), config.n_paths as f64);
    diagnostics.insert("steps".into(), config.grid()?.steps as f64);

    // In the no-aggregate-shock variant the common noise must reach the mean
    // field only through the price: re-solving path 0 with a zeroed dW series
    // against the same price path must reproduce m exactly.
    let dw_gap = if config.variant == Variant::NoAggregateShock {
        let mut bundle = generate_path(config, NoiseMode::GroupLevel, 0)?;
        if let Some(dw) = &frozen_dw {
            bundle.dw = dw.clone();
        }
        let price = simulate_price(&config.price, &bundle.dw, bundle.dt, opts.scheme);
        bundle.dw.iter_mut().for_each(|x| *x = 0.0);
        let silent = solve_meanfield(config, &bundle, &price)?;
        mf.max_abs_gap(&silent)
    } else {
        f64::NAN
    };
    diagnostics.insert("dw_only_via_price_gap".into(), dw_gap);

    Ok(RunResult {
        mf,
        agg,
        diagnostics,
        seed: config.seed,
        config_digest: config.digest(),
        dt: config.dt,
        policies,
    })
}

/// Run a scenario with default options.
pub fn run(config: &ScenarioConfig) -> Result<RunResult> {
    run_with(config, RunOptions::default())
}

impl RunResult {
    /// Aggregates as a CSV table.
    pub fn aggregates_table(&self, config: &ScenarioConfig) -> Result<Table> {
        let schema = aggregates_schema(config);
        let len = self.agg[0].k_mean.len();
        let mut rows = Vec::with_capacity(len);
        for k in 0..len {
            let mut row = vec![k as f64 * self.dt];
            for g in &self.agg {
                row.push(g.k_mean[k]);
                row.push(g.k_se[k]);
                row.push(g.w_mean[k]);
                row.push(g.w_se[k]);
                row.push(g.c_mean[k]);
                row.push(g.c_se[k]);
            }
            rows.push(row);
        }
        Table::new(schema, rows)
    }

    /// SHA-256 over the rendered CSV outputs; equal digests mean
    /// byte-identical files.
    pub fn digest(&self, config: &ScenarioConfig) -> Result<String> {
        let mut h = Sha256::new();
        h.update(meanfield_table(config, &self.mf)?.render().as_bytes());
        h.update(self.aggregates_table(config)?.render().as_bytes());
        h.update(diagnostics_table(&self.diagnostics)?.render().as_bytes());
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Write meanfield.csv, aggregates.csv, diagnostics.csv, the run manifest
    /// and (for relaxed runs) policies.csv into `dir`.
    pub fn write_outputs(&self, config: &ScenarioConfig, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();

        let mf_path = dir.join("meanfield.csv");
        write_csv(&meanfield_table(config, &self.mf)?, &mf_path)?;
        written.push(mf_path);

        let agg_path = dir.join("aggregates.csv");
        write_csv(&self.aggregates_table(config)?, &agg_path)?;
        written.push(agg_path);

        let diag_path = dir.join("diagnostics.csv");
        write_csv(&diagnostics_table(&self.diagnostics)?, &diag_path)?;
        written.push(diag_path);

        if let Some(policies) = &self.policies {
            let steps = config.grid()?.steps;
            let nodes = [0, steps / 2, steps];
            let pol_path = dir.join("policies.csv");
            write_csv(&policies_table(config, policies, &nodes)?, &pol_path)?;
            written.push(pol_path);
        }

        let manifest = format!(
            "# macromfg run manifest\nvariant = {}\nseed = {}\nn_paths = {}\ndt = {}\nsteps = {}\n\
             config_sha256 = {}\nresult_sha256 = {}\ncrate_version = {}\n\
             schemas = meanfield:1,aggregates:1,diagnostics:1,policies:1\n",
            config.variant,
            self.seed,
            config.n_paths,
            self.dt,
            config.grid()?.steps,
            self.config_digest,
            self.digest(config)?,
            env!("CARGO_PKG_VERSION"),
        );
        let man_path = dir.join("run_manifest.txt");
        std::fs::write(&man_path, manifest)?;
        written.push(man_path);
        Ok(written)
    }
}

/// Mean (over paths) of the max-abs gap between the closed-form mean field
/// and its EM oracle, at each dt = `config.dt · factor`. The same fine-grid
/// Brownian paths drive every level (nested coarsening).
pub fn dt_equivalence_gaps(
    config: &ScenarioConfig,
    factors: &[usize],
    n_paths: usize,
) -> Result<Vec<(f64, f64)>> {
    let per_path: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let fine = generate_path(config, NoiseMode::GroupLevel, p)?;
            factors
                .iter()
                .map(|&f| {
                    let b = fine.coarsen(f)?;
                    let price =
                        simulate_price(&config.price, &b.dw, b.dt, PriceScheme::ExactLognormal);
                    let mut cfg = config.clone();
                    cfg.dt = b.dt;
                    let mf = solve_meanfield(&cfg, &b, &price)?;
                    let em = em_oracle(&cfg, &b, &price)?;
                    Ok(mf.max_abs_gap(&em))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(factors
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let mean = per_path.iter().map(|g| g[i]).sum::<f64>() / n_paths as f64;
            (config.dt * f as f64, mean)
        })
        .collect())
}

/// Split a total agent count across groups proportionally to α.
fn split_agents(config: &ScenarioConfig, total: usize) -> Vec<usize> {
    config
        .groups
        .iter()
        .map(|g| ((g.alpha * total as f64).round() as usize).max(1))
        .collect()
}

/// RMS gap between finite-player group means and the W-conditional mean
/// field, for each total player count in `totals`. All sizes reuse the same
/// underlying agent noise (the leading series), so the N-scaling is measured
/// on coupled experiments.
pub fn chaos_gaps(
    config: &ScenarioConfig,
    totals: &[usize],
    ensemble: usize,
) -> Result<Vec<(f64, f64)>> {
    let max_total = *totals.iter().max().unwrap();
    let mut cap_cfg = config.clone();
    cap_cfg.n_agents = split_agents(config, max_total);

    let per_path: Vec<Vec<(f64, usize)>> = (0..ensemble as u64)
        .into_par_iter()
        .map(|p| -> Result<Vec<(f64, usize)>> {
            let agent_bundle = generate_path(&cap_cfg, NoiseMode::AgentLevel, p)?;
            let group_bundle = generate_path(&cap_cfg, NoiseMode::GroupLevel, p)?;
            debug_assert_eq!(agent_bundle.dw, group_bundle.dw);
            let price = simulate_price(
                &cap_cfg.price,
                &agent_bundle.dw,
                agent_bundle.dt,
                PriceScheme::ExactLognormal,
            );
            let mf = solve_meanfield(&cap_cfg, &group_bundle, &price)?;
            totals
                .iter()
                .map(|&total| {
                    let mut sub = cap_cfg.clone();
                    sub.n_agents = split_agents(config, total);
                    let paths = simulate_finite_players(&sub, &agent_bundle, &price)?;
                    let means = paths.group_means(&paths.k, config.n_groups());
                    let mut sq = 0.0;
                    let mut count = 0usize;
                    for (node, row) in means.iter().enumerate() {
                        for (g, &kbar) in row.iter().enumerate() {
                            let d = kbar - mf.m_cond[node][g];
                            sq += d * d;
                            count += 1;
                        }
                    }
                    Ok((sq, count))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(totals
        .iter()
        .enumerate()
        .map(|(i, &total)| {
            let (sq, count) = per_path
                .iter()
                .fold((0.0, 0usize), |(s, c), row| (s + row[i].0, c + row[i].1));
            (total as f64, (sq / count as f64).sqrt())
        })
        .collect())
}

/// Convergence study: dt-refinement gaps with fitted slope (closed form vs
/// EM oracle) and player-count gaps with fitted slope (propagation of chaos).
#[derive(Debug, Clone)]
pub struct StudyTable {
    pub dt_rows: Vec<(f64, f64)>,
    pub dt_slope: f64,
    pub n_rows: Vec<(f64, f64)>,
    pub n_slope: f64,
}

pub fn convergence_study(
    config: &ScenarioConfig,
    dts: &[f64],
    totals: &[usize],
    n_paths: usize,
    ensemble: usize,
) -> Result<StudyTable> {
    let finest = dts.iter().copied().fold(f64::INFINITY, f64::min);
    let factors: Vec<usize> = dts
        .iter()
        .map(|&dt| {
            let f = dt / finest;
            if (f - f.round()).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "dt list must be integer multiples of the finest entry (got {dt} vs {finest})"
                )));
            }
            Ok(f.round() as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = config.clone();
    cfg.dt = finest;
    let dt_rows = dt_equivalence_gaps(&cfg, &factors, n_paths)?;
    let dt_slope = loglog_slope(&dt_rows);
    let n_rows = chaos_gaps(config, totals, ensemble)?;
    let n_slope = loglog_slope(&n_rows);
    Ok(StudyTable { dt_rows, dt_slope, n_rows, n_slope })
}

impl StudyTable {
    /// Two tables: (dt, gap) and (n_agents, rms_gap), each with the fitted
    /// slope repeated per row for self-containment.
    pub fn tables(&self) -> Result<(Table, Table)> {
        let dt_schema = crate::io::CsvSchema::new(
            "study_dt",
            1,
            vec!["dt".into(), "gap".into(), "slope".into()],
            vec!["years".into(), "capital".into(), "loglog".into()],
        );
        let dt_rows = self
            .dt_rows
            .iter()
            .map(|&(dt, gap)| vec![dt, gap, self.dt_slope])
            .collect();
        let n_schema = crate::io::CsvSchema::new(
            "study_n",
            1,
            vec!["n_agents".into(), "rms_gap".into(), "slope".into()],
            vec!["count".into(), "capital".into(), "loglog".into()],
        );
        let n_rows = self
            .n_rows
            .iter()
            .map(|&(n, gap)| vec![n, gap, self.n_slope])
            .collect();
        Ok((Table::new(dt_schema, dt_rows)?, Table::new(n_schema, n_rows)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::two_group_default(Variant::NoAggregateShock);
        cfg.horizon = 2.0;
        cfg.n_paths = 8;
        cfg.n_agents = vec![4, 4];
        cfg
    }

    #[test]
    fn run_produces_all_named_diagnostics() {
        let result = run(&small_config()).unwrap();
        for key in [
            "closed_vs_em_gap_mean",
            "closed_vs_em_gap_max",
            "fundamental_residual_max",
            "price_clamp_events",
            "negative_capital_steps",
            "dw_only_via_price_gap",
            "n_paths",
            "steps",
        ] {
            assert!(result.diagnostics.contains_key(key), "missing {key}");
        }
        assert_eq!(result.diagnostics["n_paths"], 8.0);
    }

    #[test]
    fn no_aggregate_shock_common_noise_enters_only_via_price() {
        let result = run(&small_config()).unwrap();
        assert_eq!(result.diagnostics["dw_only_via_price_gap"], 0.0);
    }

    #[test]
    fn identical_seeds_produce_identical_digests() {
        let cfg = small_config();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.digest(&cfg).unwrap(), b.digest(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 43;
        let c = run(&other).unwrap();
        assert_ne!(a.digest(&cfg).unwrap(), c.digest(&other).unwrap());
    }

    #[test]
    fn frozen_w_shares_the_common_series_across_paths() {
        let mut cfg = small_config();
        cfg.n_paths = 4;
        let frozen = run_with(&cfg, RunOptions { frozen_w: true, ..Default::default() }).unwrap();
        let free = run(&cfg).unwrap();
        // Path 0 is identical either way; the ensembles differ.
        assert_eq!(frozen.mf.m, free.mf.m);
        let gap: f64 = frozen.agg[0]
            .k_mean
            .iter()
            .zip(&free.agg[0].k_mean)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap > 0.0);
    }

    #[test]
    fn invalid_config_is_refused() {
        let mut cfg = small_config();
        cfg.groups[0].alpha = 0.9;
        assert!(matches!(run(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn bounded_rationality_run_carries_policies() {
        let mut cfg = ScenarioConfig::two_group_default(Variant::BoundedRationality);
        cfg.horizon = 1.0;
        cfg.n_paths = 2;
        cfg.c_grid = Some(crate::config::GridSpec { min: 0.5, max: 3.0, points: 64 });
        let result = run(&cfg).unwrap();
        assert!(result.policies.is_some());
        let dir = std::env::temp_dir().join("macromfg_engine_br");
        let files = result.write_outputs(&cfg, &dir).unwrap();
        assert!(files.iter().any(|p| p.ends_with("policies.csv")));
    }

    #[test]
    fn noiseless_config_leaves_only_integrator_error() {
        let mut cfg = small_config();
        cfg.horizon = 2.0;
        cfg.dt = 1.0 / 208.0;
        cfg.price.sigma_q = 0.0;
        cfg.price.mu_q = 0.0;
        for g in &mut cfg.groups {
            g.sigma_idio = 0.0;
        }
        let gaps = dt_equivalence_gaps(&cfg, &[4, 2, 1], 2).unwrap();
        // Pure Euler-vs-RK4 drift error: small and shrinking with dt.
        for (dt, gap) in &gaps {
            assert!(*gap < 0.5 * dt, "gap {gap} at dt {dt} beyond integrator scale");
        }
        assert!(gaps[0].1 > gaps[2].1);
    }

    #[test]
    fn standard_errors_scale_like_sample_std() {
        let series = vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![5.0, 2.0]];
        let (mean, se) = mean_se(&series);
        assert!((mean[0] - 3.0).abs() < 1e-15);
        // sample std 2.0 over sqrt(3)
        assert!((se[0] - 2.0 / 3.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(se[1], 0.0);
        let (_, single) = mean_se(&[vec![4.0]]);
        assert_eq!(single[0], 0.0);
    }

    #[test]
    fn study_slopes_have_the_expected_signs() {
        let mut cfg = small_config();
        cfg.horizon = 1.0;
        let dts = [cfg.dt, cfg.dt / 2.0];
        let study = convergence_study(&cfg, &dts, &[16, 64], 6, 4).unwrap();
        assert!(study.dt_slope > 0.0, "dt slope {}", study.dt_slope);
        assert!(study.n_slope < 0.0, "n slope {}", study.n_slope);
        let (t1, t2) = study.tables().unwrap();
        assert_eq!(t1.rows.len(), 2);
        assert_eq!(t2.rows.len(), 2);
    }
}

