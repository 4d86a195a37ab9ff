//! Correlated Brownian increments, reproducible from a seed.
//!
//! One common series W drives the capital price and (in the aggregate-shock
//! variants) every capital process. Idiosyncratic series B exist either per
//! group (`GroupLevel`, used by the mean-field solver) or per agent
//! (`AgentLevel`, used by finite-player ensembles). Every increment is
//! sqrt(dt)·z with z standard normal.
//!
//! Correlation targets:
//! - GroupLevel: corr(dBʲ, dW) = p'_j and corr(dBʲ, dBᵒ) = p_{j,o}, achieved
//!   by multiplying i.i.d. normals with the lower-triangular factor of the
//!   full correlation matrix (W ordered first).
//! - AgentLevel: dB for agent i of group j is p'_j·ζ_W + sqrt(1 − p'_j²)·ξ_i
//!   with ξ i.i.d. across all agents, so corr(dB, dW) = p'_j while agents'
//!   own innovations are mutually independent. Cross-group pairs carry only
//!   the W-induced correlation p'_j·p'_o; the group-level p_{j,o} is not
//!   imposed agent-by-agent (the mean-field limit depends on group-level laws
//!   only).
//!
//! Reproducibility: path p draws from stream p of a ChaCha12 generator keyed
//! by the scenario seed. Draws are series-major with the common series first,
//! so the dW series of a (seed, path) pair is bit-identical across modes and
//! across agent capacities — finite-player runs of different sizes can be
//! coupled to the same market realization.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::config::ScenarioConfig;
use crate::linalg::semidefinite_cholesky;
use crate::{Error, Result, TimeGrid};

const DUMP_MAGIC: [u8; 4] = *b"MFNB";
const DUMP_VERSION: u32 = 1;

/// Whether idiosyncratic series exist per group or per agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    GroupLevel,
    AgentLevel,
}

/// Pre-generated increments for one Monte-Carlo path.
#[derive(Debug, Clone)]
pub struct NoiseBundle {
    pub mode: NoiseMode,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub path_index: u64,
    /// Common-noise increments, one per step.
    pub dw: Vec<f64>,
    /// Idiosyncratic increments, one series per group (GroupLevel) or per
    /// agent (AgentLevel), each with one entry per step.
    pub db: Vec<Vec<f64>>,
    /// Group index of each `db` series.
    pub group_of: Vec<usize>,
    /// AgentLevel capacity per group (series are contiguous per group).
    pub agents_per_group: Vec<usize>,
}

impl NoiseBundle {
    /// Index range of the `db` series belonging to group `j` (AgentLevel).
    pub fn agent_series_range(&self, group: usize) -> std::ops::Range<usize> {
        let start: usize = self.agents_per_group[..group].iter().sum();
        start..start + self.agents_per_group[group]
    }

    /// Negate every increment; the correlation structure is preserved.
    pub fn antithetic(&self) -> Self {
        let mut out = self.clone();
        for x in &mut out.dw {
            *x = -*x;
        }
        for series in &mut out.db {
            for x in series {
                *x = -*x;
            }
        }
        out
    }

    /// Aggregate `factor` consecutive increments into one (nested coarsening
    /// of the same Brownian path). `factor` must divide `steps`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::GridMismatch(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.steps
            )));
        }
        let sum_chunks = |xs: &[f64]| -> Vec<f64> {
            xs.chunks(factor).map(|c| c.iter().sum()).collect()
        };
        Ok(Self {
            mode: self.mode,
            dt: self.dt * factor as f64,
            steps: self.steps / factor,
            seed: self.seed,
            path_index: self.path_index,
            dw: sum_chunks(&self.dw),
            db: self.db.iter().map(|s| sum_chunks(s)).collect(),
            group_of: self.group_of.clone(),
            agents_per_group: self.agents_per_group.clone(),
        })
    }

    /// Write all increments as little-endian f64, series-major (dW first),
    /// behind the header {magic "MFNB", version u32, steps u64, n_series u64}.
    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&DUMP_MAGIC)?;
        f.write_all(&DUMP_VERSION.to_le_bytes())?;
        f.write_all(&(self.steps as u64).to_le_bytes())?;
        f.write_all(&((1 + self.db.len()) as u64).to_le_bytes())?;
        for x in &self.dw {
            f.write_all(&x.to_le_bytes())?;
        }
        for series in &self.db {
            for x in series {
                f.write_all(&x.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    /// Read back a dump: returns (steps, series) with the common series first.
    pub fn load_increments(path: impl AsRef<Path>) -> Result<(usize, Vec<Vec<f64>>)> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if magic != DUMP_MAGIC {
            return Err(Error::Schema("noise dump: bad magic".into()));
        }
        let mut u32buf = [0u8; 4];
        f.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != DUMP_VERSION {
            return Err(Error::Schema(format!(
                "noise dump: unsupported version {version}"
            )));
        }
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u64buf)?;
        let steps = u64::from_le_bytes(u64buf) as usize;
        f.read_exact(&mut u64buf)?;
        let n_series = u64::from_le_bytes(u64buf) as usize;
        let mut series = Vec::with_capacity(n_series);
        let mut fbuf = [0u8; 8];
        for _ in 0..n_series {
            let mut s = Vec::with_capacity(steps);
            for _ in 0..steps {
                f.read_exact(&mut fbuf)?;
                s.push(f64::from_le_bytes(fbuf));
            }
            series.push(s);
        }
        Ok((steps, series))
    }
}

/// RNG for one (seed, path) pair: stream `path` of a ChaCha12 keyed by `seed`.
fn path_rng(seed: u64, path_index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

fn draw_series(rng: &mut ChaCha12Rng, steps: usize) -> Vec<f64> {
    (0..steps).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Generate the increments for one path.
pub fn generate_path(
    config: &ScenarioConfig,
    mode: NoiseMode,
    path_index: u64,
) -> Result<NoiseBundle> {
    let grid: TimeGrid = config.grid()?;
    let steps = grid.steps;
    let sqrt_dt = grid.dt.sqrt();
    let n = config.n_groups();
    let mut rng = path_rng(config.seed, path_index);

    match mode {
        NoiseMode::GroupLevel => {
            let corr = config.full_correlation_matrix();
            let l = semidefinite_cholesky(&corr)?;
            // Raw i.i.d. series, common first.
            let raw: Vec<Vec<f64>> = (0..=n).map(|_| draw_series(&mut rng, steps)).collect();
            let mut dw = vec![0.0; steps];
            let mut db = vec![vec![0.0; steps]; n];
            for t in 0..steps {
                for i in 0..=n {
                    let mut z = 0.0;
                    for k in 0..=i {
                        z += l[(i, k)] * raw[k][t];
                    }
                    if i == 0 {
                        dw[t] = sqrt_dt * z;
                    } else {
                        db[i - 1][t] = sqrt_dt * z;
                    }
                }
            }
            Ok(NoiseBundle {
                mode,
                dt: grid.dt,
                steps,
                seed: config.seed,
                path_index,
                dw,
                db,
                group_of: (0..n).collect(),
                agents_per_group: vec![1; n],
            })
        }
        NoiseMode::AgentLevel => {
            let zw = draw_series(&mut rng, steps);
            let dw: Vec<f64> = zw.iter().map(|z| sqrt_dt * z).collect();
            let mut db = Vec::new();
            let mut group_of = Vec::new();
            for (j, g) in config.groups.iter().enumerate() {
                let p = g.corr_with_market;
                let q = (1.0 - p * p).max(0.0).sqrt();
                for _ in 0..config.n_agents[j] {
                    let xi = draw_series(&mut rng, steps);
                    let series: Vec<f64> = (0..steps)
                        .map(|t| sqrt_dt * (p * zw[t] + q * xi[t]))
                        .collect();
                    db.push(series);
                    group_of.push(j);
                }
            }
            Ok(NoiseBundle {
                mode,
                dt: grid.dt,
                steps,
                seed: config.seed,
                path_index,
                dw,
                db,
                group_of,
                agents_per_group: config.n_agents.clone(),
            })
        }
    }
}

/// Generate bundles for paths 0..n_paths. Deterministic given
/// (seed, mode, n_paths, grid).
pub fn generate(
    config: &ScenarioConfig,
    mode: NoiseMode,
    n_paths: usize,
) -> Result<Vec<NoiseBundle>> {
    (0..n_paths as u64)
        .map(|p| generate_path(config, mode, p))
        .collect()
}

/// Sample correlation of two equally long series.
pub fn sample_corr(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        cxy += (a - mx) * (b - my);
        cxx += (a - mx) * (a - mx);
        cyy += (b - my) * (b - my);
    }
    cxy / (cxx * cyy).sqrt()
}
