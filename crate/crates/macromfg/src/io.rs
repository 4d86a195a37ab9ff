//! CSV serialization with versioned schemas.
//!
//! Every file carries a single `#`-prefixed metadata line
//! (`# schema=<name> version=<v> units=<u1,u2,...>`), then a plain header row
//! of column labels, then numeric rows. Floats are written with Rust's
//! shortest round-trip formatting, so read-back is exact and locale
//! independent. A schema change bumps the version in the header line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::ScenarioConfig;
use crate::meanfield::MeanFieldPath;
use crate::relaxed::GroupPolicies;
use crate::{Error, Result};

/// Column layout of one CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub name: String,
    pub version: u32,
    pub columns: Vec<String>,
    pub units: Vec<String>,
}

impl CsvSchema {
    pub fn new(
        name: &str,
        version: u32,
        columns: Vec<String>,
        units: Vec<String>,
    ) -> Self {
        assert_eq!(columns.len(), units.len(), "one unit per column");
        Self { name: name.to_string(), version, columns, units }
    }

    fn header_lines(&self) -> String {
        format!(
            "# schema={} version={} units={}\n{}\n",
            self.name,
            self.version,
            self.units.join(","),
            self.columns.join(",")
        )
    }
}

/// A numeric table bound to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: CsvSchema,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(schema: CsvSchema, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.columns.len() {
                return Err(Error::Schema(format!(
                    "{}: row {} has {} fields, schema {} wants {}",
                    schema.name,
                    i + 1,
                    row.len(),
                    schema.name,
                    schema.columns.len()
                )));
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn render(&self) -> String {
        let mut out = self.schema.header_lines();
        for row in &self.rows {
            let mut first = true;
            for x in row {
                if !first {
                    out.push(',');
                }
                write!(out, "{x}").unwrap();
                first = false;
            }
            out.push('\n');
        }
        out
    }
}

/// Write a table to disk.
pub fn write_csv(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, table.render())?;
    Ok(())
}

/// Read a table back, checking schema name, version and per-row arity.
pub fn read_csv(path: impl AsRef<Path>, expected: &CsvSchema) -> Result<Table> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, expected).map_err(|e| match e {
        Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parse CSV text against an expected schema.
pub fn parse_csv(text: &str, expected: &CsvSchema) -> Result<Table> {
    let mut lines = text.lines();
    let meta = lines
        .next()
        .ok_or_else(|| Error::Schema("empty file".into()))?;
    if !meta.starts_with('#') {
        return Err(Error::Schema("missing # metadata line".into()));
    }
    let mut name = None;
    let mut version = None;
    for token in meta.trim_start_matches('#').split_whitespace() {
        if let Some(v) = token.strip_prefix("schema=") {
            name = Some(v.to_string());
        } else if let Some(v) = token.strip_prefix("version=") {
            version = v.parse::<u32>().ok();
        }
    }
    match (name, version) {
        (Some(n), Some(v)) if n == expected.name && v == expected.version => {}
        (n, v) => {
            return Err(Error::Schema(format!(
                "schema mismatch: file has {n:?} v{v:?}, expected {} v{}",
                expected.name, expected.version
            )))
        }
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("missing header row".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() != expected.columns.len() {
        return Err(Error::Schema(format!(
            "header has {} columns, schema wants {}",
            cols.len(),
            expected.columns.len()
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected.columns.len() {
            return Err(Error::Schema(format!(
                "row {} has {} fields, schema wants {}",
                i + 1,
                fields.len(),
                expected.columns.len()
            )));
        }
        let mut row = Vec::with_capacity(fields.len());
        for (j, f) in fields.iter().enumerate() {
            row.push(f.parse::<f64>().map_err(|_| {
                Error::Schema(format!("row {} field {} is not a number: {f:?}", i + 1, j + 1))
            })?);
        }
        rows.push(row);
    }
    Table::new(expected.clone(), rows)
}

/// Schema of the mean-field path export:
/// t, m_1..m_n, M_global, M_rel_1..M_rel_n.
pub fn meanfield_schema(config: &ScenarioConfig) -> CsvSchema {
    let mut columns = vec!["t".to_string()];
    let mut units = vec!["years".to_string()];
    for g in &config.groups {
        columns.push(format!("m_{}", g.label));
        units.push("capital".to_string());
    }
    columns.push("M_global".to_string());
    units.push("capital".to_string());
    for g in &config.groups {
        columns.push(format!("M_rel_{}", g.label));
        units.push("capital".to_string());
    }
    CsvSchema::new("meanfield", 1, columns, units)
}

/// Mean-field path as a table row per grid node.
pub fn meanfield_table(config: &ScenarioConfig, mf: &MeanFieldPath) -> Result<Table> {
    let schema = meanfield_schema(config);
    let n = config.n_groups();
    let mut rows = Vec::with_capacity(mf.m.len());
    for k in 0..mf.m.len() {
        let mut row = Vec::with_capacity(2 * n + 2);
        row.push(k as f64 * mf.dt);
        row.extend_from_slice(&mf.m[k]);
        row.push(mf.m_global[k]);
        row.extend_from_slice(&mf.m_rel[k]);
        rows.push(row);
    }
    Table::new(schema, rows)
}

/// Schema of ensemble aggregates: per group mean and standard error of
/// capital, wealth and consumption at every node.
pub fn aggregates_schema(config: &ScenarioConfig) -> CsvSchema {
    let mut columns = vec!["t".to_string()];
    let mut units = vec!["years".to_string()];
    for g in &config.groups {
        for (field, unit) in [("k", "capital"), ("w", "wealth"), ("c", "consumption")] {
            columns.push(format!("{field}_mean_{}", g.label));
            units.push(unit.to_string());
            columns.push(format!("{field}_se_{}", g.label));
            units.push(unit.to_string());
        }
    }
    CsvSchema::new("aggregates", 1, columns, units)
}

/// Diagnostics as a single-row table with one column per named check.
pub fn diagnostics_table(diagnostics: &BTreeMap<String, f64>) -> Result<Table> {
    let columns: Vec<String> = diagnostics.keys().cloned().collect();
    let units = vec!["value".to_string(); columns.len()];
    let row: Vec<f64> = diagnostics.values().copied().collect();
    Table::new(CsvSchema::new("diagnostics", 1, columns, units), vec![row])
}

/// Per-agent trajectory dump: t, then (k, w, c) for every agent, labeled by
/// agent index and group.
pub fn agents_table(paths: &crate::agents::AgentPaths) -> Result<Table> {
    let mut columns = vec!["t".to_string()];
    let mut units = vec!["years".to_string()];
    for (a, &g) in paths.group_of.iter().enumerate() {
        for (field, unit) in [("k", "capital"), ("w", "wealth"), ("c", "consumption")] {
            columns.push(format!("{field}_a{a}_g{g}"));
            units.push(unit.to_string());
        }
    }
    let schema = CsvSchema::new("agents", 1, columns, units);
    let steps = paths.steps();
    let mut rows = Vec::with_capacity(steps + 1);
    for node in 0..=steps {
        let mut row = Vec::with_capacity(1 + 3 * paths.n_agents());
        row.push(node as f64 * paths.dt);
        for a in 0..paths.n_agents() {
            row.push(paths.k[a][node]);
            row.push(paths.w[a][node]);
            row.push(paths.c[a][node]);
        }
        rows.push(row);
    }
    Table::new(schema, rows)
}

/// Policy densities at a few sampled times: rows (group, t, action, density).
pub fn policies_table(
    config: &ScenarioConfig,
    policies: &[GroupPolicies],
    sample_nodes: &[usize],
) -> Result<Table> {
    let schema = CsvSchema::new(
        "policies",
        1,
        vec!["group".into(), "t".into(), "action".into(), "density".into()],
        vec!["index".into(), "years".into(), "action".into(), "density".into()],
    );
    let dt = config.dt;
    let mut rows = Vec::new();
    for (g, pol) in policies.iter().enumerate() {
        for &node in sample_nodes {
            let saving = &pol.saving[node.min(pol.saving.len() - 1)];
            for i in 0..saving.len() {
                rows.push(vec![g as f64, node as f64 * dt, saving.grid[i], saving.density(i)]);
            }
        }
        for i in 0..pol.risk.len() {
            rows.push(vec![g as f64, -1.0, pol.risk.grid[i], pol.risk.density(i)]);
        }
    }
    Table::new(schema, rows)
}
