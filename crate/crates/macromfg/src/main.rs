//! Command-line front end: validate scenarios, run seeded simulations,
//! and run convergence studies.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical abort.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use macromfg::config::{ScenarioConfig, Variant};
use macromfg::engine;
use macromfg::io::write_csv;
use macromfg::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "macromfg",
    version,
    about = "Mean-field equilibrium solver and finite-player simulator for a \
             heterogeneous macro-finance economy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario file (TOML). Without it, a builtin scenario for --variant.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Variant name: NoAggregateShock, AggregateShock, GeneralNGroup,
    /// BoundedRationality. Selects the builtin scenario or overrides the file.
    #[arg(long)]
    variant: Option<String>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the Monte-Carlo ensemble size.
    #[arg(long)]
    paths: Option<usize>,
    /// Override the step width (years).
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario against every model invariant and print the report.
    Validate(ScenarioArgs),
    /// Simulate the scenario and write meanfield.csv, aggregates.csv,
    /// diagnostics.csv and a run manifest.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also simulate the finite-player ensemble on path 0 and dump every
        /// agent trajectory to agents.csv.
        #[arg(long)]
        dump_agents: bool,
    },
    /// Convergence study: closed-form-vs-oracle gaps over dt refinements and
    /// finite-player-vs-mean-field gaps over player counts, with fitted slopes.
    Study {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Ensemble size for the player-count study.
        #[arg(long, default_value_t = 16)]
        ensemble: usize,
    },
}

fn resolve_scenario(args: &ScenarioArgs, validated: bool) -> Result<ScenarioConfig, Error> {
    let mut cfg = match (&args.config, &args.variant) {
        (Some(path), _) => {
            if validated {
                ScenarioConfig::load(path)?
            } else {
                ScenarioConfig::load_unchecked(path)?
            }
        }
        (None, Some(v)) => ScenarioConfig::builtin(Variant::from_str(v)?),
        (None, None) => ScenarioConfig::builtin(Variant::NoAggregateShock),
    };
    if args.config.is_some() {
        if let Some(v) = &args.variant {
            cfg.variant = Variant::from_str(v)?;
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.n_paths = paths;
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    Ok(cfg)
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

fn cmd_validate(args: &ScenarioArgs) -> Result<u8, Error> {
    let cfg = resolve_scenario(args, false)?;
    let report = cfg.validate();
    print!("{report}");
    Ok(if report.is_valid() { 0 } else { EXIT_VALIDATION })
}

fn cmd_run(args: &ScenarioArgs, out: &PathBuf, dump_agents: bool) -> Result<u8, Error> {
    let cfg = resolve_scenario(args, true)?;
    let result = engine::run(&cfg)?;
    let mut files = result.write_outputs(&cfg, out)?;
    if dump_agents {
        use macromfg::noise::{generate_path, NoiseMode};
        use macromfg::price::{simulate_price, PriceScheme};
        let bundle = generate_path(&cfg, NoiseMode::AgentLevel, 0)?;
        let price =
            simulate_price(&cfg.price, &bundle.dw, bundle.dt, PriceScheme::ExactLognormal);
        let players = macromfg::agents::simulate_finite_players(&cfg, &bundle, &price)?;
        let path = out.join("agents.csv");
        write_csv(&macromfg::io::agents_table(&players)?, &path)?;
        files.push(path);
    }
    println!(
        "run complete: variant={} seed={} paths={} steps={}",
        cfg.variant,
        cfg.seed,
        cfg.n_paths,
        cfg.grid()?.steps
    );
    println!("closed-form vs oracle max gap: {:.3e}", result.diagnostics["closed_vs_em_gap_max"]);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(0)
}

fn cmd_study(args: &ScenarioArgs, out: &PathBuf, ensemble: usize) -> Result<u8, Error> {
    // --paths caps the dt-study ensemble here (n_paths stays scenario-owned).
    let paths = args.paths.unwrap_or(64);
    let mut pathless = args.clone();
    pathless.paths = None;
    let cfg = resolve_scenario(&pathless, true)?;
    let dts = [cfg.dt, cfg.dt / 2.0, cfg.dt / 4.0];
    let totals = [64usize, 256, 1024];
    let study = engine::convergence_study(&cfg, &dts, &totals, paths, ensemble)?;
    std::fs::create_dir_all(out)?;
    let (dt_table, n_table) = study.tables()?;
    write_csv(&dt_table, out.join("study_dt.csv"))?;
    write_csv(&n_table, out.join("study_n.csv"))?;
    println!("dt study (closed form vs EM oracle):");
    for (dt, gap) in &study.dt_rows {
        println!("  dt = {dt:.6}  mean max-abs gap = {gap:.6e}");
    }
    println!("  fitted log-log slope: {:.3}", study.dt_slope);
    println!("player-count study (finite players vs mean field):");
    for (n, gap) in &study.n_rows {
        println!("  N = {n:>6}  rms gap = {gap:.6e}");
    }
    println!("  fitted log-log slope: {:.3}", study.n_slope);
    println!("wrote {}", out.join("study_dt.csv").display());
    println!("wrote {}", out.join("study_n.csv").display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Validate(args) => cmd_validate(args),
        Command::Run { scenario, out, dump_agents } => cmd_run(scenario, out, *dump_agents),
        Command::Study { scenario, out, ensemble } => cmd_study(scenario, out, *ensemble),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
