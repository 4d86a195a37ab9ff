//! Dump the path-0 increments of a builtin scenario to a binary file
//! (little-endian f64 series behind the MFNB header), so external tools can
//! replay the exact noise a seeded run consumed.
//!
//! Usage: cargo run --example dump_path_noise -- [variant] [out.bin]

use macromfg::config::{ScenarioConfig, Variant};
use macromfg::noise::{generate_path, NoiseMode};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant: Variant = args
        .get(1)
        .map(|s| s.parse().expect("variant name"))
        .unwrap_or(Variant::NoAggregateShock);
    let out = args.get(2).map(String::as_str).unwrap_or("noise.bin");
    let cfg = ScenarioConfig::builtin(variant);
    let bundle = generate_path(&cfg, NoiseMode::GroupLevel, 0).expect("noise generation");
    bundle.dump(out).expect("write dump");
    println!(
        "wrote {out}: seed {} path 0, {} steps, dt {}, {} series (dW first)",
        cfg.seed,
        bundle.steps,
        bundle.dt,
        1 + bundle.db.len()
    );
}
