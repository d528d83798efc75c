//! `gwsand`: runs the sandpile, forest and conductance experiments and writes
//! plot-ready CSV/JSON next to a manifest that reproduces them.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gwsand_core::OffspringDistribution;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "gwsand", version, about = "Sandpiles and wired spanning forests on Galton-Watson trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Avalanche tail campaign with exponent fits.
    #[command(args_override_self = true)]
    Tail(TailArgs),
    /// Per-wave sizes of individual avalanches.
    #[command(args_override_self = true)]
    Waves(WavesArgs),
    /// Forest component tail and conductance martingale traces.
    #[command(args_override_self = true)]
    Wsf(WsfArgs),
    /// Certified interval for the conductance to infinity of one vertex.
    #[command(args_override_self = true)]
    Conductance(ConductanceArgs),
    /// Invariant suites.
    #[command(args_override_self = true)]
    Verify(VerifyArgs),
    /// Dumps a ball of a sampled tree.
    #[command(args_override_self = true)]
    GenTree(GenTreeArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// JSON object of flag values; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Quenched,
    Annealed,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum CoinArg {
    /// Solver coins when every backbone vertex branches, walks otherwise.
    Auto,
    Walk,
    Solver,
}

fn parse_dist(s: &str) -> Result<OffspringDistribution, String> {
    s.parse().map_err(|e: gwsand_core::Error| e.to_string())
}

fn parse_window(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once(',').ok_or("expected t_min,t_max")?;
    let a: u64 = a.trim().parse().map_err(|_| format!("bad t_min {a:?}"))?;
    let b: u64 = b.trim().parse().map_err(|_| format!("bad t_max {b:?}"))?;
    if a == 0 || a >= b {
        return Err("need 0 < t_min < t_max".into());
    }
    Ok((a, b))
}

fn suite_names() -> clap::builder::PossibleValuesParser {
    let mut names = vec!["all"];
    names.extend(gwsand_core::verify::SUITES);
    clap::builder::PossibleValuesParser::new(names)
}

fn ser_dist<S: serde::Serializer>(d: &OffspringDistribution, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(d)
}

#[derive(Args, Debug, Clone, Serialize)]
struct TailArgs {
    #[arg(long, value_parser = parse_dist)]
    #[serde(serialize_with = "ser_dist")]
    dist: OffspringDistribution,
    #[arg(long, value_enum, default_value_t = ModeArg::Annealed)]
    mode: ModeArg,
    #[arg(long, default_value_t = 10_000)]
    samples: u64,
    /// Tree seed for quenched runs.
    #[arg(long, default_value_t = 0)]
    tree_seed: u64,
    /// Initial truncation depth.
    #[arg(long, default_value_t = 32)]
    depth: u32,
    #[arg(long, default_value_t = 6)]
    max_doublings: u32,
    /// First waves reaching this many vertices stop growing and are censored.
    #[arg(long, default_value_t = 20_000)]
    cluster_cap: usize,
    #[arg(long, value_parser = parse_window, default_value = "100,10000")]
    fit_window: (u64, u64),
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    /// Also write one CSV row per sample.
    #[arg(long)]
    records: bool,
    /// How child coins are drawn.
    #[arg(long, value_enum, default_value_t = CoinArg::Auto)]
    coins: CoinArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
struct WavesArgs {
    #[arg(long, value_parser = parse_dist)]
    #[serde(serialize_with = "ser_dist")]
    dist: OffspringDistribution,
    #[arg(long, value_enum, default_value_t = ModeArg::Quenched)]
    mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    tree_seed: u64,
    #[arg(long, default_value_t = 32)]
    depth: u32,
    #[arg(long, default_value_t = 6)]
    max_doublings: u32,
    #[arg(long, default_value_t = 20_000)]
    cluster_cap: usize,
    /// How child coins are drawn.
    #[arg(long, value_enum, default_value_t = CoinArg::Auto)]
    coins: CoinArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
struct WsfArgs {
    #[arg(long, value_parser = parse_dist, default_value = "explicit:0,0,1")]
    #[serde(serialize_with = "ser_dist")]
    dist: OffspringDistribution,
    #[arg(long, default_value_t = 10_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    tree_seed: u64,
    /// Examined edges after which a component is censored.
    #[arg(long, default_value_t = 10_000_000)]
    step_cap: u64,
    /// Scale `t` for the stopping times.
    #[arg(long)]
    scale: Option<f64>,
    /// Refine conductances used by the martingale to this width.
    #[arg(long)]
    precision: Option<f64>,
    /// Write the martingale trace of the first this many explorations.
    #[arg(long)]
    trace: Option<u64>,
    #[arg(long, value_parser = parse_window, default_value = "100,10000")]
    fit_window: (u64, u64),
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ConductanceArgs {
    #[arg(long, value_parser = parse_dist)]
    #[serde(serialize_with = "ser_dist")]
    dist: OffspringDistribution,
    #[arg(long, default_value_t = 0)]
    tree_seed: u64,
    /// Depth below the vertex used for the certified interval.
    #[arg(long, default_value_t = 30)]
    depth: u32,
    /// Vertex as child indices from the root, e.g. `0.1`; empty for the root.
    #[arg(long, default_value = "")]
    path: String,
    /// Wire the tree at this absolute depth instead of using the infinite tree.
    #[arg(long)]
    ball: Option<u32>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
struct VerifyArgs {
    /// Suite name, or `all`.
    #[arg(long, default_value = "all", value_parser = suite_names())]
    suite: String,
    /// Smaller sample sizes.
    #[arg(long)]
    quick: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
struct GenTreeArgs {
    #[arg(long, value_parser = parse_dist)]
    #[serde(serialize_with = "ser_dist")]
    dist: OffspringDistribution,
    #[arg(long, default_value_t = 0)]
    tree_seed: u64,
    #[arg(long, default_value_t = 6)]
    depth: u32,
    #[command(flatten)]
    common: Common,
}

/// A run that completed but whose result failed validation exits with 1.
pub struct Outcome {
    pub valid: bool,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli.command) {
        Ok(Outcome { valid: true }) => ExitCode::SUCCESS,
        Ok(Outcome { valid: false }) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
