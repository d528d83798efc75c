use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use gwsand_core::estimator::{
    fit_exponent, run_campaign, run_forest_tail, run_forest_tail_quenched, shared_law, CampaignConfig, Counters,
    FitOptions, Mode, TailCurve,
};
use gwsand_core::sandpile::{AvalancheRecord, CoinMethod};
use gwsand_core::verify::{run_suite, VerifyScale, SUITES};
use gwsand_core::wsf::{explore_component, ExploreOptions, TraceRow};
use gwsand_core::{ConductanceSolver, Horizon, OffspringDistribution, TreeArena, ROOT};

use crate::{
    CoinArg, Command, Common, ConductanceArgs, GenTreeArgs, ModeArg, Outcome, TailArgs, VerifyArgs, WavesArgs, WsfArgs,
};

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    threads: usize,
    wall_time_secs: f64,
    config: Value,
    counters: Option<Counters>,
    valid: bool,
    outputs: Vec<String>,
}

struct Output {
    dir: Option<PathBuf>,
    files: Vec<String>,
}

impl Output {
    fn new(common: &Common, default: Option<&str>) -> Result<Self> {
        let dir = common.out.clone().or_else(|| default.map(PathBuf::from));
        if let Some(d) = &dir {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        if let Some(d) = &self.dir {
            let p = d.join(name);
            fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(v)? + "\n"))
    }

    fn manifest(
        &mut self,
        command: &str,
        args: &impl Serialize,
        common: &Common,
        start: Instant,
        counters: Option<Counters>,
        valid: bool,
    ) -> Result<()> {
        let m = RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: common.seed,
            threads: rayon::current_num_threads(),
            wall_time_secs: start.elapsed().as_secs_f64(),
            config: serde_json::to_value(args)?,
            counters,
            valid,
            outputs: self.files.clone(),
        };
        self.json("manifest.json", &m)
    }
}

pub fn run(cmd: Command) -> Result<Outcome> {
    let common = match &cmd {
        Command::Tail(a) => &a.common,
        Command::Waves(a) => &a.common,
        Command::Wsf(a) => &a.common,
        Command::Conductance(a) => &a.common,
        Command::Verify(a) => &a.common,
        Command::GenTree(a) => &a.common,
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cmd {
        Command::Tail(a) => tail(&a),
        Command::Waves(a) => waves(&a),
        Command::Wsf(a) => wsf(&a),
        Command::Conductance(a) => conductance(&a),
        Command::Verify(a) => verify(&a),
        Command::GenTree(a) => gen_tree(&a),
    }
}

fn coin_method(c: CoinArg) -> Option<CoinMethod> {
    match c {
        CoinArg::Auto => None,
        CoinArg::Walk => Some(CoinMethod::Walk),
        CoinArg::Solver => Some(CoinMethod::Solver),
    }
}

fn mode(m: ModeArg, tree_seed: u64) -> Mode {
    match m {
        ModeArg::Quenched => Mode::Quenched { tree_seed },
        ModeArg::Annealed => Mode::Annealed,
    }
}

fn fits(curves: &[&TailCurve], window: (u64, u64), bootstrap: usize, seed: u64) -> Value {
    let opts = FitOptions { t_min: window.0, t_max: window.1, n_bootstrap: bootstrap, seed };
    let list: Vec<Value> = curves
        .iter()
        .map(|c| match fit_exponent(c, &opts) {
            Ok(f) => serde_json::to_value(f).expect("fit serializes"),
            Err(e) => json!({ "quantity": c.quantity, "error": e.to_string() }),
        })
        .collect();
    json!({ "window": [window.0, window.1], "bootstrap": bootstrap, "fits": list })
}

fn tail(a: &TailArgs) -> Result<Outcome> {
    let start = Instant::now();
    let mut out = Output::new(&a.common, Some("gwsand-out"))?;
    let mut cfg = CampaignConfig::new(a.dist.clone(), mode(a.mode, a.tree_seed), a.samples, a.common.seed);
    cfg.depth = a.depth;
    cfg.max_doublings = a.max_doublings;
    cfg.cluster_cap = a.cluster_cap;
    cfg.keep_records = a.records;
    cfg.coin_method = coin_method(a.coins);
    let camp = run_campaign(&cfg)?;
    for c in &camp.curves {
        let name = if c.quantity.name() == "S" { "tail.csv".to_string() } else { format!("tail_{}.csv", c.quantity.name()) };
        out.write(&name, &c.to_csv())?;
    }
    let curves: Vec<&TailCurve> = camp.curves.iter().collect();
    out.json("fit.json", &fits(&curves, a.fit_window, a.bootstrap, a.common.seed))?;
    if a.records {
        out.write("records.csv", &records_csv(&camp.records))?;
    }
    let c = camp.counters;
    println!(
        "{} samples, {} censored ({:.3}%), {} capped, {} unresolved, max depth {}",
        c.samples,
        c.censored,
        100.0 * c.censored as f64 / c.samples.max(1) as f64,
        c.capped,
        c.unresolved,
        c.max_depth_used
    );
    let valid = camp.valid();
    out.manifest("tail", a, &a.common, start, Some(c), valid)?;
    Ok(Outcome { valid })
}

fn records_csv(records: &[AvalancheRecord]) -> String {
    let mut s = String::from(AvalancheRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s += &r.csv_row();
        s.push('\n');
    }
    s
}

fn waves(a: &WavesArgs) -> Result<Outcome> {
    let start = Instant::now();
    let mut out = Output::new(&a.common, None)?;
    let mut cfg = CampaignConfig::new(a.dist.clone(), mode(a.mode, a.tree_seed), a.samples, a.common.seed);
    cfg.depth = a.depth;
    cfg.max_doublings = a.max_doublings;
    cfg.cluster_cap = a.cluster_cap;
    cfg.keep_records = true;
    cfg.coin_method = coin_method(a.coins);
    let camp = run_campaign(&cfg)?;
    let mut csv = String::from("sample_id,wave,size\n");
    for r in &camp.records {
        for (k, s) in r.wave_sizes.iter().enumerate() {
            writeln!(csv, "{},{},{}", r.sample_id, k + 1, s)?;
        }
    }
    if out.dir.is_none() {
        print!("{}", records_csv(&camp.records));
    }
    out.write("waves.csv", &csv)?;
    out.write("records.csv", &records_csv(&camp.records))?;
    let valid = camp.valid();
    out.manifest("waves", a, &a.common, start, Some(camp.counters), valid)?;
    Ok(Outcome { valid })
}

/// `k` when every vertex has exactly `k` children.
fn regular_degree(d: &OffspringDistribution) -> Option<u32> {
    let w = d.weights();
    let nz: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    match nz.as_slice() {
        [k] if *k >= 2 => Some(*k as u32),
        _ => None,
    }
}

fn wsf(a: &WsfArgs) -> Result<Outcome> {
    let start = Instant::now();
    let mut out = Output::new(&a.common, Some("gwsand-out"))?;
    let opts = ExploreOptions {
        step_cap: a.step_cap,
        scale: a.scale,
        precision: a.precision,
        ..ExploreOptions::default()
    };
    let (curve, counters) = match regular_degree(&a.dist) {
        Some(k) if a.precision.is_none() => run_forest_tail(k, a.samples, a.common.seed, &opts),
        _ => run_forest_tail_quenched(&a.dist, a.tree_seed, a.samples, a.common.seed, &opts)?,
    };
    out.write("tail.csv", &curve.to_csv())?;
    out.json("fit.json", &fits(&[&curve], a.fit_window, a.bootstrap, a.common.seed))?;
    if let Some(n) = a.trace {
        let mut arena = TreeArena::new(shared_law(&a.dist)?, a.tree_seed);
        let mut solver = ConductanceSolver::new(Horizon::Infinite);
        let topts = ExploreOptions { trace: true, ..opts.clone() };
        let mut csv = format!("sample,{}\n", TraceRow::CSV_HEADER);
        for i in 0..n.min(a.samples) {
            let seed = gwsand_core::rng::derive_seed(a.common.seed, gwsand_core::rng::Purpose::Forest, i);
            let ex = explore_component(&mut arena, &mut solver, seed, &topts);
            for r in &ex.trace {
                writeln!(csv, "{i},{}", r.csv_row())?;
            }
        }
        out.write("trace.csv", &csv)?;
    }
    println!(
        "{} components, {} censored at the step cap, {} unresolved",
        counters.samples, counters.step_capped, counters.unresolved
    );
    let valid = counters.valid();
    out.manifest("wsf", a, &a.common, start, Some(counters), valid)?;
    Ok(Outcome { valid })
}

fn vertex_at(arena: &mut TreeArena, path: &str) -> Result<u32> {
    let mut v = ROOT;
    for part in path.split('.').filter(|p| !p.is_empty()) {
        let i: u32 = part.parse().with_context(|| format!("bad path component {part:?}"))?;
        arena.ensure_children(v);
        if i >= arena.child_count(v) {
            bail!("vertex {v} has {} children, no child {i}", arena.child_count(v));
        }
        v = arena.child(v, i);
    }
    Ok(v)
}

fn conductance(a: &ConductanceArgs) -> Result<Outcome> {
    let start = Instant::now();
    let mut out = Output::new(&a.common, None)?;
    let mut arena = TreeArena::new(shared_law(&a.dist)?, a.tree_seed);
    let v = vertex_at(&mut arena, &a.path)?;
    let horizon = a.ball.map_or(Horizon::Infinite, Horizon::Ball);
    let mut solver = ConductanceSolver::new(horizon);
    let iv = solver.interval(&mut arena, v, a.depth);
    let report = json!({
        "vertex": v,
        "depth_of_vertex": arena.depth(v),
        "lo": iv.lo,
        "hi": iv.hi,
        "width": iv.width(),
        "depth_used": iv.depth_used,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    out.json("conductance.json", &report)?;
    out.manifest("conductance", a, &a.common, start, None, true)?;
    Ok(Outcome { valid: true })
}

fn verify(a: &VerifyArgs) -> Result<Outcome> {
    let start = Instant::now();
    let mut out = Output::new(&a.common, None)?;
    let names: Vec<&str> = if a.suite == "all" { SUITES.to_vec() } else { vec![a.suite.as_str()] };
    let scale = if a.quick { VerifyScale::quick() } else { VerifyScale::default() };
    let mut reports = Vec::new();
    for n in names {
        let r = run_suite(n, a.common.seed, &scale)?;
        print!("{}", r.summary());
        reports.push(r);
    }
    let valid = reports.iter().all(|r| r.passed);
    println!("{}", if valid { "all suites passed" } else { "some suites FAILED" });
    out.json("verify.json", &reports)?;
    out.manifest("verify", a, &a.common, start, None, valid)?;
    Ok(Outcome { valid })
}

fn gen_tree(a: &GenTreeArgs) -> Result<Outcome> {
    let start = Instant::now();
    let mut out = Output::new(&a.common, None)?;
    let mut arena = TreeArena::new(shared_law(&a.dist)?, a.tree_seed);
    let ball = arena.ball(a.depth);
    let vstar = arena.find_vstar();
    let dump = format!("# id parent depth backbone nchildren\n{}", arena.dump());
    if out.dir.is_none() {
        print!("{dump}");
    }
    eprintln!("{} vertices within depth {}, v* = {} at depth {}", ball.len(), a.depth, vstar, arena.depth(vstar));
    out.write("tree.txt", &dump)?;
    let summary = json!({ "ball_size": ball.len(), "vstar": vstar, "vstar_depth": arena.depth(vstar) });
    out.json("tree.json", &summary)?;
    out.manifest("gen-tree", a, &a.common, start, None, true)?;
    Ok(Outcome { valid: true })
}
