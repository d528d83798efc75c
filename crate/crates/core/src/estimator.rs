//! Tail campaigns for avalanches and forest components, exponent fits and
//! the finite-volume consistency checks.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gwtree::{NodeId, TreeArena, ROOT};
use crate::offspring::{DecomposedLaw, OffspringDistribution};
use crate::resistance::{ConductanceSolver, Horizon};
use crate::rng::{derive_seed, Purpose};
use crate::sandpile::{AvalancheRecord, AvalancheSampler, CoinMethod, FiniteNetwork};
use crate::wsf::{explore_component, explore_regular, ExploreOptions, Stop};

/// Samples handled by one parallel job. Fixed so that the split, and hence
/// the result, does not depend on the number of workers.
const CHUNK: u64 = 32;

/// Minimum exceedances for a grid point to enter a fit.
pub const MIN_EXCEEDANCES: u64 = 100;

/// A quenched worker drops its arena past this many nodes; the tree regrows
/// identically.
const ARENA_LIMIT: usize = 1 << 22;

/// Which per-sample count a curve tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "S")]
    Topplings,
    #[serde(rename = "av")]
    Avalanche,
    #[serde(rename = "w1")]
    FirstWave,
    #[serde(rename = "N")]
    Waves,
    #[serde(rename = "forest")]
    Forest,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Topplings => "S",
            Quantity::Avalanche => "av",
            Quantity::FirstWave => "w1",
            Quantity::Waves => "N",
            Quantity::Forest => "forest",
        }
    }

    fn of(self, r: &AvalancheRecord) -> u64 {
        match self {
            Quantity::Topplings => r.s,
            Quantity::Avalanche => r.av_size,
            Quantity::FirstWave => r.w1,
            Quantity::Waves => u64::from(r.n),
            Quantity::Forest => r.w1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Mode {
    /// One tree, regenerated from `tree_seed`, for all samples.
    Quenched { tree_seed: u64 },
    /// A fresh tree per sample.
    Annealed,
}

/// `0` followed by `round(10^(k/4))` up to `t_max`, without repeats.
pub fn quarter_decade_grid(t_max: u64) -> Vec<u64> {
    let mut grid = vec![0];
    for k in 0.. {
        let t = 10f64.powf(f64::from(k) / 4.0).round() as u64;
        if t > t_max {
            break;
        }
        if grid.last() != Some(&t) {
            grid.push(t);
        }
    }
    grid
}

/// Default grid, up to `10^8`.
pub fn default_grid() -> Vec<u64> {
    quarter_decade_grid(100_000_000)
}

/// Exceedance counts `#{samples : X > t}` on a fixed grid.
///
/// Samples are stored as a histogram over the gaps of the grid, so curves
/// merge by integer addition and bootstrap resampling is multinomial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailCurve {
    pub quantity: Quantity,
    pub mode: Mode,
    pub grid: Vec<u64>,
    /// `hist[j]`: uncensored samples exceeding exactly the first `j` grid points.
    hist: Vec<u64>,
    /// Same for censored samples, binned by their recorded count.
    censored_hist: Vec<u64>,
    pub total: u64,
    pub censored_total: u64,
}

/// One line of `tail.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub t: u64,
    pub survival: f64,
    pub stderr: f64,
    pub censored_lo: f64,
    pub censored_hi: f64,
}

impl TailRow {
    pub const CSV_HEADER: &'static str = "t,survival,stderr,censored_lo,censored_hi";

    pub fn csv_row(&self) -> String {
        format!("{},{:e},{:e},{:e},{:e}", self.t, self.survival, self.stderr, self.censored_lo, self.censored_hi)
    }
}

impl TailCurve {
    pub fn new(quantity: Quantity, mode: Mode, grid: Vec<u64>) -> Self {
        let bins = grid.len() + 1;
        Self { quantity, mode, grid, hist: vec![0; bins], censored_hist: vec![0; bins], total: 0, censored_total: 0 }
    }

    #[inline]
    fn bin(&self, value: u64) -> usize {
        self.grid.partition_point(|&t| t < value)
    }

    pub fn record(&mut self, value: u64, censored: bool) {
        let j = self.bin(value);
        self.total += 1;
        if censored {
            self.censored_hist[j] += 1;
            self.censored_total += 1;
        } else {
            self.hist[j] += 1;
        }
    }

    pub fn merge(&mut self, other: &TailCurve) -> Result<()> {
        if self.grid != other.grid || self.quantity != other.quantity || self.mode != other.mode {
            return Err(Error::InvalidArgument("curves with different grids or modes".into()));
        }
        for (a, b) in self.hist.iter_mut().zip(&other.hist) {
            *a += b;
        }
        for (a, b) in self.censored_hist.iter_mut().zip(&other.censored_hist) {
            *a += b;
        }
        self.total += other.total;
        self.censored_total += other.censored_total;
        Ok(())
    }

    fn tail_sums(hist: &[u64]) -> Vec<u64> {
        // exceed[k] = sum of hist[j] for j > k
        let mut out = vec![0; hist.len() - 1];
        let mut acc = 0;
        for k in (0..out.len()).rev() {
            acc += hist[k + 1];
            out[k] = acc;
        }
        out
    }

    /// Uncensored samples above each grid point.
    pub fn exceedances(&self) -> Vec<u64> {
        Self::tail_sums(&self.hist)
    }

    /// Censored samples whose recorded count is above each grid point.
    pub fn censored_exceedances(&self) -> Vec<u64> {
        Self::tail_sums(&self.censored_hist)
    }

    /// Survival with censored samples counted below their recorded count.
    pub fn survival_included(&self) -> Vec<f64> {
        let n = self.total.max(1) as f64;
        self.exceedances().iter().zip(self.censored_exceedances()).map(|(&e, c)| (e + c) as f64 / n).collect()
    }

    /// Survival over uncensored samples only.
    pub fn survival_excluded(&self) -> Vec<f64> {
        let n = (self.total - self.censored_total).max(1) as f64;
        self.exceedances().iter().map(|&e| e as f64 / n).collect()
    }

    pub fn rows(&self) -> Vec<TailRow> {
        let n = self.total.max(1) as f64;
        let ex = self.exceedances();
        let cex = self.censored_exceedances();
        self.grid
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let p = (ex[k] + cex[k]) as f64 / n;
                TailRow {
                    t,
                    survival: p,
                    stderr: (p * (1.0 - p) / n).sqrt(),
                    censored_lo: ex[k] as f64 / n,
                    censored_hi: (ex[k] + self.censored_total) as f64 / n,
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TailRow::CSV_HEADER);
        out.push('\n');
        for r in self.rows() {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Counters of a campaign besides the curves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub samples: u64,
    pub censored: u64,
    /// Censored because the first wave reached the size cap.
    pub capped: u64,
    pub unresolved: u64,
    pub step_capped: u64,
    pub max_depth_used: u32,
    pub coins: u64,
    pub walk_steps: u64,
}

impl Counters {
    fn add(&mut self, o: &Counters) {
        self.samples += o.samples;
        self.censored += o.censored;
        self.capped += o.capped;
        self.unresolved += o.unresolved;
        self.step_capped += o.step_capped;
        self.max_depth_used = self.max_depth_used.max(o.max_depth_used);
        self.coins += o.coins;
        self.walk_steps += o.walk_steps;
    }

    /// A run is invalid when more than 1% of samples could not be decided or
    /// hit the step cap.
    pub fn valid(&self) -> bool {
        (self.unresolved + self.step_capped) * 100 <= self.samples
    }
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub dist: OffspringDistribution,
    pub mode: Mode,
    pub samples: u64,
    pub seed: u64,
    pub depth: u32,
    pub max_doublings: u32,
    pub cluster_cap: usize,
    pub grid: Vec<u64>,
    pub keep_records: bool,
    /// Chosen from the law when unset.
    pub coin_method: Option<CoinMethod>,
}

impl CampaignConfig {
    pub fn new(dist: OffspringDistribution, mode: Mode, samples: u64, seed: u64) -> Self {
        Self {
            dist,
            mode,
            samples,
            seed,
            depth: 32,
            max_doublings: 6,
            cluster_cap: 20_000,
            grid: default_grid(),
            keep_records: false,
            coin_method: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Campaign {
    /// Curves for `S`, `|Av|`, `|W^1|` and `N`, in that order.
    pub curves: Vec<TailCurve>,
    pub counters: Counters,
    /// Per-sample records in sample order when requested.
    pub records: Vec<AvalancheRecord>,
}

impl Campaign {
    pub fn curve(&self, q: Quantity) -> Option<&TailCurve> {
        self.curves.iter().find(|c| c.quantity == q)
    }

    pub fn valid(&self) -> bool {
        self.counters.valid()
    }
}

const SANDPILE_QUANTITIES: [Quantity; 4] =
    [Quantity::Topplings, Quantity::Avalanche, Quantity::FirstWave, Quantity::Waves];

struct Partial {
    curves: Vec<TailCurve>,
    counters: Counters,
    records: Vec<AvalancheRecord>,
}

fn ingest(p: &mut Partial, rec: AvalancheRecord, keep: bool) -> Result<()> {
    p.counters.samples += 1;
    p.counters.max_depth_used = p.counters.max_depth_used.max(rec.depth_used);
    if rec.unresolved {
        p.counters.unresolved += 1;
    } else {
        rec.check()?;
        p.counters.censored += u64::from(rec.censored);
        p.counters.capped += u64::from(rec.capped);
        for c in &mut p.curves {
            c.record(c.quantity.of(&rec), rec.censored);
        }
    }
    if keep {
        p.records.push(rec);
    }
    Ok(())
}

fn tree_seed(cfg: &CampaignConfig, i: u64) -> u64 {
    derive_seed(cfg.seed, Purpose::Tree, i)
}

/// Runs the avalanche campaign described by `cfg` on the rayon pool.
///
/// Per-sample seeds come from `(seed, sample index)` only, and chunk results
/// are merged by integer addition in chunk order, so the output does not
/// depend on the number of threads.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<Campaign> {
    let law = Arc::new(cfg.dist.decompose()?);
    let chunks = cfg.samples.div_ceil(CHUNK);
    let new_partial = || Partial {
        curves: SANDPILE_QUANTITIES.iter().map(|&q| TailCurve::new(q, cfg.mode, cfg.grid.clone())).collect(),
        counters: Counters::default(),
        records: Vec::new(),
    };
    let init = || {
        let seed = match cfg.mode {
            Mode::Quenched { tree_seed } => tree_seed,
            Mode::Annealed => 0,
        };
        let arena = TreeArena::new(law.clone(), seed);
        let mut sampler = AvalancheSampler::new(cfg.depth, cfg.max_doublings).with_cluster_cap(cfg.cluster_cap);
        if let Some(m) = cfg.coin_method {
            sampler = sampler.with_coin_method(m);
        }
        (arena, sampler)
    };
    let parts: Vec<Result<Partial>> = (0..chunks)
        .into_par_iter()
        .map_init(init, |(arena, sampler), chunk| {
            let mut part = new_partial();
            let before = sampler.stats();
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(cfg.samples) {
                match cfg.mode {
                    Mode::Annealed => arena.reseed(tree_seed(cfg, i)),
                    Mode::Quenched { .. } => {
                        if arena.len() > ARENA_LIMIT {
                            arena.reset();
                        }
                    }
                }
                let rec = sampler.sample(arena, i, derive_seed(cfg.seed, Purpose::Sandpile, i));
                ingest(&mut part, rec, cfg.keep_records)?;
            }
            let after = sampler.stats();
            part.counters.coins = after.coins - before.coins;
            part.counters.walk_steps = after.steps - before.steps;
            Ok(part)
        })
        .collect();
    let mut total = new_partial();
    for p in parts {
        let p = p?;
        for (a, b) in total.curves.iter_mut().zip(&p.curves) {
            a.merge(b)?;
        }
        total.counters.add(&p.counters);
        total.records.extend(p.records);
    }
    Ok(Campaign { curves: total.curves, counters: total.counters, records: total.records })
}

/// Quenched campaign on the tree regenerated from `tree_seed`.
pub fn run_quenched(
    dist: OffspringDistribution,
    tree_seed: u64,
    samples: u64,
    seed: u64,
    depth: u32,
) -> Result<Campaign> {
    let mut cfg = CampaignConfig::new(dist, Mode::Quenched { tree_seed }, samples, seed);
    cfg.depth = depth;
    run_campaign(&cfg)
}

/// Annealed campaign, one backbone-decomposed tree per sample.
pub fn run_annealed(dist: OffspringDistribution, samples: u64, seed: u64, depth: u32) -> Result<Campaign> {
    let mut cfg = CampaignConfig::new(dist, Mode::Annealed, samples, seed);
    cfg.depth = depth;
    run_campaign(&cfg)
}

/// Tail of `|F_o|` on the `k`-ary tree, whose conductances all equal `k - 1`.
/// Step-capped samples are censored at the size reached.
pub fn run_forest_tail(k: u32, samples: u64, seed: u64, opts: &ExploreOptions) -> (TailCurve, Counters) {
    let c = f64::from(k) - 1.0;
    let mode = Mode::Quenched { tree_seed: 0 };
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<(TailCurve, Counters)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut curve = TailCurve::new(Quantity::Forest, mode, default_grid());
            let mut counters = Counters::default();
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(samples) {
                let ex = explore_regular(k, c, derive_seed(seed, Purpose::Forest, i), opts);
                counters.samples += 1;
                match ex.stop {
                    Stop::Exhausted => curve.record(ex.size, false),
                    Stop::StepCap => {
                        counters.step_capped += 1;
                        counters.censored += 1;
                        curve.record(ex.size, true);
                    }
                    Stop::Unresolved => counters.unresolved += 1,
                }
            }
            (curve, counters)
        })
        .collect();
    let mut curve = TailCurve::new(Quantity::Forest, mode, default_grid());
    let mut counters = Counters::default();
    for (c, n) in &parts {
        curve.merge(c).expect("same grid");
        counters.add(n);
    }
    (curve, counters)
}

/// Tail of `|F_o|` on the quenched tree regenerated from `tree_seed`, with
/// conductances certified on the infinite tree.
pub fn run_forest_tail_quenched(
    dist: &OffspringDistribution,
    tree_seed: u64,
    samples: u64,
    seed: u64,
    opts: &ExploreOptions,
) -> Result<(TailCurve, Counters)> {
    let law = shared_law(dist)?;
    let mode = Mode::Quenched { tree_seed };
    let chunks = samples.div_ceil(CHUNK);
    let init = || (TreeArena::new(law.clone(), tree_seed), ConductanceSolver::new(Horizon::Infinite));
    let parts: Vec<(TailCurve, Counters)> = (0..chunks)
        .into_par_iter()
        .map_init(init, |(arena, solver), chunk| {
            let mut curve = TailCurve::new(Quantity::Forest, mode, default_grid());
            let mut counters = Counters::default();
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(samples) {
                if arena.len() > ARENA_LIMIT {
                    arena.reset();
                    solver.clear();
                }
                let ex = explore_component(arena, solver, derive_seed(seed, Purpose::Forest, i), opts);
                counters.samples += 1;
                match ex.stop {
                    Stop::Exhausted => curve.record(ex.size, false),
                    Stop::StepCap => {
                        counters.step_capped += 1;
                        counters.censored += 1;
                        curve.record(ex.size, true);
                    }
                    Stop::Unresolved => counters.unresolved += 1,
                }
            }
            (curve, counters)
        })
        .collect();
    let mut curve = TailCurve::new(Quantity::Forest, mode, default_grid());
    let mut counters = Counters::default();
    for (c, n) in &parts {
        curve.merge(c)?;
        counters.add(n);
    }
    Ok((curve, counters))
}

/// Least-squares power-law fit on `(log t, log P[X > t])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// Percentile bootstrap interval (95%), when resampling was done.
    pub ci: Option<(f64, f64)>,
    pub t_min: u64,
    pub t_max: u64,
    pub points: usize,
    pub r2: f64,
    /// Local slope drifts by more than 1/2 across the window, or the slope is
    /// below -2.
    pub non_power_law: bool,
}

fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Curvature of `y` against `x` from a quadratic least-squares fit.
fn curvature(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 3 {
        return 0.0;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    // Regress y on (u, u^2 - mean) with centered u to keep it well conditioned.
    let u: Vec<f64> = x.iter().map(|a| a - mx).collect();
    let mu2 = u.iter().map(|a| a * a).sum::<f64>() / n;
    let w: Vec<f64> = u.iter().map(|a| a * a - mu2).collect();
    let my = y.iter().sum::<f64>() / n;
    let (mut suu, mut suw, mut sww, mut suy, mut swy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let dy = y[i] - my;
        suu += u[i] * u[i];
        suw += u[i] * w[i];
        sww += w[i] * w[i];
        suy += u[i] * dy;
        swy += w[i] * dy;
    }
    let det = suu * sww - suw * suw;
    if det.abs() < 1e-300 {
        return 0.0;
    }
    (suu * swy - suw * suy) / det
}

impl ExponentFit {
    /// Fit through the given points; every survival value must be positive.
    pub fn from_points(t: &[u64], p: &[f64]) -> Result<Self> {
        if t.len() != p.len() || t.len() < 5 {
            return Err(Error::InsufficientData(format!("{} points, need at least 5", t.len())));
        }
        if t.iter().zip(p).any(|(&t, &p)| t == 0 || p <= 0.0) {
            return Err(Error::InsufficientData("zero abscissa or survival".into()));
        }
        let x: Vec<f64> = t.iter().map(|&t| (t as f64).ln()).collect();
        let y: Vec<f64> = p.iter().map(|p| p.ln()).collect();
        let (slope, intercept, r2) = ols(&x, &y);
        let span = x[x.len() - 1] - x[0];
        let drift = 2.0 * curvature(&x, &y) * span;
        Ok(Self {
            slope,
            intercept,
            ci: None,
            t_min: t[0],
            t_max: t[t.len() - 1],
            points: t.len(),
            r2,
            non_power_law: slope < -2.0 || drift.abs() > 0.5,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    pub t_min: u64,
    pub t_max: u64,
    pub n_bootstrap: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { t_min: 100, t_max: 10_000, n_bootstrap: 1000, seed: 0 }
    }
}

/// Fits with censored samples counted as exceedances below their recorded
/// count, and with censored samples dropped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub quantity: Quantity,
    pub included: ExponentFit,
    pub excluded: Option<ExponentFit>,
    pub samples: u64,
    pub censored: u64,
}

fn window(curve: &TailCurve, counts: &[u64], opts: &FitOptions) -> Vec<usize> {
    (0..curve.grid.len())
        .filter(|&k| {
            let t = curve.grid[k];
            t > 0 && t >= opts.t_min && t <= opts.t_max && counts[k] >= MIN_EXCEEDANCES
        })
        .collect()
}

fn multinomial(n: u64, weights: &[u64], total: u64, rng: &mut StdRng) -> Vec<u64> {
    let mut out = vec![0; weights.len()];
    let (mut left, mut mass) = (n, total);
    for (o, &w) in out.iter_mut().zip(weights) {
        if left == 0 || mass == 0 {
            break;
        }
        let p = (w as f64 / mass as f64).min(1.0);
        *o = Binomial::new(left, p).expect("valid binomial").sample(rng);
        left -= *o;
        mass -= w;
    }
    out
}

fn fit_with(curve: &TailCurve, opts: &FitOptions, excluded: bool) -> Result<ExponentFit> {
    let ex = curve.exceedances();
    let cex = curve.censored_exceedances();
    let counts: Vec<u64> = if excluded { ex.clone() } else { ex.iter().zip(&cex).map(|(a, b)| a + b).collect() };
    let pts = window(curve, &counts, opts);
    let p = if excluded { curve.survival_excluded() } else { curve.survival_included() };
    let t: Vec<u64> = pts.iter().map(|&k| curve.grid[k]).collect();
    let mut fit = ExponentFit::from_points(&t, &pts.iter().map(|&k| p[k]).collect::<Vec<_>>())?;
    if opts.n_bootstrap == 0 {
        return Ok(fit);
    }
    // Resampling the sample set with replacement is a multinomial draw over
    // the histogram bins.
    let mut rng = StdRng::seed_from_u64(derive_seed(opts.seed, Purpose::Bootstrap, u64::from(excluded)));
    let bins: Vec<u64> = if excluded {
        curve.hist.clone()
    } else {
        curve.hist.iter().chain(&curve.censored_hist).copied().collect()
    };
    let n: u64 = bins.iter().sum();
    let g = curve.hist.len();
    let mut slopes = Vec::with_capacity(opts.n_bootstrap);
    let mut fake = curve.clone();
    for _ in 0..opts.n_bootstrap {
        let draw = multinomial(n, &bins, n, &mut rng);
        fake.hist.copy_from_slice(&draw[..g]);
        if excluded {
            fake.censored_hist.iter_mut().for_each(|c| *c = 0);
        } else {
            fake.censored_hist.copy_from_slice(&draw[g..]);
        }
        fake.total = n;
        fake.censored_total = fake.censored_hist.iter().sum();
        let p = fake.survival_included();
        let y: Vec<f64> = pts.iter().map(|&k| p[k]).collect();
        if y.iter().any(|&v| v <= 0.0) {
            continue;
        }
        let x: Vec<f64> = t.iter().map(|&t| (t as f64).ln()).collect();
        let y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        slopes.push(ols(&x, &y).0);
    }
    if !slopes.is_empty() {
        slopes.sort_by(f64::total_cmp);
        let q = |f: f64| slopes[((slopes.len() - 1) as f64 * f).round() as usize];
        fit.ci = Some((q(0.025), q(0.975)));
    }
    Ok(fit)
}

/// Fits `P[X > t] ~ t^slope` over the window, with a bootstrap interval.
pub fn fit_exponent(curve: &TailCurve, opts: &FitOptions) -> Result<TailFit> {
    let included = fit_with(curve, opts, false)?;
    let excluded = fit_with(curve, opts, true).ok();
    Ok(TailFit {
        quantity: curve.quantity,
        included,
        excluded,
        samples: curve.total,
        censored: curve.censored_total,
    })
}

/// Per-point comparison of two curves of the same quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityPoint {
    pub t: u64,
    pub p_base: f64,
    pub p_doubled: f64,
    /// Difference over the combined standard error.
    pub z: f64,
}

/// Compares two curves on the grid points inside `[t_min, t_max]`.
pub fn depth_stability(base: &TailCurve, doubled: &TailCurve, t_min: u64, t_max: u64) -> Result<Vec<StabilityPoint>> {
    if base.grid != doubled.grid {
        return Err(Error::InvalidArgument("curves on different grids".into()));
    }
    let (pa, pb) = (base.survival_included(), doubled.survival_included());
    let (na, nb) = (base.total.max(1) as f64, doubled.total.max(1) as f64);
    Ok(base
        .grid
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= t_min && t <= t_max)
        .map(|(k, &t)| {
            let se = (pa[k] * (1.0 - pa[k]) / na + pb[k] * (1.0 - pb[k]) / nb).sqrt();
            let d = pa[k] - pb[k];
            StabilityPoint { t, p_base: pa[k], p_doubled: pb[k], z: if se > 0.0 { d / se } else if d == 0.0 { 0.0 } else { f64::INFINITY } }
        })
        .collect())
}

/// Mean number of waves on a wired ball against the resistance to the sink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DharReport {
    pub samples: u64,
    pub mean_waves: f64,
    pub stderr: f64,
    pub resistance: f64,
    pub z: f64,
    pub unresolved: u64,
}

/// Samples `n_samples` uniform recurrent configurations on the wired ball of
/// radius `depth` and compares the mean number of waves with `R(o <-> s)`.
pub fn dhar_check(arena: &mut TreeArena, depth: u32, n_samples: u64, seed: u64) -> Result<DharReport> {
    let resistance = FiniteNetwork::ball(arena, depth)?.resistance();
    let mut sampler = AvalancheSampler::new(depth, 0);
    let (mut sum, mut sq, mut n, mut unresolved) = (0.0, 0.0, 0u64, 0u64);
    for i in 0..n_samples {
        let rec = sampler.sample(arena, i, derive_seed(seed, Purpose::Sandpile, i));
        if rec.unresolved {
            unresolved += 1;
            continue;
        }
        let w = f64::from(rec.n);
        sum += w;
        sq += w * w;
        n += 1;
    }
    let nf = n.max(1) as f64;
    let mean = sum / nf;
    let var = (sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
    let stderr = (var / nf).sqrt();
    let z = if stderr > 0.0 { (mean - resistance) / stderr } else { 0.0 };
    Ok(DharReport { samples: n, mean_waves: mean, stderr, resistance, z, unresolved })
}

/// A cylinder event on a random vertex set containing the root: the listed
/// vertices, given as child-index paths from the root, are in or out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CylinderEvent {
    All,
    Never,
    Cylinder { include: Vec<Vec<u32>>, exclude: Vec<Vec<u32>> },
}

impl CylinderEvent {
    pub fn label(&self) -> String {
        let fmt = |ps: &[Vec<u32>]| {
            ps.iter()
                .map(|p| if p.is_empty() { "o".to_string() } else { p.iter().map(u32::to_string).collect::<Vec<_>>().join(".") })
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            CylinderEvent::All => "all".into(),
            CylinderEvent::Never => "never".into(),
            CylinderEvent::Cylinder { include, exclude } => format!("in[{}] out[{}]", fmt(include), fmt(exclude)),
        }
    }
}

fn resolve(arena: &mut TreeArena, path: &[u32]) -> Option<NodeId> {
    let mut v = ROOT;
    for &i in path {
        arena.ensure_children(v);
        if i >= arena.child_count(v) {
            return None;
        }
        v = arena.child(v, i);
    }
    Some(v)
}

/// Event resolved against one arena: `None` entries are vertices that do not
/// exist in the tree and so are never in the set.
struct Resolved {
    kind: u8,
    include: Vec<Option<NodeId>>,
    exclude: Vec<Option<NodeId>>,
}

impl Resolved {
    fn new(arena: &mut TreeArena, e: &CylinderEvent) -> Self {
        match e {
            CylinderEvent::All => Self { kind: 0, include: vec![], exclude: vec![] },
            CylinderEvent::Never => Self { kind: 1, include: vec![], exclude: vec![] },
            CylinderEvent::Cylinder { include, exclude } => Self {
                kind: 2,
                include: include.iter().map(|p| resolve(arena, p)).collect(),
                exclude: exclude.iter().map(|p| resolve(arena, p)).collect(),
            },
        }
    }

    fn holds(&self, contains: impl Fn(NodeId) -> bool) -> bool {
        match self.kind {
            0 => true,
            1 => false,
            _ => {
                self.include.iter().all(|v| v.is_some_and(&contains))
                    && self.exclude.iter().all(|v| !v.is_some_and(&contains))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventCheck {
    pub event: String,
    pub p_wave: f64,
    pub p_forest: f64,
    /// `G(o,o) * p_forest + 3 * combined standard error`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma33Report {
    pub green: f64,
    pub samples: u64,
    pub events: Vec<EventCheck>,
    pub unresolved: u64,
}

impl Lemma33Report {
    pub fn holds(&self) -> bool {
        self.events.iter().all(|e| e.holds)
    }
}

/// Compares first-wave and forest-component frequencies of cylinder events on
/// the wired ball of radius `depth`, where `G(o,o) = R(o <-> s)`.
pub fn lemma33_check(
    arena: &mut TreeArena,
    depth: u32,
    events: &[CylinderEvent],
    n_samples: u64,
    seed: u64,
) -> Result<Lemma33Report> {
    let green = FiniteNetwork::ball(arena, depth)?.resistance();
    let resolved: Vec<Resolved> = events.iter().map(|e| Resolved::new(arena, e)).collect();
    let mut sampler = AvalancheSampler::new(depth, 0);
    let mut solver = ConductanceSolver::new(Horizon::Ball(depth));
    let opts = ExploreOptions { keep_component: true, ..ExploreOptions::default() };
    let mut wave_hits = vec![0u64; events.len()];
    let mut forest_hits = vec![0u64; events.len()];
    let (mut nw, mut nf, mut unresolved) = (0u64, 0u64, 0u64);
    let mut member = Vec::new();
    for i in 0..n_samples {
        match sampler.first_wave(arena, derive_seed(seed, Purpose::Sandpile, i), 0) {
            // Events are sets of vertex sets containing the root, so an
            // empty first wave is in none of them.
            Some(fw) if fw.cluster.nodes.is_empty() => nw += 1,
            Some(fw) => {
                nw += 1;
                member.clear();
                member.resize(arena.len(), false);
                for &v in &fw.cluster.nodes {
                    member[v as usize] = true;
                }
                for (h, r) in wave_hits.iter_mut().zip(&resolved) {
                    *h += u64::from(r.holds(|v| member.get(v as usize).copied().unwrap_or(false)));
                }
            }
            None => unresolved += 1,
        }
        let ex = explore_component(arena, &mut solver, derive_seed(seed, Purpose::Forest, i), &opts);
        if ex.stop != Stop::Exhausted {
            unresolved += 1;
            continue;
        }
        nf += 1;
        for (h, r) in forest_hits.iter_mut().zip(&resolved) {
            *h += u64::from(r.holds(|v| ex.component.contains(v)));
        }
    }
    let (nw_f, nf_f) = (nw.max(1) as f64, nf.max(1) as f64);
    let checks = events
        .iter()
        .zip(wave_hits.iter().zip(&forest_hits))
        .map(|(e, (&hw, &hf))| {
            let pw = hw as f64 / nw_f;
            let pf = hf as f64 / nf_f;
            let se = (pw * (1.0 - pw) / nw_f + green * green * pf * (1.0 - pf) / nf_f).sqrt();
            let bound = green * pf + 3.0 * se;
            EventCheck { event: e.label(), p_wave: pw, p_forest: pf, bound, holds: pw <= bound }
        })
        .collect();
    Ok(Lemma33Report { green, samples: n_samples, events: checks, unresolved })
}

/// Shared decomposed law for callers that build arenas themselves.
pub fn shared_law(dist: &OffspringDistribution) -> Result<Arc<DecomposedLaw>> {
    Ok(Arc::new(dist.decompose()?))
}
