//! Invariant suites run by `gwsand verify` and the acceptance tests.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimator::{dhar_check, lemma33_check, shared_law, CylinderEvent};
use crate::gwtree::{NodeId, TreeArena, VertexSet};
use crate::isolab::{check_delta_good, scan_isoperimetry, scan_with_goodness};
use crate::offspring::OffspringDistribution;
use crate::resistance::{ConductanceSolver, Horizon};
use crate::rng::{derive_seed, Purpose, Stream};
use crate::sandpile::{
    config_to_tree, direct_waves, enumerate_recurrent, enumerate_spanning_trees, first_wave, is_recurrent,
    sample_recurrent, sample_recurrent_ball, stabilize, tree_to_config, AvalancheSampler, FiniteNetwork,
    ToppleOrder,
};
use crate::wsf::{explore_component, increments, ExploreOptions, Stop};

pub const SUITES: [&str; 8] = ["abelian", "bijection", "martingale", "dhar", "lemma33", "isolab", "waves", "vstar"];

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self { suite: suite.into(), passed: true, checks: Vec::new() }
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.passed &= passed;
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{} {}\n", self.suite, if self.passed { "PASS" } else { "FAIL" });
        for c in &self.checks {
            s += &format!("  [{}] {}: {}\n", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}

/// Sample sizes for the statistical suites.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VerifyScale {
    pub abelian_pairs: u64,
    pub abelian_orders: u64,
    pub chi_draws: u64,
    pub martingale_runs: u64,
    pub coin_trials: u64,
    pub dhar_samples: u64,
    pub lemma33_samples: u64,
    pub wave_samples: u64,
    pub vstar_samples: u64,
}

impl Default for VerifyScale {
    fn default() -> Self {
        Self {
            abelian_pairs: 100,
            abelian_orders: 10,
            chi_draws: 100_000,
            martingale_runs: 400,
            coin_trials: 100_000,
            dhar_samples: 100_000,
            lemma33_samples: 20_000,
            wave_samples: 1_000,
            vstar_samples: 100_000,
        }
    }
}

impl VerifyScale {
    /// Roughly a tenth of the default sizes, for smoke runs.
    pub fn quick() -> Self {
        Self {
            abelian_pairs: 20,
            abelian_orders: 5,
            chi_draws: 20_000,
            martingale_runs: 60,
            coin_trials: 10_000,
            dhar_samples: 10_000,
            lemma33_samples: 3_000,
            wave_samples: 200,
            vstar_samples: 10_000,
        }
    }
}

pub fn run_suite(name: &str, seed: u64, scale: &VerifyScale) -> Result<SuiteReport> {
    match name {
        "abelian" => abelian(seed, scale.abelian_pairs, scale.abelian_orders),
        "bijection" => bijection(seed, scale.chi_draws),
        "martingale" => martingale(seed, scale.martingale_runs, scale.coin_trials),
        "dhar" => dhar(seed, scale.dhar_samples),
        "lemma33" => lemma33(seed, scale.lemma33_samples),
        "isolab" => isolab(seed),
        "waves" => waves(seed, scale.wave_samples),
        "vstar" => vstar(seed, scale.vstar_samples),
        _ => Err(Error::InvalidArgument(format!("unknown suite {name:?}; expected one of {}", SUITES.join(", ")))),
    }
}

/// Pearson statistic and upper-tail p-value of `counts` against the uniform law.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64) {
    let k = counts.len();
    if k < 2 {
        return (0.0, 1.0);
    }
    let n: u64 = counts.iter().sum();
    let e = n as f64 / k as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let p = ChiSquared::new((k - 1) as f64).map(|d| d.sf(stat)).unwrap_or(f64::NAN);
    (stat, p)
}

fn law(spec: &str) -> Result<Arc<crate::offspring::DecomposedLaw>> {
    shared_law(&spec.parse::<OffspringDistribution>()?)
}

pub fn abelian(seed: u64, pairs: u64, orders: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("abelian");
    let laws = [law("explicit:0.25,0,0.75")?, law("poisson:1.5")?, law("explicit:0,0,0.5,0.5")?];
    let mut mismatches = 0u64;
    let mut topplings = 0u64;
    for i in 0..pairs {
        let mut arena = TreeArena::new(laws[i as usize % laws.len()].clone(), derive_seed(seed, Purpose::Tree, i));
        let net = FiniteNetwork::ball(&mut arena, 2 + (i % 4) as u32)?;
        let mut rng = Stream::new(derive_seed(seed, Purpose::Sample, i), 0);
        let start: Vec<u32> = (0..net.len()).map(|v| rng.below(0, 3 * net.degree(v))).collect();
        let mut reference = start.clone();
        let ref_stab = stabilize(&net, &mut reference, ToppleOrder::Fifo);
        topplings += ref_stab.topplings;
        for j in 1..orders {
            let mut h = start.clone();
            let st = stabilize(&net, &mut h, ToppleOrder::Random(derive_seed(seed, Purpose::Sandpile, i * orders + j)));
            if h != reference || st != ref_stab {
                mismatches += 1;
            }
        }
        if !net.is_stable(&reference) {
            mismatches += 1;
        }
    }
    rep.push(
        "identical stabilizations and odometers",
        mismatches == 0,
        format!("{pairs} configurations x {orders} orders, {topplings} reference topplings, {mismatches} mismatches"),
    );
    Ok(rep)
}

/// Breadth-first child counts of every plane tree with exactly `n` vertices.
pub fn plane_trees(n: usize) -> Vec<Vec<u32>> {
    fn rec(n: usize, counts: &mut Vec<u32>, open: usize, used: usize, out: &mut Vec<Vec<u32>>) {
        // `open` vertices are waiting for their child count; `used` vertices exist.
        if counts.len() == n {
            if used == n {
                out.push(counts.clone());
            }
            return;
        }
        if open == 0 {
            return;
        }
        for c in 0..=(n - used) {
            counts.push(c as u32);
            rec(n, counts, open - 1 + c, used + c, out);
            counts.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, &mut Vec::new(), 1, 1, &mut out);
    out
}

/// The plane tree `shape` with one extra child under every leaf, as an arena,
/// and the vertex set of the original vertices. Leaves of the shape are thus
/// wired to the sink by one edge.
pub fn wired_shape(shape: &[u32]) -> Result<(TreeArena, VertexSet)> {
    let n = shape.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut next = 1;
    for (v, &c) in shape.iter().enumerate() {
        for _ in 0..c {
            children[v].push(next);
            next += 1;
        }
    }
    // Re-index in BFS order of the augmented tree.
    let mut counts = Vec::new();
    let mut keep = Vec::new();
    let mut queue = std::collections::VecDeque::from([Some(0usize)]);
    while let Some(item) = queue.pop_front() {
        keep.push(item.is_some());
        match item {
            Some(v) if children[v].is_empty() => {
                counts.push(1);
                queue.push_back(None);
            }
            Some(v) => {
                counts.push(children[v].len() as u32);
                queue.extend(children[v].iter().map(|&w| Some(w)));
            }
            None => counts.push(0),
        }
    }
    let arena = TreeArena::explicit(&counts, None)?;
    let ids = keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i as NodeId).collect();
    Ok((arena, VertexSet::new(ids)))
}

fn frequency_check(
    rep: &mut SuiteReport,
    name: &str,
    recurrent: &[Vec<u32>],
    draws: u64,
    mut draw: impl FnMut(u64) -> Result<Option<Vec<u32>>>,
) -> Result<()> {
    let index: HashMap<&[u32], usize> = recurrent.iter().enumerate().map(|(i, h)| (h.as_slice(), i)).collect();
    let mut counts = vec![0u64; recurrent.len()];
    let mut outside = 0u64;
    let mut unresolved = 0u64;
    for i in 0..draws {
        match draw(i)? {
            Some(h) => match index.get(h.as_slice()) {
                Some(&j) => counts[j] += 1,
                None => outside += 1,
            },
            None => unresolved += 1,
        }
    }
    let (stat, p) = chi_square_uniform(&counts);
    rep.push(
        name,
        p > 0.01 && outside == 0 && unresolved == 0,
        format!(
            "|R_H| = {}, {draws} draws, chi2 = {stat:.1}, p = {p:.3}, non-recurrent {outside}, unresolved {unresolved}",
            recurrent.len()
        ),
    );
    Ok(())
}

pub fn bijection(seed: u64, draws: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("bijection");
    let (mut shapes, mut trees_seen, mut failures) = (0u64, 0u64, Vec::new());
    let mut largest: Vec<(usize, Vec<u32>)> = Vec::new();
    for n in 1..=7 {
        for shape in plane_trees(n) {
            shapes += 1;
            let (arena, h) = wired_shape(&shape)?;
            let net = FiniteNetwork::new(&arena, &h)?;
            let trees = enumerate_spanning_trees(&net);
            let recurrent = enumerate_recurrent(&net);
            trees_seen += trees.len() as u64;
            let mut images = std::collections::HashSet::new();
            let mut ok = trees.len() == recurrent.len();
            for t in &trees {
                let c = tree_to_config(&net, t)?;
                ok &= is_recurrent(&net, &c);
                ok &= config_to_tree(&net, &c)? == *t;
                ok &= images.insert(c);
            }
            if !ok {
                failures.push(format!("{shape:?}"));
            }
            if n == 7 {
                largest.push((recurrent.len(), shape));
            }
        }
    }
    rep.push(
        "injective, recurrent and inverted on all shapes up to 7 vertices",
        failures.is_empty(),
        format!("{shapes} shapes, {trees_seen} spanning trees, failing: {failures:?}"),
    );

    largest.sort();
    let picks = [largest[largest.len() / 4].1.clone(), largest[largest.len() / 2].1.clone(), largest[largest.len() - 1].1.clone()];
    for (k, shape) in picks.iter().enumerate() {
        let (arena, h) = wired_shape(shape)?;
        let net = FiniteNetwork::new(&arena, &h)?;
        let recurrent = enumerate_recurrent(&net);
        let mut rng = Stream::new(derive_seed(seed, Purpose::Wilson, k as u64), 0);
        frequency_check(&mut rep, &format!("Wilson + bijection uniform on {shape:?}"), &recurrent, draws, |_| {
            Ok(Some(sample_recurrent(&net, &mut rng)))
        })?;
    }

    // The top-down sampler on the depth-2 binary ball (7 vertices).
    let mut binary = TreeArena::complete(2, 4);
    let net = FiniteNetwork::ball(&mut binary, 2)?;
    let recurrent = enumerate_recurrent(&net);
    frequency_check(&mut rep, "top-down sampler uniform on the depth-2 binary ball", &recurrent, draws, |i| {
        Ok(sample_recurrent_ball(&mut binary, 2, derive_seed(seed, Purpose::Sandpile, i))?.map(|(_, h)| h))
    })?;
    // A ball with mixed degrees and a leaf of the tree inside it.
    let mut mixed = TreeArena::explicit(&[2, 1, 2, 1, 0, 2, 0, 0, 0], None)?;
    let net = FiniteNetwork::ball(&mut mixed, 2)?;
    let recurrent = enumerate_recurrent(&net);
    frequency_check(&mut rep, "top-down sampler uniform on a mixed-degree ball", &recurrent, draws, |i| {
        Ok(sample_recurrent_ball(&mut mixed, 2, derive_seed(seed, Purpose::Sandpile, i))?.map(|(_, h)| h))
    })?;
    Ok(rep)
}

pub fn martingale(seed: u64, runs: u64, coin_trials: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("martingale");
    let mut arena = TreeArena::new(law("explicit:0,0,0.5,0.5")?, derive_seed(seed, Purpose::Tree, 0));
    let mut solver = ConductanceSolver::new(Horizon::Infinite);
    let opts = ExploreOptions { trace: true, step_cap: 5_000, precision: Some(1e-2), ..ExploreOptions::default() };
    const BINS: usize = 32;
    // Per bin: count, sum and sum of squares of increments, sum of (inc^2 - D).
    let mut bins = vec![(0u64, 0.0f64, 0.0f64); BINS];
    let (mut qv_n, mut qv_sum, mut qv_sq) = (0u64, 0.0f64, 0.0f64);
    let (mut violations, mut formula_errors, mut unresolved, mut steps) = (0u64, 0u64, 0u64, 0u64);
    for r in 0..runs {
        let ex = explore_component(&mut arena, &mut solver, derive_seed(seed, Purpose::Forest, r), &opts);
        violations += ex.violations;
        if ex.stop == Stop::Unresolved {
            unresolved += 1;
        }
        let mut m = ex.m0;
        for row in &ex.trace {
            steps += 1;
            let c = 0.5 * (row.c_lo + row.c_hi);
            let (inc_in, inc_out, _) = increments(c);
            let want = if row.include { inc_in } else { inc_out };
            let expect_in = c * c / (1.0 + c);
            let expect_out = -c / (1.0 + c);
            let expect_d = c.powi(3) / (1.0 + c).powi(2);
            let tol = 1e-12 * (1.0 + c * c);
            m += row.increment;
            if (row.increment - want).abs() > tol
                || (inc_in - expect_in).abs() > tol
                || (inc_out - expect_out).abs() > tol
                || (row.d - expect_d).abs() > tol * (1.0 + c)
                || (row.m - m).abs() > 1e-9 * (1.0 + m.abs())
            {
                formula_errors += 1;
            }
            let b = ((c * 8.0) as usize).min(BINS - 1);
            let e = &mut bins[b];
            e.0 += 1;
            e.1 += row.increment;
            e.2 += row.increment * row.increment;
            let q = row.increment * row.increment - row.d;
            qv_n += 1;
            qv_sum += q;
            qv_sq += q * q;
        }
        if arena.len() > 1 << 21 {
            arena.reset();
            solver.clear();
        }
    }
    rep.push("increment and D formulas on every step", formula_errors == 0, format!("{steps} steps, {formula_errors} errors"));
    rep.push("tracked M stays in the certified frontier", violations == 0, format!("{violations} violations, {unresolved} unresolved runs"));
    let mut worst = 0.0f64;
    let mut tested = 0;
    let mut detail = Vec::new();
    for (b, &(n, s, sq)) in bins.iter().enumerate() {
        if n < 500 {
            continue;
        }
        tested += 1;
        let mean = s / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let z = mean / (var / n as f64).sqrt();
        worst = worst.max(z.abs());
        detail.push(format!("C in [{:.3},{:.3}): n={n} z={z:.2}", b as f64 / 8.0, (b + 1) as f64 / 8.0));
    }
    rep.push("binned drift |z| < 3", tested > 0 && worst < 3.0, format!("{tested} bins, max |z| = {worst:.2}; {}", detail.join("; ")));
    let mean = qv_sum / qv_n.max(1) as f64;
    let se = ((qv_sq / qv_n.max(1) as f64 - mean * mean).max(0.0) / qv_n.max(1) as f64).sqrt();
    let z = if se > 0.0 { mean / se } else { 0.0 };
    rep.push("squared increments average D", z.abs() < 3.0, format!("mean(inc^2 - D) = {mean:.3e}, z = {z:.2}"));

    // First-edge inclusion on the binary tree, where C = 1 everywhere.
    let mut binary = TreeArena::new(law("explicit:0,0,1")?, 0);
    let mut solver = ConductanceSolver::new(Horizon::Infinite);
    let first = ExploreOptions { trace: true, step_cap: 1, ..ExploreOptions::default() };
    let mut included = 0u64;
    for i in 0..coin_trials {
        let ex = explore_component(&mut binary, &mut solver, derive_seed(seed, Purpose::Forest, runs + i), &first);
        if ex.trace.first().is_some_and(|r| r.include) {
            included += 1;
        }
    }
    let f = included as f64 / coin_trials as f64;
    let sigma = (0.25 / coin_trials as f64).sqrt();
    rep.push(
        "binary child inclusion frequency 1/2",
        (f - 0.5).abs() < 3.0 * sigma,
        format!("{included}/{coin_trials} = {f:.4}, sigma = {sigma:.4}"),
    );
    Ok(rep)
}

pub fn dhar(seed: u64, samples: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("dhar");
    let mut arena = TreeArena::complete(2, 8);
    let r = dhar_check(&mut arena, 6, samples, seed)?;
    rep.push(
        "mean wave count equals R(o <-> s) on the depth-6 binary ball",
        r.z.abs() < 3.0 && r.unresolved == 0,
        format!(
            "{} samples, mean N = {:.5} +- {:.5}, R = {:.5}, z = {:.2}, unresolved {}",
            r.samples, r.mean_waves, r.stderr, r.resistance, r.z, r.unresolved
        ),
    );
    Ok(rep)
}

pub fn lemma33_events() -> Vec<CylinderEvent> {
    let cyl = |include: &[&[u32]], exclude: &[&[u32]]| CylinderEvent::Cylinder {
        include: include.iter().map(|p| p.to_vec()).collect(),
        exclude: exclude.iter().map(|p| p.to_vec()).collect(),
    };
    vec![
        CylinderEvent::All,
        CylinderEvent::Never,
        cyl(&[&[0]], &[]),
        cyl(&[&[0], &[1]], &[]),
        cyl(&[&[0]], &[&[1]]),
        cyl(&[], &[&[0], &[1]]),
        cyl(&[&[0, 0], &[0, 1]], &[]),
        cyl(&[&[1, 0, 1]], &[&[0]]),
    ]
}

pub fn lemma33(seed: u64, samples: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("lemma33");
    let mut arena = TreeArena::complete(2, 9);
    let r = lemma33_check(&mut arena, 6, &lemma33_events(), samples, seed)?;
    for e in &r.events {
        rep.push(
            format!("P(W1 in {}) <= G(o,o) P(F in it)", e.event),
            e.holds,
            format!("{:.4} vs {:.4} x {:.4} (bound with noise {:.4})", e.p_wave, r.green, e.p_forest, e.bound),
        );
    }
    rep.push("no unresolved samples", r.unresolved == 0, format!("{} samples, {} unresolved", r.samples, r.unresolved));
    Ok(rep)
}

pub fn isolab(seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("isolab");
    let mut binary = TreeArena::complete(2, 14);
    let scan = scan_isoperimetry(&mut binary, 12)?;
    let mut bad = Vec::new();
    for n in 1..=12usize {
        let want = (n + 1) as f64 / n as f64;
        if (scan.min_ratio[n - 1] - want).abs() > 1e-12 {
            bad.push(n);
        }
    }
    rep.push("binary tree min |dA|/|A| = (n+1)/n", bad.is_empty(), format!("sizes 1..=12, off at {bad:?}"));

    // Handshake identity is asserted on every enumerated set.
    let mut gw = TreeArena::new(law("poisson:1.5")?, derive_seed(seed, Purpose::Tree, 0));
    gw.grow_to_depth(14)?;
    let scan = scan_isoperimetry(&mut gw, 10)?;
    let total: u64 = scan.counts.iter().sum();
    rep.push("GW subtree scan with handshake identity", total > 0, format!("{total} rooted subtrees of size <= 10"));

    let mut arena = TreeArena::new(law("explicit:0,0,0.5,0.5")?, derive_seed(seed, Purpose::Tree, 1));
    let mut solver = ConductanceSolver::new(Horizon::Infinite);
    let scan = scan_with_goodness(&mut arena, 8, &mut solver, 0.5, 6)?;
    let all_good = scan.min_good_fraction.iter().all(|&f| f >= 1.0);
    rep.push(
        "every boundary edge is 1/2-good when each vertex has >= 2 children",
        all_good && scan.unresolved_edges == 0,
        format!("min good fractions {:?}", scan.min_good_fraction),
    );
    let set = arena.ball(2);
    let g = check_delta_good(&mut arena, &set, 0.5, &mut solver, 6)?;
    let lower = 0.5 * g.boundary as f64;
    rep.push(
        "boundary conductance sum of a ball",
        g.is_good && g.boundary_sum.0 >= lower && g.boundary_sum.0 <= g.boundary_sum.1,
        format!("|dA| = {}, sum in [{:.6}, {:.6}]", g.boundary, g.boundary_sum.0, g.boundary_sum.1),
    );
    Ok(rep)
}

/// Peeling of `W^1` against direct toppling, and the lazy first wave against
/// the first wave of the full-ball configuration.
pub fn waves(seed: u64, samples: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("waves");
    let laws = [law("explicit:0.25,0,0.75")?, law("poisson:1.5")?, law("explicit:0,0,1")?];
    let (mut mismatches, mut lazy_mismatches, mut unresolved, mut topplings) = (0u64, 0u64, 0u64, 0u64);
    let mut first_bad = None;
    for i in 0..samples {
        let mut arena = TreeArena::new(laws[i as usize % 3].clone(), derive_seed(seed, Purpose::Tree, i));
        let depth = 4 + (i % 5) as u32;
        let s = derive_seed(seed, Purpose::Sandpile, i);
        let Some((net, mut h)) = sample_recurrent_ball(&mut arena, depth, s)? else {
            unresolved += 1;
            continue;
        };
        let cluster = first_wave(&net, &h);
        let peeled = cluster.peel();
        let direct = direct_waves(&net, &mut h);
        let sizes: Vec<u64> = direct.iter().map(|w| w.len() as u64).collect();
        topplings += peeled.total();
        let mut nested = true;
        for w in direct.windows(2) {
            nested &= w[1].iter().all(|v| w[0].binary_search(v).is_ok());
        }
        if sizes != peeled.sizes || !nested || direct.first().map(Vec::len).unwrap_or(0) != cluster.len() {
            mismatches += 1;
            first_bad.get_or_insert(i);
        }
        let mut sampler = AvalancheSampler::new(depth, 0);
        match sampler.first_wave(&mut arena, s, 0) {
            Some(fw) if fw.cluster == cluster => {}
            Some(_) => lazy_mismatches += 1,
            None => unresolved += 1,
        }
    }
    rep.push(
        "peeled wave sizes equal direct toppling",
        mismatches == 0,
        format!("{samples} avalanches, {topplings} topplings, {mismatches} mismatches (first {first_bad:?})"),
    );
    rep.push("lazy first wave equals full-ball first wave", lazy_mismatches == 0, format!("{lazy_mismatches} mismatches"));
    rep.push("no unresolved coins", unresolved == 0, format!("{unresolved} unresolved"));
    Ok(rep)
}

/// A quenched tree of the given law whose `v*` sits at depth 1 or 2.
pub fn tree_with_shallow_vstar(dist: &OffspringDistribution, seed: u64) -> Result<(TreeArena, NodeId)> {
    let law = shared_law(dist)?;
    for i in 0..10_000 {
        let mut arena = TreeArena::new(law.clone(), derive_seed(seed, Purpose::Tree, i));
        let v = arena.find_vstar();
        if (1..=2).contains(&arena.depth(v)) {
            return Ok((arena, v));
        }
    }
    Err(Error::InvalidArgument(format!("no tree with |v*| in {{1,2}} for {dist}")))
}

/// On a tree with `|v*|` in {1, 2}, `v*` topples while a child does not in at
/// most one wave, and that wave is `N - |v*|`.
pub fn vstar(seed: u64, samples: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("vstar");
    let dist: OffspringDistribution = "explicit:0.25,0,0.75".parse()?;
    let (mut arena, v) = tree_with_shallow_vstar(&dist, seed)?;
    let dv = arena.depth(v);
    let depth = 12;
    let mut sampler = AvalancheSampler::new(depth, 0);
    let (mut hits, mut occurrences, mut twice, mut misplaced, mut unresolved) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for i in 0..samples {
        let Some(fw) = sampler.first_wave(&mut arena, derive_seed(seed, Purpose::Sandpile, i), 0) else {
            unresolved += 1;
            continue;
        };
        let Some(local) = fw.cluster.nodes.iter().position(|&x| x == v) else {
            continue;
        };
        hits += 1;
        let n = fw.cluster.peel().count();
        let pw = fw.cluster.partial_waves(local);
        occurrences += pw.len() as u64;
        if pw.len() > 1 {
            twice += 1;
        }
        if pw.iter().any(|&w| w + dv != n) {
            misplaced += 1;
        }
    }
    rep.push(
        "v* has at most one partial wave, at index N - |v*|",
        twice == 0 && misplaced == 0 && unresolved == 0,
        format!(
            "|v*| = {dv}, {samples} samples, v* toppled in {hits}, {occurrences} partial waves, {twice} doubled, {misplaced} misplaced, {unresolved} unresolved"
        ),
    );
    rep.push("v* topples in some samples", hits > 0, format!("{hits} samples"));
    Ok(rep)
}
