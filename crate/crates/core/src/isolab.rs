//! Exhaustive anchored isoperimetry scans and δ-good boundary edges on small
//! connected sets containing the root.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gwtree::{NodeId, TreeArena, VertexSet, ROOT};
use crate::resistance::ConductanceSolver;

/// Largest set size the scan will enumerate.
pub const MAX_SCAN: usize = 18;

/// Per-size extremes over all connected sets `A` containing the root.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetScan {
    pub n_max: usize,
    /// Entry `n - 1` covers sets of size `n`.
    pub counts: Vec<u64>,
    pub min_ratio: Vec<f64>,
    pub witness: Vec<Vec<NodeId>>,
    /// Smallest fraction of δ-good boundary edges over sets made of backbone
    /// vertices only; empty unless goodness was requested.
    pub min_good_fraction: Vec<f64>,
    /// Boundary edges whose goodness could not be certified.
    pub unresolved_edges: u64,
}

impl SubsetScan {
    /// Smallest `n` such that every size from `n` to `n_max` has minimum ratio
    /// at least `delta`.
    pub fn threshold_size(&self, delta: f64) -> Option<usize> {
        let mut n = None;
        for size in (1..=self.n_max).rev() {
            if self.min_ratio[size - 1] >= delta {
                n = Some(size);
            } else {
                break;
            }
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Good {
    Unknown,
    Yes,
    No,
    Unresolved,
}

struct Goodness<'a> {
    solver: &'a mut ConductanceSolver,
    delta: f64,
    rel: u32,
    cache: Vec<Good>,
    unresolved: u64,
}

impl Goodness<'_> {
    fn classify(&mut self, arena: &mut TreeArena, c: NodeId) -> Good {
        if self.cache.len() <= c as usize {
            self.cache.resize(c as usize + 1, Good::Unknown);
        }
        if self.cache[c as usize] == Good::Unknown {
            let iv = self.solver.interval(arena, c, self.rel);
            let g = edge_goodness(iv.lo, iv.hi, self.delta);
            if g == Good::Unresolved {
                self.unresolved += 1;
            }
            self.cache[c as usize] = g;
        }
        self.cache[c as usize]
    }
}

/// `C/(1+C)` is increasing, so the interval for `C` decides the comparison
/// unless it straddles `delta/(1-delta)`.
fn edge_goodness(lo: f64, hi: f64, delta: f64) -> Good {
    let ratio = |c: f64| if c.is_infinite() { 1.0 } else { c / (1.0 + c) };
    if ratio(lo) >= delta {
        Good::Yes
    } else if ratio(hi) < delta {
        Good::No
    } else {
        Good::Unresolved
    }
}

struct Scanner<'a, 'b> {
    arena: &'a mut TreeArena,
    n_max: usize,
    member: Vec<bool>,
    set: Vec<NodeId>,
    buf: Vec<NodeId>,
    out: SubsetScan,
    goodness: Option<Goodness<'b>>,
}

impl Scanner<'_, '_> {
    fn is_member(&self, v: NodeId) -> bool {
        self.member.get(v as usize).copied().unwrap_or(false)
    }

    fn set_member(&mut self, v: NodeId, on: bool) {
        if self.member.len() <= v as usize {
            self.member.resize(v as usize + 1, false);
        }
        self.member[v as usize] = on;
    }

    fn record(&mut self, deg_sum: u64) -> Result<()> {
        let n = self.set.len();
        let by_identity = deg_sum - 2 * (n as u64 - 1);
        let mut direct = 0u64;
        let mut good = 0u64;
        let mut backbone = true;
        for i in 0..n {
            let v = self.set[i];
            backbone &= self.arena.is_backbone(v);
            let k = self.arena.child_count(v);
            for j in 0..k {
                let c = self.arena.child(v, j);
                if !self.is_member(c) {
                    direct += 1;
                    if let Some(g) = self.goodness.as_mut() {
                        if g.classify(self.arena, c) == Good::Yes {
                            good += 1;
                        }
                    }
                }
            }
        }
        if direct != by_identity || direct == 0 {
            return Err(Error::InvalidVertexSet(format!(
                "edge boundary {direct} disagrees with the degree identity {by_identity}"
            )));
        }
        let ratio = direct as f64 / n as f64;
        let i = n - 1;
        self.out.counts[i] += 1;
        if ratio < self.out.min_ratio[i] {
            self.out.min_ratio[i] = ratio;
            self.out.witness[i] = self.set.clone();
        }
        if self.goodness.is_some() && backbone {
            let f = good as f64 / direct as f64;
            let m = &mut self.out.min_good_fraction[i];
            *m = m.min(f);
        }
        Ok(())
    }

    /// Records the current set, then extends it by each frontier vertex in
    /// turn; vertices skipped at one level are never added below it, so each
    /// rooted subtree is produced once.
    fn extend(&mut self, lo: usize, hi: usize, deg_sum: u64) -> Result<()> {
        self.record(deg_sum)?;
        if self.set.len() == self.n_max {
            return Ok(());
        }
        for i in lo..hi {
            let v = self.buf[i];
            self.arena.ensure_children(v);
            // The new frontier is the rest of this one plus the children of v.
            let start = self.buf.len();
            for j in i + 1..hi {
                let w = self.buf[j];
                self.buf.push(w);
            }
            for j in 0..self.arena.child_count(v) {
                let c = self.arena.child(v, j);
                self.buf.push(c);
            }
            let end = self.buf.len();
            self.set.push(v);
            self.set_member(v, true);
            let r = self.extend(start, end, deg_sum + u64::from(self.arena.degree(v)));
            self.set_member(v, false);
            self.set.pop();
            self.buf.truncate(start);
            r?;
        }
        Ok(())
    }
}

fn scan(arena: &mut TreeArena, n_max: usize, goodness: Option<Goodness<'_>>) -> Result<SubsetScan> {
    if n_max > MAX_SCAN {
        return Err(Error::EnumerationTooLarge(n_max));
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let with_good = goodness.is_some();
    let out = SubsetScan {
        n_max,
        counts: vec![0; n_max],
        min_ratio: vec![f64::INFINITY; n_max],
        witness: vec![Vec::new(); n_max],
        min_good_fraction: if with_good { vec![f64::INFINITY; n_max] } else { Vec::new() },
        unresolved_edges: 0,
    };
    arena.ensure_children(ROOT);
    let mut s = Scanner { arena, n_max, member: Vec::new(), set: vec![ROOT], buf: Vec::new(), out, goodness };
    s.set_member(ROOT, true);
    s.buf.extend(s.arena.children(ROOT));
    let hi = s.buf.len();
    let deg = u64::from(s.arena.degree(ROOT));
    s.extend(0, hi, deg)?;
    let mut out = s.out;
    if let Some(g) = s.goodness {
        out.unresolved_edges = g.unresolved;
    }
    Ok(out)
}

/// Enumerates every connected set containing the root with at most `n_max`
/// vertices and records the smallest `|∂_E A| / |A|` for each size.
pub fn scan_isoperimetry(arena: &mut TreeArena, n_max: usize) -> Result<SubsetScan> {
    scan(arena, n_max, None)
}

/// As [`scan_isoperimetry`], also tracking the smallest fraction of δ-good
/// boundary edges over all-backbone sets, with conductances certified at
/// relative depth `rel`.
pub fn scan_with_goodness(
    arena: &mut TreeArena,
    n_max: usize,
    solver: &mut ConductanceSolver,
    delta: f64,
    rel: u32,
) -> Result<SubsetScan> {
    scan(arena, n_max, Some(Goodness { solver, delta, rel, cache: Vec::new(), unresolved: 0 }))
}

/// δ-goodness of the edge boundary of one set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaGood {
    pub boundary: usize,
    pub good: usize,
    pub bad: usize,
    pub unresolved: usize,
    /// At least `delta * boundary` edges are certified good.
    pub is_good: bool,
    /// Interval for `C(A <-> ∞) = Σ C(e+)/(1+C(e+))` over boundary edges.
    pub boundary_sum: (f64, f64),
}

/// Classifies every boundary edge `e` of `set` by whether
/// `C(e+)/(1+C(e+)) >= delta`, using intervals at relative depth `rel`.
pub fn check_delta_good(
    arena: &mut TreeArena,
    set: &VertexSet,
    delta: f64,
    solver: &mut ConductanceSolver,
    rel: u32,
) -> Result<DeltaGood> {
    if !set.contains(ROOT) {
        return Err(Error::InvalidVertexSet("set must contain the root".into()));
    }
    for v in set.iter() {
        if v as usize >= arena.len() {
            return Err(Error::InvalidVertexSet(format!("vertex {v} is not in the arena")));
        }
    }
    if !set.is_rooted_connected(arena) {
        return Err(Error::InvalidVertexSet("set must be connected and contain the root".into()));
    }
    let b = arena.boundaries(set);
    let mut out = DeltaGood { boundary: 0, good: 0, bad: 0, unresolved: 0, is_good: false, boundary_sum: (0.0, 0.0) };
    for &(_, c) in &b.edges {
        let iv = solver.interval(arena, c, rel);
        let series = |x: f64| if x.is_infinite() { 1.0 } else { x / (1.0 + x) };
        out.boundary += 1;
        out.boundary_sum.0 += series(iv.lo);
        out.boundary_sum.1 += series(iv.hi);
        match edge_goodness(iv.lo, iv.hi, delta) {
            Good::Yes => out.good += 1,
            Good::No => out.bad += 1,
            _ => out.unresolved += 1,
        }
    }
    out.is_good = out.good as f64 >= delta * out.boundary as f64;
    Ok(out)
}
