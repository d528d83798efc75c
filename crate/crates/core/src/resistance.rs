//! Effective conductances on trees with unit edge conductances.
//!
//! Conductances to infinity are reported as certified intervals. The
//! recursion `C(u) = sum_w C(w) / (1 + C(w))` is run to a finite relative
//! depth; vertices at the cut are seeded with bounds that hold for every
//! tree the offspring law can produce (Rayleigh monotonicity against a path,
//! the narrowest and the widest complete trees).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gwtree::{NodeId, TreeArena, VertexSet};

/// Largest relative depth a refinement will reach.
pub const MAX_REFINE_DEPTH: u32 = 1 << 14;
/// Vertices one coin may visit while refining before it is declared unresolved.
pub const DEFAULT_NODE_BUDGET: u64 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConductanceInterval {
    pub lo: f64,
    pub hi: f64,
    pub depth_used: u32,
}

impl ConductanceInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, c: f64) -> bool {
        self.lo <= c && c <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        if self.hi.is_infinite() {
            self.lo.max(1.0) * 2.0
        } else {
            0.5 * (self.lo + self.hi)
        }
    }
}

/// Where the network ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Horizon {
    /// The infinite tree; conductance to infinity.
    Infinite,
    /// Wired ball: every vertex deeper than the given depth is the sink.
    Ball(u32),
}

impl Horizon {
    #[inline]
    pub fn contains_depth(&self, depth: u32) -> bool {
        match *self {
            Horizon::Infinite => true,
            Horizon::Ball(d) => depth <= d,
        }
    }
}

/// `C / (1 + C)` rounded down, with `C = inf` mapping to 1.
#[inline]
fn series_lo(c: f64) -> f64 {
    if c.is_infinite() {
        1.0
    } else {
        (c / (1.0 + c)).next_down().max(0.0)
    }
}

#[inline]
fn series_hi(c: f64) -> f64 {
    if c.is_infinite() {
        1.0
    } else if c == 0.0 {
        0.0
    } else {
        (c / (1.0 + c)).next_up().min(1.0)
    }
}

#[inline]
fn add_down(acc: f64, x: f64) -> f64 {
    if x == 0.0 {
        acc
    } else {
        (acc + x).next_down().max(0.0)
    }
}

#[inline]
fn add_up(acc: f64, x: f64) -> f64 {
    if x == 0.0 {
        acc
    } else {
        (acc + x).next_up()
    }
}

/// Seed bounds derived from the offspring law of the arena.
#[derive(Debug, Clone)]
struct Seeds {
    random: bool,
    prime_min: u32,
    max_children: u32,
    wired_full: Vec<f64>,
}

impl Seeds {
    fn for_arena(arena: &TreeArena) -> Self {
        match arena.law() {
            Some(law) => Self {
                random: true,
                prime_min: law.prime_min(),
                max_children: law.max_children(),
                wired_full: Vec::new(),
            },
            None => Self { random: false, prime_min: 0, max_children: 0, wired_full: Vec::new() },
        }
    }

    /// Wired conductance of the full `max_children`-ary tree with the sink
    /// `levels` edges below the top vertex.
    fn wired_full(&mut self, levels: u32) -> f64 {
        let k = f64::from(self.max_children);
        if self.wired_full.is_empty() {
            self.wired_full.push(f64::INFINITY);
        }
        while self.wired_full.len() <= levels as usize {
            let g = *self.wired_full.last().unwrap();
            let next = if g.is_infinite() { k } else { k * g / (1.0 + g) };
            self.wired_full.push(next);
        }
        self.wired_full[levels as usize]
    }

    /// Conductance shared by every backbone vertex when the law leaves no freedom.
    fn pinned(&self, horizon: Horizon) -> Option<f64> {
        (self.random && horizon == Horizon::Infinite && self.prime_min == self.max_children)
            .then(|| f64::from(self.prime_min.saturating_sub(1)))
    }

    fn bounds(&mut self, arena: &TreeArena, v: NodeId, horizon: Horizon) -> (f64, f64) {
        if !self.random {
            return (0.0, f64::INFINITY);
        }
        let backbone = arena.is_backbone(v);
        match horizon {
            Horizon::Infinite => {
                if backbone {
                    (f64::from(self.prime_min.saturating_sub(1)), f64::from(self.max_children.saturating_sub(1)))
                } else {
                    (0.0, 0.0)
                }
            }
            Horizon::Ball(d) => {
                let levels = d + 1 - arena.depth(v);
                let hi = self.wired_full(levels).next_up();
                if backbone {
                    let path = (1.0 / f64::from(levels)).next_down();
                    (path.max(f64::from(self.prime_min.saturating_sub(1))), hi)
                } else {
                    (0.0, hi)
                }
            }
        }
    }
}

/// Memoized interval for one vertex.
#[derive(Debug, Clone, Copy)]
struct Entry {
    rel: u32,
    lo: f64,
    hi: f64,
}

const EXACT: u32 = u32::MAX;

trait Develop {
    fn tree(&self) -> &TreeArena;
    fn develop(&mut self, v: NodeId) -> Result<()>;
}

impl Develop for &TreeArena {
    fn tree(&self) -> &TreeArena {
        self
    }
    fn develop(&mut self, v: NodeId) -> Result<()> {
        if self.is_expanded(v) {
            Ok(())
        } else {
            Err(Error::Undeveloped(v))
        }
    }
}

impl Develop for &mut TreeArena {
    fn tree(&self) -> &TreeArena {
        self
    }
    fn develop(&mut self, v: NodeId) -> Result<()> {
        self.ensure_children(v);
        Ok(())
    }
}

struct Frame {
    v: NodeId,
    rel: u32,
    children: crate::gwtree::Children,
    lo: f64,
    hi: f64,
    exact: bool,
}

/// Certified interval for `C(v)` at relative depth `rel`.
fn evaluate<D: Develop>(
    tree: &mut D,
    v: NodeId,
    rel: u32,
    horizon: Horizon,
    seeds: &mut Seeds,
    mut cache: Option<&mut Vec<Option<Entry>>>,
    visited: &mut u64,
    budget: u64,
) -> Result<Option<Entry>> {
    if let Some(e) = lookup(cache.as_deref(), v, rel) {
        return Ok(Some(e));
    }
    if seeds.random && horizon == Horizon::Infinite && !tree.tree().is_backbone(v) {
        return Ok(Some(Entry { rel: EXACT, lo: 0.0, hi: 0.0 }));
    }
    if let Some(c) = seeds.pinned(horizon) {
        return Ok(Some(Entry { rel: EXACT, lo: c, hi: c }));
    }
    if rel == 0 {
        let (lo, hi) = seeds.bounds(tree.tree(), v, horizon);
        return Ok(Some(Entry { rel: 0, lo, hi }));
    }
    tree.develop(v)?;
    *visited += 1;
    let mut stack = vec![Frame { v, rel, children: tree.tree().children(v), lo: 0.0, hi: 0.0, exact: true }];
    loop {
        let top = stack.last_mut().expect("stack holds the query frame");
        let next = top.children.next();
        let (rel_child, parent_rel) = (top.rel - 1, top.rel);
        match next {
            Some(c) => {
                let t = tree.tree();
                let contribution = if !horizon.contains_depth(t.depth(c)) {
                    Some(Entry { rel: EXACT, lo: f64::INFINITY, hi: f64::INFINITY })
                } else if seeds.random && horizon == Horizon::Infinite && !t.is_backbone(c) {
                    Some(Entry { rel: EXACT, lo: 0.0, hi: 0.0 })
                } else if let Some(e) = lookup(cache.as_deref(), c, rel_child) {
                    Some(e)
                } else if rel_child == 0 {
                    let (lo, hi) = seeds.bounds(t, c, horizon);
                    Some(Entry { rel: 0, lo, hi })
                } else {
                    None
                };
                match contribution {
                    Some(e) => {
                        let top = stack.last_mut().unwrap();
                        top.lo = add_down(top.lo, series_lo(e.lo));
                        top.hi = add_up(top.hi, series_hi(e.hi));
                        top.exact &= e.rel == EXACT;
                    }
                    None => {
                        if *visited >= budget {
                            return Ok(None);
                        }
                        tree.develop(c)?;
                        *visited += 1;
                        let children = tree.tree().children(c);
                        stack.push(Frame { v: c, rel: rel_child, children, lo: 0.0, hi: 0.0, exact: true });
                    }
                }
            }
            None => {
                let f = stack.pop().unwrap();
                let deg = f64::from(tree.tree().child_count(f.v));
                let mut e = Entry {
                    rel: if f.exact { EXACT } else { parent_rel },
                    lo: f.lo.min(deg),
                    hi: f.hi.min(deg),
                };
                if let Some(cache) = cache.as_deref_mut() {
                    e = store(cache, f.v, e);
                }
                match stack.last_mut() {
                    None => return Ok(Some(e)),
                    Some(parent) => {
                        parent.lo = add_down(parent.lo, series_lo(e.lo));
                        parent.hi = add_up(parent.hi, series_hi(e.hi));
                        parent.exact &= e.rel == EXACT;
                    }
                }
            }
        }
    }
}

#[inline]
fn lookup(cache: Option<&Vec<Option<Entry>>>, v: NodeId, rel: u32) -> Option<Entry> {
    let e = (*cache?.get(v as usize)?)?;
    (e.rel >= rel).then_some(e)
}

fn store(cache: &mut Vec<Option<Entry>>, v: NodeId, e: Entry) -> Entry {
    let idx = v as usize;
    if cache.len() <= idx {
        cache.resize(idx + 1, None);
    }
    let merged = match cache[idx] {
        Some(old) => {
            let lo = e.lo.max(old.lo);
            let hi = e.hi.min(old.hi);
            // Both are certified; an empty intersection can only come from rounding.
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (e.lo.min(old.lo), e.hi.max(old.hi)) };
            Entry { rel: e.rel.max(old.rel), lo, hi }
        }
        None => e,
    };
    cache[idx] = Some(merged);
    merged
}

fn to_interval(e: Entry) -> ConductanceInterval {
    ConductanceInterval { lo: e.lo, hi: e.hi, depth_used: e.rel }
}

/// Conductance from `v` to infinity inside the subtree of `v`, computed on
/// the already developed arena down to relative depth `depth`.
pub fn conductance_to_infinity(arena: &TreeArena, v: NodeId, depth: u32) -> Result<ConductanceInterval> {
    let mut seeds = Seeds::for_arena(arena);
    let mut visited = 0;
    let mut view = arena;
    let e = evaluate(&mut view, v, depth, Horizon::Infinite, &mut seeds, None, &mut visited, u64::MAX)?
        .expect("no budget");
    let mut out = to_interval(e);
    if e.rel == EXACT {
        out.depth_used = depth;
    }
    Ok(out)
}

/// Wired conductance `C(v <-> s)` inside the subtree of `v` for every member
/// of the finite set `h`, returned in the order of `h`.
pub fn wired_conductances(arena: &TreeArena, h: &VertexSet) -> Result<Vec<f64>> {
    if !h.is_rooted_connected(arena) {
        return Err(Error::InvalidVertexSet("H must be connected and contain the root".into()));
    }
    let mut order: Vec<usize> = (0..h.len()).collect();
    let ids = h.as_slice();
    order.sort_by_key(|&i| std::cmp::Reverse(arena.depth(ids[i])));
    let mut cond = vec![0.0; h.len()];
    for i in order {
        let v = ids[i];
        if !arena.is_expanded(v) {
            return Err(Error::Undeveloped(v));
        }
        let mut c = 0.0;
        for w in arena.children(v) {
            c += match ids.binary_search(&w) {
                Ok(j) => cond[j] / (1.0 + cond[j]),
                Err(_) => 1.0,
            };
        }
        cond[i] = c;
    }
    Ok(cond)
}

/// Effective resistance between the root and the sink of the wired graph on `h`.
pub fn resistance_to_sink(arena: &TreeArena, h: &VertexSet) -> Result<f64> {
    let cond = wired_conductances(arena, h)?;
    Ok(1.0 / cond[0])
}

/// Whether conductances to infinity can be certified on this arena.
///
/// Lower bounds need a uniform positive floor on backbone conductances,
/// which exists only when every backbone vertex has at least two backbone
/// children (or the tree is explicit and finite).
pub fn infinite_horizon_certifiable(arena: &TreeArena) -> bool {
    arena.law().map_or(true, |law| law.prime_min() >= 2)
}

/// Outcome of comparing a uniform draw `u` with `1 / (1 + C(v))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coin {
    /// `u < 1/(1+C)`.
    Below,
    Above,
    Unresolved,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SolverStats {
    pub coins: u64,
    pub unresolved: u64,
    pub ties: u64,
    pub visited: u64,
}

/// Conductance oracle with lazy growth, memoization and interval refinement.
#[derive(Debug, Clone)]
pub struct ConductanceSolver {
    horizon: Horizon,
    seeds: Option<Seeds>,
    cache: Vec<Option<Entry>>,
    node_budget: u64,
    stats: SolverStats,
}

impl ConductanceSolver {
    pub fn new(horizon: Horizon) -> Self {
        Self { horizon, seeds: None, cache: Vec::new(), node_budget: DEFAULT_NODE_BUDGET, stats: SolverStats::default() }
    }

    pub fn with_node_budget(mut self, budget: u64) -> Self {
        self.node_budget = budget;
        self
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn stats(&self) -> SolverStats {
        self.stats
    }

    /// Forgets memoized values; required whenever the arena is reset or reseeded.
    pub fn clear(&mut self) {
        self.cache.clear();
        self.seeds = None;
    }

    fn seeds(&mut self, arena: &TreeArena) -> Seeds {
        self.seeds.take().unwrap_or_else(|| Seeds::for_arena(arena))
    }

    /// The common backbone conductance when the law pins it.
    #[inline]
    fn pinned(&mut self, arena: &TreeArena, v: NodeId) -> Option<f64> {
        if self.seeds.is_none() {
            self.seeds = Some(Seeds::for_arena(arena));
        }
        let c = self.seeds.as_ref().unwrap().pinned(self.horizon)?;
        arena.is_backbone(v).then_some(c)
    }

    /// Certified interval for `C(v)` at relative depth `rel`, growing the tree as needed.
    pub fn interval(&mut self, arena: &mut TreeArena, v: NodeId, rel: u32) -> ConductanceInterval {
        self.interval_within(arena, v, rel, u64::MAX).expect("unbounded budget")
    }

    /// As [`Self::interval`], giving up once `budget` vertices were visited.
    pub fn interval_within(
        &mut self,
        arena: &mut TreeArena,
        v: NodeId,
        rel: u32,
        budget: u64,
    ) -> Option<ConductanceInterval> {
        if let Some(c) = self.pinned(arena, v) {
            return Some(ConductanceInterval { lo: c, hi: c, depth_used: EXACT });
        }
        let mut seeds = self.seeds(arena);
        let mut visited = 0;
        let mut view = &mut *arena;
        let e = evaluate(&mut view, v, rel, self.horizon, &mut seeds, Some(&mut self.cache), &mut visited, budget)
            .expect("growing view never fails");
        self.seeds = Some(seeds);
        self.stats.visited += visited;
        e.map(to_interval)
    }

    /// Decides `u < 1/(1 + C(v))`, refining until the answer is certain.
    pub fn coin(&mut self, arena: &mut TreeArena, v: NodeId, u: f64) -> Coin {
        self.stats.coins += 1;
        if let Some(c) = self.pinned(arena, v) {
            return if u < 1.0 / (1.0 + c) { Coin::Below } else { Coin::Above };
        }
        let max_rel = match self.horizon {
            Horizon::Infinite => MAX_REFINE_DEPTH,
            Horizon::Ball(d) => (d + 1).saturating_sub(arena.depth(v)).min(MAX_REFINE_DEPTH),
        };
        let mut rel = match lookup(Some(&self.cache), v, 0) {
            Some(e) => e.rel.min(max_rel),
            None => 0,
        };
        let start_visited = self.stats.visited;
        loop {
            let spent = self.stats.visited - start_visited;
            let Some(iv) = self.interval_within(arena, v, rel, self.node_budget.saturating_sub(spent)) else {
                self.stats.unresolved += 1;
                return Coin::Unresolved;
            };
            let x_lo = if iv.hi.is_infinite() { 0.0 } else { (1.0 / (1.0 + iv.hi)).next_down() };
            let x_hi = (1.0 / (1.0 + iv.lo)).next_up();
            if u < x_lo {
                return Coin::Below;
            }
            if u >= x_hi {
                return Coin::Above;
            }
            let exact = iv.depth_used == EXACT;
            if exact || rel >= max_rel {
                if exact || matches!(self.horizon, Horizon::Ball(_)) {
                    // Remaining ambiguity is rounding only.
                    self.stats.ties += 1;
                    return if u < 1.0 / (1.0 + iv.midpoint()) { Coin::Below } else { Coin::Above };
                }
                self.stats.unresolved += 1;
                return Coin::Unresolved;
            }
            if self.stats.visited - start_visited > self.node_budget {
                self.stats.unresolved += 1;
                return Coin::Unresolved;
            }
            rel = (rel + (rel / 4).max(1)).min(max_rel);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gwtree::ROOT;
    use crate::offspring::OffspringDistribution;
    use std::sync::Arc;

    fn arena(spec: &str, seed: u64) -> TreeArena {
        let law = spec.parse::<OffspringDistribution>().unwrap().decompose().unwrap();
        TreeArena::new(Arc::new(law), seed)
    }

    /// Wired conductance of the full d-ary tree `levels` edges above the sink.
    fn full_wired(d: f64, levels: u32) -> f64 {
        let mut g = d;
        for _ in 1..levels {
            g = d * g / (1.0 + g);
        }
        g
    }

    #[test]
    fn binary_fixed_point_is_one() {
        let t = arena("explicit:0,0,1", 0);
        let iv = conductance_to_infinity(&t, ROOT, 60).unwrap();
        assert!(iv.contains(1.0) && iv.width() < 1e-9, "{iv:?}");
    }

    #[test]
    fn ternary_fixed_point_is_two() {
        let mut t = arena("explicit:0,0,0,1", 0);
        t.grow_to_depth(8).unwrap();
        let iv = conductance_to_infinity(&t, ROOT, 8).unwrap();
        assert!(iv.contains(2.0) && iv.width() < 1e-9, "{iv:?}");
    }

    #[test]
    fn undeveloped_subtree_is_an_error() {
        let t = arena("poisson:1.5", 4);
        assert!(matches!(conductance_to_infinity(&t, ROOT, 3), Err(Error::Undeveloped(0))));
    }

    #[test]
    fn finite_subtree_is_exactly_zero() {
        let t = TreeArena::explicit(&[2, 1, 0, 0], None).unwrap();
        let iv = conductance_to_infinity(&t, ROOT, 10).unwrap();
        assert_eq!((iv.lo, iv.hi), (0.0, 0.0));
        let mut g = arena("explicit:0.25,0,0.75", 8);
        g.grow_to_depth(3).unwrap();
        for v in 0..g.len() as NodeId {
            if !g.is_backbone(v) {
                let iv = conductance_to_infinity(&g, v, 2).unwrap();
                assert_eq!((iv.lo, iv.hi), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn intervals_nest_with_depth() {
        for spec in ["explicit:0.25,0,0.75", "poisson:1.5", "binomial:3,0.6"] {
            let mut t = arena(spec, 21);
            t.grow_to_depth(12).unwrap();
            let mut prev = conductance_to_infinity(&t, ROOT, 0).unwrap();
            for d in 1..=12 {
                let iv = conductance_to_infinity(&t, ROOT, d).unwrap();
                assert!(iv.lo >= prev.lo - 1e-12 && iv.hi <= prev.hi + 1e-12, "{spec} d={d} {prev:?} {iv:?}");
                prev = iv;
            }
        }
    }

    #[test]
    fn resistance_examples() {
        // Path of L vertices with the last one wired: R = L.
        for len in 1..6u32 {
            let mut counts = vec![1u32; len as usize];
            counts.push(0);
            let t = TreeArena::explicit(&counts, None).unwrap();
            let h = VertexSet::new((0..len).collect());
            assert!((resistance_to_sink(&t, &h).unwrap() - f64::from(len)).abs() < 1e-12);
        }
        // Root plus two children of the binary tree, children wired: 1 + 1/2... per child
        // edge one unit to the child, then two sink edges in parallel.
        let t = TreeArena::complete(2, 2);
        let h = VertexSet::new(vec![0, 1, 2]);
        let r = resistance_to_sink(&t, &h).unwrap();
        // Each child: 2 sink edges in parallel (R=1/2) in series with its edge (R=3/2);
        // two such branches in parallel give 3/4.
        assert!((r - 0.75).abs() < 1e-12, "{r}");
        let h1 = VertexSet::new(vec![0]);
        assert!((resistance_to_sink(&t, &h1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn deep_binary_resistance_tends_to_one() {
        let t = TreeArena::complete(2, 14);
        let h = VertexSet::new((0..t.len() as NodeId).filter(|&v| t.depth(v) < 14).collect());
        let r = resistance_to_sink(&t, &h).unwrap();
        assert!((r - 1.0).abs() < 1e-3, "{r}");
    }

    #[test]
    fn resistance_rejects_bad_sets() {
        let t = TreeArena::complete(2, 2);
        assert!(resistance_to_sink(&t, &VertexSet::new(vec![1, 2])).is_err());
        assert!(resistance_to_sink(&t, &VertexSet::new(vec![0, 3])).is_err());
    }

    /// Root, a path of `r0` edges to a split vertex, then two paths of
    /// `r1` and `r2` edges ending at the sink.
    fn split_network(r0: u32, r1: u32, r2: u32) -> (TreeArena, VertexSet) {
        let mut counts = vec![1u32; r0 as usize];
        counts.push(2);
        let mut wired = Vec::new();
        for j in 1..=r1.max(r2) {
            for len in [r1, r2] {
                if j <= len {
                    if j == len {
                        wired.push(counts.len() as NodeId);
                    }
                    counts.push(u32::from(j < len));
                }
            }
        }
        let t = TreeArena::explicit(&counts, None).unwrap();
        let h = VertexSet::new((0..counts.len() as NodeId).filter(|v| !wired.contains(v)).collect());
        (t, h)
    }

    #[test]
    fn harmonic_arithmetic_bound() {
        for (r0, r1, r2) in [(1u32, 1u32, 3u32), (2, 2, 2), (0, 4, 1), (3, 1, 7)] {
            let (t, h) = split_network(r0, r1, r2);
            let r = resistance_to_sink(&t, &h).unwrap();
            let (a, b) = (f64::from(r1), f64::from(r2));
            let exact = f64::from(r0) + a * b / (a + b);
            assert!((r - exact).abs() < 1e-12, "{r} vs {exact}");
            assert!(r <= f64::from(r0) + (a + b) / 4.0 + 1e-12);
        }
    }

    #[test]
    fn solver_matches_pure_recursion_in_ball() {
        let mut t = arena("poisson:1.5", 5);
        let d = 7;
        let ball = t.ball(d);
        let exact = wired_conductances(&t, &ball).unwrap();
        let mut solver = ConductanceSolver::new(Horizon::Ball(d));
        for (i, v) in ball.iter().enumerate().take(200) {
            let iv = solver.interval(&mut t, v, d + 2);
            assert!(iv.contains(exact[i]) && iv.width() < 1e-12, "{iv:?} {}", exact[i]);
            assert_eq!(iv.depth_used, EXACT);
        }
    }

    #[test]
    fn ball_seeds_bracket_truth() {
        let mut t = arena("explicit:0.25,0,0.75", 2);
        let d = 9;
        let ball = t.ball(d);
        let exact = wired_conductances(&t, &ball).unwrap();
        let mut seeds = Seeds::for_arena(&t);
        for (i, v) in ball.iter().enumerate() {
            let (lo, hi) = seeds.bounds(&t, v, Horizon::Ball(d));
            assert!(lo <= exact[i] && exact[i] <= hi, "v={v} {lo} {} {hi}", exact[i]);
        }
        assert!((full_wired(2.0, 1) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn coin_resolves_binary_exactly() {
        let mut t = arena("explicit:0,0,1", 0);
        t.ensure_children(ROOT);
        let mut s = ConductanceSolver::new(Horizon::Infinite);
        assert_eq!(s.coin(&mut t, 1, 0.4999), Coin::Below);
        assert_eq!(s.coin(&mut t, 1, 0.5001), Coin::Above);
        assert_eq!(s.stats().unresolved, 0);
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn coin_frequency_matches_conductance_in_ball() {
        let mut t = arena("poisson:1.5", 13);
        let d = 10;
        let ball = t.ball(d);
        let exact = wired_conductances(&t, &ball).unwrap();
        let mut s = ConductanceSolver::new(Horizon::Ball(d));
        let v = ball.as_slice()[0];
        let p = 1.0 / (1.0 + exact[0]);
        let n = 20_000;
        let hits = (0..n)
            .filter(|&i| s.coin(&mut t, v, crate::rng::Stream::uniform_at(1, 2, i)) == Coin::Below)
            .count();
        let f = hits as f64 / n as f64;
        assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "{f} vs {p}");
        assert_eq!(s.stats().unresolved, 0);
    }
}
