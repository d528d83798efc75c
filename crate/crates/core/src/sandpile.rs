//! Abelian sandpile on wired truncations `T*_H`.
//!
//! A finite vertex set `H` containing the root is turned into a
//! [`FiniteNetwork`]: every edge from `H` to its complement becomes a
//! separate edge to a single sink. Local vertex indices follow ascending arena
//! ids, so the root is always local vertex 0. The neighbor slots of a vertex
//! list its children in ascending id order followed by the parent edge.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gwtree::{NodeId, TreeArena, VertexSet, ROOT};
use crate::resistance::{Coin, ConductanceSolver, Horizon};
use crate::rng::{mix64, Stream};

/// Slot value standing for the sink.
pub const SINK: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct FiniteNetwork {
    ids: Vec<NodeId>,
    depth: Vec<u32>,
    offsets: Vec<u32>,
    slots: Vec<u32>,
}

impl FiniteNetwork {
    /// Wired truncation on `h`; every member of `h` must be expanded in `arena`.
    pub fn new(arena: &TreeArena, h: &VertexSet) -> Result<Self> {
        if !h.is_rooted_connected(arena) {
            return Err(Error::InvalidVertexSet("H must be connected and contain the root".into()));
        }
        let ids = h.as_slice().to_vec();
        let mut offsets = Vec::with_capacity(ids.len() + 1);
        let mut slots = Vec::new();
        let mut depth = Vec::with_capacity(ids.len());
        let mut kids = Vec::new();
        for &v in &ids {
            if !arena.is_expanded(v) {
                return Err(Error::Undeveloped(v));
            }
            offsets.push(slots.len() as u32);
            depth.push(arena.depth(v));
            kids.clear();
            kids.extend(arena.children(v));
            kids.sort_unstable();
            for &c in &kids {
                slots.push(ids.binary_search(&c).map_or(SINK, |j| j as u32));
            }
            if let Some(p) = arena.parent(v) {
                slots.push(ids.binary_search(&p).expect("H is connected") as u32);
            }
        }
        offsets.push(slots.len() as u32);
        if !slots.contains(&SINK) {
            return Err(Error::InvalidVertexSet("H has no edge to the sink".into()));
        }
        Ok(Self { ids, depth, offsets, slots })
    }

    /// The wired ball of radius `depth` around the root.
    pub fn ball(arena: &mut TreeArena, depth: u32) -> Result<Self> {
        let h = arena.ball(depth);
        Self::new(arena, &h)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Arena id of local vertex `v`.
    pub fn node(&self, v: usize) -> NodeId {
        self.ids[v]
    }

    pub fn local(&self, id: NodeId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn depth(&self, v: usize) -> u32 {
        self.depth[v]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> u32 {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Neighbor slots of `v` (local index or [`SINK`]).
    #[inline]
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.slots[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    /// Child slots of `v` (all slots except the parent edge).
    #[inline]
    pub fn child_slots(&self, v: usize) -> &[u32] {
        let n = self.neighbors(v);
        if v == 0 {
            n
        } else {
            &n[..n.len() - 1]
        }
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        (v != 0).then(|| *self.neighbors(v).last().unwrap() as usize)
    }

    pub fn sink_edges(&self, v: usize) -> u32 {
        self.neighbors(v).iter().filter(|&&s| s == SINK).count() as u32
    }

    /// Largest stable configuration `deg - 1` everywhere.
    pub fn max_stable(&self) -> Vec<u32> {
        (0..self.len()).map(|v| self.degree(v) - 1).collect()
    }

    pub fn is_stable(&self, heights: &[u32]) -> bool {
        heights.iter().enumerate().all(|(v, &h)| h < self.degree(v))
    }

    /// Exact wired conductance `C_H(v)` of every local vertex into its subtree.
    pub fn conductances(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.len()];
        for v in (0..self.len()).rev() {
            // Children have larger arena ids, hence larger local indices.
            c[v] = self
                .child_slots(v)
                .iter()
                .map(|&s| if s == SINK { 1.0 } else { c[s as usize] / (1.0 + c[s as usize]) })
                .sum();
        }
        c
    }

    /// Effective resistance between the root and the sink.
    pub fn resistance(&self) -> f64 {
        1.0 / self.conductances()[0]
    }
}

/// Processing order used by [`stabilize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToppleOrder {
    Fifo,
    /// Topple a uniformly chosen unstable vertex at each step.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stabilization {
    pub odometer: Vec<u64>,
    pub topplings: u64,
}

#[inline]
fn topple(net: &FiniteNetwork, heights: &mut [u32], v: usize) {
    heights[v] -= net.degree(v);
    for &s in net.neighbors(v) {
        if s != SINK {
            heights[s as usize] += 1;
        }
    }
}

/// Stabilizes `heights` in place and returns the odometer.
pub fn stabilize(net: &FiniteNetwork, heights: &mut [u32], order: ToppleOrder) -> Stabilization {
    let n = net.len();
    let mut odometer = vec![0u64; n];
    let mut topplings = 0u64;
    match order {
        ToppleOrder::Fifo => {
            let mut queued = vec![false; n];
            let mut queue: VecDeque<usize> = (0..n).filter(|&v| heights[v] >= net.degree(v)).collect();
            for &v in &queue {
                queued[v] = true;
            }
            while let Some(v) = queue.pop_front() {
                queued[v] = false;
                if heights[v] < net.degree(v) {
                    continue;
                }
                topple(net, heights, v);
                odometer[v] += 1;
                topplings += 1;
                for &w in net.neighbors(v).iter().chain(std::iter::once(&(v as u32))) {
                    if w != SINK && !queued[w as usize] && heights[w as usize] >= net.degree(w as usize) {
                        queued[w as usize] = true;
                        queue.push_back(w as usize);
                    }
                }
            }
        }
        ToppleOrder::Random(seed) => {
            let mut rng = Stream::new(seed, 0);
            let mut pos = vec![usize::MAX; n];
            let mut unstable: Vec<usize> = Vec::new();
            let refresh = |w: usize, heights: &[u32], unstable: &mut Vec<usize>, pos: &mut Vec<usize>| {
                let bad = heights[w] >= net.degree(w);
                if bad && pos[w] == usize::MAX {
                    pos[w] = unstable.len();
                    unstable.push(w);
                } else if !bad && pos[w] != usize::MAX {
                    let i = pos[w];
                    unstable.swap_remove(i);
                    if i < unstable.len() {
                        pos[unstable[i]] = i;
                    }
                    pos[w] = usize::MAX;
                }
            };
            for v in 0..n {
                refresh(v, heights, &mut unstable, &mut pos);
            }
            while !unstable.is_empty() {
                let v = unstable[rng.below(0, unstable.len() as u32) as usize];
                topple(net, heights, v);
                odometer[v] += 1;
                topplings += 1;
                refresh(v, heights, &mut unstable, &mut pos);
                for &w in net.neighbors(v) {
                    if w != SINK {
                        refresh(w as usize, heights, &mut unstable, &mut pos);
                    }
                }
            }
        }
    }
    Stabilization { odometer, topplings }
}

/// Adds one grain at `v` and stabilizes.
pub fn add_and_stabilize(net: &FiniteNetwork, heights: &mut [u32], v: usize, order: ToppleOrder) -> Stabilization {
    heights[v] += 1;
    stabilize(net, heights, order)
}

/// Burning rounds of every vertex, or `None` if the configuration is not recurrent.
pub fn burning_test(net: &FiniteNetwork, heights: &[u32]) -> Result<Option<Vec<u32>>> {
    if !net.is_stable(heights) {
        let v = (0..net.len()).find(|&v| heights[v] >= net.degree(v)).unwrap();
        return Err(Error::Unstable(v));
    }
    let n = net.len();
    let mut round = vec![0u32; n];
    let mut burnt = vec![false; n];
    // Unburnt neighbors, counting parallel sink edges as burnt from the start.
    let mut unburnt: Vec<u32> = (0..n).map(|v| net.degree(v) - net.sink_edges(v)).collect();
    let mut frontier: Vec<usize> = (0..n).filter(|&v| heights[v] >= unburnt[v]).collect();
    let mut r = 0;
    let mut done = 0;
    while !frontier.is_empty() {
        r += 1;
        for &v in &frontier {
            burnt[v] = true;
            round[v] = r;
        }
        done += frontier.len();
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in net.neighbors(v) {
                if w != SINK && !burnt[w as usize] {
                    let w = w as usize;
                    unburnt[w] -= 1;
                    if heights[w] >= unburnt[w] && heights[w] < unburnt[w] + 1 {
                        next.push(w);
                    }
                }
            }
        }
        frontier = next;
    }
    Ok((done == n).then_some(round))
}

pub fn is_recurrent(net: &FiniteNetwork, heights: &[u32]) -> bool {
    matches!(burning_test(net, heights), Ok(Some(_)))
}

/// Spanning tree of `T*_H` oriented towards the sink: `parent_slot[v]` is an
/// index into `net.neighbors(v)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpanningTree {
    pub parent_slot: Vec<u32>,
}

impl SpanningTree {
    /// Tree depth of every vertex measured from the sink.
    pub fn depths(&self, net: &FiniteNetwork) -> Result<Vec<u32>> {
        let n = net.len();
        if self.parent_slot.len() != n {
            return Err(Error::NotSpanningTree("wrong number of vertices".into()));
        }
        const UNSET: u32 = u32::MAX;
        let mut r = vec![UNSET; n];
        let mut path = Vec::new();
        for start in 0..n {
            let mut v = start;
            path.clear();
            let base = loop {
                if r[v] != UNSET {
                    break r[v];
                }
                if path.len() > n {
                    return Err(Error::NotSpanningTree("cycle".into()));
                }
                path.push(v);
                let slot = self.parent_slot[v] as usize;
                let Some(&next) = net.neighbors(v).get(slot) else {
                    return Err(Error::NotSpanningTree(format!("vertex {v} has no slot {slot}")));
                };
                if next == SINK {
                    break 0;
                }
                v = next as usize;
            };
            for (i, &w) in path.iter().rev().enumerate() {
                r[w] = base + 1 + i as u32;
            }
        }
        Ok(r)
    }
}

/// Maps a spanning tree to the recurrent configuration whose burning order it encodes.
pub fn tree_to_config(net: &FiniteNetwork, tree: &SpanningTree) -> Result<Vec<u32>> {
    let r = tree.depths(net)?;
    let level = |s: u32| if s == SINK { 0 } else { r[s as usize] };
    Ok((0..net.len())
        .map(|v| {
            let nb = net.neighbors(v);
            let m = nb.iter().filter(|&&s| level(s) < r[v]).count() as u32;
            let parent = tree.parent_slot[v] as usize;
            let rank = nb[..parent].iter().filter(|&&s| level(s) + 1 == r[v]).count() as u32;
            net.degree(v) - m + rank
        })
        .collect())
}

/// Inverse of [`tree_to_config`].
pub fn config_to_tree(net: &FiniteNetwork, heights: &[u32]) -> Result<SpanningTree> {
    let rounds = burning_test(net, heights)?.ok_or(Error::NotRecurrent)?;
    let level = |s: u32| if s == SINK { 0 } else { rounds[s as usize] };
    let mut parent_slot = Vec::with_capacity(net.len());
    for v in 0..net.len() {
        let nb = net.neighbors(v);
        let m = nb.iter().filter(|&&s| level(s) < rounds[v]).count() as u32;
        let rank = heights[v] + m - net.degree(v);
        let slot = nb
            .iter()
            .enumerate()
            .filter(|&(_, &s)| level(s) + 1 == rounds[v])
            .nth(rank as usize)
            .map(|(i, _)| i as u32)
            .ok_or(Error::NotRecurrent)?;
        parent_slot.push(slot);
    }
    Ok(SpanningTree { parent_slot })
}

/// Uniform recurrent configuration via a Wilson spanning tree.
pub fn sample_recurrent(net: &FiniteNetwork, rng: &mut Stream) -> Vec<u32> {
    let tree = crate::wsf::wilson_ust(net, rng);
    tree_to_config(net, &tree).expect("Wilson output is a spanning tree")
}

/// Every spanning tree of `T*_H`; intended for tiny networks only.
pub fn enumerate_spanning_trees(net: &FiniteNetwork) -> Vec<SpanningTree> {
    let n = net.len();
    let mut out = Vec::new();
    let mut slots = vec![0u32; n];
    loop {
        let t = SpanningTree { parent_slot: slots.clone() };
        if t.depths(net).is_ok() {
            out.push(t);
        }
        let mut i = 0;
        loop {
            if i == n {
                return out;
            }
            slots[i] += 1;
            if slots[i] < net.degree(i) {
                break;
            }
            slots[i] = 0;
            i += 1;
        }
    }
}

/// Every recurrent configuration by exhaustive burning; tiny networks only.
pub fn enumerate_recurrent(net: &FiniteNetwork) -> Vec<Vec<u32>> {
    let n = net.len();
    let mut out = Vec::new();
    let mut h = vec![0u32; n];
    loop {
        if is_recurrent(net, &h) {
            out.push(h.clone());
        }
        let mut i = 0;
        loop {
            if i == n {
                return out;
            }
            h[i] += 1;
            if h[i] < net.degree(i) {
                break;
            }
            h[i] = 0;
            i += 1;
        }
    }
}

/// The first wave cluster `W^1` as a rooted tree in BFS order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cluster {
    /// Arena ids.
    pub nodes: Vec<NodeId>,
    /// Local index of the parent, `u32::MAX` at the root.
    pub parent: Vec<u32>,
    /// Depth below the root of the tree.
    pub depth: Vec<u32>,
    /// The vertex has a neighbor below it (sink included) outside `W^1`.
    pub open: Vec<bool>,
}

/// Per-wave sizes of an avalanche.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Waves {
    pub sizes: Vec<u64>,
}

impl Waves {
    pub fn count(&self) -> u32 {
        self.sizes.len() as u32
    }

    pub fn total(&self) -> u64 {
        self.sizes.iter().sum()
    }
}

const INF: u32 = u32::MAX;

impl Cluster {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_depth(&self) -> u32 {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Peel distance: rounds after which a vertex falls in the inner boundary.
    fn peel_distance(&self) -> Vec<u32> {
        let n = self.len();
        let mut b = vec![INF; n];
        for v in (0..n).rev() {
            if self.open[v] {
                b[v] = 0;
            }
            if v > 0 {
                let p = self.parent[v] as usize;
                b[p] = b[p].min(b[v].saturating_add(1));
            }
        }
        b
    }

    /// Last wave index (0-based) containing each vertex.
    fn last_wave(&self) -> Vec<u32> {
        let b = self.peel_distance();
        let mut e = b.clone();
        for v in 1..self.len() {
            e[v] = e[v].min(e[self.parent[v] as usize]);
        }
        e
    }

    /// Waves obtained by repeatedly removing the inner vertex boundary.
    pub fn peel(&self) -> Waves {
        if self.is_empty() {
            return Waves::default();
        }
        let e = self.last_wave();
        let n_waves = e[0] as usize + 1;
        let mut sizes = vec![0u64; n_waves];
        for &last in &e {
            sizes[last as usize] += 1;
        }
        for i in (0..n_waves - 1).rev() {
            sizes[i] += sizes[i + 1];
        }
        Waves { sizes }
    }

    /// Largest `k` with the complete generation ball `T_k` inside the cluster,
    /// given the child count of each member.
    pub fn full_depth(&self, child_count: impl Fn(NodeId) -> u32) -> u32 {
        let mut inside = vec![0u32; self.len()];
        for v in 1..self.len() {
            inside[self.parent[v] as usize] += 1;
        }
        let mut k = INF;
        for v in 0..self.len() {
            if inside[v] < child_count(self.nodes[v]) {
                k = k.min(self.depth[v]);
            }
        }
        k
    }

    /// 1-based indices of the waves in which member `v` topples while some
    /// child of it does not.
    pub fn partial_waves(&self, v: usize) -> Vec<u32> {
        let e = self.last_wave();
        let mut child_min = if self.open[v] { 0 } else { INF };
        for w in v + 1..self.len() {
            if self.parent[w] as usize == v {
                child_min = child_min.min(e[w].saturating_add(1));
            }
        }
        (child_min.saturating_add(1)..=e[v].saturating_add(1)).collect()
    }
}

/// First wave cluster of a configuration on a finite network.
pub fn first_wave(net: &FiniteNetwork, heights: &[u32]) -> Cluster {
    let mut c = Cluster::default();
    if heights[0] + 1 != net.degree(0) {
        return c;
    }
    let mut local = vec![u32::MAX; net.len()];
    let mut queue = VecDeque::from([0usize]);
    local[0] = 0;
    c.nodes.push(net.node(0));
    c.parent.push(u32::MAX);
    c.depth.push(0);
    c.open.push(false);
    while let Some(v) = queue.pop_front() {
        let lv = local[v] as usize;
        for &s in net.child_slots(v) {
            if s == SINK || heights[s as usize] + 1 != net.degree(s as usize) {
                c.open[lv] = true;
                continue;
            }
            let w = s as usize;
            local[w] = c.nodes.len() as u32;
            c.nodes.push(net.node(w));
            c.parent.push(lv as u32);
            c.depth.push(c.depth[lv] + 1);
            c.open.push(false);
            queue.push_back(w);
        }
    }
    c
}

/// Adds a grain at the root and relaxes wave by wave, returning the local
/// vertices toppled in each wave. `heights` ends stabilized.
pub fn direct_waves(net: &FiniteNetwork, heights: &mut [u32]) -> Vec<Vec<usize>> {
    heights[0] += 1;
    let mut waves = Vec::new();
    let mut toppled = vec![0u32; net.len()];
    while heights[0] >= net.degree(0) {
        let mut wave = vec![0usize];
        topple(net, heights, 0);
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &w in net.neighbors(0) {
            if w != SINK && heights[w as usize] >= net.degree(w as usize) {
                queue.push_back(w as usize);
            }
        }
        while let Some(v) = queue.pop_front() {
            if v == 0 || heights[v] < net.degree(v) {
                continue;
            }
            topple(net, heights, v);
            wave.push(v);
            for &w in net.neighbors(v) {
                if w != SINK && w != 0 && heights[w as usize] >= net.degree(w as usize) {
                    queue.push_back(w as usize);
                }
            }
        }
        for &v in &wave {
            toppled[v] += 1;
            debug_assert!(toppled[v] as usize <= waves.len() + 1, "vertex toppled twice in one wave");
        }
        wave.sort_unstable();
        waves.push(wave);
    }
    waves
}

/// Summary of one avalanche started by adding a grain at the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AvalancheRecord {
    pub sample_id: u64,
    /// Total topplings.
    pub s: u64,
    /// Number of waves.
    pub n: u32,
    pub wave_sizes: Vec<u64>,
    /// Number of distinct vertices that toppled.
    pub av_size: u64,
    pub w1: u64,
    pub censored: bool,
    /// Deepest generation reached by the first wave.
    pub touch_depth: u32,
    pub depth_used: u32,
    pub seed: u64,
    /// Censored by the cluster size cap rather than by the boundary.
    pub capped: bool,
    /// A coin walk hit its cap; the record carries no data.
    pub unresolved: bool,
}

impl AvalancheRecord {
    pub fn from_waves(sample_id: u64, seed: u64, waves: &Waves) -> Self {
        Self {
            sample_id,
            s: waves.total(),
            n: waves.count(),
            av_size: waves.sizes.first().copied().unwrap_or(0),
            w1: waves.sizes.first().copied().unwrap_or(0),
            wave_sizes: waves.sizes.clone(),
            censored: false,
            touch_depth: 0,
            depth_used: 0,
            seed,
            capped: false,
            unresolved: false,
        }
    }

    pub const CSV_HEADER: &'static str = "sample_id,S,N,av_size,w1,censored,depth_used,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.sample_id,
            self.s,
            self.n,
            self.av_size,
            self.w1,
            u8::from(self.censored),
            self.depth_used,
            self.seed
        )
    }

    /// Checks the per-sample identities every record must satisfy.
    pub fn check(&self) -> Result<()> {
        let sum: u64 = self.wave_sizes.iter().sum();
        let nonincreasing = self.wave_sizes.windows(2).all(|w| w[0] >= w[1]);
        if sum != self.s || !nonincreasing || self.s < self.av_size || self.n as usize != self.wave_sizes.len() {
            return Err(Error::InvalidArgument(format!("inconsistent avalanche record {self:?}")));
        }
        Ok(())
    }
}

/// Role of a vertex in the top-down recurrent sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Root,
    /// Burns before its parent.
    Early,
    /// Needs its parent burnt first.
    Late,
}

/// Retries of the distinguished-child draw before a vertex is given up on.
const MAX_PICKS: u32 = 1 << 20;

/// Step cap of a single coin walk.
pub const WALK_CAP: u64 = 1 << 32;

const WALK_SALT: u64 = 0x5A17_C0FF_EE00_0003;

/// Counters of the coins used by the top-down sampler. `steps` counts walk
/// steps or, for solver coins, vertices visited by the solver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoinStats {
    pub coins: u64,
    pub steps: u64,
    pub unresolved: u64,
}

/// Simple random walk from `c` on its subtree inside the wired ball of radius
/// `depth`, plus the edge to its parent. Returns whether the walk reaches the
/// parent before the sink, an event of probability `1/(1+C(c))`, or `None`
/// after `WALK_CAP` steps.
pub fn walk_coin(arena: &mut TreeArena, c: NodeId, depth: u32, rng: &mut Stream, stats: &mut CoinStats) -> Option<bool> {
    stats.coins += 1;
    // Nodes first reached by the walk are dropped again afterwards.
    arena.checkpoint();
    let mut w = c;
    let mut out = None;
    let mut steps = 0;
    while steps < WALK_CAP {
        steps += 1;
        if arena.depth(w) > depth {
            out = Some(false);
            break;
        }
        arena.ensure_children(w);
        let k = arena.child_count(w);
        let i = rng.below(0, k + 1);
        if i < k {
            w = arena.child(w, i);
        } else if w == c {
            out = Some(true);
            break;
        } else {
            w = arena.parent(w).expect("walk stays below c");
        }
    }
    arena.rollback();
    stats.steps += steps;
    stats.unresolved += u64::from(out.is_none());
    out
}

/// How the sampler decides whether the walk from a child reaches its
/// parent before the sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoinMethod {
    /// Run the walk.
    Walk,
    /// Compare one uniform with certified bounds on `1/(1+C(c))`.
    Solver,
}

impl CoinMethod {
    /// Solver coins when every backbone vertex has at least two backbone
    /// children, which keeps certified lower bounds tight; walks otherwise.
    pub fn for_arena(arena: &TreeArena) -> Self {
        match arena.law() {
            Some(law) if law.prime_min() >= 2 => CoinMethod::Solver,
            _ => CoinMethod::Walk,
        }
    }
}

/// Coin state shared by the vertices of one sample.
#[derive(Debug, Clone)]
struct Coins {
    /// `None` until the first arena is seen.
    method: Option<CoinMethod>,
    stats: CoinStats,
    /// One memoizing solver per truncation depth.
    solvers: Vec<(u32, ConductanceSolver)>,
    arena_seed: u64,
    arena_len: usize,
}

impl Coins {
    fn new(method: Option<CoinMethod>) -> Self {
        Self { method, stats: CoinStats::default(), solvers: Vec::new(), arena_seed: 0, arena_len: 0 }
    }

    /// Drops memoized conductances when the arena was reseeded or reset.
    fn sync(&mut self, arena: &TreeArena) {
        if self.method.is_none() {
            self.method = Some(CoinMethod::for_arena(arena));
        }
        if arena.seed() != self.arena_seed || arena.len() < self.arena_len {
            for (_, s) in &mut self.solvers {
                s.clear();
            }
            self.arena_seed = arena.seed();
        }
        self.arena_len = arena.len();
    }

    fn solver(&mut self, depth: u32) -> &mut ConductanceSolver {
        let i = match self.solvers.iter().position(|(d, _)| *d == depth) {
            Some(i) => i,
            None => {
                self.solvers.push((depth, ConductanceSolver::new(Horizon::Ball(depth))));
                self.solvers.len() - 1
            }
        };
        &mut self.solvers[i].1
    }
}

/// Draws the coin of child `c` at attempt `attempt`.
#[inline]
fn coin(arena: &mut TreeArena, seed: u64, depth: u32, c: NodeId, attempt: u32, coins: &mut Coins) -> Option<bool> {
    let mut rng = Stream::new(seed ^ WALK_SALT, mix64(arena.key(c) ^ u64::from(attempt)));
    match coins.method.unwrap_or(CoinMethod::Walk) {
        CoinMethod::Walk => walk_coin(arena, c, depth, &mut rng, &mut coins.stats),
        CoinMethod::Solver => {
            let u = rng.uniform();
            let solver = coins.solver(depth);
            let before = solver.stats().visited;
            let out = solver.coin(arena, c, u);
            let visited = solver.stats().visited - before;
            coins.stats.coins += 1;
            coins.stats.steps += visited;
            match out {
                Coin::Below => Some(true),
                Coin::Above => Some(false),
                Coin::Unresolved => {
                    coins.stats.unresolved += 1;
                    None
                }
            }
        }
    }
}

/// Samples the roles of the children of `v` and the height of `v` under the
/// uniform recurrent measure of the wired ball `depth`. Returns `None` when a
/// coin walk hits its cap.
fn sample_vertex(
    arena: &mut TreeArena,
    coins: &mut Coins,
    seed: u64,
    depth: u32,
    v: NodeId,
    role: Role,
    kids: &mut Vec<NodeId>,
    late: &mut Vec<bool>,
) -> Option<u32> {
    arena.ensure_children(v);
    kids.clear();
    kids.extend(arena.children(v));
    kids.sort_unstable();
    late.clear();
    late.resize(kids.len(), false);
    let k = kids.len() as u32;
    let mut rng = Stream::new(seed, arena.key(v));
    // Children beyond the ball are sink edges and never wait for `v`.
    let inside = arena.depth(v) < depth;
    if inside {
        let mut skip = usize::MAX;
        if role != Role::Late {
            let mut picks = 0;
            loop {
                let i = rng.below(0, k) as usize;
                picks += 1;
                if !coin(arena, seed, depth, kids[i], picks, coins)? {
                    skip = i;
                    break;
                }
                if picks >= MAX_PICKS {
                    return None;
                }
            }
        }
        for i in 0..kids.len() {
            if i != skip {
                late[i] = coin(arena, seed, depth, kids[i], 0, coins)?;
            }
        }
    }
    let j = late.iter().filter(|&&b| b).count() as u32;
    Some(match role {
        Role::Root => j + rng.below(0, k - j),
        Role::Early => j + 1 + rng.below(0, k - j),
        Role::Late => j,
    })
}

#[inline]
fn is_max_height(role: Role, height: u32, k: u32) -> bool {
    match role {
        Role::Root => height + 1 == k,
        _ => height == k,
    }
}

/// Uniform recurrent configuration on the wired ball of radius `depth`,
/// sampled top-down with the same per-vertex streams as [`AvalancheSampler`].
/// Returns the network and its heights, or `None` on an unresolved coin.
pub fn sample_recurrent_ball(
    arena: &mut TreeArena,
    depth: u32,
    seed: u64,
) -> Result<Option<(FiniteNetwork, Vec<u32>)>> {
    sample_recurrent_ball_with(arena, depth, seed, CoinMethod::for_arena(arena))
}

/// As [`sample_recurrent_ball`] with the given coin method.
pub fn sample_recurrent_ball_with(
    arena: &mut TreeArena,
    depth: u32,
    seed: u64,
    method: CoinMethod,
) -> Result<Option<(FiniteNetwork, Vec<u32>)>> {
    let mut coins = Coins::new(Some(method));
    let net = FiniteNetwork::ball(arena, depth)?;
    let mut heights = vec![0u32; net.len()];
    let mut role = vec![Role::Root; net.len()];
    let (mut kids, mut late) = (Vec::new(), Vec::new());
    for v in 0..net.len() {
        let Some(h) = sample_vertex(arena, &mut coins, seed, depth, net.node(v), role[v], &mut kids, &mut late) else {
            return Ok(None);
        };
        heights[v] = h;
        for (i, &c) in kids.iter().enumerate() {
            if let Some(lc) = net.local(c) {
                role[lc] = if late[i] { Role::Late } else { Role::Early };
            }
        }
    }
    Ok(Some((net, heights)))
}

/// Outcome of sampling the first wave on one truncation.
#[derive(Debug, Clone)]
pub struct FirstWave {
    pub cluster: Cluster,
    /// The cluster reached the two outermost generations of the ball.
    pub touches_boundary: bool,
    /// Exploration stopped at the size cap; unexplored vertices count as open.
    pub capped: bool,
}

/// Avalanche sampler with depth doubling for censored samples.
#[derive(Debug, Clone)]
pub struct AvalancheSampler {
    depth: u32,
    max_doublings: u32,
    cluster_cap: usize,
    coins: Coins,
    kids: Vec<NodeId>,
    late: Vec<bool>,
    pending: Vec<(NodeId, u32, Role)>,
}

impl AvalancheSampler {
    pub fn new(depth: u32, max_doublings: u32) -> Self {
        Self {
            depth,
            max_doublings,
            cluster_cap: usize::MAX,
            coins: Coins::new(None),
            kids: Vec::new(),
            late: Vec::new(),
            pending: Vec::new(),
        }
    }

    /// Stops first-wave exploration once it holds `cap` vertices; such
    /// samples are recorded as censored without further doubling.
    pub fn with_cluster_cap(mut self, cap: usize) -> Self {
        self.cluster_cap = cap.max(1);
        self
    }

    /// Fixes the coin method instead of choosing it from the first arena.
    pub fn with_coin_method(mut self, method: CoinMethod) -> Self {
        self.coins = Coins::new(Some(method));
        self
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn stats(&self) -> CoinStats {
        self.coins.stats
    }

    /// First wave under the uniform recurrent measure of the wired ball at
    /// doubling level `level`. Returns `None` on an unresolved coin.
    pub fn first_wave(&mut self, arena: &mut TreeArena, seed: u64, level: u32) -> Option<FirstWave> {
        self.coins.sync(arena);
        let out = self.grow_first_wave(arena, seed, level);
        self.coins.arena_len = arena.len();
        out
    }

    fn grow_first_wave(&mut self, arena: &mut TreeArena, seed: u64, level: u32) -> Option<FirstWave> {
        let depth = self.depth << level;
        let mut cluster = Cluster::default();
        self.pending.clear();
        self.pending.push((ROOT, u32::MAX, Role::Root));
        let mut touches = false;
        let mut head = 0;
        while head < self.pending.len() {
            if cluster.nodes.len() >= self.cluster_cap {
                for &(_, p, _) in &self.pending[head..] {
                    cluster.open[p as usize] = true;
                }
                return Some(FirstWave { cluster, touches_boundary: touches, capped: true });
            }
            let (v, parent_local, role) = self.pending[head];
            head += 1;
            let h = sample_vertex(arena, &mut self.coins, seed, depth, v, role, &mut self.kids, &mut self.late)?;
            let k = self.kids.len() as u32;
            if !is_max_height(role, h, k) {
                if parent_local != u32::MAX {
                    cluster.open[parent_local as usize] = true;
                }
                continue;
            }
            let local = cluster.nodes.len() as u32;
            let d = arena.depth(v);
            cluster.nodes.push(v);
            cluster.parent.push(parent_local);
            cluster.depth.push(d);
            cluster.open.push(false);
            if d + 1 >= depth {
                touches = true;
            }
            if d < depth {
                for (i, &c) in self.kids.iter().enumerate() {
                    let r = if self.late[i] { Role::Late } else { Role::Early };
                    self.pending.push((c, local, r));
                }
            } else if k > 0 {
                cluster.open[local as usize] = true;
            }
        }
        Some(FirstWave { cluster, touches_boundary: touches, capped: false })
    }

    /// Avalanche at the root for sample `sample_id` with seed `seed`,
    /// retried on doubled truncations while the first wave is censored.
    pub fn sample(&mut self, arena: &mut TreeArena, sample_id: u64, seed: u64) -> AvalancheRecord {
        let mut level = 0;
        loop {
            let depth = self.depth << level;
            let Some(fw) = self.first_wave(arena, seed, level) else {
                let mut rec = AvalancheRecord::from_waves(sample_id, seed, &Waves::default());
                rec.unresolved = true;
                rec.depth_used = depth;
                return rec;
            };
            if fw.touches_boundary && !fw.capped && level < self.max_doublings {
                level += 1;
                continue;
            }
            let waves = fw.cluster.peel();
            let mut rec = AvalancheRecord::from_waves(sample_id, seed, &waves);
            rec.censored = fw.touches_boundary || fw.capped;
            rec.capped = fw.capped;
            rec.touch_depth = fw.cluster.max_depth();
            rec.depth_used = depth;
            return rec;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Explicit tree from BFS child counts with every vertex in `H` except the
    /// listed ones.
    fn net_from(counts: &[u32], outside: &[NodeId]) -> FiniteNetwork {
        let t = TreeArena::explicit(counts, None).unwrap();
        let h = VertexSet::new((0..counts.len() as NodeId).filter(|v| !outside.contains(v)).collect());
        FiniteNetwork::new(&t, &h).unwrap()
    }

    fn single() -> FiniteNetwork {
        net_from(&[1, 0], &[1])
    }

    #[test]
    fn single_vertex_topples_once() {
        let net = single();
        let mut h = vec![1];
        let st = stabilize(&net, &mut h, ToppleOrder::Fifo);
        assert_eq!((h, st.odometer), (vec![0], vec![1]));
        let mut z = vec![0];
        assert_eq!(stabilize(&net, &mut z, ToppleOrder::Fifo).topplings, 0);
    }

    #[test]
    fn full_binary_ball_topples_everything_once() {
        let t = TreeArena::complete(2, 3);
        let h = VertexSet::new((0..7).collect());
        let net = FiniteNetwork::new(&t, &h).unwrap();
        let mut eta = net.max_stable();
        let waves = direct_waves(&net, &mut eta);
        assert_eq!(waves[0], (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn burning_examples() {
        let net = single();
        assert_eq!(burning_test(&net, &[0]).unwrap(), Some(vec![1]));
        // Path o - v with only v wired: deg(o) = 1, deg(v) = 2.
        let path = net_from(&[1, 1, 0], &[2]);
        assert_eq!(burning_test(&path, &[0, 1]).unwrap(), Some(vec![2, 1]));
        assert_eq!(burning_test(&path, &[0, 0]).unwrap(), None);
        assert!(burning_test(&path, &[1, 0]).is_err());
        let t = TreeArena::complete(2, 4);
        let ball = VertexSet::new((0..15).collect());
        let net = FiniteNetwork::new(&t, &ball).unwrap();
        let rounds = burning_test(&net, &net.max_stable()).unwrap().unwrap();
        for v in 0..net.len() {
            assert_eq!(rounds[v], 4 - net.depth(v));
        }
    }

    #[test]
    fn single_wired_vertex_bijection() {
        let net = single();
        let tree = SpanningTree { parent_slot: vec![0] };
        assert_eq!(tree_to_config(&net, &tree).unwrap(), vec![0]);
    }

    #[test]
    fn bijection_on_binary_depth_two() {
        let t = TreeArena::complete(2, 3);
        let net = FiniteNetwork::new(&t, &VertexSet::new((0..7).collect())).unwrap();
        let trees = enumerate_spanning_trees(&net);
        let recurrent = enumerate_recurrent(&net);
        assert_eq!(trees.len(), recurrent.len());
        let mut images = std::collections::HashSet::new();
        for tree in &trees {
            let cfg = tree_to_config(&net, tree).unwrap();
            let rounds = burning_test(&net, &cfg).unwrap().expect("image recurrent");
            assert_eq!(rounds, tree.depths(&net).unwrap());
            assert_eq!(&config_to_tree(&net, &cfg).unwrap(), tree);
            assert!(images.insert(cfg));
        }
    }

    #[test]
    fn spanning_tree_rejects_cycles() {
        let path = net_from(&[1, 1, 0], &[2]);
        // o points to v and v points back to o.
        let bad = SpanningTree { parent_slot: vec![0, 1] };
        assert!(tree_to_config(&path, &bad).is_err());
    }

    #[test]
    fn peeling_examples() {
        // W1 = {o, a, b} on the binary tree with both grandchildren sets outside.
        let c = Cluster {
            nodes: vec![0, 1, 2],
            parent: vec![u32::MAX, 0, 0],
            depth: vec![0, 1, 1],
            open: vec![false, true, true],
        };
        let w = c.peel();
        assert_eq!(w.sizes, vec![3, 1]);
        assert_eq!(c.full_depth(|_| 2), 1);
        assert_eq!(c.partial_waves(0), vec![2]);
        assert!(Cluster::default().peel().sizes.is_empty());
    }

    #[test]
    fn peeling_matches_direct_toppling_on_wilson_samples() {
        let mut rng = Stream::new(3, 0);
        for counts in [vec![2, 1, 2, 0, 1, 0, 0], vec![3, 0, 2, 1, 0, 0, 0]] {
            let t = TreeArena::explicit(&counts, None).unwrap();
            for outside in [vec![], vec![6], vec![3, 4, 5, 6]] {
                let h = VertexSet::new((0..counts.len() as NodeId).filter(|v| !outside.contains(v)).collect());
                let Ok(net) = FiniteNetwork::new(&t, &h) else { continue };
                for _ in 0..200 {
                    let eta = sample_recurrent(&net, &mut rng);
                    let peeled = first_wave(&net, &eta).peel();
                    let mut e2 = eta.clone();
                    let direct = direct_waves(&net, &mut e2);
                    let sizes: Vec<u64> = direct.iter().map(|w| w.len() as u64).collect();
                    assert_eq!(peeled.sizes, sizes, "{eta:?}");
                    assert!(is_recurrent(&net, &e2));
                }
            }
        }
    }

    #[test]
    fn random_orders_agree() {
        let t = TreeArena::complete(3, 3);
        let net = FiniteNetwork::new(&t, &VertexSet::new((0..13).collect())).unwrap();
        let mut rng = Stream::new(1, 1);
        for _ in 0..20 {
            let start: Vec<u32> = (0..net.len()).map(|v| rng.below(0, 3 * net.degree(v))).collect();
            let mut a = start.clone();
            let ref_st = stabilize(&net, &mut a, ToppleOrder::Fifo);
            for s in 0..5 {
                let mut b = start.clone();
                let st = stabilize(&net, &mut b, ToppleOrder::Random(s));
                assert_eq!((&a, &ref_st), (&b, &st));
            }
        }
    }

    fn random_arena(spec: &str, seed: u64) -> TreeArena {
        let law = spec.parse::<crate::OffspringDistribution>().unwrap().decompose().unwrap();
        TreeArena::new(std::sync::Arc::new(law), seed)
    }

    #[test]
    fn coin_methods_hit_the_exact_probability() {
        for spec in ["explicit:0,0,0.5,0.5", "explicit:0.25,0,0.75"] {
            let mut t = random_arena(spec, 3);
            let depth = 6;
            t.ensure_children(ROOT);
            let c = t.children(ROOT).find(|&x| t.is_backbone(x)).unwrap();
            let iv = ConductanceSolver::new(Horizon::Ball(depth)).interval(&mut t, c, depth + 1);
            assert!(iv.width() < 1e-12, "{iv:?}");
            let p = 1.0 / (1.0 + iv.lo);
            let n = 20_000;
            for method in [CoinMethod::Walk, CoinMethod::Solver] {
                let mut coins = Coins::new(Some(method));
                coins.sync(&t);
                let hits = (0..n).filter(|&s| coin(&mut t, s, depth, c, 0, &mut coins).unwrap()).count();
                let f = hits as f64 / n as f64;
                let sd = (p * (1.0 - p) / n as f64).sqrt();
                assert!(p < 0.9 && (f - p).abs() < 4.0 * sd, "{spec} {method:?}: {f} vs {p}");
            }
        }
    }

    #[test]
    fn lazy_first_wave_matches_the_full_ball() {
        for method in [CoinMethod::Walk, CoinMethod::Solver] {
            for s in 0..40u64 {
                let mut t = random_arena("explicit:0.25,0,0.75", s);
                let (net, h) = sample_recurrent_ball_with(&mut t, 5, s, method).unwrap().unwrap();
                let full = first_wave(&net, &h);
                let mut sampler = AvalancheSampler::new(5, 0).with_coin_method(method);
                let lazy = sampler.first_wave(&mut t, s, 0).unwrap();
                assert_eq!(lazy.cluster, full, "seed {s} {method:?}");
            }
        }
    }

    #[test]
    fn coin_method_follows_the_law() {
        assert_eq!(CoinMethod::for_arena(&random_arena("explicit:0,0,1", 0)), CoinMethod::Solver);
        assert_eq!(CoinMethod::for_arena(&random_arena("poisson:1.5", 0)), CoinMethod::Walk);
        assert_eq!(CoinMethod::for_arena(&TreeArena::complete(2, 3)), CoinMethod::Walk);
    }
}
