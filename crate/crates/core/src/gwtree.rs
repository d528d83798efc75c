//! Lazily grown Galton-Watson trees built from the backbone decomposition.
//!
//! The root is always a backbone vertex, so every tree produced here is
//! conditioned on survival. Children of a vertex are sampled from a stream
//! keyed by the vertex's position key, which makes the realized tree a pure
//! function of the seed regardless of the order in which it is explored.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::offspring::DecomposedLaw;
use crate::rng::{child_key, derive_seed, Purpose, Stream, ROOT_KEY};

/// Dense index of a vertex inside one arena.
pub type NodeId = u32;

pub const ROOT: NodeId = 0;
const NONE: NodeId = NodeId::MAX;

/// Largest bush that `grow_to_depth` will materialize.
pub const BUSH_CAP: usize = 1_000_000;

#[derive(Debug, Clone)]
struct Node {
    parent: NodeId,
    depth: u32,
    key: u64,
    backbone: bool,
    sampled: bool,
    n_extinct: u32,
    n_surviving: u32,
    extinct_start: NodeId,
    surviving_start: NodeId,
}

impl Node {
    fn new(parent: NodeId, depth: u32, key: u64, backbone: bool) -> Self {
        Self {
            parent,
            depth,
            key,
            backbone,
            sampled: false,
            n_extinct: 0,
            n_surviving: 0,
            extinct_start: NONE,
            surviving_start: NONE,
        }
    }
}

/// Rooted tree stored flat; children of a vertex occupy at most two
/// contiguous id ranges (extinct children first, then surviving ones).
#[derive(Debug, Clone)]
pub struct TreeArena {
    nodes: Vec<Node>,
    law: Option<Arc<DecomposedLaw>>,
    seed: u64,
    stream_seed: u64,
    /// Arena length at the open checkpoint.
    mark: Option<usize>,
    /// Nodes older than the checkpoint that gained children since.
    undo: Vec<NodeId>,
}

impl TreeArena {
    /// A random tree with law `law`, regenerated deterministically from `seed`.
    pub fn new(law: Arc<DecomposedLaw>, seed: u64) -> Self {
        let mut arena = Self { nodes: Vec::new(), law: Some(law), seed, stream_seed: 0, mark: None, undo: Vec::new() };
        arena.reseed(seed);
        arena
    }

    /// A fixed finite tree given by child counts in breadth-first order.
    ///
    /// Vertex `i` of the input becomes node `i`. All vertices are marked as
    /// non-backbone unless `backbone` says otherwise.
    pub fn explicit(child_counts: &[u32], backbone: Option<&[bool]>) -> Result<Self> {
        if child_counts.is_empty() {
            return Err(Error::InvalidArgument("explicit tree needs a root".into()));
        }
        if let Some(b) = backbone {
            if b.len() != child_counts.len() {
                return Err(Error::InvalidArgument("backbone flags length mismatch".into()));
            }
        }
        let flag = |i: usize| backbone.map_or(false, |b| b[i]);
        let mut nodes = vec![Node::new(NONE, 0, ROOT_KEY, flag(0))];
        let mut next = 1usize;
        for (i, &c) in child_counts.iter().enumerate() {
            if i >= nodes.len() {
                return Err(Error::InvalidArgument("child counts do not describe a tree".into()));
            }
            let depth = nodes[i].depth + 1;
            let key = nodes[i].key;
            nodes[i].sampled = true;
            nodes[i].n_extinct = c;
            nodes[i].extinct_start = next as NodeId;
            nodes[i].surviving_start = next as NodeId + c;
            for j in 0..c {
                let id = next + j as usize;
                if id >= child_counts.len() {
                    return Err(Error::InvalidArgument("child counts reference missing vertices".into()));
                }
                nodes.push(Node::new(i as NodeId, depth, child_key(key, j), flag(id)));
            }
            next += c as usize;
        }
        if nodes.len() != child_counts.len() {
            return Err(Error::InvalidArgument("child counts do not describe a connected tree".into()));
        }
        Ok(Self { nodes, law: None, seed: 0, stream_seed: 0, mark: None, undo: Vec::new() })
    }

    /// Complete `d`-ary tree truncated at depth `depth` (explicit, finite).
    pub fn complete(d: u32, depth: u32) -> Self {
        let mut counts = Vec::new();
        let mut level = 1usize;
        for gen in 0..=depth {
            let c = if gen < depth { d } else { 0 };
            counts.extend(std::iter::repeat(c).take(level));
            level *= d as usize;
        }
        Self::explicit(&counts, None).expect("complete tree is well formed")
    }

    pub fn law(&self) -> Option<&Arc<DecomposedLaw>> {
        self.law.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Drops everything but the root and switches to a new seed.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.stream_seed = derive_seed(seed, Purpose::Tree, 0);
        self.reset();
    }

    /// Drops everything but the root. A random tree regrows identically.
    pub fn reset(&mut self) {
        self.mark = None;
        self.undo.clear();
        if self.law.is_some() {
            self.nodes.clear();
            self.nodes.push(Node::new(NONE, 0, ROOT_KEY, true));
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        let p = self.nodes[v as usize].parent;
        (p != NONE).then_some(p)
    }

    #[inline]
    pub fn depth(&self, v: NodeId) -> u32 {
        self.nodes[v as usize].depth
    }

    #[inline]
    pub fn key(&self, v: NodeId) -> u64 {
        self.nodes[v as usize].key
    }

    /// Whether `v` has an infinite line of descent.
    #[inline]
    pub fn is_backbone(&self, v: NodeId) -> bool {
        self.nodes[v as usize].backbone
    }

    /// All children of `v` are present in the arena.
    #[inline]
    pub fn is_expanded(&self, v: NodeId) -> bool {
        let n = &self.nodes[v as usize];
        n.sampled
            && (n.n_extinct == 0 || n.extinct_start != NONE)
            && (n.n_surviving == 0 || n.surviving_start != NONE)
    }

    /// Children of an expanded vertex in ascending-id order within each range.
    #[inline]
    pub fn children(&self, v: NodeId) -> Children {
        let n = &self.nodes[v as usize];
        debug_assert!(self.is_expanded(v), "children of unexpanded node {v}");
        let ext = if n.n_extinct > 0 { n.extinct_start } else { 0 };
        let sur = if n.n_surviving > 0 { n.surviving_start } else { 0 };
        Children { first: ext..ext + n.n_extinct, second: sur..sur + n.n_surviving }
    }

    /// Number of children of an expanded vertex (`deg+`).
    #[inline]
    pub fn child_count(&self, v: NodeId) -> u32 {
        let n = &self.nodes[v as usize];
        n.n_extinct + n.n_surviving
    }

    /// `deg(v)`: children plus the parent edge, except at the root.
    #[inline]
    pub fn degree(&self, v: NodeId) -> u32 {
        self.child_count(v) + u32::from(v != ROOT)
    }

    /// Samples the child counts of `v` without materializing children.
    fn sample_counts(&mut self, v: NodeId) {
        let idx = v as usize;
        if self.nodes[idx].sampled {
            return;
        }
        let law = self.law.as_ref().expect("explicit trees are fully sampled");
        let u = Stream::uniform_at(self.stream_seed, self.nodes[idx].key, 0);
        let (k, m) = if self.nodes[idx].backbone { law.sample_backbone(u) } else { (0, law.sample_bush(u)) };
        let n = &mut self.nodes[idx];
        n.sampled = true;
        n.n_surviving = k;
        n.n_extinct = m;
    }

    fn materialize(&mut self, v: NodeId, surviving: bool) {
        self.sample_counts(v);
        let idx = v as usize;
        let (count, start, offset, flag) = {
            let n = &self.nodes[idx];
            if surviving {
                (n.n_surviving, n.surviving_start, n.n_extinct, true)
            } else {
                (n.n_extinct, n.extinct_start, 0, false)
            }
        };
        if count == 0 || start != NONE {
            return;
        }
        if self.mark.is_some_and(|m| (v as usize) < m) {
            self.undo.push(v);
        }
        let first = self.nodes.len() as NodeId;
        let depth = self.nodes[idx].depth + 1;
        let key = self.nodes[idx].key;
        self.nodes.reserve(count as usize);
        for i in 0..count {
            self.nodes.push(Node::new(v, depth, child_key(key, offset + i), flag));
        }
        if surviving {
            self.nodes[idx].surviving_start = first;
        } else {
            self.nodes[idx].extinct_start = first;
        }
    }

    /// Materializes all children of `v`.
    #[inline]
    pub fn ensure_children(&mut self, v: NodeId) {
        if !self.is_expanded(v) {
            self.materialize(v, false);
            self.materialize(v, true);
        }
    }

    /// The `i`-th child of an expanded vertex, in [`Self::children`] order.
    #[inline]
    pub fn child(&self, v: NodeId, i: u32) -> NodeId {
        let n = &self.nodes[v as usize];
        if i < n.n_extinct {
            n.extinct_start + i
        } else {
            n.surviving_start + (i - n.n_extinct)
        }
    }

    /// Starts recording growth so that [`Self::rollback`] can discard it.
    pub fn checkpoint(&mut self) {
        self.mark = Some(self.nodes.len());
        self.undo.clear();
    }

    /// Drops every node materialized since the checkpoint and closes it. The
    /// random tree is unchanged: dropped nodes regrow identically on demand.
    pub fn rollback(&mut self) {
        let Some(mark) = self.mark.take() else {
            return;
        };
        self.nodes.truncate(mark);
        for &v in &self.undo {
            let n = &mut self.nodes[v as usize];
            if n.extinct_start as usize >= mark {
                n.extinct_start = NONE;
            }
            if n.surviving_start as usize >= mark {
                n.surviving_start = NONE;
            }
        }
        self.undo.clear();
    }

    /// Develops the backbone to depth `depth` and fully samples the bush
    /// hanging at every developed backbone vertex.
    pub fn grow_to_depth(&mut self, depth: u32) -> Result<()> {
        if self.law.is_none() {
            return Ok(());
        }
        let mut level = vec![ROOT];
        while !level.is_empty() {
            let mut next = Vec::new();
            for &v in &level {
                self.materialize(v, false);
                self.fill_bush(v)?;
                if self.depth(v) < depth {
                    self.materialize(v, true);
                    let n = &self.nodes[v as usize];
                    next.extend(n.surviving_start..n.surviving_start + n.n_surviving);
                }
            }
            level = next;
        }
        Ok(())
    }

    fn fill_bush(&mut self, v: NodeId) -> Result<()> {
        let n = &self.nodes[v as usize];
        if n.n_extinct == 0 {
            return Ok(());
        }
        let mut stack: Vec<NodeId> = (n.extinct_start..n.extinct_start + n.n_extinct).collect();
        let mut size = 0usize;
        while let Some(w) = stack.pop() {
            size += 1;
            if size > BUSH_CAP {
                return Err(Error::BushCapExceeded { node: v, cap: BUSH_CAP });
            }
            self.ensure_children(w);
            stack.extend(self.children(w));
        }
        Ok(())
    }

    /// Deepest developed depth among materialized vertices.
    pub fn developed_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// The backbone vertex nearest the root with at least two backbone children.
    pub fn find_vstar(&mut self) -> NodeId {
        let mut v = ROOT;
        loop {
            self.ensure_children(v);
            let mut surviving = self.children(v).filter(|&c| self.is_backbone(c));
            let first = surviving.next();
            let second = surviving.next();
            match (first, second) {
                (Some(_), Some(_)) => return v,
                (Some(c), None) => v = c,
                // Only reachable on explicit trees without a branching backbone vertex.
                (None, _) => return v,
            }
        }
    }

    /// All vertices at depth `<= depth`; children of the deepest level are
    /// materialized too so the wired ball is fully known.
    pub fn ball(&mut self, depth: u32) -> VertexSet {
        let mut out = vec![ROOT];
        let mut i = 0;
        while i < out.len() {
            let v = out[i];
            i += 1;
            self.ensure_children(v);
            if self.depth(v) < depth {
                out.extend(self.children(v));
            }
        }
        VertexSet::new(out)
    }

    /// Edge, outer vertex and inner vertex boundaries of `set`.
    pub fn boundaries(&mut self, set: &VertexSet) -> Boundaries {
        let mut edges = Vec::new();
        let mut internal = Vec::new();
        for v in set.iter() {
            self.ensure_children(v);
            let before = edges.len();
            if let Some(p) = self.parent(v) {
                if !set.contains(p) {
                    edges.push((v, p));
                }
            }
            for c in self.children(v) {
                if !set.contains(c) {
                    edges.push((v, c));
                }
            }
            if edges.len() > before {
                internal.push(v);
            }
        }
        let outer = VertexSet::new(edges.iter().map(|&(_, u)| u).collect());
        Boundaries { edges, vertex: outer, internal: VertexSet::new(internal) }
    }

    /// Line-oriented dump: `id parent depth backbone nchildren`.
    pub fn dump(&self) -> String {
        let mut out = String::with_capacity(self.nodes.len() * 16);
        for (id, n) in self.nodes.iter().enumerate() {
            let parent = if n.parent == NONE { -1 } else { i64::from(n.parent) };
            let materialized = (if n.extinct_start != NONE { n.n_extinct } else { 0 })
                + (if n.surviving_start != NONE { n.n_surviving } else { 0 });
            out.push_str(&format!(
                "{id} {parent} {} {} {materialized}\n",
                n.depth,
                u8::from(n.backbone)
            ));
        }
        out
    }
}

/// Iterator over the children of a vertex.
#[derive(Debug, Clone)]
pub struct Children {
    first: std::ops::Range<NodeId>,
    second: std::ops::Range<NodeId>,
}

impl Iterator for Children {
    type Item = NodeId;

    #[inline]
    fn next(&mut self) -> Option<NodeId> {
        self.first.next().or_else(|| self.second.next())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.first.len() + self.second.len();
        (n, Some(n))
    }
}

impl ExactSizeIterator for Children {}

/// Sorted set of vertex ids of one arena.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VertexSet {
    ids: Vec<NodeId>,
}

impl VertexSet {
    pub fn new(mut ids: Vec<NodeId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self { ids }
    }

    #[inline]
    pub fn contains(&self, v: NodeId) -> bool {
        self.ids.binary_search(&v).is_ok()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids.iter().copied()
    }

    pub fn as_slice(&self) -> &[NodeId] {
        &self.ids
    }

    /// Contains the root and is connected (every member's parent is a member).
    pub fn is_rooted_connected(&self, arena: &TreeArena) -> bool {
        self.contains(ROOT) && self.iter().all(|v| arena.parent(v).map_or(true, |p| self.contains(p)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Boundaries {
    /// Edges `(inside, outside)`.
    pub edges: Vec<(NodeId, NodeId)>,
    pub vertex: VertexSet,
    pub internal: VertexSet,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::OffspringDistribution;

    fn law(spec: &str) -> Arc<DecomposedLaw> {
        Arc::new(spec.parse::<OffspringDistribution>().unwrap().decompose().unwrap())
    }

    #[test]
    fn binary_depth_three_has_fifteen_nodes() {
        let mut t = TreeArena::new(law("explicit:0,0,1"), 5);
        t.grow_to_depth(3).unwrap();
        assert_eq!(t.len(), 15);
        assert!((0..15).all(|v| t.is_backbone(v)));
        assert_eq!(t.find_vstar(), ROOT);
    }

    #[test]
    fn depth_zero_is_root_plus_bush() {
        let mut t = TreeArena::new(law("poisson:1.5"), 11);
        t.grow_to_depth(0).unwrap();
        assert!(t.is_backbone(ROOT));
        assert!((1..t.len() as NodeId).all(|v| !t.is_backbone(v)));
    }

    #[test]
    fn root_backbone_children_follow_prime() {
        let l = law("explicit:0.25,0,0.75");
        let n = 40_000;
        let mut two = 0;
        for s in 0..n {
            let mut t = TreeArena::new(l.clone(), s);
            t.grow_to_depth(1).unwrap();
            let bb = t.children(ROOT).filter(|&c| t.is_backbone(c)).count();
            assert!(bb == 1 || bb == 2);
            assert_eq!(t.child_count(ROOT), 2);
            two += usize::from(bb == 2);
        }
        let f = two as f64 / n as f64;
        assert!((f - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{f}");
    }

    #[test]
    fn growth_order_does_not_change_tree() {
        let l = law("geometric:0.4");
        let mut a = TreeArena::new(l.clone(), 99);
        a.grow_to_depth(4).unwrap();
        a.grow_to_depth(7).unwrap();
        let mut b = TreeArena::new(l, 99);
        b.grow_to_depth(7).unwrap();
        let canon = |t: &TreeArena| {
            let mut v: Vec<(u64, u32, bool)> =
                (0..t.len() as NodeId).map(|i| (t.key(i), t.depth(i), t.is_backbone(i))).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(canon(&a), canon(&b));
    }

    #[test]
    fn lazy_expansion_matches_eager_growth() {
        let l = law("poisson:1.5");
        let mut eager = TreeArena::new(l.clone(), 3);
        eager.grow_to_depth(5).unwrap();
        let mut lazy = TreeArena::new(l, 3);
        // Walk the backbone in a different order and compare counts by key.
        let mut stack = vec![ROOT];
        let mut seen = std::collections::HashMap::new();
        while let Some(v) = stack.pop() {
            lazy.ensure_children(v);
            seen.insert(lazy.key(v), lazy.child_count(v));
            if lazy.depth(v) < 4 {
                stack.extend(lazy.children(v));
            }
        }
        for v in 0..eager.len() as NodeId {
            if let Some(&c) = seen.get(&eager.key(v)) {
                if eager.is_expanded(v) {
                    assert_eq!(c, eager.child_count(v));
                }
            }
        }
    }

    #[test]
    fn backbone_marking_invariants() {
        let mut t = TreeArena::new(law("explicit:0.25,0,0.75"), 17);
        t.grow_to_depth(6).unwrap();
        for v in 0..t.len() as NodeId {
            if t.is_backbone(v) && t.depth(v) < 6 {
                assert!(t.children(v).any(|c| t.is_backbone(c)));
            }
            if !t.is_backbone(v) && t.is_expanded(v) {
                assert!(t.children(v).all(|c| !t.is_backbone(c)));
            }
        }
    }

    #[test]
    fn vstar_on_explicit_path() {
        // o -> a -> b, b has two backbone children.
        let t = TreeArena::explicit(&[1, 1, 2, 0, 0], Some(&[true, true, true, true, true]));
        let mut t = t.unwrap();
        let v = t.find_vstar();
        assert_eq!(v, 2);
        assert_eq!(t.depth(v), 2);
    }

    #[test]
    fn boundary_examples_on_binary_tree() {
        let mut t = TreeArena::new(law("explicit:0,0,1"), 1);
        let b = t.boundaries(&VertexSet::new(vec![ROOT]));
        assert_eq!(b.edges.len(), 2);
        assert_eq!(b.vertex.as_slice(), &[1, 2]);
        assert_eq!(b.internal.as_slice(), &[ROOT]);
        let b = t.boundaries(&VertexSet::new(vec![0, 1, 2]));
        assert_eq!(b.edges.len(), 4);
        for k in 0..6 {
            let ball = t.ball(k);
            assert_eq!(t.boundaries(&ball).edges.len(), 1 << (k + 1));
        }
        assert!(t.boundaries(&VertexSet::default()).edges.is_empty());
    }

    #[test]
    fn dump_format() {
        let t = TreeArena::explicit(&[2, 0, 0], None).unwrap();
        assert_eq!(t.dump(), "0 -1 0 0 2\n1 0 1 0 0\n2 0 1 0 0\n");
    }

    #[test]
    fn explicit_rejects_bad_counts() {
        assert!(TreeArena::explicit(&[2, 0], None).is_err());
        assert!(TreeArena::explicit(&[1, 0, 0], None).is_err());
        assert!(TreeArena::explicit(&[], None).is_err());
    }

    #[test]
    fn complete_tree_sizes() {
        assert_eq!(TreeArena::complete(2, 2).len(), 7);
        assert_eq!(TreeArena::complete(3, 2).len(), 13);
    }
}
