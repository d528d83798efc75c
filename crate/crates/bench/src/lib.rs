//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use gwsand_core::{NodeId, OffspringDistribution, TreeArena, ROOT};

/// Quenched arena of the given law.
pub fn arena(dist: &str, seed: u64) -> TreeArena {
    let law = dist.parse::<OffspringDistribution>().expect("valid law").decompose().expect("supercritical law");
    TreeArena::new(Arc::new(law), seed)
}

/// The first backbone child of the root.
pub fn backbone_child(arena: &mut TreeArena) -> NodeId {
    arena.ensure_children(ROOT);
    arena.children(ROOT).find(|&c| arena.is_backbone(c)).expect("the root survives")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        let mut a = arena("explicit:0,0,0.5,0.5", 1);
        let c = backbone_child(&mut a);
        assert!(a.is_backbone(c));
    }
}
