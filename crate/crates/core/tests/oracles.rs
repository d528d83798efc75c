//! Cross-checks against dense linear algebra and brute force.

use nalgebra::DMatrix;
use proptest::prelude::*;

use gwsand_core::estimator::{run_campaign, CampaignConfig, Mode};
use gwsand_core::resistance::wired_conductances;
use gwsand_core::sandpile::{add_and_stabilize, enumerate_recurrent, FiniteNetwork, ToppleOrder, SINK};
use gwsand_core::{resistance_to_sink, TreeArena};

/// Child counts in breadth-first order, truncated once every vertex is listed.
fn bfs_shape(raw: &[u32], max_nodes: usize) -> Vec<u32> {
    let mut out = Vec::new();
    let mut nodes = 1usize;
    while out.len() < nodes {
        let room = max_nodes.saturating_sub(nodes) as u32;
        let c = raw.get(out.len()).copied().unwrap_or(0).min(room);
        out.push(c);
        nodes += c as usize;
    }
    out
}

/// Toppling matrix of the wired network with the sink row and column removed.
fn laplacian(net: &FiniteNetwork) -> DMatrix<f64> {
    let n = net.len();
    let mut l = DMatrix::zeros(n, n);
    for v in 0..n {
        l[(v, v)] = f64::from(net.degree(v));
        for &s in net.neighbors(v) {
            if s != SINK {
                l[(v, s as usize)] -= 1.0;
            }
        }
    }
    l
}

fn network(raw: &[u32], radius: u32) -> Option<(TreeArena, FiniteNetwork)> {
    let shape = bfs_shape(raw, 40);
    let mut arena = TreeArena::explicit(&shape, None).ok()?;
    let h = arena.ball(radius);
    let net = FiniteNetwork::new(&arena, &h).ok()?;
    Some((arena, net))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn resistance_matches_the_green_function(raw in prop::collection::vec(0u32..4, 1..40), radius in 1u32..5) {
        let Some((mut arena, net)) = network(&raw, radius) else { return Ok(()) };
        let green = laplacian(&net).try_inverse().expect("grounded Laplacian is invertible");
        let r = green[(0, 0)];
        prop_assert!((net.resistance() - r).abs() < 1e-9 * r.max(1.0));
        let h = arena.ball(radius);
        prop_assert!((resistance_to_sink(&arena, &h).unwrap() - r).abs() < 1e-9 * r.max(1.0));
        // At the root the subtree conductance is the whole conductance to the sink.
        let c = wired_conductances(&arena, &h).unwrap();
        prop_assert!((c[0] - 1.0 / r).abs() < 1e-9 * c[0].max(1.0));
    }

    #[test]
    fn recurrent_count_is_the_determinant(raw in prop::collection::vec(0u32..3, 1..8), radius in 1u32..4) {
        let Some((_, net)) = network(&raw, radius) else { return Ok(()) };
        prop_assume!(net.len() <= 9);
        let det = laplacian(&net).determinant();
        prop_assert_eq!(enumerate_recurrent(&net).len() as f64, det.round());
    }
}

#[test]
fn mean_root_topplings_is_the_green_function() {
    // Dhar: under the uniform recurrent law, adding at o topples o G(o,o) times on average.
    for (raw, radius) in [(vec![2, 1, 2, 0, 1], 2), (vec![3, 0, 2, 1], 1), (vec![1, 1, 2], 2)] {
        let (_, net) = network(&raw, radius).unwrap();
        let green = laplacian(&net).try_inverse().unwrap()[(0, 0)];
        let configs = enumerate_recurrent(&net);
        let mut total = 0u64;
        for c in &configs {
            let mut h = c.clone();
            total += add_and_stabilize(&net, &mut h, 0, ToppleOrder::Fifo).odometer[0];
        }
        let mean = total as f64 / configs.len() as f64;
        assert!((mean - green).abs() < 1e-9, "{raw:?}: mean {mean} vs G {green}");
    }
}

#[test]
fn campaign_does_not_depend_on_thread_count() {
    let mut cfg = CampaignConfig::new("explicit:0.25,0,0.75".parse().unwrap(), Mode::Annealed, 150, 9);
    cfg.depth = 16;
    cfg.max_doublings = 2;
    cfg.keep_records = true;
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_campaign(&cfg).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.curves, b.curves);
    assert_eq!(a.counters, b.counters);
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.csv_row(), y.csv_row());
    }
}
