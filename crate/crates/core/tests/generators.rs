use std::collections::BTreeSet;

use cyclicsim_core::topology::{
    generate_barabasi_albert, generate_erdos_renyi, generate_one_switch, generate_random_regular, generate_ring,
    shortest_path, LinkParams, NetworkGraph, NodeId,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn backbone(g: &NetworkGraph) -> BTreeSet<(u32, u32)> {
    g.links()
        .iter()
        .filter(|l| g.is_switch(l.a) && g.is_switch(l.b))
        .map(|l| (l.a.0.min(l.b.0), l.a.0.max(l.b.0)))
        .collect()
}

fn connected(g: &NetworkGraph) -> bool {
    let start = g.nodes().next().unwrap().id;
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for nb in g.neighbors(n) {
            if seen.insert(nb) {
                stack.push(nb);
            }
        }
    }
    seen.len() == g.node_count()
}

fn well_formed(g: &NetworkGraph) {
    assert!(connected(g));
    for es in g.end_stations() {
        assert_eq!(g.degree(es), 1, "ES {es}");
        let sw = g.neighbors(es).next().unwrap();
        assert!(g.is_switch(sw));
    }
}

/// Straight re-statement of the seeded G(n, p) draw, with a DFS connectivity test.
fn erg_reference(n: u32, p: f64, seed: u64) -> BTreeSet<(u32, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < p {
                    edges.insert((i, j));
                }
            }
        }
        let mut seen = BTreeSet::from([0]);
        let mut stack = vec![0];
        while let Some(v) = stack.pop() {
            for &(a, b) in &edges {
                let other = if a == v { b } else if b == v { a } else { continue };
                if seen.insert(other) {
                    stack.push(other);
                }
            }
        }
        if seen.len() == n as usize {
            return edges;
        }
    }
}

#[test]
fn erg_matches_reference_draw() {
    for seed in [7, 1, 99] {
        let g = generate_erdos_renyi(6, 0.5, 1, seed, LinkParams::default()).unwrap();
        assert_eq!(backbone(&g), erg_reference(6, 0.5, seed), "seed {seed}");
    }
}

#[test]
fn ring_minimal_example() {
    let g = generate_ring(4, 1, LinkParams::default()).unwrap();
    assert_eq!(g.node_count(), 8);
    assert_eq!(g.link_count(), 8);
    assert_eq!(backbone(&g), BTreeSet::from([(0, 1), (1, 2), (2, 3), (0, 3)]));
}

#[test]
fn one_switch_route_crosses_one_switch() {
    let g = generate_one_switch(2, LinkParams::default()).unwrap();
    let r = shortest_path(&g, NodeId(1), NodeId(2)).unwrap();
    assert_eq!(r.path, vec![NodeId(1), NodeId(0), NodeId(2)]);
    assert_eq!(r.sw_count, 1);
}

proptest! {
    #[test]
    fn erg_well_formed_and_deterministic(n in 2u32..10, p in 0.3f64..1.0, es in 1u32..3, seed in any::<u64>()) {
        let a = generate_erdos_renyi(n, p, es, seed, LinkParams::default()).unwrap();
        well_formed(&a);
        prop_assert_eq!(a.end_stations().len() as u32, n * es);
        let b = generate_erdos_renyi(n, p, es, seed, LinkParams::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rrg_degrees_equal(half in 2u32..6, degree in 2u32..4, seed in any::<u64>()) {
        let n = 2 * half;
        prop_assume!(degree < n);
        let g = generate_random_regular(n, degree, 1, seed, LinkParams::default()).unwrap();
        well_formed(&g);
        for sw in g.switches() {
            let backbone_degree = g.neighbors(sw).filter(|&nb| g.is_switch(nb)).count();
            prop_assert_eq!(backbone_degree as u32, degree);
        }
        prop_assert_eq!(g, generate_random_regular(n, degree, 1, seed, LinkParams::default()).unwrap());
    }

    #[test]
    fn bag_link_count(n in 3u32..12, m in 1u32..4, seed in any::<u64>()) {
        prop_assume!(m < n);
        let g = generate_barabasi_albert(n, m, 1, seed, LinkParams::default()).unwrap();
        well_formed(&g);
        let expected = m * (n - m) + m * (m - 1) / 2;
        prop_assert_eq!(g.backbone_link_count() as u32, expected);
        prop_assert_eq!(g, generate_barabasi_albert(n, m, 1, seed, LinkParams::default()).unwrap());
    }

    #[test]
    fn ring_has_two_links_per_switch(n in 3u32..20) {
        let g = generate_ring(n, 1, LinkParams::default()).unwrap();
        well_formed(&g);
        prop_assert_eq!(g.link_count() as u32, 2 * n);
    }

    #[test]
    fn shortest_paths_are_symmetric(n in 3u32..9, p in 0.3f64..1.0, seed in any::<u64>()) {
        let g = generate_erdos_renyi(n, p, 1, seed, LinkParams::default()).unwrap();
        let es = g.end_stations();
        for &a in &es {
            for &b in &es {
                if a == b {
                    continue;
                }
                let ab = shortest_path(&g, a, b).unwrap();
                let ba = shortest_path(&g, b, a).unwrap();
                prop_assert_eq!(ab.sw_count, ba.sw_count);
                prop_assert_eq!(ab.sw_count, ab.path.iter().filter(|&&x| g.is_switch(x)).count());
                prop_assert_eq!(ab.path.len(), ab.sw_count + 2);
            }
        }
    }
}
