use std::collections::{BTreeMap, BTreeSet};

use ghosthunt_core::corpus::{dispatcher_binary, RequestSource};
use ghosthunt_core::graphs::{
    build_call_graph, build_cfg, detect_loops, BasicBlock, Cfg, Dominators, Edge, EdgeKind,
};
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::visit::{Bfs, NodeFiltered};
use proptest::prelude::*;

fn graph_edges() -> impl Strategy<Value = (usize, BTreeSet<(usize, usize)>)> {
    (2usize..=50).prop_flat_map(|n| {
        (Just(n), prop::collection::btree_set((0..n, 0..n), 0..2 * n))
    })
}

fn cfg_of(n: usize, edges: &BTreeSet<(usize, usize)>) -> Cfg {
    let blocks: BTreeMap<u32, BasicBlock> =
        (0..n as u32).map(|i| (8 * i, BasicBlock { start: 8 * i, end: 8 * i + 8, insns: Vec::new() })).collect();
    let e = edges
        .iter()
        .map(|&(a, b)| Edge { from: 8 * a as u32, to: 8 * b as u32, kind: EdgeKind::Taken })
        .collect();
    Cfg::from_parts(blocks, e, BTreeSet::from([0]))
}

fn reach(g: &DiGraph<(), ()>, from: NodeIndex, skip: Option<NodeIndex>) -> BTreeSet<usize> {
    let filtered = NodeFiltered::from_fn(g, |n| Some(n) != skip);
    let mut out = BTreeSet::new();
    if Some(from) == skip {
        return out;
    }
    let mut bfs = Bfs::new(&filtered, from);
    while let Some(n) = bfs.next(&filtered) {
        out.insert(n.index());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Natural loops against a brute-force construction: `h` dominates `u`
    /// iff deleting `h` cuts `u` off from the entry; a back edge `u -> h`
    /// contributes `h` plus every reachable block reaching `u` while
    /// avoiding `h`. Every loop also lies inside one strongly connected
    /// component.
    #[test]
    fn natural_loops_match_brute_force((n, edges) in graph_edges()) {
        let cfg = cfg_of(n, &edges);
        let mut g: DiGraph<(), ()> = DiGraph::new();
        let nodes: Vec<NodeIndex> = (0..n).map(|_| g.add_node(())).collect();
        for &(a, b) in &edges {
            g.add_edge(nodes[a], nodes[b], ());
        }
        let reachable = reach(&g, nodes[0], None);
        let dominates = |h: usize, u: usize| h == u || (h == 0) || !reach(&g, nodes[0], Some(nodes[h])).contains(&u);

        let mut rev = g.clone();
        rev.reverse();
        let mut want: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for &(u, h) in &edges {
            if !reachable.contains(&u) || !dominates(h, u) {
                continue;
            }
            let mut body: BTreeSet<u32> = reach(&rev, nodes[u], Some(nodes[h]))
                .into_iter()
                .filter(|b| reachable.contains(b))
                .map(|b| 8 * b as u32)
                .collect();
            body.insert(8 * h as u32);
            want.entry(8 * h as u32).or_default().extend(body);
        }
        let got: BTreeMap<u32, BTreeSet<u32>> = detect_loops(&cfg).into_iter().map(|l| (l.header, l.body)).collect();
        prop_assert_eq!(&got, &want);

        let sccs = tarjan_scc(&g);
        for (h, body) in &got {
            let comp = sccs.iter().find(|c| c.iter().any(|x| 8 * x.index() as u32 == *h)).unwrap();
            let comp: BTreeSet<u32> = comp.iter().map(|x| 8 * x.index() as u32).collect();
            prop_assert!(body.is_subset(&comp));
        }

        let doms = Dominators::compute(&cfg, 0);
        for &u in &reachable {
            for &h in &reachable {
                prop_assert_eq!(doms.dominates(8 * h as u32, 8 * u as u32), dominates(h, u), "{} dom {}", h, u);
            }
        }
    }

    /// Structural invariants of CFGs and call graphs recovered from
    /// generated binaries.
    #[test]
    fn recovered_graphs_are_consistent(seed in 0u64..500) {
        let d = dispatcher_binary(seed, RequestSource::WebsGetVar, 8);
        let cfg = build_cfg(&d.image).unwrap();
        for e in &cfg.edges {
            prop_assert!(cfg.blocks.contains_key(&e.from) && cfg.blocks.contains_key(&e.to));
        }
        for (entry, body) in &cfg.functions {
            prop_assert!(body.contains(entry));
        }
        let cg = build_call_graph(&cfg, Some(d.image.entry));
        for e in &cg.edges {
            prop_assert_eq!(cfg.function_containing(e.site), Some(e.caller));
            prop_assert!(cfg.is_function(e.callee));
        }
        for s in &d.services {
            prop_assert_eq!(cfg.function_containing(s.site), Some(s.function));
        }
    }
}
