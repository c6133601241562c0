mod common;

use std::collections::{BTreeMap, BTreeSet};

use dyncode_lens::dcfg::{build_dcfg, export_dot, DcfgStats};
use dyncode_lens::phase::partition;
use dyncode_lens::synth::{random_trace, SynthConfig};
use dyncode_lens::trace::Trace;
use proptest::prelude::*;

use common::{patched_loop, expand, oracle, run_corpus};

#[test]
fn patched_loop_dynamic_edge() {
    let t = patched_loop();
    for shared in [false, true] {
        let d = build_dcfg(&t, shared).unwrap();
        assert_eq!(d.phase_count(), 2);
        let dyns = d.dynamic_edges();
        assert_eq!(dyns.len(), 1);
        let e = dyns[0];
        assert_eq!(e.phase, 0);
        // from I4's block in G0 to J1's block in G1
        assert_eq!(d.node(e.from).instrs[0].mnemonic, "I4");
        assert!(d.node(e.from).phases.contains(&0));
        assert_eq!(d.node(e.to).instrs[0].mnemonic, "J1");
        assert_eq!(d.phase_views()[1].entry, Some(e.to));
        assert_eq!(d.phase_views()[0].last, Some(e.from));
    }
}

#[test]
fn shared_stores_i4_once() {
    let t = patched_loop();
    let unshared = build_dcfg(&t, false).unwrap();
    let shared = build_dcfg(&t, true).unwrap();
    let i4: Vec<_> = shared.nodes().iter().filter(|n| n.instrs[0].mnemonic == "I4").collect();
    assert_eq!(i4.len(), 1);
    assert_eq!(i4[0].phases, BTreeSet::from([0, 1]));
    assert_eq!(unshared.nodes().iter().filter(|n| n.instrs[0].mnemonic == "I4").count(), 2);
    assert_eq!(expand(&shared), expand(&unshared));
    assert!(shared.nodes().len() < unshared.nodes().len());
}

#[test]
fn patched_loop_stats() {
    let s = build_dcfg(&patched_loop(), true).unwrap().stats();
    assert_eq!(s.n_phases, 2);
    assert_eq!(s.n_dyn_edges, 1);
    assert_eq!(s.blocks_unshared, 7);
    assert_eq!(s.blocks_shared, 6);
    assert!((s.shared_savings - (1.0 - 6.0 / 7.0)).abs() < 1e-12);
    let u = build_dcfg(&patched_loop(), false).unwrap().stats();
    assert_eq!((u.blocks_unshared, u.blocks_shared), (7, 6));
    assert_eq!(u.n_blocks, 7);
}

#[test]
fn empty_trace() {
    let d = build_dcfg(&Trace::default(), false).unwrap();
    assert_eq!(
        d.stats(),
        DcfgStats {
            n_instrs: 0,
            n_blocks: 0,
            n_edges: 0,
            n_phases: 0,
            n_dyn_edges: 0,
            blocks_unshared: 0,
            blocks_shared: 0,
            shared_savings: 0.0
        }
    );
}

#[test]
fn backjump_phase_count_matches_oracle() {
    let t = run_corpus("backjump");
    let d = build_dcfg(&t, false).unwrap();
    assert_eq!(d.stats().n_phases, oracle::phases(&t).len());
    assert_eq!(d.stats().n_dyn_edges, d.stats().n_phases - 1);
}

#[test]
fn dot_output() {
    let mut buf = Vec::new();
    export_dot(&build_dcfg(&patched_loop(), false).unwrap(), &mut buf).unwrap();
    let dot = String::from_utf8(buf).unwrap();
    assert_eq!(dot.matches("subgraph cluster_").count(), 2);
    assert_eq!(dot.matches("style=dashed").count(), 1);
    assert!(dot.contains("phi0_blk2 -> phi1_blk0 [style=dashed"));
    assert!(!dot.contains("phases="));

    let mut buf = Vec::new();
    export_dot(&build_dcfg(&patched_loop(), true).unwrap(), &mut buf).unwrap();
    let dot = String::from_utf8(buf).unwrap();
    assert!(dot.contains("phases=\"0,1\""));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn shared_expands_to_unshared(seed in any::<u64>(), len in 1usize..200, threads in 1u32..3, slots in 2u64..10) {
        let t = random_trace(seed, &SynthConfig { len, threads, code_slots: slots, ..Default::default() });
        let u = build_dcfg(&t, false).unwrap();
        let s = build_dcfg(&t, true).unwrap();
        prop_assert_eq!(expand(&u), expand(&s));
        prop_assert!(s.nodes().len() <= u.nodes().len());
        prop_assert_eq!(s.stats().blocks_shared, u.stats().blocks_shared);
        prop_assert_eq!(s.stats().blocks_unshared, u.stats().blocks_unshared);
        // node annotations agree with the views
        let mut seen: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (p, v) in s.phase_views().iter().enumerate() {
            for &n in &v.blocks {
                seen.entry(n).or_default().insert(p);
            }
        }
        for n in s.nodes() {
            prop_assert_eq!(Some(&n.phases), seen.get(&n.id));
        }
    }

    #[test]
    fn dynamic_edges_join_consecutive_phases(seed in any::<u64>(), len in 1usize..200) {
        let t = random_trace(seed, &SynthConfig { len, code_write_prob: 0.2, ..Default::default() });
        let d = build_dcfg(&t, true).unwrap();
        let phases = partition(&t);
        prop_assert_eq!(d.phases(), phases.clone());
        prop_assert_eq!(d.dynamic_edges().len(), phases.len() - 1);
        for e in d.dynamic_edges() {
            let last = &t.records[phases[e.phase].end];
            let first = &t.records[phases[e.phase + 1].start];
            prop_assert_eq!(d.phase_views()[e.phase].node_of(last.addr), Some(e.from));
            prop_assert_eq!(d.phase_views()[e.phase + 1].node_of(first.addr), Some(e.to));
        }
        // every intra-phase edge stays within its phase's nodes
        for (e, ps) in d.edges() {
            for &p in ps {
                prop_assert!(d.node(e.from).phases.contains(&p));
                prop_assert!(d.node(e.to).phases.contains(&p));
            }
        }
    }
}
