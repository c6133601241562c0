#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeSet;
use std::path::PathBuf;

use dyncode_lens::dcfg::Dcfg;

use dyncode_lens::toyvm::{self, corpus};
use dyncode_lens::trace::{ControlKind, MemRange, Trace, TraceRecord};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn record(pos: usize, addr: u64, kind: ControlKind) -> TraceRecord {
    TraceRecord {
        pos,
        tid: 0,
        addr,
        size: 4,
        bytes: vec![0; 4],
        mnemonic: String::new(),
        kind,
        taken: (kind == ControlKind::Condbr).then_some(false),
        mem_reads: vec![],
        mem_writes: vec![],
        reg_reads: vec![],
        reg_writes: vec![],
        taint_source: false,
    }
}

/// The patched-loop example: I2 overwrites I1 with the conditional branch
/// J1, which first falls through to I3 and then exits to I5.
///
/// Code before the patch: I0@0x00 I1@0x04 I3@0x08 I4@0x0c I2@0x10 I5@0x14.
pub fn patched_loop() -> Trace {
    use ControlKind::*;
    let steps: [(&str, u64, ControlKind, u8, Option<bool>); 9] = [
        ("I0", 0x00, Fall, 0xa0, None),
        ("I1", 0x04, Jump, 0xa1, None),
        ("I2", 0x10, Jump, 0xa2, None),
        ("I4", 0x0c, Jump, 0xa4, None),
        ("J1", 0x04, Condbr, 0xb1, Some(false)),
        ("I3", 0x08, Jump, 0xa3, None),
        ("I4", 0x0c, Jump, 0xa4, None),
        ("J1", 0x04, Condbr, 0xb1, Some(true)),
        ("I5", 0x14, Halt, 0xa5, None),
    ];
    let records = steps
        .iter()
        .enumerate()
        .map(|(pos, &(m, addr, kind, b, taken))| {
            let mut r = record(pos, addr, kind);
            r.mnemonic = m.into();
            r.bytes = vec![b, 0, 0, 0];
            r.taken = taken;
            if m == "I2" {
                r.mem_writes = vec![MemRange(0x04, 4)];
            }
            r
        })
        .collect();
    Trace::new(records)
}

pub fn run_corpus(name: &str) -> Trace {
    let program = corpus::program(name).unwrap_or_else(|| panic!("no program {name}"));
    toyvm::run(&program, 100_000).expect("corpus programs halt")
}

/// Positions whose mnemonic is `m`, ascending.
pub fn positions_of(trace: &Trace, m: &str) -> Vec<usize> {
    trace.records.iter().filter(|r| r.mnemonic == m).map(|r| r.pos).collect()
}

pub type Shape = Vec<(BTreeSet<Vec<(u64, Vec<u8>)>>, BTreeSet<(u64, u64, String)>, (u64, u64))>;

/// Per-phase blocks and edges with node identities replaced by contents.
pub fn expand(d: &Dcfg) -> Shape {
    let key = |n: usize| d.node(n).instrs.iter().map(|i| (i.addr, i.bytes.clone())).collect::<Vec<_>>();
    d.phase_views()
        .iter()
        .enumerate()
        .map(|(p, v)| {
            let blocks = v.blocks.iter().map(|&n| key(n)).collect();
            let edges = d
                .phase_edges(p)
                .map(|e| (d.node(e.from).head(), d.node(e.to).head(), format!("{:?}", e.kind)))
                .collect();
            (blocks, edges, (d.node(v.entry.unwrap()).head(), d.node(v.last.unwrap()).head()))
        })
        .collect()
}
