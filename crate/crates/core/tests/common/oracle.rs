//! Brute-force reference implementations, written straight from the
//! definitions and independent of the library's algorithms.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use dyncode_lens::cfg::{EdgeKind, PhaseCfg};
use dyncode_lens::dcfg::{Dcfg, NodeId};
use dyncode_lens::phase::Phase;
use dyncode_lens::trace::{instr_of, writes_of, ControlKind, Location, Trace, TraceRecord};

/// Phases by the ordered definition: a segment is valid when no earlier
/// instruction in it writes a location occupied by a later one; each phase
/// is the longest valid extension of the previous one.
pub fn phases(trace: &Trace) -> Vec<Phase> {
    let n = trace.len();
    let instr: Vec<BTreeSet<Location>> = trace.records.iter().map(instr_of).collect();
    let writes: Vec<BTreeSet<Location>> = trace.records.iter().map(writes_of).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start;
        // extend while the new last element is not written by any earlier one
        while end + 1 < n {
            let l = end + 1;
            let clash = (start..l).any(|k| !writes[k].is_disjoint(&instr[l]));
            if clash {
                break;
            }
            end = l;
        }
        out.push(Phase { index: out.len(), start, end });
        start = end + 1;
    }
    out
}

/// (from_pos, to_pos, witness) triples, scanning backwards for each
/// location.
fn writer_edges(
    trace: &Trace,
    locs_of: impl Fn(&TraceRecord) -> BTreeSet<Location>,
) -> Vec<(usize, usize, Location)> {
    let writes: Vec<BTreeSet<Location>> = trace.records.iter().map(writes_of).collect();
    let mut out = Vec::new();
    for (i, rec) in trace.records.iter().enumerate() {
        let mut by_writer: BTreeMap<usize, Location> = BTreeMap::new();
        for loc in locs_of(rec) {
            if let Some(k) = (0..i).rev().find(|&k| writes[k].contains(&loc)) {
                let w = by_writer.entry(k).or_insert(loc);
                *w = (*w).min(loc);
            }
        }
        out.extend(by_writer.into_iter().map(|(k, loc)| (i, k, loc)));
    }
    out
}

pub fn data_deps(trace: &Trace) -> Vec<(usize, usize, Location)> {
    writer_edges(trace, |r| {
        let mut s: BTreeSet<Location> = BTreeSet::new();
        for m in &r.mem_reads {
            s.extend((m.0..m.0 + u64::from(m.1)).map(Location::mem));
        }
        s.extend(r.reg_reads.iter().map(|&x| Location::reg(u64::from(x))));
        s
    })
}

pub fn codegen_deps(trace: &Trace) -> Vec<(usize, usize, Location)> {
    writer_edges(trace, instr_of)
}

/// CFG of one phase built offline from the complete list of transitions.
/// Returns blocks as address sequences and edges as (head, head, kind).
pub fn offline_cfg(records: &[TraceRecord]) -> CfgShape {
    let mut prev_of: HashMap<u32, &TraceRecord> = HashMap::new();
    let mut pairs: Vec<(Option<&TraceRecord>, &TraceRecord)> = Vec::new();
    let mut info: BTreeMap<u64, (ControlKind, u32)> = BTreeMap::new();
    for r in records {
        pairs.push((prev_of.get(&r.tid).copied(), r));
        info.insert(r.addr, (r.kind, r.size));
        if r.kind == ControlKind::Halt {
            prev_of.remove(&r.tid);
        } else {
            prev_of.insert(r.tid, r);
        }
    }
    let in_line =
        |p: &TraceRecord, n: &TraceRecord| p.kind == ControlKind::Fall && p.addr + u64::from(p.size) == n.addr;
    let leaders: BTreeSet<u64> = pairs
        .iter()
        .filter(|(p, n)| p.is_none_or(|p| !in_line(p, n)))
        .map(|(_, n)| n.addr)
        .collect();
    let mut head_of: HashMap<u64, u64> = HashMap::new();
    let mut blocks = BTreeSet::new();
    for &l in &leaders {
        let mut seq = vec![l];
        let mut cur = l;
        loop {
            let (kind, size) = info[&cur];
            let next = cur + u64::from(size);
            if kind != ControlKind::Fall || !info.contains_key(&next) || leaders.contains(&next) {
                break;
            }
            seq.push(next);
            cur = next;
        }
        for &a in &seq {
            head_of.insert(a, l);
        }
        blocks.insert(seq);
    }
    let mut edges = BTreeSet::new();
    for (p, n) in &pairs {
        let Some(p) = p else { continue };
        if !leaders.contains(&n.addr) {
            continue;
        }
        let kind = match p.kind {
            ControlKind::Fall => EdgeKind::Fall,
            ControlKind::Jump => EdgeKind::Taken,
            ControlKind::Condbr if p.taken == Some(true) => EdgeKind::Taken,
            ControlKind::Condbr => EdgeKind::NotTaken,
            ControlKind::Call => EdgeKind::Call,
            ControlKind::Ret => EdgeKind::Ret,
            ControlKind::Halt => unreachable!(),
        };
        edges.insert((head_of[&p.addr], head_of[&n.addr], kind));
    }
    (blocks, edges)
}

/// The same shape extracted from a built phase CFG.
/// Block address lists and edges by head address.
pub type CfgShape = (BTreeSet<Vec<u64>>, BTreeSet<(u64, u64, EdgeKind)>);

pub fn cfg_shape(cfg: &PhaseCfg) -> CfgShape {
    let blocks = cfg.blocks().iter().map(|b| b.instrs.iter().map(|i| i.addr).collect()).collect();
    let edges = cfg
        .edges()
        .iter()
        .map(|e| (cfg.blocks()[e.from].head(), cfg.blocks()[e.to].head(), e.kind))
        .collect();
    (blocks, edges)
}

/// Set-based postdominator sets of one phase, computed by iterating the
/// dataflow equations to a fixpoint. `None` is the virtual exit.
pub fn postdominators(dcfg: &Dcfg, phase: usize) -> HashMap<NodeId, BTreeSet<Option<NodeId>>> {
    let view = &dcfg.phase_views()[phase];
    let nodes: Vec<NodeId> = view.blocks.clone();
    let mut succ: HashMap<NodeId, BTreeSet<Option<NodeId>>> = HashMap::new();
    for &n in &nodes {
        succ.insert(n, BTreeSet::new());
    }
    for (e, phases) in dcfg.edges() {
        if phases.contains(&phase) {
            succ.get_mut(&e.from).unwrap().insert(Some(e.to));
        }
    }
    for &n in &nodes {
        let kinds: BTreeSet<EdgeKind> = dcfg
            .edges()
            .iter()
            .filter(|(e, ps)| e.from == n && ps.contains(&phase))
            .map(|(e, _)| e.kind)
            .collect();
        let last = dcfg.node(n).instrs.last().unwrap().kind;
        let one_sided = last == ControlKind::Condbr
            && !(kinds.contains(&EdgeKind::Taken) && kinds.contains(&EdgeKind::NotTaken));
        let exits = view.last == Some(n) || view.thread_exits.values().any(|&x| x == n);
        if succ[&n].is_empty() || one_sided || exits {
            succ.get_mut(&n).unwrap().insert(None);
        }
    }
    let universe: BTreeSet<Option<NodeId>> =
        nodes.iter().map(|&n| Some(n)).chain(std::iter::once(None)).collect();
    let mut pdom: HashMap<Option<NodeId>, BTreeSet<Option<NodeId>>> = HashMap::new();
    pdom.insert(None, BTreeSet::from([None]));
    for &n in &nodes {
        pdom.insert(Some(n), universe.clone());
    }
    let mut changed = true;
    while changed {
        changed = false;
        for &n in &nodes {
            let mut acc: Option<BTreeSet<Option<NodeId>>> = None;
            for s in &succ[&n] {
                let ps = &pdom[s];
                acc = Some(match acc {
                    None => ps.clone(),
                    Some(a) => a.intersection(ps).copied().collect(),
                });
            }
            let mut new = acc.unwrap_or_default();
            new.insert(Some(n));
            if new != pdom[&Some(n)] {
                pdom.insert(Some(n), new);
                changed = true;
            }
        }
    }
    nodes.iter().map(|&n| (n, pdom[&Some(n)].clone())).collect()
}

/// Control edges (from_pos, to_pos) by direct backward search.
pub fn control_deps(trace: &Trace, dcfg: &Dcfg) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (p, view) in dcfg.phase_views().iter().enumerate() {
        let pdom = postdominators(dcfg, p);
        let block = |pos: usize| view.node_of(trace.records[pos].addr).unwrap();
        for i in view.phase.start..=view.phase.end {
            let bi = block(i);
            let dep = (view.phase.start..i).rev().find(|&j| {
                let rj = &trace.records[j];
                if rj.tid != trace.records[i].tid || rj.kind != ControlKind::Condbr {
                    return false;
                }
                let bj = block(j);
                let strict = bi != bj && pdom[&bj].contains(&Some(bi));
                !strict
            });
            if let Some(j) = dep {
                out.push((i, j));
            }
        }
    }
    out
}

/// All dependence edges as (from, to, is_codegen).
pub fn all_edges(trace: &Trace, dcfg: &Dcfg) -> Vec<(usize, usize, bool)> {
    let mut e: Vec<(usize, usize, bool)> = data_deps(trace).into_iter().map(|(a, b, _)| (a, b, false)).collect();
    e.extend(codegen_deps(trace).into_iter().map(|(a, b, _)| (a, b, true)));
    e.extend(control_deps(trace, dcfg).into_iter().map(|(a, b)| (a, b, false)));
    e
}

/// Backward closure from the default criterion at `pos`.
pub fn slice(trace: &Trace, dcfg: &Dcfg, pos: usize, use_codegen: bool) -> BTreeSet<usize> {
    let edges = all_edges(trace, dcfg);
    let mut set = BTreeSet::from([pos]);
    let mut changed = true;
    while changed {
        changed = false;
        for &(a, b, cg) in &edges {
            if (use_codegen || !cg) && set.contains(&a) && set.insert(b) {
                changed = true;
            }
        }
    }
    set
}

/// Tainted positions: a position is tainted when it is a source, when the
/// last writer of something it reads is tainted, or (with control) when
/// its controlling branch is tainted.
pub fn taint(trace: &Trace, dcfg: &Dcfg, sources: &BTreeSet<usize>, control: bool) -> BTreeSet<usize> {
    let data = data_deps(trace);
    let cd = if control { control_deps(trace, dcfg) } else { vec![] };
    let mut tainted = BTreeSet::new();
    for i in 0..trace.len() {
        let hit = sources.contains(&i)
            || data.iter().any(|&(a, b, _)| a == i && tainted.contains(&b))
            || cd.iter().any(|&(a, b)| a == i && tainted.contains(&b));
        if hit {
            tainted.insert(i);
        }
    }
    tainted
}
