//! Dynamic dependences between trace positions.
//!
//! Data and codegen dependences come from a last-writer index: a read of a
//! location (data) or execution of an instruction occupying it (codegen)
//! depends on the most recent prior writer. Control dependences use
//! per-phase postdominators.

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::Serialize;

use crate::dcfg::{Dcfg, NodeId};
use crate::postdom::PostDominators;
use crate::trace::{ControlKind, Location, Trace, TraceRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DepKind {
    Data,
    Control,
    Codegen,
}

impl DepKind {
    pub fn label(self) -> &'static str {
        match self {
            DepKind::Data => "DATA",
            DepKind::Control => "CONTROL",
            DepKind::Codegen => "CODEGEN",
        }
    }
}

/// `from_pos` depends on the earlier `to_pos`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DepEdge {
    pub from_pos: usize,
    pub to_pos: usize,
    pub kind: DepKind,
    /// Witnessing location for data and codegen edges: the smallest
    /// location through which the dependence holds.
    #[serde(serialize_with = "ser_loc")]
    pub loc: Option<Location>,
}

fn ser_loc<S: serde::Serializer>(loc: &Option<Location>, s: S) -> Result<S::Ok, S::Error> {
    match loc {
        Some(l) => s.collect_str(l),
        None => s.serialize_none(),
    }
}

/// Most recent writer of every location written so far.
#[derive(Clone, Debug, Default)]
pub struct LastWriterIndex {
    map: HashMap<Location, usize>,
}

impl LastWriterIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, loc: Location) -> Option<usize> {
        self.map.get(&loc).copied()
    }

    /// Records the writes of `rec`. Call after all lookups for `rec`.
    pub fn record(&mut self, rec: &TraceRecord) {
        for loc in rec.written() {
            self.map.insert(loc, rec.pos);
        }
    }
}

// Appends one edge per distinct writer of `locs`, witnessed by the
// smallest location.
fn push_writer_edges(
    out: &mut Vec<DepEdge>,
    scratch: &mut Vec<(usize, Location)>,
    index: &LastWriterIndex,
    pos: usize,
    kind: DepKind,
    locs: impl Iterator<Item = Location>,
) {
    scratch.clear();
    for loc in locs {
        if let Some(w) = index.get(loc) {
            match scratch.iter_mut().find(|(x, _)| *x == w) {
                Some(entry) => entry.1 = entry.1.min(loc),
                None => scratch.push((w, loc)),
            }
        }
    }
    scratch.sort_unstable();
    out.extend(scratch.iter().map(|&(w, loc)| DepEdge {
        from_pos: pos,
        to_pos: w,
        kind,
        loc: Some(loc),
    }));
}

/// Data and codegen edges in one pass, each ordered by `(from_pos, to_pos)`.
pub fn data_and_codegen_deps(trace: &Trace) -> (Vec<DepEdge>, Vec<DepEdge>) {
    let mut index = LastWriterIndex::new();
    let mut data = Vec::new();
    let mut codegen = Vec::new();
    let mut scratch = Vec::new();
    for rec in &trace.records {
        push_writer_edges(&mut data, &mut scratch, &index, rec.pos, DepKind::Data, rec.read());
        push_writer_edges(
            &mut codegen,
            &mut scratch,
            &index,
            rec.pos,
            DepKind::Codegen,
            rec.instr_range().map(Location::mem),
        );
        index.record(rec);
    }
    (data, codegen)
}

pub fn data_deps(trace: &Trace) -> Vec<DepEdge> {
    data_and_codegen_deps(trace).0
}

pub fn codegen_deps(trace: &Trace) -> Vec<DepEdge> {
    data_and_codegen_deps(trace).1
}

/// Control edges. Position `i` depends on the nearest earlier conditional
/// branch `j` of the same thread and phase such that the block of `i` does
/// not strictly postdominate the block of `j`.
pub fn control_deps(trace: &Trace, dcfg: &Dcfg) -> Vec<DepEdge> {
    let mut out = Vec::new();
    for (p, view) in dcfg.phase_views().iter().enumerate() {
        let pdom = PostDominators::compute(dcfg, p);
        // latest instance of each branch block per thread, oldest first
        let mut recent: HashMap<u32, IndexMap<NodeId, usize>> = HashMap::new();
        for rec in &trace.records[view.phase.start..=view.phase.end] {
            let node = view.node_of(rec.addr).expect("every record of a phase is in its CFG");
            let branches = recent.entry(rec.tid).or_default();
            let dep = branches
                .iter()
                .rev()
                .find(|(&b, _)| !pdom.strictly_postdominates(node, b))
                .map(|(_, &j)| j);
            if let Some(j) = dep {
                out.push(DepEdge { from_pos: rec.pos, to_pos: j, kind: DepKind::Control, loc: None });
            }
            if rec.kind == ControlKind::Condbr {
                branches.shift_remove(&node);
                branches.insert(node, rec.pos);
            }
        }
    }
    out
}

/// Which dependence kinds to extract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KindSet {
    pub data: bool,
    pub control: bool,
    pub codegen: bool,
}

impl KindSet {
    pub const ALL: KindSet = KindSet { data: true, control: true, codegen: true };

    pub fn only(kind: DepKind) -> Self {
        KindSet {
            data: kind == DepKind::Data,
            control: kind == DepKind::Control,
            codegen: kind == DepKind::Codegen,
        }
    }
}

/// Requested edges sorted by `(from_pos, to_pos, kind)`.
pub fn all_deps(trace: &Trace, dcfg: &Dcfg, kinds: KindSet) -> Vec<DepEdge> {
    let mut out = Vec::new();
    if kinds.data || kinds.codegen {
        let (data, codegen) = data_and_codegen_deps(trace);
        if kinds.data {
            out.extend(data);
        }
        if kinds.codegen {
            out.extend(codegen);
        }
    }
    if kinds.control {
        out.extend(control_deps(trace, dcfg));
    }
    out.sort_unstable_by_key(|e| (e.from_pos, e.to_pos, e.kind));
    out
}

/// All edges of a trace grouped by depender position.
#[derive(Clone, Debug, Default)]
pub struct DepGraph {
    offsets: Vec<usize>,
    edges: Vec<DepEdge>,
}

impl DepGraph {
    pub fn build(trace: &Trace, dcfg: &Dcfg) -> Self {
        let edges = all_deps(trace, dcfg, KindSet::ALL);
        let mut offsets = vec![0; trace.len() + 1];
        for e in &edges {
            offsets[e.from_pos + 1] += 1;
        }
        for i in 0..trace.len() {
            offsets[i + 1] += offsets[i];
        }
        DepGraph { offsets, edges }
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Edges whose depender is `pos`.
    pub fn out_edges(&self, pos: usize) -> &[DepEdge] {
        &self.edges[self.offsets[pos]..self.offsets[pos + 1]]
    }

    pub fn edges(&self) -> &[DepEdge] {
        &self.edges
    }

    /// The control edge of `pos`, if any.
    pub fn control_parent(&self, pos: usize) -> Option<usize> {
        self.out_edges(pos).iter().find(|e| e.kind == DepKind::Control).map(|e| e.to_pos)
    }
}
