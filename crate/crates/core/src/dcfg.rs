//! Dynamic control flow graphs: one CFG per phase, chained by dynamic edges.
//!
//! Blocks are stored as nodes annotated with the set of phases they belong
//! to. An unshared build gives every phase its own nodes; a shared build
//! stores a block once when the same instruction sequence (addresses and
//! bytes) appears in several phases. Edges carry phase sets too, and every
//! traversal goes through a per-phase view so that a walk never combines
//! edges from different phases.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::Serialize;

use crate::cfg::{BlockId, CfgInstr, EdgeKind, PhaseCfg, ThreadStates};
use crate::error::CfgError;
use crate::phase::{Phase, PhaseTracker};
use crate::trace::Trace;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DcfgBlock {
    pub id: NodeId,
    pub instrs: Vec<CfgInstr>,
    /// Phases this block belongs to, ascending.
    pub phases: BTreeSet<usize>,
}

impl DcfgBlock {
    pub fn head(&self) -> u64 {
        self.instrs[0].addr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DcfgEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

/// Control transfer from the last block of phase `phase` to the first block
/// of phase `phase + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DynEdge {
    pub phase: usize,
    pub from: NodeId,
    pub to: NodeId,
}

/// The slice of the graph belonging to one phase.
#[derive(Clone, Debug)]
pub struct PhaseView {
    pub phase: Phase,
    pub entry: Option<NodeId>,
    /// Block of the phase's final record.
    pub last: Option<NodeId>,
    /// Nodes of this phase in construction order.
    pub blocks: Vec<NodeId>,
    /// Block holding each thread's final record in the phase, unless the
    /// thread halted.
    pub thread_exits: BTreeMap<u32, NodeId>,
    addr_index: HashMap<u64, NodeId>,
}

impl PhaseView {
    pub fn node_of(&self, addr: u64) -> Option<NodeId> {
        self.addr_index.get(&addr).copied()
    }

    /// Distinct instruction addresses executed in the phase.
    pub fn instr_count(&self) -> usize {
        self.addr_index.len()
    }
}

type BlockKey = Vec<(u64, Vec<u8>)>;

fn block_key(instrs: &[CfgInstr]) -> BlockKey {
    instrs.iter().map(|i| (i.addr, i.bytes.clone())).collect()
}

#[derive(Clone, Debug, Default)]
pub struct Dcfg {
    shared: bool,
    nodes: Vec<DcfgBlock>,
    edges: BTreeMap<DcfgEdge, BTreeSet<usize>>,
    phases: Vec<PhaseView>,
    dynamic_edges: Vec<DynEdge>,
}

#[derive(Default)]
struct Interner {
    keys: HashMap<BlockKey, NodeId>,
}

impl Dcfg {
    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn nodes(&self) -> &[DcfgBlock] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &DcfgBlock {
        &self.nodes[id]
    }

    /// Intra-phase edges with the phases they occur in.
    pub fn edges(&self) -> &BTreeMap<DcfgEdge, BTreeSet<usize>> {
        &self.edges
    }

    pub fn dynamic_edges(&self) -> &[DynEdge] {
        &self.dynamic_edges
    }

    pub fn phase_views(&self) -> &[PhaseView] {
        &self.phases
    }

    pub fn phases(&self) -> Vec<Phase> {
        self.phases.iter().map(|v| v.phase).collect()
    }

    /// Instructions counted once per phase they appear in, as in an
    /// unshared build.
    pub fn phase_instr_count(&self) -> usize {
        self.phases.iter().map(PhaseView::instr_count).sum()
    }

    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    /// Phase index of trace position `pos`.
    pub fn phase_at(&self, pos: usize) -> Option<usize> {
        let i = self.phases.partition_point(|v| v.phase.end < pos);
        self.phases.get(i).filter(|v| v.phase.contains(pos)).map(|v| v.phase.index)
    }

    /// Node executing trace position `pos` whose instruction is at `addr`.
    pub fn node_at(&self, pos: usize, addr: u64) -> Option<NodeId> {
        self.phases.get(self.phase_at(pos)?)?.node_of(addr)
    }

    /// Successor edges of `node` that exist in `phase`.
    pub fn phase_successors(&self, phase: usize, node: NodeId) -> impl Iterator<Item = &DcfgEdge> {
        let lo = DcfgEdge { from: node, to: 0, kind: EdgeKind::Fall };
        let hi = DcfgEdge { from: node + 1, to: 0, kind: EdgeKind::Fall };
        self.edges
            .range(lo..hi)
            .filter(move |(_, ps)| ps.contains(&phase))
            .map(|(e, _)| e)
    }

    /// All intra-phase edges of `phase`.
    pub fn phase_edges(&self, phase: usize) -> impl Iterator<Item = &DcfgEdge> {
        self.edges.iter().filter(move |(_, ps)| ps.contains(&phase)).map(|(e, _)| e)
    }

    fn absorb(
        &mut self,
        interner: &mut Interner,
        phase: Phase,
        cfg: &PhaseCfg,
        tstates: &ThreadStates,
        last_addr: u64,
    ) {
        let p = phase.index;
        let mut local: Vec<NodeId> = Vec::with_capacity(cfg.blocks().len());
        for block in cfg.blocks() {
            let existing = if self.shared {
                interner.keys.get(&block_key(&block.instrs)).copied()
            } else {
                None
            };
            let id = match existing {
                Some(id) => id,
                None => {
                    let id = self.nodes.len();
                    if self.shared {
                        interner.keys.insert(block_key(&block.instrs), id);
                    }
                    self.nodes.push(DcfgBlock {
                        id,
                        instrs: block.instrs.clone(),
                        phases: BTreeSet::new(),
                    });
                    id
                }
            };
            self.nodes[id].phases.insert(p);
            local.push(id);
        }
        for e in cfg.edges() {
            let key = DcfgEdge { from: local[e.from], to: local[e.to], kind: e.kind };
            self.edges.entry(key).or_default().insert(p);
        }
        let mut addr_index = HashMap::with_capacity(cfg.instr_count());
        for (b, block) in cfg.blocks().iter().enumerate() {
            for ins in &block.instrs {
                addr_index.insert(ins.addr, local[b]);
            }
        }
        let map = |b: BlockId| local[b];
        let thread_exits = tstates
            .values()
            .filter_map(|ts| ts.current_block.map(|b| (ts.tid, map(b))))
            .collect();
        self.phases.push(PhaseView {
            phase,
            entry: cfg.entry().map(map),
            last: cfg.block_of(last_addr).map(map),
            blocks: local,
            thread_exits,
            addr_index,
        });
    }

    /// Number of distinct blocks if identical blocks were stored once.
    fn distinct_block_count(&self) -> usize {
        if self.shared {
            return self.nodes.len();
        }
        self.nodes.iter().map(|n| block_key(&n.instrs)).collect::<BTreeSet<_>>().len()
    }

    pub fn stats(&self) -> DcfgStats {
        let blocks_unshared: usize = self.phases.iter().map(|v| v.blocks.len()).sum();
        let blocks_shared = self.distinct_block_count();
        DcfgStats {
            n_instrs: self.nodes.iter().map(|n| n.instrs.len()).sum(),
            n_blocks: self.nodes.len(),
            n_edges: self.edges.len(),
            n_phases: self.phases.len(),
            n_dyn_edges: self.dynamic_edges.len(),
            blocks_unshared,
            blocks_shared,
            shared_savings: if blocks_unshared == 0 {
                0.0
            } else {
                1.0 - blocks_shared as f64 / blocks_unshared as f64
            },
        }
    }
}

/// Size metrics of a [`Dcfg`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DcfgStats {
    pub n_instrs: usize,
    pub n_blocks: usize,
    /// Intra-phase edges.
    pub n_edges: usize,
    pub n_phases: usize,
    pub n_dyn_edges: usize,
    pub blocks_unshared: usize,
    pub blocks_shared: usize,
    /// `1 - blocks_shared / blocks_unshared`.
    pub shared_savings: f64,
}

/// Builds the DCFG of `trace` in one streaming pass.
pub fn build_dcfg(trace: &Trace, shared: bool) -> Result<Dcfg, CfgError> {
    let mut dcfg = Dcfg { shared, ..Default::default() };
    let mut interner = Interner::default();
    let mut tracker = PhaseTracker::new();
    let mut cfg = PhaseCfg::new(0);
    let mut tstates = ThreadStates::new();
    let mut start = 0;

    for rec in &trace.records {
        if tracker.observe(rec) {
            let phase = Phase { index: cfg.phase_index, start, end: rec.pos - 1 };
            let last_addr = trace.records[rec.pos - 1].addr;
            dcfg.absorb(&mut interner, phase, &cfg, &tstates, last_addr);
            cfg = PhaseCfg::new(tracker.current());
            tstates.clear();
            start = rec.pos;
        }
        cfg.process_record(&mut tstates, rec)?;
    }
    if let Some(last) = trace.records.last() {
        let phase = Phase { index: cfg.phase_index, start, end: last.pos };
        dcfg.absorb(&mut interner, phase, &cfg, &tstates, last.addr);
    }

    for pair in dcfg.phases.windows(2) {
        let (Some(from), Some(to)) = (pair[0].last, pair[1].entry) else {
            unreachable!("non-empty phases have first and last blocks");
        };
        dcfg.dynamic_edges.push(DynEdge { phase: pair[0].phase.index, from, to });
    }
    Ok(dcfg)
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn phase_list(ps: &BTreeSet<usize>) -> String {
    ps.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Stable DOT identifiers `phi<i>_blk<j>`: `i` is the first phase containing
/// the node and `j` its rank among nodes first seen in that phase.
pub fn node_names(dcfg: &Dcfg) -> Vec<String> {
    let mut names = vec![String::new(); dcfg.nodes.len()];
    for view in &dcfg.phases {
        let mut j = 0;
        for &n in &view.blocks {
            if dcfg.nodes[n].phases.first() == Some(&view.phase.index) {
                names[n] = format!("phi{}_blk{}", view.phase.index, j);
                j += 1;
            }
        }
    }
    names
}

/// Renders the graph as DOT: one cluster per phase, dashed dynamic edges.
pub fn export_dot<W: Write>(dcfg: &Dcfg, out: W) -> std::io::Result<()> {
    export_dot_highlighted(dcfg, &BTreeSet::new(), out)
}

/// Like [`export_dot`], filling the nodes in `highlight`.
pub fn export_dot_highlighted<W: Write>(
    dcfg: &Dcfg,
    highlight: &BTreeSet<NodeId>,
    mut out: W,
) -> std::io::Result<()> {
    let names = node_names(dcfg);
    writeln!(out, "digraph dcfg {{")?;
    if !dcfg.nodes.is_empty() {
        writeln!(out, "  node [shape=box, fontname=\"monospace\"];")?;
    }
    for view in &dcfg.phases {
        let p = view.phase.index;
        writeln!(out, "  subgraph cluster_phi{p} {{")?;
        writeln!(out, "    label=\"phase {p} [{}..{}]\";", view.phase.start, view.phase.end)?;
        for &n in &view.blocks {
            let node = &dcfg.nodes[n];
            if node.phases.first() != Some(&p) {
                continue;
            }
            let body: String = node
                .instrs
                .iter()
                .map(|i| format!("{:#06x}: {}\\l", i.addr, dot_escape(&i.mnemonic)))
                .collect();
            write!(out, "    {} [label=\"{body}\"", names[n])?;
            if dcfg.shared {
                write!(out, ", phases=\"{}\"", phase_list(&node.phases))?;
            }
            if highlight.contains(&n) {
                write!(out, ", style=filled, fillcolor=\"#ffd580\"")?;
            }
            writeln!(out, "];")?;
        }
        writeln!(out, "  }}")?;
    }
    for (e, ps) in &dcfg.edges {
        write!(out, "  {} -> {} [label=\"{}\"", names[e.from], names[e.to], e.kind.label())?;
        if dcfg.shared {
            write!(out, ", phases=\"{}\"", phase_list(ps))?;
        }
        writeln!(out, "];")?;
    }
    for d in &dcfg.dynamic_edges {
        writeln!(
            out,
            "  {} -> {} [style=dashed, color=red, label=\"dyn {}->{}\"];",
            names[d.from],
            names[d.to],
            d.phase,
            d.phase + 1
        )?;
    }
    writeln!(out, "}}")
}
