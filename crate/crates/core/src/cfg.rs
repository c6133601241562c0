//! Incremental CFG construction from the records of one phase.
//!
//! Records are processed in trace order. Each thread keeps its own previous
//! instruction and call stack, so interleaved threads never produce edges
//! between each other's instructions. An instruction reached by anything
//! other than an in-line fall-through begins a block; if it already sits in
//! the middle of a block, that block is split.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::error::CfgError;
use crate::trace::{ControlKind, TraceRecord};

pub type BlockId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CfgInstr {
    pub addr: u64,
    pub size: u32,
    pub bytes: Vec<u8>,
    pub mnemonic: String,
    pub kind: ControlKind,
    pub first_seen_pos: usize,
}

impl CfgInstr {
    fn from_record(rec: &TraceRecord) -> Self {
        CfgInstr {
            addr: rec.addr,
            size: rec.size,
            bytes: rec.bytes.clone(),
            mnemonic: rec.mnemonic.clone(),
            kind: rec.kind,
            first_seen_pos: rec.pos,
        }
    }

    fn end(&self) -> u64 {
        self.addr + u64::from(self.size)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub instrs: Vec<CfgInstr>,
}

impl BasicBlock {
    pub fn head(&self) -> u64 {
        self.instrs[0].addr
    }

    pub fn last(&self) -> &CfgInstr {
        self.instrs.last().expect("blocks are never empty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EdgeKind {
    Fall,
    Taken,
    NotTaken,
    Call,
    Ret,
}

impl EdgeKind {
    pub fn label(self) -> &'static str {
        match self {
            EdgeKind::Fall => "fall",
            EdgeKind::Taken => "taken",
            EdgeKind::NotTaken => "not-taken",
            EdgeKind::Call => "call",
            EdgeKind::Ret => "ret",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CfgEdge {
    pub from: BlockId,
    pub to: BlockId,
    pub kind: EdgeKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PrevInstr {
    addr: u64,
    size: u32,
    kind: ControlKind,
    taken: Option<bool>,
}

impl PrevInstr {
    fn edge_kind(&self) -> Option<EdgeKind> {
        match self.kind {
            ControlKind::Fall => Some(EdgeKind::Fall),
            ControlKind::Jump => Some(EdgeKind::Taken),
            ControlKind::Condbr if self.taken == Some(true) => Some(EdgeKind::Taken),
            ControlKind::Condbr => Some(EdgeKind::NotTaken),
            ControlKind::Call => Some(EdgeKind::Call),
            ControlKind::Ret => Some(EdgeKind::Ret),
            ControlKind::Halt => None,
        }
    }
}

/// Per-thread construction state.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ThreadState {
    pub tid: u32,
    /// Trace position of this thread's previous record in the phase.
    pub prev_pos: Option<usize>,
    pub call_stack: Vec<u64>,
    pub current_block: Option<BlockId>,
    prev: Option<PrevInstr>,
}

impl ThreadState {
    pub fn new(tid: u32) -> Self {
        ThreadState { tid, ..Default::default() }
    }
}

pub type ThreadStates = HashMap<u32, ThreadState>;

/// The CFG of one phase.
#[derive(Clone, Debug, Default)]
pub struct PhaseCfg {
    pub phase_index: usize,
    blocks: Vec<BasicBlock>,
    edges: BTreeSet<CfgEdge>,
    entry: Option<BlockId>,
    /// addr -> (block, index within block)
    index: HashMap<u64, (BlockId, usize)>,
}

impl PhaseCfg {
    pub fn new(phase_index: usize) -> Self {
        PhaseCfg { phase_index, ..Default::default() }
    }

    pub fn blocks(&self) -> &[BasicBlock] {
        &self.blocks
    }

    pub fn edges(&self) -> &BTreeSet<CfgEdge> {
        &self.edges
    }

    pub fn entry(&self) -> Option<BlockId> {
        self.entry
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn instr_count(&self) -> usize {
        self.index.len()
    }

    pub fn block_of(&self, addr: u64) -> Option<BlockId> {
        self.index.get(&addr).map(|&(b, _)| b)
    }

    pub fn successors(&self, block: BlockId) -> impl Iterator<Item = &CfgEdge> {
        self.edges.range(Self::edge_lo(block)..Self::edge_lo(block + 1))
    }

    fn edge_lo(from: BlockId) -> CfgEdge {
        CfgEdge { from, to: 0, kind: EdgeKind::Fall }
    }

    /// Splits `block` so that its instruction at `at` heads a new block.
    /// Outgoing edges move to the new tail block.
    fn split(&mut self, block: BlockId, at: usize, tstates: &mut ThreadStates) -> BlockId {
        let tail_id = self.blocks.len();
        let tail = self.blocks[block].instrs.split_off(at);
        for (i, ins) in tail.iter().enumerate() {
            self.index.insert(ins.addr, (tail_id, i));
        }
        let moved: Vec<CfgEdge> = self.successors(block).copied().collect();
        for e in moved {
            self.edges.remove(&e);
            // a self-loop back to the head keeps targeting `block`
            self.edges.insert(CfgEdge { from: tail_id, to: e.to, kind: e.kind });
        }
        self.edges.insert(CfgEdge { from: block, to: tail_id, kind: EdgeKind::Fall });
        for ts in tstates.values_mut() {
            if let Some(p) = ts.prev {
                if ts.current_block == Some(block) && self.block_of(p.addr) == Some(tail_id) {
                    ts.current_block = Some(tail_id);
                }
            }
        }
        self.blocks.push(BasicBlock { id: tail_id, instrs: tail });
        tail_id
    }

    /// Adds `rec` to the graph in the context of its thread's state.
    pub fn process_record(
        &mut self,
        tstates: &mut ThreadStates,
        rec: &TraceRecord,
    ) -> Result<(), CfgError> {
        let prev = tstates.get(&rec.tid).and_then(|ts| ts.prev);
        let in_line = prev.is_some_and(|p| p.kind == ControlKind::Fall && p.addr + u64::from(p.size) == rec.addr);

        let block = match self.index.get(&rec.addr).copied() {
            Some((b, idx)) => {
                let known = &self.blocks[b].instrs[idx];
                if known.bytes != rec.bytes || known.size != rec.size {
                    return Err(CfgError::Inconsistent {
                        addr: rec.addr,
                        phase: self.phase_index,
                        pos: rec.pos,
                    });
                }
                let adjacent = in_line && idx > 0 && Some(self.blocks[b].instrs[idx - 1].addr) == prev.map(|p| p.addr);
                if adjacent {
                    b
                } else {
                    let target = if idx > 0 { self.split(b, idx, tstates) } else { b };
                    self.link(prev, target);
                    target
                }
            }
            None => {
                let appendable = in_line
                    && prev
                        .and_then(|p| self.index.get(&p.addr).map(|&(pb, _)| (p, pb)))
                        .is_some_and(|(p, pb)| self.blocks[pb].last().addr == p.addr);
                let ins = CfgInstr::from_record(rec);
                if appendable {
                    let pb = self.block_of(prev.unwrap().addr).unwrap();
                    let idx = self.blocks[pb].instrs.len();
                    debug_assert_eq!(self.blocks[pb].last().end(), rec.addr);
                    self.blocks[pb].instrs.push(ins);
                    self.index.insert(rec.addr, (pb, idx));
                    pb
                } else {
                    let id = self.blocks.len();
                    self.blocks.push(BasicBlock { id, instrs: vec![ins] });
                    self.index.insert(rec.addr, (id, 0));
                    self.link(prev, id);
                    id
                }
            }
        };
        self.entry.get_or_insert(block);

        let ts = tstates.entry(rec.tid).or_insert_with(|| ThreadState::new(rec.tid));
        match rec.kind {
            ControlKind::Call => ts.call_stack.push(rec.addr + u64::from(rec.size)),
            ControlKind::Ret => {
                ts.call_stack.pop();
            }
            _ => {}
        }
        if rec.kind == ControlKind::Halt {
            // nothing follows a halted thread
            tstates.remove(&rec.tid);
        } else {
            ts.prev_pos = Some(rec.pos);
            ts.current_block = Some(block);
            ts.prev = Some(PrevInstr { addr: rec.addr, size: rec.size, kind: rec.kind, taken: rec.taken });
        }
        Ok(())
    }

    fn link(&mut self, prev: Option<PrevInstr>, to: BlockId) {
        let Some(p) = prev else { return };
        let Some(kind) = p.edge_kind() else { return };
        let from = self.block_of(p.addr).expect("previous instruction is in the graph");
        self.edges.insert(CfgEdge { from, to, kind });
    }
}

/// Builds the CFG of one phase from its records.
pub fn build_phase_cfg(phase_index: usize, records: &[TraceRecord]) -> Result<PhaseCfg, CfgError> {
    let mut cfg = PhaseCfg::new(phase_index);
    let mut tstates = ThreadStates::new();
    for rec in records {
        cfg.process_record(&mut tstates, rec)?;
    }
    Ok(cfg)
}
