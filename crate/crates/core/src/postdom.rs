//! Postdominators of a phase's CFG.
//!
//! The graph is augmented with a virtual exit. Edges to it come from blocks
//! without successors, from the block where each thread left the phase, and
//! from conditional-branch blocks where only one direction was observed:
//! the unobserved direction is unknown, so it may bypass anything.

use std::collections::HashMap;

use petgraph::algo::dominators::simple_fast;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::cfg::EdgeKind;
use crate::dcfg::{Dcfg, NodeId};
use crate::trace::ControlKind;

/// Edges of phase `phase` augmented with a virtual exit (`None`).
pub fn augmented_successors(dcfg: &Dcfg, phase: usize) -> HashMap<NodeId, Vec<Option<NodeId>>> {
    let view = &dcfg.phase_views()[phase];
    let mut succ: HashMap<NodeId, Vec<Option<NodeId>>> = HashMap::new();
    for &n in &view.blocks {
        let edges: Vec<_> = dcfg.phase_successors(phase, n).collect();
        let mut out: Vec<Option<NodeId>> = edges.iter().map(|e| Some(e.to)).collect();
        let last_kind = dcfg.node(n).instrs.last().map(|i| i.kind);
        let one_sided = last_kind == Some(ControlKind::Condbr)
            && !(edges.iter().any(|e| e.kind == EdgeKind::Taken)
                && edges.iter().any(|e| e.kind == EdgeKind::NotTaken));
        let leaves = view.last == Some(n) || view.thread_exits.values().any(|&x| x == n);
        if out.is_empty() || one_sided || leaves {
            out.push(None);
        }
        out.sort_unstable();
        out.dedup();
        succ.insert(n, out);
    }
    succ
}

/// Postdominator tree of one phase with O(1) ancestor queries.
#[derive(Clone, Debug)]
pub struct PostDominators {
    // DFS interval of each node in the postdominator tree; absent when the
    // node cannot reach the exit.
    interval: HashMap<NodeId, (u32, u32)>,
}

impl PostDominators {
    pub fn compute(dcfg: &Dcfg, phase: usize) -> Self {
        let succ = augmented_successors(dcfg, phase);
        let mut g: DiGraph<Option<NodeId>, ()> = DiGraph::new();
        let exit = g.add_node(None);
        let mut idx: HashMap<NodeId, NodeIndex> = HashMap::with_capacity(succ.len());
        for &n in &dcfg.phase_views()[phase].blocks {
            idx.insert(n, g.add_node(Some(n)));
        }
        // reversed: an edge a -> b becomes b -> a
        for (&n, outs) in &succ {
            for s in outs {
                let to = s.map_or(exit, |s| idx[&s]);
                g.add_edge(to, idx[&n], ());
            }
        }
        let doms = simple_fast(&g, exit);

        let mut children: HashMap<NodeIndex, Vec<NodeIndex>> = HashMap::new();
        for &i in idx.values() {
            if let Some(parent) = doms.immediate_dominator(i) {
                children.entry(parent).or_default().push(i);
            }
        }
        let mut interval = HashMap::with_capacity(idx.len());
        let mut clock = 0u32;
        let mut stack = vec![(exit, false)];
        let mut enter: HashMap<NodeIndex, u32> = HashMap::new();
        while let Some((v, done)) = stack.pop() {
            if done {
                if let Some(n) = g[v] {
                    interval.insert(n, (enter[&v], clock));
                }
                clock += 1;
                continue;
            }
            enter.insert(v, clock);
            clock += 1;
            stack.push((v, true));
            if let Some(cs) = children.get(&v) {
                stack.extend(cs.iter().map(|&c| (c, false)));
            }
        }
        PostDominators { interval }
    }

    /// True iff `a` postdominates `b` (reflexive).
    pub fn postdominates(&self, a: NodeId, b: NodeId) -> bool {
        match (self.interval.get(&a), self.interval.get(&b)) {
            (Some(&(a_in, a_out)), Some(&(b_in, b_out))) => a_in <= b_in && b_out <= a_out,
            _ => a == b,
        }
    }

    /// True iff `a` postdominates `b` and `a != b`.
    pub fn strictly_postdominates(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.postdominates(a, b)
    }
}
