//! Partitioning a trace into phases.
//!
//! A new phase begins at the first instruction whose bytes were written
//! since the current phase began. Writes are accumulated only after the
//! check for the writing instruction itself, so an instruction that
//! overwrites its own bytes stays in its phase and the next execution of
//! that address opens the following one.

use std::collections::HashSet;

use serde::Serialize;

use crate::trace::{Location, Trace, TraceRecord};

/// A maximal run of the trace executing one version of the code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Phase {
    pub index: usize,
    /// First trace position, inclusive.
    pub start: usize,
    /// Last trace position, inclusive.
    pub end: usize,
}

impl Phase {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, pos: usize) -> bool {
        (self.start..=self.end).contains(&pos)
    }
}

/// Memory bytes written since the current phase began.
#[derive(Clone, Debug, Default)]
pub struct WrittenLocs(HashSet<u64>);

impl WrittenLocs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds every memory byte written by `rec`. Register writes are ignored:
    /// instructions only occupy memory.
    pub fn record(&mut self, rec: &TraceRecord) {
        self.0.extend(rec.written_mem());
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.0.contains(&addr)
    }

    pub fn clear(&mut self) {
        self.0.clear();
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<Location> for WrittenLocs {
    fn from_iter<I: IntoIterator<Item = Location>>(iter: I) -> Self {
        WrittenLocs(iter.into_iter().filter(Location::is_mem).map(|l| l.addr).collect())
    }
}

/// True iff any byte occupied by `rec` is in `written`.
pub fn instr_starts_new_phase(rec: &TraceRecord, written: &WrittenLocs) -> bool {
    !written.is_empty() && rec.instr_range().any(|a| written.contains(a))
}

/// Streaming phase detector. Feed records in trace order.
#[derive(Debug, Default)]
pub struct PhaseTracker {
    written: WrittenLocs,
    index: usize,
    start: usize,
    seen: usize,
}

impl PhaseTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Processes the next record. Returns true when it opens a new phase
    /// (never for the first record of the trace).
    pub fn observe(&mut self, rec: &TraceRecord) -> bool {
        let starts = self.seen > 0 && instr_starts_new_phase(rec, &self.written);
        if starts {
            self.index += 1;
            self.start = self.seen;
            self.written.clear();
        }
        self.written.record(rec);
        self.seen += 1;
        starts
    }

    /// Index of the phase containing the last observed record.
    pub fn current(&self) -> usize {
        self.index
    }

    pub fn current_start(&self) -> usize {
        self.start
    }

    /// The phases observed so far, the last one ending at the most recent record.
    pub fn finish(self, mut closed: Vec<Phase>) -> Vec<Phase> {
        if self.seen > 0 {
            closed.push(Phase { index: self.index, start: self.start, end: self.seen - 1 });
        }
        closed
    }
}

/// Splits `trace` into maximal phases.
pub fn partition(trace: &Trace) -> Vec<Phase> {
    let mut tracker = PhaseTracker::new();
    let mut phases = Vec::new();
    for rec in &trace.records {
        let start = tracker.current_start();
        let index = tracker.current();
        if tracker.observe(rec) {
            phases.push(Phase { index, start, end: rec.pos - 1 });
        }
    }
    tracker.finish(phases)
}

/// Index into `phases` of the phase containing `pos`.
pub fn phase_of(phases: &[Phase], pos: usize) -> Option<usize> {
    let i = phases.partition_point(|p| p.end < pos);
    phases.get(i).filter(|p| p.contains(pos)).map(|p| p.index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{ControlKind, MemRange};

    fn rec(pos: usize, addr: u64, writes: &[(u64, u32)]) -> TraceRecord {
        TraceRecord {
            pos,
            tid: 0,
            addr,
            size: 4,
            bytes: vec![0; 4],
            mnemonic: "X".into(),
            kind: ControlKind::Fall,
            taken: None,
            mem_reads: vec![],
            mem_writes: writes.iter().map(|&(a, s)| MemRange(a, s)).collect(),
            reg_reads: vec![],
            reg_writes: vec![],
            taint_source: false,
        }
    }

    #[test]
    fn intersection_predicate() {
        let r = rec(0, 100, &[]);
        let hit: WrittenLocs = [Location::mem(102)].into_iter().collect();
        let miss: WrittenLocs = [Location::mem(104), Location::reg(100)].into_iter().collect();
        assert!(instr_starts_new_phase(&r, &hit));
        assert!(!instr_starts_new_phase(&r, &miss));
    }

    #[test]
    fn no_code_writes_is_one_phase() {
        let t = Trace::new((0..5).map(|i| rec(i, 4 * i as u64, &[(1000, 8)])).collect());
        assert_eq!(partition(&t), vec![Phase { index: 0, start: 0, end: 4 }]);
    }

    #[test]
    fn empty_trace_has_no_phases() {
        assert!(partition(&Trace::default()).is_empty());
    }

    #[test]
    fn self_overwrite_stays_in_phase() {
        // pos0 writes its own bytes; pos1 elsewhere; pos2 re-executes addr 0
        let t = Trace::new(vec![rec(0, 0, &[(1, 1)]), rec(1, 4, &[]), rec(2, 0, &[])]);
        assert_eq!(
            partition(&t),
            vec![Phase { index: 0, start: 0, end: 1 }, Phase { index: 1, start: 2, end: 2 }]
        );
    }

    #[test]
    fn rewriting_same_value_still_splits() {
        // location-based, values are never consulted
        let t = Trace::new(vec![rec(0, 0, &[(8, 4)]), rec(1, 8, &[])]);
        assert_eq!(partition(&t).len(), 2);
    }

    #[test]
    fn written_set_resets_each_phase() {
        // pos0 writes 8 and 16; pos1 at 8 opens phase 1; pos2 at 16 was
        // written in phase 0 only and stays in phase 1
        let t = Trace::new(vec![rec(0, 0, &[(8, 1), (16, 1)]), rec(1, 8, &[]), rec(2, 16, &[])]);
        let p = partition(&t);
        assert_eq!(p.len(), 2);
        assert_eq!(p[1], Phase { index: 1, start: 1, end: 2 });
    }

    #[test]
    fn phase_lookup() {
        let phases = vec![Phase { index: 0, start: 0, end: 3 }, Phase { index: 1, start: 4, end: 8 }];
        assert_eq!(phase_of(&phases, 0), Some(0));
        assert_eq!(phase_of(&phases, 3), Some(0));
        assert_eq!(phase_of(&phases, 4), Some(1));
        assert_eq!(phase_of(&phases, 9), None);
    }
}
