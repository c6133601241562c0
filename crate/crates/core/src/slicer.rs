//! Backward dynamic slicing and marker-based dicing.
//!
//! A slice is the backward closure of the criterion over data, control
//! and (optionally) codegen dependences. Codegen edges are what let a
//! slice from a dynamically generated instruction reach the code that
//! wrote it.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::dcfg::{build_dcfg, Dcfg};
use crate::dependence::{DepGraph, DepKind};
use crate::error::{Result, SliceError};
use crate::trace::{Location, Trace};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceCriterion {
    pub pos: usize,
    /// Locations of interest at `pos`. `None` means every location the
    /// instruction reads plus its own bytes, and its controlling branch.
    pub locs: Option<BTreeSet<Location>>,
}

impl SliceCriterion {
    pub fn at(pos: usize) -> Self {
        SliceCriterion { pos, locs: None }
    }

    pub fn with_locs(pos: usize, locs: impl IntoIterator<Item = Location>) -> Self {
        SliceCriterion { pos, locs: Some(locs.into_iter().collect()) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SliceMetrics {
    /// Instructions in the DCFG, counted once per phase.
    pub n_instrs: usize,
    /// DCFG instructions in the slice.
    pub n_slice: usize,
    /// `(n_instrs - n_slice) / n_instrs`, 0 for an empty DCFG.
    pub delta_slice: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct PhaseAddr {
    pub phase: usize,
    pub addr: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceResult {
    /// Trace positions, ascending.
    pub positions: Vec<usize>,
    pub dcfg_instrs: BTreeSet<PhaseAddr>,
    pub metrics: SliceMetrics,
}

impl SliceResult {
    pub fn contains(&self, pos: usize) -> bool {
        self.positions.binary_search(&pos).is_ok()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Dependences of one trace, reusable across many slices.
pub struct Slicer<'a> {
    trace: &'a Trace,
    dcfg: &'a Dcfg,
    deps: DepGraph,
}

impl<'a> Slicer<'a> {
    pub fn new(trace: &'a Trace, dcfg: &'a Dcfg) -> Self {
        Slicer { trace, dcfg, deps: DepGraph::build(trace, dcfg) }
    }

    pub fn deps(&self) -> &DepGraph {
        &self.deps
    }

    fn last_writer(&self, before: usize, loc: Location) -> Option<usize> {
        self.trace.records[..before]
            .iter()
            .rev()
            .find(|r| r.written().any(|w| w == loc))
            .map(|r| r.pos)
    }

    fn seeds(&self, crit: &SliceCriterion, use_codegen: bool) -> Vec<usize> {
        let follow = |k: DepKind| k != DepKind::Codegen || use_codegen;
        match &crit.locs {
            None => self
                .deps
                .out_edges(crit.pos)
                .iter()
                .filter(|e| follow(e.kind))
                .map(|e| e.to_pos)
                .collect(),
            Some(locs) => {
                let range = self.trace.records[crit.pos].instr_range();
                locs.iter()
                    .filter(|l| use_codegen || !(l.is_mem() && range.contains(&l.addr)))
                    .filter_map(|&l| self.last_writer(crit.pos, l))
                    .collect()
            }
        }
    }

    pub fn slice(&self, crit: &SliceCriterion, use_codegen: bool) -> Result<SliceResult, SliceError> {
        let len = self.trace.len();
        if crit.pos >= len {
            return Err(SliceError::OutOfRange { pos: crit.pos, len });
        }
        let mut seen = vec![false; len];
        seen[crit.pos] = true;
        let mut stack = Vec::new();
        for s in self.seeds(crit, use_codegen) {
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
        while let Some(p) = stack.pop() {
            for e in self.deps.out_edges(p) {
                if (e.kind != DepKind::Codegen || use_codegen) && !seen[e.to_pos] {
                    seen[e.to_pos] = true;
                    stack.push(e.to_pos);
                }
            }
        }
        let positions: Vec<usize> = (0..len).filter(|&p| seen[p]).collect();
        Ok(self.result(positions))
    }

    fn result(&self, positions: Vec<usize>) -> SliceResult {
        let dcfg_instrs: BTreeSet<PhaseAddr> = positions
            .iter()
            .map(|&p| PhaseAddr {
                phase: self.dcfg.phase_at(p).expect("position inside the trace"),
                addr: self.trace.records[p].addr,
            })
            .collect();
        let n_instrs = self.dcfg.phase_instr_count();
        let n_slice = dcfg_instrs.len();
        SliceResult {
            positions,
            dcfg_instrs,
            metrics: SliceMetrics {
                n_instrs,
                n_slice,
                delta_slice: ratio(n_instrs.saturating_sub(n_slice), n_instrs),
            },
        }
    }
}

/// Slices `trace` from `crit`. Builds the dependence graph once per call;
/// use [`Slicer`] for repeated queries.
pub fn backward_slice(
    trace: &Trace,
    dcfg: &Dcfg,
    crit: &SliceCriterion,
    use_codegen: bool,
) -> Result<SliceResult, SliceError> {
    if crit.pos >= trace.len() {
        return Err(SliceError::OutOfRange { pos: crit.pos, len: trace.len() });
    }
    Slicer::new(trace, dcfg).slice(crit, use_codegen)
}

/// First marker of the trace: `meta.markers` if present, else the first
/// `MARK` record.
pub fn find_marker(trace: &Trace) -> Option<usize> {
    trace
        .markers()
        .first()
        .copied()
        .or_else(|| trace.records.iter().find(|r| r.mnemonic == "MARK").map(|r| r.pos))
}

/// The trace suffix starting at a marker, renumbered from 0.
#[derive(Clone, Debug)]
pub struct DiceView {
    pub trace: Trace,
    /// Original position of the suffix's first record.
    pub offset: usize,
}

impl DiceView {
    pub fn to_original(&self, pos: usize) -> usize {
        pos + self.offset
    }
}

pub fn dice(trace: &Trace, marker_pos: usize) -> Result<DiceView, SliceError> {
    if marker_pos >= trace.len() {
        return Err(SliceError::OutOfRange { pos: marker_pos, len: trace.len() });
    }
    let records = trace.records[marker_pos..]
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.pos -= marker_pos;
            r
        })
        .collect();
    let mut view = Trace::new(records);
    view.meta = trace.meta.clone();
    let markers: Vec<usize> =
        trace.markers().iter().filter(|&&m| m >= marker_pos).map(|m| m - marker_pos).collect();
    view.set_markers(&markers);
    Ok(DiceView { trace: view, offset: marker_pos })
}

/// Comparison of full-trace and diced analyses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiceReport {
    pub marker: usize,
    pub dcfg_orig: usize,
    pub dcfg_mk: usize,
    pub slice_orig: usize,
    pub slice_mk: usize,
    /// `(dcfg_orig - dcfg_mk) / dcfg_orig`
    pub delta_dcfg: f64,
    /// `(slice_orig - slice_mk) / slice_orig`
    pub delta_slice: f64,
    /// `(dcfg_mk - slice_mk) / dcfg_mk`
    pub delta_mk: f64,
    /// The diced slice, in original trace positions.
    #[serde(skip)]
    pub positions_mk: Vec<usize>,
    #[serde(skip)]
    pub positions_orig: Vec<usize>,
}

/// Slices both the whole trace and its suffix from `marker`. The criterion
/// is given in original positions.
pub fn dice_slice(
    trace: &Trace,
    marker: usize,
    crit: &SliceCriterion,
    use_codegen: bool,
    shared: bool,
) -> Result<DiceReport> {
    if crit.pos >= trace.len() {
        return Err(SliceError::OutOfRange { pos: crit.pos, len: trace.len() }.into());
    }
    if marker > crit.pos {
        return Err(SliceError::MarkerAfterCriterion { marker, criterion: crit.pos }.into());
    }
    let full_dcfg = build_dcfg(trace, shared)?;
    let full = backward_slice(trace, &full_dcfg, crit, use_codegen)?;

    let view = dice(trace, marker)?;
    let mk_dcfg = build_dcfg(&view.trace, shared)?;
    let mk_crit = SliceCriterion { pos: crit.pos - marker, locs: crit.locs.clone() };
    let mk = backward_slice(&view.trace, &mk_dcfg, &mk_crit, use_codegen)?;

    let dcfg_orig = full_dcfg.phase_instr_count();
    let dcfg_mk = mk_dcfg.phase_instr_count();
    let slice_orig = full.metrics.n_slice;
    let slice_mk = mk.metrics.n_slice;
    Ok(DiceReport {
        marker,
        dcfg_orig,
        dcfg_mk,
        slice_orig,
        slice_mk,
        delta_dcfg: ratio(dcfg_orig.saturating_sub(dcfg_mk), dcfg_orig),
        delta_slice: ratio(slice_orig.saturating_sub(slice_mk), slice_orig),
        delta_mk: ratio(dcfg_mk.saturating_sub(slice_mk), dcfg_mk),
        positions_mk: mk.positions.iter().map(|&p| view.to_original(p)).collect(),
        positions_orig: full.positions,
    })
}
