//! Environmental trigger detection.
//!
//! Input taint is propagated forward through the trace. A codegen
//! dependence whose writer is tainted means input-dependent code was
//! generated and later executed.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::dcfg::Dcfg;
use crate::dependence::{codegen_deps, control_deps};
use crate::error::TaintError;
use crate::trace::{Location, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TaintPolicy {
    #[serde(rename = "DATA_ONLY")]
    DataOnly,
    /// Also taints instructions control-dependent on a tainted branch.
    #[serde(rename = "DATA_AND_CONTROL")]
    DataAndControl,
}

impl fmt::Display for TaintPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaintPolicy::DataOnly => "data",
            TaintPolicy::DataAndControl => "data+control",
        })
    }
}

impl FromStr for TaintPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "data" => Ok(TaintPolicy::DataOnly),
            "data+control" => Ok(TaintPolicy::DataAndControl),
            _ => Err(format!("unknown policy `{s}` (expected `data` or `data+control`)")),
        }
    }
}

/// Where taint starts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TaintSources {
    /// Positions whose writes are tainted.
    pub positions: BTreeSet<usize>,
    /// Locations tainted before the trace starts.
    pub locations: BTreeSet<Location>,
}

impl TaintSources {
    /// Records flagged as taint sources.
    pub fn from_trace(trace: &Trace) -> Self {
        TaintSources {
            positions: trace.records.iter().filter(|r| r.taint_source).map(|r| r.pos).collect(),
            locations: BTreeSet::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty() && self.locations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaintState {
    /// Locations tainted at the end of the trace.
    pub tainted: HashSet<Location>,
    /// Positions whose effects depend on a source, ascending.
    pub tainted_positions: Vec<usize>,
    pub policy: TaintPolicy,
}

impl TaintState {
    pub fn is_tainted(&self, pos: usize) -> bool {
        self.tainted_positions.binary_search(&pos).is_ok()
    }
}

/// Forward taint propagation. A position is tainted when it is a source,
/// reads a tainted location, or (with control flow) its controlling branch
/// is tainted. Writes of a tainted position become tainted; writes of an
/// untainted one clear the taint.
pub fn propagate_taint(
    trace: &Trace,
    dcfg: &Dcfg,
    sources: &TaintSources,
    policy: TaintPolicy,
) -> Result<TaintState, TaintError> {
    if sources.is_empty() {
        return Err(TaintError::NoSources);
    }
    if let Some(&pos) = sources.positions.iter().find(|&&p| p >= trace.len()) {
        return Err(TaintError::OutOfRange { pos, len: trace.len() });
    }
    let mut parent = vec![None; trace.len()];
    if policy == TaintPolicy::DataAndControl {
        for e in control_deps(trace, dcfg) {
            parent[e.from_pos] = Some(e.to_pos);
        }
    }
    let mut tainted: HashSet<Location> = sources.locations.iter().copied().collect();
    let mut marked = vec![false; trace.len()];
    for rec in &trace.records {
        let hit = sources.positions.contains(&rec.pos)
            || rec.read().any(|l| tainted.contains(&l))
            || parent[rec.pos].is_some_and(|j| marked[j]);
        marked[rec.pos] = hit;
        for loc in rec.written() {
            if hit {
                tainted.insert(loc);
            } else {
                tainted.remove(&loc);
            }
        }
    }
    Ok(TaintState {
        tainted,
        tainted_positions: (0..trace.len()).filter(|&p| marked[p]).collect(),
        policy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Finding {
    /// The tainted instruction that wrote code.
    pub writer_pos: usize,
    /// The later execution of the written code.
    pub dynamic_pos: usize,
    #[serde(serialize_with = "ser_loc")]
    pub loc: Location,
}

fn ser_loc<S: serde::Serializer>(loc: &Location, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(loc)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TriggerReport {
    pub policy: TaintPolicy,
    pub findings: Vec<Finding>,
}

/// Every codegen dependence whose writer is tainted, ordered by
/// `(writer_pos, dynamic_pos)`.
pub fn findings(trace: &Trace, taint: &TaintState) -> Vec<Finding> {
    let mut out: Vec<Finding> = codegen_deps(trace)
        .into_iter()
        .filter(|e| taint.is_tainted(e.to_pos))
        .map(|e| Finding {
            writer_pos: e.to_pos,
            dynamic_pos: e.from_pos,
            loc: e.loc.expect("codegen edges carry a location"),
        })
        .collect();
    out.sort_unstable();
    out
}

/// Taints from `sources` and reports input-dependent code generation.
/// Without explicit sources the trace's flagged records are used, and a
/// trace without any yields an empty report; explicit empty sources are an
/// error.
pub fn detect_triggers(
    trace: &Trace,
    dcfg: &Dcfg,
    policy: TaintPolicy,
    sources: Option<&TaintSources>,
) -> Result<TriggerReport, TaintError> {
    let default;
    let sources = match sources {
        Some(s) => s,
        None => {
            default = TaintSources::from_trace(trace);
            if default.is_empty() {
                return Ok(TriggerReport { policy, findings: Vec::new() });
            }
            &default
        }
    };
    let taint = propagate_taint(trace, dcfg, sources, policy)?;
    Ok(TriggerReport { policy, findings: findings(trace, &taint) })
}
