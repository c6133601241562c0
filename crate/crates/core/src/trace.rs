//! Execution-trace data model and its JSON Lines encoding.
//!
//! A trace file is UTF-8 JSON Lines: an optional leading `{"meta": {...}}`
//! object followed by one [`TraceRecord`] per line, in execution order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::TraceError;

/// Address space of a [`Location`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Space {
    Mem,
    Reg,
}

/// A single byte of memory or a whole register.
///
/// For [`Space::Reg`] the address is the register index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub space: Space,
    pub addr: u64,
}

impl Location {
    pub const fn mem(addr: u64) -> Self {
        Location { space: Space::Mem, addr }
    }

    pub const fn reg(index: u64) -> Self {
        Location { space: Space::Reg, addr: index }
    }

    pub fn is_mem(&self) -> bool {
        self.space == Space::Mem
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.space {
            Space::Mem => write!(f, "mem:{:#x}", self.addr),
            Space::Reg => write!(f, "reg:{}", self.addr),
        }
    }
}

/// Parses `mem:<addr>` or `reg:<index>`; numbers may be decimal or `0x` hex.
impl FromStr for Location {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (space, num) = s.split_once(':').ok_or_else(|| format!("expected `mem:N` or `reg:N`, got `{s}`"))?;
        let value = match num.strip_prefix("0x").or_else(|| num.strip_prefix("0X")) {
            Some(hex) => u64::from_str_radix(hex, 16),
            None => num.parse(),
        }
        .map_err(|e| format!("bad number in `{s}`: {e}"))?;
        match space {
            "mem" => Ok(Location::mem(value)),
            "reg" => Ok(Location::reg(value)),
            _ => Err(format!("unknown space `{space}` in `{s}`")),
        }
    }
}

/// How control leaves an instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ControlKind {
    Fall,
    Jump,
    Condbr,
    Call,
    Ret,
    Halt,
}

impl ControlKind {
    pub fn is_transfer(self) -> bool {
        self != ControlKind::Fall
    }
}

/// A byte range `[addr, addr + size)`, encoded as `[addr, size]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemRange(pub u64, pub u32);

impl MemRange {
    pub fn bytes(self) -> Range<u64> {
        self.0..self.0 + u64::from(self.1)
    }
}

/// One executed dynamic instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub pos: usize,
    pub tid: u32,
    pub addr: u64,
    pub size: u32,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub mnemonic: String,
    pub kind: ControlKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taken: Option<bool>,
    #[serde(default)]
    pub mem_reads: Vec<MemRange>,
    #[serde(default)]
    pub mem_writes: Vec<MemRange>,
    #[serde(default)]
    pub reg_reads: Vec<u16>,
    #[serde(default)]
    pub reg_writes: Vec<u16>,
    #[serde(default)]
    pub taint_source: bool,
}

impl TraceRecord {
    /// Bytes occupied by the instruction itself.
    pub fn instr_range(&self) -> Range<u64> {
        self.addr..self.addr + u64::from(self.size)
    }

    /// Every location written, memory bytes first. May repeat a location
    /// when write ranges overlap.
    pub fn written(&self) -> impl Iterator<Item = Location> + '_ {
        self.mem_writes
            .iter()
            .flat_map(|r| r.bytes().map(Location::mem))
            .chain(self.reg_writes.iter().map(|&r| Location::reg(u64::from(r))))
    }

    /// Every operand location read. Instruction bytes are not operand reads.
    pub fn read(&self) -> impl Iterator<Item = Location> + '_ {
        self.mem_reads
            .iter()
            .flat_map(|r| r.bytes().map(Location::mem))
            .chain(self.reg_reads.iter().map(|&r| Location::reg(u64::from(r))))
    }

    /// Memory bytes written.
    pub fn written_mem(&self) -> impl Iterator<Item = u64> + '_ {
        self.mem_writes.iter().flat_map(|r| r.bytes())
    }

    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.size == 0 {
            return Err(("size", "instruction size must be at least 1".into()));
        }
        if self.bytes.len() != self.size as usize {
            return Err((
                "bytes",
                format!("{} bytes given for size {}", self.bytes.len(), self.size),
            ));
        }
        match (self.kind, self.taken) {
            (ControlKind::Condbr, None) => {
                return Err(("taken", "CONDBR record requires `taken`".into()))
            }
            (k, Some(_)) if k != ControlKind::Condbr => {
                return Err(("taken", format!("`taken` present on {k:?} record")))
            }
            _ => {}
        }
        if self.addr.checked_add(u64::from(self.size)).is_none() {
            return Err(("addr", "instruction range overflows".into()));
        }
        for r in self.mem_reads.iter().chain(&self.mem_writes) {
            if r.0.checked_add(u64::from(r.1)).is_none() {
                return Err(("mem_reads/mem_writes", format!("range {:#x}+{} overflows", r.0, r.1)));
            }
        }
        Ok(())
    }
}

/// Locations occupied by the instruction: its memory bytes.
pub fn instr_of(rec: &TraceRecord) -> BTreeSet<Location> {
    rec.instr_range().map(Location::mem).collect()
}

/// Locations written by the instruction: memory bytes and registers.
pub fn writes_of(rec: &TraceRecord) -> BTreeSet<Location> {
    rec.written().collect()
}

/// Free-form trace metadata from the leading `{"meta": ...}` line.
pub type TraceMeta = BTreeMap<String, Value>;

/// An ordered, validated sequence of records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        Trace { records, meta: TraceMeta::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, pos: usize) -> Option<&TraceRecord> {
        self.records.get(pos)
    }

    /// Marker positions listed under `meta.markers`.
    pub fn markers(&self) -> Vec<usize> {
        self.meta
            .get("markers")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_u64).map(|p| p as usize).collect())
            .unwrap_or_default()
    }

    pub fn set_markers(&mut self, markers: &[usize]) {
        self.meta.insert("markers".into(), Value::from(markers.to_vec()));
    }

    /// Checks that positions are `0..len` in order and every record is well formed.
    pub fn validate(&self) -> Result<(), TraceError> {
        for (i, rec) in self.records.iter().enumerate() {
            if rec.pos != i {
                return Err(TraceError::Validation {
                    line: i + 1,
                    field: "pos",
                    message: format!("expected {i}, found {}", rec.pos),
                });
            }
            rec.validate().map_err(|(field, message)| TraceError::Validation {
                line: i + 1,
                field,
                message,
            })?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    meta: TraceMeta,
}

/// Streaming reader over a JSONL trace. Records are validated as they are
/// yielded; the metadata line, if any, is consumed on construction.
pub struct TraceReader<R> {
    source: R,
    line_no: usize,
    next_pos: usize,
    meta: TraceMeta,
    pending: Option<TraceRecord>,
    buf: String,
    failed: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(source: R) -> Result<Self, TraceError> {
        let mut reader = TraceReader {
            source,
            line_no: 0,
            next_pos: 0,
            meta: TraceMeta::new(),
            pending: None,
            buf: String::new(),
            failed: false,
        };
        if let Some(line) = reader.next_line()? {
            let value: Value = serde_json::from_str(&line)
                .map_err(|source| TraceError::Parse { line: reader.line_no, source })?;
            if value.get("meta").is_some() {
                let m: MetaLine = serde_json::from_value(value)
                    .map_err(|source| TraceError::Parse { line: reader.line_no, source })?;
                reader.meta = m.meta;
            } else {
                let rec: TraceRecord = serde_json::from_value(value)
                    .map_err(|source| TraceError::Parse { line: reader.line_no, source })?;
                reader.pending = Some(reader.check(rec)?);
            }
        }
        Ok(reader)
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    fn next_line(&mut self) -> Result<Option<String>, TraceError> {
        loop {
            self.buf.clear();
            let n = self.source.read_line(&mut self.buf)?;
            if n == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let trimmed = self.buf.trim();
            if !trimmed.is_empty() {
                return Ok(Some(trimmed.to_owned()));
            }
        }
    }

    fn check(&mut self, rec: TraceRecord) -> Result<TraceRecord, TraceError> {
        if rec.pos != self.next_pos {
            return Err(TraceError::Validation {
                line: self.line_no,
                field: "pos",
                message: format!("expected {}, found {}", self.next_pos, rec.pos),
            });
        }
        rec.validate().map_err(|(field, message)| TraceError::Validation {
            line: self.line_no,
            field,
            message,
        })?;
        self.next_pos += 1;
        Ok(rec)
    }

    fn read_record(&mut self) -> Result<Option<TraceRecord>, TraceError> {
        if let Some(rec) = self.pending.take() {
            return Ok(Some(rec));
        }
        let Some(line) = self.next_line()? else {
            return Ok(None);
        };
        let rec: TraceRecord = serde_json::from_str(&line)
            .map_err(|source| TraceError::Parse { line: self.line_no, source })?;
        self.check(rec).map(Some)
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.read_record() {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Reads and validates a whole trace.
pub fn read_trace<R: BufRead>(source: R) -> Result<Trace, TraceError> {
    let mut reader = TraceReader::new(source)?;
    let records = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(Trace { records, meta: reader.meta })
}

/// Writes `trace` as JSONL. The metadata line is emitted only when non-empty.
pub fn write_trace<W: Write>(trace: &Trace, mut sink: W) -> Result<(), TraceError> {
    if !trace.meta.is_empty() {
        serde_json::to_writer(&mut sink, &serde_json::json!({ "meta": trace.meta }))
            .map_err(TraceError::Encode)?;
        sink.write_all(b"\n")?;
    }
    for rec in &trace.records {
        serde_json::to_writer(&mut sink, rec).map_err(TraceError::Encode)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        hex::decode(s.as_ref()).map_err(serde::de::Error::custom)
    }
}
