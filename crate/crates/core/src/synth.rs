//! Seeded random traces for property tests and load testing.
//!
//! Traces come from a tiny machine with a region of 4-byte code slots.
//! Each slot's control kind and branch target are derived from its current
//! bytes, and random stores hit the code region, so the traces contain
//! self-modifying code that stays consistent within every phase.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::trace::{ControlKind, MemRange, Trace, TraceRecord};

const SLOT: u64 = 4;
const DATA_BASE: u64 = 0x1_0000;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub len: usize,
    pub threads: u32,
    /// Number of code slots.
    pub code_slots: u64,
    /// Bytes in the data region.
    pub data_size: u64,
    pub regs: u16,
    /// Chance that a record also writes into the code region.
    pub code_write_prob: f64,
    pub data_write_prob: f64,
    pub read_prob: f64,
    pub source_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            len: 200,
            threads: 1,
            code_slots: 16,
            data_size: 32,
            regs: 6,
            code_write_prob: 0.05,
            data_write_prob: 0.3,
            read_prob: 0.5,
            source_prob: 0.02,
        }
    }
}

fn kind_of(opcode: u8) -> ControlKind {
    match opcode % 8 {
        0..=3 => ControlKind::Fall,
        4 => ControlKind::Jump,
        _ => ControlKind::Condbr,
    }
}

fn mem_range(rng: &mut ChaCha8Rng, base: u64, span: u64) -> MemRange {
    let size = rng.gen_range(1..=2u32).min(span as u32);
    MemRange(base + rng.gen_range(0..=span - u64::from(size)), size)
}

/// A trace of `cfg.len` records generated from `seed`.
pub fn random_trace(seed: u64, cfg: &SynthConfig) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let code_len = cfg.code_slots * SLOT;
    let mut code: Vec<u8> = (0..code_len).map(|_| rng.gen()).collect();
    let mut pcs: Vec<u64> =
        (0..cfg.threads.max(1)).map(|_| rng.gen_range(0..cfg.code_slots) * SLOT).collect();
    let mut records = Vec::with_capacity(cfg.len);

    for pos in 0..cfg.len {
        let tid = rng.gen_range(0..pcs.len());
        let addr = pcs[tid];
        let bytes = code[addr as usize..(addr + SLOT) as usize].to_vec();
        let kind = kind_of(bytes[0]);
        let target = u64::from(bytes[1]) % cfg.code_slots * SLOT;
        let fall = (addr + SLOT) % code_len;
        let taken = (kind == ControlKind::Condbr).then(|| rng.gen_bool(0.5));
        pcs[tid] = match (kind, taken) {
            (ControlKind::Jump, _) | (_, Some(true)) => target,
            _ => fall,
        };

        let mut rec = TraceRecord {
            pos,
            tid: tid as u32,
            addr,
            size: SLOT as u32,
            mnemonic: format!("op{:02x}", bytes[0]),
            bytes,
            kind,
            taken,
            mem_reads: vec![],
            mem_writes: vec![],
            reg_reads: vec![],
            reg_writes: vec![],
            taint_source: rng.gen_bool(cfg.source_prob),
        };
        if rng.gen_bool(cfg.read_prob) {
            rec.reg_reads.push(rng.gen_range(0..cfg.regs));
        }
        if rng.gen_bool(cfg.read_prob) {
            let mut r = mem_range(&mut rng, DATA_BASE, cfg.data_size);
            if rng.gen_bool(0.2) {
                // code bytes, but never the reader's own
                let c = mem_range(&mut rng, 0, code_len);
                if c.bytes().all(|a| !rec.instr_range().contains(&a)) {
                    r = c;
                }
            }
            rec.mem_reads.push(r);
        }
        if rng.gen_bool(0.5) {
            rec.reg_writes.push(rng.gen_range(0..cfg.regs));
        }
        if rng.gen_bool(cfg.data_write_prob) {
            rec.mem_writes.push(mem_range(&mut rng, DATA_BASE, cfg.data_size));
        }
        if rng.gen_bool(cfg.code_write_prob) {
            let w = mem_range(&mut rng, 0, code_len);
            for a in w.bytes() {
                code[a as usize] = rng.gen();
            }
            rec.mem_writes.push(w);
        }
        records.push(rec);
    }
    Trace::new(records)
}
