//! Deterministic toy machine with self-modifying code support.
//!
//! Instructions are fetched from current memory on every step, so stores
//! into code take effect the next time the patched slot executes.

pub mod asm;
pub mod corpus;
pub mod isa;
mod machine;

use serde_json::Value;

pub use asm::{assemble, disassemble, listing};
pub use isa::{Instr, Opcode, FLAGS_REG, INSTR_SIZE, LINK_REG, NUM_REGS};
pub use machine::{ToyProgram, ToyState};

use crate::error::VmError;
use crate::trace::Trace;

/// ISA tag recorded in trace metadata.
pub const ISA_TAG: &str = "toy4";

/// Runs `program` until HALT. The trace's metadata records the ISA tag and
/// the positions of executed MARK instructions.
pub fn run(program: &ToyProgram, max_steps: u64) -> Result<Trace, VmError> {
    let mut trace = machine::run(program, max_steps)?;
    let markers: Vec<usize> = trace
        .records
        .iter()
        .filter(|r| r.mnemonic == Opcode::Mark.name())
        .map(|r| r.pos)
        .collect();
    trace.meta.insert("isa".into(), Value::from(ISA_TAG));
    if !markers.is_empty() {
        trace.set_markers(&markers);
    }
    Ok(trace)
}
