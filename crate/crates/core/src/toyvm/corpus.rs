//! Bundled toy programs exercising dynamic code.

use crate::toyvm::asm::assemble;
use crate::toyvm::machine::ToyProgram;

/// Loop whose closing branch offset is rewritten on every pass.
pub const BACKJUMP: &str = include_str!("../../programs/backjump.s");
/// An add whose immediate byte is patched between two calls.
pub const ADDTWO: &str = include_str!("../../programs/addtwo.s");
/// Input-derived trigger written straight into an instruction byte.
pub const TRIGGER_EXPLICIT: &str = include_str!("../../programs/trigger_explicit.s");
/// Input-derived trigger reaching an instruction byte through branches only.
pub const TRIGGER_IMPLICIT: &str = include_str!("../../programs/trigger_implicit.s");
/// Front-end loop, MARK, then an add-patching section.
pub const MARKED_PATCH: &str = include_str!("../../programs/marked_patch.s");
/// Countdown loop without dynamic code.
pub const COUNTER: &str = include_str!("../../programs/counter.s");

pub const ALL: [(&str, &str); 6] = [
    ("backjump", BACKJUMP),
    ("addtwo", ADDTWO),
    ("trigger_explicit", TRIGGER_EXPLICIT),
    ("trigger_implicit", TRIGGER_IMPLICIT),
    ("marked_patch", MARKED_PATCH),
    ("counter", COUNTER),
];

/// Assembles a bundled program by name.
pub fn program(name: &str) -> Option<ToyProgram> {
    ALL.iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| assemble(src).expect("bundled program assembles"))
}
