//! Analysis of execution traces that contain dynamically generated or
//! modified code.
//!
//! A trace is split into phases, each executing one version of the code.
//! Each phase gets its own CFG and consecutive phases are joined by
//! dynamic edges. On top of that graph the crate extracts data, control
//! and codegen dependences, computes backward slices (optionally diced at
//! a marker) and detects input-dependent code generation. [`toyvm`] is a
//! small self-modifying machine that produces traces for testing.

pub mod cfg;
pub mod cli;
pub mod dcfg;
pub mod dependence;
pub mod error;
pub mod phase;
pub mod postdom;
pub mod slicer;
pub mod synth;
pub mod toyvm;
pub mod trace;
pub mod trigger;

pub use error::{Error, Result};
