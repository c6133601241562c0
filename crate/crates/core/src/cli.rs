//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 when an analysis fails, 2 on usage errors.
//! Diagnostics go to stderr; results go to stdout or the `-o` path.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dcfg::{build_dcfg, export_dot, export_dot_highlighted, Dcfg};
use crate::dependence::{all_deps, DepKind, KindSet};
use crate::phase::partition;
use crate::slicer::{dice, dice_slice, find_marker, SliceCriterion, Slicer};
use crate::toyvm;
use crate::trace::{read_trace, write_trace, Location, Trace};
use crate::trigger::{detect_triggers, TaintPolicy, TaintSources};

pub const MAX_STEPS_ENV: &str = "DYNCODE_LENS_MAX_STEPS";

#[derive(Debug, Parser)]
#[command(name = "dyncode-lens", version, about = "Analyze traces of self-modifying code")]
pub struct Cli {
    /// Write results to this file instead of stdout.
    #[arg(short, long, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Data,
    Control,
    Codegen,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble a toy program and print its listing.
    Asm {
        source: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Assemble and run a toy program, writing its trace as JSONL.
    Run {
        /// Assembly file, or a bundled program name with --builtin.
        source: String,
        /// Treat SOURCE as the name of a bundled program.
        #[arg(long)]
        builtin: bool,
        /// Comma-separated input values, replacing the program's `.input`.
        #[arg(long, value_delimiter = ',')]
        inputs: Option<Vec<u64>>,
        #[arg(long, env = MAX_STEPS_ENV, default_value_t = 1_000_000)]
        max_steps: u64,
    },
    /// Print the phases of a trace.
    Phases {
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Build the dynamic CFG; prints DOT unless --stats or --dot is given.
    Dcfg {
        trace: PathBuf,
        /// Store identical blocks once, annotated with their phases.
        #[arg(long)]
        shared: bool,
        /// Write DOT to this path.
        #[arg(long, value_name = "PATH")]
        dot: Option<PathBuf>,
        /// Print size metrics as JSON.
        #[arg(long)]
        stats: bool,
    },
    /// Print dependence edges as JSONL.
    Deps {
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        kind: KindArg,
    },
    /// Backward dynamic slice.
    Slice {
        trace: PathBuf,
        /// Criterion trace position.
        #[arg(long)]
        at: usize,
        /// Criterion locations such as `mem:0x40` or `reg:3`.
        #[arg(long, value_delimiter = ',')]
        locs: Option<Vec<Location>>,
        /// Ignore codegen dependences.
        #[arg(long)]
        no_codegen: bool,
        /// Slice only the trace suffix starting at this position.
        #[arg(long, conflicts_with = "auto_marker")]
        marker: Option<usize>,
        /// Dice at the first marker of the trace.
        #[arg(long)]
        auto_marker: bool,
        /// Write the DCFG as DOT with sliced blocks filled.
        #[arg(long, value_name = "PATH")]
        dot: Option<PathBuf>,
        /// Print only metrics.
        #[arg(long)]
        metrics: bool,
    },
    /// Report input-dependent code generation as JSON.
    Trigger {
        trace: PathBuf,
        #[arg(long, default_value = "data")]
        policy: TaintPolicy,
        /// Comma-separated source positions; default is records flagged
        /// `taint_source`.
        #[arg(long, value_delimiter = ',')]
        sources: Option<Vec<usize>>,
    },
    /// Trace, DCFG and dependence metrics as JSON.
    Stats {
        trace: PathBuf,
        #[arg(long)]
        shared: bool,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_trace(path: &Path) -> anyhow::Result<Trace> {
    let reader: Box<dyn BufRead> = if path.as_os_str() == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(BufReader::new(
            File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
        ))
    };
    read_trace(reader).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_dot_file(path: &Path, dcfg: &Dcfg, highlight: &BTreeSet<usize>) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    export_dot_highlighted(dcfg, highlight, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let mut out = open_output(cli.output.as_deref())?;
    match &cli.command {
        Command::Asm { source, format } => {
            let text = std::fs::read_to_string(source)
                .with_context(|| format!("cannot read {}", source.display()))?;
            let program = toyvm::assemble(&text)?;
            let lines = toyvm::listing(&program);
            match format {
                Format::Text => {
                    for l in lines {
                        writeln!(out, "{l}")?;
                    }
                }
                Format::Json => write_json(&mut *out, &lines)?,
            }
        }
        Command::Run { source, builtin, inputs, max_steps } => {
            let mut program = if *builtin {
                match toyvm::corpus::program(source) {
                    Some(p) => p,
                    None => bail!("no bundled program named `{source}`"),
                }
            } else {
                let text = std::fs::read_to_string(source)
                    .with_context(|| format!("cannot read {source}"))?;
                toyvm::assemble(&text)?
            };
            if let Some(inputs) = inputs {
                program.inputs = inputs.clone();
            }
            let trace = toyvm::run(&program, *max_steps)?;
            write_trace(&trace, &mut out)?;
        }
        Command::Phases { trace, format } => {
            let trace = load_trace(trace)?;
            let phases = partition(&trace);
            match format {
                Format::Text => {
                    for p in &phases {
                        writeln!(
                            out,
                            "phi={} start={} end={} ninstrs={}",
                            p.index,
                            p.start,
                            p.end,
                            p.len()
                        )?;
                    }
                }
                Format::Json => write_json(&mut *out, &phases)?,
            }
        }
        Command::Dcfg { trace, shared, dot, stats } => {
            let trace = load_trace(trace)?;
            let dcfg = build_dcfg(&trace, *shared)?;
            if let Some(path) = dot {
                write_dot_file(path, &dcfg, &BTreeSet::new())?;
            }
            if *stats {
                write_json(&mut *out, &dcfg.stats())?;
            } else if dot.is_none() {
                export_dot(&dcfg, &mut out)?;
            }
        }
        Command::Deps { trace, kind } => {
            let trace = load_trace(trace)?;
            let dcfg = build_dcfg(&trace, false)?;
            let kinds = match kind {
                KindArg::Data => KindSet::only(DepKind::Data),
                KindArg::Control => KindSet::only(DepKind::Control),
                KindArg::Codegen => KindSet::only(DepKind::Codegen),
                KindArg::All => KindSet::ALL,
            };
            for e in all_deps(&trace, &dcfg, kinds) {
                serde_json::to_writer(&mut out, &e)?;
                writeln!(out)?;
            }
        }
        Command::Slice { trace, at, locs, no_codegen, marker, auto_marker, dot, metrics } => {
            let trace = load_trace(trace)?;
            let crit = SliceCriterion {
                pos: *at,
                locs: locs.as_ref().map(|l| l.iter().copied().collect()),
            };
            let use_codegen = !no_codegen;
            let marker = match (marker, auto_marker) {
                (Some(m), _) => Some(*m),
                (None, true) => Some(find_marker(&trace).ok_or(crate::error::SliceError::MarkerNotFound)?),
                (None, false) => None,
            };
            match marker {
                None => slice_full(&mut *out, &trace, &crit, use_codegen, dot.as_deref(), *metrics)?,
                Some(m) => {
                    slice_diced(&mut *out, &trace, m, &crit, use_codegen, dot.as_deref(), *metrics)?
                }
            }
        }
        Command::Trigger { trace, policy, sources } => {
            let trace = load_trace(trace)?;
            let dcfg = build_dcfg(&trace, false)?;
            let sources = sources.as_ref().map(|s| TaintSources {
                positions: s.iter().copied().collect(),
                locations: BTreeSet::new(),
            });
            let report = detect_triggers(&trace, &dcfg, *policy, sources.as_ref())?;
            write_json(&mut *out, &report)?;
        }
        Command::Stats { trace, shared } => {
            let trace = load_trace(trace)?;
            let dcfg = build_dcfg(&trace, *shared)?;
            let deps = all_deps(&trace, &dcfg, KindSet::ALL);
            let count = |k: DepKind| deps.iter().filter(|e| e.kind == k).count();
            let stats = TraceStats {
                trace_len: trace.len(),
                dcfg: dcfg.stats(),
                deps: DepCounts {
                    data: count(DepKind::Data),
                    control: count(DepKind::Control),
                    codegen: count(DepKind::Codegen),
                },
            };
            write_json(&mut *out, &stats)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct DepCounts {
    data: usize,
    control: usize,
    codegen: usize,
}

#[derive(Serialize)]
struct TraceStats {
    trace_len: usize,
    dcfg: crate::dcfg::DcfgStats,
    deps: DepCounts,
}

#[derive(Serialize)]
struct SliceOutput<'a, M: Serialize> {
    criterion: usize,
    use_codegen: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    marker: Option<usize>,
    positions: &'a [usize],
    metrics: M,
}

fn highlight(dcfg: &Dcfg, instrs: impl Iterator<Item = (usize, u64)>) -> BTreeSet<usize> {
    instrs.filter_map(|(phase, addr)| dcfg.phase_views()[phase].node_of(addr)).collect()
}

fn slice_full(
    out: &mut dyn Write,
    trace: &Trace,
    crit: &SliceCriterion,
    use_codegen: bool,
    dot: Option<&Path>,
    metrics_only: bool,
) -> anyhow::Result<()> {
    let dcfg = build_dcfg(trace, false)?;
    let result = Slicer::new(trace, &dcfg).slice(crit, use_codegen)?;
    if let Some(path) = dot {
        let nodes = highlight(&dcfg, result.dcfg_instrs.iter().map(|i| (i.phase, i.addr)));
        write_dot_file(path, &dcfg, &nodes)?;
    }
    if metrics_only {
        write_json(out, &result.metrics)
    } else {
        write_json(
            out,
            &SliceOutput {
                criterion: crit.pos,
                use_codegen,
                marker: None,
                positions: &result.positions,
                metrics: result.metrics,
            },
        )
    }
}

fn slice_diced(
    out: &mut dyn Write,
    trace: &Trace,
    marker: usize,
    crit: &SliceCriterion,
    use_codegen: bool,
    dot: Option<&Path>,
    metrics_only: bool,
) -> anyhow::Result<()> {
    let report = dice_slice(trace, marker, crit, use_codegen, false)?;
    if let Some(path) = dot {
        let view = dice(trace, marker)?;
        let dcfg = build_dcfg(&view.trace, false)?;
        let nodes = highlight(
            &dcfg,
            report.positions_mk.iter().map(|&p| {
                let local = p - marker;
                (dcfg.phase_at(local).expect("in range"), view.trace.records[local].addr)
            }),
        );
        write_dot_file(path, &dcfg, &nodes)?;
    }
    if metrics_only {
        write_json(out, &report)
    } else {
        write_json(
            out,
            &SliceOutput {
                criterion: crit.pos,
                use_codegen,
                marker: Some(marker),
                positions: &report.positions_mk,
                metrics: &report,
            },
        )
    }
}
