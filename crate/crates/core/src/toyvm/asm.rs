//! Two-pass assembler for the toy ISA.
//!
//! One instruction or directive per line; `;` and `#` start comments.
//! Labels end with `:` and may share a line with an instruction.
//!
//! ```text
//! .org 0x40          ; set the location counter
//! .entry main        ; entry point (defaults to the first emitted address)
//! .input 15, 8       ; values consumed by IN
//! .byte 0x90, 0, 0, 0
//! main:  CONST r1, 5
//!        LOAD  r2, [r1+3]
//!        JNZ   main
//! ```
//!
//! Branch and call operands are absolute targets (labels or numbers); the
//! assembler encodes them relative to the following instruction.

use std::collections::{BTreeMap, HashMap};

use crate::error::AsmError;
use crate::toyvm::isa::{Instr, Opcode, INSTR_SIZE};
use crate::toyvm::machine::ToyProgram;

enum Item<'a> {
    Instr { line: usize, addr: u64, op: Opcode, operands: Vec<&'a str> },
    Bytes { line: usize, addr: u64, values: Vec<&'a str> },
}

fn err(line: usize, message: impl Into<String>) -> AsmError {
    AsmError { line, message: message.into() }
}

fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn split_operands(rest: &str) -> Vec<&str> {
    if rest.trim().is_empty() {
        return Vec::new();
    }
    rest.split(',').map(str::trim).collect()
}

struct Resolver<'a> {
    labels: &'a HashMap<String, u64>,
    line: usize,
}

impl Resolver<'_> {
    fn value(&self, s: &str) -> Result<i64, AsmError> {
        if let Some(v) = parse_int(s) {
            return Ok(v);
        }
        self.labels
            .get(s)
            .map(|&a| a as i64)
            .ok_or_else(|| err(self.line, format!("unknown label or bad number `{s}`")))
    }

    fn reg(&self, s: &str) -> Result<u8, AsmError> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("lr") {
            return Ok(14);
        }
        s.strip_prefix(['r', 'R'])
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|&n| n < 16)
            .ok_or_else(|| err(self.line, format!("expected register r0..r15, found `{s}`")))
    }

    /// `[rs]`, `[rs+imm]` or `[rs-imm]`.
    fn mem(&self, s: &str) -> Result<(u8, u8), AsmError> {
        let inner = s
            .trim()
            .strip_prefix('[')
            .and_then(|x| x.strip_suffix(']'))
            .ok_or_else(|| err(self.line, format!("expected memory operand, found `{s}`")))?;
        let split = inner.find(['+', '-']);
        let (base, off) = match split {
            Some(i) => (&inner[..i], self.value(&inner[i..])?),
            None => (inner, 0),
        };
        Ok((self.reg(base)?, self.imm8(off)?))
    }

    fn imm8(&self, v: i64) -> Result<u8, AsmError> {
        i8::try_from(v)
            .map(|x| x as u8)
            .map_err(|_| err(self.line, format!("immediate {v} does not fit in 8 signed bits")))
    }

    fn rel8(&self, target: &str, addr: u64) -> Result<u8, AsmError> {
        let t = self.value(target)?;
        let rel = t - (addr + INSTR_SIZE) as i64;
        i8::try_from(rel)
            .map(|x| x as u8)
            .map_err(|_| err(self.line, format!("branch target {t:#x} out of range ({rel})")))
    }
}

fn expect_operands(line: usize, op: Opcode, operands: &[&str], n: usize) -> Result<(), AsmError> {
    if operands.len() != n {
        return Err(err(
            line,
            format!("{} takes {n} operand(s), found {}", op.name(), operands.len()),
        ));
    }
    Ok(())
}

fn encode(
    r: &Resolver<'_>,
    addr: u64,
    op: Opcode,
    operands: &[&str],
) -> Result<[u8; 4], AsmError> {
    let line = r.line;
    let b = op.byte();
    let word = match op {
        Opcode::Const => {
            expect_operands(line, op, operands, 2)?;
            let v = r.value(operands[1])?;
            if !(i64::from(i16::MIN)..=i64::from(u16::MAX)).contains(&v) {
                return Err(err(line, format!("constant {v} does not fit in 16 bits")));
            }
            let [lo, hi] = (v as u16).to_le_bytes();
            [b, r.reg(operands[0])?, lo, hi]
        }
        Opcode::Mov => {
            expect_operands(line, op, operands, 2)?;
            [b, r.reg(operands[0])?, r.reg(operands[1])?, 0]
        }
        Opcode::Add | Opcode::Sub | Opcode::And | Opcode::Or | Opcode::Xor | Opcode::Shr => {
            expect_operands(line, op, operands, 3)?;
            [b, r.reg(operands[0])?, r.reg(operands[1])?, r.reg(operands[2])?]
        }
        Opcode::Addi => {
            expect_operands(line, op, operands, 2)?;
            [b, r.reg(operands[0])?, 0, r.imm8(r.value(operands[1])?)?]
        }
        Opcode::Load => {
            expect_operands(line, op, operands, 2)?;
            let (base, off) = r.mem(operands[1])?;
            [b, r.reg(operands[0])?, base, off]
        }
        Opcode::Store => {
            expect_operands(line, op, operands, 2)?;
            let (base, off) = r.mem(operands[0])?;
            [b, base, r.reg(operands[1])?, off]
        }
        Opcode::Jmp | Opcode::Jz | Opcode::Jnz | Opcode::Call => {
            expect_operands(line, op, operands, 1)?;
            [b, r.rel8(operands[0], addr)?, 0, 0]
        }
        Opcode::In => {
            expect_operands(line, op, operands, 1)?;
            [b, r.reg(operands[0])?, 0, 0]
        }
        Opcode::Ret | Opcode::Mark | Opcode::Nop | Opcode::Halt => {
            expect_operands(line, op, operands, 0)?;
            [b, 0, 0, 0]
        }
    };
    Ok(word)
}

/// Assembles source text into a program image.
pub fn assemble(source: &str) -> Result<ToyProgram, AsmError> {
    let mut labels: HashMap<String, u64> = HashMap::new();
    let mut items = Vec::new();
    let mut entry_expr: Option<(usize, &str)> = None;
    let mut inputs_expr: Vec<(usize, &str)> = Vec::new();
    let mut pc: u64 = 0;
    let mut first_addr = None;

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let mut text = raw.split([';', '#']).next().unwrap_or("").trim();

        while let Some(colon) = text.find(':') {
            let (label, rest) = text.split_at(colon);
            let label = label.trim();
            if label.is_empty() || !label.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.') {
                break;
            }
            if labels.insert(label.to_owned(), pc).is_some() {
                return Err(err(line, format!("duplicate label `{label}`")));
            }
            text = rest[1..].trim();
        }
        if text.is_empty() {
            continue;
        }

        let (head, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        match head.to_ascii_lowercase().as_str() {
            ".org" => {
                pc = parse_int(rest)
                    .filter(|v| *v >= 0)
                    .ok_or_else(|| err(line, format!("bad .org address `{}`", rest.trim())))?
                    as u64;
            }
            ".entry" => entry_expr = Some((line, rest.trim())),
            ".input" => inputs_expr.extend(split_operands(rest).into_iter().map(|v| (line, v))),
            ".byte" => {
                let values = split_operands(rest);
                first_addr.get_or_insert(pc);
                let n = values.len() as u64;
                items.push(Item::Bytes { line, addr: pc, values });
                pc += n;
            }
            name => {
                let op = Opcode::from_name(name)
                    .ok_or_else(|| err(line, format!("unknown mnemonic `{head}`")))?;
                first_addr.get_or_insert(pc);
                items.push(Item::Instr { line, addr: pc, op, operands: split_operands(rest) });
                pc += INSTR_SIZE;
            }
        }
    }

    let mut memory = BTreeMap::new();
    let mut place = |line: usize, addr: u64, byte: u8| -> Result<(), AsmError> {
        if memory.insert(addr, byte).is_some() {
            return Err(err(line, format!("overlapping output at {addr:#x}")));
        }
        Ok(())
    };
    for item in &items {
        match item {
            Item::Instr { line, addr, op, operands } => {
                let r = Resolver { labels: &labels, line: *line };
                let word = encode(&r, *addr, *op, operands)?;
                for (i, b) in word.into_iter().enumerate() {
                    place(*line, addr + i as u64, b)?;
                }
            }
            Item::Bytes { line, addr, values } => {
                let r = Resolver { labels: &labels, line: *line };
                for (i, v) in values.iter().enumerate() {
                    let x = r.value(v)?;
                    let b = u8::try_from(x)
                        .or_else(|_| i8::try_from(x).map(|s| s as u8))
                        .map_err(|_| err(*line, format!("byte value {x} out of range")))?;
                    place(*line, addr + i as u64, b)?;
                }
            }
        }
    }

    let entry = match entry_expr {
        Some((line, e)) => Resolver { labels: &labels, line }.value(e)? as u64,
        None => first_addr.unwrap_or(0),
    };
    let inputs = inputs_expr
        .into_iter()
        .map(|(line, v)| Resolver { labels: &labels, line }.value(v).map(|x| x as u64))
        .collect::<Result<_, _>>()?;

    Ok(ToyProgram { memory, entry, inputs })
}

/// Renders one instruction word at `addr`; branch operands print as
/// absolute targets.
pub fn disassemble(addr: u64, raw: [u8; 4]) -> String {
    let Some(i) = Instr::decode(raw) else {
        return format!(".byte {:#04x}, {:#04x}, {:#04x}, {:#04x}", raw[0], raw[1], raw[2], raw[3]);
    };
    let target = || addr.wrapping_add(INSTR_SIZE).wrapping_add(i.rel8() as u64);
    let off = |v: i64| if v < 0 { format!("{v}") } else { format!("+{v}") };
    match i.op {
        Opcode::Const => format!("CONST r{}, {}", i.a(), i.imm16()),
        Opcode::Mov => format!("MOV r{}, r{}", i.a(), i.b()),
        Opcode::Addi => format!("ADDI r{}, {}", i.a(), i.imm8()),
        Opcode::Load => format!("LOAD r{}, [r{}{}]", i.a(), i.b(), off(i.imm8())),
        Opcode::Store => format!("STORE [r{}{}], r{}", i.a(), off(i.imm8()), i.b()),
        Opcode::Jmp | Opcode::Jz | Opcode::Jnz | Opcode::Call => {
            format!("{} {:#x}", i.op.name(), target())
        }
        Opcode::In => format!("IN r{}", i.a()),
        Opcode::Ret | Opcode::Mark | Opcode::Nop | Opcode::Halt => i.op.name().to_owned(),
        op => format!("{} r{}, r{}, r{}", op.name(), i.a(), i.b(), i.c()),
    }
}

/// One listing line per 4-byte slot of the image, in address order.
pub fn listing(program: &ToyProgram) -> Vec<String> {
    let mut out = Vec::new();
    let mut addrs = program.memory.keys().copied().peekable();
    while let Some(addr) = addrs.next() {
        let word = [0, 1, 2, 3].map(|k| program.memory.get(&(addr + k)).copied().unwrap_or(0));
        while addrs.peek().is_some_and(|&a| a < addr + INSTR_SIZE) {
            addrs.next();
        }
        let marker = if addr == program.entry { ">" } else { " " };
        out.push(format!(
            "{marker}{addr:#06x}  {:02x} {:02x} {:02x} {:02x}  {}",
            word[0],
            word[1],
            word[2],
            word[3],
            disassemble(addr, word)
        ));
    }
    out
}
