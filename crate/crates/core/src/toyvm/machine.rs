use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::error::VmError;
use crate::toyvm::isa::{Instr, Opcode, FLAGS_REG, INSTR_SIZE, LINK_REG, NUM_REGS};
use crate::trace::{ControlKind, MemRange, Trace, TraceRecord};

/// A loadable toy program: initial memory, entry point and the values
/// consumed in order by `IN`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ToyProgram {
    pub memory: BTreeMap<u64, u8>,
    pub entry: u64,
    pub inputs: Vec<u64>,
}

/// Architectural state. Unmapped memory reads as zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyState {
    pub regs: [u64; NUM_REGS],
    pub zero_flag: bool,
    pub mem: HashMap<u64, u8>,
    pub pc: u64,
    pub halted: bool,
    pub step_count: u64,
    pub inputs: VecDeque<u64>,
}

impl ToyState {
    pub fn new(program: &ToyProgram) -> Self {
        ToyState {
            regs: [0; NUM_REGS],
            zero_flag: false,
            mem: program.memory.iter().map(|(&a, &b)| (a, b)).collect(),
            pc: program.entry,
            halted: false,
            step_count: 0,
            inputs: program.inputs.iter().copied().collect(),
        }
    }

    pub fn read_byte(&self, addr: u64) -> u8 {
        self.mem.get(&addr).copied().unwrap_or(0)
    }

    pub fn fetch(&self, addr: u64) -> [u8; 4] {
        [
            self.read_byte(addr),
            self.read_byte(addr.wrapping_add(1)),
            self.read_byte(addr.wrapping_add(2)),
            self.read_byte(addr.wrapping_add(3)),
        ]
    }

    /// Executes one instruction, decoded from current memory, and returns
    /// its trace record.
    pub fn step(&mut self) -> Result<TraceRecord, VmError> {
        if self.halted {
            return Err(VmError::Halted);
        }
        let pc = self.pc;
        let raw = self.fetch(pc);
        let instr = Instr::decode(raw).ok_or(VmError::Fault { pc, opcode: raw[0] })?;
        let next = pc.wrapping_add(INSTR_SIZE);

        let mut rec = TraceRecord {
            pos: self.step_count as usize,
            tid: 0,
            addr: pc,
            size: INSTR_SIZE as u32,
            bytes: raw.to_vec(),
            mnemonic: instr.op.name().to_owned(),
            kind: instr.op.kind(),
            taken: None,
            mem_reads: vec![],
            mem_writes: vec![],
            reg_reads: vec![],
            reg_writes: vec![],
            taint_source: false,
        };
        let mut new_pc = next;
        let reg = |r: u8| r as usize;

        match instr.op {
            Opcode::Const => {
                self.regs[reg(instr.a())] = instr.imm16() as u64;
                rec.reg_writes.push(instr.a().into());
            }
            Opcode::Mov => {
                self.regs[reg(instr.a())] = self.regs[reg(instr.b())];
                rec.reg_reads.push(instr.b().into());
                rec.reg_writes.push(instr.a().into());
            }
            Opcode::Add | Opcode::Sub | Opcode::And | Opcode::Or | Opcode::Xor | Opcode::Shr => {
                let (x, y) = (self.regs[reg(instr.b())], self.regs[reg(instr.c())]);
                let v = match instr.op {
                    Opcode::Add => x.wrapping_add(y),
                    Opcode::Sub => x.wrapping_sub(y),
                    Opcode::And => x & y,
                    Opcode::Or => x | y,
                    Opcode::Xor => x ^ y,
                    _ => x >> (y & 63),
                };
                self.regs[reg(instr.a())] = v;
                self.zero_flag = v == 0;
                rec.reg_reads.push(instr.b().into());
                if instr.c() != instr.b() {
                    rec.reg_reads.push(instr.c().into());
                }
                rec.reg_writes.extend([u16::from(instr.a()), FLAGS_REG]);
            }
            Opcode::Addi => {
                let r = reg(instr.a());
                let v = self.regs[r].wrapping_add(instr.imm8() as u64);
                self.regs[r] = v;
                self.zero_flag = v == 0;
                rec.reg_reads.push(instr.a().into());
                rec.reg_writes.extend([u16::from(instr.a()), FLAGS_REG]);
            }
            Opcode::Load => {
                let addr = self.regs[reg(instr.b())].wrapping_add(instr.imm8() as u64);
                self.regs[reg(instr.a())] = u64::from(self.read_byte(addr));
                rec.reg_reads.push(instr.b().into());
                rec.mem_reads.push(MemRange(addr, 1));
                rec.reg_writes.push(instr.a().into());
            }
            Opcode::Store => {
                let addr = self.regs[reg(instr.a())].wrapping_add(instr.imm8() as u64);
                self.mem.insert(addr, self.regs[reg(instr.b())] as u8);
                rec.reg_reads.push(instr.a().into());
                if instr.b() != instr.a() {
                    rec.reg_reads.push(instr.b().into());
                }
                rec.mem_writes.push(MemRange(addr, 1));
            }
            Opcode::Jmp => {
                new_pc = next.wrapping_add(instr.rel8() as u64);
            }
            Opcode::Jz | Opcode::Jnz => {
                let taken = (instr.op == Opcode::Jz) == self.zero_flag;
                if taken {
                    new_pc = next.wrapping_add(instr.rel8() as u64);
                }
                rec.taken = Some(taken);
                rec.reg_reads.push(FLAGS_REG);
            }
            Opcode::Call => {
                self.regs[LINK_REG as usize] = next;
                new_pc = next.wrapping_add(instr.rel8() as u64);
                rec.reg_writes.push(LINK_REG.into());
            }
            Opcode::Ret => {
                new_pc = self.regs[LINK_REG as usize];
                rec.reg_reads.push(LINK_REG.into());
            }
            Opcode::In => {
                let v = self.inputs.pop_front().ok_or(VmError::InputExhausted { pc })?;
                self.regs[reg(instr.a())] = v;
                rec.reg_writes.push(instr.a().into());
                rec.taint_source = true;
            }
            Opcode::Mark | Opcode::Nop => {}
            Opcode::Halt => {
                self.halted = true;
                new_pc = pc;
            }
        }

        debug_assert_eq!(rec.kind == ControlKind::Condbr, rec.taken.is_some());
        self.pc = new_pc;
        self.step_count += 1;
        Ok(rec)
    }
}

/// Runs `program` to completion. Fails if it has not halted after
/// `max_steps` instructions.
pub fn run(program: &ToyProgram, max_steps: u64) -> Result<Trace, VmError> {
    let mut state = ToyState::new(program);
    let mut records = Vec::new();
    while !state.halted {
        if state.step_count >= max_steps {
            return Err(VmError::Budget { budget: max_steps });
        }
        records.push(state.step()?);
    }
    Ok(Trace::new(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn program(words: &[[u8; 4]]) -> ToyProgram {
        let mut memory = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            for (j, b) in w.iter().enumerate() {
                memory.insert((i * 4 + j) as u64, *b);
            }
        }
        ToyProgram { memory, entry: 0, inputs: vec![] }
    }

    #[test]
    fn single_halt() {
        let t = run(&program(&[[0xf4, 0, 0, 0]]), 10).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.records[0].kind, ControlKind::Halt);
    }

    #[test]
    fn halt_leaves_machine_halted() {
        let mut s = ToyState::new(&program(&[[0xf4, 0, 0, 0]]));
        s.step().unwrap();
        assert!(s.halted);
        assert_eq!(s.step(), Err(VmError::Halted));
    }

    #[test]
    fn jz_not_taken_falls_through() {
        // CONST r1,1 ; ADDI r1,0 (Z clear) ; JZ +4 ; HALT ; HALT
        let p = program(&[
            [0x01, 1, 1, 0],
            [0x16, 1, 0, 0],
            [0x31, 4, 0, 0],
            [0xf4, 0, 0, 0],
            [0xf4, 0, 0, 0],
        ]);
        let t = run(&p, 10).unwrap();
        let jz = &t.records[2];
        assert_eq!(jz.kind, ControlKind::Condbr);
        assert_eq!(jz.taken, Some(false));
        assert_eq!(t.records[3].addr, 12);
    }

    #[test]
    fn store_into_code_is_seen_by_later_fetch() {
        // CONST r1,12 ; CONST r2,0x90 ; STORE [r1+0],r2 ; <0x00 slot patched to NOP> ; HALT
        let p = program(&[
            [0x01, 1, 12, 0],
            [0x01, 2, 0x90, 0],
            [0x21, 1, 2, 0],
            [0x00, 0, 0, 0],
            [0xf4, 0, 0, 0],
        ]);
        let t = run(&p, 10).unwrap();
        assert_eq!(t.records[3].bytes, vec![0x90, 0, 0, 0]);
        assert_eq!(t.records[3].mnemonic, "NOP");
    }

    #[test]
    fn undecodable_opcode_faults_with_pc() {
        let p = program(&[[0x90, 0, 0, 0], [0xee, 0, 0, 0]]);
        assert_eq!(run(&p, 10), Err(VmError::Fault { pc: 4, opcode: 0xee }));
    }

    #[test]
    fn budget_is_enforced() {
        // JMP -4 loops forever
        let p = program(&[[0x30, 0xfc, 0, 0]]);
        assert_eq!(run(&p, 100), Err(VmError::Budget { budget: 100 }));
    }

    #[test]
    fn in_marks_taint_source_and_consumes_inputs() {
        let mut p = program(&[[0x40, 3, 0, 0], [0xf4, 0, 0, 0]]);
        p.inputs = vec![42];
        let mut s = ToyState::new(&p);
        let r = s.step().unwrap();
        assert!(r.taint_source);
        assert_eq!(r.reg_writes, vec![3]);
        assert_eq!(s.regs[3], 42);

        p.inputs.clear();
        assert_eq!(run(&p, 10), Err(VmError::InputExhausted { pc: 0 }));
    }

    #[test]
    fn call_and_ret_use_link_register() {
        // CALL +4 ; HALT ; NOP ; RET
        let p = program(&[[0x33, 4, 0, 0], [0xf4, 0, 0, 0], [0x90, 0, 0, 0], [0x34, 0, 0, 0]]);
        let t = run(&p, 10).unwrap();
        let addrs: Vec<u64> = t.records.iter().map(|r| r.addr).collect();
        assert_eq!(addrs, vec![0, 8, 12, 4]);
        assert_eq!(t.records[0].kind, ControlKind::Call);
        assert_eq!(t.records[2].kind, ControlKind::Ret);
    }
}
