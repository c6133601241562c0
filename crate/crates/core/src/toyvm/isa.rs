//! Fixed-width toy instruction set.
//!
//! Every instruction is four bytes, `[opcode, a, b, c]`:
//!
//! | mnemonic | encoding              | semantics                                |
//! |----------|-----------------------|------------------------------------------|
//! | CONST    | `01 rd lo hi`         | `rd = sext(imm16)`                       |
//! | MOV      | `02 rd rs 00`         | `rd = rs`                                |
//! | ADD..SHR | `1x rd rs rt`         | `rd = rs op rt`, sets Z                  |
//! | ADDI     | `16 rd 00 imm8`       | `rd += sext(imm8)`, sets Z               |
//! | LOAD     | `20 rd rs imm8`       | `rd = mem8[rs + sext(imm8)]`             |
//! | STORE    | `21 rs rt imm8`       | `mem8[rs + sext(imm8)] = rt & 0xff`      |
//! | JMP      | `30 rel8 00 00`       | `pc = pc + 4 + sext(rel8)`               |
//! | JZ / JNZ | `31/32 rel8 00 00`    | branch on Z                              |
//! | CALL     | `33 rel8 00 00`       | `r14 = pc + 4`, jump                     |
//! | RET      | `34 00 00 00`         | `pc = r14`                               |
//! | IN       | `40 rd 00 00`         | `rd = next input`                        |
//! | MARK     | `50 00 00 00`         | no effect                                |
//! | NOP      | `90 00 00 00`         | no effect                                |
//! | HALT     | `f4 00 00 00`         | stop                                     |
//!
//! The immediate of ADDI lives in the fourth byte and the branch offset in
//! the second, so single-byte patches retarget or re-parameterize code.

use crate::trace::ControlKind;

pub const INSTR_SIZE: u64 = 4;
pub const NUM_REGS: usize = 16;
/// Register index used for the zero flag in traces.
pub const FLAGS_REG: u16 = 16;
/// Link register written by CALL and read by RET.
pub const LINK_REG: u8 = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    Const,
    Mov,
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shr,
    Addi,
    Load,
    Store,
    Jmp,
    Jz,
    Jnz,
    Call,
    Ret,
    In,
    Mark,
    Nop,
    Halt,
}

impl Opcode {
    pub const ALL: [Opcode; 20] = [
        Opcode::Const,
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Shr,
        Opcode::Addi,
        Opcode::Load,
        Opcode::Store,
        Opcode::Jmp,
        Opcode::Jz,
        Opcode::Jnz,
        Opcode::Call,
        Opcode::Ret,
        Opcode::In,
        Opcode::Mark,
        Opcode::Nop,
        Opcode::Halt,
    ];

    pub fn byte(self) -> u8 {
        match self {
            Opcode::Const => 0x01,
            Opcode::Mov => 0x02,
            Opcode::Add => 0x10,
            Opcode::Sub => 0x11,
            Opcode::And => 0x12,
            Opcode::Or => 0x13,
            Opcode::Xor => 0x14,
            Opcode::Shr => 0x15,
            Opcode::Addi => 0x16,
            Opcode::Load => 0x20,
            Opcode::Store => 0x21,
            Opcode::Jmp => 0x30,
            Opcode::Jz => 0x31,
            Opcode::Jnz => 0x32,
            Opcode::Call => 0x33,
            Opcode::Ret => 0x34,
            Opcode::In => 0x40,
            Opcode::Mark => 0x50,
            Opcode::Nop => 0x90,
            Opcode::Halt => 0xf4,
        }
    }

    pub fn from_byte(b: u8) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|op| op.byte() == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Const => "CONST",
            Opcode::Mov => "MOV",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::And => "AND",
            Opcode::Or => "OR",
            Opcode::Xor => "XOR",
            Opcode::Shr => "SHR",
            Opcode::Addi => "ADDI",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Jmp => "JMP",
            Opcode::Jz => "JZ",
            Opcode::Jnz => "JNZ",
            Opcode::Call => "CALL",
            Opcode::Ret => "RET",
            Opcode::In => "IN",
            Opcode::Mark => "MARK",
            Opcode::Nop => "NOP",
            Opcode::Halt => "HALT",
        }
    }

    pub fn from_name(name: &str) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|op| op.name().eq_ignore_ascii_case(name))
    }

    pub fn kind(self) -> ControlKind {
        match self {
            Opcode::Jmp => ControlKind::Jump,
            Opcode::Jz | Opcode::Jnz => ControlKind::Condbr,
            Opcode::Call => ControlKind::Call,
            Opcode::Ret => ControlKind::Ret,
            Opcode::Halt => ControlKind::Halt,
            _ => ControlKind::Fall,
        }
    }

    /// Which operand bytes name registers.
    pub(crate) fn register_operands(self) -> &'static [usize] {
        match self {
            Opcode::Const | Opcode::Addi | Opcode::In => &[1],
            Opcode::Mov | Opcode::Load | Opcode::Store => &[1, 2],
            Opcode::Add | Opcode::Sub | Opcode::And | Opcode::Or | Opcode::Xor | Opcode::Shr => {
                &[1, 2, 3]
            }
            _ => &[],
        }
    }
}

/// A decoded instruction word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Instr {
    pub op: Opcode,
    pub raw: [u8; 4],
}

impl Instr {
    /// Decodes a word, rejecting unknown opcodes and out-of-range registers.
    pub fn decode(raw: [u8; 4]) -> Option<Instr> {
        let op = Opcode::from_byte(raw[0])?;
        if op.register_operands().iter().any(|&i| raw[i] as usize >= NUM_REGS) {
            return None;
        }
        Some(Instr { op, raw })
    }

    pub fn a(&self) -> u8 {
        self.raw[1]
    }

    pub fn b(&self) -> u8 {
        self.raw[2]
    }

    pub fn c(&self) -> u8 {
        self.raw[3]
    }

    pub fn imm16(&self) -> i64 {
        i64::from(i16::from_le_bytes([self.raw[2], self.raw[3]]))
    }

    pub fn rel8(&self) -> i64 {
        i64::from(self.raw[1] as i8)
    }

    pub fn imm8(&self) -> i64 {
        i64::from(self.raw[3] as i8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opcode_bytes_are_unique_and_round_trip() {
        for op in Opcode::ALL {
            assert_eq!(Opcode::from_byte(op.byte()), Some(op));
            assert_eq!(Opcode::from_name(op.name()), Some(op));
        }
        assert_eq!(Opcode::from_byte(0x00), None);
    }

    #[test]
    fn decode_rejects_bad_registers() {
        assert!(Instr::decode([0x10, 1, 2, 3]).is_some());
        assert!(Instr::decode([0x10, 1, 2, 16]).is_none());
        // JMP's second byte is an offset, not a register
        assert!(Instr::decode([0x30, 0xf0, 0, 0]).is_some());
    }

    #[test]
    fn immediates_sign_extend() {
        let i = Instr::decode([0x01, 0, 0xff, 0xff]).unwrap();
        assert_eq!(i.imm16(), -1);
        let j = Instr::decode([0x31, 0xf8, 0, 0]).unwrap();
        assert_eq!(j.rel8(), -8);
        let k = Instr::decode([0x16, 1, 0, 0x02]).unwrap();
        assert_eq!(k.imm8(), 2);
    }
}
