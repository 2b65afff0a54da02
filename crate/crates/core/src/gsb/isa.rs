//! The GSB instruction set.
//!
//! Sixteen 32-bit registers `r0`..`r15`. `r13` is the stack pointer and
//! `r15` holds the return address; arguments travel in `r1`..`r4` and the
//! return value comes back in `r1`. Every instruction is eight bytes,
//! little-endian: `opcode u8, rd u8, rs1 u8, rs2 u8, imm i32`.
//!
//! Branch, jump and call immediates are absolute code addresses.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Size of one encoded instruction in bytes.
pub const INSN_SIZE: u32 = 8;
pub const NUM_REGS: usize = 16;

pub const SP: u8 = 13;
pub const RA: u8 = 15;
/// Registers carrying the first four arguments.
pub const ARG_REGS: [u8; 4] = [1, 2, 3, 4];
pub const RET_REG: u8 = 1;

/// `STORE mem[r13-8] <- r15`, the canonical function prologue.
pub const PROLOGUE_BYTES: [u8; 8] = [0x06, 0x00, 0x0D, 0x0F, 0xF8, 0xFF, 0xFF, 0xFF];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Opcode {
    Movi = 0x01,
    Mov = 0x02,
    Add = 0x03,
    Sub = 0x04,
    Load = 0x05,
    Store = 0x06,
    Call = 0x07,
    Callr = 0x08,
    Ret = 0x09,
    Beq = 0x0A,
    Bne = 0x0B,
    Jmp = 0x0C,
    Icall = 0x0D,
    Halt = 0x0E,
}

impl Opcode {
    pub fn from_byte(b: u8) -> Option<Opcode> {
        use Opcode::*;
        Some(match b {
            0x01 => Movi,
            0x02 => Mov,
            0x03 => Add,
            0x04 => Sub,
            0x05 => Load,
            0x06 => Store,
            0x07 => Call,
            0x08 => Callr,
            0x09 => Ret,
            0x0A => Beq,
            0x0B => Bne,
            0x0C => Jmp,
            0x0D => Icall,
            0x0E => Halt,
            _ => return None,
        })
    }

    pub fn mnemonic(self) -> &'static str {
        use Opcode::*;
        match self {
            Movi => "movi",
            Mov => "mov",
            Add => "add",
            Sub => "sub",
            Load => "load",
            Store => "store",
            Call => "call",
            Callr => "callr",
            Ret => "ret",
            Beq => "beq",
            Bne => "bne",
            Jmp => "jmp",
            Icall => "icall",
            Halt => "halt",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        use Opcode::*;
        [Movi, Mov, Add, Sub, Load, Store, Call, Callr, Ret, Beq, Bne, Jmp, Icall, Halt]
            .into_iter()
            .find(|op| op.mnemonic().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub opcode: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub imm: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("register index {0} out of range")]
    BadRegister(u8),
    #[error("instruction truncated")]
    Truncated,
}

impl Instruction {
    pub const fn new(opcode: Opcode, rd: u8, rs1: u8, rs2: u8, imm: i32) -> Self {
        Instruction { opcode, rd, rs1, rs2, imm }
    }

    pub const fn movi(rd: u8, imm: i32) -> Self {
        Self::new(Opcode::Movi, rd, 0, 0, imm)
    }
    pub const fn mov(rd: u8, rs1: u8) -> Self {
        Self::new(Opcode::Mov, rd, rs1, 0, 0)
    }
    pub const fn add(rd: u8, rs1: u8, rs2: u8) -> Self {
        Self::new(Opcode::Add, rd, rs1, rs2, 0)
    }
    pub const fn sub(rd: u8, rs1: u8, rs2: u8) -> Self {
        Self::new(Opcode::Sub, rd, rs1, rs2, 0)
    }
    pub const fn load(rd: u8, base: u8, off: i32) -> Self {
        Self::new(Opcode::Load, rd, base, 0, off)
    }
    pub const fn store(base: u8, off: i32, src: u8) -> Self {
        Self::new(Opcode::Store, 0, base, src, off)
    }
    pub const fn call(target: u32) -> Self {
        Self::new(Opcode::Call, 0, 0, 0, target as i32)
    }
    pub const fn callr(rs1: u8) -> Self {
        Self::new(Opcode::Callr, 0, rs1, 0, 0)
    }
    pub const fn ret() -> Self {
        Self::new(Opcode::Ret, 0, 0, 0, 0)
    }
    pub const fn beq(rs1: u8, rs2: u8, target: u32) -> Self {
        Self::new(Opcode::Beq, 0, rs1, rs2, target as i32)
    }
    pub const fn bne(rs1: u8, rs2: u8, target: u32) -> Self {
        Self::new(Opcode::Bne, 0, rs1, rs2, target as i32)
    }
    pub const fn jmp(target: u32) -> Self {
        Self::new(Opcode::Jmp, 0, 0, 0, target as i32)
    }
    pub const fn icall(import: u32) -> Self {
        Self::new(Opcode::Icall, 0, 0, 0, import as i32)
    }
    pub const fn halt() -> Self {
        Self::new(Opcode::Halt, 0, 0, 0, 0)
    }
    /// The canonical prologue, `STORE mem[r13-8] <- r15`.
    pub const fn prologue() -> Self {
        Self::store(SP, -8, RA)
    }

    pub fn encode(&self) -> [u8; 8] {
        let imm = self.imm.to_le_bytes();
        [self.opcode as u8, self.rd, self.rs1, self.rs2, imm[0], imm[1], imm[2], imm[3]]
    }

    pub fn decode(bytes: &[u8]) -> Result<Instruction, DecodeError> {
        if bytes.len() < INSN_SIZE as usize {
            return Err(DecodeError::Truncated);
        }
        let opcode = Opcode::from_byte(bytes[0]).ok_or(DecodeError::UnknownOpcode(bytes[0]))?;
        for &r in &bytes[1..4] {
            if r as usize >= NUM_REGS {
                return Err(DecodeError::BadRegister(r));
            }
        }
        let imm = i32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
        Ok(Instruction { opcode, rd: bytes[1], rs1: bytes[2], rs2: bytes[3], imm })
    }

    pub fn is_prologue(&self) -> bool {
        *self == Self::prologue()
    }

    pub fn is_cond_branch(&self) -> bool {
        matches!(self.opcode, Opcode::Beq | Opcode::Bne)
    }

    pub fn is_call(&self) -> bool {
        matches!(self.opcode, Opcode::Call | Opcode::Callr | Opcode::Icall)
    }

    /// Instructions after which control never falls through.
    pub fn is_terminator(&self) -> bool {
        matches!(self.opcode, Opcode::Ret | Opcode::Jmp | Opcode::Halt)
    }

    /// Whether the instruction ends a basic block.
    pub fn ends_block(&self) -> bool {
        self.is_cond_branch() || self.is_call() || self.is_terminator()
    }

    /// Static control-transfer target for branches, jumps and direct calls.
    pub fn target(&self) -> Option<u32> {
        match self.opcode {
            Opcode::Beq | Opcode::Bne | Opcode::Jmp | Opcode::Call => Some(self.imm as u32),
            _ => None,
        }
    }

    /// Register written by the instruction, if any.
    pub fn def(&self) -> Option<u8> {
        match self.opcode {
            Opcode::Movi | Opcode::Mov | Opcode::Add | Opcode::Sub | Opcode::Load => Some(self.rd),
            _ => None,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.opcode.mnemonic();
        match self.opcode {
            Opcode::Movi => write!(f, "{m} r{}, {}", self.rd, self.imm),
            Opcode::Mov => write!(f, "{m} r{}, r{}", self.rd, self.rs1),
            Opcode::Add | Opcode::Sub => {
                write!(f, "{m} r{}, r{}, r{}", self.rd, self.rs1, self.rs2)
            }
            Opcode::Load => write!(f, "{m} r{}, [r{}{:+}]", self.rd, self.rs1, self.imm),
            Opcode::Store => write!(f, "{m} [r{}{:+}], r{}", self.rs1, self.imm, self.rs2),
            Opcode::Call | Opcode::Jmp => write!(f, "{m} {:#x}", self.imm as u32),
            Opcode::Callr => write!(f, "{m} r{}", self.rs1),
            Opcode::Beq | Opcode::Bne => {
                write!(f, "{m} r{}, r{}, {:#x}", self.rs1, self.rs2, self.imm as u32)
            }
            Opcode::Icall => write!(f, "{m} #{}", self.imm),
            Opcode::Ret | Opcode::Halt => f.write_str(m),
        }
    }
}
