//! Intra-procedural abstract interpretation over GSB functions.
//!
//! Each register carries a small constant/stack-pointer lattice value and a
//! set of taint sources. Stack slots written through `r13`-relative stores
//! are tracked, as is the taint of stack buffers filled by string and
//! memory writer APIs.

use std::collections::{BTreeMap, BTreeSet};

use crate::graphs::Cfg;
use crate::gsb::isa::{ARG_REGS, NUM_REGS, RA, SP};
use crate::gsb::{GsbImage, Instruction, Opcode};

pub const CMP_APIS: &[&str] = &["strcmp", "strncmp", "memcmp", "strcasecmp", "strncasecmp"];
pub const WRITER_APIS: &[&str] = &[
    "sprintf", "snprintf", "vsprintf", "vsnprintf", "strcpy", "strncpy", "strcat", "strncat", "memcpy", "memmove",
];
/// APIs returning a fresh handle unrelated to their arguments' data.
pub const HANDLE_APIS: &[&str] = &["fopen", "fopen64", "open", "open64", "socket", "popen"];

pub fn is_cmp_api(name: &str) -> bool {
    CMP_APIS.contains(&name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Taint {
    Param(u8),
    Global(u32),
    /// Result of the call at this site.
    CallRet(u32),
    /// Result of a string/memory comparison at this site.
    CmpRet(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Known {
    Const(u32),
    /// Offset from the stack pointer at function entry.
    Stack(i32),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbsVal {
    pub known: Known,
    pub taint: BTreeSet<Taint>,
}

impl AbsVal {
    pub fn unknown() -> Self {
        AbsVal { known: Known::Unknown, taint: BTreeSet::new() }
    }

    pub fn constant(v: u32) -> Self {
        AbsVal { known: Known::Const(v), taint: BTreeSet::new() }
    }

    pub fn tainted(t: Taint) -> Self {
        AbsVal { known: Known::Unknown, taint: BTreeSet::from([t]) }
    }

    pub fn as_const(&self) -> Option<u32> {
        match self.known {
            Known::Const(v) => Some(v),
            _ => None,
        }
    }

    fn join(&self, other: &AbsVal) -> AbsVal {
        let known = if self.known == other.known { self.known } else { Known::Unknown };
        AbsVal { known, taint: self.taint.union(&other.taint).copied().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbsState {
    pub regs: [AbsVal; NUM_REGS],
    pub slots: BTreeMap<i32, AbsVal>,
    /// Taint of data stored in stack buffers, keyed by buffer offset.
    pub bufs: BTreeMap<i32, BTreeSet<Taint>>,
}

impl AbsState {
    pub fn at_entry() -> Self {
        let mut regs: [AbsVal; NUM_REGS] = std::array::from_fn(|_| AbsVal::unknown());
        for (i, r) in ARG_REGS.iter().enumerate() {
            regs[*r as usize] = AbsVal::tainted(Taint::Param(i as u8 + 1));
        }
        regs[SP as usize] = AbsVal { known: Known::Stack(0), taint: BTreeSet::new() };
        AbsState { regs, slots: BTreeMap::new(), bufs: BTreeMap::new() }
    }

    pub fn reg(&self, r: u8) -> &AbsVal {
        &self.regs[r as usize]
    }

    /// Taint of a register plus, when it points into the stack, the taint
    /// of the buffer it points at.
    pub fn effective_taint(&self, r: u8) -> BTreeSet<Taint> {
        let v = self.reg(r);
        let mut t = v.taint.clone();
        if let Known::Stack(o) = v.known {
            if let Some(b) = self.bufs.get(&o) {
                t.extend(b.iter().copied());
            }
        }
        t
    }

    fn join(&self, other: &AbsState) -> AbsState {
        let regs = std::array::from_fn(|i| self.regs[i].join(&other.regs[i]));
        let mut slots = BTreeMap::new();
        let keys: BTreeSet<i32> = self.slots.keys().chain(other.slots.keys()).copied().collect();
        let missing = AbsVal::unknown();
        for k in keys {
            let a = self.slots.get(&k).unwrap_or(&missing);
            let b = other.slots.get(&k).unwrap_or(&missing);
            slots.insert(k, a.join(b));
        }
        let mut bufs = self.bufs.clone();
        for (k, v) in &other.bufs {
            bufs.entry(*k).or_default().extend(v.iter().copied());
        }
        AbsState { regs, slots, bufs }
    }

    /// Apply one instruction.
    pub fn step(&mut self, img: &GsbImage, addr: u32, insn: &Instruction) {
        let r = |s: &AbsState, i: u8| s.regs[i as usize].clone();
        let rd = insn.rd as usize;
        match insn.opcode {
            Opcode::Movi => self.regs[rd] = AbsVal::constant(insn.imm as u32),
            Opcode::Mov => self.regs[rd] = r(self, insn.rs1),
            Opcode::Add | Opcode::Sub => {
                let (a, b) = (r(self, insn.rs1), r(self, insn.rs2));
                let sub = insn.opcode == Opcode::Sub;
                let known = match (a.known, b.known) {
                    (Known::Const(x), Known::Const(y)) => {
                        Known::Const(if sub { x.wrapping_sub(y) } else { x.wrapping_add(y) })
                    }
                    (Known::Stack(o), Known::Const(c)) => {
                        Known::Stack(if sub { o.wrapping_sub(c as i32) } else { o.wrapping_add(c as i32) })
                    }
                    (Known::Const(c), Known::Stack(o)) if !sub => Known::Stack(o.wrapping_add(c as i32)),
                    _ => Known::Unknown,
                };
                self.regs[rd] = AbsVal { known, taint: a.taint.union(&b.taint).copied().collect() };
            }
            Opcode::Load => {
                let base = r(self, insn.rs1);
                self.regs[rd] = match base.known {
                    Known::Stack(o) => {
                        self.slots.get(&o.wrapping_add(insn.imm)).cloned().unwrap_or_else(AbsVal::unknown)
                    }
                    Known::Const(a) => {
                        let at = a.wrapping_add(insn.imm as u32);
                        if img.in_data(at) {
                            AbsVal::tainted(Taint::Global(at))
                        } else {
                            AbsVal::unknown()
                        }
                    }
                    Known::Unknown => AbsVal { known: Known::Unknown, taint: base.taint },
                };
            }
            Opcode::Store => {
                if let Known::Stack(o) = self.reg(insn.rs1).known {
                    let v = r(self, insn.rs2);
                    self.slots.insert(o.wrapping_add(insn.imm), v);
                }
            }
            Opcode::Call | Opcode::Callr => {
                let mut t = self.arg_taints();
                t.insert(Taint::CallRet(addr));
                self.finish_call(AbsVal { known: Known::Unknown, taint: t });
            }
            Opcode::Icall => {
                let name = img.import_name(insn.imm).unwrap_or("");
                if WRITER_APIS.contains(&name) {
                    if let Known::Stack(o) = self.reg(ARG_REGS[0]).known {
                        let mut t = BTreeSet::new();
                        for &a in &ARG_REGS[1..] {
                            t.extend(self.effective_taint(a));
                        }
                        self.bufs.entry(o).or_default().extend(t);
                    }
                }
                let ret = if is_cmp_api(name) {
                    AbsVal::tainted(Taint::CmpRet(addr))
                } else if HANDLE_APIS.contains(&name) {
                    AbsVal::tainted(Taint::CallRet(addr))
                } else {
                    let mut t = self.arg_taints();
                    t.insert(Taint::CallRet(addr));
                    AbsVal { known: Known::Unknown, taint: t }
                };
                self.finish_call(ret);
            }
            Opcode::Ret | Opcode::Beq | Opcode::Bne | Opcode::Jmp | Opcode::Halt => {}
        }
    }

    fn arg_taints(&self) -> BTreeSet<Taint> {
        ARG_REGS.iter().flat_map(|&a| self.effective_taint(a)).collect()
    }

    fn finish_call(&mut self, ret: AbsVal) {
        self.regs[ARG_REGS[0] as usize] = ret;
        for &a in &ARG_REGS[1..] {
            self.regs[a as usize] = AbsVal::unknown();
        }
        self.regs[RA as usize] = AbsVal::unknown();
    }
}

/// Fixpoint result: the abstract state before every reachable instruction.
#[derive(Debug, Clone)]
pub struct FunctionFlow {
    pub entry: u32,
    pub before: BTreeMap<u32, AbsState>,
}

pub fn analyze_function(cfg: &Cfg, img: &GsbImage, entry: u32) -> FunctionFlow {
    let mut block_in: BTreeMap<u32, AbsState> = BTreeMap::new();
    let Some(body) = cfg.functions.get(&entry) else {
        return FunctionFlow { entry, before: BTreeMap::new() };
    };
    block_in.insert(entry, AbsState::at_entry());
    let mut work = BTreeSet::from([entry]);
    while let Some(b) = work.pop_first() {
        let Some(block) = cfg.blocks.get(&b) else { continue };
        let mut st = block_in[&b].clone();
        for (addr, insn) in &block.insns {
            st.step(img, *addr, insn);
        }
        for &(s, _) in cfg.succs(b) {
            if !body.contains(&s) {
                continue;
            }
            let merged = match block_in.get(&s) {
                Some(old) => old.join(&st),
                None => st.clone(),
            };
            if block_in.get(&s) != Some(&merged) {
                block_in.insert(s, merged);
                work.insert(s);
            }
        }
    }
    let mut before = BTreeMap::new();
    for (b, st) in block_in {
        let mut st = st;
        for (addr, insn) in &cfg.blocks[&b].insns {
            before.insert(*addr, st.clone());
            st.step(img, *addr, insn);
        }
    }
    FunctionFlow { entry, before }
}

impl FunctionFlow {
    pub fn state_before(&self, addr: u32) -> Option<&AbsState> {
        self.before.get(&addr)
    }

    /// Constant value of register `r` just before `addr`.
    pub fn const_at(&self, addr: u32, r: u8) -> Option<u32> {
        self.before.get(&addr)?.reg(r).as_const()
    }
}
