//! Concrete GSB interpreter.
//!
//! Runs a function with a concrete request and reports whether a given
//! instruction address was reached. Request-facing imports follow the same
//! conventions the symbolic summaries assume: the request body is a
//! `key=value` list joined by `&`, `websGetVar(req, name)` looks a key up in
//! the body at `req` (missing keys yield `""`), and `recv`/`recvfrom` copy the
//! body into the caller's buffer.

use std::collections::HashMap;

use super::format::GsbImage;
use super::isa::{Opcode, ARG_REGS, INSN_SIZE, NUM_REGS, RA, RET_REG, SP};

pub const STACK_TOP: u32 = 0x7fff_0000;
pub const HEAP_BASE: u32 = 0x6000_0000;
pub const RETURN_SENTINEL: u32 = 0xffff_fff0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// The `stop_at` address was about to execute.
    Reached,
    Halted,
    /// The function returned to its caller.
    Returned,
    StepLimit,
    Fault(u32),
}

#[derive(Debug, Clone, Copy)]
pub struct RunLimits {
    pub max_steps: usize,
    pub stop_at: Option<u32>,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits { max_steps: 1_000_000, stop_at: None }
    }
}

/// Split an encoded request body into `(key, value)` pairs.
pub fn parse_request_body(body: &str) -> Vec<(&str, &str)> {
    body.split('&')
        .filter(|t| !t.is_empty())
        .map(|t| t.split_once('=').unwrap_or((t, "")))
        .collect()
}

pub struct Interpreter<'a> {
    img: &'a GsbImage,
    mem: HashMap<u32, u8>,
    regs: [u32; NUM_REGS],
    heap_next: u32,
    handles: u32,
    body: String,
    /// `(call site, import name)` for every import invoked.
    pub import_log: Vec<(u32, String)>,
    pub steps: usize,
}

impl<'a> Interpreter<'a> {
    pub fn new(img: &'a GsbImage, body: &str) -> Self {
        Interpreter {
            img,
            mem: HashMap::new(),
            regs: [0; NUM_REGS],
            heap_next: HEAP_BASE,
            handles: 3,
            body: body.to_string(),
            import_log: Vec::new(),
            steps: 0,
        }
    }

    pub fn reg(&self, r: u8) -> u32 {
        self.regs[r as usize]
    }

    pub fn read_byte(&self, addr: u32) -> u8 {
        self.mem.get(&addr).copied().or_else(|| self.img.byte_at(addr)).unwrap_or(0)
    }

    pub fn write_byte(&mut self, addr: u32, b: u8) {
        self.mem.insert(addr, b);
    }

    pub fn read_u32(&self, addr: u32) -> u32 {
        u32::from_le_bytes([0, 1, 2, 3].map(|i| self.read_byte(addr.wrapping_add(i))))
    }

    pub fn write_u32(&mut self, addr: u32, v: u32) {
        for (i, b) in v.to_le_bytes().into_iter().enumerate() {
            self.write_byte(addr.wrapping_add(i as u32), b);
        }
    }

    pub fn read_cstr(&self, addr: u32) -> Vec<u8> {
        let mut out = Vec::new();
        let mut a = addr;
        loop {
            let b = self.read_byte(a);
            if b == 0 || out.len() > 1 << 16 {
                return out;
            }
            out.push(b);
            a = a.wrapping_add(1);
        }
    }

    /// Copy a NUL-terminated string into fresh heap memory.
    pub fn alloc_str(&mut self, s: &[u8]) -> u32 {
        let at = self.heap_next;
        for (i, &b) in s.iter().enumerate() {
            self.write_byte(at + i as u32, b);
        }
        self.write_byte(at + s.len() as u32, 0);
        self.heap_next = (at + s.len() as u32 + 8) & !7;
        at
    }

    /// Call `entry` with `args` in `r1..r4`.
    pub fn run_function(&mut self, entry: u32, args: &[u32], limits: RunLimits) -> Outcome {
        self.regs = [0; NUM_REGS];
        for (r, v) in ARG_REGS.iter().zip(args) {
            self.regs[*r as usize] = *v;
        }
        self.regs[SP as usize] = STACK_TOP;
        self.regs[RA as usize] = RETURN_SENTINEL;
        self.run_from(entry, limits)
    }

    /// Call `entry` with `r1` pointing at a heap copy of the request body.
    pub fn run_with_request(&mut self, entry: u32, limits: RunLimits) -> Outcome {
        let body = self.body.clone();
        let req = self.alloc_str(body.as_bytes());
        self.run_function(entry, &[req], limits)
    }

    fn run_from(&mut self, mut pc: u32, limits: RunLimits) -> Outcome {
        loop {
            if limits.stop_at == Some(pc) {
                return Outcome::Reached;
            }
            if pc == RETURN_SENTINEL {
                return Outcome::Returned;
            }
            if self.steps >= limits.max_steps {
                return Outcome::StepLimit;
            }
            self.steps += 1;
            let Some(insn) = self.img.insn_at(pc) else {
                return Outcome::Fault(pc);
            };
            let regs = self.regs;
            let r = |i: u8| regs[i as usize];
            let next = pc.wrapping_add(INSN_SIZE);
            let target = insn.imm as u32;
            pc = match insn.opcode {
                Opcode::Movi => {
                    self.regs[insn.rd as usize] = insn.imm as u32;
                    next
                }
                Opcode::Mov => {
                    self.regs[insn.rd as usize] = r(insn.rs1);
                    next
                }
                Opcode::Add => {
                    self.regs[insn.rd as usize] = r(insn.rs1).wrapping_add(r(insn.rs2));
                    next
                }
                Opcode::Sub => {
                    self.regs[insn.rd as usize] = r(insn.rs1).wrapping_sub(r(insn.rs2));
                    next
                }
                Opcode::Load => {
                    let a = r(insn.rs1).wrapping_add(insn.imm as u32);
                    self.regs[insn.rd as usize] = self.read_u32(a);
                    next
                }
                Opcode::Store => {
                    let a = r(insn.rs1).wrapping_add(insn.imm as u32);
                    let v = r(insn.rs2);
                    self.write_u32(a, v);
                    next
                }
                Opcode::Call => {
                    self.regs[RA as usize] = next;
                    target
                }
                Opcode::Callr => {
                    self.regs[RA as usize] = next;
                    r(insn.rs1)
                }
                Opcode::Ret => r(RA),
                Opcode::Beq if r(insn.rs1) == r(insn.rs2) => target,
                Opcode::Bne if r(insn.rs1) != r(insn.rs2) => target,
                Opcode::Beq | Opcode::Bne => next,
                Opcode::Jmp => target,
                Opcode::Icall => {
                    let name = self.img.import_name(insn.imm).unwrap_or("").to_string();
                    let ret = self.import(&name);
                    self.import_log.push((pc, name));
                    self.regs[RET_REG as usize] = ret;
                    next
                }
                Opcode::Halt => return Outcome::Halted,
            };
        }
    }

    fn import(&mut self, name: &str) -> u32 {
        let regs = self.regs;
        let a = |i: usize| regs[ARG_REGS[i] as usize];
        match name {
            "strcmp" => {
                let (x, y) = (self.read_cstr(a(0)), self.read_cstr(a(1)));
                ordering_word(x.cmp(&y))
            }
            "strncmp" | "memcmp" => {
                let n = a(2) as usize;
                let take = |v: Vec<u8>| -> Vec<u8> {
                    let mut v = v;
                    v.truncate(n);
                    v
                };
                let (x, y) = (take(self.read_cstr(a(0))), take(self.read_cstr(a(1))));
                ordering_word(x.cmp(&y))
            }
            "strlen" => self.read_cstr(a(0)).len() as u32,
            "websGetVar" => {
                let body = String::from_utf8_lossy(&self.read_cstr(a(0))).into_owned();
                let key = String::from_utf8_lossy(&self.read_cstr(a(1))).into_owned();
                let value = parse_request_body(&body)
                    .into_iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| v.to_string())
                    .unwrap_or_default();
                self.alloc_str(value.as_bytes())
            }
            "recv" | "recvfrom" => {
                let (buf, len) = (a(1), a(2) as usize);
                let body = self.body.clone().into_bytes();
                let n = body.len().min(len.saturating_sub(1));
                for (i, &b) in body[..n].iter().enumerate() {
                    self.write_byte(buf + i as u32, b);
                }
                self.write_byte(buf + n as u32, 0);
                n as u32
            }
            "fopen" | "fopen64" | "open" | "open64" | "socket" | "popen" => {
                self.handles += 1;
                self.handles
            }
            _ => 0,
        }
    }
}

fn ordering_word(o: std::cmp::Ordering) -> u32 {
    match o {
        std::cmp::Ordering::Less => -1i32 as u32,
        std::cmp::Ordering::Equal => 0,
        std::cmp::Ordering::Greater => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsb::asm::assemble_text;

    const SRC: &str = r#"
        .entry main
        main:
            store [sp-8], ra
            mov r6, r1
            movi r2, key
            icall websGetVar
            movi r2, want
            icall strcmp
            movi r0, 0
            bne r1, r0, out
        hit:
            icall system
        out:
            ret
        .data
        key: .string "cmd"
        want: .string "reboot"
    "#;

    #[test]
    fn request_lookup_drives_branch() {
        let img = assemble_text(SRC).unwrap();
        let hit = img.code_base + 8 * 8;
        let limits = RunLimits { stop_at: Some(hit), ..Default::default() };
        let mut vm = Interpreter::new(&img, "a=1&cmd=reboot");
        assert_eq!(vm.run_with_request(img.entry, limits), Outcome::Reached);
        let mut vm = Interpreter::new(&img, "cmd=halt");
        assert_eq!(vm.run_with_request(img.entry, limits), Outcome::Returned);
    }

    #[test]
    fn body_parsing() {
        assert_eq!(parse_request_body("a=1&b&&c="), vec![("a", "1"), ("b", ""), ("c", "")]);
    }
}
