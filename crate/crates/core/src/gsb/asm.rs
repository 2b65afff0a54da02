//! Assembler for GSB images.
//!
//! [`Assembler`] is the programmatic builder used by the corpus generator and
//! the tests. [`assemble_text`] accepts the line-oriented text form:
//!
//! ```text
//! ; comment            (`#` also starts a comment)
//! .library             mark the image as a shared library
//! .code_base 0x1000    .data_base 0x100000
//! .entry main          .export main          .import strcmp
//! .code                .data                 switch section
//! label:               defines a label at the current position
//! movi r1, 42          movi r1, label        (address of a code or data label)
//! mov r1, r2           add r1, r2, r3        sub r1, r2, r3
//! load r1, [r2+8]      store [r13-8], r15
//! call label           callr r3              ret      halt
//! beq r1, r2, label    bne r1, r2, label     jmp label
//! icall strcmp         (imports are added on first use)
//! .string "text"       .word 1, 0x10, label  .space 16   .align 8
//! .org 0x58c560        pad the current section up to an absolute address
//! ```
//!
//! `sp` and `ra` are accepted as aliases for `r13` and `r15`.

use std::collections::BTreeMap;

use super::format::{extract_strings, Export, GsbImage};
use super::isa::{Instruction, Opcode, INSN_SIZE};

pub const DEFAULT_CODE_BASE: u32 = 0x0001_0000;
pub const DEFAULT_DATA_BASE: u32 = 0x0010_0000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("cannot move {section} backwards to {addr:#x}")]
    BadOrg { section: &'static str, addr: u32 },
    #[error("no entry point")]
    NoEntry,
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

#[derive(Debug, Clone)]
enum Fixup {
    None,
    /// Replace `imm` with the address of the label.
    Imm(String),
}

#[derive(Debug, Clone)]
pub struct Assembler {
    code_base: u32,
    data_base: u32,
    is_library: bool,
    insns: Vec<(Instruction, Fixup)>,
    data: Vec<u8>,
    data_fixups: Vec<(usize, String)>,
    labels: BTreeMap<String, u32>,
    imports: Vec<String>,
    exports: Vec<String>,
    entry: Option<String>,
    anon: usize,
}

impl Default for Assembler {
    fn default() -> Self {
        Self::new()
    }
}

impl Assembler {
    pub fn new() -> Self {
        Self::with_bases(DEFAULT_CODE_BASE, DEFAULT_DATA_BASE)
    }

    pub fn with_bases(code_base: u32, data_base: u32) -> Self {
        Assembler {
            code_base,
            data_base,
            is_library: false,
            insns: Vec::new(),
            data: Vec::new(),
            data_fixups: Vec::new(),
            labels: BTreeMap::new(),
            imports: Vec::new(),
            exports: Vec::new(),
            entry: None,
            anon: 0,
        }
    }

    pub fn set_library(&mut self, yes: bool) -> &mut Self {
        self.is_library = yes;
        self
    }

    /// Address of the next instruction.
    pub fn pc(&self) -> u32 {
        self.code_base + INSN_SIZE * self.insns.len() as u32
    }

    /// Address of the next data byte.
    pub fn data_pc(&self) -> u32 {
        self.data_base + self.data.len() as u32
    }

    fn define(&mut self, name: &str, addr: u32) -> Result<(), AsmError> {
        if self.labels.insert(name.to_string(), addr).is_some() {
            return Err(AsmError::DuplicateLabel(name.to_string()));
        }
        Ok(())
    }

    /// Define a code label at the current pc.
    pub fn label(&mut self, name: &str) -> Result<u32, AsmError> {
        let pc = self.pc();
        self.define(name, pc)?;
        Ok(pc)
    }

    /// Define a data label at the current data position.
    pub fn data_label(&mut self, name: &str) -> Result<u32, AsmError> {
        let at = self.data_pc();
        self.define(name, at)?;
        Ok(at)
    }

    /// A label name guaranteed not to collide with user labels.
    pub fn fresh_label(&mut self, hint: &str) -> String {
        self.anon += 1;
        format!(".L{}_{hint}", self.anon)
    }

    pub fn emit(&mut self, insn: Instruction) -> u32 {
        let pc = self.pc();
        self.insns.push((insn, Fixup::None));
        pc
    }

    fn emit_fixup(&mut self, insn: Instruction, label: &str) -> u32 {
        let pc = self.pc();
        self.insns.push((insn, Fixup::Imm(label.to_string())));
        pc
    }

    pub fn prologue(&mut self) -> u32 {
        self.emit(Instruction::prologue())
    }

    pub fn movi(&mut self, rd: u8, imm: i32) -> u32 {
        self.emit(Instruction::movi(rd, imm))
    }

    /// `movi rd, <address of label>`.
    pub fn movi_label(&mut self, rd: u8, label: &str) -> u32 {
        self.emit_fixup(Instruction::movi(rd, 0), label)
    }

    pub fn call(&mut self, label: &str) -> u32 {
        self.emit_fixup(Instruction::new(Opcode::Call, 0, 0, 0, 0), label)
    }

    pub fn beq(&mut self, rs1: u8, rs2: u8, label: &str) -> u32 {
        self.emit_fixup(Instruction::new(Opcode::Beq, 0, rs1, rs2, 0), label)
    }

    pub fn bne(&mut self, rs1: u8, rs2: u8, label: &str) -> u32 {
        self.emit_fixup(Instruction::new(Opcode::Bne, 0, rs1, rs2, 0), label)
    }

    pub fn jmp(&mut self, label: &str) -> u32 {
        self.emit_fixup(Instruction::new(Opcode::Jmp, 0, 0, 0, 0), label)
    }

    pub fn import(&mut self, name: &str) -> u32 {
        match self.imports.iter().position(|n| n == name) {
            Some(i) => i as u32,
            None => {
                self.imports.push(name.to_string());
                self.imports.len() as u32 - 1
            }
        }
    }

    /// `icall` to an import, adding it to the import table on first use.
    pub fn icall(&mut self, name: &str) -> u32 {
        let idx = self.import(name);
        self.emit(Instruction::icall(idx))
    }

    pub fn export(&mut self, label: &str) -> &mut Self {
        if !self.exports.iter().any(|e| e == label) {
            self.exports.push(label.to_string());
        }
        self
    }

    pub fn entry(&mut self, label: &str) -> &mut Self {
        self.entry = Some(label.to_string());
        self
    }

    /// Pad code with `halt` up to `addr`.
    pub fn org(&mut self, addr: u32) -> Result<(), AsmError> {
        if addr < self.pc() || (addr - self.code_base) % INSN_SIZE != 0 {
            return Err(AsmError::BadOrg { section: "code", addr });
        }
        while self.pc() < addr {
            self.emit(Instruction::halt());
        }
        Ok(())
    }

    /// Pad data with zeroes up to `addr`.
    pub fn data_org(&mut self, addr: u32) -> Result<(), AsmError> {
        if addr < self.data_pc() {
            return Err(AsmError::BadOrg { section: "data", addr });
        }
        self.data.resize((addr - self.data_base) as usize, 0);
        Ok(())
    }

    pub fn align_data(&mut self, align: u32) {
        while self.data.len() as u32 % align.max(1) != 0 {
            self.data.push(0);
        }
    }

    /// Append a NUL-terminated string and return its address.
    pub fn string(&mut self, text: &str) -> u32 {
        let at = self.data_pc();
        self.data.extend_from_slice(text.as_bytes());
        self.data.push(0);
        at
    }

    pub fn word(&mut self, value: u32) -> u32 {
        let at = self.data_pc();
        self.data.extend_from_slice(&value.to_le_bytes());
        at
    }

    /// A data word holding the address of `label`.
    pub fn word_label(&mut self, label: &str) -> u32 {
        let at = self.data_pc();
        self.data_fixups.push((self.data.len(), label.to_string()));
        self.data.extend_from_slice(&[0; 4]);
        at
    }

    pub fn space(&mut self, n: usize) -> u32 {
        let at = self.data_pc();
        self.data.resize(self.data.len() + n, 0);
        at
    }

    pub fn label_addr(&self, name: &str) -> Option<u32> {
        self.labels.get(name).copied()
    }

    pub fn build(&self) -> Result<GsbImage, AsmError> {
        let resolve = |l: &str| self.labels.get(l).copied().ok_or_else(|| AsmError::UndefinedLabel(l.to_string()));
        let mut code = Vec::with_capacity(self.insns.len() * INSN_SIZE as usize);
        for (insn, fixup) in &self.insns {
            let mut insn = *insn;
            if let Fixup::Imm(l) = fixup {
                insn.imm = resolve(l)? as i32;
            }
            code.extend_from_slice(&insn.encode());
        }
        let mut data = self.data.clone();
        for (off, l) in &self.data_fixups {
            data[*off..*off + 4].copy_from_slice(&resolve(l)?.to_le_bytes());
        }
        let exports = self
            .exports
            .iter()
            .map(|l| Ok(Export { name: l.clone(), address: resolve(l)? }))
            .collect::<Result<Vec<_>, AsmError>>()?;
        let entry = match &self.entry {
            Some(l) => resolve(l)?,
            None if self.is_library || code.is_empty() => self.code_base,
            None => return Err(AsmError::NoEntry),
        };
        let strings = extract_strings(&data, self.data_base);
        Ok(GsbImage {
            is_library: self.is_library,
            entry,
            code_base: self.code_base,
            code,
            data_base: self.data_base,
            data,
            imports: self.imports.clone(),
            exports,
            strtab: Vec::new(),
            strings,
        })
    }

    /// Build and serialize.
    pub fn to_bytes(&self) -> Result<Vec<u8>, AsmError> {
        Ok(self.build()?.to_bytes())
    }
}

// ---- text front end ----

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Syntax { line, msg: msg.into() }
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

fn parse_reg(s: &str, line: usize) -> Result<u8, AsmError> {
    let s = s.trim();
    match s {
        "sp" => return Ok(13),
        "ra" => return Ok(15),
        _ => {}
    }
    s.strip_prefix('r')
        .and_then(|n| n.parse::<u8>().ok())
        .filter(|&n| n < 16)
        .ok_or_else(|| syntax(line, format!("bad register `{s}`")))
}

/// `[rN]`, `[rN+off]`, `[rN-off]`.
fn parse_mem(s: &str, line: usize) -> Result<(u8, i32), AsmError> {
    let inner = s
        .trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| syntax(line, format!("bad memory operand `{s}`")))?;
    let split = inner.find(['+', '-']);
    let (reg, off) = match split {
        Some(i) => (&inner[..i], parse_int(&inner[i..]).ok_or_else(|| syntax(line, "bad offset"))?),
        None => (inner, 0),
    };
    Ok((parse_reg(reg, line)?, off as i32))
}

fn split_operands(s: &str) -> Vec<String> {
    // commas inside brackets do not occur in this grammar
    s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}

fn unescape(lit: &str, line: usize) -> Result<String, AsmError> {
    let body = lit
        .trim()
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .ok_or_else(|| syntax(line, "expected quoted string"))?;
    let mut out = String::new();
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('0') => out.push('\0'),
            Some('"') => out.push('"'),
            Some('\\') => out.push('\\'),
            other => return Err(syntax(line, format!("bad escape {other:?}"))),
        }
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut prev = '\0';
    for (i, c) in line.char_indices() {
        match c {
            '"' if prev != '\\' => in_str = !in_str,
            ';' | '#' if !in_str => return &line[..i],
            _ => {}
        }
        prev = c;
    }
    line
}

/// Assemble the text form into an image.
pub fn assemble_text(src: &str) -> Result<GsbImage, AsmError> {
    // bases must be known before any label is placed
    let mut code_base = DEFAULT_CODE_BASE;
    let mut data_base = DEFAULT_DATA_BASE;
    for (i, raw) in src.lines().enumerate() {
        let mut parts = strip_comment(raw).split_whitespace();
        match parts.next() {
            Some(".code_base") => {
                code_base = parts.next().and_then(parse_int).ok_or_else(|| syntax(i + 1, "bad base"))? as u32
            }
            Some(".data_base") => {
                data_base = parts.next().and_then(parse_int).ok_or_else(|| syntax(i + 1, "bad base"))? as u32
            }
            _ => {}
        }
    }
    let mut asm = Assembler::with_bases(code_base, data_base);
    let mut in_data = false;

    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        let mut text = strip_comment(raw).trim();
        while let Some(colon) = text.find(':') {
            let (head, rest) = text.split_at(colon);
            if head.is_empty() || head.contains(char::is_whitespace) || head.contains('"') {
                break;
            }
            if in_data {
                asm.data_label(head)?;
            } else {
                asm.label(head)?;
            }
            text = rest[1..].trim();
        }
        if text.is_empty() {
            continue;
        }
        let (op, rest) = match text.find(char::is_whitespace) {
            Some(i) => (&text[..i], text[i..].trim()),
            None => (text, ""),
        };
        match op {
            ".code_base" | ".data_base" => {}
            ".library" => {
                asm.set_library(true);
            }
            ".code" => in_data = false,
            ".data" => in_data = true,
            ".entry" => {
                asm.entry(rest);
            }
            ".export" => {
                asm.export(rest);
            }
            ".import" => {
                asm.import(rest);
            }
            ".string" => {
                asm.string(&unescape(rest, line)?);
            }
            ".word" => {
                for w in split_operands(rest) {
                    match parse_int(&w) {
                        Some(v) => asm.word(v as u32),
                        None => asm.word_label(&w),
                    };
                }
            }
            ".space" => {
                let n = parse_int(rest).ok_or_else(|| syntax(line, "bad size"))?;
                asm.space(n as usize);
            }
            ".align" => {
                let n = parse_int(rest).ok_or_else(|| syntax(line, "bad alignment"))?;
                asm.align_data(n as u32);
            }
            ".org" => {
                let a = parse_int(rest).ok_or_else(|| syntax(line, "bad address"))? as u32;
                if in_data {
                    asm.data_org(a)?;
                } else {
                    asm.org(a)?;
                }
            }
            _ if op.starts_with('.') => return Err(syntax(line, format!("unknown directive `{op}`"))),
            _ => {
                if in_data {
                    return Err(syntax(line, "instruction in data section"));
                }
                assemble_insn(&mut asm, op, rest, line)?;
            }
        }
    }
    asm.build()
}

fn assemble_insn(asm: &mut Assembler, op: &str, rest: &str, line: usize) -> Result<(), AsmError> {
    let opcode = Opcode::from_mnemonic(op).ok_or_else(|| syntax(line, format!("unknown mnemonic `{op}`")))?;
    let ops = split_operands(rest);
    let want = |n: usize| -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(syntax(line, format!("`{op}` takes {n} operand(s)")))
        }
    };
    match opcode {
        Opcode::Movi => {
            want(2)?;
            let rd = parse_reg(&ops[0], line)?;
            match parse_int(&ops[1]) {
                Some(v) => asm.movi(rd, v as i32),
                None => asm.movi_label(rd, ops[1].trim_start_matches('@')),
            };
        }
        Opcode::Mov => {
            want(2)?;
            asm.emit(Instruction::mov(parse_reg(&ops[0], line)?, parse_reg(&ops[1], line)?));
        }
        Opcode::Add | Opcode::Sub => {
            want(3)?;
            let (rd, a, b) =
                (parse_reg(&ops[0], line)?, parse_reg(&ops[1], line)?, parse_reg(&ops[2], line)?);
            asm.emit(Instruction::new(opcode, rd, a, b, 0));
        }
        Opcode::Load => {
            want(2)?;
            let (base, off) = parse_mem(&ops[1], line)?;
            asm.emit(Instruction::load(parse_reg(&ops[0], line)?, base, off));
        }
        Opcode::Store => {
            want(2)?;
            let (base, off) = parse_mem(&ops[0], line)?;
            asm.emit(Instruction::store(base, off, parse_reg(&ops[1], line)?));
        }
        Opcode::Call | Opcode::Jmp => {
            want(1)?;
            match parse_int(&ops[0]) {
                Some(v) => asm.emit(Instruction::new(opcode, 0, 0, 0, v as i32)),
                None if opcode == Opcode::Call => asm.call(&ops[0]),
                None => asm.jmp(&ops[0]),
            };
        }
        Opcode::Callr => {
            want(1)?;
            asm.emit(Instruction::callr(parse_reg(&ops[0], line)?));
        }
        Opcode::Beq | Opcode::Bne => {
            want(3)?;
            let (a, b) = (parse_reg(&ops[0], line)?, parse_reg(&ops[1], line)?);
            match parse_int(&ops[2]) {
                Some(v) => asm.emit(Instruction::new(opcode, 0, a, b, v as i32)),
                None if opcode == Opcode::Beq => asm.beq(a, b, &ops[2]),
                None => asm.bne(a, b, &ops[2]),
            };
        }
        Opcode::Icall => {
            want(1)?;
            match ops[0].strip_prefix('#').and_then(parse_int) {
                Some(idx) => asm.emit(Instruction::icall(idx as u32)),
                None => asm.icall(&ops[0]),
            };
        }
        Opcode::Ret | Opcode::Halt => {
            want(0)?;
            asm.emit(Instruction::new(opcode, 0, 0, 0, 0));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_builder_agree() {
        let img = assemble_text(
            "
            .entry main
            .export main
            main:
                store [sp-8], ra
                movi r2, greeting   ; data label
                icall puts
                beq r1, r0, done
                call main
            done:
                ret
            .data
            greeting: .string \"hi\\n\"
            tbl: .word 7, main
            ",
        )
        .unwrap();

        let mut a = Assembler::new();
        a.entry("main").export("main");
        a.label("main").unwrap();
        a.prologue();
        let g = a.string("hi\n");
        a.movi(2, g as i32);
        a.icall("puts");
        a.beq(1, 0, "done");
        a.call("main");
        a.label("done").unwrap();
        a.emit(Instruction::ret());
        a.word(7);
        a.word_label("main");
        assert_eq!(img, a.build().unwrap());
        assert_eq!(img.read_u32(DEFAULT_DATA_BASE + 8), Some(DEFAULT_CODE_BASE));
    }

    #[test]
    fn undefined_and_duplicate_labels() {
        assert_eq!(
            assemble_text(".entry m\nm: jmp nowhere").unwrap_err(),
            AsmError::UndefinedLabel("nowhere".into())
        );
        assert_eq!(assemble_text("a:\na: ret").unwrap_err(), AsmError::DuplicateLabel("a".into()));
    }

    #[test]
    fn org_pads_with_halt() {
        let img = assemble_text(".code_base 0x400000\n.entry f\nhalt\n.org 0x400020\nf: ret").unwrap();
        assert_eq!(img.entry, 0x400020);
        assert_eq!(img.code.len(), 40);
    }

    #[test]
    fn syntax_errors_carry_line() {
        let err = assemble_text("ret\nmovi r99, 1").unwrap_err();
        assert!(matches!(err, AsmError::Syntax { line: 2, .. }));
    }
}
