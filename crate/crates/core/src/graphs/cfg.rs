use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::gsb::{DisasmError, GsbImage, Instruction, Opcode, INSN_SIZE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub start: u32,
    /// One past the last instruction byte.
    pub end: u32,
    pub insns: Vec<(u32, Instruction)>,
}

impl BasicBlock {
    pub fn last(&self) -> Option<&(u32, Instruction)> {
        self.insns.last()
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.start && addr < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Fallthrough,
    Taken,
    CallReturnSkip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub from: u32,
    pub to: u32,
    pub kind: EdgeKind,
}

/// Whole-image control flow graph. Call instructions end their block and
/// link it to the continuation with a [`EdgeKind::CallReturnSkip`] edge;
/// call targets are recorded by the call graph, not here.
#[derive(Debug, Clone, Default)]
pub struct Cfg {
    pub blocks: BTreeMap<u32, BasicBlock>,
    pub edges: BTreeSet<Edge>,
    /// Function entry -> blocks reachable from it without crossing into
    /// another function's entry.
    pub functions: BTreeMap<u32, BTreeSet<u32>>,
    pub warnings: Vec<String>,
    succs: BTreeMap<u32, Vec<(u32, EdgeKind)>>,
    preds: BTreeMap<u32, Vec<(u32, EdgeKind)>>,
}

/// Function entries: exports, direct call targets, prologue matches and the
/// image entry of executables.
pub fn function_entries(img: &GsbImage, insns: &[(u32, Instruction)]) -> BTreeSet<u32> {
    let mut entries: BTreeSet<u32> = img.exports.iter().map(|e| e.address).collect();
    if !img.is_library && img.is_insn_addr(img.entry) {
        entries.insert(img.entry);
    }
    for (addr, insn) in insns {
        if insn.is_prologue() {
            entries.insert(*addr);
        }
        if insn.opcode == Opcode::Call && img.is_insn_addr(insn.imm as u32) {
            entries.insert(insn.imm as u32);
        }
    }
    entries
}

pub fn build_cfg(img: &GsbImage) -> Result<Cfg, DisasmError> {
    let insns = img.disassemble()?;
    let entries = function_entries(img, &insns);
    Ok(build_cfg_with_entries(img, &insns, entries))
}

pub fn build_cfg_with_entries(
    img: &GsbImage,
    insns: &[(u32, Instruction)],
    entries: BTreeSet<u32>,
) -> Cfg {
    let mut warnings = Vec::new();
    let mut leaders: BTreeSet<u32> = entries.clone();
    if let Some((first, _)) = insns.first() {
        leaders.insert(*first);
    }
    for (addr, insn) in insns {
        if let Some(t) = insn.target() {
            if insn.opcode != Opcode::Call {
                if img.is_insn_addr(t) {
                    leaders.insert(t);
                } else {
                    warnings.push(format!("branch at {addr:#x} targets {t:#x} outside code; edge dropped"));
                }
            }
        }
        if insn.ends_block() {
            let next = addr + INSN_SIZE;
            if img.is_insn_addr(next) {
                leaders.insert(next);
            }
        }
    }

    let mut blocks: BTreeMap<u32, BasicBlock> = BTreeMap::new();
    let mut current: Option<BasicBlock> = None;
    for &(addr, insn) in insns {
        if leaders.contains(&addr) {
            if let Some(b) = current.take() {
                blocks.insert(b.start, b);
            }
        }
        let b = current.get_or_insert_with(|| BasicBlock { start: addr, end: addr, insns: Vec::new() });
        b.insns.push((addr, insn));
        b.end = addr + INSN_SIZE;
    }
    if let Some(b) = current.take() {
        blocks.insert(b.start, b);
    }

    let mut edges = BTreeSet::new();
    for b in blocks.values() {
        let &(addr, insn) = b.last().expect("blocks are never empty");
        let next = addr + INSN_SIZE;
        let next_ok = blocks.contains_key(&next);
        let mut push = |to: u32, kind: EdgeKind| {
            edges.insert(Edge { from: b.start, to, kind });
        };
        match insn.opcode {
            Opcode::Beq | Opcode::Bne => {
                let t = insn.imm as u32;
                if blocks.contains_key(&t) {
                    push(t, EdgeKind::Taken);
                }
                if next_ok {
                    push(next, EdgeKind::Fallthrough);
                }
            }
            Opcode::Jmp => {
                let t = insn.imm as u32;
                if blocks.contains_key(&t) {
                    push(t, EdgeKind::Taken);
                }
            }
            Opcode::Call | Opcode::Callr | Opcode::Icall => {
                if next_ok {
                    push(next, EdgeKind::CallReturnSkip);
                }
            }
            Opcode::Ret | Opcode::Halt => {}
            _ => {
                if next_ok {
                    push(next, EdgeKind::Fallthrough);
                }
            }
        }
    }

    let mut cfg = Cfg::from_parts(blocks, edges, BTreeSet::new());
    cfg.warnings = warnings;
    for e in entries {
        cfg.add_function(e);
    }
    cfg
}

impl Cfg {
    /// Assemble a CFG from already-built parts and compute function bodies
    /// for `entries`.
    pub fn from_parts(
        blocks: BTreeMap<u32, BasicBlock>,
        edges: BTreeSet<Edge>,
        entries: BTreeSet<u32>,
    ) -> Cfg {
        let mut succs: BTreeMap<u32, Vec<(u32, EdgeKind)>> = BTreeMap::new();
        let mut preds: BTreeMap<u32, Vec<(u32, EdgeKind)>> = BTreeMap::new();
        for e in &edges {
            succs.entry(e.from).or_default().push((e.to, e.kind));
            preds.entry(e.to).or_default().push((e.from, e.kind));
        }
        // successors ordered (taken, fallthrough, call-return-skip)
        for list in succs.values_mut() {
            list.sort_by_key(|&(to, kind)| (kind_rank(kind), to));
        }
        let mut cfg = Cfg { blocks, edges, functions: BTreeMap::new(), warnings: Vec::new(), succs, preds };
        for e in entries {
            cfg.add_function(e);
        }
        cfg
    }

    /// Register `entry` as a function and compute its block set.
    pub fn add_function(&mut self, entry: u32) {
        if !self.blocks.contains_key(&entry) {
            return;
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![entry];
        while let Some(b) = stack.pop() {
            if !seen.insert(b) {
                continue;
            }
            for &(s, _) in self.succs(b) {
                if s != entry && self.functions.contains_key(&s) {
                    continue;
                }
                stack.push(s);
            }
        }
        self.functions.insert(entry, seen);
    }

    pub fn succs(&self, block: u32) -> &[(u32, EdgeKind)] {
        self.succs.get(&block).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn preds(&self, block: u32) -> &[(u32, EdgeKind)] {
        self.preds.get(&block).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_edge(&self, from: u32, to: u32) -> bool {
        self.succs(from).iter().any(|&(s, _)| s == to)
    }

    pub fn block_containing(&self, addr: u32) -> Option<&BasicBlock> {
        self.blocks.range(..=addr).next_back().map(|(_, b)| b).filter(|b| b.contains(addr))
    }

    pub fn is_function(&self, addr: u32) -> bool {
        self.functions.contains_key(&addr)
    }

    /// Enclosing function of `addr`: the greatest entry at or below `addr`
    /// whose body contains the block, else any function containing it.
    pub fn function_containing(&self, addr: u32) -> Option<u32> {
        let block = self.block_containing(addr)?.start;
        let mut owners = self.functions.iter().filter(|(_, set)| set.contains(&block)).map(|(e, _)| *e);
        let all: Vec<u32> = owners.by_ref().collect();
        all.iter().copied().filter(|&e| e <= addr).max().or_else(|| all.first().copied())
    }

    pub fn function_blocks(&self, entry: u32) -> impl Iterator<Item = &BasicBlock> {
        self.functions
            .get(&entry)
            .into_iter()
            .flat_map(|set| set.iter())
            .filter_map(|b| self.blocks.get(b))
    }

    /// All instructions of a function in address order.
    pub fn function_insns(&self, entry: u32) -> Vec<(u32, Instruction)> {
        self.function_blocks(entry).flat_map(|b| b.insns.iter().copied()).collect()
    }

    /// Graphviz rendering of the whole CFG.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph cfg {\n  node [shape=box, fontname=monospace];\n");
        for b in self.blocks.values() {
            let body: Vec<String> = b.insns.iter().map(|(a, i)| format!("{a:#x}: {i}")).collect();
            out.push_str(&format!("  \"{:#x}\" [label=\"{}\\l\"];\n", b.start, body.join("\\l")));
        }
        for e in &self.edges {
            let style = match e.kind {
                EdgeKind::Fallthrough => "solid",
                EdgeKind::Taken => "bold",
                EdgeKind::CallReturnSkip => "dashed",
            };
            out.push_str(&format!("  \"{:#x}\" -> \"{:#x}\" [style={style}];\n", e.from, e.to));
        }
        out.push_str("}\n");
        out
    }
}

fn kind_rank(kind: EdgeKind) -> u8 {
    match kind {
        EdgeKind::Taken => 0,
        EdgeKind::Fallthrough => 1,
        EdgeKind::CallReturnSkip => 2,
    }
}
