use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig};
use crate::graphs::{detect_loops, CallGraph, Cfg};
use crate::gsb::{GsbImage, Opcode};

pub const DEFAULT_LOOP_ITERATION_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub name: String,
    pub name_addr: u32,
    pub handler: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionTable {
    pub base: u32,
    pub stride: u32,
    pub entries: Vec<TableEntry>,
    /// Function whose loop walks the table.
    pub function: u32,
}

impl FunctionTable {
    pub fn handlers(&self) -> BTreeSet<u32> {
        self.entries.iter().map(|e| e.handler).collect()
    }
}

fn is_handler(img: &GsbImage, addr: u32) -> bool {
    img.is_insn_addr(addr) && img.has_prologue_at(addr)
}

/// Try to read a table from the per-iteration slot addresses.
fn table_from_slots(img: &GsbImage, function: u32, slots: &[u32]) -> Option<FunctionTable> {
    let base = *slots.first()?;
    let filled: Vec<u32> = slots.iter().copied().filter(|&a| img.read_u32(a).is_some_and(|w| w != 0)).collect();
    if slots.len() == 1 {
        return (img.read_u32(base) == Some(0)).then(|| FunctionTable { base, stride: 0, entries: vec![], function });
    }
    let stride = slots[1].wrapping_sub(slots[0]);
    if stride == 0 || slots.windows(2).any(|w| w[1].wrapping_sub(w[0]) != stride) || stride % 2 != 0 {
        return None;
    }
    let half = stride / 2;
    for probe in [half as i64, -(half as i64)] {
        let handlers: Option<Vec<u32>> = filled
            .iter()
            .map(|&a| img.read_u32((a as i64 + probe) as u32).filter(|&h| is_handler(img, h)))
            .collect();
        let Some(handlers) = handlers else { continue };
        let entries = filled
            .iter()
            .zip(handlers)
            .map(|(&a, handler)| {
                let name_addr = img.read_u32(a).unwrap_or(0);
                TableEntry { name: img.read_cstr(name_addr).unwrap_or_default(), name_addr, handler }
            })
            .collect();
        let base = if probe < 0 { base.wrapping_sub(half) } else { base };
        return Some(FunctionTable { base, stride, entries, function });
    }
    None
}

/// Walk each loop once, collecting the first data word read per iteration,
/// and keep the walks that look like (name, handler) tables.
pub fn detect_function_tables(
    img: &GsbImage,
    cfg: &Cfg,
    config: EngineConfig,
    iteration_cap: usize,
) -> (Vec<FunctionTable>, Vec<String>) {
    let mut tables: Vec<FunctionTable> = Vec::new();
    let mut warnings = Vec::new();
    for lp in detect_loops(cfg) {
        let engine = Engine::new(img, cfg, config);
        let Some(iterations) = engine.probe_loop(lp.function, lp.header, &lp.body, iteration_cap) else {
            warnings.push(format!("loop at {:#x}: iteration cap exceeded, skipped", lp.header));
            continue;
        };
        let slots: Vec<u32> = iterations.iter().filter_map(|it| it.first().copied()).collect();
        if let Some(t) = table_from_slots(img, lp.function, &slots) {
            if !tables.iter().any(|x| x.base == t.base && x.function == t.function) {
                tables.push(t);
            }
        }
    }
    tables.sort_by_key(|t| (t.base, t.function));
    (tables, warnings)
}

/// Add a call edge from each table-walking function's indirect call sites
/// to every handler of its table.
pub fn resolve_table_calls(cfg: &Cfg, cg: &mut CallGraph, tables: &[FunctionTable]) {
    for t in tables.iter().filter(|t| !t.entries.is_empty()) {
        for (addr, insn) in cfg.function_insns(t.function) {
            if insn.opcode == Opcode::Callr {
                cg.resolve_indirect(t.function, addr, t.handlers());
            }
        }
    }
}
