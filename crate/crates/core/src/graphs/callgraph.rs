use std::collections::{BTreeMap, BTreeSet};

use crate::gsb::{Instruction, Opcode};

use super::cfg::Cfg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallEdge {
    pub caller: u32,
    pub callee: u32,
    pub site: u32,
}

#[derive(Debug, Clone, Default)]
pub struct CallGraph {
    pub nodes: BTreeSet<u32>,
    pub edges: BTreeSet<CallEdge>,
    /// `(caller, site)` of CALLR instructions not yet resolved.
    pub unresolved: BTreeSet<(u32, u32)>,
    /// Image entry; always a valid trace root.
    pub entry: Option<u32>,
}

pub fn build_call_graph(cfg: &Cfg, entry: Option<u32>) -> CallGraph {
    let mut cg = CallGraph { nodes: cfg.functions.keys().copied().collect(), entry, ..Default::default() };
    for &f in cfg.functions.keys() {
        for b in cfg.function_blocks(f) {
            for &(site, insn) in &b.insns {
                match insn.opcode {
                    Opcode::Call if cfg.is_function(insn.imm as u32) => {
                        cg.edges.insert(CallEdge { caller: f, callee: insn.imm as u32, site });
                    }
                    Opcode::Callr => {
                        cg.unresolved.insert((f, site));
                    }
                    _ => {}
                }
            }
        }
    }
    cg
}

impl CallGraph {
    /// A graph over explicit edges, used by tests and synthetic inputs.
    pub fn from_edges(nodes: impl IntoIterator<Item = u32>, edges: impl IntoIterator<Item = CallEdge>) -> Self {
        let mut cg = CallGraph { nodes: nodes.into_iter().collect(), ..Default::default() };
        for e in edges {
            cg.nodes.insert(e.caller);
            cg.nodes.insert(e.callee);
            cg.edges.insert(e);
        }
        cg
    }

    /// Incoming edges of `f` ordered by call-site address.
    pub fn callers_of(&self, f: u32) -> Vec<CallEdge> {
        let mut v: Vec<CallEdge> = self.edges.iter().filter(|e| e.callee == f).copied().collect();
        v.sort_by_key(|e| (e.site, e.caller));
        v
    }

    pub fn callees_of(&self, f: u32) -> Vec<CallEdge> {
        let mut v: Vec<CallEdge> = self.edges.iter().filter(|e| e.caller == f).copied().collect();
        v.sort_by_key(|e| (e.site, e.callee));
        v
    }

    /// Call sites in `caller` that target `callee`.
    pub fn sites(&self, caller: u32, callee: u32) -> Vec<u32> {
        self.edges.iter().filter(|e| e.caller == caller && e.callee == callee).map(|e| e.site).collect()
    }

    /// Resolve an indirect call site to a set of handlers.
    pub fn resolve_indirect(&mut self, caller: u32, site: u32, callees: impl IntoIterator<Item = u32>) {
        for callee in callees {
            self.nodes.insert(callee);
            self.edges.insert(CallEdge { caller, callee, site });
        }
        self.unresolved.remove(&(caller, site));
    }

    pub fn is_root(&self, f: u32) -> bool {
        self.entry == Some(f) || !self.edges.iter().any(|e| e.callee == f)
    }

    /// Number of distinct call sites per callee.
    pub fn invocation_counts(&self) -> BTreeMap<u32, usize> {
        let mut m: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for e in &self.edges {
            m.entry(e.callee).or_default().insert(e.site);
        }
        m.into_iter().map(|(k, v)| (k, v.len())).collect()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph callgraph {\n");
        for n in &self.nodes {
            out.push_str(&format!("  \"{n:#x}\";\n"));
        }
        for e in &self.edges {
            out.push_str(&format!("  \"{:#x}\" -> \"{:#x}\" [label=\"{:#x}\"];\n", e.caller, e.callee, e.site));
        }
        out.push_str("}\n");
        out
    }
}

/// Direct call target of an instruction, if it is a CALL.
pub fn direct_target(insn: &Instruction) -> Option<u32> {
    (insn.opcode == Opcode::Call).then_some(insn.imm as u32)
}
