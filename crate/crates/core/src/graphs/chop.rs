use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::callgraph::CallGraph;
use super::cfg::Cfg;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("address {0:#x} is not inside any known function")]
    NotInFunction(u32),
}

/// Function traces from a root down to the function enclosing `site`.
pub fn backward_trace(site: u32, cfg: &Cfg, cg: &CallGraph, cap: usize) -> Result<Vec<Vec<u32>>, TraceError> {
    let f = cfg.function_containing(site).ok_or(TraceError::NotInFunction(site))?;
    Ok(traces_to_function(f, cg, cap))
}

/// Every simple caller chain ending at `target` whose first element is a
/// root (no callers, or the image entry), up to `cap` traces. Callers are
/// explored depth-first in ascending call-site order.
pub fn traces_to_function(target: u32, cg: &CallGraph, cap: usize) -> Vec<Vec<u32>> {
    let mut callers: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for e in &cg.edges {
        callers.entry(e.callee).or_default();
    }
    let mut sorted: Vec<_> = cg.edges.iter().collect();
    sorted.sort_by_key(|e| (e.site, e.caller));
    for e in sorted {
        let list = callers.entry(e.callee).or_default();
        if !list.contains(&e.caller) {
            list.push(e.caller);
        }
    }

    let mut out = Vec::new();
    let mut path = vec![target];
    let mut on_path = BTreeSet::from([target]);
    walk(target, cg, &callers, cap, &mut path, &mut on_path, &mut out);
    out
}

fn walk(
    f: u32,
    cg: &CallGraph,
    callers: &BTreeMap<u32, Vec<u32>>,
    cap: usize,
    path: &mut Vec<u32>,
    on_path: &mut BTreeSet<u32>,
    out: &mut Vec<Vec<u32>>,
) {
    if out.len() >= cap {
        return;
    }
    let preds = callers.get(&f).map(Vec::as_slice).unwrap_or(&[]);
    if preds.is_empty() || cg.entry == Some(f) {
        out.push(path.iter().rev().copied().collect());
    }
    for &c in preds {
        if out.len() >= cap {
            return;
        }
        if on_path.insert(c) {
            path.push(c);
            walk(c, cg, callers, cap, path, on_path, out);
            path.pop();
            on_path.remove(&c);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiStageChoppedCfg {
    pub start: u32,
    pub end: u32,
    pub allowed: BTreeSet<u32>,
    /// `(caller entry, call site)` pairs; the last stage of each trace is
    /// the end point inside its own function.
    pub stages: BTreeSet<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Blocks of `function` lying on a path from its entry to the block that
/// holds `site`, using only intra-procedural edges.
pub fn chop_function(cfg: &Cfg, function: u32, site: u32) -> BTreeSet<u32> {
    let Some(body) = cfg.functions.get(&function) else {
        return BTreeSet::new();
    };
    let Some(target) = cfg.block_containing(site).map(|b| b.start).filter(|b| body.contains(b)) else {
        return BTreeSet::new();
    };
    let mut fwd = BTreeSet::new();
    let mut stack = vec![function];
    while let Some(b) = stack.pop() {
        if body.contains(&b) && fwd.insert(b) {
            stack.extend(cfg.succs(b).iter().map(|s| s.0));
        }
    }
    if !fwd.contains(&target) {
        return BTreeSet::new();
    }
    let mut bwd = BTreeSet::new();
    let mut stack = vec![target];
    while let Some(b) = stack.pop() {
        if fwd.contains(&b) && bwd.insert(b) {
            stack.extend(cfg.preds(b).iter().map(|p| p.0));
        }
    }
    bwd
}

/// Compose per-call-edge chops along every trace, plus the stage from the
/// last function's entry to `end`.
pub fn gen_chopped_cfg(traces: &[Vec<u32>], cfg: &Cfg, cg: &CallGraph, end: u32) -> MultiStageChoppedCfg {
    let start = traces.first().and_then(|t| t.first().copied()).unwrap_or(end);
    let mut chop = MultiStageChoppedCfg {
        start,
        end,
        allowed: BTreeSet::new(),
        stages: BTreeSet::new(),
        warnings: Vec::new(),
    };
    for trace in traces {
        for pair in trace.windows(2) {
            let (caller, callee) = (pair[0], pair[1]);
            for site in cg.sites(caller, callee) {
                chop.stages.insert((caller, site));
            }
            chop.allowed.insert(callee);
        }
        if let Some(&last) = trace.last() {
            chop.stages.insert((last, end));
        }
    }
    for &(f, site) in &chop.stages.clone() {
        let part = chop_function(cfg, f, site);
        if part.is_empty() {
            chop.warnings.push(format!("call site {site:#x} unreachable from function {f:#x}"));
        }
        chop.allowed.extend(part);
    }
    chop
}
