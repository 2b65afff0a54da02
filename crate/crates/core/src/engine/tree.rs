use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graphs::Cfg;

use super::value::{CmpOp, SymId, SymTable, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HlKind {
    CallSummary { api: String, args: Vec<String>, arg_syms: BTreeSet<SymId>, result: Option<SymId> },
    BranchFact { lhs: Value, op: CmpOp, rhs: Value },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HlConstraint {
    pub addr: u32,
    /// Block the constraint was recorded in (for calls bypassed or entered
    /// off the chop, the guided block that issued the call).
    pub block: u32,
    /// Index into the path history of `block`.
    pub pos: usize,
    pub kind: HlKind,
    pub text: String,
}

impl HlConstraint {
    #[allow(clippy::too_many_arguments)]
    pub fn summary(
        addr: u32,
        block: u32,
        pos: usize,
        api: &str,
        args: Vec<String>,
        arg_syms: BTreeSet<SymId>,
        result: Option<SymId>,
    ) -> Self {
        let text = format!("{api}({})", args.join(","));
        HlConstraint { addr, block, pos, kind: HlKind::CallSummary { api: api.to_string(), args, arg_syms, result }, text }
    }

    pub fn fact(syms: &SymTable, addr: u32, block: u32, pos: usize, lhs: Value, op: CmpOp, rhs: Value) -> Self {
        let text = format!("{} {} {}", syms.render_value(&lhs), op, syms.render_value(&rhs));
        HlConstraint { addr, block, pos, kind: HlKind::BranchFact { lhs, op, rhs }, text }
    }

    /// Symbols the constraint reads, including comparison operands.
    pub fn uses(&self, syms: &SymTable) -> BTreeSet<SymId> {
        let mut direct = BTreeSet::new();
        match &self.kind {
            HlKind::CallSummary { arg_syms, .. } => direct.extend(arg_syms.iter().copied()),
            HlKind::BranchFact { lhs, rhs, .. } => {
                lhs.syms(&mut direct);
                rhs.syms(&mut direct);
            }
        }
        let mut out = BTreeSet::new();
        for s in direct {
            syms.closure(s, &mut out);
        }
        out
    }

    pub fn defines(&self) -> Option<SymId> {
        match &self.kind {
            HlKind::CallSummary { result, .. } => *result,
            HlKind::BranchFact { .. } => None,
        }
    }

    /// Short label: `0x46e450:websGetVar` for calls, the fact text for
    /// branches.
    pub fn label(&self) -> String {
        match &self.kind {
            HlKind::CallSummary { api, .. } => format!("{:#x}:{api}", self.addr),
            HlKind::BranchFact { .. } => format!("{:#x}:{}", self.addr, self.text),
        }
    }
}

/// Mirrored facts for the taken and fall-through successors of a branch
/// `lhs op rhs`. Returns `None` when both operands are concrete.
pub fn record_branch_constraint(
    syms: &SymTable,
    addr: u32,
    block: u32,
    pos: usize,
    lhs: &Value,
    op: CmpOp,
    rhs: &Value,
) -> Option<(HlConstraint, HlConstraint)> {
    if lhs.is_con() && rhs.is_con() {
        return None;
    }
    let symmetric = matches!(op, CmpOp::Eq | CmpOp::Ne);
    let (lhs, rhs) = if lhs.is_con() && symmetric { (rhs.clone(), lhs.clone()) } else { (lhs.clone(), rhs.clone()) };
    let taken = HlConstraint::fact(syms, addr, block, pos, lhs.clone(), op, rhs.clone());
    let (nl, nop, nr) = op.negate(lhs, rhs);
    let fall = HlConstraint::fact(syms, addr, block, pos, nl, nop, nr);
    Some((taken, fall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeEdgeKind {
    ArgProvenance,
    CfgDependency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TreeEdge {
    pub from: usize,
    pub to: usize,
    pub kind: TreeEdgeKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintTree {
    pub nodes: Vec<HlConstraint>,
    pub edges: BTreeSet<TreeEdge>,
}

pub fn build_constraint_tree(log: &[HlConstraint], path: &[u32], cfg: &Cfg, syms: &SymTable) -> ConstraintTree {
    let mut edges = BTreeSet::new();
    let uses: Vec<BTreeSet<SymId>> = log.iter().map(|c| c.uses(syms)).collect();
    for (i, c) in log.iter().enumerate() {
        if let Some(r) = c.defines() {
            for (j, u) in uses.iter().enumerate().skip(i + 1) {
                if u.contains(&r) {
                    edges.insert(TreeEdge { from: i, to: j, kind: TreeEdgeKind::ArgProvenance });
                }
            }
        }
    }
    let mut by_pos: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in log.iter().enumerate() {
        by_pos.entry(c.pos).or_default().push(i);
    }
    for (k, pair) in path.windows(2).enumerate() {
        if !adjacent(cfg, pair[0], pair[1]) {
            continue;
        }
        let (Some(a), Some(b)) = (by_pos.get(&k), by_pos.get(&(k + 1))) else { continue };
        for &x in a {
            for &y in b {
                edges.insert(TreeEdge { from: x, to: y, kind: TreeEdgeKind::CfgDependency });
            }
        }
    }
    ConstraintTree { nodes: log.to_vec(), edges }
}

fn adjacent(cfg: &Cfg, a: u32, b: u32) -> bool {
    cfg.has_edge(a, b) || cfg.blocks.get(&a).and_then(|blk| blk.last()).is_some_and(|(_, i)| i.is_call())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNodeJson {
    pub id: usize,
    pub address: String,
    pub kind: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEdgeJson {
    pub from: usize,
    pub to: usize,
    #[serde(rename = "type")]
    pub kind: TreeEdgeKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeJson {
    pub nodes: Vec<TreeNodeJson>,
    pub edges: Vec<TreeEdgeJson>,
}

impl ConstraintTree {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Kahn's algorithm; true when every node can be ordered.
    pub fn is_acyclic(&self) -> bool {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            indeg[e.to] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = ready.pop() {
            seen += 1;
            for e in self.edges.iter().filter(|e| e.from == i) {
                indeg[e.to] -= 1;
                if indeg[e.to] == 0 {
                    ready.push(e.to);
                }
            }
        }
        seen == n
    }

    pub fn to_json(&self) -> TreeJson {
        TreeJson {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, c)| TreeNodeJson {
                    id,
                    address: format!("{:#x}", c.addr),
                    kind: match c.kind {
                        HlKind::CallSummary { .. } => "call-summary".into(),
                        HlKind::BranchFact { .. } => "branch-fact".into(),
                    },
                    text: c.text.clone(),
                })
                .collect(),
            edges: self.edges.iter().map(|e| TreeEdgeJson { from: e.from, to: e.to, kind: e.kind }).collect(),
        }
    }

    pub fn to_dot(&self, name: &str) -> String {
        tree_json_to_dot(&self.to_json(), name)
    }
}

pub fn tree_json_to_dot(tree: &TreeJson, name: &str) -> String {
    let mut out = format!("digraph \"{}\" {{\n", name.replace('"', "'"));
    for n in &tree.nodes {
        let label = if n.kind == "call-summary" {
            let api = n.text.split('(').next().unwrap_or(&n.text);
            format!("{}:{api}", n.address)
        } else {
            format!("{}:{}", n.address, n.text)
        };
        out.push_str(&format!("  n{} [label=\"{}\"];\n", n.id, label.replace('\\', "\\\\").replace('"', "\\\"")));
    }
    for e in &tree.edges {
        let style = match e.kind {
            TreeEdgeKind::ArgProvenance => "solid",
            TreeEdgeKind::CfgDependency => "dashed",
        };
        out.push_str(&format!("  n{} -> n{} [style={style}];\n", e.from, e.to));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::value::{StrArg, SymKind};
    use crate::graphs::testutil::graph;

    #[test]
    fn provenance_from_lookup_to_fact() {
        let mut syms = SymTable::default();
        let f = syms.fresh(SymKind::Field("start_time".into()));
        let c = syms.fresh(SymKind::Cmp {
            api: "strcmp".into(),
            lhs: StrArg::Sym(f),
            rhs: StrArg::Lit("0".into()),
            len: None,
        });
        let log = vec![
            HlConstraint::summary(0x46e450, 0, 0, "websGetVar", vec!["arg1".into(), "\"start_time\"".into()], BTreeSet::new(), Some(f)),
            HlConstraint::summary(0x46e458, 0, 0, "strcmp", vec![], BTreeSet::from([f]), Some(c)),
            HlConstraint::fact(&syms, 0x46e534, 0, 0, Value::Sym(c), CmpOp::Eq, Value::Con(0)),
        ];
        let cfg = graph(1, &[]);
        let tree = build_constraint_tree(&log, &[0], &cfg, &syms);
        assert!(tree.edges.contains(&TreeEdge { from: 0, to: 2, kind: TreeEdgeKind::ArgProvenance }));
        assert!(tree.is_acyclic());
        assert_eq!(tree.nodes[2].text, "strcmp(start_time,\"0\") == 0");
        assert_eq!(tree.nodes[0].label(), "0x46e450:websGetVar");
    }

    #[test]
    fn empty_log_gives_empty_tree() {
        let tree = build_constraint_tree(&[], &[], &graph(1, &[]), &SymTable::default());
        assert!(tree.is_empty() && tree.edges.is_empty());
    }

    #[test]
    fn consecutive_blocks_get_one_dependency_edge() {
        let mut syms = SymTable::default();
        let a = syms.fresh(SymKind::Global(0x100));
        let b = syms.fresh(SymKind::Global(0x104));
        let log = vec![
            HlConstraint::fact(&syms, 0, 0, 0, Value::Sym(a), CmpOp::Eq, Value::Con(0)),
            HlConstraint::fact(&syms, 1, 1, 1, Value::Sym(b), CmpOp::Ne, Value::Con(0)),
        ];
        let cfg = graph(2, &[(0, 1)]);
        let tree = build_constraint_tree(&log, &[0, 1], &cfg, &syms);
        assert_eq!(tree.edges, BTreeSet::from([TreeEdge { from: 0, to: 1, kind: TreeEdgeKind::CfgDependency }]));
    }

    #[test]
    fn mirrored_facts() {
        let mut syms = SymTable::default();
        let s = syms.fresh(SymKind::Opaque("x".into()));
        let (t, f) = record_branch_constraint(&syms, 8, 0, 0, &Value::Con(0), CmpOp::Eq, &Value::Sym(s)).unwrap();
        assert_eq!(t.text, "x == 0");
        assert_eq!(f.text, "x != 0");
        assert_eq!(t.uses(&syms), f.uses(&syms));
        assert!(record_branch_constraint(&syms, 8, 0, 0, &Value::Con(0), CmpOp::Ne, &Value::Con(0)).is_none());
    }
}
