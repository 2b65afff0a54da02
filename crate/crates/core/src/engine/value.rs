use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub type SymId = u32;

/// A string operand of a comparison API.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrArg {
    Lit(String),
    Sym(SymId),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SymKind {
    /// Start-point argument register `r1`..`r4`.
    Arg(u8),
    /// Request field looked up by name.
    Field(String),
    /// Raw request bytes delivered by `recv`/`recvfrom`.
    RequestBody,
    /// Unwritten global data word.
    Global(u32),
    CallRet { callee: String, site: u32 },
    /// Result of a string/memory comparison.
    Cmp { api: String, lhs: StrArg, rhs: StrArg, len: Option<u32> },
    Opaque(String),
}

impl SymKind {
    fn internable(&self) -> bool {
        matches!(self, SymKind::Arg(_) | SymKind::Field(_) | SymKind::RequestBody | SymKind::Global(_))
    }

    /// Whether the symbol carries data an attacker controls through a request.
    pub fn is_request(&self) -> bool {
        matches!(self, SymKind::Arg(_) | SymKind::Field(_) | SymKind::RequestBody)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymTable {
    kinds: Vec<SymKind>,
    #[serde(skip)]
    interned: BTreeMap<SymKind, SymId>,
}

impl SymTable {
    pub fn fresh(&mut self, kind: SymKind) -> SymId {
        if kind.internable() {
            if let Some(&id) = self.interned.get(&kind) {
                return id;
            }
        }
        let id = self.kinds.len() as SymId;
        if kind.internable() {
            self.interned.insert(kind.clone(), id);
        }
        self.kinds.push(kind);
        id
    }

    pub fn kind(&self, id: SymId) -> &SymKind {
        &self.kinds[id as usize]
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// `id` plus every symbol reachable through comparison operands.
    pub fn closure(&self, id: SymId, out: &mut BTreeSet<SymId>) {
        if !out.insert(id) {
            return;
        }
        if let SymKind::Cmp { lhs, rhs, .. } = self.kind(id) {
            for a in [lhs, rhs] {
                if let StrArg::Sym(s) = a {
                    self.closure(*s, out);
                }
            }
        }
    }

    pub fn render(&self, id: SymId) -> String {
        match self.kind(id) {
            SymKind::Arg(i) => format!("arg{i}"),
            SymKind::Field(n) => n.clone(),
            SymKind::RequestBody => "$body".into(),
            SymKind::Global(a) => format!("global_{a:x}"),
            SymKind::CallRet { callee, site } => format!("{callee}@{site:x}"),
            SymKind::Cmp { api, lhs, rhs, len } => {
                let len = len.map(|n| format!(",{n}")).unwrap_or_default();
                format!("{api}({},{}{len})", self.render_str(lhs), self.render_str(rhs))
            }
            SymKind::Opaque(label) => label.clone(),
        }
    }

    pub fn render_str(&self, a: &StrArg) -> String {
        match a {
            StrArg::Lit(s) => format!("{s:?}"),
            StrArg::Sym(id) => self.render(*id),
        }
    }

    pub fn render_value(&self, v: &Value) -> String {
        match v {
            Value::Con(c) => {
                if *c < 0x10000 {
                    c.to_string()
                } else {
                    format!("{c:#x}")
                }
            }
            Value::Sym(s) => self.render(*s),
            Value::Add(a, b) => format!("({} + {})", self.render_value(a), self.render_value(b)),
            Value::Sub(a, b) => format!("({} - {})", self.render_value(a), self.render_value(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Con(u32),
    Sym(SymId),
    Add(Box<Value>, Box<Value>),
    Sub(Box<Value>, Box<Value>),
}

impl Value {
    pub fn as_con(&self) -> Option<u32> {
        match self {
            Value::Con(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_con(&self) -> bool {
        matches!(self, Value::Con(_))
    }

    pub fn add(a: Value, b: Value) -> Value {
        match (a, b) {
            (Value::Con(x), Value::Con(y)) => Value::Con(x.wrapping_add(y)),
            (v, Value::Con(0)) | (Value::Con(0), v) => v,
            (a, b) => Value::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Value, b: Value) -> Value {
        match (a, b) {
            (Value::Con(x), Value::Con(y)) => Value::Con(x.wrapping_sub(y)),
            (v, Value::Con(0)) => v,
            (a, b) if a == b => Value::Con(0),
            (a, b) => Value::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn syms(&self, out: &mut BTreeSet<SymId>) {
        match self {
            Value::Con(_) => {}
            Value::Sym(s) => {
                out.insert(*s);
            }
            Value::Add(a, b) | Value::Sub(a, b) => {
                a.syms(out);
                b.syms(out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
}

impl CmpOp {
    /// Negate `lhs op rhs`, returning the new operand order and operator.
    pub fn negate<T>(self, lhs: T, rhs: T) -> (T, CmpOp, T) {
        match self {
            CmpOp::Eq => (lhs, CmpOp::Ne, rhs),
            CmpOp::Ne => (lhs, CmpOp::Eq, rhs),
            CmpOp::Lt => (rhs, CmpOp::Le, lhs),
            CmpOp::Le => (rhs, CmpOp::Lt, lhs),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
