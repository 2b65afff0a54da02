use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gsb::interp::{Interpreter, Outcome, RunLimits};
use crate::gsb::isa::ARG_REGS;
use crate::gsb::GsbImage;

use super::tree::{ConstraintTree, HlKind};
use super::value::{CmpOp, StrArg, SymId, SymKind, SymTable, Value};

pub const BODY_FIELD: &str = "$body";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldValue {
    Equals { value: String },
    Prefix { value: String },
    NotEqual { excluded: Vec<String> },
    Unconstrained,
}

impl FieldValue {
    /// Whether a request must carry this field with particular content.
    pub fn is_required(&self) -> bool {
        matches!(self, FieldValue::Equals { .. } | FieldValue::Prefix { .. })
    }

    /// A concrete value satisfying the constraint.
    pub fn witness(&self) -> String {
        match self {
            FieldValue::Equals { value } | FieldValue::Prefix { value } => value.clone(),
            FieldValue::NotEqual { excluded } => {
                let ok = |c: &str| !excluded.iter().any(|e| e == c || (!e.is_empty() && c.starts_with(e.as_str())));
                if ok("") {
                    return String::new();
                }
                (0u32..).map(|i| i.to_string()).find(|c| ok(c)).expect("finite exclusion list")
            }
            FieldValue::Unconstrained => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredRequest {
    pub target: Option<String>,
    pub fields: BTreeMap<String, FieldValue>,
    /// Literal strings required in start-point argument registers.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: BTreeMap<u8, String>,
    #[serde(serialize_with = "hex_list", deserialize_with = "unhex_list")]
    pub path: Vec<u32>,
    #[serde(serialize_with = "hex", deserialize_with = "unhex")]
    pub endpoint: u32,
}

pub(crate) fn hex<S: serde::Serializer>(v: &u32, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:#x}"))
}

pub(crate) fn unhex<'de, D: serde::Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
    let s = String::deserialize(d)?;
    parse_hex(&s).map_err(serde::de::Error::custom)
}

pub(crate) fn hex_list<S: serde::Serializer>(v: &[u32], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&format!("{x:#x}"))?;
    }
    seq.end()
}

pub(crate) fn unhex_list<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<u32>, D::Error> {
    let v = Vec::<String>::deserialize(d)?;
    v.iter().map(|s| parse_hex(s).map_err(serde::de::Error::custom)).collect()
}

pub fn parse_hex(s: &str) -> Result<u32, String> {
    let digits = s.strip_prefix("0x").ok_or_else(|| format!("expected 0x-prefixed address, got `{s}`"))?;
    u32::from_str_radix(digits, 16).map_err(|e| format!("bad address `{s}`: {e}"))
}

impl RecoveredRequest {
    /// Whether the trigger mentions any request input at all.
    pub fn has_request_input(&self) -> bool {
        self.target.is_some() || !self.fields.is_empty() || !self.args.is_empty()
    }

    /// Field names a matching user request must supply.
    pub fn required_fields(&self) -> Vec<&str> {
        self.fields
            .iter()
            .filter(|(k, v)| v.is_required() && k.as_str() != BODY_FIELD)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    /// Encoded request body: `k=v` pairs joined by `&`, or the raw body
    /// when the path constrains it directly.
    pub fn body(&self) -> String {
        let pairs: Vec<String> = self
            .fields
            .iter()
            .filter(|(k, _)| k.as_str() != BODY_FIELD && !k.starts_with("param_"))
            .map(|(k, v)| format!("{k}={}", v.witness()))
            .collect();
        match self.fields.get(BODY_FIELD) {
            Some(raw @ FieldValue::Equals { .. }) => raw.witness(),
            Some(raw) if pairs.is_empty() => raw.witness(),
            Some(raw) => format!("{}&{}", raw.witness(), pairs.join("&")),
            None => pairs.join("&"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SolveError {
    #[error("field `{field}` is unsatisfiable: {reason}")]
    Unsatisfiable { field: String, reason: String },
}

#[derive(Default)]
struct FieldReq {
    exact: Option<String>,
    prefix: Option<String>,
    not_exact: Vec<String>,
    not_prefix: Vec<String>,
    seen: bool,
}

enum Name {
    Field(String),
    Arg(u8),
}

fn name_of(syms: &SymTable, id: SymId) -> Option<Name> {
    match syms.kind(id) {
        SymKind::Field(n) => Some(Name::Field(n.clone())),
        SymKind::RequestBody => Some(Name::Field(BODY_FIELD.into())),
        SymKind::Arg(i) => Some(Name::Arg(*i)),
        _ => None,
    }
}

/// Resolve the string facts of a path into request field values.
/// `target_hint` (a binder or function-table name) wins over any target
/// derived from argument comparisons.
pub fn solve_request(
    tree: &ConstraintTree,
    syms: &SymTable,
    endpoint: u32,
    path: &[u32],
    target_hint: Option<&str>,
) -> Result<RecoveredRequest, SolveError> {
    let mut fields: BTreeMap<String, FieldReq> = BTreeMap::new();
    let mut args: BTreeMap<u8, FieldReq> = BTreeMap::new();
    let touch = |syms: &SymTable, id: SymId, fields: &mut BTreeMap<String, FieldReq>, args: &mut BTreeMap<u8, FieldReq>| {
        let r = match name_of(syms, id) {
            Some(Name::Field(n)) => fields.entry(n).or_default(),
            Some(Name::Arg(i)) => args.entry(i).or_default(),
            None => return None,
        };
        r.seen = true;
        Some(())
    };

    for node in &tree.nodes {
        let HlKind::BranchFact { lhs, op, rhs } = &node.kind else { continue };
        let mut direct = Default::default();
        lhs.syms(&mut direct);
        rhs.syms(&mut direct);
        let string_fact = match (lhs, rhs) {
            (Value::Sym(c), Value::Con(0)) | (Value::Con(0), Value::Sym(c)) => match syms.kind(*c) {
                SymKind::Cmp { api, lhs: a, rhs: b, len } => Some((api.clone(), a.clone(), b.clone(), *len)),
                _ => None,
            },
            _ => None,
        };
        let Some((api, a, b, len)) = string_fact.filter(|_| matches!(op, CmpOp::Eq | CmpOp::Ne)) else {
            let mut all = Default::default();
            for s in direct {
                syms.closure(s, &mut all);
            }
            for s in all {
                if !matches!(syms.kind(s), SymKind::Arg(_)) {
                    touch(syms, s, &mut fields, &mut args);
                }
            }
            continue;
        };
        let (sym, lit) = match (&a, &b) {
            (StrArg::Sym(s), StrArg::Lit(l)) | (StrArg::Lit(l), StrArg::Sym(s)) => (*s, l.clone()),
            (StrArg::Sym(x), StrArg::Sym(y)) => {
                touch(syms, *x, &mut fields, &mut args);
                touch(syms, *y, &mut fields, &mut args);
                continue;
            }
            _ => continue,
        };
        let (lit, is_prefix) = match (api.as_str(), len) {
            ("strncmp" | "strncasecmp" | "memcmp", Some(n)) if (n as usize) <= lit.len() => {
                (lit.chars().take(n as usize).collect::<String>(), true)
            }
            _ => (lit, false),
        };
        let req = match name_of(syms, sym) {
            Some(Name::Field(n)) => fields.entry(n).or_default(),
            Some(Name::Arg(i)) => args.entry(i).or_default(),
            None => continue,
        };
        req.seen = true;
        match (op, is_prefix) {
            (CmpOp::Eq, false) => {
                if let Some(e) = &req.exact {
                    if *e != lit {
                        return Err(unsat(&name_display(syms, sym), format!("must equal both {e:?} and {lit:?}")));
                    }
                }
                req.exact = Some(lit);
            }
            (CmpOp::Eq, true) => {
                req.prefix = Some(match req.prefix.take() {
                    None => lit,
                    Some(p) if p.starts_with(&lit) => p,
                    Some(p) if lit.starts_with(&p) => lit,
                    Some(p) => {
                        return Err(unsat(&name_display(syms, sym), format!("prefixes {p:?} and {lit:?} disagree")))
                    }
                });
            }
            (_, false) => req.not_exact.push(lit),
            (_, true) => req.not_prefix.push(lit),
        }
    }

    let mut out_fields = BTreeMap::new();
    for (name, req) in fields {
        out_fields.insert(name.clone(), resolve(&name, req)?);
    }
    let mut target = target_hint.map(str::to_string);
    let mut out_args = BTreeMap::new();
    for (i, req) in args {
        let name = format!("param_{i}");
        let v = resolve(&name, req)?;
        match &v {
            FieldValue::Equals { value } if value.starts_with('/') => {
                if target.is_none() {
                    target = Some(value.clone());
                }
                out_args.insert(i, value.clone());
            }
            FieldValue::Equals { value } | FieldValue::Prefix { value } => {
                out_args.insert(i, value.clone());
                out_fields.insert(name, v);
            }
            _ => {
                out_fields.insert(name, v);
            }
        }
    }
    Ok(RecoveredRequest { target, fields: out_fields, args: out_args, path: path.to_vec(), endpoint })
}

fn name_display(syms: &SymTable, id: SymId) -> String {
    match name_of(syms, id) {
        Some(Name::Field(n)) => n,
        Some(Name::Arg(i)) => format!("param_{i}"),
        None => syms.render(id),
    }
}

fn unsat(field: &str, reason: String) -> SolveError {
    SolveError::Unsatisfiable { field: field.to_string(), reason }
}

fn resolve(name: &str, req: FieldReq) -> Result<FieldValue, SolveError> {
    let mut excluded: Vec<String> = req.not_exact.iter().chain(&req.not_prefix).cloned().collect();
    excluded.sort();
    excluded.dedup();
    if let Some(e) = req.exact {
        if let Some(p) = &req.prefix {
            if !e.starts_with(p.as_str()) {
                return Err(unsat(name, format!("{e:?} does not start with {p:?}")));
            }
        }
        if req.not_exact.contains(&e) || req.not_prefix.iter().any(|p| e.starts_with(p.as_str())) {
            return Err(unsat(name, format!("{e:?} is both required and excluded")));
        }
        return Ok(FieldValue::Equals { value: e });
    }
    if let Some(p) = req.prefix {
        if req.not_prefix.iter().any(|x| p.starts_with(x.as_str())) {
            return Err(unsat(name, format!("prefix {p:?} is excluded")));
        }
        let mut value = p.clone();
        let mut k = 0;
        while req.not_exact.contains(&value) {
            value = format!("{p}{k}");
            k += 1;
        }
        return Ok(FieldValue::Prefix { value });
    }
    if !excluded.is_empty() {
        return Ok(FieldValue::NotEqual { excluded });
    }
    debug_assert!(req.seen);
    Ok(FieldValue::Unconstrained)
}

/// Run the start point concretely with the recovered request and report
/// whether execution reaches the end point.
pub fn replay(img: &GsbImage, start: u32, req: &RecoveredRequest, max_steps: usize) -> bool {
    let body = req.body();
    let mut vm = Interpreter::new(img, &body);
    let mut argv = vec![0u32; ARG_REGS.len()];
    argv[0] = vm.alloc_str(body.as_bytes());
    for (&i, s) in &req.args {
        if (1..=4).contains(&i) {
            argv[i as usize - 1] = vm.alloc_str(s.as_bytes());
        }
    }
    let limits = RunLimits { max_steps, stop_at: Some(req.endpoint) };
    vm.run_function(start, &argv, limits) == Outcome::Reached
}
