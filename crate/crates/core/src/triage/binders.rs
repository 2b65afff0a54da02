use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataflow::analyze_function;
use crate::graphs::Cfg;
use crate::gsb::isa::ARG_REGS;
use crate::gsb::{GsbImage, Opcode};

pub const DEFAULT_MIN_INVOCATIONS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Binding {
    pub name: String,
    pub handler: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subroutine {
    Local(u32),
    Import(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binder {
    pub subroutine: Subroutine,
    pub name: String,
    pub invocation_count: usize,
    pub bindings: Vec<Binding>,
}

fn plausible(s: &str) -> bool {
    s.starts_with('/') && s.len() > 1 || (!s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_'))
}

/// Find subroutines repeatedly called with a (string, function) argument pair.
pub fn detect_binders(img: &GsbImage, cfg: &Cfg, min_invocations: usize) -> Vec<Binder> {
    let mut sites: BTreeMap<Subroutine, BTreeSet<u32>> = BTreeMap::new();
    let mut bound: BTreeMap<Subroutine, (BTreeSet<u32>, BTreeSet<Binding>)> = BTreeMap::new();
    for &f in cfg.functions.keys() {
        let flow = analyze_function(cfg, img, f);
        for (addr, insn) in cfg.function_insns(f) {
            let sub = match insn.opcode {
                Opcode::Call if cfg.is_function(insn.imm as u32) => Subroutine::Local(insn.imm as u32),
                Opcode::Icall => match img.import_name(insn.imm) {
                    Some(n) => Subroutine::Import(n.to_string()),
                    None => continue,
                },
                _ => continue,
            };
            sites.entry(sub.clone()).or_default().insert(addr);
            let consts: Vec<u32> = ARG_REGS.iter().filter_map(|&r| flow.const_at(addr, r)).collect();
            let name = consts
                .iter()
                .filter(|&&a| img.in_data(a))
                .filter_map(|&a| img.read_cstr(a))
                .find(|s| plausible(s));
            let handler = consts.iter().copied().find(|&a| img.in_code(a) && cfg.is_function(a));
            if let (Some(name), Some(handler)) = (name, handler) {
                let e = bound.entry(sub).or_default();
                e.0.insert(addr);
                e.1.insert(Binding { name, handler });
            }
        }
    }
    bound
        .into_iter()
        .filter(|(_, (qualifying, _))| qualifying.len() >= min_invocations)
        .map(|(sub, (_, bindings))| Binder {
            name: match &sub {
                Subroutine::Local(a) => img
                    .exports
                    .iter()
                    .find(|e| e.address == *a)
                    .map(|e| e.name.clone())
                    .unwrap_or_else(|| format!("sub_{a:x}")),
                Subroutine::Import(n) => n.clone(),
            },
            invocation_count: sites[&sub].len(),
            subroutine: sub,
            bindings: bindings.into_iter().collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_cfg;
    use crate::gsb::asm::assemble_text;

    fn binders(src: &str) -> Vec<Binder> {
        let img = assemble_text(src).unwrap();
        let cfg = build_cfg(&img).unwrap();
        detect_binders(&img, &cfg, DEFAULT_MIN_INVOCATIONS)
    }

    const TWO: &str = r#"
        .entry main
        main:
            store [sp-8], ra
            movi r1, n1
            movi r2, getInfo
            icall websAspDefine
            movi r1, n2
            movi r2, getIndexInfo
            icall websAspDefine
            ret
        getInfo:
            store [sp-8], ra
            ret
        getIndexInfo:
            store [sp-8], ra
            ret
        .data
        n1: .string "getInfo"
        n2: .string "getIndexInfo"
    "#;

    #[test]
    fn two_definitions_make_a_binder() {
        let b = binders(TWO);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].name, "websAspDefine");
        assert_eq!(b[0].invocation_count, 2);
        let names: Vec<&str> = b[0].bindings.iter().map(|x| x.name.as_str()).collect();
        assert_eq!(names, ["getIndexInfo", "getInfo"]);
    }

    #[test]
    fn single_definition_is_not_enough() {
        let src = TWO.replace("movi r1, n2\n            movi r2, getIndexInfo\n            icall websAspDefine\n", "");
        assert!(binders(&src).is_empty());
    }

    #[test]
    fn integer_arguments_do_not_bind() {
        let mut src = String::from(".entry main\nmain:\nstore [sp-8], ra\n");
        for i in 0..5 {
            src.push_str(&format!("movi r1, {i}\nmovi r2, {}\nicall setup\n", i + 10));
        }
        src.push_str("ret\n");
        assert!(binders(&src).is_empty());
    }
}
