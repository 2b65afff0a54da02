use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataflow::{analyze_function, FunctionFlow, Known, Taint};
use crate::graphs::{Cfg, Dominators};
use crate::gsb::isa::ARG_REGS;
use crate::gsb::{GsbImage, Opcode, WrapperMap};

use super::catalog::{ApiCatalog, ContextRule, ServiceCategory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum AccessMode {
    Mode(String),
    Flags(u32),
}

impl AccessMode {
    pub fn grants_write(&self) -> bool {
        match self {
            AccessMode::Mode(m) => m.contains(['w', 'a', '+']),
            AccessMode::Flags(f) => open_flags_write(*f),
        }
    }
}

/// Write capability of `open` flags.
pub fn open_flags_write(flags: u32) -> bool {
    matches!(flags & 0x3, 1 | 2) || flags & 0x300 != 0
}

pub fn is_console(name: &str) -> bool {
    name == "/dev/console" || name.starts_with("/dev/tty")
}

/// The file behind a stream argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileContext {
    pub name: String,
    pub access: AccessMode,
    /// Call site of the `fopen`/`open` producing the stream.
    pub opened_at: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndPointContext {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub access: Option<AccessMode>,
    pub cgi: bool,
}

impl EndPointContext {
    /// Whether this context makes a call under `rule` an end point.
    pub fn satisfies(&self, rule: ContextRule) -> bool {
        match rule {
            ContextRule::Unconditional => true,
            ContextRule::Cgi => self.cgi,
            ContextRule::ContextOnly => false,
            ContextRule::OpenFlags => matches!(&self.access, Some(a @ AccessMode::Flags(_)) if a.grants_write()),
            ContextRule::Stream { .. } => {
                self.file.as_deref().is_some_and(|f| !is_console(f))
                    && self.access.as_ref().is_some_and(AccessMode::grants_write)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndPoint {
    #[serde(serialize_with = "crate::engine::solve::hex", deserialize_with = "crate::engine::solve::unhex")]
    pub site: u32,
    pub api: String,
    pub category: ServiceCategory,
    pub context: EndPointContext,
    #[serde(serialize_with = "crate::engine::solve::hex", deserialize_with = "crate::engine::solve::unhex")]
    pub function: u32,
    /// Library export called at the site when it wraps `api`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub via_wrapper: Option<String>,
}

fn dominates_site(cfg: &Cfg, doms: &Dominators, def: u32, site: u32) -> bool {
    let (Some(a), Some(b)) = (cfg.block_containing(def), cfg.block_containing(site)) else {
        return false;
    };
    if a.start == b.start {
        def < site
    } else {
        doms.dominates(a.start, b.start)
    }
}

fn file_context_with(
    site: u32,
    stream_reg: u8,
    cfg: &Cfg,
    img: &GsbImage,
    flow: &FunctionFlow,
    doms: &Dominators,
) -> Option<FileContext> {
    let st = flow.state_before(site)?;
    let v = st.reg(stream_reg);
    if v.known != Known::Unknown || v.taint.len() != 1 {
        return None;
    }
    let Some(Taint::CallRet(opened_at)) = v.taint.first().copied() else { return None };
    let insn = img.insn_at(opened_at)?;
    if insn.opcode != Opcode::Icall || !dominates_site(cfg, doms, opened_at, site) {
        return None;
    }
    let api = img.import_name(insn.imm)?;
    let name = flow.const_at(opened_at, ARG_REGS[0]).and_then(|a| img.read_cstr(a))?;
    let second = flow.const_at(opened_at, ARG_REGS[1])?;
    let access = match api {
        "fopen" | "fopen64" => AccessMode::Mode(img.read_cstr(second)?),
        "open" | "open64" => AccessMode::Flags(second),
        _ => return None,
    };
    Some(FileContext { name, access, opened_at })
}

/// Find the `fopen`/`open` call whose result reaches the stream argument of
/// the output call at `site`. The opening call must be in the same function
/// and dominate `site`; anything else yields `None`.
pub fn recover_file_context(site: u32, stream_arg: u8, cfg: &Cfg, img: &GsbImage) -> Option<FileContext> {
    let f = cfg.function_containing(site)?;
    let flow = analyze_function(cfg, img, f);
    let doms = Dominators::compute(cfg, f);
    file_context_with(site, *ARG_REGS.get(stream_arg as usize)?, cfg, img, &flow, &doms)
}

/// Catalog API call sites whose context rule holds. Call sites whose
/// context cannot be recovered are skipped and logged.
pub fn find_end_points(
    img: &GsbImage,
    cfg: &Cfg,
    catalog: &ApiCatalog,
    wrappers: &WrapperMap,
    is_cgi: bool,
) -> (Vec<EndPoint>, Vec<String>) {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    let mut by_function: BTreeMap<u32, Vec<(u32, String)>> = BTreeMap::new();
    for (&f, _) in cfg.functions.iter() {
        for (addr, insn) in cfg.function_insns(f) {
            if insn.opcode == Opcode::Icall {
                if let Some(n) = img.import_name(insn.imm) {
                    by_function.entry(f).or_default().push((addr, n.to_string()));
                }
            }
        }
    }
    for (f, sites) in by_function {
        let mut analysis: Option<(FunctionFlow, Dominators)> = None;
        for (site, name) in sites {
            let (api, via_wrapper) = if catalog.contains(&name) {
                (name.clone(), None)
            } else if let Some(api) = wrappers.api_for(&name) {
                (api.to_string(), Some(name.clone()))
            } else {
                continue;
            };
            let Some(info) = catalog.get(&api).copied() else { continue };
            let mut context = EndPointContext { cgi: is_cgi, ..Default::default() };
            match info.rule {
                ContextRule::ContextOnly => continue,
                ContextRule::Stream { .. } | ContextRule::OpenFlags if analysis.is_none() => {
                    analysis = Some((analyze_function(cfg, img, f), Dominators::compute(cfg, f)));
                }
                _ => {}
            }
            match info.rule {
                ContextRule::Stream { stream_arg } => {
                    let (flow, doms) = analysis.as_ref().expect("computed above");
                    match file_context_with(site, ARG_REGS[stream_arg as usize], cfg, img, flow, doms) {
                        Some(fc) => {
                            context.file = Some(fc.name);
                            context.access = Some(fc.access);
                        }
                        None => {
                            warnings.push(format!("{site:#x}: {name}: stream context unknown, not an end point"));
                            continue;
                        }
                    }
                }
                ContextRule::OpenFlags => {
                    let (flow, _) = analysis.as_ref().expect("computed above");
                    context.file = flow.const_at(site, ARG_REGS[0]).and_then(|a| img.read_cstr(a));
                    match flow.const_at(site, ARG_REGS[1]) {
                        Some(flags) => context.access = Some(AccessMode::Flags(flags)),
                        None => {
                            warnings.push(format!("{site:#x}: {name}: open flags unknown, not an end point"));
                            continue;
                        }
                    }
                }
                _ => {}
            }
            if context.satisfies(info.rule) {
                out.push(EndPoint { site, api, category: info.category, context, function: f, via_wrapper });
            }
        }
    }
    out.sort_by_key(|e| e.site);
    (out, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_cfg;
    use crate::gsb::asm::assemble_text;

    fn eps(src: &str, cgi: bool) -> Vec<EndPoint> {
        let img = assemble_text(src).unwrap();
        let cfg = build_cfg(&img).unwrap();
        find_end_points(&img, &cfg, &ApiCatalog::builtin(), &WrapperMap::default(), cgi).0
    }

    fn stream_prog(file: &str, mode: &str) -> String {
        format!(
            r#"
            .entry main
            main:
                store [sp-8], ra
                movi r1, file
                movi r2, mode
                icall fopen
                mov r6, r1
                mov r1, r6
                movi r2, fmt
                icall fprintf
                ret
            .data
            file: .string "{file}"
            mode: .string "{mode}"
            fmt: .string "%s"
            "#
        )
    }

    #[test]
    fn console_stream_is_not_an_end_point() {
        assert!(eps(&stream_prog("/dev/console", "w"), false).is_empty());
    }

    #[test]
    fn file_stream_is_an_end_point() {
        let e = eps(&stream_prog("/www/out.html", "w"), false);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].context.file.as_deref(), Some("/www/out.html"));
        assert_eq!(e[0].category, ServiceCategory::PersistentOutput);
        assert!(eps(&stream_prog("/www/out.html", "r"), false).is_empty());
    }

    #[test]
    fn recovered_context() {
        let img = assemble_text(&stream_prog("/www/out.html", "w")).unwrap();
        let cfg = build_cfg(&img).unwrap();
        let site = img.code_base + 7 * 8;
        let fc = recover_file_context(site, 0, &cfg, &img).unwrap();
        assert_eq!((fc.name.as_str(), fc.access), ("/www/out.html", AccessMode::Mode("w".into())));
    }

    #[test]
    fn parameter_stream_is_unknown() {
        let src = ".entry main\nmain: store [sp-8], ra\nicall fprintf\nret";
        let img = assemble_text(src).unwrap();
        let cfg = build_cfg(&img).unwrap();
        assert!(recover_file_context(img.code_base + 8, 0, &cfg, &img).is_none());
    }

    #[test]
    fn branching_opens_are_ambiguous() {
        let src = r#"
            .entry main
            main:
                store [sp-8], ra
                movi r0, 0
                beq r1, r0, other
                movi r1, a
                movi r2, w
                icall fopen
                jmp out
            other:
                movi r1, b
                movi r2, w
                icall fopen
            out:
                movi r2, w
                icall fprintf
                ret
            .data
            a: .string "/tmp/a"
            b: .string "/tmp/b"
            w: .string "w"
        "#;
        assert!(eps(src, false).is_empty());
    }

    #[test]
    fn open_flags() {
        let prog = |flags: &str| {
            format!(".entry main\nmain: store [sp-8], ra\nmovi r1, p\nmovi r2, {flags}\nicall open\nret\n.data\np: .string \"/etc/x\"")
        };
        assert_eq!(eps(&prog("0x302"), false).len(), 1);
        assert!(eps(&prog("0"), false).is_empty());
        assert!(open_flags_write(0x302) && open_flags_write(1) && !open_flags_write(0) && !open_flags_write(3));
    }

    #[test]
    fn printf_needs_cgi() {
        let src = ".entry main\nmain: store [sp-8], ra\nicall printf\nret";
        assert!(eps(src, false).is_empty());
        assert_eq!(eps(src, true).len(), 1);
    }

    #[test]
    fn wrapper_site_takes_wrapped_category() {
        let src = ".entry main\nmain: store [sp-8], ra\nicall _system\nret";
        let img = assemble_text(src).unwrap();
        let cfg = build_cfg(&img).unwrap();
        let mut w = WrapperMap::default();
        w.entries.insert(("/lib/libcommon.so".into(), "_system".into()), "system".into());
        let (e, _) = find_end_points(&img, &cfg, &ApiCatalog::builtin(), &w, false);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].category, ServiceCategory::SystemCommandExecution);
        assert_eq!(e[0].via_wrapper.as_deref(), Some("_system"));
    }
}
