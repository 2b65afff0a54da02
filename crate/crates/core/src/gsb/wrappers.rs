use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataflow::{analyze_function, Taint};
use crate::endpoints::ApiCatalog;
use crate::graphs::build_cfg;
use crate::ingest::{FileClass, FileInventory};

use super::format::GsbImage;
use super::isa::{Opcode, ARG_REGS};

/// `(library path, export name)` to the catalog API the export wraps.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrapperMap {
    pub entries: BTreeMap<(String, String), String>,
}

impl WrapperMap {
    /// Wrapped API for an export name, taking the first library in path
    /// order that provides it.
    pub fn api_for(&self, export: &str) -> Option<&str> {
        self.entries.iter().find(|((_, e), _)| e == export).map(|(_, a)| a.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Exports of one library that pass their arguments to a catalog API.
/// Only the first qualifying call in address order is kept per export.
pub fn library_wrappers(img: &GsbImage, catalog: &ApiCatalog) -> Vec<(String, String)> {
    let Ok(cfg) = build_cfg(img) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for export in &img.exports {
        let flow = analyze_function(&cfg, img, export.address);
        let found = cfg.function_insns(export.address).into_iter().find_map(|(addr, insn)| {
            if insn.opcode != Opcode::Icall {
                return None;
            }
            let api = img.import_name(insn.imm)?;
            let info = catalog.get(api)?;
            let st = flow.state_before(addr)?;
            let fed = ARG_REGS[..info.arity.min(4) as usize]
                .iter()
                .any(|&r| st.effective_taint(r).iter().any(|t| matches!(t, Taint::Param(_))));
            fed.then(|| api.to_string())
        });
        if let Some(api) = found {
            out.push((export.name.clone(), api));
        }
    }
    out
}

/// Scan every shared library in the inventory for API wrappers.
/// Unparsable libraries are skipped and reported in the returned warnings.
pub fn find_shared_library_wrappers(inv: &FileInventory, catalog: &ApiCatalog) -> (WrapperMap, Vec<String>) {
    let mut map = WrapperMap::default();
    let mut warnings = Vec::new();
    for entry in inv.entries.iter().filter(|e| e.class == FileClass::GsbLibrary) {
        match GsbImage::parse(&entry.data) {
            Ok(img) => {
                for (export, api) in library_wrappers(&img, catalog) {
                    map.entries.insert((entry.path.clone(), export), api);
                }
            }
            Err(e) => warnings.push(format!("{}: skipped library: {e}", entry.path)),
        }
    }
    (map, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsb::asm::assemble_text;

    const LIB: &str = r#"
        .library
        .export _system
        .export _check
        .export _quiet
        _system:
            store [sp-8], ra
            movi r9, -256
            mov r3, r2
            mov r2, r1
            add r1, sp, r9
            icall vsprintf
            add r1, sp, r9
            icall system
            ret
        _check:
            store [sp-8], ra
            icall strcmp
            ret
        _quiet:
            store [sp-8], ra
            movi r1, cmd
            icall system
            ret
        .data
        cmd: .string "reboot"
    "#;

    #[test]
    fn formatting_wrapper_is_found() {
        let img = assemble_text(LIB).unwrap();
        let w = library_wrappers(&img, &ApiCatalog::builtin());
        assert_eq!(w, vec![("_system".to_string(), "system".to_string())]);
    }

    #[test]
    fn no_icalls_no_wrappers() {
        let img = assemble_text(".library\n.export f\nf: store [sp-8], ra\nret").unwrap();
        assert!(library_wrappers(&img, &ApiCatalog::builtin()).is_empty());
    }
}
