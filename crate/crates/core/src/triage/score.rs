use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataflow::{analyze_function, is_cmp_api, FunctionFlow, Taint};
use crate::graphs::Cfg;
use crate::gsb::{GsbImage, Opcode};
use crate::ingest::NetworkStringSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub basic_blocks: f64,
    pub branches: f64,
    pub memcmp_conditionals: f64,
    pub network_mark: f64,
    pub connection_mark: f64,
}

pub const DEFAULT_SCORE_THRESHOLD: f64 = 1.0;

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            basic_blocks: 0.01,
            branches: 0.0,
            memcmp_conditionals: 0.05,
            network_mark: 0.10,
            connection_mark: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestScore {
    pub function: u32,
    pub basic_blocks: usize,
    pub branches: usize,
    pub memcmp_conditionals: usize,
    pub network_mark: usize,
    pub connection_mark: bool,
    pub score: f64,
}

impl RequestScore {
    pub fn is_request_processing(&self, threshold: f64) -> bool {
        self.score >= threshold
    }
}

pub fn combine(w: &ScoreWeights, f1: usize, f2: usize, f3: usize, f4: usize, f5: bool) -> f64 {
    w.basic_blocks * f1.min(100) as f64
        + w.branches * f2.min(50) as f64
        + w.memcmp_conditionals * f3.min(20) as f64
        + w.network_mark * f4.min(10) as f64
        + if f5 { w.connection_mark } else { 0.0 }
}

pub fn score_request_processing(
    function: u32,
    cfg: &Cfg,
    img: &GsbImage,
    strings: &NetworkStringSet,
    weights: &ScoreWeights,
) -> RequestScore {
    let flow = analyze_function(cfg, img, function);
    score_with_flow(function, cfg, img, &flow, strings, weights)
}

pub(crate) fn score_with_flow(
    function: u32,
    cfg: &Cfg,
    img: &GsbImage,
    flow: &FunctionFlow,
    strings: &NetworkStringSet,
    weights: &ScoreWeights,
) -> RequestScore {
    let mut f1 = 0;
    let mut f2 = 0;
    let mut f3 = 0;
    let mut marks = BTreeSet::new();
    let mut f5 = false;
    for block in cfg.function_blocks(function) {
        f1 += 1;
        for (addr, insn) in &block.insns {
            let Some(st) = flow.state_before(*addr) else { continue };
            match insn.opcode {
                Opcode::Beq | Opcode::Bne => {
                    f2 += 1;
                    let fed = |r: u8| st.reg(r).taint.iter().any(|t| matches!(t, Taint::CmpRet(_)));
                    if fed(insn.rs1) || fed(insn.rs2) {
                        f3 += 1;
                    }
                }
                Opcode::Icall => {
                    let Some(name) = img.import_name(insn.imm) else { continue };
                    if !is_cmp_api(name) {
                        continue;
                    }
                    for r in [1u8, 2] {
                        if let Some(s) = st.reg(r).as_const().and_then(|a| img.read_cstr(a)) {
                            if strings.matches(&s) {
                                marks.insert(s);
                            }
                        }
                        if st.effective_taint(r).iter().any(|t| matches!(t, Taint::Param(_) | Taint::Global(_))) {
                            f5 = true;
                        }
                    }
                }
                _ => {}
            }
        }
    }
    let f4 = marks.len();
    RequestScore {
        function,
        basic_blocks: f1,
        branches: f2,
        memcmp_conditionals: f3,
        network_mark: f4,
        connection_mark: f5,
        score: combine(weights, f1, f2, f3, f4, f5),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_cfg;
    use crate::gsb::asm::assemble_text;

    fn score(src: &str, f: &str) -> RequestScore {
        let img = assemble_text(src).unwrap();
        let cfg = build_cfg(&img).unwrap();
        let entry = img.export_named(f).unwrap();
        score_request_processing(entry, &cfg, &img, &NetworkStringSet::default(), &ScoreWeights::default())
    }

    #[test]
    fn empty_function() {
        let s = score(".library\n.export f\nf: ret", "f");
        assert_eq!((s.basic_blocks, s.branches, s.memcmp_conditionals, s.network_mark, s.connection_mark), (1, 0, 0, 0, false));
        assert!((s.score - 0.01).abs() < 1e-12);
    }

    #[test]
    fn local_constants_never_mark_connection() {
        let src = r#"
            .library
            .export f
            f:  movi r1, a
                movi r2, b
                icall strcmp
                movi r0, 0
                beq r1, r0, done
                movi r1, 1
            done:
                ret
            .data
            a: .string "GET /x"
            b: .string "POST /y"
        "#;
        let s = score(src, "f");
        assert_eq!(s.memcmp_conditionals, 1);
        assert_eq!(s.network_mark, 2);
        assert!(!s.connection_mark);
    }
}
