use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dataflow::is_cmp_api;
use crate::graphs::{Cfg, MultiStageChoppedCfg};
use crate::gsb::interp::{RETURN_SENTINEL, STACK_TOP};
use crate::gsb::isa::{ARG_REGS, INSN_SIZE, NUM_REGS, RA, RET_REG, SP};
use crate::gsb::{GsbImage, Instruction, Opcode};

use super::tree::{build_constraint_tree, record_branch_constraint, ConstraintTree, HlConstraint};
use super::value::{CmpOp, StrArg, SymId, SymKind, SymTable, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub step_depth: usize,
    pub max_states: usize,
    pub max_steps: usize,
    pub loop_unroll_cap: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { step_depth: 0, max_states: 4096, max_steps: 200_000, loop_unroll_cap: 8 }
    }
}

/// Equality/disequality facts on one path, used to drop infeasible states.
#[derive(Debug, Clone, Default)]
pub struct PathConstraints {
    num_eq: BTreeMap<Value, u32>,
    num_ne: BTreeMap<Value, BTreeSet<u32>>,
    str_exact: BTreeMap<SymId, String>,
    str_prefix: BTreeMap<SymId, String>,
    str_not_exact: BTreeMap<SymId, BTreeSet<String>>,
    str_not_prefix: BTreeMap<SymId, BTreeSet<String>>,
}

impl PathConstraints {
    /// Add `lhs op rhs`; returns false when the path becomes infeasible.
    pub fn add(&mut self, syms: &SymTable, lhs: &Value, op: CmpOp, rhs: &Value) -> bool {
        let (sym, k) = match (lhs, rhs) {
            (v, Value::Con(k)) if !v.is_con() => (v.clone(), *k),
            (Value::Con(k), v) if !v.is_con() => (v.clone(), *k),
            _ => return true,
        };
        let eq = match op {
            CmpOp::Eq => true,
            CmpOp::Ne => false,
            CmpOp::Lt | CmpOp::Le => return true,
        };
        if eq {
            if self.num_eq.get(&sym).is_some_and(|&e| e != k) || self.num_ne.get(&sym).is_some_and(|s| s.contains(&k)) {
                return false;
            }
            self.num_eq.insert(sym.clone(), k);
        } else {
            if self.num_eq.get(&sym) == Some(&k) {
                return false;
            }
            self.num_ne.entry(sym.clone()).or_default().insert(k);
        }
        if k != 0 {
            return true;
        }
        let Value::Sym(c) = sym else { return true };
        let SymKind::Cmp { api, lhs, rhs, len } = syms.kind(c) else { return true };
        let (s, lit) = match (lhs, rhs) {
            (StrArg::Sym(s), StrArg::Lit(l)) | (StrArg::Lit(l), StrArg::Sym(s)) => (*s, l.clone()),
            _ => return true,
        };
        let prefix_cmp = matches!(api.as_str(), "strncmp" | "strncasecmp" | "memcmp");
        let (lit, prefix) = match len {
            Some(n) if prefix_cmp && (*n as usize) <= lit.len() => (lit.chars().take(*n as usize).collect(), true),
            _ => (lit, false),
        };
        self.add_string(s, lit, prefix, eq)
    }

    fn add_string(&mut self, s: SymId, lit: String, prefix: bool, eq: bool) -> bool {
        match (eq, prefix) {
            (true, false) => {
                if self.str_exact.get(&s).is_some_and(|e| *e != lit) {
                    return false;
                }
                self.str_exact.insert(s, lit);
            }
            (true, true) => {
                let merged = match self.str_prefix.get(&s) {
                    None => lit,
                    Some(p) if p.starts_with(&lit) => p.clone(),
                    Some(p) if lit.starts_with(p.as_str()) => lit,
                    Some(_) => return false,
                };
                self.str_prefix.insert(s, merged);
            }
            (false, false) => {
                self.str_not_exact.entry(s).or_default().insert(lit);
            }
            (false, true) => {
                self.str_not_prefix.entry(s).or_default().insert(lit);
            }
        }
        self.string_consistent(s)
    }

    fn string_consistent(&self, s: SymId) -> bool {
        let nots = self.str_not_exact.get(&s);
        let not_prefixes = self.str_not_prefix.get(&s);
        if let Some(e) = self.str_exact.get(&s) {
            if self.str_prefix.get(&s).is_some_and(|p| !e.starts_with(p.as_str())) {
                return false;
            }
            if nots.is_some_and(|n| n.contains(e)) {
                return false;
            }
            if not_prefixes.is_some_and(|n| n.iter().any(|p| e.starts_with(p.as_str()))) {
                return false;
            }
        }
        if let Some(p) = self.str_prefix.get(&s) {
            if not_prefixes.is_some_and(|n| n.iter().any(|x| p.starts_with(x.as_str()))) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub function: u32,
    pub ret: u32,
    pub guided: bool,
    pub visits: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone)]
pub struct SymState {
    pub pc: u32,
    pub regs: [Value; NUM_REGS],
    pub mem: BTreeMap<u32, Value>,
    /// Start addresses of buffers holding the raw request.
    pub body_regions: BTreeMap<u32, SymId>,
    pub frames: Vec<Frame>,
    /// Blocks entered by guided frames, in order.
    pub path: Vec<u32>,
    pub log: Vec<HlConstraint>,
    pub cons: PathConstraints,
    /// Data addresses loaded, recorded while probing.
    pub loads: Vec<u32>,
}

impl SymState {
    pub fn new(syms: &mut SymTable, entry: u32) -> SymState {
        let mut regs: [Value; NUM_REGS] = std::array::from_fn(|_| Value::Con(0));
        for (i, r) in ARG_REGS.iter().enumerate() {
            regs[*r as usize] = Value::Sym(syms.fresh(SymKind::Arg(i as u8 + 1)));
        }
        regs[SP as usize] = Value::Con(STACK_TOP);
        regs[RA as usize] = Value::Con(RETURN_SENTINEL);
        SymState {
            pc: entry,
            regs,
            mem: BTreeMap::new(),
            body_regions: BTreeMap::new(),
            frames: vec![Frame { function: entry, ret: RETURN_SENTINEL, guided: true, visits: BTreeMap::new() }],
            path: Vec::new(),
            log: Vec::new(),
            cons: PathConstraints::default(),
            loads: Vec::new(),
        }
    }

    pub fn reg(&self, r: u8) -> &Value {
        &self.regs[r as usize]
    }

    fn set(&mut self, r: u8, v: Value) {
        self.regs[r as usize] = v;
    }

    fn current_block(&self) -> u32 {
        self.path.last().copied().unwrap_or(self.pc)
    }

    fn pos(&self) -> usize {
        self.path.len().saturating_sub(1)
    }

    /// Concrete byte at `addr`, if known.
    fn byte(&self, img: &GsbImage, addr: u32) -> Option<u8> {
        for k in 0..4u32 {
            if let Some(v) = self.mem.get(&addr.wrapping_sub(k)) {
                return v.as_con().map(|w| w.to_le_bytes()[k as usize]);
            }
        }
        img.byte_at(addr)
    }

    fn cstr(&self, img: &GsbImage, addr: u32) -> Option<String> {
        let mut out = Vec::new();
        for i in 0..4096u32 {
            match self.byte(img, addr.wrapping_add(i))? {
                0 => return Some(String::from_utf8_lossy(&out).into_owned()),
                b => out.push(b),
            }
        }
        None
    }
}

#[derive(Debug, Clone)]
pub struct FoundPath {
    pub path: Vec<u32>,
    pub log: Vec<HlConstraint>,
    pub tree: ConstraintTree,
}

#[derive(Debug, Clone, Default)]
pub struct ExecResult {
    pub paths: Vec<FoundPath>,
    pub syms: SymTable,
    pub exhausted: bool,
    pub states: usize,
    pub steps: usize,
    /// States dropped because their constraints conflicted.
    pub infeasible: usize,
}

enum Flow {
    Next,
    Goto(u32),
    Fork { taken: u32, fall: u32, lhs: Value, op: CmpOp, rhs: Value },
    Call { target: Option<u32>, ret: u32 },
    Ret,
    Stop,
}

/// What the driver should do with a call.
enum CallMode {
    Guided,
    Unguided,
    Bypass,
}

pub struct Engine<'a> {
    pub img: &'a GsbImage,
    pub cfg: &'a Cfg,
    pub config: EngineConfig,
    pub syms: SymTable,
    steps: usize,
    /// Read data words concretely, never as global symbols.
    concrete_data: bool,
}

impl<'a> Engine<'a> {
    pub fn new(img: &'a GsbImage, cfg: &'a Cfg, config: EngineConfig) -> Self {
        Engine { img, cfg, config, syms: SymTable::default(), steps: 0, concrete_data: false }
    }

    fn fresh(&mut self, kind: SymKind) -> Value {
        Value::Sym(self.syms.fresh(kind))
    }

    fn load(&mut self, st: &SymState, addr: &Value) -> Value {
        let Some(a) = addr.as_con() else {
            let label = format!("*{}", self.syms.render_value(addr));
            return self.fresh(SymKind::Opaque(label));
        };
        if let Some(v) = st.mem.get(&a) {
            return v.clone();
        }
        if (1..4).any(|k| st.mem.contains_key(&a.wrapping_sub(k)) || st.mem.contains_key(&a.wrapping_add(k))) {
            let bytes: Option<Vec<u8>> = (0..4).map(|k| st.byte(self.img, a.wrapping_add(k))).collect();
            if let Some(b) = bytes {
                return Value::Con(u32::from_le_bytes([b[0], b[1], b[2], b[3]]));
            }
            return self.fresh(SymKind::Opaque(format!("mem_{a:x}")));
        }
        if !self.concrete_data && self.img.in_data(a) && self.img.is_zero_data_word(a) {
            return self.fresh(SymKind::Global(a));
        }
        match self.img.read_u32(a) {
            Some(w) => Value::Con(w),
            None => self.fresh(SymKind::Opaque(format!("mem_{a:x}"))),
        }
    }

    fn str_arg(&mut self, st: &SymState, v: &Value) -> StrArg {
        match v {
            Value::Sym(s) => StrArg::Sym(*s),
            Value::Con(a) => {
                if let Some(&b) = st.body_regions.get(a) {
                    return StrArg::Sym(b);
                }
                match st.cstr(self.img, *a) {
                    Some(s) => StrArg::Lit(s),
                    None => StrArg::Sym(self.syms.fresh(SymKind::Opaque(format!("str_{a:x}")))),
                }
            }
            other => {
                let label = format!("str({})", self.syms.render_value(other));
                StrArg::Sym(self.syms.fresh(SymKind::Opaque(label)))
            }
        }
    }

    fn render_arg(&self, st: &SymState, v: &Value) -> String {
        if let Value::Con(a) = v {
            if self.img.in_data(*a) {
                if let Some(s) = st.cstr(self.img, *a).filter(|s| !s.is_empty()) {
                    return format!("{s:?}");
                }
            }
        }
        self.syms.render_value(v)
    }

    fn summarize(&mut self, st: &mut SymState, addr: u32, api: &str, args: &[Value], result: Option<SymId>) {
        let rendered = args.iter().map(|a| self.render_arg(st, a)).collect();
        let mut arg_syms = BTreeSet::new();
        for a in args {
            a.syms(&mut arg_syms);
        }
        st.log.push(HlConstraint::summary(addr, st.current_block(), st.pos(), api, rendered, arg_syms, result));
    }

    /// Model an import call.
    fn api_call(&mut self, st: &mut SymState, addr: u32, name: &str) {
        let arg = |st: &SymState, i: usize| st.reg(ARG_REGS[i]).clone();
        match name {
            "websGetVar" => {
                let key = arg(st, 1);
                let result = match self.str_arg(st, &key) {
                    StrArg::Lit(k) => self.syms.fresh(SymKind::Field(k)),
                    StrArg::Sym(_) => self.syms.fresh(SymKind::Opaque(format!("websGetVar@{addr:x}"))),
                };
                self.summarize(st, addr, name, &[key], Some(result));
                st.set(RET_REG, Value::Sym(result));
            }
            "recv" | "recvfrom" => {
                let body = self.syms.fresh(SymKind::RequestBody);
                if let Some(buf) = arg(st, 1).as_con() {
                    st.body_regions.insert(buf, body);
                }
                let n = self.syms.fresh(SymKind::CallRet { callee: name.into(), site: addr });
                let args = [arg(st, 0), arg(st, 1), arg(st, 2)];
                self.summarize(st, addr, name, &args, Some(n));
                st.set(RET_REG, Value::Sym(n));
            }
            _ if is_cmp_api(name) => {
                let (a, b) = (arg(st, 0), arg(st, 1));
                let len = if matches!(name, "strncmp" | "strncasecmp" | "memcmp") { arg(st, 2).as_con() } else { None };
                let (la, lb) = (self.str_arg(st, &a), self.str_arg(st, &b));
                if let (StrArg::Lit(x), StrArg::Lit(y)) = (&la, &lb) {
                    let (x, y): (Vec<u8>, Vec<u8>) = match len {
                        Some(n) => (x.bytes().take(n as usize).collect(), y.bytes().take(n as usize).collect()),
                        None => (x.bytes().collect(), y.bytes().collect()),
                    };
                    let r = match x.cmp(&y) {
                        std::cmp::Ordering::Less => u32::MAX,
                        std::cmp::Ordering::Equal => 0,
                        std::cmp::Ordering::Greater => 1,
                    };
                    st.set(RET_REG, Value::Con(r));
                    return;
                }
                let c = self.syms.fresh(SymKind::Cmp { api: name.into(), lhs: la.clone(), rhs: lb.clone(), len });
                let mut args = vec![a, b];
                if let Some(n) = len {
                    args.push(Value::Con(n));
                }
                let rendered = vec![self.syms.render_str(&la), self.syms.render_str(&lb)]
                    .into_iter()
                    .chain(len.map(|n| n.to_string()))
                    .collect();
                let mut arg_syms = BTreeSet::new();
                for s in [&la, &lb] {
                    if let StrArg::Sym(id) = s {
                        arg_syms.insert(*id);
                    }
                }
                st.log.push(HlConstraint::summary(addr, st.current_block(), st.pos(), name, rendered, arg_syms, Some(c)));
                st.set(RET_REG, Value::Sym(c));
            }
            _ => {
                let r = self.syms.fresh(SymKind::CallRet { callee: name.into(), site: addr });
                let args: Vec<Value> = (0..4).map(|i| arg(st, i)).collect();
                self.summarize(st, addr, name, &args, Some(r));
                st.set(RET_REG, Value::Sym(r));
            }
        }
    }

    /// Replace a call by a fresh result symbol, leaving memory untouched.
    pub fn bypass_call(&mut self, st: &mut SymState, site: u32, callee: &str) {
        let r = self.syms.fresh(SymKind::CallRet { callee: callee.into(), site });
        let args: Vec<Value> = (0..4).map(|i| st.reg(ARG_REGS[i]).clone()).collect();
        self.summarize(st, site, callee, &args, Some(r));
        st.set(RET_REG, Value::Sym(r));
        for &a in &ARG_REGS[1..] {
            let v = self.fresh(SymKind::Opaque(format!("r{a}@{site:x}")));
            st.set(a, v);
        }
    }

    fn exec(&mut self, st: &mut SymState, addr: u32, insn: &Instruction) -> Flow {
        let next = addr.wrapping_add(INSN_SIZE);
        let r = |st: &SymState, i: u8| st.reg(i).clone();
        match insn.opcode {
            Opcode::Movi => st.set(insn.rd, Value::Con(insn.imm as u32)),
            Opcode::Mov => st.set(insn.rd, r(st, insn.rs1)),
            Opcode::Add => st.set(insn.rd, Value::add(r(st, insn.rs1), r(st, insn.rs2))),
            Opcode::Sub => st.set(insn.rd, Value::sub(r(st, insn.rs1), r(st, insn.rs2))),
            Opcode::Load => {
                let a = Value::add(r(st, insn.rs1), Value::Con(insn.imm as u32));
                if let Some(c) = a.as_con().filter(|&c| self.img.in_data(c)) {
                    st.loads.push(c);
                }
                let v = self.load(st, &a);
                st.set(insn.rd, v);
            }
            Opcode::Store => {
                let a = Value::add(r(st, insn.rs1), Value::Con(insn.imm as u32));
                if let Some(c) = a.as_con() {
                    for k in 1..4 {
                        st.mem.remove(&c.wrapping_sub(k));
                        st.mem.remove(&c.wrapping_add(k));
                    }
                    st.mem.insert(c, r(st, insn.rs2));
                }
            }
            Opcode::Call => return Flow::Call { target: Some(insn.imm as u32), ret: next },
            Opcode::Callr => return Flow::Call { target: r(st, insn.rs1).as_con(), ret: next },
            Opcode::Ret => return Flow::Ret,
            Opcode::Beq | Opcode::Bne => {
                let (a, b) = (r(st, insn.rs1), r(st, insn.rs2));
                let taken = insn.imm as u32;
                if let (Some(x), Some(y)) = (a.as_con(), b.as_con()) {
                    let eq = x == y;
                    let jump = if insn.opcode == Opcode::Beq { eq } else { !eq };
                    return Flow::Goto(if jump { taken } else { next });
                }
                let op = if insn.opcode == Opcode::Beq { CmpOp::Eq } else { CmpOp::Ne };
                return Flow::Fork { taken, fall: next, lhs: a, op, rhs: b };
            }
            Opcode::Jmp => return Flow::Goto(insn.imm as u32),
            Opcode::Icall => {
                let name = self.img.import_name(insn.imm).unwrap_or("?").to_string();
                self.api_call(st, addr, &name);
            }
            Opcode::Halt => return Flow::Stop,
        }
        Flow::Next
    }

    /// Count a block entry; false when the loop unroll cap is exceeded.
    fn enter_block(&self, st: &mut SymState, b: u32) -> bool {
        let cap = self.config.loop_unroll_cap + 1;
        let frame = st.frames.last_mut().expect("live state has a frame");
        let n = frame.visits.entry(b).or_insert(0);
        *n += 1;
        if *n > cap {
            return false;
        }
        if frame.guided {
            st.path.push(b);
        }
        true
    }

    fn call_mode(&self, st: &SymState, target: Option<u32>, allowed: Option<&BTreeSet<u32>>) -> CallMode {
        let Some(t) = target.filter(|t| self.cfg.blocks.contains_key(t)) else {
            return CallMode::Bypass;
        };
        let guided_here = st.frames.last().is_some_and(|f| f.guided);
        if guided_here && allowed.is_some_and(|a| a.contains(&t)) {
            return CallMode::Guided;
        }
        let unguided_depth = st.frames.iter().filter(|f| !f.guided).count();
        if unguided_depth < self.config.step_depth {
            CallMode::Unguided
        } else {
            CallMode::Bypass
        }
    }

    fn callee_name(&self, target: Option<u32>) -> String {
        match target {
            Some(t) => self
                .img
                .exports
                .iter()
                .find(|e| e.address == t)
                .map(|e| e.name.clone())
                .unwrap_or_else(|| format!("sub_{t:x}")),
            None => "indirect".into(),
        }
    }

    /// Explore from `start` towards the call site `end`, keeping guided
    /// frames inside `chop.allowed`.
    pub fn execute_guided(mut self, start: u32, end: u32, chop: &MultiStageChoppedCfg) -> ExecResult {
        let mut result = ExecResult::default();
        let init = SymState::new(&mut self.syms, start);
        let mut queue = VecDeque::from([init]);
        let mut states = 1usize;
        let mut exhausted = false;
        let mut infeasible = 0usize;
        let mut found: Vec<(Vec<u32>, Vec<HlConstraint>)> = Vec::new();

        'states: while let Some(mut st) = queue.pop_front() {
            loop {
                if self.steps >= self.config.max_steps {
                    exhausted = true;
                    break 'states;
                }
                let pc = st.pc;
                if self.cfg.blocks.contains_key(&pc) {
                    if !self.enter_block(&mut st, pc) {
                        continue 'states;
                    }
                    if st.frames.last().is_some_and(|f| f.guided) && !chop.allowed.contains(&pc) {
                        st.path.pop();
                        continue 'states;
                    }
                }
                if pc == end {
                    found.push((st.path.clone(), st.log.clone()));
                    continue 'states;
                }
                let Some(insn) = self.img.insn_at(pc) else { continue 'states };
                self.steps += 1;
                match self.exec(&mut st, pc, &insn) {
                    Flow::Next => st.pc = pc.wrapping_add(INSN_SIZE),
                    Flow::Goto(t) => st.pc = t,
                    Flow::Fork { taken, fall, lhs, op, rhs } => {
                        let guided = st.frames.last().is_some_and(|f| f.guided);
                        let block = st.current_block();
                        let Some((ft, ff)) = record_branch_constraint(&self.syms, pc, block, st.pos(), &lhs, op, &rhs)
                        else {
                            unreachable!("fork only on symbolic operands")
                        };
                        for (dest, fact) in [(taken, ft), (fall, ff)] {
                            if guided && self.cfg.blocks.contains_key(&dest) && !chop.allowed.contains(&dest) {
                                continue;
                            }
                            let mut s = st.clone();
                            let crate::engine::tree::HlKind::BranchFact { lhs, op, rhs } = &fact.kind else {
                                unreachable!()
                            };
                            if !s.cons.add(&self.syms, lhs, *op, rhs) {
                                infeasible += 1;
                                continue;
                            }
                            if states >= self.config.max_states {
                                exhausted = true;
                                continue;
                            }
                            states += 1;
                            s.log.push(fact);
                            s.pc = dest;
                            queue.push_back(s);
                        }
                        continue 'states;
                    }
                    Flow::Call { target, ret } => match self.call_mode(&st, target, Some(&chop.allowed)) {
                        mode @ (CallMode::Guided | CallMode::Unguided) => {
                            let t = target.expect("entered calls have a target");
                            st.frames.push(Frame {
                                function: t,
                                ret,
                                guided: matches!(mode, CallMode::Guided),
                                visits: BTreeMap::new(),
                            });
                            st.set(RA, Value::Con(ret));
                            st.pc = t;
                        }
                        CallMode::Bypass => {
                            let name = self.callee_name(target);
                            self.bypass_call(&mut st, pc, &name);
                            st.pc = ret;
                        }
                    },
                    Flow::Ret => {
                        let frame = st.frames.pop().expect("live state has a frame");
                        if st.frames.is_empty() {
                            continue 'states;
                        }
                        st.pc = frame.ret;
                    }
                    Flow::Stop => continue 'states,
                }
            }
        }

        for (path, log) in found {
            let tree = build_constraint_tree(&log, &path, self.cfg, &self.syms);
            result.paths.push(FoundPath { path, log, tree });
        }
        result.syms = self.syms;
        result.exhausted = exhausted;
        result.states = states;
        result.steps = self.steps;
        result.infeasible = infeasible;
        result
    }

    /// Run `function` along a single path, preferring successors inside
    /// `body` at symbolic branches, and collect the data addresses loaded in
    /// each iteration of the loop headed by `header`. Returns `None` when
    /// the iteration cap is exceeded before the loop exits.
    pub fn probe_loop(
        mut self,
        function: u32,
        header: u32,
        body: &BTreeSet<u32>,
        iteration_cap: usize,
    ) -> Option<Vec<Vec<u32>>> {
        self.concrete_data = true;
        let mut st = SymState::new(&mut self.syms, function);
        let mut iterations: Vec<Vec<u32>> = Vec::new();
        let mut inside = false;
        let depth0 = 1;
        loop {
            if self.steps >= self.config.max_steps {
                return None;
            }
            let pc = st.pc;
            if st.frames.len() == depth0 && self.cfg.blocks.contains_key(&pc) {
                if pc == header {
                    if iterations.len() >= iteration_cap {
                        return None;
                    }
                    inside = true;
                    iterations.push(Vec::new());
                    st.loads.clear();
                } else if inside && !body.contains(&pc) {
                    break;
                }
            }
            let Some(insn) = self.img.insn_at(pc) else { break };
            self.steps += 1;
            let before = st.loads.len();
            let flow = self.exec(&mut st, pc, &insn);
            if inside && st.frames.len() == depth0 && st.loads.len() > before {
                if let Some(cur) = iterations.last_mut() {
                    cur.extend(st.loads[before..].iter().copied());
                }
            }
            match flow {
                Flow::Next => st.pc = pc.wrapping_add(INSN_SIZE),
                Flow::Goto(t) => st.pc = t,
                Flow::Fork { taken, fall, .. } => {
                    let in_loop = |b: u32| body.contains(&b);
                    st.pc = if !inside || in_loop(taken) || !in_loop(fall) { taken } else { fall };
                    if inside && in_loop(fall) && !in_loop(taken) {
                        st.pc = fall;
                    }
                }
                Flow::Call { target, ret } => {
                    let name = self.callee_name(target);
                    self.bypass_call(&mut st, pc, &name);
                    st.pc = ret;
                }
                Flow::Ret | Flow::Stop => break,
            }
        }
        Some(iterations)
    }
}

/// Convenience wrapper over [`Engine::execute_guided`].
pub fn execute_guided(
    img: &GsbImage,
    start: u32,
    end: u32,
    chop: &MultiStageChoppedCfg,
    cfg: &Cfg,
    config: EngineConfig,
) -> ExecResult {
    Engine::new(img, cfg, config).execute_guided(start, end, chop)
}
