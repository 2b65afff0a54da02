//! Whole-firmware analysis: ingest, per-binary recovery, user view, diff.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;

use crate::config::Config;
use crate::endpoints::{find_end_points, ApiCatalog, EndPoint};
use crate::engine::{execute_guided, replay, solve_request, ConstraintTree, HlKind, RecoveredRequest};
use crate::graphs::{backward_trace, build_call_graph, build_cfg, gen_chopped_cfg, CallGraph, Cfg};
use crate::gsb::{find_shared_library_wrappers, GsbImage, WrapperMap};
use crate::ingest::{
    is_cgi_path, load_firmware, locate_document_root, recognize_service_binaries, under, FileInventory, IngestError,
};
use crate::report::{diff_hidden_services, HiddenServiceReport, Origin, ServiceRecord, Trigger};
use crate::triage::{detect_binders, detect_function_tables, resolve_table_calls, score_request_processing, RequestScore};
use crate::userview::{docroot_relative, extract_requests_static, UserRequest};

pub fn function_name(img: &GsbImage, addr: u32) -> String {
    img.exports.iter().find(|e| e.address == addr).map(|e| e.name.clone()).unwrap_or_else(|| format!("sub_{addr:x}"))
}

/// Load a firmware tree or tar archive and analyze it.
pub fn analyze_path(path: &Path, config: &Config, imported: &[UserRequest]) -> Result<HiddenServiceReport, IngestError> {
    let inv = load_firmware(path)?;
    let id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
    Ok(analyze_firmware(&id, &inv, config, imported))
}

pub fn analyze_firmware(firmware: &str, inv: &FileInventory, config: &Config, imported: &[UserRequest]) -> HiddenServiceReport {
    let mut warnings = Vec::new();
    let docroot = locate_document_root(inv);
    let catalog = config.catalog();
    let (wrappers, w) = find_shared_library_wrappers(inv, &catalog);
    warnings.extend(w);
    let (candidates, w) = recognize_service_binaries(inv, &config.network_strings());
    warnings.extend(w);

    let per_binary: Vec<BinaryResult> = candidates
        .par_iter()
        .map(|c| {
            let data = inv.get(&c.path).map(|e| e.data.as_slice()).unwrap_or_default();
            let default_target = docroot.as_deref().filter(|d| under(d, &c.path)).map(|d| docroot_relative(d, &c.path));
            analyze_binary(&c.path, data, config, &catalog, &wrappers, default_target)
        })
        .collect();

    let mut services = Vec::new();
    let mut exhausted = false;
    for r in per_binary {
        warnings.extend(r.warnings);
        for mut s in r.records {
            exhausted |= s.exhausted;
            s.id = services.len();
            services.push(s);
        }
    }

    let (mut userset, w) = extract_requests_static(inv, docroot.as_deref());
    warnings.extend(w);
    for r in imported {
        userset.insert(r.clone());
    }

    let mut report = diff_hidden_services(services, userset);
    report.firmware = firmware.to_string();
    report.warnings = warnings;
    report.exhausted = exhausted;
    report.config = config.clone();
    report
}

#[derive(Debug, Default)]
pub struct BinaryResult {
    pub records: Vec<ServiceRecord>,
    pub warnings: Vec<String>,
}

/// Everything derived from one binary that end-point tasks share.
pub struct BinaryContext<'a> {
    pub path: &'a str,
    pub img: GsbImage,
    pub cfg: Cfg,
    pub cg: CallGraph,
    /// Handler functions reachable by name, with how they are named.
    pub handlers: BTreeMap<u32, Origin>,
    pub end_points: Vec<EndPoint>,
    pub warnings: Vec<String>,
}

pub fn prepare_binary<'a>(
    path: &'a str,
    data: &[u8],
    config: &Config,
    catalog: &ApiCatalog,
    wrappers: &WrapperMap,
) -> Result<BinaryContext<'a>, String> {
    let img = GsbImage::parse(data).map_err(|e| format!("{path}: {e}"))?;
    let cfg = build_cfg(&img).map_err(|e| format!("{path}: {e}"))?;
    let mut warnings: Vec<String> = cfg.warnings.iter().map(|w| format!("{path}: {w}")).collect();
    let mut cg = build_call_graph(&cfg, Some(img.entry));
    let (tables, w) = detect_function_tables(&img, &cfg, config.engine.engine(), config.triage.loop_iteration_cap);
    warnings.extend(w.into_iter().map(|w| format!("{path}: {w}")));
    resolve_table_calls(&cfg, &mut cg, &tables);
    let mut handlers = BTreeMap::new();
    for b in detect_binders(&img, &cfg, config.triage.min_invocations) {
        for binding in &b.bindings {
            handlers
                .entry(binding.handler)
                .or_insert_with(|| Origin::Binder { subroutine: b.name.clone(), name: binding.name.clone() });
        }
    }
    for t in &tables {
        for e in &t.entries {
            handlers.entry(e.handler).or_insert_with(|| Origin::FunctionTable { base: t.base, name: e.name.clone() });
        }
    }
    let (end_points, w) = find_end_points(&img, &cfg, catalog, wrappers, is_cgi_path(path));
    warnings.extend(w.into_iter().map(|w| format!("{path}: {w}")));
    Ok(BinaryContext { path, img, cfg, cg, handlers, end_points, warnings })
}

/// Start points for an end point, each with its origin and the trace
/// suffixes leading from it to the end point's function. A named handler
/// on a trace wins; otherwise the best-scoring function at or above the
/// threshold, falling back to the trace root.
pub fn start_points(
    ctx: &BinaryContext<'_>,
    traces: &[Vec<u32>],
    scores: &BTreeMap<u32, RequestScore>,
    threshold: f64,
) -> BTreeMap<(u32, Origin), Vec<Vec<u32>>> {
    let mut out: BTreeMap<(u32, Origin), Vec<Vec<u32>>> = BTreeMap::new();
    for t in traces {
        let (i, origin) = match t.iter().position(|f| ctx.handlers.contains_key(f)) {
            Some(i) => (i, ctx.handlers[&t[i]].clone()),
            None => {
                let mut best: Option<(usize, f64)> = None;
                for (i, f) in t.iter().enumerate() {
                    let s = scores.get(f).map(|s| s.score).unwrap_or(0.0);
                    if s >= threshold && best.is_none_or(|(_, b)| s > b) {
                        best = Some((i, s));
                    }
                }
                let i = best.map(|(i, _)| i).unwrap_or(0);
                (i, Origin::Dispatcher { function: function_name(&ctx.img, t[i]) })
            }
        };
        let suffix = t[i..].to_vec();
        let group = out.entry((t[i], origin)).or_default();
        if !group.contains(&suffix) {
            group.push(suffix);
        }
    }
    out
}

fn classify(req: RecoveredRequest, tree: &ConstraintTree) -> Trigger {
    if req.target.is_some() || !req.fields.is_empty() || !req.args.is_empty() {
        return Trigger::Request(req);
    }
    let facts: Vec<String> =
        tree.nodes.iter().filter(|n| matches!(n.kind, HlKind::BranchFact { .. })).map(|n| n.text.clone()).collect();
    if facts.is_empty() {
        Trigger::Unconditional
    } else {
        Trigger::EnvironmentCondition { constraints: facts }
    }
}

/// Explore from `start` to `ep` and turn the first usable path into a
/// service record. Paths whose request replays concretely are preferred.
pub fn recover_service(
    ctx: &BinaryContext<'_>,
    ep: &EndPoint,
    start: u32,
    origin: Origin,
    traces: &[Vec<u32>],
    config: &Config,
    default_target: Option<&str>,
) -> (ServiceRecord, Vec<String>) {
    let mut warnings = Vec::new();
    let chop = gen_chopped_cfg(traces, &ctx.cfg, &ctx.cg, ep.site);
    warnings.extend(chop.warnings.iter().map(|w| format!("{}: {w}", ctx.path)));
    let res = execute_guided(&ctx.img, start, ep.site, &chop, &ctx.cfg, config.engine.engine());
    let mut first: Option<(RecoveredRequest, usize)> = None;
    let mut chosen: Option<(RecoveredRequest, usize)> = None;
    let mut unsat = 0;
    for (k, p) in res.paths.iter().enumerate() {
        match solve_request(&p.tree, &res.syms, ep.site, &p.path, origin.target_hint()) {
            Ok(mut req) => {
                if req.target.is_none() && matches!(origin, Origin::Dispatcher { .. }) {
                    req.target = default_target.map(str::to_string);
                }
                if replay(&ctx.img, start, &req, config.engine.replay_steps) {
                    chosen = Some((req, k));
                    break;
                }
                first.get_or_insert((req, k));
            }
            Err(_) => unsat += 1,
        }
    }
    let replayed = chosen.is_some();
    let (trigger, tree) = match chosen.or(first) {
        Some((req, k)) => {
            let tree = &res.paths[k].tree;
            (classify(req, tree), Some(tree.to_json()))
        }
        None => {
            let reason = if res.exhausted {
                "exploration caps reached before a path was found".to_string()
            } else if unsat > 0 {
                format!("all {unsat} paths were unsatisfiable")
            } else {
                "no feasible path from the start point".to_string()
            };
            (Trigger::Unreachable { reason }, None)
        }
    };
    let record = ServiceRecord {
        id: 0,
        binary: ctx.path.to_string(),
        endpoint: ep.clone(),
        category: ep.category,
        start,
        origin,
        trigger,
        replayed,
        exhausted: res.exhausted,
        tree,
    };
    (record, warnings)
}

pub fn analyze_binary(
    path: &str,
    data: &[u8],
    config: &Config,
    catalog: &ApiCatalog,
    wrappers: &WrapperMap,
    default_target: Option<String>,
) -> BinaryResult {
    let ctx = match prepare_binary(path, data, config, catalog, wrappers) {
        Ok(c) => c,
        Err(e) => return BinaryResult { records: vec![], warnings: vec![format!("not analyzed: {e}")] },
    };
    let mut warnings = ctx.warnings.clone();
    let mut trace_sets = Vec::new();
    let mut on_traces = BTreeSet::new();
    for ep in &ctx.end_points {
        match backward_trace(ep.site, &ctx.cfg, &ctx.cg, config.engine.trace_cap) {
            Ok(traces) => {
                on_traces.extend(traces.iter().flatten().copied());
                trace_sets.push((ep, traces));
            }
            Err(e) => warnings.push(format!("{path}: {e}")),
        }
    }
    let strings = config.network_strings();
    let scores: BTreeMap<u32, RequestScore> = on_traces
        .par_iter()
        .map(|&f| (f, score_request_processing(f, &ctx.cfg, &ctx.img, &strings, &config.triage.weights)))
        .collect();
    let mut tasks = Vec::new();
    for (ep, traces) in &trace_sets {
        if traces.is_empty() {
            warnings.push(format!("{path}: {:#x}: no root reaches the end point", ep.site));
            continue;
        }
        for ((start, origin), suffixes) in start_points(&ctx, traces, &scores, config.triage.score_threshold) {
            tasks.push((*ep, start, origin, suffixes));
        }
    }
    let results: Vec<(ServiceRecord, Vec<String>)> = tasks
        .into_par_iter()
        .map(|(ep, start, origin, suffixes)| {
            recover_service(&ctx, ep, start, origin, &suffixes, config, default_target.as_deref())
        })
        .collect();
    let mut records = Vec::new();
    for (r, w) in results {
        records.push(r);
        warnings.extend(w);
    }
    BinaryResult { records, warnings }
}
