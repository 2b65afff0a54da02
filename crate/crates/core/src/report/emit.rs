use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use crate::endpoints::ServiceCategory;
use crate::engine::tree::tree_json_to_dot;

use super::{HiddenServiceReport, ServiceRecord, Trigger};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown report format `{0}` (expected json, text or dot)")]
pub struct UsageError(pub String);

impl FromStr for ReportFormat {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            "dot" => Ok(ReportFormat::Dot),
            other => Err(UsageError(other.to_string())),
        }
    }
}

pub fn emit_report(report: &HiddenServiceReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Text => text(report).into_bytes(),
        ReportFormat::Dot => dot(report).into_bytes(),
    }
}

fn describe(s: &ServiceRecord) -> String {
    let mut out = format!("{} {:#x} {}", s.binary, s.endpoint.site, s.endpoint.api);
    if let Some(w) = &s.endpoint.via_wrapper {
        let _ = write!(out, " via {w}");
    }
    match &s.trigger {
        Trigger::Request(r) => {
            if let Some(t) = &r.target {
                let _ = write!(out, " target={t}");
            }
            let body = r.body();
            if !body.is_empty() {
                let _ = write!(out, " request={body}");
            }
        }
        Trigger::EnvironmentCondition { constraints } => {
            let _ = write!(out, " when {}", constraints.join(" && "));
        }
        Trigger::Unconditional => out.push_str(" unconditional"),
        Trigger::Unreachable { reason } => {
            let _ = write!(out, " ({reason})");
        }
    }
    out
}

fn text(r: &HiddenServiceReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "firmware: {}", r.firmware);
    let _ = writeln!(
        out,
        "services: {}  hidden: {}  unconfirmed: {}  user requests: {}",
        r.services.len(),
        r.hidden.len(),
        r.unconfirmed.len(),
        r.user_requests.len()
    );
    let hidden = r.hidden_ids();
    let mut per: BTreeMap<ServiceCategory, (usize, usize)> = ServiceCategory::ALL.iter().map(|c| (*c, (0, 0))).collect();
    for s in &r.services {
        let e = per.entry(s.category).or_default();
        e.0 += 1;
        if hidden.contains(&s.id) {
            e.1 += 1;
        }
    }
    for (c, (n, h)) in per {
        let _ = writeln!(out, "  {c}: {n} services, {h} hidden");
    }
    for h in &r.hidden {
        if let Some(s) = r.service(h.service) {
            let _ = writeln!(out, "HIDDEN [{}] {} {}: {}", s.category, h.label, describe(s), h.reason);
        }
    }
    for u in &r.unconfirmed {
        if let Some(s) = r.service(u.service) {
            let _ = writeln!(out, "UNCONFIRMED [{}] {}: {}", s.category, describe(s), u.reason);
        }
    }
    for s in r.services.iter().filter(|s| !hidden.contains(&s.id)) {
        if !r.unconfirmed.iter().any(|u| u.service == s.id) {
            let _ = writeln!(out, "VISIBLE [{}] {}", s.category, describe(s));
        }
    }
    if r.exhausted {
        let _ = writeln!(out, "note: exploration caps were reached for some end points");
    }
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

fn dot(r: &HiddenServiceReport) -> String {
    let mut out = String::new();
    for h in &r.hidden {
        let Some(s) = r.service(h.service) else { continue };
        if let Some(tree) = &s.tree {
            let name = format!("service_{}_{:x}", s.id, s.endpoint.site);
            out.push_str(&tree_json_to_dot(tree, &name));
        }
    }
    out
}
