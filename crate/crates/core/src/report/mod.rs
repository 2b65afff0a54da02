//! Service records, the hidden-service diff and report output.

mod emit;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::endpoints::{EndPoint, ServiceCategory};
use crate::engine::{FieldValue, RecoveredRequest, TreeJson};
use crate::userview::UserRequestSet;

pub use emit::{emit_report, ReportFormat, UsageError};

/// How the start point of a service was found.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Origin {
    Binder { subroutine: String, name: String },
    FunctionTable {
        #[serde(serialize_with = "crate::engine::solve::hex", deserialize_with = "crate::engine::solve::unhex")]
        base: u32,
        name: String,
    },
    Dispatcher { function: String },
}

impl Origin {
    pub fn target_hint(&self) -> Option<&str> {
        match self {
            Origin::Binder { name, .. } | Origin::FunctionTable { name, .. } => Some(name),
            Origin::Dispatcher { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trigger {
    Request(RecoveredRequest),
    /// Guarded only by non-request state (globals, files, call results).
    EnvironmentCondition { constraints: Vec<String> },
    /// Reached on every run of the start point; no request involved.
    Unconditional,
    /// No path to the end point was found.
    Unreachable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub id: usize,
    pub binary: String,
    pub endpoint: EndPoint,
    pub category: ServiceCategory,
    #[serde(serialize_with = "crate::engine::solve::hex", deserialize_with = "crate::engine::solve::unhex")]
    pub start: u32,
    pub origin: Origin,
    pub trigger: Trigger,
    /// Whether concrete replay of the trigger reached the end point.
    pub replayed: bool,
    pub exhausted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeJson>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueLabel {
    Backdoor,
    LeftoverDebugging,
    UnmatchedInterface,
}

impl fmt::Display for IssueLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IssueLabel::Backdoor => "backdoor",
            IssueLabel::LeftoverDebugging => "leftover-debugging",
            IssueLabel::UnmatchedInterface => "unmatched-interface",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenEntry {
    pub service: usize,
    pub label: IssueLabel,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnconfirmedEntry {
    pub service: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenServiceReport {
    pub firmware: String,
    pub services: Vec<ServiceRecord>,
    pub hidden: Vec<HiddenEntry>,
    pub unconfirmed: Vec<UnconfirmedEntry>,
    pub user_requests: UserRequestSet,
    pub warnings: Vec<String>,
    pub exhausted: bool,
    pub config: Config,
}

impl HiddenServiceReport {
    pub fn service(&self, id: usize) -> Option<&ServiceRecord> {
        self.services.iter().find(|s| s.id == id)
    }

    pub fn hidden_ids(&self) -> BTreeSet<usize> {
        self.hidden.iter().map(|h| h.service).collect()
    }
}

const DEBUG_WORDS: &[&str] = &["debug", "test", "telnet", "diag", "shell", "console", "dbg"];

const CREDENTIAL_WORDS: &[&str] = &["pass", "pwd", "key", "token", "secret", "auth"];

/// A required value that reads like a password rather than a menu choice:
/// a credential-named field, or a literal mixing letters and digits.
fn secret_like(field: &str, value: &str) -> bool {
    let f = field.to_ascii_lowercase();
    CREDENTIAL_WORDS.iter().any(|w| f.contains(w))
        || (value.len() >= 6
            && value.bytes().any(|b| b.is_ascii_digit())
            && value.bytes().any(|b| b.is_ascii_alphabetic()))
}

/// Label a hidden service by what its trigger looks like.
pub fn issue_label(rec: &ServiceRecord) -> IssueLabel {
    let mut words: Vec<String> = Vec::new();
    if let Trigger::Request(r) = &rec.trigger {
        words.extend(r.target.iter().cloned());
        for (k, v) in &r.fields {
            words.push(k.clone());
            if let FieldValue::Equals { value } | FieldValue::Prefix { value } = v {
                words.push(value.clone());
            }
        }
    }
    if let Origin::Binder { name, .. } | Origin::FunctionTable { name, .. } = &rec.origin {
        words.push(name.clone());
    }
    if words.iter().any(|w| {
        let w = w.to_ascii_lowercase();
        DEBUG_WORDS.iter().any(|d| w.contains(d))
    }) {
        return IssueLabel::LeftoverDebugging;
    }
    let magic = matches!(&rec.trigger, Trigger::Request(r) if r.fields.iter().any(|(k, v)| match v {
        FieldValue::Equals { value } => secret_like(k, value),
        _ => false,
    }));
    let dangerous = matches!(rec.category, ServiceCategory::SystemCommandExecution | ServiceCategory::NetworkActivity);
    if dangerous && (magic || matches!(rec.trigger, Trigger::EnvironmentCondition { .. })) {
        IssueLabel::Backdoor
    } else {
        IssueLabel::UnmatchedInterface
    }
}

/// Split services into hidden and unconfirmed against the user view.
pub fn diff_hidden_services(services: Vec<ServiceRecord>, userset: UserRequestSet) -> HiddenServiceReport {
    let mut hidden = Vec::new();
    let mut unconfirmed = Vec::new();
    for s in &services {
        match &s.trigger {
            Trigger::Unreachable { reason } => unconfirmed.push(UnconfirmedEntry { service: s.id, reason: reason.clone() }),
            Trigger::Unconditional => {}
            Trigger::EnvironmentCondition { .. } => hidden.push(HiddenEntry {
                service: s.id,
                label: issue_label(s),
                reason: "guarded by non-request state".into(),
            }),
            Trigger::Request(r) => {
                let required = r.required_fields();
                let matched = match &r.target {
                    Some(t) => userset.matches(t, &required),
                    None => userset.iter().any(|u| required.iter().all(|f| u.params.iter().any(|p| p == f))),
                };
                if !matched {
                    let reason = match &r.target {
                        Some(t) if required.is_empty() => format!("no user request targets {t}"),
                        Some(t) => format!("no user request targets {t} with fields {}", required.join(",")),
                        None => format!("no user request carries fields {}", required.join(",")),
                    };
                    hidden.push(HiddenEntry { service: s.id, label: issue_label(s), reason });
                }
            }
        }
    }
    HiddenServiceReport {
        firmware: String::new(),
        services,
        hidden,
        unconfirmed,
        user_requests: userset,
        warnings: Vec::new(),
        exhausted: false,
        config: Config::default(),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::endpoints::EndPointContext;
    use crate::userview::{Method, UserRequest};

    pub(crate) fn record(id: usize, target: &str, fields: &[(&str, &str)]) -> ServiceRecord {
        let fields: BTreeMap<String, FieldValue> =
            fields.iter().map(|(k, v)| (k.to_string(), FieldValue::Equals { value: v.to_string() })).collect();
        ServiceRecord {
            id,
            binary: "/bin/httpd".into(),
            endpoint: EndPoint {
                site: 0x1000 + id as u32 * 8,
                api: "system".into(),
                category: ServiceCategory::SystemCommandExecution,
                context: EndPointContext::default(),
                function: 0x1000,
                via_wrapper: None,
            },
            category: ServiceCategory::SystemCommandExecution,
            start: 0x1000,
            origin: Origin::Dispatcher { function: "sub_1000".into() },
            trigger: Trigger::Request(RecoveredRequest {
                target: Some(target.into()),
                fields,
                args: BTreeMap::new(),
                path: vec![0x1000],
                endpoint: 0x1000 + id as u32 * 8,
            }),
            replayed: true,
            exhausted: false,
            tree: None,
        }
    }

    #[test]
    fn unreferenced_handler_is_hidden() {
        let r = diff_hidden_services(vec![record(0, "formSetHNAP11", &[])], UserRequestSet::default());
        assert_eq!(r.hidden.len(), 1);
    }

    #[test]
    fn matching_form_hides_nothing() {
        let mut u = UserRequestSet::default();
        u.insert(UserRequest::new(Method::Post, "/goform/formEasySetupWizard", ["ssid".to_string()], "/a.html"));
        let r = diff_hidden_services(vec![record(0, "/goform/formEasySetupWizard", &[("ssid", "x")])], u);
        assert!(r.hidden.is_empty());
    }

    #[test]
    fn missing_param_keeps_it_hidden() {
        let mut u = UserRequestSet::default();
        u.insert(UserRequest::new(Method::Post, "/goform/x", [], "/a.html"));
        let r = diff_hidden_services(vec![record(0, "/goform/x", &[("cmd", "on")])], u);
        assert_eq!(r.hidden.len(), 1);
    }

    #[test]
    fn zero_services() {
        let r = diff_hidden_services(vec![], UserRequestSet::default());
        assert!(r.services.is_empty() && r.hidden.is_empty());
    }

    #[test]
    fn labels() {
        assert_eq!(issue_label(&record(0, "/goform/telnetd", &[])), IssueLabel::LeftoverDebugging);
        assert_eq!(issue_label(&record(0, "/goform/x", &[("key", "s3cr3t")])), IssueLabel::Backdoor);
        assert_eq!(issue_label(&record(0, "/goform/x", &[])), IssueLabel::UnmatchedInterface);
        assert_eq!(issue_label(&record(0, "/goform/x", &[("action", "lan")])), IssueLabel::UnmatchedInterface);
        assert_eq!(issue_label(&record(0, "/goform/x", &[("action", "x9k2m7q")])), IssueLabel::Backdoor);
    }
}
