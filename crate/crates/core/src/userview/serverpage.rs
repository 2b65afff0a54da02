use std::collections::BTreeMap;

use super::request::{Method, UserRequest};

const KEYWORDS: &[&str] = &["if", "while", "for", "switch", "return", "function", "catch", "with", "sizeof", "typeof"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerPageCalls {
    pub requests: Vec<UserRequest>,
    pub counts: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

/// Identifiers called inside `<% ... %>` blocks, one handler request per
/// distinct name, with per-name invocation counts.
pub fn parse_serverpage_invocations(bytes: &[u8], file: &str) -> ServerPageCalls {
    let text = String::from_utf8_lossy(bytes);
    let mut out = ServerPageCalls::default();
    let mut rest: &str = &text;
    while let Some(open) = rest.find("<%") {
        let body_start = open + 2;
        let (body, next) = match rest[body_start..].find("%>") {
            Some(k) => (&rest[body_start..body_start + k], &rest[body_start + k + 2..]),
            None => {
                out.warnings.push(format!("{file}: unterminated server tag"));
                (&rest[body_start..], "")
            }
        };
        for name in calls(body) {
            *out.counts.entry(name).or_default() += 1;
        }
        rest = next;
    }
    out.requests = out.counts.keys().map(|n| UserRequest::new(Method::Unknown, n.clone(), [], file)).collect();
    out
}

fn calls(body: &str) -> Vec<String> {
    let b = body.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            q @ (b'"' | b'\'') => {
                i += 1;
                while i < b.len() && b[i] != q {
                    i += if b[i] == b'\\' { 2 } else { 1 };
                }
                i += 1;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let s = i;
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                let member = s > 0 && b[..s].iter().rev().find(|c| !c.is_ascii_whitespace()) == Some(&b'.');
                let mut j = i;
                while j < b.len() && b[j].is_ascii_whitespace() {
                    j += 1;
                }
                let name = &body[s..i];
                if b.get(j) == Some(&b'(') && !member && !KEYWORDS.contains(&name) {
                    out.push(name.to_string());
                }
            }
            _ => i += 1,
        }
    }
    out
}
