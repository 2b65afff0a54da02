use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Unknown,
}

impl Method {
    pub fn parse(s: &str) -> Method {
        match s.trim().to_ascii_uppercase().as_str() {
            "GET" => Method::Get,
            "POST" => Method::Post,
            _ => Method::Unknown,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Unknown => "UNKNOWN",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRequest {
    pub method: Method,
    pub target: String,
    pub params: Vec<String>,
    pub source: String,
}

impl UserRequest {
    pub fn new(method: Method, target: impl Into<String>, params: impl IntoIterator<Item = String>, source: &str) -> Self {
        let params: BTreeSet<String> = params.into_iter().filter(|p| !p.is_empty()).collect();
        UserRequest { method, target: target.into(), params: params.into_iter().collect(), source: source.to_string() }
    }

    /// Last path segment of the target; the target itself for handler names.
    pub fn handler_name(&self) -> &str {
        self.target.rsplit('/').next().unwrap_or(&self.target)
    }
}

/// Requests keyed by `(method, target)` plus server-page handler counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SetRepr", into = "SetRepr")]
pub struct UserRequestSet {
    requests: BTreeMap<(Method, String), UserRequest>,
    pub handler_counts: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct SetRepr {
    requests: Vec<UserRequest>,
    handler_counts: BTreeMap<String, usize>,
}

impl From<SetRepr> for UserRequestSet {
    fn from(r: SetRepr) -> Self {
        let mut s = UserRequestSet { handler_counts: r.handler_counts, ..Default::default() };
        for q in r.requests {
            s.insert(q);
        }
        s
    }
}

impl From<UserRequestSet> for SetRepr {
    fn from(s: UserRequestSet) -> Self {
        SetRepr { requests: s.requests.into_values().collect(), handler_counts: s.handler_counts }
    }
}

impl UserRequestSet {
    /// Insert, merging params into an existing entry with the same key.
    /// The lexicographically smallest source path is kept.
    pub fn insert(&mut self, req: UserRequest) {
        if req.target.is_empty() {
            return;
        }
        match self.requests.get_mut(&(req.method, req.target.clone())) {
            Some(old) => {
                let params: BTreeSet<String> = old.params.drain(..).chain(req.params).collect();
                old.params = params.into_iter().collect();
                if req.source < old.source {
                    old.source = req.source;
                }
            }
            None => {
                self.requests.insert((req.method, req.target.clone()), req);
            }
        }
    }

    pub fn count_handler(&mut self, name: &str, n: usize) {
        *self.handler_counts.entry(name.to_string()).or_default() += n;
    }

    pub fn extend(&mut self, other: UserRequestSet) {
        for r in other.requests.into_values() {
            self.insert(r);
        }
        for (h, n) in other.handler_counts {
            self.count_handler(&h, n);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserRequest> {
        self.requests.values()
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Whether some request reaches `target` offering every field in
    /// `required`. A bare handler name also matches URLs ending in it.
    pub fn matches(&self, target: &str, required: &[&str]) -> bool {
        let bare = !target.contains('/');
        self.iter().any(|r| {
            let same = r.target == target || (bare && r.handler_name() == target) || (!r.target.contains('/') && target.rsplit('/').next() == Some(r.target.as_str()));
            same && required.iter().all(|f| r.params.binary_search_by(|p| p.as_str().cmp(f)).is_ok())
        })
    }
}

#[derive(Deserialize)]
struct Imported {
    method: String,
    target: String,
    #[serde(default)]
    params: Vec<String>,
}

/// Parse externally captured requests: a JSON array of
/// `{method, target, params[]}`.
pub fn import_requests(json: &str, source: &str) -> Result<Vec<UserRequest>, serde_json::Error> {
    let items: Vec<Imported> = serde_json::from_str(json)?;
    Ok(items
        .into_iter()
        .map(|i| UserRequest::new(Method::parse(&i.method), i.target, i.params, source))
        .collect())
}

/// Normalize a URL found in `file_dir` (a docroot-relative directory such
/// as `/` or `/admin`). Query parameter names are split off. Returns
/// `None` for non-request URLs (fragments, `javascript:`, `mailto:` ...).
pub fn normalize_url(raw: &str, file_dir: &str) -> Option<(String, Vec<String>)> {
    let raw = raw.trim();
    let raw = raw.split('#').next().unwrap_or("");
    if raw.is_empty() {
        return None;
    }
    let (path, query) = match raw.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (raw, None),
    };
    let params = query
        .map(|q| {
            q.split('&')
                .filter_map(|kv| kv.split('=').next())
                .map(str::trim)
                .filter(|k| !k.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    let lower = path.to_ascii_lowercase();
    let target = if let Some(i) = lower.find("://") {
        let scheme = &lower[..i];
        if !scheme.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.')) {
            return None;
        }
        let rest = &path[i + 3..];
        let (host, p) = match rest.find('/') {
            Some(j) => (&rest[..j], &rest[j..]),
            None => (rest, "/"),
        };
        format!("{scheme}://{}{}", host.to_ascii_lowercase(), p)
    } else if let Some(p) = path.strip_prefix("//") {
        let (host, p) = match p.find('/') {
            Some(j) => (&p[..j], &p[j..]),
            None => (p, "/"),
        };
        format!("//{}{}", host.to_ascii_lowercase(), p)
    } else if lower.contains(':') && !path.contains('/') || ["javascript:", "mailto:", "data:", "tel:"].iter().any(|s| lower.starts_with(s)) {
        return None;
    } else if path.is_empty() {
        return None;
    } else if path.starts_with('/') {
        resolve_dots(path)
    } else {
        resolve_dots(&format!("{}/{}", file_dir.trim_end_matches('/'), path))
    };
    Some((target, params))
}

fn resolve_dots(path: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for seg in path.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                out.pop();
            }
            s => out.push(s),
        }
    }
    let trailing = path.ends_with('/') && !out.is_empty();
    format!("/{}{}", out.join("/"), if trailing { "/" } else { "" })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_url("a.asp?x=1&y", "/adm"), Some(("/adm/a.asp".into(), vec!["x".into(), "y".into()])));
        assert_eq!(normalize_url("../b.cgi", "/adm/sub"), Some(("/adm/b.cgi".into(), vec![])));
        assert_eq!(normalize_url("HTTP://Host.Example/Path", "/"), Some(("http://host.example/Path".into(), vec![])));
        assert_eq!(normalize_url("javascript:void(0)", "/"), None);
        assert_eq!(normalize_url("#top", "/"), None);
    }

    #[test]
    fn merge_by_key() {
        let mut s = UserRequestSet::default();
        s.insert(UserRequest::new(Method::Post, "/goform/x", ["a".to_string()], "/b.html"));
        s.insert(UserRequest::new(Method::Post, "/goform/x", ["b".to_string()], "/a.html"));
        assert_eq!(s.len(), 1);
        let r = s.iter().next().unwrap();
        assert_eq!(r.params, ["a", "b"]);
        assert_eq!(r.source, "/a.html");
        assert!(s.matches("/goform/x", &["a"]));
        assert!(s.matches("x", &["b"]));
        assert!(!s.matches("/goform/x", &["c"]));
    }

    #[test]
    fn import_format() {
        let r = import_requests(r#"[{"method":"post","target":"/goform/y","params":["k"]}]"#, "import").unwrap();
        assert_eq!(r[0].method, Method::Post);
        assert_eq!(r[0].params, ["k"]);
    }
}
