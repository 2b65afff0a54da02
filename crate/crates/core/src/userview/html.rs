use super::request::{normalize_url, Method, UserRequest};
use super::script::parse_script_requests;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Tag {
    pub name: String,
    pub closing: bool,
    pub attrs: Vec<(String, String)>,
}

impl Tag {
    pub fn attr(&self, k: &str) -> Option<&str> {
        self.attrs.iter().find(|(n, _)| n == k).map(|(_, v)| v.as_str())
    }
}

pub(crate) enum Piece<'a> {
    Tag(Tag),
    Script(&'a str),
}

/// Tolerant tag scanner. Comments, text and server-side blocks are
/// skipped; the contents of `<script>` elements are kept.
pub(crate) fn scan(text: &str) -> Vec<Piece<'_>> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] != b'<' {
            i += 1;
            continue;
        }
        let skip_to = |pat: &str, from: usize| text[from..].find(pat).map(|k| from + k + pat.len()).unwrap_or(b.len());
        if text[i..].starts_with("<!--") {
            i = skip_to("-->", i + 4);
            continue;
        }
        if text[i..].starts_with("<%") {
            i = skip_to("%>", i + 2);
            continue;
        }
        let Some((tag, end)) = parse_tag(text, i) else {
            i += 1;
            continue;
        };
        i = end;
        let is_script = tag.name == "script" && !tag.closing;
        out.push(Piece::Tag(tag));
        if is_script {
            let lower = text[i..].to_ascii_lowercase();
            let close = lower.find("</script").map(|k| i + k).unwrap_or(b.len());
            out.push(Piece::Script(&text[i..close]));
            i = close;
        }
    }
    out
}

fn parse_tag(text: &str, start: usize) -> Option<(Tag, usize)> {
    let b = text.as_bytes();
    let mut i = start + 1;
    let closing = b.get(i) == Some(&b'/');
    if closing {
        i += 1;
    }
    let name_start = i;
    while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'-' || b[i] == b':') {
        i += 1;
    }
    if i == name_start {
        return None;
    }
    let name = text[name_start..i].to_ascii_lowercase();
    let mut attrs = Vec::new();
    loop {
        while i < b.len() && (b[i].is_ascii_whitespace() || b[i] == b'/') {
            i += 1;
        }
        if i >= b.len() {
            return Some((Tag { name, closing, attrs }, i));
        }
        if b[i] == b'>' {
            return Some((Tag { name, closing, attrs }, i + 1));
        }
        let k0 = i;
        while i < b.len() && !b[i].is_ascii_whitespace() && !matches!(b[i], b'=' | b'>' | b'/') {
            i += 1;
        }
        if i == k0 {
            i += 1;
            continue;
        }
        let key = text[k0..i].to_ascii_lowercase();
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if b.get(i) == Some(&b'=') {
            i += 1;
            while i < b.len() && b[i].is_ascii_whitespace() {
                i += 1;
            }
            match b.get(i) {
                Some(&q @ (b'"' | b'\'')) => {
                    let end = text[i + 1..].find(q as char).map(|k| i + 1 + k).unwrap_or(b.len());
                    value = text[i + 1..end].to_string();
                    i = (end + 1).min(b.len());
                }
                _ => {
                    let v0 = i;
                    while i < b.len() && !b[i].is_ascii_whitespace() && b[i] != b'>' {
                        i += 1;
                    }
                    value = text[v0..i].to_string();
                }
            }
        }
        attrs.push((key, value));
    }
}

/// Forms, links and inline script requests of an HTML-like file.
/// `file` is the docroot-relative path of the file.
pub fn parse_html_forms(bytes: &[u8], file: &str) -> Vec<UserRequest> {
    let text = String::from_utf8_lossy(bytes);
    let dir = file.rsplit_once('/').map(|(d, _)| if d.is_empty() { "/" } else { d }).unwrap_or("/");
    let mut out = Vec::new();
    let mut form: Option<(Method, String, Vec<String>)> = None;
    let flush = |form: &mut Option<(Method, String, Vec<String>)>, out: &mut Vec<UserRequest>| {
        if let Some((m, t, p)) = form.take() {
            out.push(UserRequest::new(m, t, p, file));
        }
    };
    for piece in scan(&text) {
        let tag = match piece {
            Piece::Script(t) => {
                out.extend(parse_script_requests(t.as_bytes(), file));
                continue;
            }
            Piece::Tag(t) => t,
        };
        match (tag.name.as_str(), tag.closing) {
            ("form", false) => {
                flush(&mut form, &mut out);
                let action = tag.attr("action").filter(|a| !a.trim().is_empty()).unwrap_or(file);
                let method = Method::parse(tag.attr("method").unwrap_or("get"));
                let method = if method == Method::Unknown { Method::Get } else { method };
                if let Some((t, q)) = normalize_url(action, dir) {
                    form = Some((method, t, q));
                }
            }
            ("form", true) => flush(&mut form, &mut out),
            ("input" | "select" | "textarea" | "button", false) => {
                if let (Some(f), Some(n)) = (form.as_mut(), tag.attr("name")) {
                    f.2.push(n.to_string());
                }
            }
            _ => {}
        }
        if tag.closing {
            continue;
        }
        for key in ["href", "src"] {
            if let Some((t, q)) = tag.attr(key).and_then(|u| normalize_url(u, dir)) {
                out.push(UserRequest::new(Method::Get, t, q, file));
            }
        }
    }
    flush(&mut form, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn post_form_with_input() {
        let r = parse_html_forms(
            br#"<form action="/goform/formEasySetupWizard" method="post"><input name="ssid"></form>"#,
            "/index.html",
        );
        assert_eq!(r, vec![UserRequest::new(Method::Post, "/goform/formEasySetupWizard", ["ssid".to_string()], "/index.html")]);
    }

    #[test]
    fn no_tags() {
        assert!(parse_html_forms(b"plain text only", "/a.html").is_empty());
    }

    #[test]
    fn link_is_get() {
        let r = parse_html_forms(b"<a href=/version.txt>v</a>", "/a.html");
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].method, r[0].target.as_str()), (Method::Get, "/version.txt"));
    }

    #[test]
    fn unclosed_form_and_odd_quoting() {
        let r = parse_html_forms(b"<FORM ACTION='set.cgi' METHOD=Post><INPUT NAME='a'><select name=b>", "/adm/x.htm");
        assert_eq!(r[0].target, "/adm/set.cgi");
        assert_eq!(r[0].params, ["a", "b"]);
    }

    #[test]
    fn commented_forms_are_ignored() {
        assert!(parse_html_forms(b"<!-- <form action=/hidden></form> -->", "/a.html").is_empty());
    }
}
