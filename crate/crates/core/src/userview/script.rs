use super::request::{normalize_url, Method, UserRequest};

/// String literals of a script in source order, each with the index of
/// the statement it belongs to.
fn literals(text: &str) -> Vec<(usize, String)> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut stmt = 0;
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b';' | b'\n' | b'{' | b'}' => {
                if b[i] != b'\n' || !continues(b, i) {
                    stmt += 1;
                }
                i += 1;
            }
            b'/' if b.get(i + 1) == Some(&b'/') => {
                while i < b.len() && b[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if b.get(i + 1) == Some(&b'*') => {
                i = text[i + 2..].find("*/").map(|k| i + 4 + k).unwrap_or(b.len());
            }
            q @ (b'"' | b'\'' | b'`') => {
                let mut s = Vec::new();
                i += 1;
                while i < b.len() && b[i] != q {
                    if b[i] == b'\\' && i + 1 < b.len() {
                        i += 1;
                    }
                    if b[i] == b'\n' && q != b'`' {
                        break;
                    }
                    s.push(b[i]);
                    i += 1;
                }
                i += 1;
                out.push((stmt, String::from_utf8_lossy(&s).into_owned()));
            }
            _ => i += 1,
        }
    }
    out
}

/// A newline inside an open parenthesis does not end a statement.
fn continues(b: &[u8], nl: usize) -> bool {
    let line_start = b[..nl].iter().rposition(|&c| c == b'\n').map(|k| k + 1).unwrap_or(0);
    let line = &b[line_start..nl];
    let opens = line.iter().filter(|&&c| c == b'(').count();
    let closes = line.iter().filter(|&&c| c == b')').count();
    opens > closes || line.last().is_some_and(|c| matches!(c, b',' | b'+'))
}

pub fn url_shaped(s: &str) -> bool {
    !s.is_empty()
        && !s.contains(char::is_whitespace)
        && (s.starts_with('/') || s.contains(".asp") || s.contains(".cgi") || s.contains("goform"))
}

/// URL-shaped string literals of a script. A GET/POST literal earlier in
/// the same statement sets the method.
pub fn parse_script_requests(bytes: &[u8], file: &str) -> Vec<UserRequest> {
    let text = String::from_utf8_lossy(bytes);
    let dir = file.rsplit_once('/').map(|(d, _)| if d.is_empty() { "/" } else { d }).unwrap_or("/");
    let lits = literals(&text);
    let mut out = Vec::new();
    for (k, (stmt, s)) in lits.iter().enumerate() {
        if !url_shaped(s) {
            continue;
        }
        let method = lits[..k]
            .iter()
            .rev()
            .take_while(|(st, _)| st == stmt)
            .find_map(|(_, m)| match Method::parse(m) {
                Method::Unknown => None,
                m => Some(m),
            })
            .unwrap_or(Method::Get);
        if let Some((t, q)) = normalize_url(s, dir) {
            out.push(UserRequest::new(method, t, q, file));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xhr_open_sets_method() {
        let r = parse_script_requests(br#"var x = new XMLHttpRequest(); xhr.open("POST","/goform/formWlSiteSurvey");"#, "/a.js");
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].method, r[0].target.as_str()), (Method::Post, "/goform/formWlSiteSurvey"));
    }

    #[test]
    fn no_literals() {
        assert!(parse_script_requests(b"var a = 1 + 2;", "/a.js").is_empty());
    }

    #[test]
    fn plain_asset_name_is_not_a_request() {
        assert!(parse_script_requests(br#"load("style.css");"#, "/a.js").is_empty());
    }

    #[test]
    fn method_does_not_leak_across_statements() {
        let r = parse_script_requests(br#"m = "POST"; go("/x.asp?a=1");"#, "/a.js");
        assert_eq!((r[0].method, r[0].params.clone()), (Method::Get, vec!["a".to_string()]));
    }

    #[test]
    fn comments_are_skipped() {
        assert!(parse_script_requests(b"// go(\"/hidden.asp\")\n/* \"/also.cgi\" */", "/a.js").is_empty());
    }
}
