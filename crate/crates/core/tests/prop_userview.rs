use std::collections::BTreeMap;

use ghosthunt_core::ingest::{FileClass, FileInventory};
use ghosthunt_core::userview::{extract_file, extract_requests_static, UserRequestSet};
use proptest::prelude::*;

const TARGETS: [&str; 6] = ["/goform/formSetWan", "/goform/formReboot", "apply.cgi", "/cgi-bin/upgrade.cgi", "status.asp", "/HNAP1/"];
const FIELDS: [&str; 5] = ["wan_ip", "mode", "ssid", "start_time", "cmd"];
const HANDLERS: [&str; 4] = ["getInfo", "getCfg", "wlanList", "sysUptime"];

#[derive(Debug, Clone)]
enum Fragment {
    Form { post: bool, target: usize, fields: Vec<usize> },
    Link(usize),
    ScriptSrc(usize),
    Tag { handler: usize, nested: Option<usize> },
    Commented(usize),
    Text(String),
}

fn fragment() -> impl Strategy<Value = Fragment> {
    prop_oneof![
        (any::<bool>(), 0..TARGETS.len(), prop::collection::vec(0..FIELDS.len(), 0..4))
            .prop_map(|(post, target, fields)| Fragment::Form { post, target, fields }),
        (0..TARGETS.len()).prop_map(Fragment::Link),
        (0..TARGETS.len()).prop_map(Fragment::ScriptSrc),
        (0..HANDLERS.len(), prop::option::of(0..HANDLERS.len())).prop_map(|(handler, nested)| Fragment::Tag { handler, nested }),
        (0..TARGETS.len()).prop_map(Fragment::Commented),
        "[a-zA-Z ]{0,20}".prop_map(Fragment::Text),
    ]
}

fn html(frags: &[Fragment]) -> String {
    let mut out = String::from("<html><body>\n");
    for f in frags {
        match f {
            Fragment::Form { post, target, fields } => {
                let method = if *post { "post" } else { "get" };
                out.push_str(&format!("<form method=\"{method}\" action=\"{}\">\n", TARGETS[*target]));
                for &i in fields {
                    out.push_str(&format!("  <input type=\"text\" name=\"{}\">\n", FIELDS[i]));
                }
                out.push_str("</form>\n");
            }
            Fragment::Link(t) => out.push_str(&format!("<a href=\"{}?{}=1\">x</a>\n", TARGETS[*t], FIELDS[*t % FIELDS.len()])),
            Fragment::ScriptSrc(t) => out.push_str(&format!("<script src=\"{}\"></script>\n", TARGETS[*t])),
            Fragment::Tag { handler, nested: Some(n) } => {
                out.push_str(&format!("<% {}({}()); %>\n", HANDLERS[*handler], HANDLERS[*n]))
            }
            Fragment::Tag { handler, nested: None } => out.push_str(&format!("<% {}(); %>\n", HANDLERS[*handler])),
            Fragment::Commented(t) => out.push_str(&format!("<!-- <a href=\"{}\">old</a> -->\n", TARGETS[*t])),
            Fragment::Text(s) => out.push_str(&format!("<p>{s}</p>\n")),
        }
    }
    out.push_str("</body></html>\n");
    out
}

fn script(frags: &[Fragment]) -> String {
    let mut out = String::from("function go(v) {\n");
    for f in frags {
        match f {
            Fragment::Form { post, target, fields } => {
                let method = if *post { "POST" } else { "GET" };
                let q: Vec<String> = fields.iter().map(|&i| format!("{}=", FIELDS[i])).collect();
                out.push_str(&format!("  ajax(\"{method}\", \"{}?{}\" + v);\n", TARGETS[*target], q.join("&")));
            }
            Fragment::Link(t) | Fragment::ScriptSrc(t) => out.push_str(&format!("  location.href = \"{}\";\n", TARGETS[*t])),
            Fragment::Commented(t) => out.push_str(&format!("  // go(\"{}\");\n", TARGETS[*t])),
            Fragment::Tag { .. } | Fragment::Text(_) => out.push_str("  v = v + 1;\n"),
        }
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone)]
struct WebFile {
    path: String,
    data: Vec<u8>,
}

fn web_file() -> impl Strategy<Value = WebFile> {
    let dirs = prop_oneof![Just("/www"), Just("/www/js"), Just("/www/adv"), Just("/etc")];
    (dirs, "[a-z]{1,6}", 0..5usize, prop::collection::vec(fragment(), 0..8)).prop_map(|(dir, stem, kind, frags)| {
        let (ext, data) = match kind {
            0 => ("html", html(&frags).into_bytes()),
            1 => ("asp", html(&frags).into_bytes()),
            2 => ("htm", html(&frags).into_bytes()),
            3 => ("js", script(&frags).into_bytes()),
            _ => ("html", vec![0xff, 0xfe, 0x00, 0x3c]),
        };
        WebFile { path: format!("{dir}/{stem}.{ext}"), data }
    })
}

fn files() -> impl Strategy<Value = (Vec<WebFile>, Vec<WebFile>)> {
    prop::collection::vec(web_file(), 0..12).prop_flat_map(|v| {
        let mut seen = std::collections::BTreeSet::new();
        let v: Vec<WebFile> = v.into_iter().filter(|f| seen.insert(f.path.clone())).collect();
        (Just(v.clone()), Just(v).prop_shuffle())
    })
}

fn inventory(files: &[WebFile]) -> FileInventory {
    FileInventory::from_files("/fw", files.iter().map(|f| (f.path.clone(), f.data.clone())))
}

const DOCROOT: &str = "/www";

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn extraction_is_order_independent_and_idempotent((ordered, shuffled) in files()) {
        let inv = inventory(&ordered);
        let (set, warnings) = extract_requests_static(&inv, Some(DOCROOT));
        let (again, _) = extract_requests_static(&inv, Some(DOCROOT));
        prop_assert_eq!(&set, &again);
        let (from_shuffled, w2) = extract_requests_static(&inventory(&shuffled), Some(DOCROOT));
        prop_assert_eq!(&set, &from_shuffled);
        prop_assert_eq!(&warnings, &w2);

        let mut merged = UserRequestSet::default();
        let mut per_file_counts: BTreeMap<String, usize> = BTreeMap::new();
        for f in &shuffled {
            let Some(e) = inv.entries.iter().find(|e| e.path == f.path) else { continue };
            let FileClass::WebInterface(ext) = &e.class else { continue };
            if !f.path.starts_with("/www/") {
                continue;
            }
            if let Ok(s) = extract_file(ext, &f.data, &f.path, DOCROOT) {
                for (h, n) in &s.handler_counts {
                    *per_file_counts.entry(h.clone()).or_default() += n;
                }
                merged.extend(s);
            }
        }
        prop_assert_eq!(&merged, &set);
        prop_assert_eq!(&per_file_counts, &set.handler_counts);

        let mut reinserted = set.clone();
        for r in set.iter() {
            reinserted.insert(r.clone());
        }
        prop_assert_eq!(&reinserted, &set);

        for r in set.iter() {
            prop_assert!(inv.entries.iter().any(|e| e.path == r.source), "{} not in inventory", r.source);
            prop_assert!(r.source.starts_with("/www/"));
            prop_assert!(!r.target.is_empty());
            prop_assert!(r.params.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

#[test]
fn generated_fragments_yield_requests() {
    let frags = [
        Fragment::Form { post: true, target: 0, fields: vec![0, 1] },
        Fragment::Tag { handler: 0, nested: Some(1) },
        Fragment::Commented(1),
    ];
    let files = [
        WebFile { path: "/www/a.asp".into(), data: html(&frags).into_bytes() },
        WebFile { path: "/www/js/b.js".into(), data: script(&frags).into_bytes() },
    ];
    let (set, _) = extract_requests_static(&inventory(&files), Some(DOCROOT));
    assert!(set.matches("/goform/formSetWan", &["mode", "wan_ip"]));
    assert!(!set.matches("/goform/formReboot", &[]));
    assert_eq!(set.handler_counts.get("getInfo"), Some(&1));
    assert_eq!(set.handler_counts.get("getCfg"), Some(&1));
}
