//! Requests a normal user can issue, reconstructed from web interface files.

pub mod html;
pub mod request;
pub mod script;
pub mod serverpage;

use rayon::prelude::*;

use crate::ingest::{under, FileClass, FileInventory};

pub use html::parse_html_forms;
pub use request::{import_requests, normalize_url, Method, UserRequest, UserRequestSet};
pub use script::parse_script_requests;
pub use serverpage::{parse_serverpage_invocations, ServerPageCalls};

/// Path of `path` relative to `docroot`, with a leading `/`.
pub fn docroot_relative(docroot: &str, path: &str) -> String {
    if docroot == "/" {
        return path.to_string();
    }
    match path.strip_prefix(docroot) {
        Some(r) if r.starts_with('/') => r.to_string(),
        _ => path.to_string(),
    }
}

/// Requests of one web file, sourced at its inventory path.
pub fn extract_file(ext: &str, bytes: &[u8], path: &str, docroot: &str) -> Result<UserRequestSet, String> {
    if std::str::from_utf8(bytes).is_err() {
        return Err(format!("{path}: not UTF-8 text, skipped"));
    }
    let rel = docroot_relative(docroot, path);
    let mut set = UserRequestSet::default();
    let mut reqs = Vec::new();
    let mut warnings = Vec::new();
    match ext {
        "html" | "htm" | "asp" | "php" => {
            reqs.extend(parse_html_forms(bytes, &rel));
            let sp = parse_serverpage_invocations(bytes, &rel);
            reqs.extend(sp.requests);
            for (h, n) in sp.counts {
                set.count_handler(&h, n);
            }
            warnings.extend(sp.warnings);
        }
        "js" => reqs.extend(parse_script_requests(bytes, &rel)),
        _ => {}
    }
    for mut r in reqs {
        r.source = path.to_string();
        set.insert(r);
    }
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(set)
}

/// Union of the requests of every web file under `docroot`.
pub fn extract_requests_static(inv: &FileInventory, docroot: Option<&str>) -> (UserRequestSet, Vec<String>) {
    let Some(root) = docroot else {
        return (UserRequestSet::default(), Vec::new());
    };
    let mut files: Vec<_> = inv
        .entries
        .iter()
        .filter(|e| under(root, &e.path))
        .filter_map(|e| match &e.class {
            FileClass::WebInterface(ext) => Some((ext.as_str(), e)),
            _ => None,
        })
        .collect();
    files.sort_by(|a, b| a.1.path.cmp(&b.1.path));
    let per_file: Vec<Result<UserRequestSet, String>> =
        files.par_iter().map(|(ext, e)| extract_file(ext, &e.data, &e.path, root)).collect();
    let mut set = UserRequestSet::default();
    let mut warnings = Vec::new();
    for r in per_file {
        match r {
            Ok(s) => set.extend(s),
            Err(w) => warnings.push(w),
        }
    }
    (set, warnings)
}
