//! Loading and classifying an extracted firmware tree.
//!
//! Paths inside an inventory are virtual and rooted: a file at
//! `<root>/web/index.html` is recorded as `/web/index.html`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gsb::format::{FLAG_LIBRARY, MAGIC};
use crate::gsb::GsbImage;

pub const WEB_EXTENSIONS: &[&str] = &["html", "htm", "js", "php", "asp", "css", "cgi"];

pub const DEFAULT_NETWORK_STRINGS: &[&str] = &[
    "HTTP", "http://", "GET ", "POST ", "Content-Type", "Content-Length", "url", "URL", "soap", "SOAP", "query",
    "boundary", "User-Agent", "Cookie", "recv", "socket",
];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed tar archive at member `{member}`: {msg}")]
    Tar { member: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileClass {
    WebInterface(String),
    GsbExecutable,
    GsbLibrary,
    InitScript,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub class: FileClass,
    pub size_bytes: u64,
    #[serde(skip)]
    pub data: Vec<u8>,
}

impl FileEntry {
    pub fn new(path: &str, data: Vec<u8>) -> Self {
        let class = classify(path, &data);
        FileEntry { path: path.to_string(), class, size_bytes: data.len() as u64, data }
    }

    pub fn basename(&self) -> &str {
        basename(&self.path)
    }

    pub fn has_gsb_magic(&self) -> bool {
        self.data.starts_with(MAGIC)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileInventory {
    pub root_path: PathBuf,
    /// Sorted by path.
    pub entries: Vec<FileEntry>,
}

impl FileInventory {
    /// Build an inventory from in-memory files.
    pub fn from_files<P: AsRef<str>>(root: impl Into<PathBuf>, files: impl IntoIterator<Item = (P, Vec<u8>)>) -> Self {
        let mut entries: Vec<FileEntry> = files
            .into_iter()
            .map(|(p, d)| FileEntry::new(&normalize_virtual(p.as_ref()), d))
            .collect();
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        entries.dedup_by(|a, b| a.path == b.path);
        FileInventory { root_path: root.into(), entries }
    }

    pub fn get(&self, path: &str) -> Option<&FileEntry> {
        self.entries.binary_search_by(|e| e.path.as_str().cmp(path)).ok().map(|i| &self.entries[i])
    }

    pub fn web_files(&self) -> impl Iterator<Item = &FileEntry> {
        self.entries.iter().filter(|e| matches!(e.class, FileClass::WebInterface(_)))
    }
}

pub fn basename(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

fn extension(path: &str) -> Option<String> {
    let b = basename(path);
    let (stem, ext) = b.rsplit_once('.')?;
    (!stem.is_empty()).then(|| ext.to_ascii_lowercase())
}

fn normalize_virtual(p: &str) -> String {
    let parts: Vec<&str> = p.split('/').filter(|s| !s.is_empty() && *s != ".").collect();
    format!("/{}", parts.join("/"))
}

pub fn classify(path: &str, data: &[u8]) -> FileClass {
    if let Some(ext) = extension(path).filter(|e| WEB_EXTENSIONS.contains(&e.as_str())) {
        return FileClass::WebInterface(ext);
    }
    if data.starts_with(MAGIC) {
        let flags = data.get(4..8).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]])).unwrap_or(0);
        return if flags & FLAG_LIBRARY != 0 { FileClass::GsbLibrary } else { FileClass::GsbExecutable };
    }
    let dirs: Vec<&str> = path.split('/').collect();
    if basename(path) == "rcS" || dirs[..dirs.len().saturating_sub(1)].contains(&"init.d") {
        return FileClass::InitScript;
    }
    FileClass::Other
}

/// Whether a binary path denotes a CGI module.
pub fn is_cgi_path(path: &str) -> bool {
    extension(path).as_deref() == Some("cgi") || path.split('/').any(|c| c == "cgi-bin")
}

/// Load a directory tree or a tar archive.
pub fn load_firmware(path: &Path) -> Result<FileInventory, IngestError> {
    let io = |source| IngestError::Io { path: path.to_path_buf(), source };
    let meta = fs::metadata(path).map_err(io)?;
    let mut files = Vec::new();
    if meta.is_dir() {
        for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
            let entry = entry.map_err(|e| IngestError::Io {
                path: e.path().map(Path::to_path_buf).unwrap_or_else(|| path.to_path_buf()),
                source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(path).expect("walkdir yields children of root");
            let data = fs::read(entry.path()).map_err(|source| IngestError::Io { path: entry.path().to_path_buf(), source })?;
            let virt: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            files.push((virt.join("/"), data));
        }
    } else {
        let file = fs::File::open(path).map_err(io)?;
        files = read_tar(file)?;
    }
    Ok(FileInventory::from_files(path, files))
}

fn read_tar(reader: impl Read) -> Result<Vec<(String, Vec<u8>)>, IngestError> {
    let mut archive = tar::Archive::new(reader);
    let mut out = Vec::new();
    let mut last = String::from("<start of archive>");
    let entries = archive.entries().map_err(|e| IngestError::Tar { member: last.clone(), msg: e.to_string() })?;
    for entry in entries {
        let mut entry = entry.map_err(|e| IngestError::Tar { member: format!("after {last}"), msg: e.to_string() })?;
        let name = entry
            .path()
            .map(|p| p.to_string_lossy().into_owned())
            .map_err(|e| IngestError::Tar { member: format!("after {last}"), msg: e.to_string() })?;
        last = name.clone();
        if Path::new(&name).components().any(|c| matches!(c, Component::ParentDir)) {
            return Err(IngestError::Tar { member: name, msg: "path escapes the archive root".into() });
        }
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let mut data = Vec::new();
        entry
            .read_to_end(&mut data)
            .map_err(|e| IngestError::Tar { member: name.clone(), msg: e.to_string() })?;
        out.push((name, data));
    }
    Ok(out)
}

/// Directory whose subtree holds the most web interface files. The
/// filesystem root only qualifies when web files exist nowhere else.
pub fn locate_document_root(inv: &FileInventory) -> Option<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut any = false;
    for e in inv.web_files() {
        any = true;
        let parts: Vec<&str> = e.path.split('/').filter(|s| !s.is_empty()).collect();
        for depth in 1..parts.len() {
            *counts.entry(format!("/{}", parts[..depth].join("/"))).or_default() += 1;
        }
    }
    if !any {
        return None;
    }
    counts
        .into_iter()
        .min_by(|(pa, ca), (pb, cb)| cb.cmp(ca).then(pa.len().cmp(&pb.len())).then(pa.cmp(pb)))
        .map(|(p, _)| p)
        .or_else(|| Some("/".to_string()))
}

/// Whether `path` lies in the subtree rooted at `dir`.
pub fn under(dir: &str, path: &str) -> bool {
    dir == "/" || path == dir || path.strip_prefix(dir).is_some_and(|r| r.starts_with('/'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkStringSet {
    pub strings: Vec<String>,
}

impl Default for NetworkStringSet {
    fn default() -> Self {
        NetworkStringSet { strings: DEFAULT_NETWORK_STRINGS.iter().map(|s| s.to_string()).collect() }
    }
}

impl NetworkStringSet {
    pub fn new<S: Into<String>>(strings: impl IntoIterator<Item = S>) -> Self {
        NetworkStringSet { strings: strings.into_iter().map(Into::into).collect() }
    }

    /// Total case-sensitive substring occurrences in `hay`.
    pub fn count_in(&self, hay: &[u8]) -> usize {
        self.strings.iter().map(|s| count_occurrences(hay, s.as_bytes())).sum()
    }

    pub fn matches(&self, text: &str) -> bool {
        self.strings.iter().any(|s| text.contains(s.as_str()))
    }
}

fn count_occurrences(hay: &[u8], needle: &[u8]) -> usize {
    if needle.is_empty() || needle.len() > hay.len() {
        return 0;
    }
    hay.windows(needle.len()).filter(|w| *w == needle).count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceBinaryCandidate {
    pub path: String,
    pub network_string_count: usize,
    pub launched_at_init: bool,
    pub rank: usize,
}

/// Basenames launched by init scripts.
pub fn init_tokens(inv: &FileInventory) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for e in inv.entries.iter().filter(|e| e.class == FileClass::InitScript) {
        let text = String::from_utf8_lossy(&e.data);
        for tok in text.split(|c: char| c.is_whitespace() || c == ';') {
            let tok = basename(tok.trim_end_matches('&'));
            if !tok.is_empty() {
                out.insert(tok.to_string());
            }
        }
    }
    out
}

/// Rank executables for analysis. `.cgi` files carrying the GSB magic are
/// included even though their name classifies them as web files.
pub fn recognize_service_binaries(
    inv: &FileInventory,
    strings: &NetworkStringSet,
) -> (Vec<ServiceBinaryCandidate>, Vec<String>) {
    let launched = init_tokens(inv);
    let mut warnings = Vec::new();
    let mut out = Vec::new();
    for e in &inv.entries {
        let is_exec = e.class == FileClass::GsbExecutable
            || (matches!(&e.class, FileClass::WebInterface(x) if x == "cgi") && e.has_gsb_magic());
        if !is_exec {
            continue;
        }
        let img = match GsbImage::parse(&e.data) {
            Ok(img) if !img.is_library => img,
            Ok(_) => continue,
            Err(err) => {
                warnings.push(format!("{}: not analyzed: {err}", e.path));
                continue;
            }
        };
        let count = strings.count_in(&img.strtab) + strings.count_in(&img.data);
        out.push(ServiceBinaryCandidate {
            path: e.path.clone(),
            network_string_count: count,
            launched_at_init: launched.contains(e.basename()),
            rank: 0,
        });
    }
    out.sort_by(|a, b| {
        b.launched_at_init
            .cmp(&a.launched_at_init)
            .then(b.network_string_count.cmp(&a.network_string_count))
            .then(a.path.cmp(&b.path))
    });
    for (i, c) in out.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    (out, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsb::asm::assemble_text;

    fn exe(data_strings: &[&str]) -> Vec<u8> {
        let mut src = String::from(".entry m\nm: halt\n.data\n");
        for s in data_strings {
            src.push_str(&format!(".string \"{s}\"\n"));
        }
        assemble_text(&src).unwrap().to_bytes()
    }

    #[test]
    fn classes_follow_rules() {
        let inv = FileInventory::from_files(
            "/fw",
            [
                ("web/index.html", b"<html>".to_vec()),
                ("bin/boa", exe(&[])),
                ("etc/init.d/rcS", b"boa &".to_vec()),
                ("web/x.asp", exe(&[])),
                ("etc/passwd", b"root".to_vec()),
            ],
        );
        let class = |p: &str| inv.get(p).unwrap().class.clone();
        assert_eq!(class("/web/index.html"), FileClass::WebInterface("html".into()));
        assert_eq!(class("/bin/boa"), FileClass::GsbExecutable);
        assert_eq!(class("/etc/init.d/rcS"), FileClass::InitScript);
        assert_eq!(class("/web/x.asp"), FileClass::WebInterface("asp".into()));
        assert_eq!(class("/etc/passwd"), FileClass::Other);
    }

    #[test]
    fn docroot_uses_subtree_counts() {
        let inv = FileInventory::from_files(
            "/",
            [("a/1.html", vec![]), ("a/2.html", vec![]), ("a/b/3.html", vec![]), ("a/b/4.html", vec![])],
        );
        assert_eq!(locate_document_root(&inv).as_deref(), Some("/a"));
        assert_eq!(locate_document_root(&FileInventory::default()), None);
    }

    #[test]
    fn docroot_prefers_busiest_directory() {
        let mut files: Vec<(String, Vec<u8>)> = (0..168).map(|i| (format!("web/p{i}.asp"), vec![])).collect();
        files.extend((0..3).map(|i| (format!("web/h{i}.html"), vec![])));
        files.push(("web/cgi-bin/x.cgi".into(), vec![]));
        files.push(("etc/config".into(), vec![]));
        let inv = FileInventory::from_files("/", files);
        assert_eq!(locate_document_root(&inv).as_deref(), Some("/web"));
    }

    #[test]
    fn ranking_tiers_then_counts() {
        let set = NetworkStringSet::new(["HTTP/1.1", "GET", "POST"]);
        let inv = FileInventory::from_files(
            "/",
            [
                ("etc/init.d/rcS", b"/bin/httpd -d; /sbin/other&\n".to_vec()),
                ("bin/httpd", exe(&["HTTP/1.1", "GET", "POST"])),
                ("sbin/other", exe(&["GET", "GET", "POST", "POST", "HTTP/1.1"])),
                ("bin/quiet", exe(&["hello"])),
            ],
        );
        let (c, w) = recognize_service_binaries(&inv, &set);
        assert!(w.is_empty());
        let got: Vec<_> = c.iter().map(|c| (c.path.as_str(), c.network_string_count, c.launched_at_init, c.rank)).collect();
        assert_eq!(
            got,
            vec![("/sbin/other", 5, true, 1), ("/bin/httpd", 3, true, 2), ("/bin/quiet", 0, false, 3)]
        );
    }

    #[test]
    fn cgi_paths() {
        assert!(is_cgi_path("/www/cgi-bin/status"));
        assert!(is_cgi_path("/www/login.cgi"));
        assert!(!is_cgi_path("/bin/httpd"));
    }
}
