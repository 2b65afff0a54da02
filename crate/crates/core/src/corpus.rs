//! Deterministic synthetic firmware used by the acceptance suite, the CLI
//! tests and the README walkthrough.
//!
//! Every generator returns the ground truth it planted (end-point sites,
//! the fields a request must carry) next to the image or file tree.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gsb::asm::Assembler;
use crate::gsb::isa::{Instruction, RA, SP};
use crate::gsb::GsbImage;
use crate::ingest::FileInventory;

const FRAME: i32 = 16;
const R0: u8 = 0;
const REQ: u8 = 6;

/// A file tree as `(path, bytes)` pairs with absolute virtual paths.
#[derive(Debug, Clone, Default)]
pub struct Tree {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Tree {
    pub fn add(&mut self, path: &str, data: impl Into<Vec<u8>>) -> &mut Self {
        self.files.insert(path.to_string(), data.into());
        self
    }

    pub fn merge(&mut self, other: Tree) -> &mut Self {
        self.files.extend(other.files);
        self
    }

    pub fn inventory(&self) -> FileInventory {
        FileInventory::from_files("/corpus", self.files.iter().map(|(p, d)| (p.as_str(), d.clone())))
    }

    /// Materialize under `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        for (p, d) in &self.files {
            let path = dir.join(p.trim_start_matches('/'));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, d)?;
        }
        Ok(())
    }
}

/// String literals placed in the data section on first use.
struct Lits {
    at: BTreeMap<String, u32>,
}

impl Lits {
    fn new() -> Self {
        Lits { at: BTreeMap::new() }
    }

    fn get(&mut self, a: &mut Assembler, s: &str) -> i32 {
        if let Some(&addr) = self.at.get(s) {
            return addr as i32;
        }
        let addr = a.string(s);
        self.at.insert(s.to_string(), addr);
        addr as i32
    }
}

fn enter(a: &mut Assembler) {
    a.prologue();
    a.movi(R0, FRAME);
    a.emit(Instruction::sub(SP, SP, R0));
}

fn leave(a: &mut Assembler) {
    a.movi(R0, FRAME);
    a.emit(Instruction::add(SP, SP, R0));
    a.emit(Instruction::load(RA, SP, -8));
    a.emit(Instruction::ret());
}

/// `websGetVar(req, key)` then branch to `fail` unless the result compares
/// equal (or, with `equal == false`, unequal) to `value`.
fn field_check(a: &mut Assembler, lits: &mut Lits, key: &str, value: &str, equal: bool, fail: &str) {
    let k = lits.get(a, key);
    let v = lits.get(a, value);
    a.emit(Instruction::mov(1, REQ));
    a.movi(2, k);
    a.icall("websGetVar");
    a.movi(2, v);
    a.icall("strcmp");
    a.movi(R0, 0);
    if equal {
        a.bne(1, R0, fail);
    } else {
        a.beq(1, R0, fail);
    }
}

fn body_check(a: &mut Assembler, lits: &mut Lits, buf: u32, lit: &str, prefix: bool, fail: &str) {
    let v = lits.get(a, lit);
    a.movi(1, buf as i32);
    a.movi(2, v);
    if prefix {
        a.movi(3, lit.len() as i32);
        a.icall("strncmp");
    } else {
        a.icall("strcmp");
    }
    a.movi(R0, 0);
    a.bne(1, R0, fail);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestSource {
    WebsGetVar,
    Recv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    FieldEq { field: String, value: String },
    FieldNe { field: String, value: String },
    BodyPrefix(String),
    BodyEq(String),
}

#[derive(Debug, Clone)]
pub struct PlantedService {
    pub name: String,
    /// Address of the end-point call.
    pub site: u32,
    pub api: String,
    /// Function holding the end point.
    pub function: u32,
    pub conditions: Vec<Condition>,
}

impl PlantedService {
    /// A request body that reaches the end point.
    pub fn witness_body(&self) -> String {
        let mut pairs = Vec::new();
        for c in &self.conditions {
            match c {
                Condition::BodyEq(s) => return s.clone(),
                Condition::FieldEq { field, value } => pairs.push(format!("{field}={value}")),
                _ => {}
            }
        }
        pairs.join("&")
    }

    pub fn inequality_guarded(&self) -> bool {
        self.conditions.iter().any(|c| matches!(c, Condition::FieldNe { .. }))
    }
}

#[derive(Debug, Clone)]
pub struct DispatcherBinary {
    pub image: GsbImage,
    pub source: RequestSource,
    pub services: Vec<PlantedService>,
}

const ACTIONS: &[&str] = &[
    "reboot", "upgrade", "backup", "restore", "ping", "traceroute", "wps", "ntp", "ddns", "qos", "vpn", "route",
    "dmz", "upnp", "syslog", "wan", "lan", "wifi", "guest", "parental", "schedule", "firewall", "nat", "dhcp",
    "dns", "usb", "smb", "ftp", "iptv", "ipv6",
];
const KEYS: &[&str] = &["page", "cmd", "token", "type", "id", "lang", "sid", "opt", "level", "mac"];

fn word(rng: &mut ChaCha8Rng, len: usize) -> String {
    const ALPHA: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    (0..len).map(|_| ALPHA[rng.random_range(0..ALPHA.len())] as char).collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

/// A request dispatcher with `count` services, each behind an equality
/// chain of depth 1..=4. With `WebsGetVar` the first level tests the shared
/// `action` field and roughly a third of the services continue in a helper
/// function; a few carry an extra inequality guard. With `Recv` the chain
/// narrows the raw body through growing prefixes to an exact match.
pub fn dispatcher_binary(seed: u64, source: RequestSource, count: usize) -> DispatcherBinary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Assembler::new();
    let mut lits = Lits::new();
    for s in ["HTTP/1.1 200 OK", "Content-Type: text/html", "Connection: close"] {
        lits.get(&mut a, s);
    }
    let buf = a.space(512);
    a.align_data(4);

    let mut actions: Vec<&str> = ACTIONS.to_vec();
    let mut plans = Vec::new();
    for i in 0..count {
        let action = if actions.is_empty() {
            format!("svc{i}")
        } else {
            actions.remove(rng.random_range(0..actions.len())).to_string()
        };
        let depth = rng.random_range(1..=4usize);
        let helper = source == RequestSource::WebsGetVar && depth > 1 && rng.random_range(0..3) == 0;
        let ne = source == RequestSource::WebsGetVar && rng.random_range(0..5) == 0;
        let api = if rng.random_range(0..4) == 0 { "nvram_set" } else { "system" };
        let mut conditions = Vec::new();
        match source {
            RequestSource::WebsGetVar => {
                conditions.push(Condition::FieldEq { field: "action".into(), value: action.clone() });
                let mut keys: Vec<&str> = KEYS.to_vec();
                for _ in 1..depth {
                    let k = keys.remove(rng.random_range(0..keys.len()));
                    let len = rng.random_range(1..=8);
                    conditions.push(Condition::FieldEq { field: k.into(), value: word(&mut rng, len) });
                }
                if ne {
                    conditions.push(Condition::FieldNe { field: "mode".into(), value: "disabled".into() });
                }
            }
            RequestSource::Recv => {
                let mut path = format!("POST /{action}");
                for _ in 1..depth {
                    conditions.push(Condition::BodyPrefix(path.clone()));
                    path.push('/');
                    path.push_str(pick(&mut rng, KEYS));
                }
                conditions.push(Condition::BodyEq(path));
            }
        }
        plans.push((action, helper, api, conditions));
    }

    // main
    a.label("main").unwrap();
    a.entry("main");
    enter(&mut a);
    match source {
        RequestSource::WebsGetVar => {
            a.emit(Instruction::mov(REQ, 1));
        }
        RequestSource::Recv => {
            a.movi(1, 3);
            a.movi(2, buf as i32);
            a.movi(3, 512);
            a.icall("recv");
        }
    }
    let mut sites = vec![0u32; count];
    let mut helpers = Vec::new();
    for (i, (_, helper, api, conds)) in plans.iter().enumerate() {
        let next = format!("next_{i}");
        let inline: &[Condition] = if *helper { &conds[..1] } else { conds };
        for c in inline {
            emit_condition(&mut a, &mut lits, buf, c, &next);
        }
        if *helper {
            a.emit(Instruction::mov(1, REQ));
            a.call(&format!("svc_{i}"));
            helpers.push(i);
        } else {
            sites[i] = emit_end_point(&mut a, &mut lits, api, i);
        }
        a.jmp("done");
        a.label(&next).unwrap();
    }
    a.label("done").unwrap();
    a.movi(1, 0);
    leave(&mut a);

    let mut functions = vec![a.label_addr("main").unwrap(); count];
    for i in helpers {
        let (_, _, api, conds) = &plans[i];
        functions[i] = a.label(&format!("svc_{i}")).unwrap();
        enter(&mut a);
        a.emit(Instruction::mov(REQ, 1));
        let out = format!("svc_{i}_out");
        for c in &conds[1..] {
            emit_condition(&mut a, &mut lits, buf, c, &out);
        }
        sites[i] = emit_end_point(&mut a, &mut lits, api, i);
        a.label(&out).unwrap();
        leave(&mut a);
    }

    let image = a.build().expect("dispatcher assembles");
    let services = plans
        .into_iter()
        .enumerate()
        .map(|(i, (name, _, api, conditions))| PlantedService {
            name,
            site: sites[i],
            api: api.to_string(),
            function: functions[i],
            conditions,
        })
        .collect();
    DispatcherBinary { image, source, services }
}

fn emit_condition(a: &mut Assembler, lits: &mut Lits, buf: u32, c: &Condition, fail: &str) {
    match c {
        Condition::FieldEq { field, value } => field_check(a, lits, field, value, true, fail),
        Condition::FieldNe { field, value } => field_check(a, lits, field, value, false, fail),
        Condition::BodyPrefix(p) => body_check(a, lits, buf, p, true, fail),
        Condition::BodyEq(p) => body_check(a, lits, buf, p, false, fail),
    }
}

fn emit_end_point(a: &mut Assembler, lits: &mut Lits, api: &str, i: usize) -> u32 {
    if api == "nvram_set" {
        let k = lits.get(a, &format!("svc{i}_enable"));
        let v = lits.get(a, "1");
        a.movi(1, k);
        a.movi(2, v);
    } else {
        let cmd = lits.get(a, &format!("/usr/sbin/svc{i} start"));
        a.movi(1, cmd);
    }
    a.icall(api)
}

pub const TABLE_I_CODE_BASE: u32 = 0x0042_0000;
pub const TABLE_I_BASE: u32 = 0x0058_c560;
/// `(name address, name, handler)` in slot order.
pub const TABLE_I_ENTRIES: [(u32, &str, u32); 3] = [
    (0x004a_6620, "SetMultipleActions", 0x0043_3768),
    (0x004a_6634, "GetDeviceSettings", 0x0042_3d28),
    (0x004a_6648, "GetOperationMode", 0x0043_3f70),
];

/// A lookup loop over a `(name, handler)` table laid out at the addresses
/// of the classic HNAP dispatch table, terminated by a zero slot.
pub fn table_i_image() -> GsbImage {
    let mut a = Assembler::with_bases(TABLE_I_CODE_BASE, TABLE_I_ENTRIES[0].0);
    for (addr, name, _) in TABLE_I_ENTRIES {
        a.data_org(addr).unwrap();
        a.string(name);
    }
    a.data_org(TABLE_I_BASE).unwrap();
    for (name_addr, _, handler) in TABLE_I_ENTRIES {
        a.word(name_addr);
        a.word(handler);
    }
    a.word(0);
    a.word(0);

    a.label("lookup").unwrap();
    a.entry("lookup").export("lookup");
    enter(&mut a);
    a.emit(Instruction::mov(REQ, 1));
    a.movi(7, TABLE_I_BASE as i32);
    a.label("loop").unwrap();
    a.emit(Instruction::load(8, 7, 0));
    a.movi(R0, 0);
    a.beq(8, R0, "miss");
    a.emit(Instruction::mov(1, 8));
    a.emit(Instruction::mov(2, REQ));
    a.icall("strcmp");
    a.movi(R0, 0);
    a.bne(1, R0, "next");
    a.emit(Instruction::load(9, 7, 4));
    a.emit(Instruction::mov(1, REQ));
    a.emit(Instruction::callr(9));
    a.jmp("miss");
    a.label("next").unwrap();
    a.movi(R0, 8);
    a.emit(Instruction::add(7, 7, R0));
    a.jmp("loop");
    a.label("miss").unwrap();
    leave(&mut a);

    let mut handlers: Vec<(u32, &str)> = TABLE_I_ENTRIES.iter().map(|&(_, n, h)| (h, n)).collect();
    handlers.sort();
    for (h, name) in handlers {
        a.org(h).unwrap();
        a.label(&format!("sub_{h:x}")).unwrap();
        enter(&mut a);
        let cmd = a.string(&format!("hnap {name}"));
        a.movi(1, cmd as i32);
        a.icall("system");
        leave(&mut a);
    }
    a.build().expect("table image assembles")
}

/// Programs for the stream and open-flag context rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputTarget {
    /// `fopen("/dev/console", "w")` then `fprintf`.
    Console,
    /// `fopen("/www/out.html", "w")` then `fprintf`.
    WebFile,
    /// `open(path, 0x302)`.
    OpenFlags,
}

pub fn output_program(target: OutputTarget) -> GsbImage {
    let mut a = Assembler::new();
    let mut lits = Lits::new();
    a.label("main").unwrap();
    a.entry("main");
    enter(&mut a);
    match target {
        OutputTarget::Console | OutputTarget::WebFile => {
            let path = if target == OutputTarget::Console { "/dev/console" } else { "/www/out.html" };
            let p = lits.get(&mut a, path);
            let m = lits.get(&mut a, "w");
            let f = lits.get(&mut a, "status=%d\n");
            a.movi(1, p);
            a.movi(2, m);
            a.icall("fopen");
            a.emit(Instruction::mov(7, 1));
            a.emit(Instruction::mov(1, 7));
            a.movi(2, f);
            a.movi(3, 1);
            a.icall("fprintf");
        }
        OutputTarget::OpenFlags => {
            let p = lits.get(&mut a, "/var/run/httpd.pid");
            a.movi(1, p);
            a.movi(2, 0x302);
            a.movi(3, 0o644);
            a.icall("open");
        }
    }
    a.movi(1, 0);
    leave(&mut a);
    a.build().expect("output program assembles")
}

pub const WRAPPER_LIBRARY: &str = "/lib/libutil.so";
pub const WRAPPER_EXECUTABLE: &str = "/usr/sbin/ctrld";

/// A library exporting `_system` (format into a stack buffer, then
/// `system`) and an executable that calls it. Returns the tree and the
/// address of the `_system` call site in the executable.
pub fn wrapper_corpus() -> (Tree, u32) {
    let mut lib = Assembler::new();
    lib.set_library(true);
    lib.label("_system").unwrap();
    lib.export("_system");
    enter(&mut lib);
    lib.movi(9, -256);
    lib.emit(Instruction::mov(3, 2));
    lib.emit(Instruction::mov(2, 1));
    lib.emit(Instruction::add(1, SP, 9));
    lib.icall("vsprintf");
    lib.movi(9, -256);
    lib.emit(Instruction::add(1, SP, 9));
    lib.icall("system");
    leave(&mut lib);

    let mut exe = Assembler::new();
    let mut lits = Lits::new();
    exe.label("main").unwrap();
    exe.entry("main");
    enter(&mut exe);
    exe.emit(Instruction::mov(REQ, 1));
    let fmt = lits.get(&mut exe, "ifconfig %s up");
    let iface = lits.get(&mut exe, "br0");
    exe.movi(1, fmt);
    exe.movi(2, iface);
    let site = exe.icall("_system");
    exe.movi(1, 0);
    leave(&mut exe);

    let mut tree = Tree::default();
    tree.add(WRAPPER_LIBRARY, lib.to_bytes().expect("library assembles"));
    tree.add(WRAPPER_EXECUTABLE, exe.to_bytes().expect("executable assembles"));
    (tree, site)
}

#[derive(Debug, Clone)]
pub struct TimeListing {
    pub image: GsbImage,
    pub function: u32,
    /// First instruction of the guarded block.
    pub inner: u32,
}

/// The schedule handler: two `websGetVar` lookups, then `strcmp` against
/// "0" and "86400" guarding an `nvram_set`.
pub fn time_listing() -> TimeListing {
    let mut a = Assembler::new();
    let mut lits = Lits::new();
    let k_start = lits.get(&mut a, "start_time");
    let k_end = lits.get(&mut a, "end_time");
    let zero = lits.get(&mut a, "0");
    let day = lits.get(&mut a, "86400");
    let key = lits.get(&mut a, "schedule_enable");
    let one = lits.get(&mut a, "1");

    let function = a.label("set_schedule").unwrap();
    a.entry("set_schedule").export("set_schedule");
    enter(&mut a);
    a.emit(Instruction::mov(REQ, 1));
    a.movi(2, k_start);
    a.icall("websGetVar");
    a.emit(Instruction::mov(7, 1));
    a.emit(Instruction::mov(1, REQ));
    a.movi(2, k_end);
    a.icall("websGetVar");
    a.emit(Instruction::mov(8, 1));
    a.emit(Instruction::mov(1, 7));
    a.movi(2, zero);
    a.icall("strcmp");
    a.movi(R0, 0);
    a.bne(1, R0, "out");
    a.emit(Instruction::mov(1, 8));
    a.movi(2, day);
    a.icall("strcmp");
    a.movi(R0, 0);
    a.bne(1, R0, "out");
    let inner = a.movi(1, key);
    a.movi(2, one);
    a.icall("nvram_set");
    a.label("out").unwrap();
    leave(&mut a);
    TimeListing { image: a.build().expect("listing assembles"), function, inner }
}

/// Handler names registered by the binder firmware, in registration order.
pub const BINDER_SERVICES: [&str; 10] = [
    "formSetWan",
    "formSetLan",
    "formWlanSetup",
    "formSysTime",
    "formUpgrade",
    "formPassword",
    "formSysLog",
    "formDiagShell",
    "formTelnetd",
    "formFactoryCfg",
];
/// How many of [`BINDER_SERVICES`] the generated web pages reference.
pub const BINDER_VISIBLE: usize = 7;
pub const BINDER_EXECUTABLE: &str = "/bin/goahead";

pub fn binder_field(i: usize) -> String {
    format!("f{i}_value")
}

/// Firmware with a web server registering [`BINDER_SERVICES`] through
/// `websFormDefine`. Each handler runs `system` when its field equals
/// "apply". The first [`BINDER_VISIBLE`] are reachable from the web pages;
/// `expose` adds a form for each listed extra index.
pub fn binder_firmware(expose: &[usize]) -> Tree {
    let mut a = Assembler::new();
    let mut lits = Lits::new();
    a.label("main").unwrap();
    a.entry("main");
    enter(&mut a);
    for (i, name) in BINDER_SERVICES.iter().enumerate() {
        let n = lits.get(&mut a, name);
        a.movi(1, n);
        a.movi_label(2, &format!("h_{i}"));
        a.icall("websFormDefine");
    }
    a.icall("websMainLoop");
    a.movi(1, 0);
    leave(&mut a);
    for (i, name) in BINDER_SERVICES.iter().enumerate() {
        a.label(&format!("h_{i}")).unwrap();
        enter(&mut a);
        a.emit(Instruction::mov(REQ, 1));
        let out = format!("h_{i}_out");
        field_check(&mut a, &mut lits, &binder_field(i), "apply", true, &out);
        let cmd = lits.get(&mut a, &format!("/sbin/{} apply", name.trim_start_matches("form").to_ascii_lowercase()));
        a.movi(1, cmd);
        a.icall("system");
        a.label(&out).unwrap();
        leave(&mut a);
    }
    lits.get(&mut a, "HTTP/1.0 200 OK");
    lits.get(&mut a, "Content-Type: text/html");

    let form = |i: usize| {
        format!(
            "<form method=\"post\" action=\"/goform/{}\">\n  <input type=\"text\" name=\"{}\">\n  <input type=\"submit\" value=\"Apply\">\n</form>\n",
            BINDER_SERVICES[i],
            binder_field(i)
        )
    };
    let mut index = String::from("<html><head><title>Setup</title>\n<script src=\"js/app.js\"></script></head><body>\n");
    for i in 0..5 {
        index.push_str(&form(i));
    }
    index.push_str("<a href=\"status.asp\">Status</a>\n</body></html>\n");
    let mut script = String::from("function save(v) {\n");
    for i in 5..BINDER_VISIBLE {
        script.push_str(&format!(
            "  ajax(\"POST\", \"/goform/{}?{}=\" + v);\n",
            BINDER_SERVICES[i],
            binder_field(i)
        ));
    }
    script.push_str("}\n");
    let mut advanced = String::from("<html><body>\n");
    for &i in expose {
        advanced.push_str(&form(i));
    }
    advanced.push_str("</body></html>\n");

    let mut tree = Tree::default();
    tree.add(BINDER_EXECUTABLE, a.to_bytes().expect("binder firmware assembles"));
    tree.add("/etc/init.d/rcS", "#!/bin/sh\nmount -a\ngoahead &\n");
    tree.add("/www/index.html", index);
    tree.add("/www/js/app.js", script);
    tree.add("/www/status.asp", "<html><body><% getSysUptime(); %></body></html>\n");
    if !expose.is_empty() {
        tree.add("/www/advanced.html", advanced);
    }
    tree
}

/// One tree holding every generator's output, used by the CLI walkthrough.
pub fn demo_firmware() -> Tree {
    let mut tree = binder_firmware(&[]);
    let (wrappers, _) = wrapper_corpus();
    tree.merge(wrappers);
    let d = dispatcher_binary(7, RequestSource::WebsGetVar, 20);
    tree.add("/usr/sbin/mgmtd", d.image.to_bytes());
    tree.add("/usr/sbin/logd", output_program(OutputTarget::WebFile).to_bytes());
    tree
}
