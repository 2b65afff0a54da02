use std::collections::BTreeSet;
use std::fmt::Write as _;

use ghosthunt_core::corpus::{dispatcher_binary, output_program, wrapper_corpus, OutputTarget, RequestSource};
use ghosthunt_core::endpoints::{find_end_points, ApiCatalog, EndPoint, ServiceCategory};
use ghosthunt_core::graphs::build_cfg;
use ghosthunt_core::gsb::asm::assemble_text;
use ghosthunt_core::gsb::{find_shared_library_wrappers, GsbImage, WrapperMap};
use proptest::prelude::*;

const COMMANDS: [(&str, ServiceCategory); 7] = [
    ("system", ServiceCategory::SystemCommandExecution),
    ("popen", ServiceCategory::SystemCommandExecution),
    ("execv", ServiceCategory::SystemCommandExecution),
    ("nvram_set", ServiceCategory::NonvolatileStorage),
    ("apmib_set", ServiceCategory::NonvolatileStorage),
    ("connect", ServiceCategory::NetworkActivity),
    ("SSL_write", ServiceCategory::NetworkActivity),
];
const CUSTOM: [&str; 4] = ["acme_exec", "acme_store", "acme_send", "acme_log"];
const PATHS: [(&str, bool); 4] = [("/dev/console", true), ("/dev/ttyS0", true), ("/www/out.html", false), ("/tmp/log", false)];
const MODES: [(&str, bool); 4] = [("w", true), ("a", true), ("r+", true), ("r", false)];
const FLAGS: [(u32, bool); 5] = [(0, false), (1, true), (2, true), (0x301, true), (0x302, true)];

#[derive(Debug, Clone)]
enum Call {
    Command(usize),
    Print { puts: bool },
    Stream { path: usize, mode: usize, fputs: bool },
    StreamFromParam,
    Open { path: usize, flags: usize },
    Custom(usize),
    Wrapped,
    Compare,
}

fn call() -> impl Strategy<Value = Call> {
    prop_oneof![
        (0..COMMANDS.len()).prop_map(Call::Command),
        any::<bool>().prop_map(|puts| Call::Print { puts }),
        (0..PATHS.len(), 0..MODES.len(), any::<bool>()).prop_map(|(path, mode, fputs)| Call::Stream { path, mode, fputs }),
        Just(Call::StreamFromParam),
        (0..PATHS.len(), 0..FLAGS.len()).prop_map(|(path, flags)| Call::Open { path, flags }),
        (0..CUSTOM.len()).prop_map(Call::Custom),
        Just(Call::Wrapped),
        Just(Call::Compare),
    ]
}

/// Straight-line program over `calls`, plus the expected end point
/// category per call under a catalog holding the builtin APIs and
/// `custom`.
fn program(calls: &[Call], cgi: bool, custom: &BTreeSet<usize>) -> (String, Vec<Option<ServiceCategory>>) {
    let mut src = String::from(".entry main\nmain:\n    store [sp-8], ra\n    mov r6, r1\n");
    let mut want = Vec::new();
    for (k, c) in calls.iter().enumerate() {
        let expect = match *c {
            Call::Command(i) => {
                let _ = write!(src, "    movi r1, s{k}\n    movi r2, s{k}\n    icall {}\n", COMMANDS[i].0);
                Some(COMMANDS[i].1)
            }
            Call::Print { puts } => {
                let api = if puts { "puts" } else { "printf" };
                let _ = write!(src, "    movi r1, s{k}\n    icall {api}\n");
                cgi.then_some(ServiceCategory::PersistentOutput)
            }
            Call::Stream { path, mode, fputs } => {
                let _ = write!(src, "    movi r1, p{k}\n    movi r2, m{k}\n    icall fopen\n    mov r7, r1\n");
                if fputs {
                    let _ = write!(src, "    movi r1, s{k}\n    mov r2, r7\n    icall fputs\n");
                } else {
                    let _ = write!(src, "    mov r1, r7\n    movi r2, s{k}\n    icall fprintf\n");
                }
                (!PATHS[path].1 && MODES[mode].1).then_some(ServiceCategory::PersistentOutput)
            }
            Call::StreamFromParam => {
                let _ = write!(src, "    mov r1, r6\n    movi r2, s{k}\n    icall fprintf\n");
                None
            }
            Call::Open { flags, .. } => {
                let _ = write!(src, "    movi r1, p{k}\n    movi r2, {}\n    icall open\n", FLAGS[flags].0);
                FLAGS[flags].1.then_some(ServiceCategory::PersistentOutput)
            }
            Call::Custom(i) => {
                let _ = write!(src, "    movi r1, s{k}\n    icall {}\n", CUSTOM[i]);
                custom.contains(&i).then_some(ServiceCategory::NetworkActivity)
            }
            Call::Wrapped => {
                let _ = write!(src, "    movi r1, s{k}\n    movi r2, s{k}\n    icall _system\n");
                Some(ServiceCategory::SystemCommandExecution)
            }
            Call::Compare => {
                let _ = write!(src, "    mov r1, r6\n    movi r2, s{k}\n    icall strcmp\n");
                None
            }
        };
        want.push(expect);
    }
    src.push_str("    ret\n.data\n");
    for (k, c) in calls.iter().enumerate() {
        let _ = writeln!(src, "s{k}: .string \"arg{k}\"");
        match *c {
            Call::Stream { path, mode, .. } => {
                let _ = write!(src, "p{k}: .string \"{}\"\nm{k}: .string \"{}\"\n", PATHS[path].0, MODES[mode].0);
            }
            Call::Open { path, .. } => {
                let _ = writeln!(src, "p{k}: .string \"{}\"", PATHS[path].0);
            }
            _ => {}
        }
    }
    (src, want)
}

fn catalog(custom: &BTreeSet<usize>) -> ApiCatalog {
    ApiCatalog::builtin().with_extra(custom.iter().map(|&i| (CUSTOM[i], ServiceCategory::NetworkActivity)))
}

fn wrappers(cat: &ApiCatalog) -> WrapperMap {
    find_shared_library_wrappers(&wrapper_corpus().0.inventory(), cat).0
}

fn end_points(img: &GsbImage, cat: &ApiCatalog, cgi: bool) -> Vec<EndPoint> {
    let cfg = build_cfg(img).unwrap();
    find_end_points(img, &cfg, cat, &wrappers(cat), cgi).0
}

fn check_rules(eps: &[EndPoint], cat: &ApiCatalog, w: &WrapperMap) -> Result<(), TestCaseError> {
    for ep in eps {
        let info = cat.get(&ep.api).expect("end point API is catalogued");
        prop_assert!(ep.context.satisfies(info.rule), "{:?} violates {:?}", ep, info.rule);
        prop_assert_eq!(ep.category, info.category);
        if let Some(name) = &ep.via_wrapper {
            prop_assert_eq!(w.api_for(name), Some(ep.api.as_str()));
        }
    }
    Ok(())
}

fn calls() -> impl Strategy<Value = Vec<Call>> {
    prop::collection::vec(call(), 0..24)
}

fn custom_set() -> impl Strategy<Value = BTreeSet<usize>> {
    prop::collection::btree_set(0..CUSTOM.len(), 0..=CUSTOM.len())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// End points match a per-call expectation and every emitted one
    /// satisfies its API's context rule.
    #[test]
    fn end_points_follow_context_rules(calls in calls(), cgi: bool, custom in custom_set()) {
        let (src, want) = program(&calls, cgi, &custom);
        let img = assemble_text(&src).unwrap();
        let cat = catalog(&custom);
        let eps = end_points(&img, &cat, cgi);
        check_rules(&eps, &cat, &wrappers(&cat))?;
        let got: Vec<ServiceCategory> = eps.iter().map(|e| e.category).collect();
        let expected: Vec<ServiceCategory> = want.into_iter().flatten().collect();
        prop_assert_eq!(got, expected);
        let wrapped = calls.iter().filter(|c| matches!(c, Call::Wrapped)).count();
        prop_assert_eq!(eps.iter().filter(|e| e.via_wrapper.as_deref() == Some("_system")).count(), wrapped);
    }

    /// Extending the catalog adds end points for the new APIs only.
    #[test]
    fn catalog_extension_keeps_existing_end_points(
        calls in calls(),
        cgi: bool,
        small in custom_set(),
        more in custom_set(),
    ) {
        let large: BTreeSet<usize> = small.union(&more).copied().collect();
        let (src, _) = program(&calls, cgi, &large);
        let img = assemble_text(&src).unwrap();
        let before = end_points(&img, &catalog(&small), cgi);
        let after = end_points(&img, &catalog(&large), cgi);
        for ep in &before {
            prop_assert!(after.contains(ep), "{:?} changed or vanished", ep);
        }
        let added: BTreeSet<&str> = large.difference(&small).map(|&i| CUSTOM[i]).collect();
        for ep in after.iter().filter(|e| !before.contains(e)) {
            prop_assert!(added.contains(ep.api.as_str()), "{:?} is not from an added API", ep);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn corpus_end_points_follow_context_rules(seed in 0u64..500, recv: bool, cgi: bool) {
        let source = if recv { RequestSource::Recv } else { RequestSource::WebsGetVar };
        let d = dispatcher_binary(seed, source, 8);
        let cat = ApiCatalog::builtin();
        let eps = end_points(&d.image, &cat, cgi);
        check_rules(&eps, &cat, &wrappers(&cat))?;
        let sites: BTreeSet<u32> = eps.iter().map(|e| e.site).collect();
        for s in &d.services {
            prop_assert!(sites.contains(&s.site));
        }
        for t in [OutputTarget::Console, OutputTarget::WebFile, OutputTarget::OpenFlags] {
            let img = output_program(t);
            check_rules(&end_points(&img, &cat, cgi), &cat, &wrappers(&cat))?;
        }
    }
}
