use std::collections::{BTreeMap, BTreeSet};

use super::cfg::Cfg;

/// Immediate dominators of every block reachable from `entry` within the
/// function body, computed with the Cooper-Harvey-Kennedy iteration.
#[derive(Debug, Clone)]
pub struct Dominators {
    entry: u32,
    idom: BTreeMap<u32, u32>,
}

impl Dominators {
    pub fn compute(cfg: &Cfg, entry: u32) -> Dominators {
        let body = cfg.functions.get(&entry).cloned().unwrap_or_else(|| BTreeSet::from([entry]));
        let in_body = |b: u32| body.contains(&b);

        // reverse postorder
        let mut order = Vec::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![(entry, 0usize)];
        seen.insert(entry);
        while let Some((b, i)) = stack.pop() {
            let succs = cfg.succs(b);
            if i < succs.len() {
                stack.push((b, i + 1));
                let s = succs[i].0;
                if in_body(s) && seen.insert(s) {
                    stack.push((s, 0));
                }
            } else {
                order.push(b);
            }
        }
        order.reverse();
        let rpo: BTreeMap<u32, usize> = order.iter().enumerate().map(|(i, b)| (*b, i)).collect();

        let mut idom: BTreeMap<u32, u32> = BTreeMap::new();
        idom.insert(entry, entry);
        let intersect = |idom: &BTreeMap<u32, u32>, mut a: u32, mut b: u32| {
            while a != b {
                while rpo[&a] > rpo[&b] {
                    a = idom[&a];
                }
                while rpo[&b] > rpo[&a] {
                    b = idom[&b];
                }
            }
            a
        };
        let mut changed = true;
        while changed {
            changed = false;
            for &b in order.iter().skip(1) {
                let mut new: Option<u32> = None;
                for &(p, _) in cfg.preds(b) {
                    if !rpo.contains_key(&p) || !idom.contains_key(&p) {
                        continue;
                    }
                    new = Some(match new {
                        None => p,
                        Some(n) => intersect(&idom, p, n),
                    });
                }
                if let Some(n) = new {
                    if idom.get(&b) != Some(&n) {
                        idom.insert(b, n);
                        changed = true;
                    }
                }
            }
        }
        Dominators { entry, idom }
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    pub fn reachable(&self, b: u32) -> bool {
        self.idom.contains_key(&b)
    }

    pub fn idom(&self, b: u32) -> Option<u32> {
        if b == self.entry {
            return None;
        }
        self.idom.get(&b).copied()
    }

    /// Whether block `a` dominates block `b`.
    pub fn dominates(&self, a: u32, b: u32) -> bool {
        if !self.reachable(b) {
            return false;
        }
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom(cur) {
                Some(next) => cur = next,
                None => return false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub function: u32,
    pub header: u32,
    pub body: BTreeSet<u32>,
}

/// Natural loops of every function, one per header (back edges sharing a
/// header are merged).
pub fn detect_loops(cfg: &Cfg) -> Vec<Loop> {
    cfg.functions.keys().flat_map(|&f| function_loops(cfg, f)).collect()
}

pub fn function_loops(cfg: &Cfg, function: u32) -> Vec<Loop> {
    let body = &cfg.functions[&function];
    let dom = Dominators::compute(cfg, function);
    let mut loops: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for &b in body {
        if !dom.reachable(b) {
            continue;
        }
        for &(h, _) in cfg.succs(b) {
            if body.contains(&h) && dom.dominates(h, b) {
                let set = loops.entry(h).or_insert_with(|| BTreeSet::from([h]));
                let mut stack = vec![b];
                while let Some(n) = stack.pop() {
                    if set.insert(n) {
                        for &(p, _) in cfg.preds(n) {
                            if body.contains(&p) && dom.reachable(p) {
                                stack.push(p);
                            }
                        }
                    }
                }
            }
        }
    }
    loops.into_iter().map(|(header, body)| Loop { function, header, body }).collect()
}
