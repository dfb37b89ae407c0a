//! Checks over a finished graph: stack realizability and an independent
//! recomputation of which summaries the edges justify.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use super::{Action, Dsg, Entry, NodeId, SymId};
use crate::aam::{Node, StackSym};

/// Whether some path from the root reaches `node` with exactly `stack`
/// (innermost first).
pub fn accepts(dsg: &Dsg, node: &Node, stack: &[StackSym]) -> bool {
    dsg.node_id(node).is_some_and(|n| accepts_id(dsg, n, stack))
}

pub(super) fn accepts_id(dsg: &Dsg, n: NodeId, stack: &[StackSym]) -> bool {
    let Some(ids) = stack.iter().map(|s| dsg.sym_id(s)).collect::<Option<Vec<SymId>>>() else {
        return false;
    };
    let mut memo = HashMap::new();
    go(dsg, n, &ids, 0, &mut memo)
}

fn go(dsg: &Dsg, n: NodeId, ids: &[SymId], i: usize, memo: &mut HashMap<(NodeId, usize), bool>) -> bool {
    if let Some(&r) = memo.get(&(n, i)) {
        return r;
    }
    let r = if i == ids.len() {
        dsg.tops[n].contains(&Entry::Bottom)
    } else {
        let below = ids.get(i + 1).copied();
        let origins: Vec<NodeId> = dsg.tops[n]
            .iter()
            .filter_map(|e| match *e {
                Entry::Top { sym, origin, below: b } if sym == ids[i] && b == below => Some(origin),
                _ => None,
            })
            .collect();
        origins.into_iter().any(|p| go(dsg, p, ids, i + 1, memo))
    };
    memo.insert((n, i), r);
    r
}

/// Outcome of [`balanced_check`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Balance {
    pub ok: bool,
    /// A description of the offending path, step by step.
    pub counterexample: Option<Vec<String>>,
}

/// A balanced segment in progress: pushed `sym` at `origin`, now at `at`
/// with `cur` on top (exchanges may have replaced it).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Seg {
    origin: NodeId,
    sym: SymId,
    at: NodeId,
    cur: SymId,
}

/// Recomputes from the edges alone which push/pop pairs are well bracketed
/// and which nodes a bracketed path reaches, then checks the graph's
/// summaries, nodes and answers against that.
pub fn balanced_check(dsg: &Dsg) -> Balance {
    let mut out: BTreeMap<NodeId, Vec<(Action, NodeId)>> = BTreeMap::new();
    for e in &dsg.edges {
        out.entry(e.from).or_default().push((e.action, e.to));
    }
    let none = Vec::new();
    let succs = |n: NodeId| out.get(&n).unwrap_or(&none);

    // Segments and the summaries (origin, sym, return) they justify.
    let mut segs: BTreeSet<Seg> = BTreeSet::new();
    let mut justified: BTreeSet<(NodeId, SymId, NodeId)> = BTreeSet::new();
    let mut waiting: HashMap<(NodeId, SymId), Vec<Seg>> = HashMap::new();
    let mut work: VecDeque<Seg> = VecDeque::new();
    for e in &dsg.edges {
        if let Action::Push(s) = e.action {
            let seg = Seg { origin: e.from, sym: s, at: e.to, cur: s };
            if segs.insert(seg) {
                work.push_back(seg);
            }
        }
    }
    let add = |seg: Seg, segs: &mut BTreeSet<Seg>, work: &mut VecDeque<Seg>| {
        if segs.insert(seg) {
            work.push_back(seg);
        }
    };
    while let Some(seg) = work.pop_front() {
        for &(action, m) in succs(seg.at) {
            match action {
                Action::Noop => add(Seg { at: m, ..seg }, &mut segs, &mut work),
                Action::Exchange(a, b) if a == seg.cur => add(Seg { at: m, cur: b, ..seg }, &mut segs, &mut work),
                Action::Pop(a) if a == seg.cur => {
                    if justified.insert((seg.origin, seg.sym, m)) {
                        for w in waiting.get(&(seg.origin, seg.sym)).cloned().unwrap_or_default() {
                            add(Seg { at: m, ..w }, &mut segs, &mut work);
                        }
                    }
                }
                Action::Push(t) => {
                    waiting.entry((seg.at, t)).or_default().push(seg);
                    let rets: Vec<NodeId> =
                        justified.iter().filter(|j| j.0 == seg.at && j.1 == t).map(|j| j.2).collect();
                    for r in rets {
                        add(Seg { at: r, ..seg }, &mut segs, &mut work);
                    }
                }
                _ => {}
            }
        }
    }

    // Nodes reachable with an empty stack, then every node reachable at all.
    let mut base: BTreeSet<NodeId> = BTreeSet::from([dsg.root]);
    let mut parent: BTreeMap<NodeId, (NodeId, String)> = BTreeMap::new();
    let mut queue = VecDeque::from([dsg.root]);
    while let Some(n) = queue.pop_front() {
        let mut next: Vec<(NodeId, String)> = Vec::new();
        for &(action, m) in succs(n) {
            match action {
                Action::Noop => next.push((m, dsg.action_label(action))),
                Action::Push(s) => {
                    for j in justified.iter().filter(|j| j.0 == n && j.1 == s) {
                        next.push((j.2, format!("{} ... matching pop", dsg.action_label(action))));
                    }
                }
                _ => {}
            }
        }
        for (m, how) in next {
            if base.insert(m) {
                parent.insert(m, (n, how));
                queue.push_back(m);
            }
        }
    }
    let mut live_origins: BTreeSet<NodeId> = base.clone();
    let mut reached = base.clone();
    loop {
        let before = reached.len();
        for s in &segs {
            if live_origins.contains(&s.origin) && reached.insert(s.at) {
                parent.entry(s.at).or_insert((s.origin, format!("inside frame pushed at #{}", s.origin)));
            }
        }
        live_origins.extend(reached.iter().copied());
        if reached.len() == before {
            break;
        }
    }

    let path_to = |n: NodeId| -> Vec<String> {
        let mut steps = Vec::new();
        let mut cur = n;
        while cur != dsg.root {
            let Some((p, how)) = parent.get(&cur) else {
                steps.push(format!("#{cur} has no justified path from the root"));
                break;
            };
            steps.push(format!("#{p} -> #{cur} via {how}"));
            cur = *p;
        }
        steps.reverse();
        steps
    };
    let fail = |steps: Vec<String>| Balance { ok: false, counterexample: Some(steps) };

    let pairs: BTreeSet<(NodeId, NodeId)> = justified.iter().map(|j| (j.0, j.2)).collect();
    for &(p, m) in &dsg.summaries {
        if !pairs.contains(&(p, m)) || !reached.contains(&p) {
            let mut steps = path_to(p);
            for &(action, q) in succs(p) {
                if let Action::Push(_) = action {
                    steps.push(format!("#{p} -> #{q} via {}", dsg.action_label(action)));
                }
            }
            for e in dsg.edges.iter().filter(|e| e.to == m && matches!(e.action, Action::Pop(_))) {
                steps.push(format!("#{} -> #{m} via {}", e.from, dsg.action_label(e.action)));
            }
            steps.push(format!("summary #{p} => #{m} is not matched by any push and pop of the same frame"));
            return fail(steps);
        }
    }
    for n in 0..dsg.nodes.len() {
        if !reached.contains(&n) {
            return fail(vec![format!("#{n} is not reachable by a well-bracketed path")]);
        }
    }
    for n in dsg.answers() {
        if !base.contains(&n) {
            let mut steps = path_to(n);
            steps.push(format!("answer #{n} is reached only with a non-empty stack"));
            return fail(steps);
        }
    }
    Balance { ok: true, counterexample: None }
}
