//! Pushdown reachability for the abstract machine.
//!
//! Exploration saturates a Dyck state graph: nodes are abstract control
//! states, edges carry one stack action, and each node records the stack
//! tops it can be reached with together with the node that pushed them.
//! Pops only return to the continuations that pushed the popped frame, so
//! calls and returns are matched exactly without enumerating stacks.

mod check;
mod export;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::rc::Rc;

use crate::aam::{self, AControl, AStore, AValue, AbsDomain, Node, Policy, StackAction, StackSym};
use crate::ast::Program;
use crate::calculus::Outcome;
use crate::jam::Control;

pub use check::{accepts, balanced_check, Balance};
pub use export::{to_dot, to_json, GraphJson};

pub type NodeId = usize;
pub type SymId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Noop,
    Push(SymId),
    Pop(SymId),
    Exchange(SymId, SymId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: NodeId,
    pub action: Action,
    pub to: NodeId,
}

/// A way of being at a node: with an empty stack, or with `sym` on top,
/// pushed at `origin` while `below` was the top there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entry {
    Bottom,
    Top { sym: SymId, origin: NodeId, below: Option<SymId> },
}

impl Entry {
    pub fn sym(&self) -> Option<SymId> {
        match self {
            Entry::Bottom => None,
            Entry::Top { sym, .. } => Some(*sym),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub max_nodes: usize,
    pub max_edges: usize,
    /// Share one global store among all nodes.
    pub widen: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_nodes: 100_000, max_edges: 1_000_000, widen: false }
    }
}

#[derive(Clone, Debug)]
pub struct Dsg {
    pub policy: Policy,
    pub nodes: Vec<Node>,
    pub syms: Vec<StackSym>,
    pub edges: BTreeSet<Edge>,
    /// Pairs (p, n) such that a frame pushed at p is popped into n.
    pub summaries: BTreeSet<(NodeId, NodeId)>,
    pub tops: Vec<BTreeSet<Entry>>,
    pub root: NodeId,
    /// A budget was exhausted; the graph under-approximates.
    pub truncated: bool,
    pub widened: bool,
    /// Text that `print` may write.
    pub effects: BTreeSet<String>,
    index: HashMap<Node, NodeId>,
    sym_index: HashMap<StackSym, SymId>,
}

impl Dsg {
    pub fn node_id(&self, node: &Node) -> Option<NodeId> {
        if self.widened {
            let key = Node { store: Rc::new(AStore::new()), control: node.control.clone() };
            return self.index.get(&key).copied();
        }
        self.index.get(node).copied()
    }

    pub fn sym_id(&self, sym: &StackSym) -> Option<SymId> {
        self.sym_index.get(sym).copied()
    }

    pub fn answers(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].is_answer())
    }

    /// Nodes with this control.
    pub fn nodes_with_control<'a>(&'a self, control: &'a AControl) -> impl Iterator<Item = NodeId> + 'a {
        (0..self.nodes.len()).filter(move |&n| self.nodes[n].control == *control)
    }

    pub fn action_label(&self, a: Action) -> String {
        match a {
            Action::Noop => "noop".into(),
            Action::Push(s) => format!("push {}", sym_label(&self.syms[s])),
            Action::Pop(s) => format!("pop {}", sym_label(&self.syms[s])),
            Action::Exchange(s, t) => format!("exchange {} {}", sym_label(&self.syms[s]), sym_label(&self.syms[t])),
        }
    }

    /// Some node covering `node` at which `stack` (innermost first) is
    /// realizable.
    pub fn find_covering(&self, node: &Node, stack: &[StackSym]) -> Option<NodeId> {
        self.nodes_with_control(&node.control)
            .find(|&n| aam::subsumes(&self.nodes[n], node) && check::accepts_id(self, n, stack))
    }
}

pub fn sym_label(s: &StackSym) -> String {
    let mut out = s.frame.sig().to_string();
    if !s.below.is_empty() {
        let below: Vec<_> = s.below.iter().map(|b| b.to_string()).collect();
        out.push_str(&format!("[{}]", below.join(",")));
    }
    out
}

/// An answer node's outcome.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct AbsAnswer {
    pub node: NodeId,
    pub outcome: Outcome<AValue>,
}

impl fmt::Display for AbsAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.outcome {
            Outcome::Value(v) => write!(f, "value {v}"),
            Outcome::Error(v) => write!(f, "err {v}"),
            Outcome::Broken(l, v) => write!(f, "break {l} {v}"),
        }
    }
}

pub fn reachable_answers(dsg: &Dsg) -> Vec<AbsAnswer> {
    dsg.answers()
        .map(|n| match &dsg.nodes[n].control {
            Control::Done(o) => AbsAnswer { node: n, outcome: o.clone() },
            _ => unreachable!(),
        })
        .collect()
}

/// Chooses which pending work item to process next, given how many there
/// are.
pub type Schedule<'a> = &'a mut dyn FnMut(usize) -> usize;

struct Explorer<'a> {
    d: AbsDomain,
    limits: Limits,
    g: Dsg,
    work: VecDeque<(NodeId, Entry)>,
    succ_cache: HashMap<(NodeId, Option<SymId>), Vec<(NodeId, Action)>>,
    returns: HashMap<(NodeId, Option<SymId>), BTreeSet<NodeId>>,
    /// Widening: the store every node reads, and what this round wrote.
    global: Option<(Rc<AStore>, AStore)>,
    schedule: Option<Schedule<'a>>,
}

impl<'a> Explorer<'a> {
    fn new(d: AbsDomain, limits: Limits, global: Option<Rc<AStore>>, schedule: Option<Schedule<'a>>) -> Self {
        let g = Dsg {
            policy: d.policy,
            nodes: Vec::new(),
            syms: Vec::new(),
            edges: BTreeSet::new(),
            summaries: BTreeSet::new(),
            tops: Vec::new(),
            root: 0,
            truncated: false,
            widened: global.is_some(),
            effects: BTreeSet::new(),
            index: HashMap::new(),
            sym_index: HashMap::new(),
        };
        let global = global.map(|s| {
            let copy = (*s).clone();
            (s, copy)
        });
        Explorer { d, limits, g, work: VecDeque::new(), succ_cache: HashMap::new(), returns: HashMap::new(), global, schedule }
    }

    fn intern(&mut self, node: Node) -> Option<NodeId> {
        if let Some(&id) = self.g.index.get(&node) {
            return Some(id);
        }
        if self.g.nodes.len() >= self.limits.max_nodes {
            self.g.truncated = true;
            return None;
        }
        let id = self.g.nodes.len();
        self.g.nodes.push(node.clone());
        self.g.tops.push(BTreeSet::new());
        self.g.index.insert(node, id);
        Some(id)
    }

    fn intern_sym(&mut self, s: StackSym) -> SymId {
        if let Some(&id) = self.g.sym_index.get(&s) {
            return id;
        }
        let id = self.g.syms.len();
        self.g.syms.push(s.clone());
        self.g.sym_index.insert(s, id);
        id
    }

    fn add_entry(&mut self, n: NodeId, e: Entry) {
        if self.g.tops[n].insert(e) {
            self.work.push_back((n, e));
        }
    }

    fn successors(&mut self, n: NodeId, top: Option<SymId>) -> Vec<(NodeId, Action)> {
        if let Some(s) = self.succ_cache.get(&(n, top)) {
            return s.clone();
        }
        let top_sym = top.map(|t| self.g.syms[t].clone());
        let node = self.g.nodes[n].clone();
        let steps: Vec<(Node, StackAction, Option<String>)> = match &mut self.global {
            None => aam::astep(&self.d, &node, top_sym.as_ref()).into_iter().map(|s| (s.node, s.action, s.effect)).collect(),
            Some((read, written)) => {
                let mut store = (**read).clone();
                let out = aam::astep_in(&self.d, &mut store, &node.control, top_sym.as_ref());
                for (a, vs) in store {
                    written.entry(a).or_default().extend(vs);
                }
                out.into_iter().map(|(control, action, effect)| (Node { store: node.store.clone(), control }, action, effect)).collect()
            }
        };
        let mut out = Vec::new();
        for (m, action, effect) in steps {
            if self.g.edges.len() >= self.limits.max_edges {
                self.g.truncated = true;
                break;
            }
            let Some(m) = self.intern(m) else { continue };
            let action = match action {
                StackAction::Noop => Action::Noop,
                StackAction::Push(s) => Action::Push(self.intern_sym(s)),
                StackAction::Pop(s) => Action::Pop(self.intern_sym(s)),
                StackAction::Exchange(s, t) => Action::Exchange(self.intern_sym(s), self.intern_sym(t)),
            };
            self.g.effects.extend(effect);
            self.g.edges.insert(Edge { from: n, action, to: m });
            out.push((m, action));
        }
        self.succ_cache.insert((n, top), out.clone());
        out
    }

    fn next_work(&mut self) -> Option<(NodeId, Entry)> {
        match &mut self.schedule {
            None => self.work.pop_front(),
            Some(pick) if !self.work.is_empty() => {
                let i = pick(self.work.len()) % self.work.len();
                self.work.swap_remove_back(i)
            }
            Some(_) => None,
        }
    }

    fn run(&mut self, root: Node) {
        let root = self.intern(root).expect("node budget must admit the root");
        self.g.root = root;
        self.add_entry(root, Entry::Bottom);
        while let Some((n, e)) = self.next_work() {
            let top = e.sym();
            if let Some(rets) = self.returns.get(&(n, top)).cloned() {
                for m in rets {
                    self.add_entry(m, e);
                }
            }
            for (m, action) in self.successors(n, top) {
                match (action, e) {
                    (Action::Noop, _) => self.add_entry(m, e),
                    (Action::Push(s), _) => self.add_entry(m, Entry::Top { sym: s, origin: n, below: top }),
                    (Action::Exchange(_, t), Entry::Top { origin, below, .. }) => {
                        self.add_entry(m, Entry::Top { sym: t, origin, below })
                    }
                    (Action::Pop(_), Entry::Top { origin, below, .. }) => {
                        self.g.summaries.insert((origin, m));
                        if self.returns.entry((origin, below)).or_default().insert(m) {
                            let inherited: Vec<Entry> =
                                self.g.tops[origin].iter().filter(|t| t.sym() == below).copied().collect();
                            for t in inherited {
                                self.add_entry(m, t);
                            }
                        }
                    }
                    (_, Entry::Bottom) => unreachable!("stack action on the empty stack"),
                }
            }
        }
    }
}

/// Builds the Dyck state graph of `program` under `policy`.
pub fn explore(program: &Program, policy: Policy, limits: Limits) -> Dsg {
    explore_scheduled(program, policy, limits, None)
}

/// Like [`explore`] with a caller-chosen worklist order.
pub fn explore_scheduled(program: &Program, policy: Policy, limits: Limits, mut schedule: Option<Schedule<'_>>) -> Dsg {
    let (d, root) = aam::inject(program, policy);
    if !limits.widen {
        let mut x = Explorer::new(d, limits, None, schedule);
        x.run(root);
        return x.g;
    }
    let mut global = Rc::new(AStore::new());
    loop {
        let sched = schedule.as_mut().map(|s| &mut **s as &mut dyn FnMut(usize) -> usize);
        let mut x = Explorer::new(d.clone(), limits, Some(global.clone()), sched);
        x.run(Node { store: Rc::new(AStore::new()), control: root.control.clone() });
        let (_, written) = x.global.take().unwrap();
        if written == *global || x.g.truncated {
            let mut g = x.g;
            let last = Rc::new(written);
            for n in &mut g.nodes {
                n.store = last.clone();
            }
            return g;
        }
        global = Rc::new(written);
    }
}

/// Addresses in the union of all node stores, with their joined values.
pub fn joined_store(dsg: &Dsg) -> BTreeMap<aam::AbsAddr, BTreeSet<AValue>> {
    let mut out = AStore::new();
    for n in &dsg.nodes {
        for (a, vs) in n.store.iter() {
            out.entry(a.clone()).or_default().extend(vs.iter().cloned());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jam::Mode;
    use crate::sexpr::parse_str;

    fn program(src: &str) -> Program {
        Program::new(&parse_str(src).unwrap()).unwrap()
    }

    #[test]
    fn constant_program() {
        let g = explore(&program("1"), Policy::ZeroCfa, Limits::default());
        let modes: Vec<_> = g.nodes.iter().map(|n| n.control.mode()).collect();
        assert_eq!(modes, vec![Mode::Ev, Mode::Co, Mode::Done]);
        assert!(!g.edges.iter().any(|e| matches!(e.action, Action::Push(_))));
        let answers = reachable_answers(&g);
        assert_eq!(answers.len(), 1);
        assert_eq!(answers[0].to_string(), "value num");
    }

    #[test]
    fn divergent_loop_is_finite() {
        let g = explore(&program("(while true undef)"), Policy::ZeroCfa, Limits::default());
        assert!(!g.truncated);
        assert!(reachable_answers(&g).is_empty());
    }

    #[test]
    fn widening_terminates() {
        let p = program("(let (x (ref 0)) (seq (set! x \"a\") (deref x)))");
        let g = explore(&p, Policy::ZeroCfa, Limits { widen: true, ..Limits::default() });
        let answers: BTreeSet<_> = reachable_answers(&g).iter().map(|a| a.to_string()).collect();
        assert!(answers.contains("value num"));
        assert!(answers.contains("value \"a\""), "{answers:?}");
        assert!(g.nodes.windows(2).all(|w| Rc::ptr_eq(&w[0].store, &w[1].store)));
    }

    #[test]
    fn budget_truncates() {
        let g = explore(&program("(op + 1 (op + 2 3))"), Policy::ZeroCfa, Limits { max_nodes: 3, ..Limits::default() });
        assert!(g.truncated);
        assert_eq!(g.nodes.len(), 3);
    }
}
