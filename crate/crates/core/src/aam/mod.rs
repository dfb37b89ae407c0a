//! The store-abstracted machine: finite addresses chosen by an allocation
//! policy, a joining store, and an abstract primitive layer. Stepping is the
//! same generic transition function the concrete machine uses.

mod alpha;
mod delta;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use crate::ast::{Expr, ExprKind, Name, PrimOp, Program, SiteId, Term};
use crate::delta::RuntimeError;
use crate::jam::{self, transitions, AllocKind, Closure, Control, Ctx, Domain, Env, Frame, FrameSig, StackOp};

pub use alpha::{alpha, alpha_value, subsumes};
pub use delta::delta_hat;

/// How abstract addresses are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Policy {
    /// A single address for everything.
    Const,
    /// One address per variable name and per allocation site.
    ZeroCfa,
    /// Like `ZeroCfa`, refined by the innermost `k` stack frames.
    Kcfa(usize),
}

impl Policy {
    /// How many stack frames allocation looks at.
    pub fn depth(self) -> usize {
        match self {
            Policy::Const | Policy::ZeroCfa => 0,
            Policy::Kcfa(k) => k,
        }
    }

    pub fn alloc(self, kind: &AllocKind, ctx: &[FrameSig]) -> AbsAddr {
        if self == Policy::Const {
            return AbsAddr::Const;
        }
        let ctx: Ctx = truncate_stack(ctx, self.depth()).into();
        match kind {
            AllocKind::Var(x) => AbsAddr::Var(x.clone(), ctx),
            AllocKind::Ref(site) => AbsAddr::Ref(*site, ctx),
            AllocKind::Field(site, k) => AbsAddr::Field(*site, k.clone(), ctx),
            AllocKind::Overflow(site) => AbsAddr::Overflow(*site, ctx),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Const => f.write_str("const"),
            Policy::ZeroCfa => f.write_str("0cfa"),
            Policy::Kcfa(k) => write!(f, "kcfa:{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unknown policy `{0}` (expected const, 0cfa or kcfa:K)")]
pub struct PolicyError(pub String);

impl FromStr for Policy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "const" => Ok(Policy::Const),
            "0cfa" => Ok(Policy::ZeroCfa),
            _ => s
                .strip_prefix("kcfa:")
                .and_then(|k| k.parse().ok())
                .map(Policy::Kcfa)
                .ok_or_else(|| PolicyError(s.to_string())),
        }
    }
}

/// The first `k` elements.
pub fn truncate_stack<T: Clone>(kont: &[T], k: usize) -> Vec<T> {
    kont[..k.min(kont.len())].to_vec()
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AbsAddr {
    Const,
    Var(Name, Ctx),
    Ref(SiteId, Ctx),
    Field(SiteId, Name, Ctx),
    Overflow(SiteId, Ctx),
}

fn write_ctx(f: &mut fmt::Formatter<'_>, ctx: &[FrameSig]) -> fmt::Result {
    if ctx.is_empty() {
        return Ok(());
    }
    let sigs: Vec<_> = ctx.iter().map(|s| s.to_string()).collect();
    write!(f, "[{}]", sigs.join(","))
}

impl fmt::Display for AbsAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbsAddr::Const => f.write_str("*"),
            AbsAddr::Var(x, ctx) => {
                f.write_str(x)?;
                write_ctx(f, ctx)
            }
            AbsAddr::Ref(site, ctx) => {
                write!(f, "ref{site}")?;
                write_ctx(f, ctx)
            }
            AbsAddr::Field(site, k, ctx) => {
                write!(f, "{site}.{k}")?;
                write_ctx(f, ctx)
            }
            AbsAddr::Overflow(site, ctx) => {
                write!(f, "{site}.?")?;
                write_ctx(f, ctx)
            }
        }
    }
}

/// Abstract records hold addresses, never values, so the value domain stays
/// finite however deeply records nest.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ARecord {
    pub fields: BTreeMap<Name, AbsAddr>,
    /// Where fields with keys outside the known strings live.
    pub unknown: BTreeSet<AbsAddr>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AValue {
    Num,
    /// Any string outside the known set.
    StrTop,
    Str(Name),
    Bool(bool),
    Undef,
    Null,
    Addr(AbsAddr),
    Fun(Term, Env<AbsAddr>),
    Rec(Rc<ARecord>),
}

impl fmt::Display for AValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AValue::Num => f.write_str("num"),
            AValue::StrTop => f.write_str("str"),
            AValue::Str(s) => {
                let mut out = String::new();
                crate::sexpr::quote_string(s, &mut out);
                f.write_str(&out)
            }
            AValue::Bool(b) => write!(f, "{b}"),
            AValue::Undef => f.write_str("undef"),
            AValue::Null => f.write_str("null"),
            AValue::Addr(a) => write!(f, "@{a}"),
            AValue::Fun(t, _) => write!(f, "fun{}", t.site()),
            AValue::Rec(r) => {
                f.write_str("(rec")?;
                for (k, a) in &r.fields {
                    let mut s = String::new();
                    crate::sexpr::quote_string(k, &mut s);
                    write!(f, " ({s} @{a})")?;
                }
                for a in &r.unknown {
                    write!(f, " (? @{a})")?;
                }
                f.write_str(")")
            }
        }
    }
}

pub type AStore = BTreeMap<AbsAddr, BTreeSet<AValue>>;
pub type AControl = Control<AValue, AbsAddr>;
pub type AFrame = Frame<AValue, AbsAddr>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("put of {addrs} addresses with {vals} values")]
pub struct PutLengthMismatch {
    pub addrs: usize,
    pub vals: usize,
}

/// Joins each value into the matching address.
pub fn abstract_put(store: &AStore, addrs: &[AbsAddr], vals: &[AValue]) -> Result<AStore, PutLengthMismatch> {
    if addrs.len() != vals.len() {
        return Err(PutLengthMismatch { addrs: addrs.len(), vals: vals.len() });
    }
    let mut out = store.clone();
    for (a, v) in addrs.iter().zip(vals) {
        out.entry(a.clone()).or_default().insert(v.clone());
    }
    Ok(out)
}

pub fn abstract_get(store: &AStore, addr: &AbsAddr) -> BTreeSet<AValue> {
    store.get(addr).cloned().unwrap_or_default()
}

/// Pointwise inclusion.
pub fn store_leq(small: &AStore, big: &AStore) -> bool {
    small.iter().all(|(a, vs)| vs.is_empty() || big.get(a).is_some_and(|ws| vs.is_subset(ws)))
}

/// The abstract domain for one program under one policy.
#[derive(Clone, Debug)]
pub struct AbsDomain {
    pub policy: Policy,
    /// Strings represented exactly; every other string is `StrTop`.
    pub known: Rc<BTreeSet<Name>>,
}

impl AbsDomain {
    pub fn new(program: &Program, policy: Policy) -> AbsDomain {
        AbsDomain { policy, known: jam::known_strings(program) }
    }

    /// Allocation context for a state whose stack top is `top`.
    pub fn context(&self, top: Option<&StackSym>) -> Vec<FrameSig> {
        let k = self.policy.depth();
        match top {
            Some(t) if k > 0 => {
                let mut ctx = vec![t.frame.sig()];
                ctx.extend(t.below.iter().take(k - 1).copied());
                ctx
            }
            _ => Vec::new(),
        }
    }

    /// The symbol for `frame` pushed on top of `top`.
    pub fn push_sym(&self, top: Option<&StackSym>, frame: AFrame) -> StackSym {
        let k = self.policy.depth();
        let below: Vec<FrameSig> = match top {
            Some(t) if k > 1 => std::iter::once(t.frame.sig()).chain(t.below.iter().copied()).take(k - 1).collect(),
            _ => Vec::new(),
        };
        StackSym { frame, below: below.into() }
    }

    fn lookup_all(&self, store: &AStore, addrs: impl IntoIterator<Item = AbsAddr>) -> Vec<AValue> {
        let mut out = BTreeSet::new();
        for a in addrs {
            out.extend(abstract_get(store, &a));
        }
        out.into_iter().collect()
    }
}

fn record_key<'v>(rec: &'v AValue, key: &'v AValue) -> Result<(&'v ARecord, Option<&'v Name>), RuntimeError> {
    match (rec, key) {
        (AValue::Rec(r), AValue::Str(k)) => Ok((r, Some(k))),
        (AValue::Rec(r), AValue::StrTop) => Ok((r, None)),
        (AValue::Rec(_), _) => Err(RuntimeError::NotAStringKey),
        _ => Err(RuntimeError::NotARecord),
    }
}

impl Domain for AbsDomain {
    type V = AValue;
    type A = AbsAddr;
    type Store = AStore;

    fn constant(&self, e: &Expr) -> AValue {
        match &e.kind {
            ExprKind::Str(s) => self.string(s),
            ExprKind::Num(_) => AValue::Num,
            ExprKind::Bool(b) => AValue::Bool(*b),
            ExprKind::Undef => AValue::Undef,
            ExprKind::Null => AValue::Null,
            _ => panic!("internal invariant: not a constant"),
        }
    }

    fn string(&self, s: &str) -> AValue {
        if self.known.contains(s) {
            AValue::Str(s.into())
        } else {
            AValue::StrTop
        }
    }

    fn closure(&self, term: Term, env: Env<AbsAddr>) -> AValue {
        AValue::Fun(term, env)
    }

    fn address(&self, a: AbsAddr) -> AValue {
        AValue::Addr(a)
    }

    fn as_fun<'v>(&self, v: &'v AValue) -> Option<(&'v Term, &'v Env<AbsAddr>)> {
        match v {
            AValue::Fun(t, env) => Some((t, env)),
            _ => None,
        }
    }

    fn truth(&self, v: &AValue) -> Option<bool> {
        match v {
            AValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    fn lookup(&self, store: &AStore, a: &AbsAddr) -> Vec<AValue> {
        abstract_get(store, a).into_iter().collect()
    }

    fn bind(&self, store: &mut AStore, kind: AllocKind, v: AValue, ctx: &[FrameSig]) -> AbsAddr {
        let a = self.policy.alloc(&kind, ctx);
        store.entry(a.clone()).or_default().insert(v);
        a
    }

    fn assign(&self, store: &mut AStore, addr: &AValue, v: AValue) -> Result<(), RuntimeError> {
        match addr {
            AValue::Addr(a) => {
                store.entry(a.clone()).or_default().insert(v);
                Ok(())
            }
            _ => Err(RuntimeError::NotAnAddress),
        }
    }

    fn deref(&self, store: &AStore, addr: &AValue) -> Result<Vec<AValue>, RuntimeError> {
        match addr {
            AValue::Addr(a) => Ok(self.lookup(store, a)),
            _ => Err(RuntimeError::NotAnAddress),
        }
    }

    fn make_record(&self, store: &mut AStore, site: SiteId, fields: Vec<(Name, AValue)>, ctx: &[FrameSig]) -> AValue {
        let mut rec = ARecord::default();
        for (k, v) in fields {
            if self.known.contains(&k) {
                let a = self.bind(store, AllocKind::Field(site, k.clone()), v, ctx);
                rec.fields.insert(k, a);
            } else {
                rec.unknown.insert(self.bind(store, AllocKind::Overflow(site), v, ctx));
            }
        }
        AValue::Rec(Rc::new(rec))
    }

    fn get_field(&self, store: &AStore, rec: &AValue, key: &AValue) -> Result<Vec<AValue>, RuntimeError> {
        let (r, key) = record_key(rec, key)?;
        Ok(match key {
            Some(k) => match r.fields.get(k) {
                Some(a) => self.lookup(store, a),
                None => vec![AValue::Undef],
            },
            None => {
                let addrs = r.fields.values().chain(&r.unknown).cloned();
                let mut vs = self.lookup_all(store, addrs);
                if !vs.contains(&AValue::Undef) {
                    vs.push(AValue::Undef);
                }
                vs
            }
        })
    }

    fn update_field(
        &self,
        store: &mut AStore,
        rec: &AValue,
        key: &AValue,
        v: AValue,
        site: SiteId,
        ctx: &[FrameSig],
    ) -> Result<AValue, RuntimeError> {
        let (r, key) = record_key(rec, key)?;
        let mut r = r.clone();
        match key {
            Some(k) => {
                let a = self.bind(store, AllocKind::Field(site, k.clone()), v, ctx);
                r.fields.insert(k.clone(), a);
            }
            None => {
                r.unknown.insert(self.bind(store, AllocKind::Overflow(site), v, ctx));
            }
        }
        Ok(AValue::Rec(Rc::new(r)))
    }

    fn delete_field(&self, rec: &AValue, key: &AValue) -> Result<AValue, RuntimeError> {
        let (r, key) = record_key(rec, key)?;
        match key {
            Some(k) => {
                let mut r = r.clone();
                r.fields.remove(k);
                Ok(AValue::Rec(Rc::new(r)))
            }
            None => Ok(rec.clone()),
        }
    }

    fn delta(&self, op: PrimOp, args: &[AValue]) -> Vec<Result<(AValue, Option<String>), RuntimeError>> {
        delta_hat(&self.known, op, args)
    }
}

/// A stack symbol: an abstract frame together with the signatures of the
/// frames beneath it that allocation can observe.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StackSym {
    pub frame: AFrame,
    pub below: Ctx,
}

/// A control state of the pushdown system: store plus control.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Node {
    pub store: Rc<AStore>,
    pub control: AControl,
}

impl Node {
    pub fn is_answer(&self) -> bool {
        matches!(self.control, Control::Done(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StackAction {
    Noop,
    Push(StackSym),
    Pop(StackSym),
    Exchange(StackSym, StackSym),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AStep {
    pub node: Node,
    pub action: StackAction,
    pub effect: Option<String>,
}

/// The initial abstract state.
pub fn inject(program: &Program, policy: Policy) -> (AbsDomain, Node) {
    let d = AbsDomain::new(program, policy);
    let control = Control::Ev(Rc::new(Closure::Term(program.root(), Rc::new(BTreeMap::new()))));
    (d, Node { store: Rc::new(AStore::new()), control })
}

/// Controls and actions reachable in one step, reading and joining into
/// `store`.
pub fn astep_in(
    d: &AbsDomain,
    store: &mut AStore,
    control: &AControl,
    top: Option<&StackSym>,
) -> Vec<(AControl, StackAction, Option<String>)> {
    let ctx = d.context(top);
    let succs = transitions(d, store, control, top.map(|s| &s.frame), &ctx);
    let mut out: Vec<_> = succs
        .into_iter()
        .map(|s| {
            let action = match s.op {
                StackOp::Noop => StackAction::Noop,
                StackOp::Push(f) => StackAction::Push(d.push_sym(top, f)),
                StackOp::Pop => StackAction::Pop(top.expect("pop without a top").clone()),
                StackOp::Exchange(f) => {
                    let t = top.expect("exchange without a top");
                    StackAction::Exchange(t.clone(), StackSym { frame: f, below: t.below.clone() })
                }
            };
            (s.control, action, s.effect)
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// All successors of `node` when the stack top is `top` (`None` for the
/// empty stack).
pub fn astep(d: &AbsDomain, node: &Node, top: Option<&StackSym>) -> Vec<AStep> {
    let mut store = (*node.store).clone();
    let succs = astep_in(d, &mut store, &node.control, top);
    let store = if store == *node.store { node.store.clone() } else { Rc::new(store) };
    succs
        .into_iter()
        .map(|(control, action, effect)| AStep { node: Node { store: store.clone(), control }, action, effect })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jam::{Mode, RedexKind};
    use crate::sexpr::parse_str;

    fn program(src: &str) -> Program {
        Program::new(&parse_str(src).unwrap()).unwrap()
    }

    #[test]
    fn policies_parse() {
        assert_eq!("const".parse::<Policy>().unwrap(), Policy::Const);
        assert_eq!("0cfa".parse::<Policy>().unwrap(), Policy::ZeroCfa);
        assert_eq!("kcfa:2".parse::<Policy>().unwrap(), Policy::Kcfa(2));
        assert!("kcfa:-1".parse::<Policy>().is_err());
        assert!("1cfa".parse::<Policy>().is_err());
        assert_eq!(Policy::Kcfa(3).to_string(), "kcfa:3");
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_stack(&[1, 2, 3], 0), Vec::<i32>::new());
        assert_eq!(truncate_stack::<i32>(&[], 4), Vec::<i32>::new());
        assert_eq!(truncate_stack(&[1, 2], 1), vec![1]);
    }

    #[test]
    fn put_and_get() {
        let a = AbsAddr::Var("a".into(), Rc::from(vec![]));
        let s = abstract_put(&AStore::new(), &[a.clone()], &[AValue::Num]).unwrap();
        assert_eq!(abstract_get(&s, &a), BTreeSet::from([AValue::Num]));
        let s2 = abstract_put(&s, &[a.clone()], &[AValue::Bool(true)]).unwrap();
        assert_eq!(abstract_get(&s2, &a), BTreeSet::from([AValue::Num, AValue::Bool(true)]));
        assert_eq!(abstract_put(&s2, &[a.clone()], &[AValue::Num]).unwrap(), s2);
        assert!(abstract_get(&AStore::new(), &a).is_empty());
        assert!(abstract_put(&s, &[a], &[]).is_err());
    }

    #[test]
    fn allocation() {
        let x = AllocKind::Var("x".into());
        let sig = FrameSig { tag: jam::FrameTag::Let, site: SiteId(4), hole: 0 };
        assert_eq!(Policy::Const.alloc(&x, &[sig]), AbsAddr::Const);
        assert_eq!(Policy::ZeroCfa.alloc(&x, &[sig]), AbsAddr::Var("x".into(), Rc::from(vec![])));
        assert_eq!(Policy::Kcfa(0).alloc(&x, &[sig]), Policy::ZeroCfa.alloc(&x, &[sig]));
        assert_eq!(Policy::Kcfa(1).alloc(&x, &[sig, sig]), AbsAddr::Var("x".into(), Rc::from(vec![sig])));
    }

    #[test]
    fn deterministic_rules_lift() {
        let p = program("(if true 1 2)");
        let (d, mut node) = inject(&p, Policy::ZeroCfa);
        let mut top: Option<StackSym> = None;
        loop {
            let succs = astep(&d, &node, top.as_ref());
            assert_eq!(succs.len(), 1);
            let s = succs.into_iter().next().unwrap();
            if let Control::Ap(r) = &node.control {
                if matches!(r.kind, RedexKind::If { .. }) {
                    assert!(matches!(s.action, StackAction::Noop));
                    assert_eq!(s.node.control.mode(), Mode::Ev);
                    break;
                }
            }
            top = match s.action {
                StackAction::Push(f) | StackAction::Exchange(_, f) => Some(f),
                StackAction::Pop(_) => None,
                StackAction::Noop => top,
            };
            node = s.node;
        }
    }

    #[test]
    fn lookup_splits() {
        let d = AbsDomain::new(&program("1"), Policy::ZeroCfa);
        let a = AbsAddr::Var("x".into(), Rc::from(vec![]));
        let store = abstract_put(&AStore::new(), &[a.clone(), a.clone()], &[AValue::Num, AValue::StrTop]).unwrap();
        let env: Env<AbsAddr> = Rc::new(BTreeMap::from([(Name::from("x"), a)]));
        let control = Control::Ap(jam::Redex { site: SiteId(0), kind: RedexKind::Var { x: "x".into(), env } });
        let node = Node { store: Rc::new(store), control };
        let succs = astep(&d, &node, None);
        let vs: BTreeSet<_> = succs.iter().map(|s| s.node.control.clone()).collect();
        assert_eq!(vs, BTreeSet::from([Control::Co(AValue::Num), Control::Co(AValue::StrTop)]));
    }

    #[test]
    fn branching_on_number_throws() {
        let d = AbsDomain::new(&program("1"), Policy::ZeroCfa);
        let control = Control::Ap(jam::Redex {
            site: SiteId(0),
            kind: RedexKind::If {
                cond: AValue::Num,
                then: Rc::new(Closure::Val(AValue::Undef)),
                els: Rc::new(Closure::Val(AValue::Undef)),
            },
        });
        let succs = astep(&d, &Node { store: Rc::new(AStore::new()), control }, None);
        assert_eq!(succs.len(), 1);
        assert!(matches!(&succs[0].node.control, Control::Ap(r) if matches!(r.kind, RedexKind::Throw(_))));
    }
}
