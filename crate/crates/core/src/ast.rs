//! Abstract syntax of the core calculus.
//!
//! Every node carries a [`SiteId`]. Sites are assigned by
//! [`annotate_sites`] in depth-first pre-order and identify program points
//! for allocation policies and flow queries.

use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

pub type Name = Rc<str>;

/// A program point. Unique per subterm once a tree has been annotated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub Name);

impl Label {
    pub fn new(name: &str) -> Self {
        Label(name.into())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The fixed set of primitive operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrimOp {
    Add,
    Sub,
    Mul,
    Div,
    StrictEq,
    Lt,
    StrConcat,
    TypeOf,
    NumToString,
    StrLength,
    Print,
}

impl PrimOp {
    pub const ALL: [PrimOp; 11] = [
        PrimOp::Add,
        PrimOp::Sub,
        PrimOp::Mul,
        PrimOp::Div,
        PrimOp::StrictEq,
        PrimOp::Lt,
        PrimOp::StrConcat,
        PrimOp::TypeOf,
        PrimOp::NumToString,
        PrimOp::StrLength,
        PrimOp::Print,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimOp::Add => "+",
            PrimOp::Sub => "-",
            PrimOp::Mul => "*",
            PrimOp::Div => "/",
            PrimOp::StrictEq => "===",
            PrimOp::Lt => "<",
            PrimOp::StrConcat => "string-+",
            PrimOp::TypeOf => "typeof",
            PrimOp::NumToString => "num->string",
            PrimOp::StrLength => "string-length",
            PrimOp::Print => "print",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            PrimOp::Add
            | PrimOp::Sub
            | PrimOp::Mul
            | PrimOp::Div
            | PrimOp::StrictEq
            | PrimOp::Lt
            | PrimOp::StrConcat => 2,
            PrimOp::TypeOf | PrimOp::NumToString | PrimOp::StrLength | PrimOp::Print => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<PrimOp> {
        PrimOp::ALL.iter().copied().find(|op| op.name() == name)
    }
}

impl fmt::Display for PrimOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub site: SiteId,
    pub kind: ExprKind,
}

/// Shared pointer to a subterm.
pub type P = Rc<Expr>;

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    Var(Name),
    Str(Name),
    Num(f64),
    Bool(bool),
    Undef,
    Null,
    /// Runtime-only store location. Never produced by the parser.
    Addr(usize),
    Fun(Vec<Name>, P),
    Rec(Vec<(Name, P)>),
    Let(Name, P, P),
    App(P, Vec<P>),
    Get(P, P),
    Upd(P, P, P),
    Del(P, P),
    Set(P, P),
    Ref(P),
    Deref(P),
    If(P, P, P),
    Seq(P, P),
    While(P, P),
    Label(Label, P),
    Break(Label, P),
    TryCatch(P, Name, P),
    TryFinally(P, P),
    Throw(P),
    Op(PrimOp, Vec<P>),
}

impl Expr {
    pub fn new(kind: ExprKind) -> Expr {
        Expr { site: SiteId::default(), kind }
    }

    pub fn rc(kind: ExprKind) -> P {
        Rc::new(Expr::new(kind))
    }

    /// Immediate subterms in evaluation order.
    pub fn children(&self) -> Vec<&P> {
        use ExprKind::*;
        match &self.kind {
            Var(_) | Str(_) | Num(_) | Bool(_) | Undef | Null | Addr(_) => vec![],
            Fun(_, body) => vec![body],
            Rec(fields) => fields.iter().map(|(_, e)| e).collect(),
            Let(_, a, b) | Get(a, b) | Del(a, b) | Set(a, b) | Seq(a, b) | While(a, b) => vec![a, b],
            TryCatch(a, _, b) | TryFinally(a, b) => vec![a, b],
            App(f, args) => std::iter::once(f).chain(args.iter()).collect(),
            Upd(a, b, c) | If(a, b, c) => vec![a, b, c],
            Ref(a) | Deref(a) | Throw(a) | Label(_, a) | Break(_, a) => vec![a],
            Op(_, args) => args.iter().collect(),
        }
    }

    /// Rebuilds this node with new children (same order as [`Expr::children`]).
    pub fn with_children(&self, mut kids: Vec<P>) -> Expr {
        use ExprKind::*;
        let mut take = || kids.remove(0);
        let kind = match &self.kind {
            Var(_) | Str(_) | Num(_) | Bool(_) | Undef | Null | Addr(_) => self.kind.clone(),
            Fun(params, _) => Fun(params.clone(), take()),
            Rec(fields) => Rec(fields.iter().map(|(k, _)| (k.clone(), take())).collect()),
            Let(x, _, _) => {
                let a = take();
                Let(x.clone(), a, take())
            }
            Get(_, _) => {
                let a = take();
                Get(a, take())
            }
            Del(_, _) => {
                let a = take();
                Del(a, take())
            }
            Set(_, _) => {
                let a = take();
                Set(a, take())
            }
            Seq(_, _) => {
                let a = take();
                Seq(a, take())
            }
            While(_, _) => {
                let a = take();
                While(a, take())
            }
            TryCatch(_, x, _) => {
                let a = take();
                TryCatch(a, x.clone(), take())
            }
            TryFinally(_, _) => {
                let a = take();
                TryFinally(a, take())
            }
            App(_, args) => {
                let f = take();
                App(f, (0..args.len()).map(|_| take()).collect())
            }
            Upd(_, _, _) => {
                let a = take();
                let b = take();
                Upd(a, b, take())
            }
            If(_, _, _) => {
                let a = take();
                let b = take();
                If(a, b, take())
            }
            Ref(_) => Ref(take()),
            Deref(_) => Deref(take()),
            Throw(_) => Throw(take()),
            Label(l, _) => Label(l.clone(), take()),
            Break(l, _) => Break(l.clone(), take()),
            Op(op, args) => Op(*op, (0..args.len()).map(|_| take()).collect()),
        };
        Expr { site: self.site, kind }
    }

    /// How many leading [`Expr::children`] are evaluated before this node
    /// contracts. The remaining children are delayed (bodies, branches,
    /// handlers, finalizers, loop parts).
    pub fn evaluated_children(&self) -> usize {
        use ExprKind::*;
        match &self.kind {
            Var(_) | Str(_) | Num(_) | Bool(_) | Undef | Null | Addr(_) | Fun(..) | While(..) => 0,
            Rec(fields) => fields.len(),
            App(_, args) => args.len() + 1,
            Op(_, args) => args.len(),
            Get(..) | Del(..) | Set(..) => 2,
            Upd(..) => 3,
            Let(..) | If(..) | Seq(..) | TryCatch(..) | TryFinally(..) => 1,
            Ref(_) | Deref(_) | Throw(_) | Label(..) | Break(..) => 1,
        }
    }

    /// Syntactic values: constants, addresses, functions and records of values.
    pub fn is_value(&self) -> bool {
        use ExprKind::*;
        match &self.kind {
            Str(_) | Num(_) | Bool(_) | Undef | Null | Addr(_) | Fun(..) => true,
            Rec(fields) => fields.iter().all(|(_, e)| e.is_value()),
            _ => false,
        }
    }

    /// Structural equality ignoring site labels.
    pub fn same_shape(&self, other: &Expr) -> bool {
        use ExprKind::*;
        let heads_match = match (&self.kind, &other.kind) {
            (Var(a), Var(b)) | (Str(a), Str(b)) => a == b,
            (Num(a), Num(b)) => a.to_bits() == b.to_bits(),
            (Bool(a), Bool(b)) => a == b,
            (Undef, Undef) | (Null, Null) => true,
            (Addr(a), Addr(b)) => a == b,
            (Fun(a, _), Fun(b, _)) => a == b,
            (Rec(a), Rec(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.0 == y.0),
            (Let(x, _, _), Let(y, _, _)) => x == y,
            (App(_, a), App(_, b)) => a.len() == b.len(),
            (Get(..), Get(..))
            | (Upd(..), Upd(..))
            | (Del(..), Del(..))
            | (Set(..), Set(..))
            | (Ref(_), Ref(_))
            | (Deref(_), Deref(_))
            | (If(..), If(..))
            | (Seq(..), Seq(..))
            | (While(..), While(..))
            | (TryFinally(..), TryFinally(..))
            | (Throw(_), Throw(_)) => true,
            (Label(a, _), Label(b, _)) | (Break(a, _), Break(b, _)) => a == b,
            (TryCatch(_, x, _), TryCatch(_, y, _)) => x == y,
            (Op(a, x), Op(b, y)) => a == b && x.len() == y.len(),
            _ => false,
        };
        heads_match
            && self
                .children()
                .into_iter()
                .zip(other.children())
                .all(|(a, b)| a.same_shape(b))
    }

    pub fn contains_addr(&self) -> bool {
        matches!(self.kind, ExprKind::Addr(_)) || self.children().into_iter().any(|c| c.contains_addr())
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + self.children().into_iter().map(|c| c.size()).sum::<usize>()
    }

    /// Visits every node in pre-order.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }
}

/// Renumbers sites in depth-first pre-order starting at zero.
pub fn annotate_sites(expr: &Expr) -> Expr {
    fn go(e: &Expr, next: &mut u32) -> Expr {
        let site = SiteId(*next);
        *next += 1;
        let kids = e.children().into_iter().map(|c| Rc::new(go(c, next))).collect();
        let mut out = e.with_children(kids);
        out.site = site;
        out
    }
    go(expr, &mut 0)
}

/// Free variables under the binding forms `fun`, `let` (body only) and
/// `try-catch` (handler only).
pub fn free_vars(expr: &Expr) -> BTreeSet<Name> {
    fn go(e: &Expr, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
        use ExprKind::*;
        match &e.kind {
            Var(x) => {
                if !bound.contains(x) {
                    out.insert(x.clone());
                }
            }
            Fun(params, body) => {
                let n = bound.len();
                bound.extend(params.iter().cloned());
                go(body, bound, out);
                bound.truncate(n);
            }
            Let(x, rhs, body) => {
                go(rhs, bound, out);
                bound.push(x.clone());
                go(body, bound, out);
                bound.pop();
            }
            TryCatch(body, x, handler) => {
                go(body, bound, out);
                bound.push(x.clone());
                go(handler, bound, out);
                bound.pop();
            }
            _ => {
                for c in e.children() {
                    go(c, bound, out);
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    go(expr, &mut Vec::new(), &mut out);
    out
}

/// Every string constant in the program, including record keys.
pub fn string_constants(expr: &Expr) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    expr.walk(&mut |e| match &e.kind {
        ExprKind::Str(s) => {
            out.insert(s.clone());
        }
        ExprKind::Rec(fields) => out.extend(fields.iter().map(|(k, _)| k.clone())),
        _ => {}
    });
    out
}

/// A subterm of an annotated program. Equality, ordering and hashing go
/// through the site label, so two terms compare equal only if they are the
/// same program point.
#[derive(Clone)]
pub struct Term(pub P);

impl Term {
    pub fn site(&self) -> SiteId {
        self.0.site
    }

    pub fn expr(&self) -> &Expr {
        &self.0
    }

    pub fn kind(&self) -> &ExprKind {
        &self.0.kind
    }
}

impl PartialEq for Term {
    fn eq(&self, other: &Self) -> bool {
        self.0.site == other.0.site
    }
}

impl Eq for Term {}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Term {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.site.cmp(&other.0.site)
    }
}

impl Hash for Term {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.site.hash(state)
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0.site)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProgramError {
    #[error("program is not closed: unbound variable `{0}`")]
    Open(Name),
    #[error("program contains a literal address")]
    LiteralAddress,
}

/// A closed, address-free, site-annotated program ready for the machines.
#[derive(Clone, Debug)]
pub struct Program {
    root: P,
    strings: Rc<BTreeSet<Name>>,
    sites: u32,
}

impl Program {
    pub fn new(expr: &Expr) -> Result<Program, ProgramError> {
        if let Some(x) = free_vars(expr).into_iter().next() {
            return Err(ProgramError::Open(x));
        }
        if expr.contains_addr() {
            return Err(ProgramError::LiteralAddress);
        }
        let root = Rc::new(annotate_sites(expr));
        let strings = Rc::new(string_constants(&root));
        let sites = root.size() as u32;
        Ok(Program { root, strings, sites })
    }

    pub fn root(&self) -> Term {
        Term(self.root.clone())
    }

    pub fn expr(&self) -> &Expr {
        &self.root
    }

    /// String constants occurring in the program text.
    pub fn strings(&self) -> &Rc<BTreeSet<Name>> {
        &self.strings
    }

    pub fn site_count(&self) -> u32 {
        self.sites
    }

    /// Finds the subterm labelled `site`.
    pub fn subterm(&self, site: SiteId) -> Option<&Expr> {
        let mut found = None;
        self.root.walk(&mut |e| {
            if e.site == site && found.is_none() {
                found = Some(e);
            }
        });
        found
    }
}
