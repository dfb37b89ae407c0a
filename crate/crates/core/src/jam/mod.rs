//! The eval/continue/apply machine.
//!
//! The transition rules are written once, generically over a [`Domain`]
//! that supplies values, addresses and store operations. The concrete
//! machine in this module and the abstract machine in `aam` are two
//! instances of the same rules.

mod concrete;

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use crate::ast::{Expr, ExprKind, Label, Name, PrimOp, SiteId, Term};
use crate::calculus::Outcome;
use crate::delta::RuntimeError;

pub use concrete::{
    inject, known_strings, run, run_observed, step, step_apply, step_continue, step_eval, trace_line, unload_value,
    AllocOrigin, Cell, Concrete, MControl, MFrame, MRecord, MStore, MValue, MachineAnswer, Origin, RunResult, State,
    Stepped, MAX_CONTEXT,
};

/// Variables to addresses.
pub type Env<A> = Rc<BTreeMap<Name, A>>;

/// A term awaiting evaluation, or a composite built by the loop and
/// finalizer rules.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Closure<V, A> {
    Term(Term, Env<A>),
    Val(V),
    Seq(Rc<Closure<V, A>>, Rc<Closure<V, A>>, SiteId),
    While(Rc<Closure<V, A>>, Rc<Closure<V, A>>, SiteId),
    Throw(Rc<Closure<V, A>>, SiteId),
    Break(Label, Rc<Closure<V, A>>, SiteId),
}

/// A single evaluation-context frame: the stack alphabet.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Frame<V, A> {
    pub site: SiteId,
    pub kind: FrameKind<V, A>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind<V, A> {
    Let { x: Name, body: Term, env: Env<A> },
    AppFun { term: Term, env: Env<A> },
    /// Argument `done.len()` is in the hole.
    AppArg { term: Term, env: Env<A>, fun: V, done: Vec<V> },
    Rec { term: Term, env: Env<A>, done: Vec<V> },
    GetRec { term: Term, env: Env<A> },
    GetKey { rec: V },
    UpdRec { term: Term, env: Env<A> },
    UpdKey { term: Term, env: Env<A>, rec: V },
    UpdVal { rec: V, key: V },
    DelRec { term: Term, env: Env<A> },
    DelKey { rec: V },
    SetAddr { term: Term, env: Env<A> },
    SetVal { addr: V },
    Ref,
    Deref,
    If { then: Rc<Closure<V, A>>, els: Rc<Closure<V, A>> },
    Seq { next: Rc<Closure<V, A>> },
    Throw,
    Break(Label),
    Op { term: Term, env: Env<A>, done: Vec<V> },
    TryCatch { x: Name, handler: Term, env: Env<A> },
    TryFinally { fin: Rc<Closure<V, A>> },
    Label(Label),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameTag {
    Let,
    AppFun,
    AppArg,
    Rec,
    GetRec,
    GetKey,
    UpdRec,
    UpdKey,
    UpdVal,
    DelRec,
    DelKey,
    SetAddr,
    SetVal,
    Ref,
    Deref,
    If,
    Seq,
    Throw,
    Break,
    Op,
    TryCatch,
    TryFinally,
    Label,
}

impl FrameTag {
    pub fn name(self) -> &'static str {
        use FrameTag::*;
        match self {
            Let => "let",
            AppFun => "app-fun",
            AppArg => "app-arg",
            Rec => "rec",
            GetRec => "get-rec",
            GetKey => "get-key",
            UpdRec => "upd-rec",
            UpdKey => "upd-key",
            UpdVal => "upd-val",
            DelRec => "del-rec",
            DelKey => "del-key",
            SetAddr => "set-addr",
            SetVal => "set-val",
            Ref => "ref",
            Deref => "deref",
            If => "if",
            Seq => "seq",
            Throw => "throw",
            Break => "break",
            Op => "op",
            TryCatch => "try-catch",
            TryFinally => "try-finally",
            Label => "label",
        }
    }
}

/// The shape of a frame without its values or environment: kind, program
/// point and hole position. Calling contexts are sequences of these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameSig {
    pub tag: FrameTag,
    pub site: SiteId,
    pub hole: u16,
}

impl fmt::Display for FrameSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}.{}", self.tag.name(), self.site, self.hole)
    }
}

/// A calling context, innermost frame first.
pub type Ctx = Rc<[FrameSig]>;

impl<V, A> Frame<V, A> {
    pub fn tag(&self) -> FrameTag {
        use FrameKind as K;
        match &self.kind {
            K::Let { .. } => FrameTag::Let,
            K::AppFun { .. } => FrameTag::AppFun,
            K::AppArg { .. } => FrameTag::AppArg,
            K::Rec { .. } => FrameTag::Rec,
            K::GetRec { .. } => FrameTag::GetRec,
            K::GetKey { .. } => FrameTag::GetKey,
            K::UpdRec { .. } => FrameTag::UpdRec,
            K::UpdKey { .. } => FrameTag::UpdKey,
            K::UpdVal { .. } => FrameTag::UpdVal,
            K::DelRec { .. } => FrameTag::DelRec,
            K::DelKey { .. } => FrameTag::DelKey,
            K::SetAddr { .. } => FrameTag::SetAddr,
            K::SetVal { .. } => FrameTag::SetVal,
            K::Ref => FrameTag::Ref,
            K::Deref => FrameTag::Deref,
            K::If { .. } => FrameTag::If,
            K::Seq { .. } => FrameTag::Seq,
            K::Throw => FrameTag::Throw,
            K::Break(_) => FrameTag::Break,
            K::Op { .. } => FrameTag::Op,
            K::TryCatch { .. } => FrameTag::TryCatch,
            K::TryFinally { .. } => FrameTag::TryFinally,
            K::Label(_) => FrameTag::Label,
        }
    }

    pub fn sig(&self) -> FrameSig {
        use FrameKind as K;
        let hole = match &self.kind {
            K::AppArg { done, .. } => done.len() + 1,
            K::Rec { done, .. } | K::Op { done, .. } => done.len(),
            K::GetKey { .. } | K::UpdKey { .. } | K::DelKey { .. } | K::SetVal { .. } => 1,
            K::UpdVal { .. } => 2,
            _ => 0,
        };
        FrameSig { tag: self.tag(), site: self.site, hole: hole as u16 }
    }

    /// Handlers, finalizers and labels; every other frame is local.
    pub fn is_control(&self) -> bool {
        matches!(self.kind, FrameKind::TryCatch { .. } | FrameKind::TryFinally { .. } | FrameKind::Label(_))
    }
}

/// A redex awaiting contraction in apply mode.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Redex<V, A> {
    pub site: SiteId,
    pub kind: RedexKind<V, A>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RedexKind<V, A> {
    Var { x: Name, env: Env<A> },
    Let { x: Name, v: V, body: Term, env: Env<A> },
    App { fun: V, args: Vec<V> },
    Get { rec: V, key: V },
    Upd { rec: V, key: V, val: V },
    Del { rec: V, key: V },
    Set { addr: V, val: V },
    Ref(V),
    Deref(V),
    If { cond: V, then: Rc<Closure<V, A>>, els: Rc<Closure<V, A>> },
    Op { op: PrimOp, args: Vec<V> },
    Throw(V),
    Break(Label, V),
}

/// The control component together with its mode.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Control<V, A> {
    Ev(Rc<Closure<V, A>>),
    Co(V),
    Ap(Redex<V, A>),
    /// A final answer; reached only with an empty stack.
    Done(Outcome<V>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Ev,
    Co,
    Ap,
    Done,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ev => "ev",
            Mode::Co => "co",
            Mode::Ap => "ap",
            Mode::Done => "done",
        })
    }
}

impl<V, A> Control<V, A> {
    pub fn mode(&self) -> Mode {
        match self {
            Control::Ev(_) => Mode::Ev,
            Control::Co(_) => Mode::Co,
            Control::Ap(_) => Mode::Ap,
            Control::Done(_) => Mode::Done,
        }
    }
}

/// What a transition does to the stack. `Pop` removes the top frame that was
/// supplied to the transition; `Exchange` replaces it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StackOp<F> {
    Noop,
    Push(F),
    Pop,
    Exchange(F),
}

/// One successor of a transition.
#[derive(Clone, Debug)]
pub struct Succ<V, A> {
    pub control: Control<V, A>,
    pub op: StackOp<Frame<V, A>>,
    /// Text written by `print`.
    pub effect: Option<String>,
}

/// What allocation is for.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AllocKind {
    /// A variable binding (let, application, handler).
    Var(Name),
    /// A reference cell created at a `ref` site.
    Ref(SiteId),
    /// A record field with a known key, created at a site.
    Field(SiteId, Name),
    /// Record fields whose keys are not program strings.
    Overflow(SiteId),
}

/// Values, addresses and store operations for an instance of the machine.
/// Operations returning several values express nondeterminism.
pub trait Domain {
    type V: Clone + fmt::Debug;
    type A: Clone + fmt::Debug + Ord;
    type Store;

    /// A literal constant.
    fn constant(&self, e: &Expr) -> Self::V;
    fn string(&self, s: &str) -> Self::V;
    fn closure(&self, term: Term, env: Env<Self::A>) -> Self::V;
    fn address(&self, a: Self::A) -> Self::V;
    fn as_fun<'v>(&self, v: &'v Self::V) -> Option<(&'v Term, &'v Env<Self::A>)>;
    fn truth(&self, v: &Self::V) -> Option<bool>;

    fn lookup(&self, store: &Self::Store, a: &Self::A) -> Vec<Self::V>;
    /// Allocates an address for `kind` in context `ctx` and stores `v`.
    fn bind(&self, store: &mut Self::Store, kind: AllocKind, v: Self::V, ctx: &[FrameSig]) -> Self::A;
    fn assign(&self, store: &mut Self::Store, addr: &Self::V, v: Self::V) -> Result<(), RuntimeError>;
    fn deref(&self, store: &Self::Store, addr: &Self::V) -> Result<Vec<Self::V>, RuntimeError>;

    fn make_record(
        &self,
        store: &mut Self::Store,
        site: SiteId,
        fields: Vec<(Name, Self::V)>,
        ctx: &[FrameSig],
    ) -> Self::V;
    fn get_field(&self, store: &Self::Store, rec: &Self::V, key: &Self::V) -> Result<Vec<Self::V>, RuntimeError>;
    fn update_field(
        &self,
        store: &mut Self::Store,
        rec: &Self::V,
        key: &Self::V,
        v: Self::V,
        site: SiteId,
        ctx: &[FrameSig],
    ) -> Result<Self::V, RuntimeError>;
    fn delete_field(&self, rec: &Self::V, key: &Self::V) -> Result<Self::V, RuntimeError>;

    /// Primitive application; each entry is a possible outcome.
    fn delta(&self, op: PrimOp, args: &[Self::V]) -> Vec<Result<(Self::V, Option<String>), RuntimeError>>;

    /// The record thrown for a dynamic error.
    fn error_value(&self, store: &mut Self::Store, err: &RuntimeError, site: SiteId, ctx: &[FrameSig]) -> Self::V {
        let fields = err.record_fields().into_iter().map(|(k, v)| (Name::from(k), self.string(&v))).collect();
        self.make_record(store, site, fields, ctx)
    }
}

type Succs<D> = Vec<Succ<<D as Domain>::V, <D as Domain>::A>>;

fn one<V, A>(control: Control<V, A>, op: StackOp<Frame<V, A>>) -> Vec<Succ<V, A>> {
    vec![Succ { control, op, effect: None }]
}

/// All transitions from `control` with stack top `top`. `ctx` is the
/// calling context of the current stack, innermost first, as deep as the
/// domain needs. The store is updated in place and shared by every
/// successor.
pub fn transitions<D: Domain>(
    d: &D,
    store: &mut D::Store,
    control: &Control<D::V, D::A>,
    top: Option<&Frame<D::V, D::A>>,
    ctx: &[FrameSig],
) -> Succs<D> {
    match control {
        Control::Ev(c) => eval(d, store, c, ctx),
        Control::Co(v) => cont(d, store, v, top, ctx),
        Control::Ap(r) => apply(d, store, r, top, ctx),
        Control::Done(_) => Vec::new(),
    }
}

fn term<V, A>(e: &Rc<Expr>, env: &Env<A>) -> Rc<Closure<V, A>> {
    Rc::new(Closure::Term(Term(e.clone()), env.clone()))
}

fn push_eval<V, A>(site: SiteId, kind: FrameKind<V, A>, next: Rc<Closure<V, A>>) -> Vec<Succ<V, A>> {
    one(Control::Ev(next), StackOp::Push(Frame { site, kind }))
}

fn eval<D: Domain>(d: &D, store: &mut D::Store, c: &Rc<Closure<D::V, D::A>>, ctx: &[FrameSig]) -> Succs<D> {
    use FrameKind as F;
    match &**c {
        Closure::Val(v) => one(Control::Co(v.clone()), StackOp::Noop),
        Closure::Seq(a, b, site) => push_eval(*site, F::Seq { next: b.clone() }, a.clone()),
        Closure::While(cond, body, site) => {
            let again = Rc::new(Closure::Seq(body.clone(), c.clone(), *site));
            let undef = Rc::new(Closure::Val(d.constant(&Expr::new(ExprKind::Undef))));
            push_eval(*site, F::If { then: again, els: undef }, cond.clone())
        }
        Closure::Throw(inner, site) => push_eval(*site, F::Throw, inner.clone()),
        Closure::Break(l, inner, site) => push_eval(*site, F::Break(l.clone()), inner.clone()),
        Closure::Term(t, env) => {
            let site = t.site();
            let env = env.clone();
            let tm = t.clone();
            match t.kind() {
                ExprKind::Var(x) => {
                    one(Control::Ap(Redex { site, kind: RedexKind::Var { x: x.clone(), env } }), StackOp::Noop)
                }
                ExprKind::Str(_) | ExprKind::Num(_) | ExprKind::Bool(_) | ExprKind::Undef | ExprKind::Null => {
                    one(Control::Co(d.constant(t.expr())), StackOp::Noop)
                }
                ExprKind::Addr(_) => panic!("internal invariant: literal address in program"),
                ExprKind::Fun(..) => one(Control::Co(d.closure(tm, env)), StackOp::Noop),
                ExprKind::Rec(fields) => match fields.first() {
                    None => one(Control::Co(d.make_record(store, site, Vec::new(), ctx)), StackOp::Noop),
                    Some((_, e0)) => push_eval(site, F::Rec { term: tm, env: env.clone(), done: Vec::new() }, term(e0, &env)),
                },
                ExprKind::Let(x, rhs, body) => {
                    push_eval(site, F::Let { x: x.clone(), body: Term(body.clone()), env: env.clone() }, term(rhs, &env))
                }
                ExprKind::App(f, _) => push_eval(site, F::AppFun { term: tm, env: env.clone() }, term(f, &env)),
                ExprKind::Get(a, _) => push_eval(site, F::GetRec { term: tm, env: env.clone() }, term(a, &env)),
                ExprKind::Upd(a, _, _) => push_eval(site, F::UpdRec { term: tm, env: env.clone() }, term(a, &env)),
                ExprKind::Del(a, _) => push_eval(site, F::DelRec { term: tm, env: env.clone() }, term(a, &env)),
                ExprKind::Set(a, _) => push_eval(site, F::SetAddr { term: tm, env: env.clone() }, term(a, &env)),
                ExprKind::Ref(a) => push_eval(site, F::Ref, term(a, &env)),
                ExprKind::Deref(a) => push_eval(site, F::Deref, term(a, &env)),
                ExprKind::Throw(a) => push_eval(site, F::Throw, term(a, &env)),
                ExprKind::Break(l, a) => push_eval(site, F::Break(l.clone()), term(a, &env)),
                ExprKind::Label(l, a) => push_eval(site, F::Label(l.clone()), term(a, &env)),
                ExprKind::If(cond, a, b) => {
                    push_eval(site, F::If { then: term(a, &env), els: term(b, &env) }, term(cond, &env))
                }
                ExprKind::Seq(a, b) => push_eval(site, F::Seq { next: term(b, &env) }, term(a, &env)),
                ExprKind::While(cond, body) => {
                    let w = Rc::new(Closure::While(term(cond, &env), term(body, &env), site));
                    eval(d, store, &w, ctx)
                }
                ExprKind::TryCatch(body, x, h) => push_eval(
                    site,
                    F::TryCatch { x: x.clone(), handler: Term(h.clone()), env: env.clone() },
                    term(body, &env),
                ),
                ExprKind::TryFinally(body, fin) => {
                    push_eval(site, F::TryFinally { fin: term(fin, &env) }, term(body, &env))
                }
                ExprKind::Op(_, args) => {
                    push_eval(site, F::Op { term: tm, env: env.clone(), done: Vec::new() }, term(&args[0], &env))
                }
            }
        }
    }
}

fn ap<V, A>(site: SiteId, kind: RedexKind<V, A>) -> Control<V, A> {
    Control::Ap(Redex { site, kind })
}

fn cont<D: Domain>(
    d: &D,
    store: &mut D::Store,
    v: &D::V,
    top: Option<&Frame<D::V, D::A>>,
    ctx: &[FrameSig],
) -> Succs<D> {
    use FrameKind as F;
    let Some(frame) = top else {
        return one(Control::Done(Outcome::Value(v.clone())), StackOp::Noop);
    };
    let site = frame.site;
    let exchange = |kind: F<D::V, D::A>, next: Rc<Closure<D::V, D::A>>| {
        one(Control::Ev(next), StackOp::Exchange(Frame { site, kind }))
    };
    let v = v.clone();
    match &frame.kind {
        F::Let { x, body, env } => {
            one(ap(site, RedexKind::Let { x: x.clone(), v, body: body.clone(), env: env.clone() }), StackOp::Pop)
        }
        F::AppFun { term: t, env } => {
            let ExprKind::App(_, args) = t.kind() else { unreachable!() };
            match args.first() {
                None => one(ap(site, RedexKind::App { fun: v, args: Vec::new() }), StackOp::Pop),
                Some(a0) => exchange(
                    F::AppArg { term: t.clone(), env: env.clone(), fun: v, done: Vec::new() },
                    term(a0, env),
                ),
            }
        }
        F::AppArg { term: t, env, fun, done } => {
            let ExprKind::App(_, args) = t.kind() else { unreachable!() };
            let mut done = done.clone();
            done.push(v);
            match args.get(done.len()) {
                None => one(ap(site, RedexKind::App { fun: fun.clone(), args: done }), StackOp::Pop),
                Some(next) => {
                    exchange(F::AppArg { term: t.clone(), env: env.clone(), fun: fun.clone(), done }, term(next, env))
                }
            }
        }
        F::Rec { term: t, env, done } => {
            let ExprKind::Rec(fields) = t.kind() else { unreachable!() };
            let mut done = done.clone();
            done.push(v);
            match fields.get(done.len()) {
                None => {
                    let fields = fields.iter().map(|(k, _)| k.clone()).zip(done).collect();
                    one(Control::Co(d.make_record(store, site, fields, ctx)), StackOp::Pop)
                }
                Some((_, next)) => exchange(F::Rec { term: t.clone(), env: env.clone(), done }, term(next, env)),
            }
        }
        F::Op { term: t, env, done } => {
            let ExprKind::Op(op, args) = t.kind() else { unreachable!() };
            let mut done = done.clone();
            done.push(v);
            match args.get(done.len()) {
                None => one(ap(site, RedexKind::Op { op: *op, args: done }), StackOp::Pop),
                Some(next) => exchange(F::Op { term: t.clone(), env: env.clone(), done }, term(next, env)),
            }
        }
        F::GetRec { term: t, env } => {
            let ExprKind::Get(_, k) = t.kind() else { unreachable!() };
            exchange(F::GetKey { rec: v }, term(k, env))
        }
        F::GetKey { rec } => one(ap(site, RedexKind::Get { rec: rec.clone(), key: v }), StackOp::Pop),
        F::UpdRec { term: t, env } => {
            let ExprKind::Upd(_, k, _) = t.kind() else { unreachable!() };
            exchange(F::UpdKey { term: t.clone(), env: env.clone(), rec: v }, term(k, env))
        }
        F::UpdKey { term: t, env, rec } => {
            let ExprKind::Upd(_, _, x) = t.kind() else { unreachable!() };
            exchange(F::UpdVal { rec: rec.clone(), key: v }, term(x, env))
        }
        F::UpdVal { rec, key } => {
            one(ap(site, RedexKind::Upd { rec: rec.clone(), key: key.clone(), val: v }), StackOp::Pop)
        }
        F::DelRec { term: t, env } => {
            let ExprKind::Del(_, k) = t.kind() else { unreachable!() };
            exchange(F::DelKey { rec: v }, term(k, env))
        }
        F::DelKey { rec } => one(ap(site, RedexKind::Del { rec: rec.clone(), key: v }), StackOp::Pop),
        F::SetAddr { term: t, env } => {
            let ExprKind::Set(_, x) = t.kind() else { unreachable!() };
            exchange(F::SetVal { addr: v }, term(x, env))
        }
        F::SetVal { addr } => one(ap(site, RedexKind::Set { addr: addr.clone(), val: v }), StackOp::Pop),
        F::Ref => one(ap(site, RedexKind::Ref(v)), StackOp::Pop),
        F::Deref => one(ap(site, RedexKind::Deref(v)), StackOp::Pop),
        F::Throw => one(ap(site, RedexKind::Throw(v)), StackOp::Pop),
        F::Break(l) => one(ap(site, RedexKind::Break(l.clone(), v)), StackOp::Pop),
        F::If { then, els } => {
            one(ap(site, RedexKind::If { cond: v, then: then.clone(), els: els.clone() }), StackOp::Pop)
        }
        F::Seq { next } => one(Control::Ev(next.clone()), StackOp::Pop),
        F::TryCatch { .. } | F::Label(_) => one(Control::Co(v), StackOp::Pop),
        F::TryFinally { fin } => {
            one(Control::Ev(Rc::new(Closure::Seq(fin.clone(), Rc::new(Closure::Val(v)), site))), StackOp::Pop)
        }
    }
}

fn extend<A: Clone>(env: &Env<A>, binds: impl IntoIterator<Item = (Name, A)>) -> Env<A> {
    let mut env = (**env).clone();
    env.extend(binds);
    Rc::new(env)
}

fn apply<D: Domain>(
    d: &D,
    store: &mut D::Store,
    r: &Redex<D::V, D::A>,
    top: Option<&Frame<D::V, D::A>>,
    ctx: &[FrameSig],
) -> Succs<D> {
    use RedexKind as R;
    let site = r.site;
    let fail = |store: &mut D::Store, err: RuntimeError| {
        let e = d.error_value(store, &err, site, ctx);
        one(ap(site, R::Throw(e)), StackOp::Noop)
    };
    let cos = |vs: Vec<D::V>| -> Succs<D> {
        vs.into_iter().map(|v| Succ { control: Control::Co(v), op: StackOp::Noop, effect: None }).collect()
    };
    match &r.kind {
        R::Var { x, env } => {
            let a = env.get(x).unwrap_or_else(|| panic!("internal invariant: unbound variable `{x}`"));
            cos(d.lookup(store, a))
        }
        R::Let { x, v, body, env } => {
            let a = d.bind(store, AllocKind::Var(x.clone()), v.clone(), ctx);
            let env = extend(env, [(x.clone(), a)]);
            one(Control::Ev(Rc::new(Closure::Term(body.clone(), env))), StackOp::Noop)
        }
        R::App { fun, args } => {
            let Some((t, env)) = d.as_fun(fun) else {
                return fail(store, RuntimeError::NotAFunction);
            };
            let ExprKind::Fun(params, body) = t.kind() else { unreachable!() };
            if params.len() != args.len() {
                return fail(store, RuntimeError::ArityMismatch);
            }
            let env = env.clone();
            let addrs: Vec<_> = params
                .iter()
                .zip(args)
                .map(|(x, v)| (x.clone(), d.bind(store, AllocKind::Var(x.clone()), v.clone(), ctx)))
                .collect();
            one(Control::Ev(Rc::new(Closure::Term(Term(body.clone()), extend(&env, addrs)))), StackOp::Noop)
        }
        R::Get { rec, key } => match d.get_field(store, rec, key) {
            Ok(vs) => cos(vs),
            Err(e) => fail(store, e),
        },
        R::Upd { rec, key, val } => match d.update_field(store, rec, key, val.clone(), site, ctx) {
            Ok(v) => cos(vec![v]),
            Err(e) => fail(store, e),
        },
        R::Del { rec, key } => match d.delete_field(rec, key) {
            Ok(v) => cos(vec![v]),
            Err(e) => fail(store, e),
        },
        R::Set { addr, val } => match d.assign(store, addr, val.clone()) {
            Ok(()) => cos(vec![val.clone()]),
            Err(e) => fail(store, e),
        },
        R::Ref(v) => {
            let a = d.bind(store, AllocKind::Ref(site), v.clone(), ctx);
            cos(vec![d.address(a)])
        }
        R::Deref(a) => match d.deref(store, a) {
            Ok(vs) => cos(vs),
            Err(e) => fail(store, e),
        },
        R::If { cond, then, els } => match d.truth(cond) {
            Some(true) => one(Control::Ev(then.clone()), StackOp::Noop),
            Some(false) => one(Control::Ev(els.clone()), StackOp::Noop),
            None => fail(store, RuntimeError::NotABoolean),
        },
        R::Op { op, args } => {
            let mut out = Vec::new();
            for outcome in d.delta(*op, args) {
                match outcome {
                    Ok((v, effect)) => out.push(Succ { control: Control::Co(v), op: StackOp::Noop, effect }),
                    Err(e) => out.extend(fail(store, e)),
                }
            }
            out
        }
        R::Throw(v) => match top {
            None => one(Control::Done(Outcome::Error(v.clone())), StackOp::Noop),
            Some(f) => match &f.kind {
                FrameKind::TryCatch { x, handler, env } => {
                    let a = d.bind(store, AllocKind::Var(x.clone()), v.clone(), ctx);
                    let env = extend(env, [(x.clone(), a)]);
                    one(Control::Ev(Rc::new(Closure::Term(handler.clone(), env))), StackOp::Pop)
                }
                FrameKind::TryFinally { fin } => {
                    let rethrow = Rc::new(Closure::Throw(Rc::new(Closure::Val(v.clone())), site));
                    one(Control::Ev(Rc::new(Closure::Seq(fin.clone(), rethrow, f.site))), StackOp::Pop)
                }
                _ => one(Control::Ap(r.clone()), StackOp::Pop),
            },
        },
        R::Break(l, v) => match top {
            None => one(Control::Done(Outcome::Broken(l.clone(), v.clone())), StackOp::Noop),
            Some(f) => match &f.kind {
                FrameKind::TryFinally { fin } => {
                    let again = Rc::new(Closure::Break(l.clone(), Rc::new(Closure::Val(v.clone())), site));
                    one(Control::Ev(Rc::new(Closure::Seq(fin.clone(), again, f.site))), StackOp::Pop)
                }
                FrameKind::Label(here) if here == l => one(Control::Co(v.clone()), StackOp::Pop),
                _ => one(Control::Ap(r.clone()), StackOp::Pop),
            },
        },
    }
}

/// Short human-readable rendering of a control, for traces and graphs.
pub fn control_summary<V: fmt::Display, A>(c: &Control<V, A>) -> String {
    fn clip(s: String) -> String {
        if s.chars().count() > 48 {
            let t: String = s.chars().take(45).collect();
            format!("{t}...")
        } else {
            s
        }
    }
    fn closure<V: fmt::Display, A>(c: &Closure<V, A>) -> String {
        match c {
            Closure::Term(t, _) => crate::sexpr::print(t.expr()),
            Closure::Val(v) => v.to_string(),
            Closure::Seq(a, b, _) => format!("(seq {} {})", closure(a), closure(b)),
            Closure::While(a, b, _) => format!("(while {} {})", closure(a), closure(b)),
            Closure::Throw(a, _) => format!("(throw {})", closure(a)),
            Closure::Break(l, a, _) => format!("(break {l} {})", closure(a)),
        }
    }
    let join = |vs: &[V]| vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
    clip(match c {
        Control::Ev(c) => closure(c),
        Control::Co(v) => v.to_string(),
        Control::Done(o) => match o {
            Outcome::Value(v) => format!("value {v}"),
            Outcome::Error(v) => format!("err {v}"),
            Outcome::Broken(l, v) => format!("break {l} {v}"),
        },
        Control::Ap(r) => match &r.kind {
            RedexKind::Var { x, .. } => x.to_string(),
            RedexKind::Let { x, v, .. } => format!("let {x} = {v}"),
            RedexKind::App { fun, args } => format!("app {fun} {}", join(args)),
            RedexKind::Get { rec, key } => format!("get {rec} {key}"),
            RedexKind::Upd { rec, key, val } => format!("upd {rec} {key} {val}"),
            RedexKind::Del { rec, key } => format!("del {rec} {key}"),
            RedexKind::Set { addr, val } => format!("set! {addr} {val}"),
            RedexKind::Ref(v) => format!("ref {v}"),
            RedexKind::Deref(v) => format!("deref {v}"),
            RedexKind::If { cond, .. } => format!("if {cond}"),
            RedexKind::Op { op, args } => format!("op {op} {}", join(args)),
            RedexKind::Throw(v) => format!("throw {v}"),
            RedexKind::Break(l, v) => format!("break {l} {v}"),
        },
    })
}

/// Structure-preserving translation of values and addresses, used to
/// abstract machine components.
pub trait Translate<V, A, W, B> {
    fn value(&self, v: &V) -> W;
    fn addr(&self, a: &A) -> B;

    fn env(&self, env: &Env<A>) -> Env<B> {
        Rc::new(env.iter().map(|(x, a)| (x.clone(), self.addr(a))).collect())
    }

    fn values(&self, vs: &[V]) -> Vec<W> {
        vs.iter().map(|v| self.value(v)).collect()
    }

    fn closure(&self, c: &Closure<V, A>) -> Rc<Closure<W, B>> {
        Rc::new(match c {
            Closure::Term(t, env) => Closure::Term(t.clone(), self.env(env)),
            Closure::Val(v) => Closure::Val(self.value(v)),
            Closure::Seq(a, b, s) => Closure::Seq(self.closure(a), self.closure(b), *s),
            Closure::While(a, b, s) => Closure::While(self.closure(a), self.closure(b), *s),
            Closure::Throw(a, s) => Closure::Throw(self.closure(a), *s),
            Closure::Break(l, a, s) => Closure::Break(l.clone(), self.closure(a), *s),
        })
    }

    fn frame(&self, f: &Frame<V, A>) -> Frame<W, B> {
        use FrameKind as K;
        let kind = match &f.kind {
            K::Let { x, body, env } => K::Let { x: x.clone(), body: body.clone(), env: self.env(env) },
            K::AppFun { term, env } => K::AppFun { term: term.clone(), env: self.env(env) },
            K::AppArg { term, env, fun, done } => K::AppArg {
                term: term.clone(),
                env: self.env(env),
                fun: self.value(fun),
                done: self.values(done),
            },
            K::Rec { term, env, done } => K::Rec { term: term.clone(), env: self.env(env), done: self.values(done) },
            K::GetRec { term, env } => K::GetRec { term: term.clone(), env: self.env(env) },
            K::GetKey { rec } => K::GetKey { rec: self.value(rec) },
            K::UpdRec { term, env } => K::UpdRec { term: term.clone(), env: self.env(env) },
            K::UpdKey { term, env, rec } => K::UpdKey { term: term.clone(), env: self.env(env), rec: self.value(rec) },
            K::UpdVal { rec, key } => K::UpdVal { rec: self.value(rec), key: self.value(key) },
            K::DelRec { term, env } => K::DelRec { term: term.clone(), env: self.env(env) },
            K::DelKey { rec } => K::DelKey { rec: self.value(rec) },
            K::SetAddr { term, env } => K::SetAddr { term: term.clone(), env: self.env(env) },
            K::SetVal { addr } => K::SetVal { addr: self.value(addr) },
            K::Ref => K::Ref,
            K::Deref => K::Deref,
            K::If { then, els } => K::If { then: self.closure(then), els: self.closure(els) },
            K::Seq { next } => K::Seq { next: self.closure(next) },
            K::Throw => K::Throw,
            K::Break(l) => K::Break(l.clone()),
            K::Op { term, env, done } => K::Op { term: term.clone(), env: self.env(env), done: self.values(done) },
            K::TryCatch { x, handler, env } => {
                K::TryCatch { x: x.clone(), handler: handler.clone(), env: self.env(env) }
            }
            K::TryFinally { fin } => K::TryFinally { fin: self.closure(fin) },
            K::Label(l) => K::Label(l.clone()),
        };
        Frame { site: f.site, kind }
    }

    fn control(&self, c: &Control<V, A>) -> Control<W, B> {
        use RedexKind as R;
        match c {
            Control::Ev(c) => Control::Ev(self.closure(c)),
            Control::Co(v) => Control::Co(self.value(v)),
            Control::Done(o) => Control::Done(match o {
                Outcome::Value(v) => Outcome::Value(self.value(v)),
                Outcome::Error(v) => Outcome::Error(self.value(v)),
                Outcome::Broken(l, v) => Outcome::Broken(l.clone(), self.value(v)),
            }),
            Control::Ap(r) => {
                let kind = match &r.kind {
                    R::Var { x, env } => R::Var { x: x.clone(), env: self.env(env) },
                    R::Let { x, v, body, env } => {
                        R::Let { x: x.clone(), v: self.value(v), body: body.clone(), env: self.env(env) }
                    }
                    R::App { fun, args } => R::App { fun: self.value(fun), args: self.values(args) },
                    R::Get { rec, key } => R::Get { rec: self.value(rec), key: self.value(key) },
                    R::Upd { rec, key, val } => {
                        R::Upd { rec: self.value(rec), key: self.value(key), val: self.value(val) }
                    }
                    R::Del { rec, key } => R::Del { rec: self.value(rec), key: self.value(key) },
                    R::Set { addr, val } => R::Set { addr: self.value(addr), val: self.value(val) },
                    R::Ref(v) => R::Ref(self.value(v)),
                    R::Deref(v) => R::Deref(self.value(v)),
                    R::If { cond, then, els } => {
                        R::If { cond: self.value(cond), then: self.closure(then), els: self.closure(els) }
                    }
                    R::Op { op, args } => R::Op { op: *op, args: self.values(args) },
                    R::Throw(v) => R::Throw(self.value(v)),
                    R::Break(l, v) => R::Break(l.clone(), self.value(v)),
                };
                Control::Ap(Redex { site: r.site, kind })
            }
        }
    }
}
