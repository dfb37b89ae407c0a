//! Substitution-based small-step evaluation over syntactic values.
//!
//! Control operators jump: a throw passes local frames and labels in one
//! step until a handler or finalizer, and a break passes local frames and
//! handlers until a label or finalizer. Break frames count as local frames.

use std::collections::{BTreeMap, BTreeSet};

use super::{basic_expr, error_expr, expr_operand, Answer, Outcome, Timeout};
use crate::ast::{free_vars, Expr, ExprKind, Label, Name, Program, P};
use crate::delta::{self, RuntimeError};

/// Capture-avoiding substitution of `v` for free occurrences of `x` in `e`.
pub fn subst(v: &P, x: &str, e: &P) -> P {
    let mut map = BTreeMap::new();
    map.insert(Name::from(x), v.clone());
    subst_many(&map, e)
}

/// Simultaneous capture-avoiding substitution.
pub fn subst_many(map: &BTreeMap<Name, P>, e: &P) -> P {
    if map.is_empty() {
        return e.clone();
    }
    let mut fvs = BTreeSet::new();
    for v in map.values() {
        fvs.extend(free_vars(v));
    }
    go(map, &fvs, e)
}

fn go(map: &BTreeMap<Name, P>, fvs: &BTreeSet<Name>, e: &P) -> P {
    use ExprKind::*;
    match &e.kind {
        Var(x) => map.get(x).cloned().unwrap_or_else(|| e.clone()),
        Str(_) | Num(_) | Bool(_) | Undef | Null | Addr(_) => e.clone(),
        Fun(params, body) => {
            let (params, body) = under_binders(map, fvs, params, body);
            P::new(Expr { site: e.site, kind: Fun(params, body) })
        }
        Let(x, rhs, body) => {
            let rhs = go(map, fvs, rhs);
            let (mut xs, body) = under_binders(map, fvs, std::slice::from_ref(x), body);
            P::new(Expr { site: e.site, kind: Let(xs.remove(0), rhs, body) })
        }
        TryCatch(body, x, handler) => {
            let body = go(map, fvs, body);
            let (mut xs, handler) = under_binders(map, fvs, std::slice::from_ref(x), handler);
            P::new(Expr { site: e.site, kind: TryCatch(body, xs.remove(0), handler) })
        }
        _ => P::new(e.with_children(e.children().into_iter().map(|c| go(map, fvs, c)).collect())),
    }
}

/// Substitutes under `binders`, renaming any binder that would capture a
/// free variable of the substituted values.
fn under_binders(map: &BTreeMap<Name, P>, fvs: &BTreeSet<Name>, binders: &[Name], body: &P) -> (Vec<Name>, P) {
    let mut inner: BTreeMap<Name, P> = map.iter().filter(|(k, _)| !binders.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect();
    if inner.is_empty() {
        return (binders.to_vec(), body.clone());
    }
    let mut inner_fvs = fvs.clone();
    let mut out = Vec::with_capacity(binders.len());
    for b in binders {
        if fvs.contains(b) {
            let body_fvs = free_vars(body);
            let mut n = 0;
            let fresh = loop {
                let cand: Name = format!("{b}_{n}").into();
                if !fvs.contains(&cand) && !body_fvs.contains(&cand) && !binders.contains(&cand) && !inner.contains_key(&cand) {
                    break cand;
                }
                n += 1;
            };
            inner.insert(b.clone(), Expr::rc(ExprKind::Var(fresh.clone())));
            inner_fvs.insert(fresh.clone());
            out.push(fresh);
        } else {
            out.push(b.clone());
        }
    }
    (out, go(&inner, &inner_fvs, body))
}

enum Signal {
    Throw(P),
    Break(Label, P),
}

enum Step {
    Value,
    Next(P),
    Signal(Signal),
}

struct Machine {
    store: BTreeMap<usize, P>,
    effects: Vec<String>,
}

/// Evaluates by substitution for at most `fuel` reduction steps.
pub fn eval_subst(program: &Program, fuel: u64) -> Result<Answer<P>, Timeout> {
    let mut m = Machine { store: BTreeMap::new(), effects: Vec::new() };
    let mut e = P::new(program.expr().clone());
    let mut steps = 0;
    loop {
        let outcome = match m.step(&e) {
            Step::Value => Outcome::Value(e),
            Step::Signal(Signal::Throw(v)) => Outcome::Error(v),
            Step::Signal(Signal::Break(l, v)) => Outcome::Broken(l, v),
            Step::Next(next) => {
                steps += 1;
                if steps > fuel {
                    return Err(Timeout { steps: fuel });
                }
                e = next;
                continue;
            }
        };
        return Ok(Answer { store: m.store, outcome, effects: m.effects });
    }
}

fn mk(kind: ExprKind) -> P {
    Expr::rc(kind)
}

fn replace_child(e: &Expr, i: usize, c: P) -> P {
    let mut kids: Vec<P> = e.children().into_iter().cloned().collect();
    kids[i] = c;
    P::new(e.with_children(kids))
}

impl Machine {
    fn step(&mut self, e: &P) -> Step {
        if e.is_value() {
            return Step::Value;
        }
        match &e.kind {
            ExprKind::Throw(v) if v.is_value() => return Step::Signal(Signal::Throw(v.clone())),
            ExprKind::Break(l, v) if v.is_value() => return Step::Signal(Signal::Break(l.clone(), v.clone())),
            _ => {}
        }
        let kids = e.children();
        for i in 0..e.evaluated_children() {
            if kids[i].is_value() {
                continue;
            }
            return match self.step(kids[i]) {
                Step::Next(c) => Step::Next(replace_child(e, i, c)),
                Step::Signal(sig) => Self::catch(e, sig),
                Step::Value => unreachable!("non-value child reported as value"),
            };
        }
        self.contract(e)
    }

    /// A control signal arriving from the evaluated child of `e`.
    fn catch(e: &Expr, sig: Signal) -> Step {
        match (&e.kind, sig) {
            (ExprKind::TryCatch(_, x, handler), Signal::Throw(v)) => Step::Next(super::subst(&v, x, handler)),
            (ExprKind::TryFinally(_, fin), Signal::Throw(v)) => {
                Step::Next(mk(ExprKind::Seq(fin.clone(), mk(ExprKind::Throw(v)))))
            }
            (ExprKind::TryFinally(_, fin), Signal::Break(l, v)) => {
                Step::Next(mk(ExprKind::Seq(fin.clone(), mk(ExprKind::Break(l, v)))))
            }
            (ExprKind::Label(here, _), Signal::Break(l, v)) => {
                if *here == l {
                    Step::Next(v)
                } else {
                    Step::Next(mk(ExprKind::Break(l, v)))
                }
            }
            (_, sig) => Step::Signal(sig),
        }
    }

    fn throw(err: RuntimeError) -> Step {
        Step::Next(mk(ExprKind::Throw(error_expr(&err))))
    }

    fn contract(&mut self, e: &P) -> Step {
        use ExprKind::*;
        match &e.kind {
            Let(x, v, body) => Step::Next(super::subst(v, x, body)),
            App(f, args) => match &f.kind {
                Fun(params, body) if params.len() == args.len() => {
                    let map = params.iter().cloned().zip(args.iter().cloned()).collect();
                    Step::Next(subst_many(&map, body))
                }
                Fun(..) => Self::throw(RuntimeError::ArityMismatch),
                _ => Self::throw(RuntimeError::NotAFunction),
            },
            Get(r, k) => match (&r.kind, &k.kind) {
                (Rec(fields), Str(k)) => {
                    Step::Next(fields.iter().find(|(f, _)| f == k).map(|(_, v)| v.clone()).unwrap_or_else(|| mk(Undef)))
                }
                (Rec(_), _) => Self::throw(RuntimeError::NotAStringKey),
                _ => Self::throw(RuntimeError::NotARecord),
            },
            Upd(r, k, v) => match (&r.kind, &k.kind) {
                (Rec(fields), Str(k)) => {
                    let mut fields = fields.clone();
                    match fields.iter_mut().find(|(f, _)| f == k) {
                        Some(slot) => slot.1 = v.clone(),
                        None => fields.push((k.clone(), v.clone())),
                    }
                    Step::Next(mk(Rec(fields)))
                }
                (Rec(_), _) => Self::throw(RuntimeError::NotAStringKey),
                _ => Self::throw(RuntimeError::NotARecord),
            },
            Del(r, k) => match (&r.kind, &k.kind) {
                (Rec(fields), Str(k)) => Step::Next(mk(Rec(fields.iter().filter(|(f, _)| f != k).cloned().collect()))),
                (Rec(_), _) => Self::throw(RuntimeError::NotAStringKey),
                _ => Self::throw(RuntimeError::NotARecord),
            },
            Set(a, v) => match a.kind {
                Addr(a) if self.store.contains_key(&a) => {
                    self.store.insert(a, v.clone());
                    Step::Next(v.clone())
                }
                _ => Self::throw(RuntimeError::NotAnAddress),
            },
            Ref(v) => {
                let a = self.store.len();
                self.store.insert(a, v.clone());
                Step::Next(mk(Addr(a)))
            }
            Deref(a) => match a.kind {
                Addr(a) if self.store.contains_key(&a) => Step::Next(self.store[&a].clone()),
                _ => Self::throw(RuntimeError::NotAnAddress),
            },
            If(c, t, f) => match c.kind {
                Bool(true) => Step::Next(t.clone()),
                Bool(false) => Step::Next(f.clone()),
                _ => Self::throw(RuntimeError::NotABoolean),
            },
            Seq(_, next) => Step::Next(next.clone()),
            While(c, body) => {
                let again = mk(Seq(body.clone(), e.clone()));
                Step::Next(mk(If(c.clone(), again, mk(Undef))))
            }
            Label(_, v) | TryCatch(v, _, _) => Step::Next(v.clone()),
            TryFinally(v, fin) => Step::Next(mk(Seq(fin.clone(), v.clone()))),
            Op(op, args) => {
                let operands: Vec<_> = args.iter().map(|a| expr_operand(a)).collect();
                match delta::apply(*op, &operands) {
                    Ok(out) => {
                        self.effects.extend(out.effect);
                        Step::Next(basic_expr(out.value))
                    }
                    Err(err) => Self::throw(err),
                }
            }
            Var(x) => panic!("internal invariant: free variable `{x}` during evaluation"),
            _ => unreachable!("value or signal reached contraction"),
        }
    }
}
