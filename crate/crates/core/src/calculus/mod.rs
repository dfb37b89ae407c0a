//! Reference semantics: a substitution evaluator, an explicit-substitution
//! reducer, and the unload function relating them. These are the oracles the
//! machines are tested against.

mod rho;
mod subst;

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::{Expr, ExprKind, Label, Name, P};
use crate::delta::{Basic, Operand, RuntimeError};
use crate::sexpr;

pub use rho::{
    eval_rho, eval_rho_with, reduce_rho, unload, unload_value, CalcEnv, CalcState, CalcValue, Closure, ControlRules,
    Reduced,
};
pub use subst::{eval_subst, subst, subst_many};

/// How a program finished.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome<V> {
    Value(V),
    /// An uncaught exception.
    Error(V),
    /// A `break` that escaped every label.
    Broken(Label, V),
}

impl<V> Outcome<V> {
    pub fn payload(&self) -> &V {
        match self {
            Outcome::Value(v) | Outcome::Error(v) | Outcome::Broken(_, v) => v,
        }
    }

    pub fn map<W>(self, f: impl FnOnce(V) -> W) -> Outcome<W> {
        match self {
            Outcome::Value(v) => Outcome::Value(f(v)),
            Outcome::Error(v) => Outcome::Error(f(v)),
            Outcome::Broken(l, v) => Outcome::Broken(l, f(v)),
        }
    }
}

/// A final store, outcome and ordered log of printed text. Only reference
/// cells appear in the store.
#[derive(Clone, Debug, PartialEq)]
pub struct Answer<V> {
    pub store: BTreeMap<usize, V>,
    pub outcome: Outcome<V>,
    pub effects: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("timeout after {steps} steps")]
pub struct Timeout {
    pub steps: u64,
}

/// Answer text after renaming addresses by allocation rank, sorting record
/// fields and dropping site labels. Two engines agree iff these are equal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CanonicalAnswer {
    pub outcome: String,
    pub store: Vec<String>,
    pub effects: Vec<String>,
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.outcome)
    }
}

pub fn canonical(answer: &Answer<P>) -> CanonicalAnswer {
    let rank: BTreeMap<usize, usize> = answer.store.keys().enumerate().map(|(i, a)| (*a, i)).collect();
    let show = |e: &P| sexpr::print(&sexpr::sort_records(&rename_addrs(e, &rank)));
    let outcome = match &answer.outcome {
        Outcome::Value(v) => format!("value {}", show(v)),
        Outcome::Error(v) => format!("err {}", show(v)),
        Outcome::Broken(l, v) => format!("break {l} {}", show(v)),
    };
    CanonicalAnswer {
        outcome,
        store: answer.store.values().map(show).collect(),
        effects: answer.effects.clone(),
    }
}

fn rename_addrs(e: &P, rank: &BTreeMap<usize, usize>) -> P {
    if !e.contains_addr() {
        return e.clone();
    }
    match &e.kind {
        ExprKind::Addr(a) => Expr::rc(ExprKind::Addr(*rank.get(a).unwrap_or(a))),
        _ => P::new(e.with_children(e.children().into_iter().map(|c| rename_addrs(c, rank)).collect())),
    }
}

/// Syntactic value for a primitive result.
pub(crate) fn basic_expr(b: Basic) -> P {
    Expr::rc(match b {
        Basic::Num(n) => ExprKind::Num(n),
        Basic::Str(s) => ExprKind::Str(s.into()),
        Basic::Bool(b) => ExprKind::Bool(b),
        Basic::Undef => ExprKind::Undef,
    })
}

/// The thrown record for a dynamic error, as a syntactic value.
pub(crate) fn error_expr(err: &RuntimeError) -> P {
    let fields = err
        .record_fields()
        .into_iter()
        .map(|(k, v)| (Name::from(k), Expr::rc(ExprKind::Str(v.into()))))
        .collect();
    Expr::rc(ExprKind::Rec(fields))
}

/// Primitive view of a syntactic value.
pub(crate) fn expr_operand(e: &Expr) -> Operand<'_> {
    match &e.kind {
        ExprKind::Num(n) => Operand::Num(*n),
        ExprKind::Str(s) => Operand::Str(s),
        ExprKind::Bool(b) => Operand::Bool(*b),
        ExprKind::Undef => Operand::Undef,
        ExprKind::Null => Operand::Null,
        ExprKind::Addr(a) => Operand::Addr(*a),
        ExprKind::Fun(..) => Operand::Fun,
        _ => Operand::Rec,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Program;
    use crate::sexpr::parse_str;

    fn program(src: &str) -> Program {
        Program::new(&parse_str(src).unwrap()).unwrap()
    }

    fn all_engines(src: &str) -> Vec<CanonicalAnswer> {
        let p = program(src);
        let a = canonical(&eval_subst(&p, 100_000).unwrap());
        let b = canonical(&unload(&eval_rho(&p, 100_000).unwrap()));
        let c = canonical(&unload(&eval_rho_with(&p, 100_000, ControlRules::Deep).unwrap()));
        vec![a, b, c]
    }

    fn agree(src: &str) -> CanonicalAnswer {
        let all = all_engines(src);
        assert!(all.windows(2).all(|w| w[0] == w[1]), "{src}: {all:#?}");
        all[0].clone()
    }

    #[test]
    fn arithmetic() {
        assert_eq!(agree("(op + 1 2)").outcome, "value 3");
    }

    #[test]
    fn finally_and_break() {
        let a = agree(
            "(label ret (label out (while true (try-finally (break out undef) \
             (try-finally (break ret 10) (op print \"this runs\"))))))",
        );
        assert_eq!(a.outcome, "value 10");
        assert_eq!(a.effects, vec!["this runs".to_string()]);
    }

    #[test]
    fn exceptions() {
        assert_eq!(agree("(try-catch (throw 7) x x)").outcome, "value 7");
        assert_eq!(agree("(throw 1)").outcome, "err 1");
        assert_eq!(agree("(break l 1)").outcome, "break l 1");
        assert_eq!(agree("(label a (label b (break a 1)))").outcome, "value 1");
        assert_eq!(agree("(try-catch (label l (throw 2)) e (op + e 1))").outcome, "value 3");
    }

    #[test]
    fn type_errors_are_exceptions() {
        let a = agree("(op + 1 \"a\")");
        assert_eq!(a.outcome, "err (rec (\"message\" \"bad operand to +\") (\"name\" \"TypeError\"))");
        assert_eq!(agree("(try-catch (app 1) e (get e \"name\"))").outcome, "value \"TypeError\"");
        assert_eq!(agree("(if 1 2 3)").outcome.split(' ').next(), Some("err"));
    }

    #[test]
    fn references() {
        let a = agree("(let (x (ref 1)) (seq (set! x 2) (deref x)))");
        assert_eq!(a.outcome, "value 2");
        assert_eq!(a.store, vec!["2".to_string()]);
        let b = agree("(let (x (ref 1)) (let (y (ref x)) y))");
        assert_eq!(b.outcome, "value @1");
        assert_eq!(b.store, vec!["1".to_string(), "@0".to_string()]);
    }

    #[test]
    fn closures_unload() {
        assert_eq!(agree("(let (y 2) (fun (x) y))").outcome, "value (fun (x) 2)");
        assert_eq!(agree("(let (y 2) (fun (y) y))").outcome, "value (fun (y) y)");
        assert_eq!(
            agree("(let (f (let (z 1) (fun () z))) (rec (\"b\" f) (\"a\" (fun (q) f))))").outcome,
            "value (rec (\"a\" (fun (q) (fun () 1))) (\"b\" (fun () 1)))"
        );
    }

    #[test]
    fn records() {
        assert_eq!(agree("(get (rec (\"a\" 1)) \"b\")").outcome, "value undef");
        assert_eq!(agree("(get (upd (rec (\"a\" 1)) \"b\" 2) \"b\")").outcome, "value 2");
        assert_eq!(agree("(del (rec (\"a\" 1) (\"b\" 2)) \"a\")").outcome, "value (rec (\"b\" 2))");
    }

    #[test]
    fn timeouts() {
        let p = program("(while true undef)");
        assert_eq!(eval_rho(&p, 1000).unwrap_err(), Timeout { steps: 1000 });
        assert!(eval_subst(&p, 1000).is_err());
    }
}
