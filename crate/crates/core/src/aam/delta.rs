//! Primitives over abstract values. Numbers are collapsed to their type,
//! booleans and known strings stay exact, and every other string is `StrTop`.

use std::collections::BTreeSet;

use super::AValue;
use crate::ast::{Name, PrimOp};
use crate::delta::{self, Basic, Operand, RuntimeError};

type Results = Vec<Result<(AValue, Option<String>), RuntimeError>>;

/// The single concrete value an abstract value stands for, if there is one.
fn exact(v: &AValue) -> Option<Operand<'_>> {
    match v {
        AValue::Str(s) => Some(Operand::Str(s)),
        AValue::Bool(b) => Some(Operand::Bool(*b)),
        AValue::Undef => Some(Operand::Undef),
        AValue::Null => Some(Operand::Null),
        _ => None,
    }
}

/// Some concrete value of the same type.
fn representative(v: &AValue) -> Operand<'_> {
    match v {
        AValue::Num => Operand::Num(0.0),
        AValue::StrTop => Operand::Str(""),
        AValue::Addr(_) => Operand::Addr(0),
        AValue::Fun(..) => Operand::Fun,
        AValue::Rec(_) => Operand::Rec,
        other => exact(other).unwrap(),
    }
}

fn abstract_string(known: &BTreeSet<Name>, s: &str) -> AValue {
    if known.contains(s) {
        AValue::Str(s.into())
    } else {
        AValue::StrTop
    }
}

fn abstract_basic(known: &BTreeSet<Name>, b: Basic) -> AValue {
    match b {
        Basic::Num(_) => AValue::Num,
        Basic::Str(s) => abstract_string(known, &s),
        Basic::Bool(b) => AValue::Bool(b),
        Basic::Undef => AValue::Undef,
    }
}

/// Could `s` be a member of the strings `v` stands for?
fn may_be(known: &BTreeSet<Name>, v: &AValue, s: &str) -> bool {
    match v {
        AValue::Str(x) => &**x == s,
        AValue::StrTop => !known.contains(s),
        _ => false,
    }
}

fn concat(known: &BTreeSet<Name>, a: &AValue, b: &AValue) -> Vec<AValue> {
    let mut out = vec![AValue::StrTop];
    for k in known {
        let splits = k.char_indices().map(|(i, _)| i).chain([k.len()]);
        if splits.into_iter().any(|i| may_be(known, a, &k[..i]) && may_be(known, b, &k[i..])) {
            out.push(AValue::Str(k.clone()));
        }
    }
    out
}

fn number_strings(known: &BTreeSet<Name>) -> Vec<AValue> {
    let mut out = vec![AValue::StrTop];
    for k in known {
        if k.parse::<f64>().is_ok_and(|n| delta::number_to_string(n) == **k) {
            out.push(AValue::Str(k.clone()));
        }
    }
    out
}

fn strict_equal(a: &AValue, b: &AValue) -> Vec<bool> {
    use AValue::*;
    match (a, b) {
        (Num, Num) | (StrTop, StrTop) => vec![false, true],
        (Str(x), Str(y)) => vec![x == y],
        (Bool(x), Bool(y)) => vec![x == y],
        (Undef, Undef) | (Null, Null) => vec![true],
        (Addr(x), Addr(y)) if x == y => vec![false, true],
        _ => vec![false],
    }
}

/// Every outcome a primitive may have on arguments drawn from `args`.
pub fn delta_hat(known: &BTreeSet<Name>, op: PrimOp, args: &[AValue]) -> Results {
    let plain = |vs: Vec<AValue>| vs.into_iter().map(|v| Ok((v, None))).collect();
    let reps: Vec<_> = args.iter().map(representative).collect();
    if let Err(e) = delta::apply(op, &reps) {
        return vec![Err(e)];
    }
    match op {
        PrimOp::StrictEq => plain(strict_equal(&args[0], &args[1]).into_iter().map(AValue::Bool).collect()),
        PrimOp::Print => {
            let text = match exact(&args[0]) {
                Some(v) => delta::display(v),
                None => format!("<{}>", delta::type_name(reps[0])),
            };
            vec![Ok((AValue::Undef, Some(text)))]
        }
        PrimOp::TypeOf => plain(vec![abstract_string(known, delta::type_name(reps[0]))]),
        _ => {
            let exacts: Option<Vec<_>> = args.iter().map(exact).collect();
            if let Some(ops) = exacts {
                let out = delta::apply(op, &ops).expect("type-correct primitive");
                return plain(vec![abstract_basic(known, out.value)]);
            }
            plain(match op {
                PrimOp::Add | PrimOp::Sub | PrimOp::Mul | PrimOp::Div | PrimOp::StrLength => vec![AValue::Num],
                PrimOp::Lt => vec![AValue::Bool(false), AValue::Bool(true)],
                PrimOp::StrConcat => concat(known, &args[0], &args[1]),
                PrimOp::NumToString => number_strings(known),
                PrimOp::StrictEq | PrimOp::Print | PrimOp::TypeOf => unreachable!(),
            })
        }
    }
}
