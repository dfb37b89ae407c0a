//! Concrete primitive operations and runtime error values, shared by every
//! concrete evaluator so that their answers agree bit for bit.

use std::fmt;

use crate::ast::PrimOp;

/// The view of a runtime value that primitives can observe.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Num(f64),
    Str(&'a str),
    Bool(bool),
    Undef,
    Null,
    Addr(usize),
    Fun,
    Rec,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Basic {
    Num(f64),
    Str(String),
    Bool(bool),
    Undef,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimOutcome {
    pub value: Basic,
    /// Text written by `print`.
    pub effect: Option<String>,
}

/// Dynamic errors. Each one becomes a thrown error record.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuntimeError {
    NotAFunction,
    ArityMismatch,
    NotABoolean,
    NotARecord,
    NotAStringKey,
    NotAnAddress,
    BadOperand(PrimOp),
}

impl RuntimeError {
    pub fn message(&self) -> String {
        match self {
            RuntimeError::NotAFunction => "applied a non-function".into(),
            RuntimeError::ArityMismatch => "wrong number of arguments".into(),
            RuntimeError::NotABoolean => "branched on a non-boolean".into(),
            RuntimeError::NotARecord => "indexed a non-record".into(),
            RuntimeError::NotAStringKey => "record key is not a string".into(),
            RuntimeError::NotAnAddress => "not a reference".into(),
            RuntimeError::BadOperand(op) => format!("bad operand to {}", op.name()),
        }
    }

    /// Fields of the thrown error record, in key order.
    pub fn record_fields(&self) -> [(&'static str, String); 2] {
        [("message", self.message()), ("name", ERROR_NAME.to_string())]
    }
}

impl fmt::Display for RuntimeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message())
    }
}

pub const ERROR_NAME: &str = "TypeError";

/// Number formatting used by `num->string` and `print`.
pub fn number_to_string(n: f64) -> String {
    if n.is_nan() {
        "NaN".into()
    } else if n.is_infinite() {
        if n > 0.0 { "Infinity" } else { "-Infinity" }.into()
    } else if n == 0.0 {
        "0".into()
    } else if n.fract() == 0.0 && n.abs() < 1e21 {
        format!("{n:.0}")
    } else if n.abs() >= 1e21 || n.abs() < 1e-6 {
        let s = format!("{n:e}");
        match s.split_once('e') {
            Some((m, e)) if !e.starts_with('-') => format!("{m}e+{e}"),
            _ => s,
        }
    } else {
        format!("{n}")
    }
}

pub fn type_name(v: Operand<'_>) -> &'static str {
    match v {
        Operand::Num(_) => "number",
        Operand::Str(_) => "string",
        Operand::Bool(_) => "boolean",
        Operand::Undef => "undefined",
        Operand::Null | Operand::Rec => "object",
        Operand::Fun => "function",
        Operand::Addr(_) => "location",
    }
}

/// Text `print` emits for a value.
pub fn display(v: Operand<'_>) -> String {
    match v {
        Operand::Num(n) => number_to_string(n),
        Operand::Str(s) => s.to_string(),
        Operand::Bool(b) => b.to_string(),
        Operand::Undef => "undefined".into(),
        Operand::Null => "null".into(),
        Operand::Fun => "[function]".into(),
        Operand::Rec => "[object]".into(),
        Operand::Addr(_) => "[location]".into(),
    }
}

/// Strict equality. Functions and records are never equal to anything.
pub fn strict_equal(a: Operand<'_>, b: Operand<'_>) -> bool {
    match (a, b) {
        (Operand::Num(x), Operand::Num(y)) => x == y,
        (Operand::Str(x), Operand::Str(y)) => x == y,
        (Operand::Bool(x), Operand::Bool(y)) => x == y,
        (Operand::Undef, Operand::Undef) | (Operand::Null, Operand::Null) => true,
        (Operand::Addr(x), Operand::Addr(y)) => x == y,
        _ => false,
    }
}

/// Applies a primitive. `args.len()` must equal `op.arity()`.
pub fn apply(op: PrimOp, args: &[Operand<'_>]) -> Result<PrimOutcome, RuntimeError> {
    use Operand::*;
    let bad = || RuntimeError::BadOperand(op);
    if args.len() != op.arity() {
        return Err(bad());
    }
    let value = match (op, args) {
        (PrimOp::Add, [Num(a), Num(b)]) => Basic::Num(a + b),
        (PrimOp::Sub, [Num(a), Num(b)]) => Basic::Num(a - b),
        (PrimOp::Mul, [Num(a), Num(b)]) => Basic::Num(a * b),
        (PrimOp::Div, [Num(a), Num(b)]) => Basic::Num(a / b),
        (PrimOp::StrictEq, [a, b]) => Basic::Bool(strict_equal(*a, *b)),
        (PrimOp::Lt, [Num(a), Num(b)]) => Basic::Bool(a < b),
        (PrimOp::Lt, [Str(a), Str(b)]) => Basic::Bool(a < b),
        (PrimOp::StrConcat, [Str(a), Str(b)]) => Basic::Str(format!("{a}{b}")),
        (PrimOp::TypeOf, [v]) => Basic::Str(type_name(*v).into()),
        (PrimOp::NumToString, [Num(n)]) => Basic::Str(number_to_string(*n)),
        (PrimOp::StrLength, [Str(s)]) => Basic::Num(s.encode_utf16().count() as f64),
        (PrimOp::Print, [v]) => {
            return Ok(PrimOutcome { value: Basic::Undef, effect: Some(display(*v)) });
        }
        _ => return Err(bad()),
    };
    Ok(PrimOutcome { value, effect: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Operand::*;

    fn value(op: PrimOp, args: &[Operand<'_>]) -> Basic {
        apply(op, args).unwrap().value
    }

    #[test]
    fn arithmetic() {
        assert_eq!(value(PrimOp::Add, &[Num(1.0), Num(2.0)]), Basic::Num(3.0));
        assert_eq!(value(PrimOp::Div, &[Num(1.0), Num(4.0)]), Basic::Num(0.25));
        assert_eq!(apply(PrimOp::Add, &[Num(1.0), Str("a")]), Err(RuntimeError::BadOperand(PrimOp::Add)));
    }

    #[test]
    fn equality_and_order() {
        assert_eq!(value(PrimOp::StrictEq, &[Num(f64::NAN), Num(f64::NAN)]), Basic::Bool(false));
        assert_eq!(value(PrimOp::StrictEq, &[Str("a"), Str("a")]), Basic::Bool(true));
        assert_eq!(value(PrimOp::StrictEq, &[Fun, Fun]), Basic::Bool(false));
        assert_eq!(value(PrimOp::StrictEq, &[Num(1.0), Str("1")]), Basic::Bool(false));
        assert_eq!(value(PrimOp::Lt, &[Str("a"), Str("b")]), Basic::Bool(true));
        assert!(apply(PrimOp::Lt, &[Str("a"), Num(1.0)]).is_err());
    }

    #[test]
    fn strings() {
        assert_eq!(value(PrimOp::StrConcat, &[Str("a"), Str("b")]), Basic::Str("ab".into()));
        assert_eq!(value(PrimOp::StrLength, &[Str("h\u{e9}")]), Basic::Num(2.0));
        assert_eq!(value(PrimOp::TypeOf, &[Null]), Basic::Str("object".into()));
        assert_eq!(value(PrimOp::TypeOf, &[Fun]), Basic::Str("function".into()));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(number_to_string(3.0), "3");
        assert_eq!(number_to_string(-0.0), "0");
        assert_eq!(number_to_string(0.5), "0.5");
        assert_eq!(number_to_string(1e21), "1e+21");
        assert_eq!(number_to_string(1e-7), "1e-7");
        assert_eq!(number_to_string(f64::NEG_INFINITY), "-Infinity");
    }

    #[test]
    fn print_effect() {
        let out = apply(PrimOp::Print, &[Str("this runs")]).unwrap();
        assert_eq!(out.value, Basic::Undef);
        assert_eq!(out.effect.as_deref(), Some("this runs"));
        assert_eq!(apply(PrimOp::Print, &[Num(10.0)]).unwrap().effect.as_deref(), Some("10"));
    }
}
