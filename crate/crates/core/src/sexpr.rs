//! S-expression concrete syntax.
//!
//! One program per file, `;` starts a line comment. Forms:
//!
//! ```text
//! (fun (x ...) e)      (rec ("s" e) ...)    (let (x e) e)       (app e e ...)
//! (get e e)            (upd e e e)          (del e e)           (set! e e)
//! (ref e)              (deref e)            (if e e e)          (seq e e)
//! (while e e)          (label l e)          (break l e)         (try-catch e x e)
//! (try-finally e e)    (throw e)            (op name e ...)
//! ```
//!
//! Atoms are `"strings"`, numbers, `true`, `false`, `undef`, `null` and
//! identifiers. `@n` is the printed form of a runtime address and is
//! rejected by the parser.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::rc::Rc;

use crate::ast::{annotate_sites, Expr, ExprKind, Label, Name, PrimOp, P};

#[derive(Clone, Debug)]
pub struct SourceText {
    pub text: String,
    pub origin: String,
}

impl SourceText {
    pub fn new(text: impl Into<String>, origin: impl Into<String>) -> Self {
        SourceText { text: text.into(), origin: origin.into() }
    }

    pub fn stdin(text: impl Into<String>) -> Self {
        SourceText::new(text, "<stdin>")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("lexical error: {0}")]
    Lexical(String),
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("unexpected `)`")]
    UnexpectedClose,
    #[error("trailing input after program")]
    TrailingInput,
    #[error("`{form}` expects {expected}, found {found} argument(s)")]
    Arity { form: String, expected: String, found: usize },
    #[error("duplicate record key \"{0}\"")]
    DuplicateKey(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("unknown form `{0}`")]
    UnknownForm(String),
    #[error("unknown primitive `{0}`")]
    UnknownPrim(String),
    #[error("literal address `{0}` is not allowed in programs")]
    LiteralAddress(String),
    #[error("expected {0}")]
    Expected(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{origin}:{pos}: {kind}")]
pub struct ParseError {
    pub origin: String,
    pub pos: Pos,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Str(String),
    Atom(String),
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    pos: Pos,
}

impl<'a> Lexer<'a> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.pos.line += 1;
            self.pos.col = 1;
        } else {
            self.pos.col += 1;
        }
        Some(c)
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, (Pos, ParseErrorKind)> {
        let mut out = Vec::new();
        while let Some(&c) = self.chars.peek() {
            let start = self.pos;
            match c {
                c if c.is_whitespace() => {
                    self.bump();
                }
                ';' => {
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                '(' => {
                    self.bump();
                    out.push((Tok::Open, start));
                }
                ')' => {
                    self.bump();
                    out.push((Tok::Close, start));
                }
                '"' => {
                    self.bump();
                    let s = self.string(start)?;
                    out.push((Tok::Str(s), start));
                }
                _ => {
                    let mut s = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_whitespace() || matches!(c, '(' | ')' | '"' | ';') {
                            break;
                        }
                        s.push(c);
                        self.bump();
                    }
                    out.push((Tok::Atom(s), start));
                }
            }
        }
        Ok(out)
    }

    fn string(&mut self, start: Pos) -> Result<String, (Pos, ParseErrorKind)> {
        let mut s = String::new();
        loop {
            let here = self.pos;
            match self.bump() {
                None => return Err((start, ParseErrorKind::Lexical("unterminated string".into()))),
                Some('"') => return Ok(s),
                Some('\\') => match self.bump() {
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some('r') => s.push('\r'),
                    Some('0') => s.push('\0'),
                    Some('\\') => s.push('\\'),
                    Some('"') => s.push('"'),
                    Some('u') => {
                        if self.bump() != Some('{') {
                            return Err((here, ParseErrorKind::Lexical("expected `{` after \\u".into())));
                        }
                        let mut hex = String::new();
                        loop {
                            match self.bump() {
                                Some('}') => break,
                                Some(c) if c.is_ascii_hexdigit() && hex.len() < 6 => hex.push(c),
                                _ => {
                                    return Err((here, ParseErrorKind::Lexical("malformed \\u{...} escape".into())))
                                }
                            }
                        }
                        let ch = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32).ok_or_else(|| {
                            (here, ParseErrorKind::Lexical(format!("invalid code point \\u{{{hex}}}")))
                        })?;
                        s.push(ch);
                    }
                    Some(c) => return Err((here, ParseErrorKind::Lexical(format!("unknown escape `\\{c}`")))),
                    None => return Err((start, ParseErrorKind::Lexical("unterminated string".into()))),
                },
                Some(c) => s.push(c),
            }
        }
    }
}

#[derive(Debug)]
enum SExp {
    List(Vec<SExp>, Pos),
    Str(String, Pos),
    Atom(String, Pos),
}

impl SExp {
    fn pos(&self) -> Pos {
        match self {
            SExp::List(_, p) | SExp::Str(_, p) | SExp::Atom(_, p) => *p,
        }
    }
}

fn read_tree(toks: &[(Tok, Pos)], i: &mut usize, eof: Pos) -> Result<SExp, (Pos, ParseErrorKind)> {
    let Some((tok, pos)) = toks.get(*i) else {
        return Err((eof, ParseErrorKind::UnexpectedEof));
    };
    *i += 1;
    match tok {
        Tok::Close => Err((*pos, ParseErrorKind::UnexpectedClose)),
        Tok::Str(s) => Ok(SExp::Str(s.clone(), *pos)),
        Tok::Atom(a) => Ok(SExp::Atom(a.clone(), *pos)),
        Tok::Open => {
            let mut items = Vec::new();
            loop {
                match toks.get(*i) {
                    None => return Err((eof, ParseErrorKind::UnexpectedEof)),
                    Some((Tok::Close, _)) => {
                        *i += 1;
                        return Ok(SExp::List(items, *pos));
                    }
                    Some(_) => items.push(read_tree(toks, i, eof)?),
                }
            }
        }
    }
}

fn looks_numeric(a: &str) -> bool {
    let mut cs = a.chars();
    match cs.next() {
        Some(c) if c.is_ascii_digit() => true,
        Some('+' | '-' | '.') => matches!(cs.next(), Some(c) if c.is_ascii_digit() || c == '.'),
        _ => false,
    }
}

fn parse_number(a: &str) -> Option<f64> {
    match a {
        "NaN" => return Some(f64::NAN),
        "Infinity" | "+Infinity" => return Some(f64::INFINITY),
        "-Infinity" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    if !looks_numeric(a) || a.chars().any(|c| c.is_ascii_alphabetic() && c != 'e' && c != 'E') {
        return None;
    }
    a.parse::<f64>().ok()
}

type Res<T> = Result<T, (Pos, ParseErrorKind)>;

fn rc(kind: ExprKind) -> P {
    Expr::rc(kind)
}

fn ident(s: &SExp) -> Res<Name> {
    match s {
        SExp::Atom(a, p) => {
            if is_reserved(a) || parse_number(a).is_some() || looks_numeric(a) {
                Err((*p, ParseErrorKind::Expected("identifier")))
            } else if a.starts_with('@') {
                Err((*p, ParseErrorKind::LiteralAddress(a.clone())))
            } else {
                Ok(a.as_str().into())
            }
        }
        _ => Err((s.pos(), ParseErrorKind::Expected("identifier"))),
    }
}

fn is_reserved(a: &str) -> bool {
    matches!(a, "true" | "false" | "undef" | "null" | "NaN" | "Infinity" | "+Infinity" | "-Infinity")
}

fn arity(form: &str, args: &[SExp], n: usize, pos: Pos) -> Res<()> {
    if args.len() == n {
        Ok(())
    } else {
        Err((
            pos,
            ParseErrorKind::Arity { form: form.into(), expected: format!("{n}"), found: args.len() },
        ))
    }
}

fn convert(s: &SExp) -> Res<P> {
    match s {
        SExp::Str(v, _) => Ok(rc(ExprKind::Str(v.as_str().into()))),
        SExp::Atom(a, p) => {
            let kind = match a.as_str() {
                "true" => ExprKind::Bool(true),
                "false" => ExprKind::Bool(false),
                "undef" => ExprKind::Undef,
                "null" => ExprKind::Null,
                _ if a.starts_with('@') => return Err((*p, ParseErrorKind::LiteralAddress(a.clone()))),
                _ => {
                    if let Some(n) = parse_number(a) {
                        ExprKind::Num(n)
                    } else if looks_numeric(a) {
                        return Err((*p, ParseErrorKind::Lexical(format!("malformed number `{a}`"))));
                    } else {
                        ExprKind::Var(a.as_str().into())
                    }
                }
            };
            Ok(rc(kind))
        }
        SExp::List(items, pos) => {
            let pos = *pos;
            let Some((head, args)) = items.split_first() else {
                return Err((pos, ParseErrorKind::Expected("a form, found `()`")));
            };
            let head = match head {
                SExp::Atom(a, _) => a.as_str(),
                other => return Err((other.pos(), ParseErrorKind::Expected("a form keyword"))),
            };
            let e = |i: usize| convert(&args[i]);
            let kind = match head {
                "fun" => {
                    arity(head, args, 2, pos)?;
                    let SExp::List(ps, _) = &args[0] else {
                        return Err((args[0].pos(), ParseErrorKind::Expected("parameter list")));
                    };
                    let mut params: Vec<Name> = Vec::new();
                    for p in ps {
                        let x = ident(p)?;
                        if params.contains(&x) {
                            return Err((p.pos(), ParseErrorKind::DuplicateParam(x.to_string())));
                        }
                        params.push(x);
                    }
                    ExprKind::Fun(params, e(1)?)
                }
                "rec" => {
                    let mut fields: Vec<(Name, P)> = Vec::new();
                    let mut seen = BTreeSet::new();
                    for f in args {
                        let SExp::List(kv, fp) = f else {
                            return Err((f.pos(), ParseErrorKind::Expected("(\"key\" expr) field")));
                        };
                        let [SExp::Str(k, kp), v] = kv.as_slice() else {
                            return Err((*fp, ParseErrorKind::Expected("(\"key\" expr) field")));
                        };
                        if !seen.insert(k.clone()) {
                            return Err((*kp, ParseErrorKind::DuplicateKey(k.clone())));
                        }
                        fields.push((k.as_str().into(), convert(v)?));
                    }
                    ExprKind::Rec(fields)
                }
                "let" => {
                    arity(head, args, 2, pos)?;
                    let SExp::List(b, bp) = &args[0] else {
                        return Err((args[0].pos(), ParseErrorKind::Expected("(x e) binding")));
                    };
                    let [x, rhs] = b.as_slice() else {
                        return Err((*bp, ParseErrorKind::Expected("(x e) binding")));
                    };
                    ExprKind::Let(ident(x)?, convert(rhs)?, e(1)?)
                }
                "app" => {
                    if args.is_empty() {
                        return Err((
                            pos,
                            ParseErrorKind::Arity { form: head.into(), expected: "at least 1".into(), found: 0 },
                        ));
                    }
                    ExprKind::App(e(0)?, args[1..].iter().map(convert).collect::<Res<_>>()?)
                }
                "get" => {
                    arity(head, args, 2, pos)?;
                    ExprKind::Get(e(0)?, e(1)?)
                }
                "upd" => {
                    arity(head, args, 3, pos)?;
                    ExprKind::Upd(e(0)?, e(1)?, e(2)?)
                }
                "del" => {
                    arity(head, args, 2, pos)?;
                    ExprKind::Del(e(0)?, e(1)?)
                }
                "set!" => {
                    arity(head, args, 2, pos)?;
                    ExprKind::Set(e(0)?, e(1)?)
                }
                "ref" => {
                    arity(head, args, 1, pos)?;
                    ExprKind::Ref(e(0)?)
                }
                "deref" => {
                    arity(head, args, 1, pos)?;
                    ExprKind::Deref(e(0)?)
                }
                "if" => {
                    arity(head, args, 3, pos)?;
                    ExprKind::If(e(0)?, e(1)?, e(2)?)
                }
                "seq" => {
                    arity(head, args, 2, pos)?;
                    ExprKind::Seq(e(0)?, e(1)?)
                }
                "while" => {
                    arity(head, args, 2, pos)?;
                    ExprKind::While(e(0)?, e(1)?)
                }
                "label" => {
                    arity(head, args, 2, pos)?;
                    ExprKind::Label(Label(ident(&args[0])?), e(1)?)
                }
                "break" => {
                    arity(head, args, 2, pos)?;
                    ExprKind::Break(Label(ident(&args[0])?), e(1)?)
                }
                "try-catch" => {
                    arity(head, args, 3, pos)?;
                    ExprKind::TryCatch(e(0)?, ident(&args[1])?, e(2)?)
                }
                "try-finally" => {
                    arity(head, args, 2, pos)?;
                    ExprKind::TryFinally(e(0)?, e(1)?)
                }
                "throw" => {
                    arity(head, args, 1, pos)?;
                    ExprKind::Throw(e(0)?)
                }
                "op" => {
                    let Some((name, operands)) = args.split_first() else {
                        return Err((
                            pos,
                            ParseErrorKind::Arity { form: head.into(), expected: "a primitive name".into(), found: 0 },
                        ));
                    };
                    let SExp::Atom(n, np) = name else {
                        return Err((name.pos(), ParseErrorKind::Expected("primitive name")));
                    };
                    let op = PrimOp::from_name(n).ok_or((*np, ParseErrorKind::UnknownPrim(n.clone())))?;
                    if operands.len() != op.arity() {
                        return Err((
                            pos,
                            ParseErrorKind::Arity {
                                form: format!("op {}", op.name()),
                                expected: op.arity().to_string(),
                                found: operands.len(),
                            },
                        ));
                    }
                    ExprKind::Op(op, operands.iter().map(convert).collect::<Res<_>>()?)
                }
                other => return Err((pos, ParseErrorKind::UnknownForm(other.to_string()))),
            };
            Ok(rc(kind))
        }
    }
}

/// Parses one program and annotates its sites.
pub fn parse(src: &SourceText) -> Result<Expr, ParseError> {
    let fail = |(pos, kind): (Pos, ParseErrorKind)| ParseError { origin: src.origin.clone(), pos, kind };
    let lexer = Lexer { chars: src.text.chars().peekable(), pos: Pos { line: 1, col: 1 } };
    let eof = {
        let mut l = Lexer { chars: src.text.chars().peekable(), pos: Pos { line: 1, col: 1 } };
        while l.bump().is_some() {}
        l.pos
    };
    let toks = lexer.tokens().map_err(fail)?;
    let mut i = 0;
    let tree = read_tree(&toks, &mut i, eof).map_err(fail)?;
    if let Some((_, pos)) = toks.get(i) {
        return Err(fail((*pos, ParseErrorKind::TrailingInput)));
    }
    let expr = convert(&tree).map_err(fail)?;
    Ok(annotate_sites(&expr))
}

/// Convenience wrapper for in-memory text.
pub fn parse_str(text: &str) -> Result<Expr, ParseError> {
    parse(&SourceText::stdin(text))
}

pub fn format_number(n: f64) -> String {
    if n.is_nan() {
        "NaN".into()
    } else if n == f64::INFINITY {
        "Infinity".into()
    } else if n == f64::NEG_INFINITY {
        "-Infinity".into()
    } else {
        format!("{n}")
    }
}

pub fn quote_string(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '\0' => out.push_str("\\0"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn write_expr(e: &Expr, out: &mut String) {
    use ExprKind::*;
    let list = |out: &mut String, head: &str, kids: &[&P]| {
        out.push('(');
        out.push_str(head);
        for k in kids {
            out.push(' ');
            write_expr(k, out);
        }
        out.push(')');
    };
    match &e.kind {
        Var(x) => out.push_str(x),
        Str(s) => quote_string(s, out),
        Num(n) => out.push_str(&format_number(*n)),
        Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Undef => out.push_str("undef"),
        Null => out.push_str("null"),
        Addr(a) => {
            let _ = write!(out, "@{a}");
        }
        Fun(params, body) => {
            out.push_str("(fun (");
            out.push_str(&params.iter().map(|p| &**p).collect::<Vec<_>>().join(" "));
            out.push_str(") ");
            write_expr(body, out);
            out.push(')');
        }
        Rec(fields) => {
            out.push_str("(rec");
            for (k, v) in fields {
                out.push_str(" (");
                quote_string(k, out);
                out.push(' ');
                write_expr(v, out);
                out.push(')');
            }
            out.push(')');
        }
        Let(x, rhs, body) => {
            let _ = write!(out, "(let ({x} ");
            write_expr(rhs, out);
            out.push_str(") ");
            write_expr(body, out);
            out.push(')');
        }
        App(f, args) => {
            let kids: Vec<&P> = std::iter::once(f).chain(args).collect();
            list(out, "app", &kids)
        }
        Get(a, b) => list(out, "get", &[a, b]),
        Upd(a, b, c) => list(out, "upd", &[a, b, c]),
        Del(a, b) => list(out, "del", &[a, b]),
        Set(a, b) => list(out, "set!", &[a, b]),
        Ref(a) => list(out, "ref", &[a]),
        Deref(a) => list(out, "deref", &[a]),
        If(a, b, c) => list(out, "if", &[a, b, c]),
        Seq(a, b) => list(out, "seq", &[a, b]),
        While(a, b) => list(out, "while", &[a, b]),
        Label(l, a) => list(out, &format!("label {l}"), &[a]),
        Break(l, a) => list(out, &format!("break {l}"), &[a]),
        TryCatch(a, x, b) => {
            out.push_str("(try-catch ");
            write_expr(a, out);
            let _ = write!(out, " {x} ");
            write_expr(b, out);
            out.push(')');
        }
        TryFinally(a, b) => list(out, "try-finally", &[a, b]),
        Throw(a) => list(out, "throw", &[a]),
        Op(op, args) => list(out, &format!("op {}", op.name()), &args.iter().collect::<Vec<_>>()),
    }
}

/// Canonical single-line rendering; `parse(print(e))` reproduces `e`.
pub fn print(expr: &Expr) -> String {
    let mut out = String::new();
    write_expr(expr, &mut out);
    out
}

/// Printing with a source origin attached.
pub fn print_source(expr: &Expr, origin: &str) -> SourceText {
    SourceText::new(print(expr), origin)
}

/// Rebuilds `expr` with record fields sorted by key, for comparisons that
/// treat records as maps.
pub fn sort_records(expr: &Expr) -> Expr {
    let kids: Vec<P> = expr.children().into_iter().map(|c| Rc::new(sort_records(c))).collect();
    let mut out = expr.with_children(kids);
    if let ExprKind::Rec(fields) = &mut out.kind {
        fields.sort_by(|a, b| a.0.cmp(&b.0));
    }
    out
}
