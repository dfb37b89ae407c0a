//! The explicit-substitution calculus: closures pair terms with
//! environments, and environments are pushed into subterms one level at a
//! time when a closure is decomposed.

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use super::{subst_many, Answer, Outcome, Timeout};
use crate::ast::{free_vars, Expr, ExprKind, Label, Name, PrimOp, Program, P};
use crate::delta::{self, Operand, RuntimeError};

pub type CalcEnv = Rc<BTreeMap<Name, CalcValue>>;

#[derive(Clone, Debug)]
pub enum CalcValue {
    Str(Name),
    Num(f64),
    Bool(bool),
    Undef,
    Null,
    Addr(usize),
    /// A function term closed by an environment.
    Fun(P, CalcEnv),
    Rec(Rc<Vec<(Name, CalcValue)>>),
}

impl CalcValue {
    fn operand(&self) -> Operand<'_> {
        match self {
            CalcValue::Str(s) => Operand::Str(s),
            CalcValue::Num(n) => Operand::Num(*n),
            CalcValue::Bool(b) => Operand::Bool(*b),
            CalcValue::Undef => Operand::Undef,
            CalcValue::Null => Operand::Null,
            CalcValue::Addr(a) => Operand::Addr(*a),
            CalcValue::Fun(..) => Operand::Fun,
            CalcValue::Rec(_) => Operand::Rec,
        }
    }

    fn from_basic(b: delta::Basic) -> CalcValue {
        match b {
            delta::Basic::Num(n) => CalcValue::Num(n),
            delta::Basic::Str(s) => CalcValue::Str(s.into()),
            delta::Basic::Bool(b) => CalcValue::Bool(b),
            delta::Basic::Undef => CalcValue::Undef,
        }
    }

    fn error(err: &RuntimeError) -> CalcValue {
        let fields = err.record_fields().into_iter().map(|(k, v)| (Name::from(k), CalcValue::Str(v.into()))).collect();
        CalcValue::Rec(Rc::new(fields))
    }
}

type C = Rc<Closure>;

/// Closures: a term under an environment, a value, or a composite whose
/// parts are closures.
#[derive(Clone, Debug)]
pub enum Closure {
    Code(P, CalcEnv),
    Val(CalcValue),
    Rec(Vec<(Name, C)>),
    Let(Name, C, P, CalcEnv),
    App(C, Vec<C>),
    Get(C, C),
    Upd(C, C, C),
    Del(C, C),
    Set(C, C),
    Ref(C),
    Deref(C),
    If(C, C, C),
    Seq(C, C),
    While(C, C),
    Label(Label, C),
    Break(Label, C),
    TryCatch(C, Name, P, CalcEnv),
    TryFinally(C, C),
    Throw(C),
    Op(PrimOp, Vec<C>),
}

impl Closure {
    /// The value this closure denotes without further reduction.
    fn value(&self) -> Option<CalcValue> {
        match self {
            Closure::Val(v) => Some(v.clone()),
            Closure::Code(e, env) => match &e.kind {
                ExprKind::Str(s) => Some(CalcValue::Str(s.clone())),
                ExprKind::Num(n) => Some(CalcValue::Num(*n)),
                ExprKind::Bool(b) => Some(CalcValue::Bool(*b)),
                ExprKind::Undef => Some(CalcValue::Undef),
                ExprKind::Null => Some(CalcValue::Null),
                ExprKind::Fun(..) => Some(CalcValue::Fun(e.clone(), env.clone())),
                _ => None,
            },
            _ => None,
        }
    }

    fn children(&self) -> Vec<&C> {
        use Closure::*;
        match self {
            Code(..) | Val(_) => vec![],
            Rec(fields) => fields.iter().map(|(_, c)| c).collect(),
            Let(_, c, _, _) | Ref(c) | Deref(c) | Label(_, c) | Break(_, c) | Throw(c) => vec![c],
            TryCatch(c, ..) | TryFinally(c, _) | If(c, _, _) | Seq(c, _) => vec![c],
            While(..) => vec![],
            App(f, args) => std::iter::once(f).chain(args).collect(),
            Get(a, b) | Del(a, b) | Set(a, b) => vec![a, b],
            Upd(a, b, c) => vec![a, b, c],
            Op(_, args) => args.iter().collect(),
        }
    }

    fn replace_child(&self, i: usize, c: C) -> Closure {
        use Closure::*;
        let mut c = Some(c);
        let mut take = || c.take().expect("one replacement");
        match self {
            Rec(fields) => {
                let mut fields = fields.clone();
                fields[i].1 = take();
                rec(fields)
            }
            Let(x, _, body, env) => Let(x.clone(), take(), body.clone(), env.clone()),
            Ref(_) => Ref(take()),
            Deref(_) => Deref(take()),
            Label(l, _) => Label(l.clone(), take()),
            Break(l, _) => Break(l.clone(), take()),
            Throw(_) => Throw(take()),
            TryCatch(_, x, h, env) => TryCatch(take(), x.clone(), h.clone(), env.clone()),
            TryFinally(_, f) => TryFinally(take(), f.clone()),
            If(_, t, f) => If(take(), t.clone(), f.clone()),
            Seq(_, d) => Seq(take(), d.clone()),
            App(f, args) => {
                let mut args = args.clone();
                if i == 0 {
                    App(take(), args)
                } else {
                    args[i - 1] = take();
                    App(f.clone(), args)
                }
            }
            Get(a, b) => if i == 0 { Get(take(), b.clone()) } else { Get(a.clone(), take()) },
            Del(a, b) => if i == 0 { Del(take(), b.clone()) } else { Del(a.clone(), take()) },
            Set(a, b) => if i == 0 { Set(take(), b.clone()) } else { Set(a.clone(), take()) },
            Upd(a, b, v) => match i {
                0 => Upd(take(), b.clone(), v.clone()),
                1 => Upd(a.clone(), take(), v.clone()),
                _ => Upd(a.clone(), b.clone(), take()),
            },
            Op(op, args) => {
                let mut args = args.clone();
                args[i] = take();
                Op(*op, args)
            }
            Code(..) | Val(_) | While(..) => unreachable!("closure has no evaluated children"),
        }
    }

    fn is_control_frame(&self) -> bool {
        matches!(self, Closure::Label(..) | Closure::TryCatch(..) | Closure::TryFinally(..))
    }
}

/// Record closure, collapsed to a value once every field is one.
fn rec(fields: Vec<(Name, C)>) -> Closure {
    let values: Option<Vec<_>> = fields.iter().map(|(k, c)| c.value().map(|v| (k.clone(), v))).collect();
    match values {
        Some(vs) => Closure::Val(CalcValue::Rec(Rc::new(vs))),
        None => Closure::Rec(fields),
    }
}

fn val(v: CalcValue) -> C {
    Rc::new(Closure::Val(v))
}

/// Which rules move a throw or break outward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlRules {
    /// Past one local frame per step.
    Bubble,
    /// Past the whole local context to the nearest label, handler or
    /// finalizer in one step.
    Deep,
}

#[derive(Clone, Debug)]
pub struct CalcState {
    pub store: BTreeMap<usize, CalcValue>,
    pub program: Rc<Closure>,
    pub effects: Vec<String>,
}

impl CalcState {
    pub fn inject(program: &Program) -> CalcState {
        CalcState {
            store: BTreeMap::new(),
            program: Rc::new(Closure::Code(P::new(program.expr().clone()), CalcEnv::default())),
            effects: Vec::new(),
        }
    }
}

pub enum Reduced {
    State(CalcState),
    Answer(Answer<CalcValue>),
}

enum Signal {
    Throw(CalcValue),
    Break(Label, CalcValue),
}

enum Step {
    Value(CalcValue),
    Next(Closure),
    Signal(Signal),
}

struct Reducer<'a> {
    rules: ControlRules,
    store: &'a mut BTreeMap<usize, CalcValue>,
    effects: &'a mut Vec<String>,
}

/// Performs one reduction step, or reports the answer of a finished state.
pub fn reduce_rho(state: CalcState, rules: ControlRules) -> Reduced {
    let CalcState { mut store, program, mut effects } = state;
    let step = Reducer { rules, store: &mut store, effects: &mut effects }.step(&program);
    let outcome = match step {
        Step::Next(c) => return Reduced::State(CalcState { store, program: Rc::new(c), effects }),
        Step::Value(v) => Outcome::Value(v),
        Step::Signal(Signal::Throw(v)) => Outcome::Error(v),
        Step::Signal(Signal::Break(l, v)) => Outcome::Broken(l, v),
    };
    Reduced::Answer(Answer { store, outcome, effects })
}

pub fn eval_rho(program: &Program, fuel: u64) -> Result<Answer<CalcValue>, Timeout> {
    eval_rho_with(program, fuel, ControlRules::Bubble)
}

pub fn eval_rho_with(program: &Program, fuel: u64, rules: ControlRules) -> Result<Answer<CalcValue>, Timeout> {
    let mut state = CalcState::inject(program);
    let mut steps = 0;
    loop {
        if state.program.value().is_some() || is_signal(&state.program) {
            if let Reduced::Answer(a) = reduce_rho(state, rules) {
                return Ok(a);
            }
            unreachable!("finished program reduced further");
        }
        if steps == fuel {
            return Err(Timeout { steps });
        }
        steps += 1;
        state = match reduce_rho(state, rules) {
            Reduced::State(s) => s,
            Reduced::Answer(a) => return Ok(a),
        };
    }
}

fn is_signal(c: &Closure) -> bool {
    match c {
        Closure::Throw(v) | Closure::Break(_, v) => v.value().is_some(),
        _ => false,
    }
}

impl Reducer<'_> {
    fn step(&mut self, c: &Closure) -> Step {
        if let Some(v) = c.value() {
            return Step::Value(v);
        }
        match c {
            Closure::Code(e, env) => return Step::Next(propagate(e, env)),
            Closure::Throw(v) if v.value().is_some() => return Step::Signal(Signal::Throw(v.value().unwrap())),
            Closure::Break(l, v) if v.value().is_some() => {
                return Step::Signal(Signal::Break(l.clone(), v.value().unwrap()))
            }
            _ => {}
        }
        let mut values = Vec::new();
        for (i, kid) in c.children().into_iter().enumerate() {
            match self.step(kid) {
                Step::Value(v) => values.push(v),
                Step::Next(k) => return Step::Next(c.replace_child(i, Rc::new(k))),
                Step::Signal(sig) => return self.catch(c, sig),
            }
        }
        self.contract(c, values)
    }

    fn catch(&self, frame: &Closure, sig: Signal) -> Step {
        match (frame, sig) {
            (Closure::TryCatch(_, x, h, env), Signal::Throw(v)) => Step::Next(Closure::Code(h.clone(), bind(env, x, v))),
            (Closure::TryCatch(..), Signal::Break(l, v)) => Step::Next(Closure::Break(l, val(v))),
            (Closure::TryFinally(_, fin), Signal::Throw(v)) => {
                Step::Next(Closure::Seq(fin.clone(), Rc::new(Closure::Throw(val(v)))))
            }
            (Closure::TryFinally(_, fin), Signal::Break(l, v)) => {
                Step::Next(Closure::Seq(fin.clone(), Rc::new(Closure::Break(l, val(v)))))
            }
            (Closure::Label(_, _), Signal::Throw(v)) => Step::Next(Closure::Throw(val(v))),
            (Closure::Label(here, _), Signal::Break(l, v)) => {
                if *here == l {
                    Step::Next(Closure::Val(v))
                } else {
                    Step::Next(Closure::Break(l, val(v)))
                }
            }
            (f, sig) => {
                debug_assert!(!f.is_control_frame());
                match self.rules {
                    ControlRules::Deep => Step::Signal(sig),
                    ControlRules::Bubble => Step::Next(match sig {
                        Signal::Throw(v) => Closure::Throw(val(v)),
                        Signal::Break(l, v) => Closure::Break(l, val(v)),
                    }),
                }
            }
        }
    }

    fn throw(err: RuntimeError) -> Step {
        Step::Next(Closure::Throw(val(CalcValue::error(&err))))
    }

    fn contract(&mut self, c: &Closure, vs: Vec<CalcValue>) -> Step {
        use Closure as K;
        use RuntimeError as R;
        match (c, vs.as_slice()) {
            (K::Let(x, _, body, env), [v]) => Step::Next(K::Code(body.clone(), bind(env, x, v.clone()))),
            (K::App(..), [f, args @ ..]) => match f {
                CalcValue::Fun(term, env) => {
                    let ExprKind::Fun(params, body) = &term.kind else { unreachable!() };
                    if params.len() != args.len() {
                        return Self::throw(R::ArityMismatch);
                    }
                    let mut env = (**env).clone();
                    env.extend(params.iter().cloned().zip(args.iter().cloned()));
                    Step::Next(K::Code(body.clone(), Rc::new(env)))
                }
                _ => Self::throw(R::NotAFunction),
            },
            (K::Get(..), [r, k]) => match (r, k) {
                (CalcValue::Rec(fields), CalcValue::Str(k)) => Step::Next(K::Val(
                    fields.iter().find(|(f, _)| f == k).map(|(_, v)| v.clone()).unwrap_or(CalcValue::Undef),
                )),
                (CalcValue::Rec(_), _) => Self::throw(R::NotAStringKey),
                _ => Self::throw(R::NotARecord),
            },
            (K::Upd(..), [r, k, v]) => match (r, k) {
                (CalcValue::Rec(fields), CalcValue::Str(k)) => {
                    let mut fields = (**fields).clone();
                    match fields.iter_mut().find(|(f, _)| f == k) {
                        Some(slot) => slot.1 = v.clone(),
                        None => fields.push((k.clone(), v.clone())),
                    }
                    Step::Next(K::Val(CalcValue::Rec(Rc::new(fields))))
                }
                (CalcValue::Rec(_), _) => Self::throw(R::NotAStringKey),
                _ => Self::throw(R::NotARecord),
            },
            (K::Del(..), [r, k]) => match (r, k) {
                (CalcValue::Rec(fields), CalcValue::Str(k)) => Step::Next(K::Val(CalcValue::Rec(Rc::new(
                    fields.iter().filter(|(f, _)| f != k).cloned().collect(),
                )))),
                (CalcValue::Rec(_), _) => Self::throw(R::NotAStringKey),
                _ => Self::throw(R::NotARecord),
            },
            (K::Set(..), [a, v]) => match a {
                CalcValue::Addr(a) if self.store.contains_key(a) => {
                    self.store.insert(*a, v.clone());
                    Step::Next(K::Val(v.clone()))
                }
                _ => Self::throw(R::NotAnAddress),
            },
            (K::Ref(_), [v]) => {
                let a = self.store.len();
                self.store.insert(a, v.clone());
                Step::Next(K::Val(CalcValue::Addr(a)))
            }
            (K::Deref(_), [a]) => match a {
                CalcValue::Addr(a) if self.store.contains_key(a) => Step::Next(K::Val(self.store[a].clone())),
                _ => Self::throw(R::NotAnAddress),
            },
            (K::If(_, t, f), [b]) => match b {
                CalcValue::Bool(true) => Step::Next((**t).clone()),
                CalcValue::Bool(false) => Step::Next((**f).clone()),
                _ => Self::throw(R::NotABoolean),
            },
            (K::Seq(_, next), [_]) => Step::Next((**next).clone()),
            (K::While(cond, body), []) => {
                let again = Rc::new(K::Seq(body.clone(), Rc::new(c.clone())));
                Step::Next(K::If(cond.clone(), again, val(CalcValue::Undef)))
            }
            (K::Label(..) | K::TryCatch(..), [v]) => Step::Next(K::Val(v.clone())),
            (K::TryFinally(_, fin), [v]) => Step::Next(K::Seq(fin.clone(), val(v.clone()))),
            (K::Op(op, _), args) => {
                let operands: Vec<_> = args.iter().map(CalcValue::operand).collect();
                match delta::apply(*op, &operands) {
                    Ok(out) => {
                        self.effects.extend(out.effect);
                        Step::Next(K::Val(CalcValue::from_basic(out.value)))
                    }
                    Err(err) => Self::throw(err),
                }
            }
            _ => unreachable!("no contraction for closure"),
        }
    }
}

fn bind(env: &CalcEnv, x: &Name, v: CalcValue) -> CalcEnv {
    let mut env = (**env).clone();
    env.insert(x.clone(), v);
    Rc::new(env)
}

/// Pushes an environment one level into a term.
fn propagate(e: &P, env: &CalcEnv) -> Closure {
    use ExprKind::*;
    let code = |e: &P| Rc::new(Closure::Code(e.clone(), env.clone()));
    let codes = |es: &[P]| es.iter().map(code).collect::<Vec<_>>();
    match &e.kind {
        Var(x) => match env.get(x) {
            Some(v) => Closure::Val(v.clone()),
            None => panic!("internal invariant: free variable `{x}` during evaluation"),
        },
        Rec(fields) => rec(fields.iter().map(|(k, e)| (k.clone(), code(e))).collect()),
        Let(x, a, b) => Closure::Let(x.clone(), code(a), b.clone(), env.clone()),
        App(f, args) => Closure::App(code(f), codes(args)),
        Get(a, b) => Closure::Get(code(a), code(b)),
        Upd(a, b, c) => Closure::Upd(code(a), code(b), code(c)),
        Del(a, b) => Closure::Del(code(a), code(b)),
        Set(a, b) => Closure::Set(code(a), code(b)),
        Ref(a) => Closure::Ref(code(a)),
        Deref(a) => Closure::Deref(code(a)),
        If(a, b, c) => Closure::If(code(a), code(b), code(c)),
        Seq(a, b) => Closure::Seq(code(a), code(b)),
        While(a, b) => Closure::While(code(a), code(b)),
        Label(l, a) => Closure::Label(l.clone(), code(a)),
        Break(l, a) => Closure::Break(l.clone(), code(a)),
        TryCatch(a, x, h) => Closure::TryCatch(code(a), x.clone(), h.clone(), env.clone()),
        TryFinally(a, b) => Closure::TryFinally(code(a), code(b)),
        Throw(a) => Closure::Throw(code(a)),
        Op(op, args) => Closure::Op(*op, codes(args)),
        Addr(a) => Closure::Val(CalcValue::Addr(*a)),
        Str(_) | Num(_) | Bool(_) | Undef | Null | Fun(..) => unreachable!("values do not propagate"),
    }
}

/// Forces every delayed substitution, giving a syntactic value.
pub fn unload_value(v: &CalcValue) -> P {
    let mk = Expr::rc;
    match v {
        CalcValue::Str(s) => mk(ExprKind::Str(s.clone())),
        CalcValue::Num(n) => mk(ExprKind::Num(*n)),
        CalcValue::Bool(b) => mk(ExprKind::Bool(*b)),
        CalcValue::Undef => mk(ExprKind::Undef),
        CalcValue::Null => mk(ExprKind::Null),
        CalcValue::Addr(a) => mk(ExprKind::Addr(*a)),
        CalcValue::Rec(fields) => mk(ExprKind::Rec(fields.iter().map(|(k, v)| (k.clone(), unload_value(v))).collect())),
        CalcValue::Fun(term, env) => {
            let map = free_vars(term)
                .into_iter()
                .filter_map(|x| env.get(&x).map(|v| (x, unload_value(v))))
                .collect();
            subst_many(&map, term)
        }
    }
}

pub fn unload(answer: &Answer<CalcValue>) -> Answer<P> {
    Answer {
        store: answer.store.iter().map(|(a, v)| (*a, unload_value(v))).collect(),
        outcome: answer.outcome.clone().map(|v| unload_value(&v)),
        effects: answer.effects.clone(),
    }
}

impl fmt::Display for CalcValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::sexpr::print(&unload_value(self)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::{parse_str, print};

    fn program(src: &str) -> Program {
        Program::new(&parse_str(src).unwrap()).unwrap()
    }

    fn reduce_to_first_difference(src: &str, steps: usize) -> String {
        let mut s = CalcState::inject(&program(src));
        for _ in 0..steps {
            s = match reduce_rho(s, ControlRules::Bubble) {
                Reduced::State(s) => s,
                Reduced::Answer(a) => return format!("answer {}", print(&unload_value(a.outcome.payload()))),
            };
        }
        format!("{:?}", s.program)
    }

    #[test]
    fn if_true_selects_consequent() {
        let p = program("(if true 1 2)");
        let s = CalcState::inject(&p);
        let Reduced::State(s) = reduce_rho(s, ControlRules::Bubble) else { panic!() };
        assert!(matches!(&*s.program, Closure::If(..)));
        let Reduced::State(s) = reduce_rho(s, ControlRules::Bubble) else { panic!() };
        assert!(matches!(&*s.program, Closure::Code(e, _) if matches!(e.kind, ExprKind::Num(n) if n == 1.0)));
    }

    #[test]
    fn label_catches_its_break() {
        let p = program("(label l (break l 3))");
        let a = eval_rho(&p, 100).unwrap();
        assert!(matches!(a.outcome, Outcome::Value(CalcValue::Num(n)) if n == 3.0));
    }

    #[test]
    fn throw_bubbles_one_frame_per_step() {
        let p = program("(seq (throw 1) 2)");
        let mut s = CalcState::inject(&p);
        let mut seen_bare_throw = false;
        for _ in 0..10 {
            s = match reduce_rho(s, ControlRules::Bubble) {
                Reduced::State(s) => s,
                Reduced::Answer(a) => {
                    assert!(matches!(a.outcome, Outcome::Error(_)));
                    break;
                }
            };
            if matches!(&*s.program, Closure::Throw(v) if v.value().is_some()) {
                seen_bare_throw = true;
            }
        }
        assert!(seen_bare_throw);
        assert!(reduce_to_first_difference("(op + 1 2)", 10).starts_with("answer 3"));
    }

    #[test]
    fn unload_substitutes_environment() {
        let term = P::new(parse_str("(fun (x) y)").unwrap());
        let env: CalcEnv = Rc::new([("y".into(), CalcValue::Num(2.0))].into_iter().collect());
        assert_eq!(print(&unload_value(&CalcValue::Fun(term, env))), "(fun (x) 2)");
        assert_eq!(print(&unload_value(&CalcValue::Num(42.0))), "42");
    }
}
