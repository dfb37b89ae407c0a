//! The concrete machine: one successor per state, a growing store of cells,
//! and records that carry their values directly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;

use super::{transitions, AllocKind, Closure, Control, Ctx, Domain, Env, Frame, FrameSig, StackOp};
use crate::ast::{free_vars, Expr, ExprKind, Name, PrimOp, Program, SiteId, Term, P};
use crate::calculus::{subst_many, Answer, Outcome, Timeout};
use crate::delta::{self, Basic, Operand, RuntimeError, ERROR_NAME};

/// How many stack frames the concrete machine records with each
/// allocation. Abstract contexts deeper than this cannot be recovered from
/// a concrete run.
pub const MAX_CONTEXT: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum MValue {
    Str(Name),
    Num(f64),
    Bool(bool),
    Undef,
    Null,
    Addr(usize),
    Fun(Term, Env<usize>),
    Rec(Rc<MRecord>),
}

/// Where and under which stack a record field was written.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Origin {
    pub site: SiteId,
    pub ctx: Ctx,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MRecord {
    pub fields: Vec<(Name, MValue, Origin)>,
    /// Every origin that ever wrote a key outside the known string set.
    /// Deleting such a field does not remove its origin.
    pub overflow: BTreeSet<Origin>,
}

/// Why a cell was allocated, kept so that it can be abstracted later.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AllocOrigin {
    pub kind: AllocKind,
    pub ctx: Ctx,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub value: MValue,
    pub origin: AllocOrigin,
}

/// Cells are never freed, so the lowest unused address is the next index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MStore {
    pub cells: Vec<Cell>,
}

/// The concrete value domain for a particular program.
#[derive(Clone, Debug)]
pub struct Concrete {
    /// Strings that the abstraction tracks exactly: program constants plus
    /// the keys of error records.
    pub known: Rc<BTreeSet<Name>>,
}

impl Concrete {
    pub fn new(program: &Program) -> Concrete {
        Concrete { known: known_strings(program) }
    }
}

/// Program string constants plus the keys of thrown error records.
pub fn known_strings(program: &Program) -> Rc<BTreeSet<Name>> {
    let mut known = (**program.strings()).clone();
    for (k, _) in RuntimeError::NotAFunction.record_fields() {
        known.insert(k.into());
    }
    known.insert(ERROR_NAME.into());
    Rc::new(known)
}

pub(crate) fn operand(v: &MValue) -> Operand<'_> {
    match v {
        MValue::Str(s) => Operand::Str(s),
        MValue::Num(n) => Operand::Num(*n),
        MValue::Bool(b) => Operand::Bool(*b),
        MValue::Undef => Operand::Undef,
        MValue::Null => Operand::Null,
        MValue::Addr(a) => Operand::Addr(*a),
        MValue::Fun(..) => Operand::Fun,
        MValue::Rec(_) => Operand::Rec,
    }
}

fn key<'v>(rec: &'v MValue, k: &'v MValue) -> Result<(&'v MRecord, &'v Name), RuntimeError> {
    match (rec, k) {
        (MValue::Rec(r), MValue::Str(k)) => Ok((r, k)),
        (MValue::Rec(_), _) => Err(RuntimeError::NotAStringKey),
        _ => Err(RuntimeError::NotARecord),
    }
}

impl Domain for Concrete {
    type V = MValue;
    type A = usize;
    type Store = MStore;

    fn constant(&self, e: &Expr) -> MValue {
        match &e.kind {
            ExprKind::Str(s) => MValue::Str(s.clone()),
            ExprKind::Num(n) => MValue::Num(*n),
            ExprKind::Bool(b) => MValue::Bool(*b),
            ExprKind::Undef => MValue::Undef,
            ExprKind::Null => MValue::Null,
            _ => panic!("internal invariant: not a constant"),
        }
    }

    fn string(&self, s: &str) -> MValue {
        MValue::Str(s.into())
    }

    fn closure(&self, term: Term, env: Env<usize>) -> MValue {
        MValue::Fun(term, env)
    }

    fn address(&self, a: usize) -> MValue {
        MValue::Addr(a)
    }

    fn as_fun<'v>(&self, v: &'v MValue) -> Option<(&'v Term, &'v Env<usize>)> {
        match v {
            MValue::Fun(t, env) => Some((t, env)),
            _ => None,
        }
    }

    fn truth(&self, v: &MValue) -> Option<bool> {
        match v {
            MValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    fn lookup(&self, store: &MStore, a: &usize) -> Vec<MValue> {
        vec![store.cells[*a].value.clone()]
    }

    fn bind(&self, store: &mut MStore, kind: AllocKind, v: MValue, ctx: &[FrameSig]) -> usize {
        store.cells.push(Cell { value: v, origin: AllocOrigin { kind, ctx: ctx.into() } });
        store.cells.len() - 1
    }

    fn assign(&self, store: &mut MStore, addr: &MValue, v: MValue) -> Result<(), RuntimeError> {
        match addr {
            MValue::Addr(a) if *a < store.cells.len() => {
                store.cells[*a].value = v;
                Ok(())
            }
            _ => Err(RuntimeError::NotAnAddress),
        }
    }

    fn deref(&self, store: &MStore, addr: &MValue) -> Result<Vec<MValue>, RuntimeError> {
        match addr {
            MValue::Addr(a) if *a < store.cells.len() => Ok(vec![store.cells[*a].value.clone()]),
            _ => Err(RuntimeError::NotAnAddress),
        }
    }

    fn make_record(&self, _: &mut MStore, site: SiteId, fields: Vec<(Name, MValue)>, ctx: &[FrameSig]) -> MValue {
        let origin = Origin { site, ctx: ctx.into() };
        let mut overflow = BTreeSet::new();
        if fields.iter().any(|(k, _)| !self.known.contains(k)) {
            overflow.insert(origin.clone());
        }
        let fields = fields.into_iter().map(|(k, v)| (k, v, origin.clone())).collect();
        MValue::Rec(Rc::new(MRecord { fields, overflow }))
    }

    fn get_field(&self, _: &MStore, rec: &MValue, k: &MValue) -> Result<Vec<MValue>, RuntimeError> {
        let (r, k) = key(rec, k)?;
        Ok(vec![r.fields.iter().find(|(f, _, _)| f == k).map(|(_, v, _)| v.clone()).unwrap_or(MValue::Undef)])
    }

    fn update_field(
        &self,
        _: &mut MStore,
        rec: &MValue,
        k: &MValue,
        v: MValue,
        site: SiteId,
        ctx: &[FrameSig],
    ) -> Result<MValue, RuntimeError> {
        let (r, k) = key(rec, k)?;
        let origin = Origin { site, ctx: ctx.into() };
        let mut r = r.clone();
        if !self.known.contains(k) {
            r.overflow.insert(origin.clone());
        }
        match r.fields.iter_mut().find(|(f, _, _)| f == k) {
            Some(slot) => {
                slot.1 = v;
                slot.2 = origin;
            }
            None => r.fields.push((k.clone(), v, origin)),
        }
        Ok(MValue::Rec(Rc::new(r)))
    }

    fn delete_field(&self, rec: &MValue, k: &MValue) -> Result<MValue, RuntimeError> {
        let (r, k) = key(rec, k)?;
        let mut r = r.clone();
        r.fields.retain(|(f, _, _)| f != k);
        Ok(MValue::Rec(Rc::new(r)))
    }

    fn delta(&self, op: PrimOp, args: &[MValue]) -> Vec<Result<(MValue, Option<String>), RuntimeError>> {
        let operands: Vec<_> = args.iter().map(operand).collect();
        vec![delta::apply(op, &operands).map(|out| {
            let v = match out.value {
                Basic::Num(n) => MValue::Num(n),
                Basic::Str(s) => MValue::Str(s.into()),
                Basic::Bool(b) => MValue::Bool(b),
                Basic::Undef => MValue::Undef,
            };
            (v, out.effect)
        })]
    }
}

pub type MFrame = Frame<MValue, usize>;
pub type MControl = Control<MValue, usize>;

/// A machine configuration. The stack top is the last element of `kont`.
#[derive(Clone, Debug)]
pub struct State {
    pub store: MStore,
    pub control: MControl,
    pub kont: Vec<MFrame>,
    pub effects: Vec<String>,
}

impl State {
    /// Signatures of the innermost stack frames, top first.
    pub fn context(&self) -> Vec<FrameSig> {
        self.kont.iter().rev().take(MAX_CONTEXT).map(|f| f.sig()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct MachineAnswer {
    pub store: MStore,
    pub outcome: Outcome<MValue>,
    pub effects: Vec<String>,
}

impl MachineAnswer {
    /// The answer over syntactic values. Only reference cells are kept.
    pub fn unload(&self) -> Answer<P> {
        let store = self
            .store
            .cells
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c.origin.kind, AllocKind::Ref(_)))
            .map(|(a, c)| (a, unload_value(&self.store, &c.value)))
            .collect();
        Answer {
            store,
            outcome: self.outcome.clone().map(|v| unload_value(&self.store, &v)),
            effects: self.effects.clone(),
        }
    }
}

/// Syntactic form of a machine value: closures have their free variables
/// replaced by the unloaded contents of their environment.
pub fn unload_value(store: &MStore, v: &MValue) -> P {
    let mk = Expr::rc;
    match v {
        MValue::Str(s) => mk(ExprKind::Str(s.clone())),
        MValue::Num(n) => mk(ExprKind::Num(*n)),
        MValue::Bool(b) => mk(ExprKind::Bool(*b)),
        MValue::Undef => mk(ExprKind::Undef),
        MValue::Null => mk(ExprKind::Null),
        MValue::Addr(a) => mk(ExprKind::Addr(*a)),
        MValue::Rec(r) => {
            mk(ExprKind::Rec(r.fields.iter().map(|(k, v, _)| (k.clone(), unload_value(store, v))).collect()))
        }
        MValue::Fun(t, env) => {
            let map: BTreeMap<Name, P> = free_vars(t.expr())
                .into_iter()
                .filter_map(|x| env.get(&x).map(|a| (x, unload_value(store, &store.cells[*a].value))))
                .collect();
            subst_many(&map, &t.0)
        }
    }
}

impl fmt::Display for MValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MValue::Addr(a) => write!(f, "@{a}"),
            MValue::Fun(t, _) => f.write_str(&crate::sexpr::print(t.expr())),
            MValue::Rec(r) => {
                f.write_str("(rec")?;
                for (k, v, _) in &r.fields {
                    let mut s = String::new();
                    crate::sexpr::quote_string(k, &mut s);
                    write!(f, " ({s} {v})")?;
                }
                f.write_str(")")
            }
            _ => {
                let e = unload_value(&MStore::default(), self);
                f.write_str(&crate::sexpr::print(&e))
            }
        }
    }
}

/// The initial state: empty store, the whole program, empty stack.
pub fn inject(program: &Program) -> State {
    State {
        store: MStore::default(),
        control: Control::Ev(Rc::new(Closure::Term(program.root(), Rc::new(BTreeMap::new())))),
        kont: Vec::new(),
        effects: Vec::new(),
    }
}

pub enum Stepped {
    Next(State),
    Answer(MachineAnswer),
}

/// Performs one transition of whatever mode the state is in.
pub fn step(d: &Concrete, mut state: State) -> Stepped {
    if let Control::Done(outcome) = state.control {
        return Stepped::Answer(MachineAnswer { store: state.store, outcome, effects: state.effects });
    }
    let ctx = state.context();
    let mut succs = transitions(d, &mut state.store, &state.control, state.kont.last(), &ctx);
    assert_eq!(succs.len(), 1, "internal invariant: concrete transition is not deterministic");
    let succ = succs.pop().unwrap();
    match succ.op {
        StackOp::Noop => {}
        StackOp::Push(f) => state.kont.push(f),
        StackOp::Pop => {
            state.kont.pop();
        }
        StackOp::Exchange(f) => *state.kont.last_mut().expect("exchange on empty stack") = f,
    }
    state.effects.extend(succ.effect);
    match succ.control {
        Control::Done(outcome) => {
            debug_assert!(state.kont.is_empty());
            Stepped::Answer(MachineAnswer { store: state.store, outcome, effects: state.effects })
        }
        control => {
            state.control = control;
            Stepped::Next(state)
        }
    }
}

fn check_mode(state: &State, mode: super::Mode) {
    assert_eq!(state.control.mode(), mode, "step function applied in the wrong mode");
}

pub fn step_eval(d: &Concrete, state: State) -> Stepped {
    check_mode(&state, super::Mode::Ev);
    step(d, state)
}

pub fn step_continue(d: &Concrete, state: State) -> Stepped {
    check_mode(&state, super::Mode::Co);
    step(d, state)
}

pub fn step_apply(d: &Concrete, state: State) -> Stepped {
    check_mode(&state, super::Mode::Ap);
    step(d, state)
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub answer: MachineAnswer,
    pub steps: u64,
}

/// Runs `program` for at most `fuel` transitions.
pub fn run(program: &Program, fuel: u64) -> Result<RunResult, Timeout> {
    run_observed(program, fuel, |_| {})
}

/// Like [`run`], calling `observe` on every state reached, the initial one
/// included.
pub fn run_observed(program: &Program, fuel: u64, mut observe: impl FnMut(&State)) -> Result<RunResult, Timeout> {
    let d = Concrete::new(program);
    let mut state = inject(program);
    let mut steps = 0;
    loop {
        observe(&state);
        if steps == fuel {
            return Err(Timeout { steps: fuel });
        }
        steps += 1;
        match step(&d, state) {
            Stepped::Next(s) => state = s,
            Stepped::Answer(answer) => return Ok(RunResult { answer, steps }),
        }
    }
}

/// One trace line: mode, control summary and stack depth.
pub fn trace_line(state: &State) -> String {
    format!("{} {} {}", state.control.mode(), super::control_summary(&state.control), state.kont.len())
}
