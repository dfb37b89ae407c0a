//! The abstraction map from concrete machine states.
//!
//! Each concrete cell and record field remembers why and under which stack
//! it was allocated, so its abstract address is the policy applied to that
//! origin. `alpha` is sound for policies that look at no more than
//! `MAX_CONTEXT` frames.

use std::cell::RefCell;
use std::rc::Rc;

use super::{store_leq, ARecord, AStore, AValue, AbsAddr, AbsDomain, Node, StackSym};
use crate::jam::{AllocKind, Domain, MStore, MValue, State, Translate};

struct Alpha<'a> {
    d: &'a AbsDomain,
    cells: &'a MStore,
    store: RefCell<AStore>,
}

impl Alpha<'_> {
    fn join(&self, a: AbsAddr, v: AValue) {
        self.store.borrow_mut().entry(a).or_default().insert(v);
    }
}

impl Translate<MValue, usize, AValue, AbsAddr> for Alpha<'_> {
    fn addr(&self, a: &usize) -> AbsAddr {
        let origin = &self.cells.cells[*a].origin;
        self.d.policy.alloc(&origin.kind, &origin.ctx)
    }

    fn value(&self, v: &MValue) -> AValue {
        match v {
            MValue::Num(_) => AValue::Num,
            MValue::Str(s) => self.d.string(s),
            MValue::Bool(b) => AValue::Bool(*b),
            MValue::Undef => AValue::Undef,
            MValue::Null => AValue::Null,
            MValue::Addr(a) => AValue::Addr(self.addr(a)),
            MValue::Fun(t, env) => AValue::Fun(t.clone(), self.env(env)),
            MValue::Rec(r) => {
                let policy = self.d.policy;
                let mut rec = ARecord::default();
                for (k, fv, o) in &r.fields {
                    let v = self.value(fv);
                    if self.d.known.contains(k) {
                        let a = policy.alloc(&AllocKind::Field(o.site, k.clone()), &o.ctx);
                        rec.fields.insert(k.clone(), a.clone());
                        self.join(a, v);
                    } else {
                        self.join(policy.alloc(&AllocKind::Overflow(o.site), &o.ctx), v);
                    }
                }
                rec.unknown = r.overflow.iter().map(|o| policy.alloc(&AllocKind::Overflow(o.site), &o.ctx)).collect();
                AValue::Rec(Rc::new(rec))
            }
        }
    }
}

/// The abstract value of a concrete one, under the store `cells`.
pub fn alpha_value(d: &AbsDomain, cells: &MStore, v: &MValue) -> AValue {
    Alpha { d, cells, store: RefCell::new(AStore::new()) }.value(v)
}

/// Abstracts a concrete state to a node and a stack of symbols, innermost
/// first.
pub fn alpha(d: &AbsDomain, state: &State) -> (Node, Vec<StackSym>) {
    let t = Alpha { d, cells: &state.store, store: RefCell::new(AStore::new()) };
    for (i, cell) in state.store.cells.iter().enumerate() {
        let v = t.value(&cell.value);
        t.join(t.addr(&i), v);
    }
    let control = t.control(&state.control);
    let k = d.policy.depth();
    let n = state.kont.len();
    let stack = (0..n)
        .rev()
        .map(|i| {
            let below: Vec<_> = state.kont[..i].iter().rev().take(k.saturating_sub(1)).map(|f| f.sig()).collect();
            StackSym { frame: t.frame(&state.kont[i]), below: below.into() }
        })
        .collect();
    (Node { store: Rc::new(t.store.into_inner()), control }, stack)
}

/// `big` has the same control as `small` and a store at least as large.
pub fn subsumes(big: &Node, small: &Node) -> bool {
    big.control == small.control && store_leq(&small.store, &big.store)
}
