//! Control-flow questions answered from a finished graph: which functions
//! each call site applies, which handler receives each throw and which
//! label receives each break.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Serialize, Serializer};

use crate::aam::AValue;
use crate::ast::SiteId;
use crate::calculus::Outcome;
use crate::jam::{Control, Domain, FrameKind, RedexKind};
use crate::pdreach::{reachable_answers, Action, Dsg, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HandlerTarget {
    Handler(SiteId),
    TopLevelError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabelTarget {
    Label(SiteId),
    TopLevelBreak,
}

impl Serialize for HandlerTarget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            HandlerTarget::Handler(site) => s.serialize_u32(site.0),
            HandlerTarget::TopLevelError => s.serialize_str("TopLevelError"),
        }
    }
}

impl Serialize for LabelTarget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LabelTarget::Label(site) => s.serialize_u32(site.0),
            LabelTarget::TopLevelBreak => s.serialize_str("TopLevelBreak"),
        }
    }
}

pub const TRUNCATED_WARNING: &str = "graph truncated by budget; results may be incomplete";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlowReport {
    pub policy: String,
    pub call_targets: BTreeMap<u32, BTreeSet<u32>>,
    pub throw_to: BTreeMap<u32, BTreeSet<HandlerTarget>>,
    pub break_to: BTreeMap<u32, BTreeSet<LabelTarget>>,
    pub answers: BTreeSet<String>,
    pub truncated: bool,
    pub warnings: Vec<String>,
}

fn ap_nodes<'a>(dsg: &'a Dsg) -> impl Iterator<Item = (NodeId, SiteId, &'a RedexKind<AValue, crate::aam::AbsAddr>)> + 'a {
    dsg.nodes.iter().enumerate().filter_map(|(n, node)| match &node.control {
        Control::Ap(r) => Some((n, r.site, &r.kind)),
        _ => None,
    })
}

/// Function sites applied at each call site. Every call site the graph
/// reaches has an entry, possibly empty.
pub fn call_targets(dsg: &Dsg) -> BTreeMap<SiteId, BTreeSet<SiteId>> {
    let mut out: BTreeMap<SiteId, BTreeSet<SiteId>> = BTreeMap::new();
    for (_, site, kind) in ap_nodes(dsg) {
        if let RedexKind::App { fun, .. } = kind {
            let targets = out.entry(site).or_default();
            if let AValue::Fun(t, _) = fun {
                targets.insert(t.site());
            }
        }
    }
    out
}

fn pops_from(dsg: &Dsg, n: NodeId) -> impl Iterator<Item = (&FrameKind<AValue, crate::aam::AbsAddr>, SiteId, NodeId)> + '_ {
    dsg.edges.range(crate::pdreach::Edge { from: n, action: Action::Noop, to: 0 }..).take_while(move |e| e.from == n).filter_map(
        move |e| match e.action {
            Action::Pop(s) => Some((&dsg.syms[s].frame.kind, dsg.syms[s].frame.site, e.to)),
            _ => None,
        },
    )
}

fn successors(dsg: &Dsg, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
    dsg.edges.range(crate::pdreach::Edge { from: n, action: Action::Noop, to: 0 }..).take_while(move |e| e.from == n).map(|e| e.to)
}

/// Handlers receiving each thrown value. Throw sites include the sites of
/// primitive operations, applications and record operations whose dynamic
/// errors raise exceptions.
pub fn throw_to(dsg: &Dsg) -> BTreeMap<SiteId, BTreeSet<HandlerTarget>> {
    let mut out: BTreeMap<SiteId, BTreeSet<HandlerTarget>> = BTreeMap::new();
    for (n, site, kind) in ap_nodes(dsg) {
        if !matches!(kind, RedexKind::Throw(_)) {
            continue;
        }
        let targets = out.entry(site).or_default();
        for (frame, fsite, _) in pops_from(dsg, n) {
            if let FrameKind::TryCatch { .. } = frame {
                targets.insert(HandlerTarget::Handler(fsite));
            }
        }
        for m in successors(dsg, n) {
            if let Control::Done(Outcome::Error(_)) = dsg.nodes[m].control {
                targets.insert(HandlerTarget::TopLevelError);
            }
        }
    }
    out
}

/// Labels receiving each break.
pub fn break_to(dsg: &Dsg) -> BTreeMap<SiteId, BTreeSet<LabelTarget>> {
    let mut out: BTreeMap<SiteId, BTreeSet<LabelTarget>> = BTreeMap::new();
    for (n, site, kind) in ap_nodes(dsg) {
        let RedexKind::Break(l, _) = kind else { continue };
        let targets = out.entry(site).or_default();
        for (frame, fsite, _) in pops_from(dsg, n) {
            if matches!(frame, FrameKind::Label(here) if here == l) {
                targets.insert(LabelTarget::Label(fsite));
            }
        }
        for m in successors(dsg, n) {
            if let Control::Done(Outcome::Broken(..)) = dsg.nodes[m].control {
                targets.insert(LabelTarget::TopLevelBreak);
            }
        }
    }
    out
}

pub fn report(dsg: &Dsg) -> FlowReport {
    let raw = |s: SiteId| s.0;
    FlowReport {
        policy: dsg.policy.to_string(),
        call_targets: call_targets(dsg).into_iter().map(|(k, v)| (raw(k), v.into_iter().map(raw).collect())).collect(),
        throw_to: throw_to(dsg).into_iter().map(|(k, v)| (raw(k), v)).collect(),
        break_to: break_to(dsg).into_iter().map(|(k, v)| (raw(k), v)).collect(),
        answers: reachable_answers(dsg).iter().map(|a| a.to_string()).collect(),
        truncated: dsg.truncated,
        warnings: if dsg.truncated { vec![TRUNCATED_WARNING.to_string()] } else { Vec::new() },
    }
}

/// Function sites a concrete application applies, for checking reports
/// against runs.
pub fn applied_site<D: Domain>(d: &D, control: &Control<D::V, D::A>) -> Option<(SiteId, Option<SiteId>)> {
    match control {
        Control::Ap(r) => match &r.kind {
            RedexKind::App { fun, .. } => Some((r.site, d.as_fun(fun).map(|(t, _)| t.site()))),
            _ => None,
        },
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aam::Policy;
    use crate::ast::{ExprKind, Program};
    use crate::pdreach::{explore, Limits};
    use crate::sexpr::parse_str;

    fn analyze(src: &str) -> (Program, Dsg) {
        let p = Program::new(&parse_str(src).unwrap()).unwrap();
        let g = explore(&p, Policy::ZeroCfa, Limits::default());
        (p, g)
    }

    fn site_of(p: &Program, pred: impl Fn(&ExprKind) -> bool) -> Vec<SiteId> {
        let mut out = Vec::new();
        p.expr().walk(&mut |e| {
            if pred(&e.kind) {
                out.push(e.site)
            }
        });
        out
    }

    #[test]
    fn single_call_target() {
        let (p, g) = analyze("(let (f (fun (y) y)) (app f 1))");
        let app = site_of(&p, |k| matches!(k, ExprKind::App(..)))[0];
        let fun = site_of(&p, |k| matches!(k, ExprKind::Fun(..)))[0];
        assert_eq!(call_targets(&g), BTreeMap::from([(app, BTreeSet::from([fun]))]));
    }

    #[test]
    fn branch_eliminated() {
        let (p, g) = analyze("(app (if true (fun (x) x) (fun (z) z)) 1)");
        let funs = site_of(&p, |k| matches!(k, ExprKind::Fun(..)));
        let targets = call_targets(&g);
        assert_eq!(targets.values().next().unwrap(), &BTreeSet::from([funs[0]]));
    }

    #[test]
    fn no_applications() {
        assert!(call_targets(&analyze("(op + 1 2)").1).is_empty());
    }

    #[test]
    fn throws() {
        let (p, g) = analyze("(try-catch (throw 1) x x)");
        let tc = site_of(&p, |k| matches!(k, ExprKind::TryCatch(..)))[0];
        let th = site_of(&p, |k| matches!(k, ExprKind::Throw(..)))[0];
        assert_eq!(throw_to(&g), BTreeMap::from([(th, BTreeSet::from([HandlerTarget::Handler(tc)]))]));
        let (p, g) = analyze("(throw 1)");
        let th = site_of(&p, |k| matches!(k, ExprKind::Throw(..)))[0];
        assert_eq!(throw_to(&g), BTreeMap::from([(th, BTreeSet::from([HandlerTarget::TopLevelError]))]));
        let (p, g) = analyze("(try-catch (try-finally (throw 1) (op print \"f\")) e e)");
        let tc = site_of(&p, |k| matches!(k, ExprKind::TryCatch(..)))[0];
        let th = site_of(&p, |k| matches!(k, ExprKind::Throw(..)))[0];
        assert_eq!(throw_to(&g)[&th], BTreeSet::from([HandlerTarget::Handler(tc)]));
    }

    #[test]
    fn breaks() {
        let (p, g) = analyze("(label out (break out 1))");
        let l = site_of(&p, |k| matches!(k, ExprKind::Label(..)))[0];
        let b = site_of(&p, |k| matches!(k, ExprKind::Break(..)))[0];
        assert_eq!(break_to(&g), BTreeMap::from([(b, BTreeSet::from([LabelTarget::Label(l)]))]));
        let (p, g) = analyze("(label a (label b (break a 1)))");
        let ls = site_of(&p, |k| matches!(k, ExprKind::Label(..)));
        let b = site_of(&p, |k| matches!(k, ExprKind::Break(..)))[0];
        assert_eq!(break_to(&g)[&b], BTreeSet::from([LabelTarget::Label(ls[0])]));
    }

    #[test]
    fn report_serializes() {
        let (_, g) = analyze("(try-catch (throw 1) x (break l x))");
        let json = serde_json::to_value(report(&g)).unwrap();
        assert_eq!(json["break_to"].as_object().unwrap().values().next().unwrap()[0], "TopLevelBreak");
        assert_eq!(json["policy"], "0cfa");
        assert!(json["answers"].as_array().unwrap().iter().any(|a| a == "break l num"));
    }
}
