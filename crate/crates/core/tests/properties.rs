mod common;

use std::collections::BTreeSet;

use lambdajs::aam::{self, alpha, Node, Policy};
use lambdajs::calculus::{canonical, eval_rho, eval_rho_with, eval_subst, unload, ControlRules};
use lambdajs::jam::{self, Control, RedexKind};
use lambdajs::pdreach::{balanced_check, explore, explore_scheduled, reachable_answers, to_json, Dsg, Limits};
use lambdajs::queries::{self, HandlerTarget};
use lambdajs::sexpr::{parse_str, print};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use common::{program, Gen};

fn generated(seed: u64) -> (String, lambdajs::ast::Program) {
    let mut rng = common::rng(seed);
    let depth = rng.gen_range(2..6);
    let src = Gen::closed(&mut rng).expr(depth);
    let p = program(&src);
    (src, p)
}

fn policy_strategy() -> impl Strategy<Value = Policy> {
    prop_oneof![Just(Policy::Const), Just(Policy::ZeroCfa), (0usize..4).prop_map(Policy::Kcfa)]
}

fn node_set(g: &Dsg) -> BTreeSet<Node> {
    g.nodes.iter().cloned().collect()
}

fn summary_set(g: &Dsg) -> BTreeSet<(Node, Node)> {
    g.summaries.iter().map(|&(a, b)| (g.nodes[a].clone(), g.nodes[b].clone())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn engines_agree(seed in any::<u64>()) {
        let (src, p) = generated(seed);
        let s = canonical(&eval_subst(&p, 100_000).unwrap());
        let r = canonical(&unload(&eval_rho(&p, 100_000).unwrap()));
        let j = canonical(&jam::run(&p, 100_000).unwrap().answer.unload());
        prop_assert_eq!(&s, &r, "{}", src);
        prop_assert_eq!(&s, &j, "{}", src);
    }

    #[test]
    fn bubbling_matches_deep_contexts(seed in any::<u64>()) {
        let (src, p) = generated(seed);
        let a = canonical(&unload(&eval_rho_with(&p, 100_000, ControlRules::Bubble).unwrap()));
        let b = canonical(&unload(&eval_rho_with(&p, 100_000, ControlRules::Deep).unwrap()));
        prop_assert_eq!(a, b, "{}", src);
    }

    #[test]
    fn machine_is_deterministic(seed in any::<u64>()) {
        let (_, p) = generated(seed);
        let a = jam::run(&p, 100_000).unwrap();
        let b = jam::run(&p, 100_000).unwrap();
        prop_assert_eq!(a.steps, b.steps);
        prop_assert_eq!(canonical(&a.answer.unload()), canonical(&b.answer.unload()));
    }

    #[test]
    fn analysis_covers_runs(seed in any::<u64>(), policy in policy_strategy(), widen in any::<bool>()) {
        let (src, p) = generated(seed);
        let g = explore(&p, policy, Limits { widen, ..Limits::default() });
        prop_assert!(!g.truncated);
        let d = aam::AbsDomain::new(&p, policy);
        let mut uncovered = None;
        jam::run_observed(&p, 100_000, |s| {
            if uncovered.is_none() {
                let (node, stack) = alpha(&d, s);
                if g.find_covering(&node, &stack).is_none() {
                    uncovered = Some(jam::trace_line(s));
                }
            }
        }).unwrap();
        prop_assert!(uncovered.is_none(), "{} under {}: {:?}", src, policy, uncovered);
    }

    #[test]
    fn graphs_are_balanced(seed in any::<u64>(), policy in policy_strategy()) {
        let (src, p) = generated(seed);
        let g = explore(&p, policy, Limits::default());
        let b = balanced_check(&g);
        prop_assert!(b.ok, "{} under {}: {:?}", src, policy, b.counterexample);
    }

    #[test]
    fn worklist_order_is_irrelevant(seed in any::<u64>(), order in any::<u64>(), policy in policy_strategy()) {
        let (src, p) = generated(seed);
        let fifo = explore(&p, policy, Limits::default());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(order);
        let mut pick = |n: usize| rng.gen_range(0..n);
        let shuffled = explore_scheduled(&p, policy, Limits::default(), Some(&mut pick));
        prop_assert_eq!(node_set(&fifo), node_set(&shuffled), "{}", &src);
        prop_assert_eq!(summary_set(&fifo), summary_set(&shuffled), "{}", &src);
        let answers = |g: &Dsg| reachable_answers(g).iter().map(|a| a.to_string()).collect::<BTreeSet<_>>();
        prop_assert_eq!(answers(&fifo), answers(&shuffled));
    }

    #[test]
    fn zero_context_is_zero_cfa(seed in any::<u64>()) {
        let (_, p) = generated(seed);
        let mut a = serde_json::to_value(to_json(&explore(&p, Policy::Kcfa(0), Limits::default()))).unwrap();
        let mut b = serde_json::to_value(to_json(&explore(&p, Policy::ZeroCfa, Limits::default()))).unwrap();
        a["policy"] = serde_json::Value::Null;
        b["policy"] = serde_json::Value::Null;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn reports_cover_runs(seed in any::<u64>(), policy in policy_strategy()) {
        let (src, p) = generated(seed);
        let g = explore(&p, policy, Limits::default());
        let calls = queries::call_targets(&g);
        let throws = queries::throw_to(&g);
        let d = jam::Concrete::new(&p);
        let mut missing = Vec::new();
        jam::run_observed(&p, 100_000, |s| {
            if let Some((site, Some(target))) = queries::applied_site(&d, &s.control) {
                if !calls.get(&site).is_some_and(|t| t.contains(&target)) {
                    missing.push(format!("call {site} -> {target}"));
                }
            }
        }).unwrap();
        let r = jam::run(&p, 100_000).unwrap();
        if let lambdajs::calculus::Outcome::Error(_) = r.answer.outcome {
            let reported: BTreeSet<_> = throws.values().flatten().copied().collect();
            prop_assert!(reported.contains(&HandlerTarget::TopLevelError), "{}", &src);
        }
        prop_assert!(missing.is_empty(), "{} under {}: {:?}", src, policy, missing);
    }

    #[test]
    fn open_trees_round_trip(seed in any::<u64>(), depth in 0u32..7) {
        let mut rng = common::rng(seed);
        let src = Gen::open(&mut rng).expr(depth);
        let e = parse_str(&src).unwrap();
        let printed = print(&e);
        prop_assert_eq!(parse_str(&printed).unwrap(), e);
    }
}

#[test]
fn caught_throws_reach_their_handlers() {
    for c in common::corpus() {
        let g = explore(&c.program, Policy::ZeroCfa, Limits::default());
        let throws = queries::throw_to(&g);
        let mut missing = Vec::new();
        jam::run_observed(&c.program, 100_000, |s| {
            let Control::Ap(r) = &s.control else { return };
            // A throw with a catch frame on top lands in that handler next.
            if let (RedexKind::Throw(_), Some(top)) = (&r.kind, s.kont.last()) {
                if let jam::FrameKind::TryCatch { .. } = top.kind {
                    let want = HandlerTarget::Handler(top.site);
                    if !throws.get(&r.site).is_some_and(|t| t.contains(&want)) {
                        missing.push((r.site, top.site));
                    }
                }
            }
        })
        .unwrap();
        assert!(missing.is_empty(), "{}: {missing:?}", c.name);
    }
}

#[test]
fn graphs_plateau_under_larger_budgets() {
    for c in common::corpus().iter().chain(common::divergent().iter()) {
        let small = explore(&c.program, Policy::Kcfa(1), Limits { max_nodes: 2_000, ..Limits::default() });
        let large = explore(&c.program, Policy::Kcfa(1), Limits::default());
        assert!(!small.truncated, "{}", c.name);
        assert_eq!(node_set(&small), node_set(&large), "{}", c.name);
        assert_eq!(small.edges.len(), large.edges.len(), "{}", c.name);
    }
}

#[test]
fn first_call_returns_only_to_its_own_continuation() {
    let p = common::corpus_program("double_call");
    let g = explore(&p, Policy::ZeroCfa, Limits::default());
    // Each push of an argument frame for `+` returns to exactly one place.
    let pushes: Vec<usize> = g
        .edges
        .iter()
        .filter(|e| matches!(e.action, lambdajs::pdreach::Action::Push(_)))
        .map(|e| e.from)
        .collect();
    for p in pushes {
        let rets: BTreeSet<_> = g.summaries.iter().filter(|s| s.0 == p).map(|s| s.1).collect();
        assert!(rets.len() <= 1, "push at #{p} returns to {rets:?}");
    }
    let answers: Vec<String> = reachable_answers(&g).iter().map(|a| a.to_string()).collect();
    assert_eq!(answers, ["value num"]);
}

#[test]
fn finally_break_never_reaches_inner_label() {
    let p = common::corpus_program("finally_break");
    let g = explore(&p, Policy::ZeroCfa, Limits::default());
    let breaks = queries::break_to(&g);
    let labels = {
        let mut v = Vec::new();
        p.expr().walk(&mut |e| {
            if let lambdajs::ast::ExprKind::Label(l, _) = &e.kind {
                v.push((l.to_string(), e.site));
            }
            if let lambdajs::ast::ExprKind::Break(l, _) = &e.kind {
                v.push((format!("break {l}"), e.site));
            }
        });
        v
    };
    let site = |name: &str| labels.iter().find(|(n, _)| n == name).unwrap().1;
    assert!(breaks[&site("break out")].is_empty());
    assert_eq!(breaks[&site("break ret")], BTreeSet::from([queries::LabelTarget::Label(site("ret"))]));
}
