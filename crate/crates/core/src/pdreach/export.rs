use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use super::{reachable_answers, sym_label, Action, Dsg};
use crate::jam::control_summary;

#[derive(Clone, Debug, Serialize)]
pub struct NodeJson {
    pub id: usize,
    pub mode: String,
    pub control: String,
    pub store: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeJson {
    pub from: usize,
    pub to: usize,
    pub action: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replacement: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnswerJson {
    pub node: usize,
    pub answer: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphJson {
    pub policy: String,
    pub root: usize,
    pub truncated: bool,
    pub widened: bool,
    pub nodes: Vec<NodeJson>,
    pub edges: Vec<EdgeJson>,
    pub summaries: Vec<[usize; 2]>,
    pub answers: Vec<AnswerJson>,
    pub effects: Vec<String>,
}

pub fn to_json(dsg: &Dsg) -> GraphJson {
    let nodes = dsg
        .nodes
        .iter()
        .enumerate()
        .map(|(id, n)| NodeJson {
            id,
            mode: n.control.mode().to_string(),
            control: control_summary(&n.control),
            store: n
                .store
                .iter()
                .map(|(a, vs)| (a.to_string(), vs.iter().map(|v| v.to_string()).collect()))
                .collect(),
        })
        .collect();
    let edges = dsg
        .edges
        .iter()
        .map(|e| {
            let label = |s: usize| Some(sym_label(&dsg.syms[s]));
            let (action, frame, replacement) = match e.action {
                Action::Noop => ("noop", None, None),
                Action::Push(s) => ("push", label(s), None),
                Action::Pop(s) => ("pop", label(s), None),
                Action::Exchange(s, t) => ("exchange", label(s), label(t)),
            };
            EdgeJson { from: e.from, to: e.to, action, frame, replacement }
        })
        .collect();
    GraphJson {
        policy: dsg.policy.to_string(),
        root: dsg.root,
        truncated: dsg.truncated,
        widened: dsg.widened,
        nodes,
        edges,
        summaries: dsg.summaries.iter().map(|&(a, b)| [a, b]).collect(),
        answers: reachable_answers(dsg).iter().map(|a| AnswerJson { node: a.node, answer: a.to_string() }).collect(),
        effects: dsg.effects.iter().cloned().collect(),
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering. The root has a double border, answers are
/// ellipses and summaries are dashed `eps` edges.
pub fn to_dot(dsg: &Dsg) -> String {
    let mut out = String::from("digraph dsg {\n  node [shape=box, fontname=monospace];\n");
    for (id, n) in dsg.nodes.iter().enumerate() {
        let label = escape(&format!("#{id} {} {}", n.control.mode(), control_summary(&n.control)));
        let mut attrs = format!("label=\"{label}\"");
        if id == dsg.root {
            attrs.push_str(", peripheries=2, xlabel=\"root\"");
        }
        if n.is_answer() {
            attrs.push_str(", shape=ellipse");
        }
        let _ = writeln!(out, "  n{id} [{attrs}];");
    }
    for e in &dsg.edges {
        let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", e.from, e.to, escape(&dsg.action_label(e.action)));
    }
    for &(a, b) in &dsg.summaries {
        let _ = writeln!(out, "  n{a} -> n{b} [label=\"eps\", style=dashed];");
    }
    out.push_str("}\n");
    out
}
