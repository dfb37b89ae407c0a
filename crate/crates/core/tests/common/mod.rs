#![allow(dead_code)]

use std::path::PathBuf;

use lambdajs::ast::Program;
use lambdajs::sexpr::{parse, SourceText};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct CorpusFile {
    pub name: String,
    pub text: String,
    pub program: Program,
}

fn corpus_dir(sub: &str) -> Vec<CorpusFile> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus").join(sub);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "sexp"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let expr = parse(&SourceText::new(text.clone(), p.display().to_string())).unwrap();
            let program = Program::new(&expr).unwrap();
            CorpusFile { name, text, program }
        })
        .collect()
}

/// Hand-written programs that terminate.
pub fn corpus() -> Vec<CorpusFile> {
    corpus_dir("")
}

/// Hand-written programs that run forever.
pub fn divergent() -> Vec<CorpusFile> {
    corpus_dir("divergent")
}

pub fn corpus_program(name: &str) -> Program {
    corpus().into_iter().chain(divergent()).find(|c| c.name == name).unwrap().program
}

pub fn program(src: &str) -> Program {
    Program::new(&lambdajs::sexpr::parse_str(src).unwrap()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const STRINGS: &[&str] = &["a", "b", "", "message", "name", "x1", "q\\\"uote", "back\\\\slash", "\\u{e9}t\\u{e9}", "tab\\t"];
const NUMBERS: &[&str] = &["0", "1", "2", "3", "-1", "0.5", "100", "2.25"];
const KEYS: &[&str] = &["\"a\"", "\"b\"", "\"c\"", "\"message\""];

#[derive(Clone)]
enum Binding {
    Data(String),
    Ref(String),
    Fun(String, usize),
}

/// Random source text in the printer's canonical layout.
///
/// Closed mode produces terminating programs: functions only call
/// functions bound before them, references and records hold only first
/// order data and `while` appears only as a bounded counter loop.
pub struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    scope: Vec<Binding>,
    labels: Vec<String>,
    fresh: usize,
    open: bool,
}

impl<'r, R: Rng> Gen<'r, R> {
    pub fn closed(rng: &'r mut R) -> Self {
        Gen { rng, scope: Vec::new(), labels: Vec::new(), fresh: 0, open: false }
    }

    /// Trees that may mention free variables and unbound labels.
    pub fn open(rng: &'r mut R) -> Self {
        Gen { rng, scope: Vec::new(), labels: Vec::new(), fresh: 0, open: true }
    }

    fn fresh(&mut self, base: &str) -> String {
        self.fresh += 1;
        format!("{base}{}", self.fresh)
    }

    fn data_vars(&self) -> Vec<String> {
        self.scope
            .iter()
            .filter_map(|b| match b {
                Binding::Data(x) | Binding::Ref(x) => Some(x.clone()),
                _ => None,
            })
            .collect()
    }

    fn funs(&self) -> Vec<(String, usize)> {
        self.scope
            .iter()
            .filter_map(|b| match b {
                Binding::Fun(f, n) => Some((f.clone(), *n)),
                _ => None,
            })
            .collect()
    }

    fn atom(&mut self) -> String {
        let vars = self.data_vars();
        match self.rng.gen_range(0..8) {
            0 | 1 => NUMBERS.choose(self.rng).unwrap().to_string(),
            2 => format!("\"{}\"", STRINGS.choose(self.rng).unwrap()),
            3 => if self.rng.gen() { "true" } else { "false" }.to_string(),
            4 => if self.rng.gen() { "undef" } else { "null" }.to_string(),
            5 if self.open => ["free", "zz", "$w"].choose(self.rng).unwrap().to_string(),
            _ => vars.choose(self.rng).cloned().unwrap_or_else(|| "1".to_string()),
        }
    }

    fn key(&mut self) -> String {
        if self.rng.gen_ratio(1, 6) {
            return format!("(op string-+ \"a\" {})", self.atom());
        }
        KEYS.choose(self.rng).unwrap().to_string()
    }

    fn with<T>(&mut self, b: Binding, f: impl FnOnce(&mut Self) -> T) -> T {
        self.scope.push(b);
        let r = f(self);
        self.scope.pop();
        r
    }

    fn num(&mut self, d: u32) -> String {
        match self.rng.gen_range(0..6) {
            0 => self.expr(d),
            1 if d > 0 => format!("(op + {} {})", self.num(d - 1), self.num(d - 1)),
            2 if d > 0 => format!("(op string-length {})", self.str(d - 1)),
            _ => NUMBERS.choose(self.rng).unwrap().to_string(),
        }
    }

    fn str(&mut self, d: u32) -> String {
        match self.rng.gen_range(0..6) {
            0 => self.expr(d),
            1 if d > 0 => format!("(op string-+ {} {})", self.str(d - 1), self.str(d - 1)),
            2 if d > 0 => format!("(op num->string {})", self.num(d - 1)),
            _ => format!("\"{}\"", STRINGS.choose(self.rng).unwrap()),
        }
    }

    fn boolean(&mut self, d: u32) -> String {
        match self.rng.gen_range(0..6) {
            0 => self.expr(d),
            1 | 2 => format!("(op < {} {})", self.num(d), self.num(d)),
            3 => format!("(op === {} {})", self.expr(d), self.expr(d)),
            _ => if self.rng.gen() { "true" } else { "false" }.to_string(),
        }
    }

    fn record(&mut self, d: u32) -> String {
        if self.rng.gen_ratio(1, 6) {
            return self.expr(d);
        }
        let n = self.rng.gen_range(0..3);
        let mut keys: Vec<&str> = KEYS.to_vec();
        keys.shuffle(self.rng);
        let mut fields: Vec<String> = keys[..n].iter().map(|k| format!("({k} {})", self.expr(d))).collect();
        fields.insert(0, "rec".into());
        format!("({})", fields.join(" "))
    }

    fn reference(&mut self, d: u32) -> String {
        let refs: Vec<String> = self
            .scope
            .iter()
            .filter_map(|b| match b {
                Binding::Ref(r) => Some(r.clone()),
                _ => None,
            })
            .collect();
        match refs.choose(self.rng) {
            Some(r) if !self.rng.gen_ratio(1, 6) => r.clone(),
            _ => self.expr(d),
        }
    }

    pub fn expr(&mut self, depth: u32) -> String {
        if depth == 0 {
            return self.atom();
        }
        let d = depth - 1;
        match self.rng.gen_range(0..26) {
            0 | 1 => self.atom(),
            2 => {
                let (op, n) = *[
                    ("+", 2),
                    ("-", 2),
                    ("*", 2),
                    ("/", 2),
                    ("===", 2),
                    ("<", 2),
                    ("string-+", 2),
                    ("typeof", 1),
                    ("num->string", 1),
                    ("string-length", 1),
                    ("print", 1),
                ]
                .choose(self.rng)
                .unwrap();
                let args: Vec<String> = (0..n)
                    .map(|_| match op {
                        "+" | "-" | "*" | "/" | "<" | "num->string" => self.num(d),
                        "string-+" | "string-length" => self.str(d),
                        _ => self.expr(d),
                    })
                    .collect();
                format!("(op {op} {})", args.join(" "))
            }
            3 => {
                let x = self.fresh("x");
                let v = self.expr(d);
                let body = self.with(Binding::Data(x.clone()), |g| g.expr(d));
                format!("(let ({x} {v}) {body})")
            }
            4 | 5 => {
                // Define a function and use it in the body.
                let f = self.fresh("f");
                let n = self.rng.gen_range(0..3);
                let params: Vec<String> = (0..n).map(|_| self.fresh("p")).collect();
                let saved_labels = std::mem::take(&mut self.labels);
                let mut fbody = String::new();
                {
                    let depth_before = self.scope.len();
                    for p in &params {
                        self.scope.push(Binding::Data(p.clone()));
                    }
                    fbody.push_str(&self.expr(d));
                    self.scope.truncate(depth_before);
                }
                self.labels = saved_labels;
                let body = self.with(Binding::Fun(f.clone(), n), |g| g.expr(d));
                format!("(let ({f} (fun ({}) {fbody})) {body})", params.join(" "))
            }
            6 | 7 => {
                let funs = self.funs();
                if let Some((f, n)) = funs.choose(self.rng).cloned() {
                    let n = if self.rng.gen_ratio(1, 8) { n + 1 } else { n };
                    let args: Vec<String> = (0..n).map(|_| self.expr(d)).collect();
                    if args.is_empty() {
                        format!("(app {f})")
                    } else {
                        format!("(app {f} {})", args.join(" "))
                    }
                } else if self.rng.gen() {
                    let p = self.fresh("p");
                    let body = self.with(Binding::Data(p.clone()), |g| g.expr(d));
                    let arg = self.expr(d);
                    format!("(app (fun ({p}) {body}) {arg})")
                } else {
                    format!("(app {} {})", self.atom(), self.atom())
                }
            }
            8 => self.record(d),
            9 => format!("(get {} {})", self.record(d), self.key()),
            10 => format!("(upd {} {} {})", self.record(d), self.key(), self.expr(d)),
            11 => format!("(del {} {})", self.record(d), self.key()),
            12 => {
                let r = self.fresh("r");
                let v = self.num(d);
                let body = self.with(Binding::Ref(r.clone()), |g| {
                    let w = g.num(d);
                    let e = g.num(d);
                    format!("(seq (set! {r} {w}) (op + (deref {r}) {e}))")
                });
                format!("(let ({r} (ref {v})) {body})")
            }
            13 => format!("(deref {})", self.reference(d)),
            14 => format!("(set! {} {})", self.reference(d), self.expr(d)),
            15 => format!("(if {} {} {})", self.boolean(d), self.expr(d), self.expr(d)),
            16 => format!("(seq {} {})", self.expr(d), self.expr(d)),
            17 => {
                let i = self.fresh("i");
                let n = self.rng.gen_range(0..4);
                let body = self.expr(d);
                let after = self.expr(d);
                format!(
                    "(let ({i} (ref 0)) (seq (while (op < (deref {i}) {n}) (seq {body} (set! {i} (op + (deref {i}) 1)))) {after}))"
                )
            }
            18 | 19 => {
                let l = self.fresh("l");
                self.labels.push(l.clone());
                let body = self.expr(d);
                self.labels.pop();
                format!("(label {l} {body})")
            }
            20 => {
                let l = match self.labels.choose(self.rng) {
                    Some(l) if !self.rng.gen_ratio(1, 6) => l.clone(),
                    _ => "nowhere".to_string(),
                };
                format!("(break {l} {})", self.expr(d))
            }
            21 => format!("(throw {})", self.expr(d)),
            22 | 23 => {
                let x = self.fresh("e");
                let body = self.expr(d);
                let handler = self.with(Binding::Data(x.clone()), |g| {
                    if g.rng.gen() {
                        format!("(get {x} \"message\")")
                    } else {
                        g.expr(d)
                    }
                });
                format!("(try-catch {body} {x} {handler})")
            }
            24 => format!("(try-finally {} {})", self.expr(d), self.expr(d)),
            _ => {
                let funs = self.funs();
                match funs.choose(self.rng) {
                    Some((f, _)) => format!("(op typeof {f})"),
                    None => format!("(op print {})", self.atom()),
                }
            }
        }
    }
}

/// `n` closed terminating programs from `seed`.
pub fn generated_programs(seed: u64, n: usize) -> Vec<(String, Program)> {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| {
            let depth = rng.gen_range(2..6);
            let src = Gen::closed(&mut rng).expr(depth);
            let p = program(&src);
            (src, p)
        })
        .collect()
}
