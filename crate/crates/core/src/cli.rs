//! The `jam` command line.
//!
//! Exit codes: 0 success or agreement, 1 uncaught error or divergence,
//! 2 timeout, 3 usage, input or parse error, 4 truncated analysis,
//! 5 incomparable engines.

use std::ffi::OsString;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::aam::Policy;
use crate::ast::Program;
use crate::calculus::{canonical, eval_rho, eval_subst, unload, CanonicalAnswer, Outcome, Timeout};
use crate::jam;
use crate::pdreach::{explore, to_dot, to_json, Limits};
use crate::queries;
use crate::sexpr::{parse, SourceText};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_TIMEOUT: i32 = 2;
pub const EXIT_USAGE: i32 = 3;
pub const EXIT_TRUNCATED: i32 = 4;
pub const EXIT_INCOMPARABLE: i32 = 5;

const DEFAULT_FUEL: u64 = 1_000_000;

#[derive(Debug, Parser)]
#[command(name = "jam", version, about = "Run and analyze core JavaScript programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a program on the concrete machine.
    Run {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FUEL, value_parser = clap::value_parser!(u64).range(1..))]
        fuel: u64,
        /// Print every machine state.
        #[arg(long)]
        trace: bool,
    },
    /// Analyze a program and report control flow.
    Analyze {
        file: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Export the reachable state graph.
    Graph {
        file: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long, value_enum, default_value = "dot")]
        format: GraphFormat,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare the substitution, environment and machine evaluators.
    Diff {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FUEL, value_parser = clap::value_parser!(u64).range(1..))]
        fuel: u64,
    },
}

#[derive(Debug, clap::Args)]
pub struct AnalysisArgs {
    /// const, 0cfa or kcfa:K
    #[arg(long, default_value = "0cfa")]
    pub policy: Policy,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub node_budget: u64,
    #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub edge_budget: u64,
    /// Share a single store among all states.
    #[arg(long)]
    pub widen: bool,
}

impl AnalysisArgs {
    fn limits(&self) -> Limits {
        Limits { max_nodes: self.node_budget as usize, max_edges: self.edge_budget as usize, widen: self.widen }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GraphFormat {
    Dot,
    Json,
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    color: bool,
}

impl Io<'_> {
    fn paint(&self, code: &str, s: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{s}\x1b[0m")
        } else {
            s.to_string()
        }
    }
}

/// Runs the command line with the process's arguments and streams.
pub fn main() -> i32 {
    let color = std::env::var("JAM_COLOR").map_or(true, |v| v != "0") && std::io::stdout().is_terminal();
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run_args(std::env::args_os(), &mut out, &mut err, color)
}

/// Runs the command line on explicit arguments, writing to `out` and `err`.
pub fn run_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write, color: bool) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut io = Io { out, err, color };
    let code = match execute(cli.command, &mut io) {
        Ok(code) => code,
        Err(Failure(msg)) => {
            let _ = writeln!(io.err, "jam: {msg}");
            EXIT_USAGE
        }
    };
    let _ = io.out.flush();
    code
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn load(path: &Path) -> Result<Program, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let expr = parse(&SourceText::new(text, path.display().to_string()))?;
    Program::new(&expr).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn emit(io: &mut Io, output: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure(format!("{}: {e}", path.display()))),
        None => Ok(io.out.write_all(text.as_bytes())?),
    }
}

fn execute(command: Command, io: &mut Io) -> Result<i32, Failure> {
    match command {
        Command::Run { file, fuel, trace } => {
            let p = load(&file)?;
            let result = if trace {
                let mut lines = Vec::new();
                let r = jam::run_observed(&p, fuel, |s| lines.push(jam::trace_line(s)));
                for l in lines {
                    writeln!(io.out, "{l}")?;
                }
                r
            } else {
                jam::run(&p, fuel)
            };
            match result {
                Ok(r) => {
                    let answer = canonical(&r.answer.unload());
                    for e in &answer.effects {
                        writeln!(io.out, "{e}")?;
                    }
                    let (code, color) = match r.answer.outcome {
                        Outcome::Value(_) => (EXIT_OK, "32"),
                        _ => (EXIT_ERROR, "31"),
                    };
                    writeln!(io.out, "{}", io.paint(color, &answer.outcome))?;
                    Ok(code)
                }
                Err(t) => {
                    writeln!(io.out, "{}", io.paint("33", &t.to_string()))?;
                    Ok(EXIT_TIMEOUT)
                }
            }
        }
        Command::Analyze { file, analysis, format, output } => {
            let p = load(&file)?;
            let g = explore(&p, analysis.policy, analysis.limits());
            let report = queries::report(&g);
            for w in &report.warnings {
                writeln!(io.err, "jam: warning: {w}")?;
            }
            let text = match format {
                ReportFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
                ReportFormat::Text => report_text(&report),
            };
            emit(io, &output, &text)?;
            Ok(if g.truncated { EXIT_TRUNCATED } else { EXIT_OK })
        }
        Command::Graph { file, analysis, format, output } => {
            let p = load(&file)?;
            let g = explore(&p, analysis.policy, analysis.limits());
            if g.truncated {
                writeln!(io.err, "jam: warning: {}", queries::TRUNCATED_WARNING)?;
            }
            let text = match format {
                GraphFormat::Dot => to_dot(&g),
                GraphFormat::Json => serde_json::to_string_pretty(&to_json(&g))? + "\n",
            };
            emit(io, &output, &text)?;
            Ok(if g.truncated { EXIT_TRUNCATED } else { EXIT_OK })
        }
        Command::Diff { file, fuel } => {
            let p = load(&file)?;
            let engines: [(&str, Result<CanonicalAnswer, Timeout>); 3] = [
                ("subst", eval_subst(&p, fuel).map(|a| canonical(&a))),
                ("rho", eval_rho(&p, fuel).map(|a| canonical(&unload(&a)))),
                ("jam", jam::run(&p, fuel).map(|r| canonical(&r.answer.unload()))),
            ];
            diff_report(io, &engines)
        }
    }
}

fn report_text(r: &queries::FlowReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "policy {}", r.policy);
    let list = |v: Vec<String>| if v.is_empty() { "-".to_string() } else { v.join(" ") };
    for (site, ts) in &r.call_targets {
        let _ = writeln!(s, "call {site} -> {}", list(ts.iter().map(|t| t.to_string()).collect()));
    }
    for (site, ts) in &r.throw_to {
        let v = ts
            .iter()
            .map(|t| match t {
                queries::HandlerTarget::Handler(h) => h.to_string(),
                queries::HandlerTarget::TopLevelError => "TopLevelError".into(),
            })
            .collect();
        let _ = writeln!(s, "throw {site} -> {}", list(v));
    }
    for (site, ts) in &r.break_to {
        let v = ts
            .iter()
            .map(|t| match t {
                queries::LabelTarget::Label(h) => h.to_string(),
                queries::LabelTarget::TopLevelBreak => "TopLevelBreak".into(),
            })
            .collect();
        let _ = writeln!(s, "break {site} -> {}", list(v));
    }
    for a in &r.answers {
        let _ = writeln!(s, "answer {a}");
    }
    s
}

fn diff_report(io: &mut Io, engines: &[(&str, Result<CanonicalAnswer, Timeout>)]) -> Result<i32, Failure> {
    let timed_out: Vec<String> = engines
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|t| format!("{name} {t}")))
        .collect();
    if !timed_out.is_empty() {
        writeln!(io.out, "{}", io.paint("33", &format!("incomparable: {}", timed_out.join(", "))))?;
        return Ok(EXIT_INCOMPARABLE);
    }
    let answers: Vec<(&str, &CanonicalAnswer)> = engines.iter().map(|(n, r)| (*n, r.as_ref().unwrap())).collect();
    let (first, a) = answers[0];
    for &(name, b) in &answers[1..] {
        let what = if a.outcome != b.outcome {
            Some(("outcome", a.outcome.clone(), b.outcome.clone()))
        } else if a.effects != b.effects {
            Some(("effects", format!("{:?}", a.effects), format!("{:?}", b.effects)))
        } else if a.store != b.store {
            Some(("store", a.store.join(" "), b.store.join(" ")))
        } else {
            None
        };
        if let Some((part, x, y)) = what {
            writeln!(io.out, "{}", io.paint("31", &format!("diverge: {part}")))?;
            writeln!(io.out, "  {first}: {x}")?;
            writeln!(io.out, "  {name}: {y}")?;
            return Ok(EXIT_ERROR);
        }
    }
    writeln!(io.out, "{}", io.paint("32", &format!("agree: {}", a.outcome)))?;
    Ok(EXIT_OK)
}
