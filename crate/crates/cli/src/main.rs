//! `rwk`: command-line driver for the rwk-core computations.
//!
//! Exit status: 0 on success, 1 on invalid input or usage, 2 when a checked
//! identity fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rwk_core::assemble::{assemble_partition, with_thread_cap, SourceData};
use rwk_core::bv::{rg_check, RgFixture};
use rwk_core::graph::{admissible_partition_graphs, enumerate_trivalent, parse_graph, GraphClass};
use rwk_core::heat::verify_all;
use rwk_core::rational::fmt_q;
use rwk_core::weight::{rw_class, TailAssignment, TargetData};
use rwk_core::weyl::{op_delta_inverse, ConnectionData, WeylAlgebra};

#[derive(Parser)]
#[command(name = "rwk", version, about = "Perturbative Rozansky-Witten toolkit")]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    output: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Fedosov recursion for a curvature file and report residuals.
    Fedosov {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        cutoff: u32,
        #[arg(long)]
        curvature: PathBuf,
    },
    /// Graph enumeration.
    Graphs {
        #[command(subcommand)]
        command: GraphsCommand,
    },
    /// Weight of one graph against a target.
    Weights {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Assemble the partition sum.
    Partition {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        source: PathBuf,
    },
    /// Toy RG-flow checks.
    Rg {
        #[command(subcommand)]
        command: RgCommand,
    },
    /// Built-in identity checks.
    Verify {
        #[command(subcommand)]
        command: VerifyCommand,
    },
}

#[derive(Subcommand)]
enum GraphsCommand {
    /// Trivalent graphs with the given numbers of vertices and tails.
    Enumerate {
        #[arg(long)]
        vertices: usize,
        #[arg(long, default_value_t = 0)]
        tails: usize,
        /// Only connected graphs.
        #[arg(long)]
        connected: bool,
    },
    /// Admissible classes of the partition sum.
    PartitionClasses {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        b1: usize,
    },
}

#[derive(Subcommand)]
enum RgCommand {
    Check {
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long, default_value_t = 3)]
        hbar: i32,
    },
}

#[derive(Subcommand)]
enum VerifyCommand {
    HeatAsymptotics,
}

enum Failure {
    Invalid(String),
    Check(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type Outcome = Result<(Value, String), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn class_json(c: &GraphClass) -> Value {
    json!({ "key": c.key, "aut": c.aut, "vertices": c.graph.num_vertices(), "edges": c.graph.num_edges(), "tails": c.graph.num_tails() })
}

fn class_list(classes: &[GraphClass]) -> (Value, String) {
    let mut text = format!("{} classes\n", classes.len());
    for c in classes {
        text += &format!("|Aut| = {}  {}\n", c.aut, c.key);
    }
    (json!({ "count": classes.len(), "classes": classes.iter().map(class_json).collect::<Vec<_>>() }), text)
}

fn fedosov(n: usize, cutoff: u32, curvature: &Path) -> Outcome {
    let conn = ConnectionData::parse(&read(curvature)?, n, cutoff)?;
    let alg = WeylAlgebra::new(n);
    let i = alg.fedosov_solve(&conn, cutoff)?;
    let residual = alg.flatness_residual(&i, &conn)?;
    let gauge = op_delta_inverse(&i);
    let weight3 = i.weight_component(3).sub(&op_delta_inverse(&conn.curvature.with_cutoff(cutoff)))?;
    let ok = residual.is_zero() && gauge.is_zero() && weight3.is_zero();
    let value = json!({
        "n": n,
        "cutoff": cutoff,
        "terms": i.len(),
        "solution": i.to_string().lines().collect::<Vec<_>>(),
        "residual_terms": residual.len(),
        "gauge_terms": gauge.len(),
        "weight3_mismatch_terms": weight3.len(),
        "ok": ok,
    });
    let text = format!(
        "{i}# terms: {}\n# flatness residual terms (mod hbar, weight < {cutoff}): {}\n# delta^-1 I terms: {}\n# weight-3 mismatch terms: {}\n",
        i.len(),
        residual.len(),
        gauge.len(),
        weight3.len()
    );
    if ok {
        Ok((value, text))
    } else {
        Err(Failure::Check(text))
    }
}

fn weights(graph: &Path, target: &Path) -> Outcome {
    let g = parse_graph(&read(graph)?)?;
    let t = TargetData::from_json(&read(target)?)?;
    let class = GraphClass::of(&g)?;
    let w = rw_class(&g, &t, &TailAssignment::Abstract)?;
    let text = format!("class: {}\n|Aut| = {}\nweight = {}\n", class.key, class.aut, fmt_q(&w));
    Ok((json!({ "key": class.key, "aut": class.aut, "weight": fmt_q(&w) }), text))
}

fn partition(target: &Path, source: &Path) -> Outcome {
    let t = TargetData::from_json(&read(target)?)?;
    let s = SourceData::from_json(&read(source)?)?;
    let r = assemble_partition(&t, &s)?;
    let terms: Vec<Value> = r
        .terms
        .iter()
        .map(|x| json!({ "key": x.key, "aut": x.aut, "weight": fmt_q(&x.weight), "analytic": x.analytic.to_string(), "contribution": x.contribution.to_string() }))
        .collect();
    let value = json!({ "n": r.n, "b1": r.b1, "torsion_count": r.torsion_count, "total": r.total.to_string(), "terms": terms, "ignored_keys": r.ignored_keys });
    let mut text = format!("{}\n", r.total);
    for x in &r.terms {
        text += &format!("# {}  |Aut| = {}  b = {}  I = {}  -> {}\n", x.key, x.aut, fmt_q(&x.weight), x.analytic, x.contribution);
    }
    for k in &r.ignored_keys {
        text += &format!("# ignored (not admissible): {k}\n");
    }
    Ok((value, text))
}

fn rg(fixture: &Path, hbar: i32) -> Outcome {
    let fx = RgFixture::from_json(&read(fixture)?)?;
    let r = rg_check(&fx, hbar)?;
    let show = |f: &Option<rwk_core::bv::Functional>| f.as_ref().map(|x| x.to_string());
    let count = |f: &Option<rwk_core::bv::Functional>| f.as_ref().map(|x| x.terms().len());
    let qme_order = r.qme.as_ref().and_then(|x| x.terms().keys().map(|(h, _)| *h).min());
    let value = json!({
        "graph_classes": r.graph_classes,
        "graph_vs_expansion_terms": r.graph_vs_expansion.terms().len(),
        "semigroup_terms": count(&r.semigroup),
        "laplacian_squared_terms": count(&r.laplacian_squared),
        "qme_residual": show(&r.qme),
        "qme_residual_min_hbar": qme_order,
        "consistent": r.consistent(),
    });
    let mut text = format!("graph classes: {}\ngraph sum - expansion: {}\n", r.graph_classes, r.graph_vs_expansion);
    if let Some(s) = &r.semigroup {
        text += &format!("semigroup residual: {s}\n");
    }
    if let Some(s) = &r.laplacian_squared {
        text += &format!("laplacian squared: {s}\n");
    }
    if let Some(s) = &r.qme {
        text += &format!("QME residual: {s}\n");
        if let Some(h) = qme_order {
            text += &format!("QME residual starts at hbar^{h}\n");
        }
    }
    if r.consistent() {
        Ok((value, text))
    } else {
        Err(Failure::Check(text))
    }
}

fn heat() -> Outcome {
    let checks = verify_all();
    let mut text = String::new();
    for c in &checks {
        text += &format!("{} {} (residual terms: {})\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.residual_terms);
    }
    let value = json!({
        "checks": checks.iter().map(|c| json!({ "name": c.name, "passed": c.passed, "residual_terms": c.residual_terms, "detail": c.detail })).collect::<Vec<_>>()
    });
    if checks.iter().all(|c| c.passed) {
        Ok((value, text))
    } else {
        Err(Failure::Check(text))
    }
}

fn run(command: &Command) -> Outcome {
    match command {
        Command::Fedosov { n, cutoff, curvature } => fedosov(*n, *cutoff, curvature),
        Command::Graphs { command: GraphsCommand::Enumerate { vertices, tails, connected } } => {
            Ok(class_list(&enumerate_trivalent(*vertices, *tails, !connected)?))
        }
        Command::Graphs { command: GraphsCommand::PartitionClasses { n, b1 } } => Ok(class_list(&admissible_partition_graphs(*n, *b1)?)),
        Command::Weights { graph, target } => weights(graph, target),
        Command::Partition { target, source } => partition(target, source),
        Command::Rg { command: RgCommand::Check { fixture, hbar } } => rg(fixture, *hbar),
        Command::Verify { command: VerifyCommand::HeatAsymptotics } => heat(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match with_thread_cap(|| run(&cli.command)) {
        Ok(o) => o,
        Err(e) => Err(Failure::Invalid(e.to_string())),
    };
    let emit = |value: &Value, text: &str| match cli.output {
        Format::Json => println!("{}", serde_json::to_string_pretty(value).expect("json")),
        Format::Text => print!("{text}"),
    };
    match outcome {
        Ok((value, text)) => {
            emit(&value, &text);
            ExitCode::SUCCESS
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Check(text)) => {
            print!("{text}");
            eprintln!("check failed");
            ExitCode::from(2)
        }
    }
}
