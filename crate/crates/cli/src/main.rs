//! `tensorcalc` command-line front end.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or input error,
//! 3 failure while differentiating or evaluating.

use std::fs;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use tensorcalc::autodiff::{compress, default_modes, higher_order, CompressionRecord, DerivativeResult, Mode};
use tensorcalc::bench::{self, BenchOptions, Instance, ProblemKind, CSV_HEADER, DEFAULT_SEED};
use tensorcalc::dot::to_dot;
use tensorcalc::eval::{evaluate_node, finite_difference, finite_difference_second, Environment};
use tensorcalc::json::{dag_from_json, dag_to_json};
use tensorcalc::parser::{parse, print_expr};
use tensorcalc::simplify::simplify;
use tensorcalc::tensor::{max_rel_diff, DenseTensor};
use tensorcalc::{Error, ExprDag, NodeId};

#[derive(Parser)]
#[command(name = "tensorcalc", version, about = "Symbolic tensor derivatives in Einstein notation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Differentiate an expression.
    Diff(DiffArgs),
    /// Compare a symbolic derivative against finite differences.
    Check(CheckArgs),
    /// Run a benchmark problem and print CSV rows.
    Bench(BenchArgs),
    /// Print the expression DAG (or a derivative's) as Graphviz DOT.
    Show(ShowArgs),
    /// Simplify an expression and print it.
    Simplify(SimplifyArgs),
    /// Evaluate every output of an expression.
    Eval(EvalArgs),
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct Source {
    /// Program file (`.json` files are read as DAG documents).
    #[arg(long = "expr", value_name = "FILE")]
    file: Option<String>,
    /// Program text.
    #[arg(long)]
    inline: Option<String>,
}

#[derive(Args, Clone)]
struct Target {
    /// Variable to differentiate in.
    #[arg(long)]
    wrt: String,
    /// Output to differentiate; defaults to the first one.
    #[arg(long)]
    output: Option<String>,
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// forward, reverse, cross, or auto (reverse, then cross-country).
    #[arg(long, default_value = "auto")]
    mode: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Text,
    Json,
    Dot,
}

#[derive(Args)]
struct DiffArgs {
    #[command(flatten)]
    src: Source,
    #[command(flatten)]
    target: Target,
    /// Factor out a trailing unit tensor when there is one.
    #[arg(long)]
    compress: bool,
    #[arg(long, value_enum, default_value = "text")]
    emit: Emit,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct CheckSource {
    #[arg(long = "expr", value_name = "FILE")]
    file: Option<String>,
    #[arg(long)]
    inline: Option<String>,
    /// Check a benchmark problem instead of an expression.
    #[arg(long)]
    problem: Option<String>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    src: CheckSource,
    #[arg(long)]
    wrt: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, default_value = "auto")]
    mode: String,
    /// Difference step; 1e-5 for first order, 1e-3 for second.
    #[arg(long)]
    h: Option<f64>,
    /// Relative tolerance; 1e-6 for first order, 1e-4 for second.
    #[arg(long)]
    tol: Option<f64>,
    /// Add this amount to every derivative entry before comparing.
    #[arg(long)]
    perturb: Option<f64>,
    /// JSON file mapping input names to `{"dims": [...], "data": [...]}`.
    #[arg(long)]
    data: Option<String>,
    #[command(flatten)]
    sizes: Sizes,
}

#[derive(Args, Clone)]
struct Sizes {
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    width: usize,
    /// Mask the matrix-factorization residual.
    #[arg(long)]
    masked: bool,
    /// Random seed; `TENSORCALC_SEED` takes precedence.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    problem: String,
    #[command(flatten)]
    sizes: Sizes,
    /// Comma-separated modes; defaults depend on the problem.
    #[arg(long)]
    modes: Option<String>,
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Zero all timing columns so output is byte-reproducible.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct ShowArgs {
    #[command(flatten)]
    src: Source,
    #[arg(long)]
    wrt: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, default_value = "auto")]
    mode: String,
    #[arg(long)]
    compress: bool,
}

#[derive(Args)]
struct SimplifyArgs {
    #[command(flatten)]
    src: Source,
    #[arg(long, value_enum, default_value = "text")]
    emit: Emit,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    src: Source,
    #[arg(long)]
    data: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

/// A failure with its exit code.
struct Fail(u8, String);

impl Fail {
    fn usage(e: impl ToString) -> Fail {
        Fail(2, e.to_string())
    }

    fn internal(e: impl ToString) -> Fail {
        Fail(3, e.to_string())
    }
}

type Out = Result<u8, Fail>;

fn seed(flag: u64) -> Result<u64, Fail> {
    match std::env::var("TENSORCALC_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Fail::usage(format!("TENSORCALC_SEED `{s}` is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn load(file: &Option<String>, inline: &Option<String>) -> Result<ExprDag, Fail> {
    let dag = match (file, inline) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Fail::usage(format!("{path}: {e}")))?;
            if path.ends_with(".json") {
                dag_from_json(&text).map_err(Fail::usage)?.0
            } else {
                parse(&text).map_err(Fail::usage)?
            }
        }
        (None, Some(text)) => parse(text).map_err(Fail::usage)?,
        (None, None) => return Err(Fail::usage("no expression given")),
    };
    if dag.outputs().is_empty() {
        return Err(Fail::usage("the program has no expression"));
    }
    Ok(dag)
}

fn modes_for(mode: &str, order: usize) -> Result<Vec<Mode>, Fail> {
    if order == 0 {
        return Err(Fail::usage("--order must be at least 1"));
    }
    if mode == "auto" {
        return Ok(default_modes(order));
    }
    let m: Mode = mode.parse().map_err(Fail::usage)?;
    Ok(vec![m; order])
}

fn output_name(dag: &ExprDag, requested: &Option<String>) -> Result<String, Fail> {
    match requested {
        Some(name) => {
            dag.output(name).map_err(Fail::usage)?;
            Ok(name.clone())
        }
        None => Ok(dag.outputs()[0].0.clone()),
    }
}

fn derive(dag: &ExprDag, output: &str, wrt: &str, order: usize, mode: &str) -> Result<DerivativeResult, Fail> {
    if dag.input_shape(wrt).is_none() {
        return Err(Fail::usage(Error::UnknownVariable(wrt.to_string())));
    }
    let modes = modes_for(mode, order)?;
    higher_order(dag, output, wrt, order, &modes).map_err(Fail::internal)
}

fn maybe_compress(r: DerivativeResult, wanted: bool) -> Result<DerivativeResult, Fail> {
    if !wanted {
        return Ok(r);
    }
    match compress(&r) {
        Ok(c) => Ok(c),
        Err(Error::NotCompressible(why)) => {
            eprintln!("not compressed: {why}");
            Ok(r)
        }
        Err(e) => Err(Fail::internal(e)),
    }
}

fn describe_record(rec: &CompressionRecord) -> String {
    let pairs: Vec<String> = rec.delta_pairs.iter().map(|(a, b)| format!("{a}|{b}")).collect();
    format!(
        "# compressed: full = einsum({},{}->{}; core, delta({}; {}))",
        rec.sig.0.concat(),
        rec.sig.1.concat(),
        rec.sig.2.concat(),
        pairs.join(","),
        rec.delta_dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    )
}

fn cmd_diff(a: DiffArgs) -> Out {
    let dag = load(&a.src.file, &a.src.inline)?;
    let output = output_name(&dag, &a.target.output)?;
    let r = derive(&dag, &output, &a.target.wrt, a.target.order, &a.target.mode)?;
    let r = maybe_compress(r, a.compress)?;
    match a.emit {
        Emit::Text => {
            if let Some(rec) = &r.compression {
                println!("{}", describe_record(rec));
            }
            print!("{}", print_expr(&r.dag));
        }
        Emit::Json => println!("{}", dag_to_json(&r.dag, r.compression.as_ref().map(CompressionRecord::to_json))),
        Emit::Dot => print!("{}", to_dot(&r.dag, &[r.root])),
    }
    Ok(0)
}

fn read_env(path: &str, dag: &ExprDag) -> Result<Environment, Fail> {
    let text = fs::read_to_string(path).map_err(|e| Fail::usage(format!("{path}: {e}")))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Fail::usage(format!("{path}: {e}")))?;
    let obj = doc.as_object().ok_or_else(|| Fail::usage(format!("{path}: expected an object of tensors")))?;
    let mut env = Environment::new();
    for (name, v) in obj {
        let t = DenseTensor::from_json(&v.to_string()).map_err(Fail::usage)?;
        env.insert(name.clone(), t);
    }
    for (name, shape) in dag.inputs() {
        match env.get(name) {
            None => return Err(Fail::usage(Error::MissingBinding(name.clone()))),
            Some(t) if t.dims() != shape.dims() => {
                return Err(Fail::usage(Error::DimMismatch(format!(
                    "`{name}` is bound to {:?} but declared {:?}",
                    t.dims(),
                    shape.dims()
                ))))
            }
            Some(_) => {}
        }
    }
    Ok(env)
}

fn instance(problem: &str, s: &Sizes) -> Result<Instance, Fail> {
    let kind: ProblemKind = problem.parse().map_err(Fail::usage)?;
    let seed = seed(s.seed)?;
    match kind {
        ProblemKind::Logreg => bench::logreg(s.n, seed),
        ProblemKind::Matfac => bench::matfac(s.n, s.k, s.masked, seed),
        ProblemKind::Nn => bench::nn(s.layers, s.width, seed),
    }
    .map_err(Fail::usage)
}

fn cmd_check(a: CheckArgs) -> Out {
    let (dag, env, output, wrt) = match &a.src.problem {
        Some(p) => {
            let inst = instance(p, &a.sizes)?;
            let wrt = a.wrt.clone().unwrap_or(inst.wrt.clone());
            (inst.dag, inst.env, "y".to_string(), wrt)
        }
        None => {
            let dag = load(&a.src.file, &a.src.inline)?;
            let wrt = a.wrt.clone().ok_or_else(|| Fail::usage("--wrt is required for expressions"))?;
            let env = match &a.data {
                Some(path) => read_env(path, &dag)?,
                None => bench::random_env(&dag, seed(a.sizes.seed)?),
            };
            let output = output_name(&dag, &a.output)?;
            (dag, env, output, wrt)
        }
    };
    if a.order > 2 {
        return Err(Fail::usage("finite differences are available for orders 1 and 2"));
    }
    let r = derive(&dag, &output, &wrt, a.order, &a.mode)?;
    let mut sym = evaluate_node(&r.dag, &env, r.root).map_err(Fail::internal)?;
    if let Some(p) = a.perturb {
        sym = sym.map(|v| v + p);
    }
    let y: NodeId = dag.output(&output).map_err(Fail::usage)?;
    let (h, tol) = match a.order {
        1 => (a.h.unwrap_or(1e-5), a.tol.unwrap_or(1e-6)),
        _ => (a.h.unwrap_or(1e-3), a.tol.unwrap_or(1e-4)),
    };
    let fd = match a.order {
        1 => finite_difference(&dag, y, &wrt, &env, h),
        _ => finite_difference_second(&dag, y, &wrt, &env, h),
    }
    .map_err(Fail::internal)?;
    let fd = fd.reshaped(sym.dims()).map_err(Fail::internal)?;
    let err = max_rel_diff(&sym, &fd);
    let verdict = if err <= tol { "pass" } else { "FAIL" };
    println!("order {} d{output}/d{wrt}: max relative error {err:.3e} (tol {tol:.1e}, h {h:.1e}) {verdict}", a.order);
    Ok(if err <= tol { 0 } else { 1 })
}

fn cmd_bench(a: BenchArgs) -> Out {
    let inst = instance(&a.problem, &a.sizes)?;
    let modes = match &a.modes {
        None => bench::default_bench_modes(inst.kind),
        Some(list) => list
            .split(',')
            .map(|m| m.trim().parse::<Mode>().map_err(Fail::usage))
            .collect::<Result<Vec<_>, _>>()?,
    };
    if modes.is_empty() {
        return Err(Fail::usage("no modes given"));
    }
    let opts = BenchOptions {
        modes,
        repeat: a.repeat,
        deterministic: a.deterministic,
    };
    let rows = bench::run(&inst, &opts).map_err(Fail::internal)?;
    println!("{CSV_HEADER}");
    for r in &rows {
        println!("{}", r.csv());
    }
    for r in &rows {
        eprintln!(
            "{} {} {}: {} FLOPs, built in {:.3} ms, evaluated in {:.3} ms{}",
            r.problem,
            r.mode,
            if r.compressed { "compressed" } else { "full" },
            r.eval_flops,
            r.build_ms,
            r.eval_ms,
            r.solve_ms.map(|s| format!(", Newton solve {s:.3} ms")).unwrap_or_default()
        );
    }
    Ok(0)
}

fn cmd_show(a: ShowArgs) -> Out {
    let dag = load(&a.src.file, &a.src.inline)?;
    match &a.wrt {
        None => {
            let roots: Vec<NodeId> = dag.outputs().iter().map(|(_, id)| *id).collect();
            print!("{}", to_dot(&dag, &roots));
        }
        Some(wrt) => {
            let output = output_name(&dag, &a.output)?;
            let r = derive(&dag, &output, wrt, a.order, &a.mode)?;
            let r = maybe_compress(r, a.compress)?;
            print!("{}", to_dot(&r.dag, &[r.root]));
        }
    }
    Ok(0)
}

fn cmd_simplify(a: SimplifyArgs) -> Out {
    let dag = simplify(&load(&a.src.file, &a.src.inline)?);
    match a.emit {
        Emit::Text => print!("{}", print_expr(&dag)),
        Emit::Json => println!("{}", dag_to_json(&dag, None)),
        Emit::Dot => {
            let roots: Vec<NodeId> = dag.outputs().iter().map(|(_, id)| *id).collect();
            print!("{}", to_dot(&dag, &roots));
        }
    }
    Ok(0)
}

fn cmd_eval(a: EvalArgs) -> Out {
    let dag = load(&a.src.file, &a.src.inline)?;
    let env = match &a.data {
        Some(path) => read_env(path, &dag)?,
        None => bench::random_env(&dag, seed(a.seed)?),
    };
    let mut doc = serde_json::Map::new();
    for (name, id) in dag.outputs() {
        let t = evaluate_node(&dag, &env, *id).map_err(Fail::internal)?;
        let v: Value = serde_json::from_str(&t.to_json()).map_err(Fail::internal)?;
        doc.insert(name.clone(), v);
    }
    println!("{}", serde_json::to_string_pretty(&Value::Object(doc)).map_err(Fail::internal)?);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Diff(a) => cmd_diff(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Show(a) => cmd_show(a),
        Cmd::Simplify(a) => cmd_simplify(a),
        Cmd::Eval(a) => cmd_eval(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
