//! Command line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use mmapf_core::bench::{self, KindRow, QueryRun};
use mmapf_core::bundled;
use mmapf_core::explain::{ExplainError, Explanation, Session, SessionConfig};
use mmapf_core::model::{load_instance, load_plan, plan_to_value, save_plan, Instance, Objective, Plan};
use mmapf_core::queries::{parse_query, QueryKind};
use mmapf_core::semantics::validate;
use mmapf_core::solver::{solve, Outcome, SolveConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_A_SOLUTION: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_PREMISE: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 10;
pub const EXIT_UNKNOWN: u8 = 11;

#[derive(Debug, Parser)]
#[command(name = "mmapf", version, about = "Solve and explain battery-constrained multi-agent path finding plans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Reserved; exact mode uses no randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute an optimal (or best-so-far) plan.
    Solve(SolveArgs),
    /// Check a plan against an instance.
    Validate(ValidateArgs),
    /// Answer one query about a plan.
    Explain(ExplainArgs),
    /// Answer every query a plan gives rise to and report per-kind metrics.
    Bench(BenchArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// Objective terms, highest priority first; replaces the instance's list.
    #[arg(long, value_delimiter = ',', value_parser = parse_objective)]
    pub objective: Option<Vec<Objective>>,
    /// Anytime mode with this budget in seconds.
    #[arg(long, value_name = "SECONDS")]
    pub anytime: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance file, or @name for a bundled example.
    pub instance: String,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Write the plan document here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub instance: String,
    pub plan: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    pub instance: String,
    /// Query as JSON or shorthand, e.g. 'QW1(2,8)'.
    pub query: String,
    /// Plan under discussion; solved for when omitted.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Session file carrying accumulated constraints across invocations.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Keep the constraint of counterfactually answered queries too.
    #[arg(long)]
    pub accumulate_unsat: bool,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub instance: String,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Query kinds to enumerate, e.g. QC1,QP2 (default: all).
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub kinds: Option<Vec<QueryKind>>,
    /// Also write the CSV here instead of after the table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "MMAPF_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Session snapshots live here.
    #[arg(long, env = "MMAPF_DATA_DIR", default_value = "mmapf-sessions")]
    pub data_dir: PathBuf,
    /// Default anytime budget for queries, in seconds.
    #[arg(long, env = "MMAPF_ANYTIME")]
    pub anytime: Option<f64>,
    /// Allowed CORS origin (default: any).
    #[arg(long, env = "MMAPF_CORS_ORIGIN")]
    pub cors_origin: Option<String>,
    /// Queries running longer than this continue as a pollable job.
    #[arg(long, env = "MMAPF_ASYNC_AFTER_MS", default_value_t = 2000)]
    pub async_after_ms: u64,
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown objective term `{s}`"))
}

fn parse_kind(s: &str) -> Result<QueryKind, String> {
    serde_json::from_value(json!(s.to_uppercase())).map_err(|_| format!("unknown query kind `{s}`"))
}

/// Runs a parsed command line and returns the process exit code. Errors
/// are input errors (exit 2).
pub fn run(cli: Cli) -> Result<u8> {
    let fmt = cli.format;
    match cli.command {
        Command::Solve(a) => cmd_solve(&a, fmt),
        Command::Validate(a) => cmd_validate(&a, fmt),
        Command::Explain(a) => cmd_explain(&a, fmt),
        Command::Bench(a) => cmd_bench(&a, fmt),
        Command::Serve(a) => cmd_serve(a),
    }
}

/// Loads an instance file, or a bundled example written `@name`, with the
/// example's plan if it has one.
pub fn load_source(source: &str) -> Result<(Instance, Option<Plan>)> {
    if let Some(name) = source.strip_prefix('@') {
        let ex = bundled::find(name).ok_or_else(|| {
            let names: Vec<&str> = bundled::EXAMPLES.iter().map(|e| e.name).collect();
            anyhow!("no bundled example `{name}` (have {})", names.join(", "))
        })?;
        return Ok(ex.load()?);
    }
    let text = fs::read_to_string(source).with_context(|| format!("reading {source}"))?;
    let inst = load_instance(&text).with_context(|| format!("loading {source}"))?;
    Ok((inst, None))
}

fn read_plan(path: &Path, inst: &Instance) -> Result<Plan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_plan(&text, inst).with_context(|| format!("loading {}", path.display()))
}

fn with_objective(inst: Instance, search: &SearchArgs) -> Result<Instance> {
    match &search.objective {
        None => Ok(inst),
        Some(terms) => {
            let mut parts = inst.to_parts();
            parts.objective = terms.clone();
            Ok(Instance::new(parts)?)
        }
    }
}

fn solve_config(search: &SearchArgs) -> Result<SolveConfig> {
    match search.anytime {
        None => Ok(SolveConfig::exact()),
        Some(s) if s.is_finite() && s >= 0.0 => Ok(SolveConfig::anytime(Duration::from_secs_f64(s))),
        Some(s) => bail!("invalid anytime budget {s}"),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn plan_text(plan: &Plan) -> String {
    let mut out = String::new();
    for (id, a) in &plan.agents {
        let steps: Vec<String> = a.steps.iter().map(|s| format!("{}[{}]", s.loc, s.battery)).collect();
        let _ = writeln!(out, "  R{id}: {}", steps.join(" "));
    }
    out
}

fn cmd_solve(a: &SolveArgs, fmt: Format) -> Result<u8> {
    let (inst, _) = load_source(&a.instance)?;
    let inst = with_objective(inst, &a.search)?;
    let cfg = solve_config(&a.search)?;
    let res = solve(&inst, &[], &[], &cfg)?;
    let code = match res.outcome {
        Outcome::Optimal(_) | Outcome::BestSoFar(_) => EXIT_OK,
        Outcome::Infeasible => EXIT_INFEASIBLE,
        Outcome::Unknown => EXIT_UNKNOWN,
    };
    let sol = res.outcome.solution();
    if let (Some(path), Some(sol)) = (&a.out, sol) {
        fs::write(path, save_plan(&sol.plan)).with_context(|| format!("writing {}", path.display()))?;
    }
    match fmt {
        Format::Json => print_json(&json!({
            "status": res.outcome.status(),
            "cost": sol.map(|s| &s.cost),
            "plan": sol.map(|s| plan_to_value(&s.plan)),
            "stats": res.stats,
        })),
        Format::Text => {
            println!("status: {}", res.outcome.status());
            if let Some(sol) = sol {
                println!("cost: {}", sol.cost);
                println!("makespan: {}", sol.plan.makespan());
                print!("{}", plan_text(&sol.plan));
            }
            println!(
                "nodes: {}  models: {}  time: {} ms",
                res.stats.nodes, res.stats.models, res.stats.time_ms
            );
        }
    }
    Ok(code)
}

fn cmd_validate(a: &ValidateArgs, fmt: Format) -> Result<u8> {
    let (inst, _) = load_source(&a.instance)?;
    let plan = read_plan(&a.plan, &inst)?;
    let report = validate(&inst, &plan);
    match fmt {
        Format::Json => print_json(&serde_json::to_value(&report)?),
        Format::Text => {
            println!("solution: {}", if report.is_solution() { "yes" } else { "no" });
            for r in &report.agents {
                let bad = |v: &mmapf_core::semantics::Verdict| match (v.ok, v.first_bad) {
                    (true, _) => "ok".to_string(),
                    (false, Some(t)) => format!("illegal at t={t}"),
                    (false, None) => "illegal".to_string(),
                };
                println!("  R{}: traversal {}, battery {}", r.agent, bad(&r.traversal), bad(&r.battery));
            }
            for v in &report.violations {
                println!("  {v}");
            }
        }
    }
    Ok(if report.is_solution() { EXIT_OK } else { EXIT_NOT_A_SOLUTION })
}

fn explanation_text(e: &Explanation) -> String {
    let mut out = format!("{}\n", e.text);
    if let Some(p) = &e.alternative_plan {
        out.push_str(&plan_text(p));
    }
    for (label, atoms) in [("current plan", &e.violations_current), ("any plan", &e.violations_any)] {
        if let Some(atoms) = atoms {
            let names: Vec<String> = atoms.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "{label}: {}", if names.is_empty() { "-".into() } else { names.join(" ") });
        }
    }
    let _ = writeln!(
        out,
        "calls: {}  models: {}  time: {} ms",
        e.stats.calls, e.stats.models, e.stats.time_ms
    );
    out
}

fn cmd_explain(a: &ExplainArgs, fmt: Format) -> Result<u8> {
    let (inst, bundled_plan) = load_source(&a.instance)?;
    let inst = with_objective(inst, &a.search)?;
    let query = parse_query(&a.query)?;
    let solve_cfg = solve_config(&a.search)?;
    let existing = match &a.session {
        Some(path) if path.exists() => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut s: Session = serde_json::from_str(&text).with_context(|| format!("loading {}", path.display()))?;
            if s.instance != inst {
                bail!("session file {} belongs to a different instance", path.display());
            }
            s.config.solve.mode = solve_cfg.mode;
            s.config.accumulate_unsat |= a.accumulate_unsat;
            Some(s)
        }
        _ => None,
    };
    let mut session = match existing {
        Some(s) => s,
        None => {
            let plan = match &a.plan {
                Some(p) => Some(read_plan(p, &inst)?),
                None => bundled_plan,
            };
            let cfg = SessionConfig {
                solve: solve_cfg,
                accumulate_unsat: a.accumulate_unsat,
            };
            Session::start(inst, plan, cfg)?.0
        }
    };
    let e = match session.answer(&query) {
        Ok(e) => e,
        Err(ExplainError::PremiseNotObserved(why)) => {
            eprintln!("premise not observed: {why}");
            return Ok(EXIT_PREMISE);
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(path) = &a.session {
        let text = serde_json::to_string_pretty(&session)?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    match fmt {
        Format::Json => print_json(&serde_json::to_value(&e)?),
        Format::Text => print!("{}", explanation_text(&e)),
    }
    Ok(if e.unknown { EXIT_UNKNOWN } else { EXIT_OK })
}

/// Answers every query in parallel, each in its own session, keeping the
/// enumeration order.
pub fn bench_runs(inst: &Instance, plan: &Plan, kinds: &[QueryKind], cfg: &SessionConfig) -> Result<Vec<QueryRun>> {
    let queries = bench::bench_queries(inst, plan, kinds)?;
    let runs = queries
        .par_iter()
        .map(|q| bench::run_one(inst, plan, q, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(runs)
}

fn expected_calls(kind: QueryKind, runs: &[QueryRun]) -> u64 {
    runs.iter()
        .filter(|r| r.query.kind() == kind)
        .map(|r| u64::from(bench::expected_calls(kind, r.outcome)))
        .sum()
}

const COLUMNS: [&str; 8] = [
    "kind",
    "instances",
    "alternatives",
    "counterfactuals",
    "calls",
    "expected_calls",
    "models",
    "avg_time_ms",
];

fn row_cells(r: &KindRow, runs: &[QueryRun]) -> [String; 8] {
    [
        r.kind.name().to_string(),
        r.instances.to_string(),
        r.alternatives.to_string(),
        r.counterfactuals.to_string(),
        r.calls.to_string(),
        expected_calls(r.kind, runs).to_string(),
        r.models.to_string(),
        format!("{:.1}", r.avg_time_ms),
    ]
}

pub fn bench_table(rows: &[KindRow], runs: &[QueryRun]) -> String {
    let cells: Vec<[String; 8]> = rows.iter().map(|r| row_cells(r, runs)).collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|i| cells.iter().map(|c| c[i].len()).chain([COLUMNS[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cols: &[&str], out: &mut String| {
        let padded: Vec<String> = cols
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  "));
    };
    line(&COLUMNS, &mut out);
    for c in &cells {
        let refs: Vec<&str> = c.iter().map(String::as_str).collect();
        line(&refs, &mut out);
    }
    out
}

pub fn bench_csv(rows: &[KindRow], runs: &[QueryRun]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record(row_cells(r, runs))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn cmd_bench(a: &BenchArgs, fmt: Format) -> Result<u8> {
    let (inst, bundled_plan) = load_source(&a.instance)?;
    let inst = with_objective(inst, &a.search)?;
    let solve_cfg = solve_config(&a.search)?;
    let plan = match &a.plan {
        Some(p) => read_plan(p, &inst)?,
        None => match bundled_plan {
            Some(p) => p,
            None => {
                let res = solve(&inst, &[], &[], &SolveConfig::exact())?;
                match res.outcome.into_solution() {
                    Some(s) => s.plan,
                    None => bail!("the instance has no solution to bench"),
                }
            }
        },
    };
    let kinds = a.kinds.clone().unwrap_or_else(|| QueryKind::ALL.to_vec());
    let cfg = SessionConfig {
        solve: solve_cfg,
        accumulate_unsat: false,
    };
    let runs = bench_runs(&inst, &plan, &kinds, &cfg)?;
    let rows = bench::aggregate(&kinds, &runs);
    let csv = bench_csv(&rows, &runs)?;
    if let Some(path) = &a.csv {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    match fmt {
        Format::Json => print_json(&json!({ "rows": rows, "runs": runs })),
        Format::Text => {
            print!("{}", bench_table(&rows, &runs));
            if a.csv.is_none() {
                println!();
                print!("{csv}");
            }
        }
    }
    Ok(if runs.iter().any(|r| r.unknown) { EXIT_UNKNOWN } else { EXIT_OK })
}

fn cmd_serve(a: ServeArgs) -> Result<u8> {
    let cfg = crate::service::ServiceConfig {
        data_dir: Some(a.data_dir),
        default_anytime: a.anytime,
        async_after: Duration::from_millis(a.async_after_ms),
        cors_origin: a.cors_origin,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::service::serve(&a.bind, cfg))?;
    Ok(EXIT_OK)
}
