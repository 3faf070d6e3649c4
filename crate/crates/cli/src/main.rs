use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use semflow_core::catalog::DatasetKind;
use semflow_core::engine::{Engine, EngineError, PlanRun, RunPlanError};
use semflow_core::executor::{ExecutionTrace, PhysicalPlan};
use semflow_core::optimizer::OptimizerTrace;
use semflow_core::plan::{parse_plan, serialize_plan_pretty};
use semflow_core::planner::AnswerTable;
use semflow_core::provider::FixtureStore;
use semflow_core::table::Table;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "semflow", version, about = "Ask questions of files, documents and SQL stores")]
struct Cli {
    /// Configuration file.
    #[arg(short, long, global = true, default_value = "semflow.toml")]
    config: PathBuf,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct OutputFlags {
    /// Machine-readable JSON output.
    #[arg(long)]
    json: bool,
    /// Also print the plan, rewrites, join order, model assignment and cost.
    #[arg(long)]
    explain: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Profile every dataset and build the catalog.
    Profile,
    /// Answer a natural-language question.
    Ask {
        query: String,
        #[command(flatten)]
        out: OutputFlags,
        /// Override the configured iteration budget.
        #[arg(long)]
        max_iter: Option<u32>,
    },
    /// Validate, optimize and execute a plan document.
    RunPlan {
        file: PathBuf,
        #[command(flatten)]
        out: OutputFlags,
        /// Execute the plan as written.
        #[arg(long)]
        no_optimize: bool,
    },
    /// Interactive session; one question per line.
    Repl,
    /// Manage recorded model responses.
    Fixtures {
        #[command(subcommand)]
        action: FixturesAction,
    },
}

#[derive(Subcommand)]
enum FixturesAction {
    /// Ask every question in a file (a JSON list of strings or of objects
    /// with a "question" field) so that the configured provider records them.
    Record { questions: PathBuf },
    /// Check that every fixture's key matches its model and prompt.
    Verify,
}

fn open(cli: &Cli) -> Result<Engine, ExitCode> {
    let engine = Engine::from_path(&cli.config).map_err(|e| config_error(&e))?;
    if let Err(e) = engine.ensure_profiled() {
        eprintln!("error: profiling failed: {e}");
        return Err(ExitCode::from(EXIT_CONFIG));
    }
    Ok(engine)
}

fn config_error(e: &EngineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn explain_text(plan: &PhysicalPlan, optimizer: &OptimizerTrace, execution: &ExecutionTrace) -> String {
    let mut s = String::from("PLAN\n");
    s.push_str(&serialize_plan_pretty(&plan.plan));
    s.push('\n');
    let choices = plan.describe();
    if choices.as_object().is_some_and(|m| !m.is_empty()) {
        s.push_str(&format!("physical: {choices}\n"));
    }
    s.push_str(&optimizer.render());
    s.push_str(&format!("EXECUTION\n  calls {} cost {:.8}\n", execution.total_calls, execution.total_cost));
    for op in &execution.ops {
        if op.calls > 0 || op.parse_warnings > 0 {
            s.push_str(&format!(
                "  #{} {} {} rows {} -> {} calls {} cost {:.8}\n",
                op.node_id,
                op.op,
                op.implementation.as_deref().unwrap_or("relational"),
                op.rows_in,
                op.rows_out,
                op.calls,
                op.cost
            ));
        }
    }
    s
}

fn explain_json(plan: &PhysicalPlan, optimizer: &OptimizerTrace, execution: &ExecutionTrace) -> serde_json::Value {
    json!({
        "plan": semflow_core::plan::json::plan_document(&plan.plan),
        "physical": plan.describe(),
        "optimizer": optimizer,
        "execution": execution,
    })
}

fn print_result(
    out: OutputFlags,
    header: serde_json::Value,
    table: &Table,
    physical: &PhysicalPlan,
    optimizer: &OptimizerTrace,
    execution: &ExecutionTrace,
) {
    if out.json {
        let mut doc = header;
        doc["result"] = table.to_json();
        if out.explain {
            doc["explain"] = explain_json(physical, optimizer, execution);
        }
        println!("{}", serde_json::to_string_pretty(&doc).expect("JSON output"));
    } else {
        print!("{}", table.to_text());
        if out.explain {
            print!("{}", explain_text(physical, optimizer, execution));
        }
    }
}

fn print_answer(out: OutputFlags, a: &AnswerTable) {
    let header = json!({"task_id": a.task_id, "iterations": a.iterations, "datasets": a.datasets});
    print_result(out, header, &a.table, &a.physical, &a.optimizer, &a.execution);
}

fn cmd_profile(cli: &Cli) -> ExitCode {
    let engine = match Engine::from_path(&cli.config) {
        Ok(e) => e,
        Err(e) => return config_error(&e),
    };
    match engine.profile() {
        Ok(outcomes) => {
            for o in &outcomes {
                let p = &o.profile;
                match p.kind {
                    DatasetKind::Structured => println!(
                        "{} [structured, {} via {}] {} rows, columns {}",
                        p.name,
                        p.source.format,
                        p.source.connector,
                        p.row_count.unwrap_or(0),
                        p.schema.as_ref().map(|s| s.to_string()).unwrap_or_default()
                    ),
                    DatasetKind::Unstructured => println!(
                        "{} [unstructured, {} via {}] {} segments, {} extracted tables",
                        p.name,
                        p.source.format,
                        p.source.connector,
                        o.segment_count,
                        o.derived.len()
                    ),
                }
                println!("  summary: {}", p.summary);
                for d in &o.derived {
                    println!(
                        "  table {}: columns {}",
                        d.name,
                        d.schema.as_ref().map(|s| s.to_string()).unwrap_or_default()
                    );
                }
                for w in &o.warnings {
                    println!("  warning: {w}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn cmd_ask(cli: &Cli, query: &str, out: OutputFlags, max_iter: Option<u32>) -> ExitCode {
    let engine = match open(cli) {
        Ok(e) => e,
        Err(code) => return code,
    };
    match engine.ask(query, max_iter) {
        Ok(a) => {
            print_answer(out, &a);
            ExitCode::SUCCESS
        }
        Err(report) => {
            if out.json {
                println!("{}", serde_json::to_string_pretty(&report.to_json()).expect("JSON output"));
            } else {
                println!("{report}");
            }
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn cmd_run_plan(cli: &Cli, file: &PathBuf, out: OutputFlags, no_optimize: bool) -> ExitCode {
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", file.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let plan = match parse_plan(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let engine = match open(cli) {
        Ok(e) => e,
        Err(code) => return code,
    };
    match engine.run_plan(&plan, !no_optimize) {
        Ok(PlanRun { table, physical, optimizer, execution, .. }) => {
            print_result(out, json!({}), &table, &physical, &optimizer, &execution);
            ExitCode::SUCCESS
        }
        Err(e @ RunPlanError::Invalid(_)) | Err(e @ RunPlanError::Execution(_)) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn cmd_repl(cli: &Cli) -> ExitCode {
    let engine = match open(cli) {
        Ok(e) => e,
        Err(code) => return code,
    };
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    let out = OutputFlags { json: false, explain: false };
    loop {
        print!("semflow> ");
        let _ = stdout.flush();
        let mut line = String::new();
        match stdin.lock().read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        let q = line.trim();
        match q {
            "" => continue,
            "exit" | "quit" | ":q" => break,
            _ => match engine.ask(q, None) {
                Ok(a) => print_answer(out, &a),
                Err(report) => println!("{report}"),
            },
        }
    }
    println!();
    ExitCode::SUCCESS
}

fn read_questions(path: &PathBuf) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let items = doc.as_array().ok_or_else(|| format!("{}: expected a JSON list", path.display()))?;
    items
        .iter()
        .map(|v| match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            other => other["question"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| format!("{}: entry without a question", path.display())),
        })
        .collect()
}

fn cmd_fixtures(cli: &Cli, action: &FixturesAction) -> ExitCode {
    match action {
        FixturesAction::Record { questions } => {
            let questions = match read_questions(questions) {
                Ok(q) => q,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let engine = match open(cli) {
                Ok(e) => e,
                Err(code) => return code,
            };
            let mut failed = 0;
            for q in &questions {
                match engine.ask(q, None) {
                    Ok(a) => println!("ok   [{} iteration(s), {} rows] {q}", a.iterations, a.table.len()),
                    Err(r) => {
                        failed += 1;
                        println!("fail [{} iteration(s)] {q}", r.iterations);
                    }
                }
            }
            println!("{} of {} questions answered", questions.len() - failed, questions.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
        FixturesAction::Verify => {
            let cfg = match semflow_core::config::SystemConfig::load(&cli.config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let Some(dir) = cfg.paths.fixtures else {
                eprintln!("error: paths.fixtures is not configured");
                return ExitCode::from(EXIT_CONFIG);
            };
            let result = FixtureStore::open(dir).and_then(|s| Ok((s.all()?.len(), s.verify()?)));
            match result {
                Ok((n, bad)) if bad.is_empty() => {
                    println!("{n} fixtures verified");
                    ExitCode::SUCCESS
                }
                Ok((n, bad)) => {
                    for k in &bad {
                        println!("mismatched key {k}");
                    }
                    println!("{} of {n} fixtures have stale keys", bad.len());
                    ExitCode::from(EXIT_FAILURE)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match &cli.command {
        Command::Profile => cmd_profile(&cli),
        Command::Ask { query, out, max_iter } => cmd_ask(&cli, query, *out, *max_iter),
        Command::RunPlan { file, out, no_optimize } => cmd_run_plan(&cli, file, *out, *no_optimize),
        Command::Repl => cmd_repl(&cli),
        Command::Fixtures { action } => cmd_fixtures(&cli, action),
    }
}
