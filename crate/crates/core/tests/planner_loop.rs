//! The planning loop end to end over a scripted mock model.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use semflow_core::config::SystemConfig;
use semflow_core::engine::Engine;
use semflow_core::memory::COLUMN_ADVICE;
use semflow_core::plan::ErrorCategory;
use semflow_core::provider::{ChatRequest, MockProvider};
use semflow_core::table::Value;

const GOOD: &str = r#"{"version": 1, "root": {"id": 3, "op": "Sort", "attrs": {"keys": ["region"], "directions": ["asc"]}, "children": [
  {"id": 2, "op": "Aggregate", "attrs": {"keys": ["region"], "aggs": [{"func": "sum", "column": "amount", "out_name": "total"}]}, "children": [
    {"id": 1, "op": "FileScan", "attrs": {"dataset": "sales", "format": "csv"}, "children": []}]}]}}"#;

const BAD_COLUMN: &str = r#"{"version": 1, "root": {"id": 2, "op": "Aggregate", "attrs": {"keys": ["area"], "aggs": [{"func": "sum", "column": "amount", "out_name": "total"}]}, "children": [
  {"id": 1, "op": "FileScan", "attrs": {"dataset": "sales", "format": "csv"}, "children": []}]}}"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("files")).unwrap();
    std::fs::write(dir.path().join("files/sales.csv"), "region,amount\nnorth,10\nsouth,5\nnorth,2.5\neast,1\n")
        .unwrap();
    dir
}

fn engine(
    dir: &Path,
    max_iterations: u32,
    respond: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
) -> Engine {
    let cfg = SystemConfig::parse(
        &format!(
            "[[connectors]]\nname = \"files\"\nkind = \"files\"\nlocator = \"files\"\n[planner]\nmax_iterations = {max_iterations}\nn_per_kind = 1\n"
        ),
        dir,
    )
    .unwrap();
    let mock = MockProvider::new().with_fn(respond);
    let e = Engine::with_provider(cfg, Some(Arc::new(mock))).unwrap();
    e.profile().unwrap();
    e
}

fn common(req: &ChatRequest) -> Option<String> {
    let p = &req.prompt;
    if p.contains("Summarize the dataset") {
        Some("Sales amounts by region.".into())
    } else if p.contains("You are the data planning agent") {
        Some("1. Scan sales.\n2. Sum amount per region.\n3. Sort by region.".into())
    } else if p.contains("validator") {
        Some("APPROVE".into())
    } else if p.contains("recurred while answering data questions") {
        Some(COLUMN_ADVICE.into())
    } else {
        None
    }
}

#[test]
fn correct_plan_answers_in_one_iteration() {
    let dir = workspace();
    let e = engine(dir.path(), 5, |req| {
        common(req).or_else(|| req.prompt.contains("data manipulation agent").then(|| GOOD.to_string()))
    });
    let a = e.ask("Total amount per region?", None).unwrap();
    assert_eq!(a.iterations, 1);
    assert_eq!(a.datasets, vec!["sales".to_string()]);
    let rows: Vec<(String, f64)> = a
        .table
        .rows
        .iter()
        .map(|r| match (&r[0], &r[1]) {
            (Value::Text(k), v) => (k.clone(), v.as_f64().unwrap()),
            other => panic!("unexpected row {other:?}"),
        })
        .collect();
    assert_eq!(rows, vec![("east".into(), 1.0), ("north".into(), 12.5), ("south".into(), 5.0)]);
    assert!(a.records.is_empty());
}

#[test]
fn rejection_feeds_the_next_iteration() {
    let dir = workspace();
    let votes = Arc::new(AtomicUsize::new(0));
    let seen = Arc::new(Mutex::new(Vec::<String>::new()));
    let (v, s) = (votes.clone(), seen.clone());
    let e = engine(dir.path(), 5, move |req| {
        let p = &req.prompt;
        if p.contains("completeness validator") && v.fetch_add(1, Ordering::SeqCst) == 0 {
            return Some("REJECT: the totals must be sorted by region".into());
        }
        if p.contains("You are the data planning agent") {
            s.lock().unwrap().push(p.clone());
        }
        common(req).or_else(|| p.contains("data manipulation agent").then(|| GOOD.to_string()))
    });
    let a = e.ask("Total amount per region?", None).unwrap();
    // one completeness and one guideline validator: 1 of 2 is not a majority
    assert_eq!(a.iterations, 2);
    assert_eq!(a.records.len(), 1);
    assert_eq!(a.records[0].category, ErrorCategory::Semantic);
    assert!(a.records[0].message.contains("[completeness] the totals must be sorted by region"));
    let prompts = seen.lock().unwrap();
    assert!(!prompts[0].contains("sorted by region"));
    // semantic feedback is routed to the planning agent
    assert!(prompts[1].contains("sorted by region"), "feedback reaches the planner");
}

#[test]
fn exhausted_budget_returns_a_failure_report() {
    let dir = workspace();
    let e = engine(dir.path(), 3, |req| {
        common(req).or_else(|| req.prompt.contains("data manipulation agent").then(|| BAD_COLUMN.to_string()))
    });
    let report = e.ask("Total amount per area?", None).unwrap_err();
    assert_eq!(report.iterations, 3);
    assert_eq!(report.records.len(), 3);
    assert!(report.records.iter().all(|r| r.category == ErrorCategory::Grammar && r.node_id == Some(2)));
    assert!(report.transcript.contains("area"), "{}", report.transcript);
    assert!(report.last_plan.is_some());
    let doc = report.to_json();
    assert_eq!(doc["iterations"], 3);
}

#[test]
fn undecodable_output_is_reasked() {
    let dir = workspace();
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let e = engine(dir.path(), 5, move |req| {
        if req.prompt.contains("data manipulation agent") {
            let n = c.fetch_add(1, Ordering::SeqCst);
            return Some(if n == 0 { "Here is the plan: {not json".into() } else { GOOD.into() });
        }
        common(req)
    });
    let a = e.ask("Total amount per region?", None).unwrap();
    assert_eq!(a.iterations, 1);
    assert_eq!(calls.load(Ordering::SeqCst), 2);
    assert_eq!(a.records.len(), 1);
    assert_eq!(a.records[0].category, ErrorCategory::Grammar);
}

#[test]
fn recurring_errors_become_knowledge_for_later_tasks() {
    let dir = workspace();
    let seen = Arc::new(Mutex::new(Vec::<String>::new()));
    let s = seen.clone();
    let e = engine(dir.path(), 2, move |req| {
        if req.prompt.contains("data manipulation agent") {
            s.lock().unwrap().push(req.prompt.clone());
            return Some(BAD_COLUMN.into());
        }
        common(req)
    });
    assert!(e.ask("Total amount per sales area?", None).is_err());
    let long = e.memory.long_term();
    assert_eq!(long.len(), 1);
    assert_eq!(long[0].memory, COLUMN_ADVICE);
    let _ = e.ask("Total amount per sales area, again?", None);
    let prompts = seen.lock().unwrap();
    assert!(!prompts[0].contains(COLUMN_ADVICE));
    assert!(prompts[2].contains(COLUMN_ADVICE), "promoted advice reaches the next task");
}

#[test]
fn empty_question_fails_fast() {
    let dir = workspace();
    let e = engine(dir.path(), 5, common);
    let report = e.ask("   ", None).unwrap_err();
    assert_eq!(report.iterations, 0);
    assert!(report.transcript.contains("PreconditionError"));
}
