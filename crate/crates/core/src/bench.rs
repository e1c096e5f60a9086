//! Per-kind call counts, models and timings over every query a plan
//! gives rise to, each answered in a fresh session.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::explain::{ExplainError, ExplanationKind, Session, SessionConfig};
use crate::model::{Instance, Plan};
use crate::queries::{enumerate_queries, Query, QueryClass, QueryKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRun {
    pub query: Query,
    pub outcome: ExplanationKind,
    pub unknown: bool,
    pub calls: u32,
    pub models: u64,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindRow {
    pub kind: QueryKind,
    pub instances: usize,
    pub alternatives: usize,
    pub counterfactuals: usize,
    pub calls: u64,
    pub models: u64,
    pub avg_time_ms: f64,
}

/// Solver calls one query should take: one when the constrained program
/// has a plan, otherwise one relaxed solve plus a fixed-traversal solve
/// for wait and charge queries. QU always takes two.
pub fn expected_calls(kind: QueryKind, outcome: ExplanationKind) -> u32 {
    match (kind.class(), outcome) {
        (QueryClass::Unsolvable, _) => 2,
        (_, ExplanationKind::Alternative) => 1,
        (QueryClass::Wait | QueryClass::Charge, _) => 3,
        (QueryClass::Plan, _) => 2,
    }
}

/// The queries a bench over `kinds` asks: everything the plan exhibits,
/// plus one QU when requested.
pub fn bench_queries(inst: &Instance, plan: &Plan, kinds: &[QueryKind]) -> Result<Vec<Query>, ExplainError> {
    let mut qs = enumerate_queries(inst, plan, kinds)?;
    if kinds.contains(&QueryKind::QU) {
        qs.push(Query::QU);
    }
    Ok(qs)
}

pub fn run_one(inst: &Instance, plan: &Plan, q: &Query, cfg: &SessionConfig) -> Result<QueryRun, ExplainError> {
    let (mut sess, _) = Session::start(inst.clone(), Some(plan.clone()), cfg.clone())?;
    let start = Instant::now();
    let e = sess.answer(q)?;
    Ok(QueryRun {
        query: q.clone(),
        outcome: e.kind,
        unknown: e.unknown,
        calls: e.stats.calls,
        models: e.stats.models,
        time_ms: start.elapsed().as_secs_f64() * 1000.0,
    })
}

/// One row per requested kind, in kind order; kinds without queries get
/// an empty row.
pub fn aggregate(kinds: &[QueryKind], runs: &[QueryRun]) -> Vec<KindRow> {
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    kinds
        .into_iter()
        .map(|kind| {
            let mine: Vec<&QueryRun> = runs.iter().filter(|r| r.query.kind() == kind).collect();
            let total: f64 = mine.iter().map(|r| r.time_ms).sum();
            KindRow {
                kind,
                instances: mine.len(),
                alternatives: mine.iter().filter(|r| r.outcome == ExplanationKind::Alternative).count(),
                counterfactuals: mine.iter().filter(|r| r.outcome == ExplanationKind::Counterfactual).count(),
                calls: mine.iter().map(|r| u64::from(r.calls)).sum(),
                models: mine.iter().map(|r| r.models).sum(),
                avg_time_ms: if mine.is_empty() { 0.0 } else { total / mine.len() as f64 },
            }
        })
        .collect()
}

/// Sequential bench; see [`run_one`] for a single query.
pub fn run(
    inst: &Instance,
    plan: &Plan,
    kinds: &[QueryKind],
    cfg: &SessionConfig,
) -> Result<(Vec<QueryRun>, Vec<KindRow>), ExplainError> {
    let runs = bench_queries(inst, plan, kinds)?
        .iter()
        .map(|q| run_one(inst, plan, q, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = aggregate(kinds, &runs);
    Ok((runs, rows))
}
