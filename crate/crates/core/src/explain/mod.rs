//! Answering queries about a plan under discussion.
//!
//! A query first becomes a hard constraint on top of the session's
//! accumulated ones. If a plan still exists it is returned as an
//! alternative. Otherwise the relevant constraint families are relaxed
//! into weighted preferences, and the violations of the best relaxed plan
//! (and, for wait and charge queries, of the current plan with the queried
//! behaviour removed) explain why the behaviour is needed.

pub mod render;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    check_plan_structure, instance_serde, plan_serde, AgentId, Instance, Location, ModelError, Plan,
};
use crate::queries::{compile, wait_runs, Query, QueryClass, QueryError};
use crate::semantics::{validate, ConstraintFamily, FamilySet, ViolationAtom};
use crate::solver::{
    evaluate_cost, solve, CostVector, HardConstraint, Outcome, SoftConstraint, SolveConfig,
    SolveError, SolveResult,
};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("premise not observed: {0}")]
    PremiseNotObserved(String),
    #[error("the session has no plan; only QU can be asked")]
    NoPlan,
    #[error("history is empty")]
    EmptyHistory,
    #[error("plan is not a solution: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationKind {
    Alternative,
    Counterfactual,
    Infeasibility,
}

/// How an alternative plan compares with the current one on the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Shorter,
    Equal,
    Longer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub remove_obstacles: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExplainStats {
    /// Solver invocations.
    pub calls: u32,
    /// Improving plans found across all invocations.
    pub models: u64,
    pub nodes: u64,
    pub time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub kind: ExplanationKind,
    pub query: Query,
    pub text: String,
    #[serde(default, with = "plan_serde::option", skip_serializing_if = "Option::is_none")]
    pub alternative_plan: Option<Plan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative_cost: Option<CostVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations_current: Option<Vec<ViolationAtom>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations_any: Option<Vec<ViolationAtom>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<Suggestion>,
    /// Accumulated constraints that block the query when no relevant
    /// family has to be violated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocking: Vec<HardConstraint>,
    /// Set when a search ran out of budget before reaching a verdict.
    #[serde(default)]
    pub unknown: bool,
    pub stats: ExplainStats,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default)]
    pub solve: SolveConfig,
    /// Also keep the hard constraint of queries answered by a counterfactual.
    #[serde(default)]
    pub accumulate_unsat: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub query: Query,
    pub explanation: Explanation,
    #[serde(default)]
    pub added: Option<HardConstraint>,
    #[serde(default, with = "plan_serde::option")]
    pub plan_before: Option<Plan>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    #[serde(with = "instance_serde")]
    pub instance: Instance,
    /// The plan under discussion; absent when the instance has no solution.
    #[serde(default, with = "plan_serde::option")]
    pub current_plan: Option<Plan>,
    #[serde(default)]
    pub accumulated: Vec<HardConstraint>,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
    #[serde(default)]
    pub config: SessionConfig,
}

impl Session {
    /// Starts a session on `plan`, or on a freshly solved plan when none
    /// is given. The session has no plan if the instance has no solution.
    pub fn start(
        instance: Instance,
        plan: Option<Plan>,
        config: SessionConfig,
    ) -> Result<(Session, Option<SolveResult>), ExplainError> {
        let (current_plan, solved) = match plan {
            Some(p) => {
                check_plan_structure(&p, &instance)?;
                let report = validate(&instance, &p);
                if !report.is_solution() {
                    let why = report
                        .violations
                        .first()
                        .map_or("illegal traversal or battery".to_string(), ToString::to_string);
                    return Err(ExplainError::InvalidPlan(why));
                }
                (Some(p), None)
            }
            None => {
                let res = solve(&instance, &[], &[], &config.solve)?;
                (res.outcome.solution().map(|s| s.plan.clone()), Some(res))
            }
        };
        Ok((
            Session {
                instance,
                current_plan,
                accumulated: Vec::new(),
                history: Vec::new(),
                config,
            },
            solved,
        ))
    }

    pub fn is_solvable(&self) -> bool {
        self.current_plan.is_some()
    }

    pub fn answer(&mut self, q: &Query) -> Result<Explanation, ExplainError> {
        let compiled = compile(q, &self.instance)?;
        let Some(hard) = compiled.hard else {
            let e = self.answer_unsolvable(q)?;
            self.record(q, e.clone(), None, self.current_plan.clone());
            return Ok(e);
        };
        let current = self.current_plan.clone().ok_or(ExplainError::NoPlan)?;
        if hard.holds(&self.instance, &current) {
            return Err(ExplainError::PremiseNotObserved(format!(
                "the current plan does not exhibit {q}"
            )));
        }
        let mut calls = Calls::new();
        let cfg = self.config.solve.clone().with_reference(Some(current.clone()));
        let mut constraints = self.accumulated.clone();
        constraints.push(hard.clone());

        let res = calls.run(&self.instance, &constraints, &[], &cfg)?;
        match res.outcome {
            Outcome::Optimal(sol) | Outcome::BestSoFar(sol) => {
                let comparison = self.compare(&sol.plan, &current);
                let e = Explanation {
                    kind: ExplanationKind::Alternative,
                    query: q.clone(),
                    text: render::alternative(q, comparison),
                    alternative_plan: Some(sol.plan.clone()),
                    alternative_cost: Some(sol.cost),
                    comparison: Some(comparison),
                    violations_current: None,
                    violations_any: None,
                    suggestion: None,
                    blocking: Vec::new(),
                    unknown: false,
                    stats: calls.stats(),
                };
                self.accumulated.push(hard.clone());
                self.current_plan = Some(sol.plan);
                self.record(q, e.clone(), Some(hard), Some(current));
                return Ok(e);
            }
            Outcome::Unknown => {
                let e = unknown(q, &calls);
                self.record(q, e.clone(), None, Some(current));
                return Ok(e);
            }
            Outcome::Infeasible => {}
        }

        let soft = SoftConstraint::all(compiled.relevant);
        let mut violations_current = None;
        if matches!(q.kind().class(), QueryClass::Wait | QueryClass::Charge) {
            let revised = revise(&current, q)?;
            let mut fixed = constraints.clone();
            fixed.extend(revised.into_iter().map(|(agent, locations)| HardConstraint::FixTraversal {
                agent,
                locations,
            }));
            let res = calls.run(&self.instance, &fixed, &soft, &cfg)?;
            violations_current = res.outcome.into_solution().map(|s| s.violations);
        }
        let res = calls.run(&self.instance, &constraints, &soft, &cfg)?;
        let budget_out = res.outcome == Outcome::Unknown;
        let violations_any = res.outcome.into_solution().map(|s| s.violations);

        let cur = violations_current.clone().unwrap_or_default();
        let any = violations_any.clone().unwrap_or_default();
        let mut e = Explanation {
            kind: ExplanationKind::Counterfactual,
            query: q.clone(),
            text: String::new(),
            alternative_plan: None,
            alternative_cost: None,
            comparison: None,
            violations_current,
            violations_any,
            suggestion: None,
            blocking: Vec::new(),
            unknown: budget_out,
            stats: calls.stats(),
        };
        if budget_out && cur.is_empty() {
            e = Explanation { stats: calls.stats(), ..unknown(q, &calls) };
        } else if !cur.is_empty() || !any.is_empty() {
            e.text = render::counterfactual(q, &cur, &any);
        } else if e.violations_any.is_some() {
            e.kind = ExplanationKind::Infeasibility;
            e.blocking = self.accumulated.clone();
            let listed: Vec<String> = e.blocking.iter().map(ToString::to_string).collect();
            e.text = format!(
                "{}; no relevant constraint is violated otherwise, the query is blocked by earlier answers: {}",
                render::head(q),
                listed.join(" ")
            );
        } else {
            e.kind = ExplanationKind::Infeasibility;
            e.text = format!(
                "{}; no plan avoids it even when the relevant constraints are relaxed.",
                render::head(q)
            );
        }
        let added = if self.config.accumulate_unsat {
            self.accumulated.push(hard.clone());
            Some(hard)
        } else {
            None
        };
        self.record(q, e.clone(), added, Some(current));
        Ok(e)
    }

    fn answer_unsolvable(&self, q: &Query) -> Result<Explanation, ExplainError> {
        let mut calls = Calls::new();
        let cfg = self.config.solve.clone().with_reference(self.current_plan.clone());
        let relevant = q.kind().relevant();
        let w1 = SoftConstraint::all(relevant.without(ConstraintFamily::Obstacle));
        let w2 = SoftConstraint::all(FamilySet::EMPTY.with(ConstraintFamily::Obstacle));
        let r1 = calls.run(&self.instance, &self.accumulated, &w1, &cfg)?;
        let r2 = calls.run(&self.instance, &self.accumulated, &w2, &cfg)?;
        let unknown = r1.outcome == Outcome::Unknown || r2.outcome == Outcome::Unknown;
        let v1 = r1.outcome.into_solution().map(|s| s.violations);
        let v2 = r2.outcome.into_solution().map(|s| s.violations);
        let mut sentences = Vec::new();
        match &v1 {
            Some(atoms) if !atoms.is_empty() => sentences.push(render::unsolvable(atoms)),
            Some(_) => sentences.push("There is a solution.".to_string()),
            None if unknown => {}
            None => sentences.push(
                "There is no solution even if robots may collide, skip waypoints, miss goals or run out of battery."
                    .to_string(),
            ),
        }
        let mut suggestion = None;
        match &v2 {
            Some(atoms) if !atoms.is_empty() => {
                let mut obstacles: Vec<u32> = atoms
                    .iter()
                    .filter_map(|a| match a {
                        ViolationAtom::Obstacle { x, .. } => Some(*x),
                        _ => None,
                    })
                    .collect();
                obstacles.sort_unstable();
                obstacles.dedup();
                sentences.push(render::obstacle_suggestion(atoms, &obstacles));
                suggestion = Some(Suggestion {
                    remove_obstacles: obstacles,
                });
            }
            Some(_) => {}
            None if unknown => {}
            None => sentences.push("Removing obstacles alone does not make the instance solvable.".to_string()),
        }
        if unknown && sentences.is_empty() {
            sentences.push("The search ran out of time before reaching a verdict.".to_string());
        }
        Ok(Explanation {
            kind: ExplanationKind::Infeasibility,
            query: q.clone(),
            text: sentences.join(" "),
            alternative_plan: None,
            alternative_cost: None,
            comparison: None,
            violations_current: v1,
            violations_any: v2,
            suggestion,
            blocking: Vec::new(),
            unknown,
            stats: calls.stats(),
        })
    }

    fn compare(&self, alt: &Plan, current: &Plan) -> Comparison {
        let (a, _) = evaluate_cost(&self.instance, alt, &[], &self.config.solve);
        let (c, _) = evaluate_cost(&self.instance, current, &[], &self.config.solve);
        match a.cmp(&c) {
            std::cmp::Ordering::Less => Comparison::Shorter,
            std::cmp::Ordering::Equal => Comparison::Equal,
            std::cmp::Ordering::Greater => Comparison::Longer,
        }
    }

    fn record(&mut self, q: &Query, e: Explanation, added: Option<HardConstraint>, plan_before: Option<Plan>) {
        self.history.push(HistoryEntry {
            query: q.clone(),
            explanation: e,
            added,
            plan_before,
        });
    }

    /// Undoes the most recent answer.
    pub fn pop(&mut self) -> Result<HistoryEntry, ExplainError> {
        let entry = self.history.pop().ok_or(ExplainError::EmptyHistory)?;
        if entry.added.is_some() {
            self.accumulated.pop();
        }
        self.current_plan = entry.plan_before.clone();
        Ok(entry)
    }

    /// Forgets all answers; the current plan stays.
    pub fn reset(&mut self) {
        self.accumulated.clear();
        self.history.clear();
    }
}

fn unknown(q: &Query, calls: &Calls) -> Explanation {
    Explanation {
        kind: ExplanationKind::Infeasibility,
        query: q.clone(),
        text: format!("No verdict for {q}: the search ran out of time."),
        alternative_plan: None,
        alternative_cost: None,
        comparison: None,
        violations_current: None,
        violations_any: None,
        suggestion: None,
        blocking: Vec::new(),
        unknown: true,
        stats: calls.stats(),
    }
}

struct Calls {
    start: Instant,
    stats: ExplainStats,
}

impl Calls {
    fn new() -> Self {
        Calls {
            start: Instant::now(),
            stats: ExplainStats::default(),
        }
    }

    fn run(
        &mut self,
        inst: &Instance,
        hard: &[HardConstraint],
        soft: &[SoftConstraint],
        cfg: &SolveConfig,
    ) -> Result<SolveResult, SolveError> {
        let res = solve(inst, hard, soft, cfg)?;
        self.stats.calls += 1;
        self.stats.models += res.stats.models;
        self.stats.nodes += res.stats.nodes;
        Ok(res)
    }

    fn stats(&self) -> ExplainStats {
        ExplainStats {
            time_ms: self.start.elapsed().as_millis() as u64,
            ..self.stats
        }
    }
}

/// Location sequences of the current plan with the queried behaviour
/// removed: the queried waits are cut out for wait queries, and all
/// traversals are kept verbatim for charge queries.
pub fn revise(plan: &Plan, q: &Query) -> Result<BTreeMap<AgentId, Vec<Location>>, ExplainError> {
    let mut out: BTreeMap<AgentId, Vec<Location>> =
        plan.agents.iter().map(|(&id, p)| (id, p.locations())).collect();
    let absent = || ExplainError::PremiseNotObserved(format!("the current plan does not exhibit {q}"));
    let (agent, drop): (AgentId, Vec<usize>) = match *q {
        Query::QW1 { agent, x } => {
            let seq = out.get(&agent).ok_or_else(absent)?;
            (agent, waits(seq, x, 0, usize::MAX))
        }
        Query::QW2 { agent, x, s } => {
            let seq = out.get(&agent).ok_or_else(absent)?;
            (agent, waits(seq, x, s as usize, s as usize + 1))
        }
        Query::QW3 { agent, x, s, n } => {
            let seq = out.get(&agent).ok_or_else(absent)?;
            let run = wait_runs(seq)
                .into_iter()
                .any(|r| r.x == x && r.s <= s && s + n <= r.s + r.n);
            if !run {
                return Err(absent());
            }
            (agent, waits(seq, x, s as usize, (s + n) as usize))
        }
        Query::QW4 { agent, x, s, n } => {
            let seq = out.get(&agent).ok_or_else(absent)?;
            let found = waits(seq, x, s as usize, (s + n) as usize);
            let keep = (n as usize).saturating_sub(1).min(found.len());
            (agent, found[keep..].to_vec())
        }
        Query::QC1 { .. } | Query::QC2 { .. } | Query::QC3 { .. } | Query::QC4 { .. } => return Ok(out),
        _ => return Err(absent()),
    };
    if drop.is_empty() {
        return Err(absent());
    }
    let seq = out.get_mut(&agent).expect("agent present");
    let kept: Vec<Location> = seq
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, l)| *l)
        .collect();
    *seq = kept;
    Ok(out)
}

/// Indices `t + 1` of waits at `x` starting at `t` in `from .. to`.
fn waits(seq: &[Location], x: u32, from: usize, to: usize) -> Vec<usize> {
    (from..to.min(seq.len().saturating_sub(1)))
        .filter(|&t| seq[t] == Location::Vertex(x) && seq[t + 1] == Location::Vertex(x))
        .map(|t| t + 1)
        .collect()
}
