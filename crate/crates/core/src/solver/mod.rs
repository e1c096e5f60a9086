//! Exact lexicographic optimisation over joint plans.
//!
//! The search runs over a time-expanded joint state space. Costs are
//! additive per transition, so A* with a lexicographic cost vector returns
//! an optimum, and the same machinery drives an anytime mode that reports
//! improving plans before optimality is proven.

mod constraints;
mod search;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{plan_serde, AgentId, Instance, Location, Objective, Plan};
use crate::semantics::{check_locations, ConstraintFamily, FamilySet, ViolationAtom};

pub use constraints::HardConstraint;

/// Priority given to softened families unless configured otherwise.
pub const DEFAULT_SOFT_PRIORITY: i32 = 7;

/// A builtin family turned into a weighted preference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SoftConstraint {
    pub family: ConstraintFamily,
    pub weight: u32,
    pub priority: i32,
}

impl SoftConstraint {
    pub fn new(family: ConstraintFamily) -> Self {
        SoftConstraint {
            family,
            weight: 1,
            priority: DEFAULT_SOFT_PRIORITY,
        }
    }

    pub fn all(families: FamilySet) -> Vec<SoftConstraint> {
        families.iter().map(SoftConstraint::new).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Exact,
    Anytime { budget_secs: f64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveConfig {
    #[serde(default)]
    pub mode: SearchMode,
    /// Overrides the priority of individual objective terms.
    #[serde(default)]
    pub priorities: BTreeMap<Objective, i32>,
    /// Cost-equal optima are ranked by how few moves they add relative
    /// to this plan.
    #[serde(default, with = "plan_serde::option")]
    pub reference: Option<Plan>,
    /// Stop after this many expansions, reporting what was found.
    #[serde(default)]
    pub node_limit: Option<u64>,
}

impl SolveConfig {
    pub fn exact() -> Self {
        SolveConfig::default()
    }

    pub fn anytime(budget: Duration) -> Self {
        SolveConfig {
            mode: SearchMode::Anytime {
                budget_secs: budget.as_secs_f64(),
            },
            ..SolveConfig::default()
        }
    }

    pub fn with_reference(mut self, plan: Option<Plan>) -> Self {
        self.reference = plan;
        self
    }
}

/// Default priority of each objective term.
pub fn default_priority(term: Objective) -> i32 {
    match term {
        Objective::Makespan => 2,
        Objective::TotalPlanLength | Objective::TotalChargeCount => 1,
    }
}

/// Priorities of the instance's objective terms. Defaults apply when the
/// listed order agrees with them; otherwise earlier terms rank strictly
/// higher. Explicit overrides win in both cases.
pub fn objective_priorities(inst: &Instance, cfg: &SolveConfig) -> Vec<(Objective, i32)> {
    let terms = inst.objective();
    let defaults_fit = terms
        .windows(2)
        .all(|w| default_priority(w[0]) >= default_priority(w[1]));
    terms
        .iter()
        .enumerate()
        .map(|(i, &term)| {
            let base = if defaults_fit {
                default_priority(term)
            } else {
                (terms.len() - i) as i32
            };
            (term, cfg.priorities.get(&term).copied().unwrap_or(base))
        })
        .collect()
}

/// Cost vector keyed by priority level.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostVector(pub BTreeMap<i32, i64>);

impl CostVector {
    pub fn level(&self, priority: i32) -> i64 {
        self.0.get(&priority).copied().unwrap_or(0)
    }
}

impl Ord for CostVector {
    fn cmp(&self, other: &Self) -> Ordering {
        let mut levels: Vec<i32> = self.0.keys().chain(other.0.keys()).copied().collect();
        levels.sort_unstable_by(|a, b| b.cmp(a));
        levels.dedup();
        levels
            .into_iter()
            .map(|p| self.level(p).cmp(&other.level(p)))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

impl PartialOrd for CostVector {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CostVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .rev()
            .map(|(p, v)| format!("{v}@{p}"))
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    #[serde(with = "plan_serde")]
    pub plan: Plan,
    pub cost: CostVector,
    /// Atoms of the softened families present in the plan.
    pub violations: Vec<ViolationAtom>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Optimal(Solution),
    /// Budget ran out; the best plan seen so far, not proven optimal.
    BestSoFar(Solution),
    /// Exhaustive search found no plan.
    Infeasible,
    /// Budget ran out before any plan was found.
    Unknown,
}

impl Outcome {
    pub fn solution(&self) -> Option<&Solution> {
        match self {
            Outcome::Optimal(s) | Outcome::BestSoFar(s) => Some(s),
            Outcome::Infeasible | Outcome::Unknown => None,
        }
    }

    pub fn into_solution(self) -> Option<Solution> {
        match self {
            Outcome::Optimal(s) | Outcome::BestSoFar(s) => Some(s),
            Outcome::Infeasible | Outcome::Unknown => None,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            Outcome::Optimal(_) => "optimal",
            Outcome::BestSoFar(_) => "best_so_far",
            Outcome::Infeasible => "infeasible",
            Outcome::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stats {
    /// States expanded.
    pub nodes: u64,
    /// Improving plans found on the way to the answer.
    pub models: u64,
    pub time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveResult {
    pub outcome: Outcome,
    pub stats: Stats,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("constraint refers to unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("constraint refers to unknown vertex {0}")]
    UnknownVertex(u32),
    #[error("agent {agent}: illegal traversal at step {step}")]
    IllegalTraversal { agent: AgentId, step: u32 },
    #[error("agent {0} has no fixed traversal")]
    MissingTraversal(AgentId),
    #[error("soft priority {soft} does not exceed objective priority {objective}")]
    Priority { soft: i32, objective: i32 },
    #[error("agent {0} has more than 32 waypoints")]
    TooManyWaypoints(AgentId),
    #[error("{0}")]
    Config(String),
}

/// Solves for an optimal plan under the builtin families minus the
/// softened ones, plus the given hard constraints.
pub fn solve(
    inst: &Instance,
    hard: &[HardConstraint],
    soft: &[SoftConstraint],
    cfg: &SolveConfig,
) -> Result<SolveResult, SolveError> {
    solve_with(inst, hard, soft, cfg, &mut |_| {})
}

/// Like [`solve`], calling `on_improvement` with each strictly better plan
/// as it is found.
pub fn solve_with(
    inst: &Instance,
    hard: &[HardConstraint],
    soft: &[SoftConstraint],
    cfg: &SolveConfig,
    on_improvement: &mut dyn FnMut(&Solution),
) -> Result<SolveResult, SolveError> {
    let start = Instant::now();
    let deadline = match cfg.mode {
        SearchMode::Exact => None,
        SearchMode::Anytime { budget_secs } => {
            if !(budget_secs.is_finite() && budget_secs >= 0.0) {
                return Err(SolveError::Config(format!("invalid budget {budget_secs}")));
            }
            Some(start + Duration::from_secs_f64(budget_secs))
        }
    };
    let ctx = search::Ctx::new(inst, hard, soft, cfg)?;
    let mut emit = |plan: Plan, models: &mut u64| {
        *models += 1;
        let sol = finish_solution(inst, soft, cfg, plan);
        on_improvement(&sol);
        sol
    };
    let seed_hard = match deadline {
        Some(d) if inst.agents().len() > 1 => prioritized(inst, hard, soft, cfg, d).map(|fixed| {
            let mut h = hard.to_vec();
            h.extend(fixed);
            h
        }),
        _ => None,
    };
    let seed = seed_hard.and_then(|h| search::Ctx::new(inst, &h, soft, cfg).ok());
    let raw = search::run(&ctx, seed.as_ref(), deadline, cfg.node_limit, &mut emit);
    let stats = Stats {
        nodes: raw.nodes,
        models: raw.models,
        time_ms: start.elapsed().as_millis() as u64,
    };
    let outcome = match (raw.best, raw.complete) {
        (Some(sol), true) => Outcome::Optimal(sol),
        (Some(sol), false) => Outcome::BestSoFar(sol),
        (None, true) => Outcome::Infeasible,
        (None, false) => Outcome::Unknown,
    };
    Ok(SolveResult { outcome, stats })
}

/// Expansions allowed per agent when building a seed plan.
const SEED_NODES: u64 = 20_000;

/// Plans agents one at a time, each against the fixed traversals of the
/// ones before it. Returns those traversals as hard constraints, or None
/// if some agent finds no plan within its share of the budget.
fn prioritized(
    inst: &Instance,
    hard: &[HardConstraint],
    soft: &[SoftConstraint],
    cfg: &SolveConfig,
    deadline: Instant,
) -> Option<Vec<HardConstraint>> {
    let mut fixed: Vec<HardConstraint> = Vec::new();
    for i in 0..inst.agents().len() {
        let mut parts = inst.to_parts();
        parts.agents.truncate(i + 1);
        let sub = Instance::new(parts).ok()?;
        let id = sub.agents()[i].id;
        let mut sub_hard: Vec<HardConstraint> = hard.iter().filter(|c| sub.agent(c.agent()).is_some()).cloned().collect();
        sub_hard.extend(fixed.iter().cloned());
        let ctx = search::Ctx::new(&sub, &sub_hard, soft, cfg).ok()?;
        let mut emit = |plan: Plan, models: &mut u64| {
            *models += 1;
            finish_solution(&sub, soft, cfg, plan)
        };
        let raw = search::run(&ctx, None, Some(deadline), Some(SEED_NODES), &mut emit);
        let plan = raw.best?.plan;
        fixed.push(HardConstraint::FixTraversal {
            agent: id,
            locations: plan.agent(id)?.locations(),
        });
    }
    Some(fixed)
}

/// Solves with each agent pinned to a location sequence; only battery
/// decisions remain free. Every agent needs a traversal.
pub fn solve_fixed_traversal(
    inst: &Instance,
    traversals: &BTreeMap<AgentId, Vec<Location>>,
    soft: &[SoftConstraint],
    cfg: &SolveConfig,
) -> Result<SolveResult, SolveError> {
    let mut hard = Vec::new();
    for spec in inst.agents() {
        let seq = traversals
            .get(&spec.id)
            .ok_or(SolveError::MissingTraversal(spec.id))?;
        let verdict = check_locations(inst, spec, seq);
        if let Some(step) = verdict.first_bad {
            return Err(SolveError::IllegalTraversal {
                agent: spec.id,
                step,
            });
        }
        hard.push(HardConstraint::FixTraversal {
            agent: spec.id,
            locations: seq.clone(),
        });
    }
    if let Some(&id) = traversals.keys().find(|id| inst.agent(**id).is_none()) {
        return Err(SolveError::UnknownAgent(id));
    }
    solve(inst, &hard, soft, cfg)
}

/// Reported cost of a plan: weighted atoms of the softened families at
/// their priorities, plus the objective terms.
pub fn evaluate_cost(
    inst: &Instance,
    plan: &Plan,
    soft: &[SoftConstraint],
    cfg: &SolveConfig,
) -> (CostVector, Vec<ViolationAtom>) {
    let families: FamilySet = soft.iter().map(|s| s.family).collect();
    let atoms = crate::semantics::enumerate_violations(inst, plan, families);
    let mut cost = BTreeMap::new();
    for s in soft {
        cost.entry(s.priority).or_insert(0);
    }
    for atom in &atoms {
        if let Some(s) = soft.iter().find(|s| s.family == atom.family()) {
            *cost.entry(s.priority).or_insert(0) += i64::from(s.weight);
        }
    }
    for (term, priority) in objective_priorities(inst, cfg) {
        *cost.entry(priority).or_insert(0) +=
            i64::from(plan.objective_value(term, inst.max_battery()));
    }
    (CostVector(cost), atoms)
}

fn finish_solution(inst: &Instance, soft: &[SoftConstraint], cfg: &SolveConfig, plan: Plan) -> Solution {
    let (cost, violations) = evaluate_cost(inst, &plan, soft, cfg);
    Solution {
        plan,
        cost,
        violations,
    }
}

/// One improving plan from a running search.
#[derive(Debug, Clone)]
pub struct Incumbent {
    pub solution: Solution,
    pub elapsed: Duration,
}

/// A search running on its own thread. Iterating yields improving plans
/// as they appear; [`ImprovementStream::finish`] waits for the result.
pub struct ImprovementStream {
    rx: mpsc::Receiver<Incumbent>,
    handle: Option<thread::JoinHandle<Result<SolveResult, SolveError>>>,
}

impl ImprovementStream {
    pub fn finish(mut self) -> Result<SolveResult, SolveError> {
        let handle = self.handle.take().expect("joined once");
        handle.join().expect("solver thread panicked")
    }
}

impl Iterator for ImprovementStream {
    type Item = Incumbent;

    fn next(&mut self) -> Option<Incumbent> {
        self.rx.recv().ok()
    }
}

pub fn improvement_stream(
    inst: Instance,
    hard: Vec<HardConstraint>,
    soft: Vec<SoftConstraint>,
    cfg: SolveConfig,
) -> ImprovementStream {
    let (tx, rx) = mpsc::channel();
    let handle = thread::spawn(move || {
        let start = Instant::now();
        solve_with(&inst, &hard, &soft, &cfg, &mut |sol| {
            let _ = tx.send(Incumbent {
                solution: sol.clone(),
                elapsed: start.elapsed(),
            });
        })
    });
    ImprovementStream {
        rx,
        handle: Some(handle),
    }
}
