//! Query kinds about a plan, their compilation to hard constraints, and
//! grounding of every query a plan gives rise to.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, Instance, Location, Plan, VertexId};
use crate::semantics::{validate, ConstraintFamily, FamilySet};
use crate::solver::HardConstraint;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Query {
    /// Why does the agent wait at `x`?
    QW1 { agent: AgentId, x: VertexId },
    /// Why does it wait at `x` at time `s`?
    QW2 { agent: AgentId, x: VertexId, s: u32 },
    /// Why does it wait at `x` from `s` for `n` steps?
    QW3 { agent: AgentId, x: VertexId, s: u32, n: u32 },
    /// Why does it wait at `x` for `n` steps within the window from `s`?
    QW4 { agent: AgentId, x: VertexId, s: u32, n: u32 },
    QC1 { agent: AgentId, x: VertexId },
    QC2 { agent: AgentId, s: u32 },
    QC3 { agent: AgentId, x: VertexId, s: u32 },
    /// Why does the agent not charge fewer than `m` times?
    QC4 { agent: AgentId, m: u32 },
    /// Why does it not follow a plan shorter than `l`?
    QP1 { agent: AgentId, l: u32 },
    QP2 { agent: AgentId, x: VertexId },
    QP3 { agent: AgentId, x: VertexId, s: u32 },
    QP4 { agent: AgentId, x: VertexId, y: VertexId },
    QP5 { agent: AgentId, x: VertexId, y: VertexId, s: u32 },
    /// Why is there no solution?
    QU,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryKind {
    QW1,
    QW2,
    QW3,
    QW4,
    QC1,
    QC2,
    QC3,
    QC4,
    QP1,
    QP2,
    QP3,
    QP4,
    QP5,
    QU,
}

/// Query group; decides relevancy and how an unsatisfiable query is explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryClass {
    Wait,
    Charge,
    Plan,
    Unsolvable,
}

impl QueryKind {
    pub const ALL: [QueryKind; 14] = [
        QueryKind::QW1,
        QueryKind::QW2,
        QueryKind::QW3,
        QueryKind::QW4,
        QueryKind::QC1,
        QueryKind::QC2,
        QueryKind::QC3,
        QueryKind::QC4,
        QueryKind::QP1,
        QueryKind::QP2,
        QueryKind::QP3,
        QueryKind::QP4,
        QueryKind::QP5,
        QueryKind::QU,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryKind::QW1 => "QW1",
            QueryKind::QW2 => "QW2",
            QueryKind::QW3 => "QW3",
            QueryKind::QW4 => "QW4",
            QueryKind::QC1 => "QC1",
            QueryKind::QC2 => "QC2",
            QueryKind::QC3 => "QC3",
            QueryKind::QC4 => "QC4",
            QueryKind::QP1 => "QP1",
            QueryKind::QP2 => "QP2",
            QueryKind::QP3 => "QP3",
            QueryKind::QP4 => "QP4",
            QueryKind::QP5 => "QP5",
            QueryKind::QU => "QU",
        }
    }

    pub fn class(self) -> QueryClass {
        use QueryKind::*;
        match self {
            QW1 | QW2 | QW3 | QW4 => QueryClass::Wait,
            QC1 | QC2 | QC3 | QC4 => QueryClass::Charge,
            QP1 | QP2 | QP3 | QP4 | QP5 => QueryClass::Plan,
            QU => QueryClass::Unsolvable,
        }
    }

    /// Families that may be softened when explaining this kind.
    pub fn relevant(self) -> FamilySet {
        use ConstraintFamily::*;
        match self.class() {
            QueryClass::Wait => [Collision, Obstacle, Waypoint].into_iter().collect(),
            QueryClass::Charge => [Battery, Goal, Obstacle, Waypoint].into_iter().collect(),
            QueryClass::Plan | QueryClass::Unsolvable => FamilySet::ALL,
        }
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for QueryKind {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, QueryError> {
        QueryKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| QueryError::Parse(format!("unknown query kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("invalid query: {0}")]
    Parse(String),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
    #[error("{0}")]
    OutOfRange(String),
    #[error("plan is not a solution: {0}")]
    NotASolution(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledQuery {
    pub kind: QueryKind,
    /// Absent only for QU.
    pub hard: Option<HardConstraint>,
    pub relevant: FamilySet,
}

impl Query {
    pub fn kind(&self) -> QueryKind {
        match self {
            Query::QW1 { .. } => QueryKind::QW1,
            Query::QW2 { .. } => QueryKind::QW2,
            Query::QW3 { .. } => QueryKind::QW3,
            Query::QW4 { .. } => QueryKind::QW4,
            Query::QC1 { .. } => QueryKind::QC1,
            Query::QC2 { .. } => QueryKind::QC2,
            Query::QC3 { .. } => QueryKind::QC3,
            Query::QC4 { .. } => QueryKind::QC4,
            Query::QP1 { .. } => QueryKind::QP1,
            Query::QP2 { .. } => QueryKind::QP2,
            Query::QP3 { .. } => QueryKind::QP3,
            Query::QP4 { .. } => QueryKind::QP4,
            Query::QP5 { .. } => QueryKind::QP5,
            Query::QU => QueryKind::QU,
        }
    }

    pub fn agent(&self) -> Option<AgentId> {
        use Query::*;
        match self {
            QW1 { agent, .. }
            | QW2 { agent, .. }
            | QW3 { agent, .. }
            | QW4 { agent, .. }
            | QC1 { agent, .. }
            | QC2 { agent, .. }
            | QC3 { agent, .. }
            | QC4 { agent, .. }
            | QP1 { agent, .. }
            | QP2 { agent, .. }
            | QP3 { agent, .. }
            | QP4 { agent, .. }
            | QP5 { agent, .. } => Some(*agent),
            QU => None,
        }
    }

    /// The question in words.
    pub fn question(&self) -> String {
        use Query::*;
        match self {
            QW1 { agent, x } => format!("Why does Robot {agent} wait at Cell {x}?"),
            QW2 { agent, x, s } => format!("Why does Robot {agent} wait at Cell {x} at time step {s}?"),
            QW3 { agent, x, s, n } => format!(
                "Why does Robot {agent} wait at Cell {x} from time step {s} to {}?",
                s + n
            ),
            QW4 { agent, x, s, n } => format!(
                "Why does Robot {agent} wait at Cell {x} for {n} steps between time steps {s} and {}?",
                s + n
            ),
            QC1 { agent, x } => format!("Why does Robot {agent} charge at Cell {x}?"),
            QC2 { agent, s } => format!("Why does Robot {agent} charge at time step {s}?"),
            QC3 { agent, x, s } => {
                format!("Why does Robot {agent} charge at Cell {x} at time step {s}?")
            }
            QC4 { agent, m } => format!("Why does not Robot {agent} charge less than {m} times?"),
            QP1 { agent, l } => format!(
                "Why does not Robot {agent} follow a shorter plan whose length is smaller than {l}?"
            ),
            QP2 { agent, x } => format!("Why does Robot {agent} visit Cell {x}?"),
            QP3 { agent, x, s } => format!("Why is Robot {agent} at Cell {x} at time step {s}?"),
            QP4 { agent, x, y } => format!("Why does Robot {agent} move from Cell {x} to Cell {y}?"),
            QP5 { agent, x, y, s } => format!(
                "Why does Robot {agent} move from Cell {x} to Cell {y} at time step {s}?"
            ),
            QU => "Why does the instance not have a solution?".to_string(),
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Query::*;
        let args: Vec<u32> = match *self {
            QW1 { agent, x } | QC1 { agent, x } | QP2 { agent, x } => vec![agent, x],
            QW2 { agent, x, s } | QC3 { agent, x, s } | QP3 { agent, x, s } => vec![agent, x, s],
            QW3 { agent, x, s, n } | QW4 { agent, x, s, n } => vec![agent, x, s, n],
            QC2 { agent, s } => vec![agent, s],
            QC4 { agent, m } => vec![agent, m],
            QP1 { agent, l } => vec![agent, l],
            QP4 { agent, x, y } => vec![agent, x, y],
            QP5 { agent, x, y, s } => vec![agent, x, y, s],
            QU => return f.write_str("QU"),
        };
        let args: Vec<String> = args.iter().map(ToString::to_string).collect();
        write!(f, "{}({})", self.kind(), args.join(","))
    }
}

/// Reads a query from its JSON form or from the shorthand `QW1(2,8)`
/// that `Display` produces.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let text = text.trim();
    if text.starts_with('{') {
        return serde_json::from_str(text).map_err(|e| QueryError::Parse(e.to_string()));
    }
    let bad = || QueryError::Parse(format!("expected JSON or shorthand like QW1(2,8), got `{text}`"));
    let (kind, rest) = text.split_once('(').unwrap_or((text, ")"));
    let args = rest.strip_suffix(')').ok_or_else(bad)?;
    let args: Vec<u32> = if args.trim().is_empty() {
        Vec::new()
    } else {
        args.split(',').map(|a| a.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    let fields: &[&str] = match kind.trim() {
        "QW1" | "QC1" | "QP2" => &["agent", "x"],
        "QW2" | "QC3" | "QP3" => &["agent", "x", "s"],
        "QW3" | "QW4" => &["agent", "x", "s", "n"],
        "QC2" => &["agent", "s"],
        "QC4" => &["agent", "m"],
        "QP1" => &["agent", "l"],
        "QP4" => &["agent", "x", "y"],
        "QP5" => &["agent", "x", "y", "s"],
        "QU" => &[],
        _ => return Err(bad()),
    };
    if fields.len() != args.len() {
        return Err(QueryError::Parse(format!("{} takes {} arguments, got {}", kind.trim(), fields.len(), args.len())));
    }
    let mut obj = serde_json::Map::new();
    obj.insert("kind".into(), kind.trim().into());
    for (f, a) in fields.iter().zip(args) {
        obj.insert((*f).into(), a.into());
    }
    query_from_value(obj.into())
}

pub fn query_from_value(value: serde_json::Value) -> Result<Query, QueryError> {
    serde_json::from_value(value).map_err(|e| QueryError::Parse(e.to_string()))
}

/// Checks the query's parameters against the instance.
pub fn validate_query(q: &Query, inst: &Instance) -> Result<(), QueryError> {
    use Query::*;
    if let Some(a) = q.agent() {
        if inst.agent(a).is_none() {
            return Err(QueryError::UnknownAgent(a));
        }
    }
    let vertex = |v: VertexId| {
        if inst.vertices().contains(&v) {
            Ok(())
        } else {
            Err(QueryError::UnknownVertex(v))
        }
    };
    let tau = inst.tau();
    // Steps that look one step ahead need s < tau; position queries may
    // point at the horizon itself.
    let step = |s: u32| {
        if s < tau {
            Ok(())
        } else {
            Err(QueryError::OutOfRange(format!("time step {s} must be below {tau}")))
        }
    };
    let positive = |name: &str, v: u32| {
        if v >= 1 {
            Ok(())
        } else {
            Err(QueryError::OutOfRange(format!("{name} must be at least 1")))
        }
    };
    match *q {
        QW1 { x, .. } | QC1 { x, .. } | QP2 { x, .. } => vertex(x),
        QW2 { x, s, .. } | QC3 { x, s, .. } => vertex(x).and(step(s)),
        QW3 { x, s, n, .. } | QW4 { x, s, n, .. } => vertex(x).and(step(s)).and(positive("n", n)),
        QC2 { s, .. } => step(s),
        QC4 { m, .. } => positive("m", m),
        QP1 { .. } => Ok(()),
        QP3 { x, s, .. } => {
            vertex(x)?;
            if s > tau {
                return Err(QueryError::OutOfRange(format!("time step {s} exceeds {tau}")));
            }
            Ok(())
        }
        QP4 { x, y, .. } => vertex(x).and(vertex(y)),
        QP5 { x, y, s, .. } => vertex(x).and(vertex(y)).and(step(s)),
        QU => Ok(()),
    }
}

pub fn compile(q: &Query, inst: &Instance) -> Result<CompiledQuery, QueryError> {
    validate_query(q, inst)?;
    use HardConstraint as H;
    use Query::*;
    let hard = match *q {
        QW1 { agent, x } => Some(H::ForbidWait { agent, x }),
        QW2 { agent, x, s } => Some(H::ForbidWaitAt { agent, x, s }),
        QW3 { agent, x, s, n } => Some(H::ForbidWaitRun { agent, x, s, n }),
        QW4 { agent, x, s, n } => Some(H::CapWaitCount { agent, x, s, n }),
        QC1 { agent, x } => Some(H::ForbidChargeAt { agent, x }),
        QC2 { agent, s } => Some(H::ForbidChargeTime { agent, s }),
        QC3 { agent, x, s } => Some(H::ForbidChargeAtTime { agent, x, s }),
        QC4 { agent, m } => Some(H::CapChargeCount { agent, m }),
        QP1 { agent, l } => Some(H::CapPlanLength { agent, l }),
        QP2 { agent, x } => Some(H::ForbidVisit { agent, x }),
        QP3 { agent, x, s } => Some(H::ForbidVisitAt { agent, x, s }),
        QP4 { agent, x, y } => Some(H::ForbidMove { agent, x, y }),
        QP5 { agent, x, y, s } => Some(H::ForbidMoveAt { agent, x, y, s }),
        QU => None,
    };
    Ok(CompiledQuery {
        kind: q.kind(),
        hard,
        relevant: q.kind().relevant(),
    })
}

/// A maximal run of waits: the agent stays at `x` over `s ..= s + n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaitRun {
    pub x: VertexId,
    pub s: u32,
    pub n: u32,
}

pub fn wait_runs(seq: &[Location]) -> Vec<WaitRun> {
    let mut runs: Vec<WaitRun> = Vec::new();
    for t in 0..seq.len().saturating_sub(1) {
        let (Location::Vertex(x), next) = (seq[t], seq[t + 1]) else {
            continue;
        };
        if next != Location::Vertex(x) {
            continue;
        }
        match runs.last_mut() {
            Some(r) if r.x == x && r.s + r.n == t as u32 => r.n += 1,
            _ => runs.push(WaitRun {
                x,
                s: t as u32,
                n: 1,
            }),
        }
    }
    runs
}

/// Time steps `s` at which the agent refills, with the cell it refills at.
pub fn recharge_events(inst: &Instance, plan: &Plan, agent: AgentId) -> Vec<(u32, VertexId)> {
    let Some(p) = plan.agent(agent) else {
        return Vec::new();
    };
    let b = inst.max_battery();
    p.steps
        .windows(2)
        .enumerate()
        .filter_map(|(t, w)| match w[0].loc {
            Location::Vertex(x) if inst.is_charging(x) && w[1].battery == b => Some((t as u32, x)),
            _ => None,
        })
        .collect()
}

/// Directed moves `(s, x, y)`: a normal step or a slow crossing starting at `s`.
pub fn moves(seq: &[Location]) -> Vec<(u32, VertexId, VertexId)> {
    let mut out = Vec::new();
    for t in 0..seq.len() {
        let Location::Vertex(x) = seq[t] else {
            continue;
        };
        let next = match seq.get(t + 1) {
            Some(Location::InTransit) => seq.get(t + 2),
            other => other,
        };
        if let Some(Location::Vertex(y)) = next {
            if *y != x {
                out.push((t as u32, x, *y));
            }
        }
    }
    out
}

/// Every query of the given kinds that the plan exhibits, in kind order,
/// then agent order, then time order; duplicates removed.
pub fn enumerate_queries(
    inst: &Instance,
    plan: &Plan,
    kinds: &[QueryKind],
) -> Result<Vec<Query>, QueryError> {
    let report = validate(inst, plan);
    if !report.is_solution() {
        let reason = report
            .violations
            .first()
            .map(ToString::to_string)
            .unwrap_or_else(|| "illegal traversal or battery".to_string());
        return Err(QueryError::NotASolution(reason));
    }
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let b = inst.max_battery();
    let mut out = Vec::new();
    for kind in kinds {
        let mut batch = Vec::new();
        for (&agent, p) in &plan.agents {
            let seq = p.locations();
            let runs = wait_runs(&seq);
            let charges = recharge_events(inst, plan, agent);
            use Query::*;
            match kind {
                QueryKind::QW1 => batch.extend(runs.iter().map(|r| QW1 { agent, x: r.x })),
                QueryKind::QW2 => batch.extend(runs.iter().map(|r| QW2 { agent, x: r.x, s: r.s })),
                QueryKind::QW3 => batch.extend(runs.iter().map(|r| QW3 {
                    agent,
                    x: r.x,
                    s: r.s,
                    n: r.n,
                })),
                QueryKind::QW4 => batch.extend(runs.iter().map(|r| QW4 {
                    agent,
                    x: r.x,
                    s: r.s,
                    n: r.n,
                })),
                QueryKind::QC1 => batch.extend(charges.iter().map(|&(_, x)| QC1 { agent, x })),
                QueryKind::QC2 => batch.extend(charges.iter().map(|&(s, _)| QC2 { agent, s })),
                QueryKind::QC3 => batch.extend(charges.iter().map(|&(s, x)| QC3 { agent, x, s })),
                QueryKind::QC4 => {
                    let m = plan.full_battery_count(agent, b);
                    if m >= 1 {
                        batch.push(QC4 { agent, m });
                    }
                }
                QueryKind::QP1 => batch.push(QP1 {
                    agent,
                    l: p.length(),
                }),
                QueryKind::QP2 => {
                    batch.extend(seq.iter().filter_map(|l| l.vertex()).map(|x| QP2 { agent, x }))
                }
                QueryKind::QP3 => batch.extend(seq.iter().enumerate().filter_map(|(s, l)| {
                    l.vertex().map(|x| QP3 {
                        agent,
                        x,
                        s: s as u32,
                    })
                })),
                QueryKind::QP4 => batch.extend(moves(&seq).into_iter().map(|(_, x, y)| QP4 { agent, x, y })),
                QueryKind::QP5 => {
                    batch.extend(moves(&seq).into_iter().map(|(s, x, y)| QP5 { agent, x, y, s }))
                }
                QueryKind::QU => {}
            }
        }
        let mut seen = std::collections::HashSet::new();
        batch.retain(|q| seen.insert(q.clone()));
        out.extend(batch);
    }
    Ok(out)
}
