use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AgentId, Instance, Location, Plan, VertexId};

/// A hard restriction on candidate plans, beyond the builtin constraint
/// families. Every variant names the agent it restricts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HardConstraint {
    /// No wait at `x`, at any time.
    ForbidWait { agent: AgentId, x: VertexId },
    /// No wait at `x` from `s` to `s + 1`.
    ForbidWaitAt { agent: AgentId, x: VertexId, s: u32 },
    /// Not at `x` throughout `s ..= s + n`.
    ForbidWaitRun { agent: AgentId, x: VertexId, s: u32, n: u32 },
    /// Fewer than `n` waits at `x` starting within `s .. s + n`.
    CapWaitCount { agent: AgentId, x: VertexId, s: u32, n: u32 },
    ForbidChargeAt { agent: AgentId, x: VertexId },
    /// No refill on the step leaving time `s`, wherever the agent is.
    ForbidChargeTime { agent: AgentId, s: u32 },
    ForbidChargeAtTime { agent: AgentId, x: VertexId, s: u32 },
    /// Fewer than `m` time steps `t > 0` at the top battery level.
    CapChargeCount { agent: AgentId, m: u32 },
    /// Plan length strictly below `l`.
    CapPlanLength { agent: AgentId, l: u32 },
    ForbidVisit { agent: AgentId, x: VertexId },
    ForbidVisitAt { agent: AgentId, x: VertexId, s: u32 },
    /// No move from `x` to `y` over either edge mode, at any time.
    ForbidMove { agent: AgentId, x: VertexId, y: VertexId },
    ForbidMoveAt { agent: AgentId, x: VertexId, y: VertexId, s: u32 },
    /// The agent follows exactly this location sequence.
    FixTraversal { agent: AgentId, locations: Vec<Location> },
}

impl HardConstraint {
    pub fn agent(&self) -> AgentId {
        use HardConstraint::*;
        match self {
            ForbidWait { agent, .. }
            | ForbidWaitAt { agent, .. }
            | ForbidWaitRun { agent, .. }
            | CapWaitCount { agent, .. }
            | ForbidChargeAt { agent, .. }
            | ForbidChargeTime { agent, .. }
            | ForbidChargeAtTime { agent, .. }
            | CapChargeCount { agent, .. }
            | CapPlanLength { agent, .. }
            | ForbidVisit { agent, .. }
            | ForbidVisitAt { agent, .. }
            | ForbidMove { agent, .. }
            | ForbidMoveAt { agent, .. }
            | FixTraversal { agent, .. } => *agent,
        }
    }

    /// Vertices the constraint mentions.
    pub fn vertices(&self) -> Vec<VertexId> {
        use HardConstraint::*;
        match self {
            ForbidWait { x, .. }
            | ForbidWaitAt { x, .. }
            | ForbidWaitRun { x, .. }
            | CapWaitCount { x, .. }
            | ForbidChargeAt { x, .. }
            | ForbidChargeAtTime { x, .. }
            | ForbidVisit { x, .. }
            | ForbidVisitAt { x, .. } => vec![*x],
            ForbidMove { x, y, .. } | ForbidMoveAt { x, y, .. } => vec![*x, *y],
            FixTraversal { locations, .. } => locations.iter().filter_map(|l| l.vertex()).collect(),
            ForbidChargeTime { .. } | CapChargeCount { .. } | CapPlanLength { .. } => vec![],
        }
    }

    /// Direct evaluation on a complete plan. A plan without the agent
    /// satisfies every constraint about it vacuously.
    pub fn holds(&self, inst: &Instance, plan: &Plan) -> bool {
        use HardConstraint::*;
        let Some(p) = plan.agent(self.agent()) else {
            return true;
        };
        let seq = p.locations();
        let at = |t: u32, x: VertexId| seq.get(t as usize) == Some(&Location::Vertex(x));
        let len = p.length();
        let waits_at = |t: u32, x: VertexId| at(t, x) && at(t + 1, x);
        let b = inst.max_battery();
        let charges_at = |t: u32| {
            seq.get(t as usize)
                .and_then(|l| l.vertex())
                .is_some_and(|v| inst.is_charging(v))
                && p.battery(t + 1) == Some(b)
        };
        let moves = |t: u32, x: VertexId, y: VertexId| {
            at(t, x)
                && (at(t + 1, y)
                    || (seq.get(t as usize + 1) == Some(&Location::InTransit) && at(t + 2, y)))
        };
        match self {
            ForbidWait { x, .. } => !(0..len).any(|t| waits_at(t, *x)),
            ForbidWaitAt { x, s, .. } => !waits_at(*s, *x),
            ForbidWaitRun { x, s, n, .. } => !(*s..=s + n).all(|t| at(t, *x)),
            CapWaitCount { x, s, n, .. } => {
                (*s..s + n).filter(|&t| waits_at(t, *x)).count() < *n as usize
            }
            ForbidChargeAt { x, .. } => !(0..len).any(|t| at(t, *x) && charges_at(t)),
            ForbidChargeTime { s, .. } => !charges_at(*s),
            ForbidChargeAtTime { x, s, .. } => !(at(*s, *x) && charges_at(*s)),
            CapChargeCount { m, .. } => plan.full_battery_count(self.agent(), b) < *m,
            CapPlanLength { l, .. } => len < *l,
            ForbidVisit { x, .. } => !p.visits(*x),
            ForbidVisitAt { x, s, .. } => !at(*s, *x),
            ForbidMove { x, y, .. } => !(0..len).any(|t| moves(t, *x, *y)),
            ForbidMoveAt { x, y, s, .. } => !moves(*s, *x, *y),
            FixTraversal { locations, .. } => seq == *locations,
        }
    }
}

impl fmt::Display for HardConstraint {
    /// Integrity-constraint style rendering.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use HardConstraint::*;
        match self {
            ForbidWait { agent: a, x } => write!(f, ":- plan({a},T,{x}), plan({a},T+1,{x}), T<t."),
            ForbidWaitAt { agent: a, x, s } => {
                write!(f, ":- plan({a},{s},{x}), plan({a},{},{x}).", s + 1)
            }
            ForbidWaitRun { agent: a, x, s, n } => {
                let atoms: Vec<String> = (*s..=s + n).map(|t| format!("plan({a},{t},{x})")).collect();
                write!(f, ":- {}.", atoms.join(", "))
            }
            CapWaitCount { agent: a, x, s, n } => write!(
                f,
                ":- C = #count{{T: plan({a},T,{x}), plan({a},T+1,{x}), T<{}, T>={s}}}, C >= {n}.",
                s + n
            ),
            ForbidChargeAt { agent: a, x } => {
                write!(f, ":- batteryLevel({a},T+1,b), plan({a},T,{x}), charging({x}).")
            }
            ForbidChargeTime { agent: a, s } => {
                write!(f, ":- batteryLevel({a},{},b), plan({a},{s},X), charging(X).", s + 1)
            }
            ForbidChargeAtTime { agent: a, x, s } => write!(
                f,
                ":- batteryLevel({a},{},b), plan({a},{s},{x}), charging({x}).",
                s + 1
            ),
            CapChargeCount { agent: a, m } => {
                write!(f, ":- C = #count{{T: batteryLevel({a},T,b), T>0}}, C >= {m}.")
            }
            CapPlanLength { agent: a, l } => write!(f, ":- planLength({a},L), L>={l}."),
            ForbidVisit { agent: a, x } => write!(f, ":- plan({a},T,{x})."),
            ForbidVisitAt { agent: a, x, s } => write!(f, ":- plan({a},{s},{x})."),
            ForbidMove { agent: a, x, y } => write!(
                f,
                ":- plan({a},T,{x}), plan({a},T+1,{y}), mode({x},{y},n). \
                 :- plan({a},T,{x}), plan({a},T+1,intransit), plan({a},T+2,{y}), mode({x},{y},s)."
            ),
            ForbidMoveAt { agent: a, x, y, s } => write!(
                f,
                ":- plan({a},{s},{x}), plan({a},{},{y}), mode({x},{y},n). \
                 :- plan({a},{s},{x}), plan({a},{},intransit), plan({a},{},{y}), mode({x},{y},s).",
                s + 1,
                s + 1,
                s + 2
            ),
            FixTraversal { agent: a, locations } => {
                let seq: Vec<String> = locations.iter().map(ToString::to_string).collect();
                write!(f, "fix traversal of agent {a}: <{}>", seq.join(","))
            }
        }
    }
}
