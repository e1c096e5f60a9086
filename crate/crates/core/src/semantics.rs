//! Executable semantics of a joint plan: traversal legality, battery
//! evolution, and the grounded constraint-violation atoms.
//!
//! Conventions shared with the solver:
//! - an agent occupies its location for `0 ..= L_a` and vanishes afterwards;
//! - every step away from a charging cell drains one unit, a step taken from
//!   a charging cell either drains one unit or refills to the top level;
//! - draining at level 0 stays at 0 (the step is then a `min_battery` atom);
//! - a level of 0 is only acceptable at the final step.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AgentId, AgentSpec, EdgeMode, Instance, Location, Plan, Step, VertexId};

/// One grounded constraint violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationAtom {
    Collision { a1: AgentId, a2: AgentId, t: u32, x: VertexId },
    Swap { a1: AgentId, a2: AgentId, t: u32, x: VertexId, y: VertexId },
    SlowCollision1 { a1: AgentId, a2: AgentId, t: u32, x: VertexId, y: VertexId },
    SlowCollision2 { a1: AgentId, a2: AgentId, t: u32, x: VertexId, y: VertexId },
    Goal { agent: AgentId, x: VertexId },
    Waypoint { agent: AgentId, x: VertexId },
    Obstacle { agent: AgentId, t: u32, x: VertexId },
    MinBattery { agent: AgentId, t: u32, loc: Location },
}

impl ViolationAtom {
    pub fn kind(&self) -> &'static str {
        match self {
            ViolationAtom::Collision { .. } => "collision",
            ViolationAtom::Swap { .. } => "swap",
            ViolationAtom::SlowCollision1 { .. } => "slow_collision1",
            ViolationAtom::SlowCollision2 { .. } => "slow_collision2",
            ViolationAtom::Goal { .. } => "goal",
            ViolationAtom::Waypoint { .. } => "waypoint",
            ViolationAtom::Obstacle { .. } => "obstacle",
            ViolationAtom::MinBattery { .. } => "min_battery",
        }
    }

    pub fn family(&self) -> ConstraintFamily {
        match self {
            ViolationAtom::Collision { .. }
            | ViolationAtom::Swap { .. }
            | ViolationAtom::SlowCollision1 { .. }
            | ViolationAtom::SlowCollision2 { .. } => ConstraintFamily::Collision,
            ViolationAtom::Goal { .. } => ConstraintFamily::Goal,
            ViolationAtom::Waypoint { .. } => ConstraintFamily::Waypoint,
            ViolationAtom::Obstacle { .. } => ConstraintFamily::Obstacle,
            ViolationAtom::MinBattery { .. } => ConstraintFamily::Battery,
        }
    }

    pub fn args(&self) -> Vec<Location> {
        use Location::Vertex as V;
        match *self {
            ViolationAtom::Collision { a1, a2, t, x } => vec![V(a1), V(a2), V(t), V(x)],
            ViolationAtom::Swap { a1, a2, t, x, y }
            | ViolationAtom::SlowCollision1 { a1, a2, t, x, y }
            | ViolationAtom::SlowCollision2 { a1, a2, t, x, y } => {
                vec![V(a1), V(a2), V(t), V(x), V(y)]
            }
            ViolationAtom::Goal { agent, x } | ViolationAtom::Waypoint { agent, x } => {
                vec![V(agent), V(x)]
            }
            ViolationAtom::Obstacle { agent, t, x } => vec![V(agent), V(t), V(x)],
            ViolationAtom::MinBattery { agent, t, loc } => vec![V(agent), V(t), loc],
        }
    }

    fn from_parts(kind: &str, args: &[Location]) -> Option<Self> {
        let n = |i: usize| args.get(i).and_then(|l| l.vertex());
        let atom = match (kind, args.len()) {
            ("collision", 4) => ViolationAtom::Collision { a1: n(0)?, a2: n(1)?, t: n(2)?, x: n(3)? },
            ("swap", 5) => ViolationAtom::Swap { a1: n(0)?, a2: n(1)?, t: n(2)?, x: n(3)?, y: n(4)? },
            ("slow_collision1", 5) => {
                ViolationAtom::SlowCollision1 { a1: n(0)?, a2: n(1)?, t: n(2)?, x: n(3)?, y: n(4)? }
            }
            ("slow_collision2", 5) => {
                ViolationAtom::SlowCollision2 { a1: n(0)?, a2: n(1)?, t: n(2)?, x: n(3)?, y: n(4)? }
            }
            ("goal", 2) => ViolationAtom::Goal { agent: n(0)?, x: n(1)? },
            ("waypoint", 2) => ViolationAtom::Waypoint { agent: n(0)?, x: n(1)? },
            ("obstacle", 3) => ViolationAtom::Obstacle { agent: n(0)?, t: n(1)?, x: n(2)? },
            ("min_battery", 3) => ViolationAtom::MinBattery { agent: n(0)?, t: n(1)?, loc: args[2] },
            _ => return None,
        };
        Some(atom)
    }

    /// Agents named by the atom, in argument order.
    pub fn agents(&self) -> Vec<AgentId> {
        match *self {
            ViolationAtom::Collision { a1, a2, .. }
            | ViolationAtom::Swap { a1, a2, .. }
            | ViolationAtom::SlowCollision1 { a1, a2, .. }
            | ViolationAtom::SlowCollision2 { a1, a2, .. } => vec![a1, a2],
            ViolationAtom::Goal { agent, .. }
            | ViolationAtom::Waypoint { agent, .. }
            | ViolationAtom::Obstacle { agent, .. }
            | ViolationAtom::MinBattery { agent, .. } => vec![agent],
        }
    }
}

impl fmt::Display for ViolationAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self.args().iter().map(ToString::to_string).collect();
        write!(f, "violate_{}({})", self.kind(), args.join(","))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomDoc {
    kind: String,
    args: Vec<Location>,
}

impl Serialize for ViolationAtom {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        AtomDoc {
            kind: self.kind().to_string(),
            args: self.args(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ViolationAtom {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = AtomDoc::deserialize(d)?;
        ViolationAtom::from_parts(&doc.kind, &doc.args).ok_or_else(|| {
            serde::de::Error::custom(format!("malformed {} atom", doc.kind))
        })
    }
}

/// Groups of hard constraints that can be softened together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    /// Vertex collisions, swaps and both slow-edge collision forms.
    Collision,
    Goal,
    Waypoint,
    Obstacle,
    Battery,
}

impl ConstraintFamily {
    pub const ALL: [ConstraintFamily; 5] = [
        ConstraintFamily::Collision,
        ConstraintFamily::Goal,
        ConstraintFamily::Waypoint,
        ConstraintFamily::Obstacle,
        ConstraintFamily::Battery,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FamilySet(u8);

impl FamilySet {
    pub const EMPTY: FamilySet = FamilySet(0);
    pub const ALL: FamilySet = FamilySet(0b1_1111);

    pub fn contains(self, f: ConstraintFamily) -> bool {
        self.0 & f.bit() != 0
    }

    pub fn with(self, f: ConstraintFamily) -> Self {
        FamilySet(self.0 | f.bit())
    }

    pub fn without(self, f: ConstraintFamily) -> Self {
        FamilySet(self.0 & !f.bit())
    }

    pub fn union(self, other: FamilySet) -> Self {
        FamilySet(self.0 | other.0)
    }

    pub fn difference(self, other: FamilySet) -> Self {
        FamilySet(self.0 & !other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ConstraintFamily> {
        ConstraintFamily::ALL.into_iter().filter(move |f| self.contains(*f))
    }
}

impl FromIterator<ConstraintFamily> for FamilySet {
    fn from_iter<I: IntoIterator<Item = ConstraintFamily>>(iter: I) -> Self {
        iter.into_iter().fold(FamilySet::EMPTY, FamilySet::with)
    }
}

impl Serialize for FamilySet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for FamilySet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vec::<ConstraintFamily>::deserialize(d)?.into_iter().collect())
    }
}

/// Outcome of a per-agent check; `first_bad` is the earliest offending step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub ok: bool,
    pub first_bad: Option<u32>,
}

impl Verdict {
    const OK: Verdict = Verdict { ok: true, first_bad: None };

    fn bad(t: usize) -> Verdict {
        Verdict {
            ok: false,
            first_bad: Some(t as u32),
        }
    }
}

fn is_slow(inst: &Instance, u: VertexId, v: VertexId) -> bool {
    inst.edge_mode(u, v) == Some(EdgeMode::Slow)
}

fn is_normal(inst: &Instance, u: VertexId, v: VertexId) -> bool {
    inst.edge_mode(u, v) == Some(EdgeMode::Normal)
}

/// Checks that consecutive locations follow waits, normal-edge moves and
/// two-step slow crossings through `intransit`.
pub fn check_traversal(inst: &Instance, agent: &AgentSpec, steps: &[Step]) -> Verdict {
    check_locations(inst, agent, &steps.iter().map(|s| s.loc).collect::<Vec<_>>())
}

pub fn check_locations(inst: &Instance, agent: &AgentSpec, seq: &[Location]) -> Verdict {
    use Location::{InTransit, Vertex};
    if seq.first() != Some(&Vertex(agent.init)) {
        return Verdict::bad(0);
    }
    for t in 0..seq.len() {
        let legal = match seq[t] {
            Vertex(u) => {
                if !inst.vertices().contains(&u) {
                    false
                } else if t == 0 {
                    true
                } else {
                    match seq[t - 1] {
                        Vertex(v) => u == v || is_normal(inst, v, u),
                        InTransit => {
                            t >= 2 && matches!(seq[t - 2], Vertex(v) if is_slow(inst, v, u))
                        }
                    }
                }
            }
            InTransit => {
                t >= 1
                    && matches!(
                        (seq[t - 1], seq.get(t + 1)),
                        (Vertex(v), Some(&Vertex(u))) if is_slow(inst, v, u)
                    )
            }
        };
        if !legal {
            return Verdict::bad(t);
        }
    }
    Verdict::OK
}

/// Battery after one step from level `level` at `loc`; `charge` selects the
/// refill branch, which only exists on charging cells.
pub fn next_battery(inst: &Instance, loc: Location, level: u32, charge: bool) -> Option<u32> {
    let at_charger = loc.vertex().is_some_and(|v| inst.is_charging(v));
    match (charge, at_charger) {
        (true, true) => Some(inst.max_battery()),
        (true, false) => None,
        (false, _) => Some(level.saturating_sub(1)),
    }
}

pub fn check_battery(inst: &Instance, agent: &AgentSpec, steps: &[Step]) -> Verdict {
    let b = inst.max_battery();
    if steps.first().map(|s| s.battery) != Some(agent.init_battery) {
        return Verdict::bad(0);
    }
    for t in 1..steps.len() {
        let prev = steps[t - 1];
        let level = steps[t].battery;
        let drained = next_battery(inst, prev.loc, prev.battery, false);
        let charged = next_battery(inst, prev.loc, prev.battery, true);
        if level > b || (Some(level) != drained && Some(level) != charged) {
            return Verdict::bad(t);
        }
    }
    Verdict::OK
}

/// Start of a slow crossing `x -> intransit -> y` at `t`.
fn slow_start(p: &[Location], t: usize) -> Option<(VertexId, VertexId)> {
    match (p.get(t), p.get(t + 1), p.get(t + 2)) {
        (Some(&Location::Vertex(x)), Some(Location::InTransit), Some(&Location::Vertex(y))) => {
            Some((x, y))
        }
        _ => None,
    }
}

/// All grounded atoms of the requested families, sorted.
///
/// Assumes each agent's traversal is legal; atoms are a multiset, so the
/// same pair colliding at two times yields two atoms.
pub fn enumerate_violations(
    inst: &Instance,
    plan: &Plan,
    families: FamilySet,
) -> Vec<ViolationAtom> {
    let mut atoms = Vec::new();
    let seqs: BTreeMap<AgentId, Vec<Location>> = plan
        .agents
        .iter()
        .map(|(&a, p)| (a, p.locations()))
        .collect();
    let ids: Vec<AgentId> = seqs.keys().copied().collect();

    if families.contains(ConstraintFamily::Collision) {
        for (i, &a1) in ids.iter().enumerate() {
            let p1 = &seqs[&a1];
            for &a2 in &ids[i + 1..] {
                let p2 = &seqs[&a2];
                let common = p1.len().min(p2.len());
                for t in 0..common {
                    if let (Location::Vertex(x), Location::Vertex(y)) = (p1[t], p2[t]) {
                        if x == y {
                            atoms.push(ViolationAtom::Collision { a1, a2, t: t as u32, x });
                        }
                    }
                }
                for t in 0..common.saturating_sub(1) {
                    if let (
                        Location::Vertex(x),
                        Location::Vertex(y),
                        Location::Vertex(y2),
                        Location::Vertex(x2),
                    ) = (p1[t], p1[t + 1], p2[t], p2[t + 1])
                    {
                        if x != y && x == x2 && y == y2 && is_normal(inst, x, y) {
                            atoms.push(ViolationAtom::Swap { a1, a2, t: t as u32, x, y });
                        }
                    }
                }
                // Same-time opposite slow crossings.
                for t in 0..common {
                    if let (Some((x, y)), Some((y2, x2))) = (slow_start(p1, t), slow_start(p2, t)) {
                        if x == x2 && y == y2 {
                            atoms.push(ViolationAtom::SlowCollision2 { a1, a2, t: t as u32, x, y });
                        }
                    }
                }
            }
        }
        // One crossing starts while the reverse one is under way.
        for &a1 in &ids {
            for &a2 in &ids {
                if a1 == a2 {
                    continue;
                }
                let (p1, p2) = (&seqs[&a1], &seqs[&a2]);
                for t in 1..p1.len() {
                    if let (Some((x, y)), Some((y2, x2))) = (slow_start(p1, t), slow_start(p2, t - 1)) {
                        if x == x2 && y == y2 {
                            atoms.push(ViolationAtom::SlowCollision1 { a1, a2, t: t as u32, x, y });
                        }
                    }
                }
            }
        }
    }

    for spec in inst.agents() {
        let Some(p) = plan.agent(spec.id) else { continue };
        let a = spec.id;
        if families.contains(ConstraintFamily::Goal)
            && p.steps.last().map(|s| s.loc) != Some(Location::Vertex(spec.goal))
        {
            atoms.push(ViolationAtom::Goal { agent: a, x: spec.goal });
        }
        if families.contains(ConstraintFamily::Waypoint) {
            for &w in &spec.waypoints {
                if !p.visits(w) {
                    atoms.push(ViolationAtom::Waypoint { agent: a, x: w });
                }
            }
        }
        if families.contains(ConstraintFamily::Obstacle) {
            for (t, s) in p.steps.iter().enumerate() {
                if let Location::Vertex(x) = s.loc {
                    if inst.is_obstacle(x) {
                        atoms.push(ViolationAtom::Obstacle { agent: a, t: t as u32, x });
                    }
                }
            }
        }
        if families.contains(ConstraintFamily::Battery) {
            let last = p.steps.len().saturating_sub(1);
            for (t, s) in p.steps.iter().enumerate().take(last) {
                if s.battery == 0 {
                    atoms.push(ViolationAtom::MinBattery { agent: a, t: t as u32, loc: s.loc });
                }
            }
        }
    }
    atoms.sort();
    atoms
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent: AgentId,
    pub traversal: Verdict,
    pub battery: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub agents: Vec<AgentReport>,
    pub violations: Vec<ViolationAtom>,
    pub solution: bool,
}

impl ValidationReport {
    pub fn is_solution(&self) -> bool {
        self.solution
    }
}

pub fn validate(inst: &Instance, plan: &Plan) -> ValidationReport {
    let mut agents = Vec::new();
    let mut all_legal = true;
    for spec in inst.agents() {
        let (traversal, battery) = match plan.agent(spec.id) {
            Some(p) => (check_traversal(inst, spec, &p.steps), check_battery(inst, spec, &p.steps)),
            None => (Verdict::bad(0), Verdict::bad(0)),
        };
        all_legal &= traversal.ok && battery.ok;
        agents.push(AgentReport {
            agent: spec.id,
            traversal,
            battery,
        });
    }
    let violations = if agents.iter().all(|r| r.traversal.ok) {
        enumerate_violations(inst, plan, FamilySet::ALL)
    } else {
        Vec::new()
    };
    let solution = all_legal && violations.is_empty();
    ValidationReport {
        agents,
        violations,
        solution,
    }
}
