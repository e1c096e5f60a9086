//! Sentence templates for explanations.

use std::collections::BTreeMap;

use crate::model::{AgentId, VertexId};
use crate::queries::Query;
use crate::semantics::ViolationAtom;

use super::Comparison;

/// Joins phrases as "a", "a and b", "a, b and c".
pub fn join(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn cells(xs: &[VertexId]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("Cell {x}")).collect();
    join(&parts)
}

/// What the agent turns out not to need; completes "Actually, Robot a ...".
fn relief(q: &Query) -> String {
    use Query::*;
    match *q {
        QW1 { x, .. } => format!("does not have to wait at Cell {x}"),
        QW2 { x, s, .. } => format!("does not have to wait at Cell {x} at time step {s}"),
        QW3 { x, s, n, .. } => format!(
            "does not have to wait at Cell {x} from time step {s} to {}",
            s + n
        ),
        QW4 { x, s, n, .. } => format!(
            "can wait at Cell {x} for less than {n} steps between time steps {s} and {}",
            s + n
        ),
        QC1 { x, .. } => format!("does not have to charge at Cell {x}"),
        QC2 { s, .. } => format!("does not have to charge at time step {s}"),
        QC3 { x, s, .. } => format!("does not have to charge at Cell {x} at time step {s}"),
        QC4 { m, .. } => format!("can charge less than {m} times"),
        QP1 { l, .. } => format!("can follow a shorter plan whose length is smaller than {l}"),
        QP2 { x, .. } => format!("does not have to visit Cell {x}"),
        QP3 { x, s, .. } => format!("does not have to be at Cell {x} at time step {s}"),
        QP4 { x, y, .. } => format!("does not have to move from Cell {x} to Cell {y}"),
        QP5 { x, y, s, .. } => {
            format!("does not have to move from Cell {x} to Cell {y} at time step {s}")
        }
        QU => "has a plan".to_string(),
    }
}

/// The observed necessity; "Robot a has to ...".
fn necessity(q: &Query) -> String {
    use Query::*;
    match *q {
        QW1 { x, .. } => format!("has to wait at Cell {x}"),
        QW2 { x, s, .. } => format!("has to wait at Cell {x} at time step {s}"),
        QW3 { x, s, n, .. } => format!("has to wait at Cell {x} from time step {s} to {}", s + n),
        QW4 { x, s, n, .. } => format!(
            "has to wait at Cell {x} for {n} steps between time steps {s} and {}",
            s + n
        ),
        QC1 { x, .. } => format!("has to charge at Cell {x}"),
        QC2 { s, .. } => format!("has to charge at time step {s}"),
        QC3 { x, s, .. } => format!("has to charge at Cell {x} at time step {s}"),
        QC4 { m, .. } => format!("cannot charge less than {m} times"),
        QP1 { .. } => "cannot follow a shorter plan".to_string(),
        QP2 { x, .. } => format!("has to visit Cell {x}"),
        QP3 { x, s, .. } => format!("has to be at Cell {x} at time step {s}"),
        QP4 { x, y, .. } => format!("has to move from Cell {x} to Cell {y}"),
        QP5 { x, y, s, .. } => format!("has to move from Cell {x} to Cell {y} at time step {s}"),
        QU => "has no plan".to_string(),
    }
}

pub fn head(q: &Query) -> String {
    match q.agent() {
        Some(a) => format!("Robot {a} {}", necessity(q)),
        None => "There is no solution".to_string(),
    }
}

pub fn alternative(q: &Query, comparison: Comparison) -> String {
    let agent = q.agent().map_or(String::new(), |a| format!("Robot {a} "));
    let qualifier = match comparison {
        Comparison::Shorter => " which is shorter",
        Comparison::Equal => "",
        Comparison::Longer => " which is longer",
    };
    format!(
        "Actually, {agent}{}. Here is an alternative plan{qualifier}:",
        relief(q)
    )
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Mood {
    /// Hypothetical consequences for the current plan.
    Would,
    /// Consequences for some other plan.
    Will,
    /// Facts about an unsolvable instance.
    Present,
}

impl Mood {
    fn aux(self) -> &'static str {
        match self {
            Mood::Would => "would",
            Mood::Will => "will",
            Mood::Present => "",
        }
    }

    /// Verb phrase with the modal, or conjugated for a singular subject.
    fn verb(self, base: &str, third: &str) -> String {
        match self {
            Mood::Present => third.to_string(),
            _ => format!("{} {base}", self.aux()),
        }
    }
}

struct Subject {
    pronoun: bool,
    agent: AgentId,
}

impl Subject {
    fn new(agent: AgentId, focus: Option<AgentId>, mood: Mood) -> Self {
        Subject {
            pronoun: mood != Mood::Present && focus == Some(agent),
            agent,
        }
    }

    fn nominative(&self) -> String {
        if self.pronoun {
            "it".to_string()
        } else {
            format!("Robot {}", self.agent)
        }
    }

    fn battery(&self) -> String {
        if self.pronoun {
            "its battery".to_string()
        } else {
            format!("the battery of Robot {}", self.agent)
        }
    }
}

/// Renders atoms as consequence phrases, grouped per agent or agent pair.
/// `timed` keeps collision time steps.
pub fn consequences(atoms: &[ViolationAtom], focus: Option<AgentId>, mood: Mood, timed: bool) -> String {
    let when = |t: u32| {
        if timed {
            format!(" at time step {t}")
        } else {
            String::new()
        }
    };
    let mut pairs: BTreeMap<(AgentId, AgentId), Vec<String>> = BTreeMap::new();
    let mut goals: BTreeMap<AgentId, Vec<VertexId>> = BTreeMap::new();
    let mut waypoints: BTreeMap<AgentId, Vec<VertexId>> = BTreeMap::new();
    let mut obstacles: BTreeMap<AgentId, Vec<String>> = BTreeMap::new();
    let mut battery: BTreeMap<AgentId, u32> = BTreeMap::new();
    for atom in atoms {
        match *atom {
            ViolationAtom::Collision { a1, a2, t, x } => {
                pairs.entry(pair(a1, a2)).or_default().push(format!("at Cell {x}{}", when(t)))
            }
            ViolationAtom::Swap { a1, a2, t, x, y } => pairs
                .entry(pair(a1, a2))
                .or_default()
                .push(format!("on the edge between Cell {x} and Cell {y}{}", when(t))),
            ViolationAtom::SlowCollision1 { a1, a2, t, x, y }
            | ViolationAtom::SlowCollision2 { a1, a2, t, x, y } => pairs
                .entry(pair(a1, a2))
                .or_default()
                .push(format!("on the slow edge between Cell {x} and Cell {y}{}", when(t))),
            ViolationAtom::Goal { agent, x } => goals.entry(agent).or_default().push(x),
            ViolationAtom::Waypoint { agent, x } => waypoints.entry(agent).or_default().push(x),
            ViolationAtom::Obstacle { agent, t, x } => obstacles
                .entry(agent)
                .or_default()
                .push(format!("at Cell {x}{}", when(t))),
            ViolationAtom::MinBattery { agent, t, .. } => {
                let e = battery.entry(agent).or_insert(t);
                *e = (*e).min(t);
            }
        }
    }
    let mut phrases = Vec::new();
    for ((a1, a2), mut places) in pairs {
        places.dedup();
        let verb = match mood {
            Mood::Present => "collide".to_string(),
            _ => format!("{} collide with each other", mood.aux()),
        };
        phrases.push(format!("Robot {a1} and Robot {a2} {verb} {}", join(&places)));
    }
    for (agent, t) in battery {
        let s = Subject::new(agent, focus, mood);
        phrases.push(format!(
            "{} {} at time step {t}",
            s.battery(),
            mood.verb("run out", "runs out")
        ));
    }
    for (agent, xs) in waypoints {
        let s = Subject::new(agent, focus, mood);
        let noun = if xs.len() == 1 { "waypoint" } else { "waypoints" };
        let verb = match mood {
            Mood::Present => "cannot visit".to_string(),
            _ => format!("{} not be able to visit", mood.aux()),
        };
        phrases.push(format!("{} {verb} its {noun} at {}", s.nominative(), cells(&xs)));
    }
    for (agent, xs) in goals {
        let s = Subject::new(agent, focus, mood);
        let verb = match mood {
            Mood::Present => "cannot reach".to_string(),
            _ => format!("{} not be able to reach", mood.aux()),
        };
        phrases.push(format!("{} {verb} its goal at {}", s.nominative(), cells(&xs)));
    }
    for (agent, places) in obstacles {
        let s = Subject::new(agent, focus, mood);
        let noun = if places.len() == 1 { "the obstacle" } else { "the obstacles" };
        phrases.push(format!(
            "{} {} with {noun} {}",
            s.nominative(),
            mood.verb("collide", "collides"),
            join(&places)
        ));
    }
    join(&phrases)
}

fn pair(a: AgentId, b: AgentId) -> (AgentId, AgentId) {
    (a.min(b), a.max(b))
}

/// Counterfactual sentence from the fixed-traversal and free-plan atoms.
pub fn counterfactual(q: &Query, current: &[ViolationAtom], any: &[ViolationAtom]) -> String {
    let focus = q.agent();
    let head = head(q);
    match (current.is_empty(), any.is_empty()) {
        (false, false) => format!(
            "{head}; otherwise, {} if it uses the current plan or {} with another plan.",
            consequences(current, focus, Mood::Will, true),
            consequences(any, focus, Mood::Will, false)
        ),
        (false, true) => format!(
            "{head} in the current plan; otherwise, {}.",
            consequences(current, focus, Mood::Would, true)
        ),
        (true, false) => format!(
            "{head}; otherwise, {} with another plan.",
            consequences(any, focus, Mood::Will, false)
        ),
        (true, true) => unreachable!("counterfactual without violations"),
    }
}

/// One sentence per unsolvability witness.
pub fn unsolvable(atoms: &[ViolationAtom]) -> String {
    format!(
        "There is no solution because {}.",
        consequences(atoms, None, Mood::Present, true)
    )
}

pub fn obstacle_suggestion(atoms: &[ViolationAtom], obstacles: &[VertexId]) -> String {
    let this = if obstacles.len() == 1 { "this obstacle" } else { "these obstacles" };
    format!(
        "There is no solution because {}; this suggests removing {this}.",
        consequences(atoms, None, Mood::Present, true)
    )
}
