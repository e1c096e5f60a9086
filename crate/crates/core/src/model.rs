//! Instances, plans and their JSON documents.
//!
//! An [`Instance`] is immutable once built and always satisfies its structural
//! invariants: edges join known vertices, obstacles and charging cells are
//! disjoint, and every agent starts, ends and visits waypoints on free
//! vertices. Grid shorthand documents are expanded to explicit vertices and
//! edges on load but remembered so the document can be written back in the
//! same form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

pub type VertexId = u32;
pub type AgentId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("invalid plan: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    Normal,
    Slow,
}

/// Objective terms, listed highest priority first in an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Makespan,
    TotalPlanLength,
    TotalChargeCount,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Makespan => "makespan",
            Objective::TotalPlanLength => "total_plan_length",
            Objective::TotalChargeCount => "total_charge_count",
        }
    }
}

/// Where an agent is at a time step: a vertex, or the middle of a slow crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    Vertex(VertexId),
    InTransit,
}

impl Location {
    pub fn vertex(self) -> Option<VertexId> {
        match self {
            Location::Vertex(v) => Some(v),
            Location::InTransit => None,
        }
    }

    pub fn is_transit(self) -> bool {
        matches!(self, Location::InTransit)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Vertex(v) => write!(f, "{v}"),
            Location::InTransit => f.write_str("intransit"),
        }
    }
}

impl From<VertexId> for Location {
    fn from(v: VertexId) -> Self {
        Location::Vertex(v)
    }
}

impl Serialize for Location {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Location::Vertex(v) => s.serialize_u32(*v),
            Location::InTransit => s.serialize_str("intransit"),
        }
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct LocVisitor;
        impl Visitor<'_> for LocVisitor {
            type Value = Location;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a vertex id or \"intransit\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Location, E> {
                u32::try_from(v)
                    .map(Location::Vertex)
                    .map_err(|_| E::custom("vertex id out of range"))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Location, E> {
                u32::try_from(v)
                    .map(Location::Vertex)
                    .map_err(|_| E::custom("vertex id out of range"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Location, E> {
                if v == "intransit" {
                    Ok(Location::InTransit)
                } else {
                    Err(E::custom(format!("unknown location {v:?}")))
                }
            }
        }
        d.deserialize_any(LocVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentSpec {
    pub id: AgentId,
    pub init: VertexId,
    pub goal: VertexId,
    pub waypoints: BTreeSet<VertexId>,
    pub init_battery: u32,
}

/// Row-major grid description; cell ids start at 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GridShorthand {
    pub rows: u32,
    pub cols: u32,
    pub slow: BTreeSet<VertexId>,
    pub obstacles: BTreeSet<VertexId>,
    pub charging: BTreeSet<VertexId>,
}

impl GridShorthand {
    pub fn cell(&self, row: u32, col: u32) -> VertexId {
        row * self.cols + col + 1
    }

    /// 4-neighbour adjacency; an edge is slow when either end is a slow cell.
    pub fn expand(&self) -> (BTreeSet<VertexId>, BTreeMap<(VertexId, VertexId), EdgeMode>) {
        let vertices = (1..=self.rows * self.cols).collect();
        let mut edges = BTreeMap::new();
        let mode = |u: VertexId, v: VertexId| {
            if self.slow.contains(&u) || self.slow.contains(&v) {
                EdgeMode::Slow
            } else {
                EdgeMode::Normal
            }
        };
        for r in 0..self.rows {
            for c in 0..self.cols {
                let u = self.cell(r, c);
                if c + 1 < self.cols {
                    let v = self.cell(r, c + 1);
                    edges.insert((u, v), mode(u, v));
                }
                if r + 1 < self.rows {
                    let v = self.cell(r + 1, c);
                    edges.insert((u, v), mode(u, v));
                }
            }
        }
        (vertices, edges)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Reject agents whose init or goal lies outside the endpoint set.
    pub strict_endpoints: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    vertices: BTreeSet<VertexId>,
    edges: BTreeMap<(VertexId, VertexId), EdgeMode>,
    obstacles: BTreeSet<VertexId>,
    charging: BTreeSet<VertexId>,
    endpoints: Option<BTreeSet<VertexId>>,
    agents: Vec<AgentSpec>,
    max_battery: u32,
    tau: u32,
    objective: Vec<Objective>,
    grid: Option<GridShorthand>,
    adjacency: BTreeMap<VertexId, Vec<(VertexId, EdgeMode)>>,
}

/// Unvalidated parts of an instance.
#[derive(Debug, Clone, Default)]
pub struct InstanceParts {
    pub vertices: BTreeSet<VertexId>,
    pub edges: BTreeMap<(VertexId, VertexId), EdgeMode>,
    pub obstacles: BTreeSet<VertexId>,
    pub charging: BTreeSet<VertexId>,
    pub endpoints: Option<BTreeSet<VertexId>>,
    pub agents: Vec<AgentSpec>,
    pub max_battery: u32,
    pub tau: u32,
    pub objective: Vec<Objective>,
    pub grid: Option<GridShorthand>,
}

impl InstanceParts {
    /// Parts for a grid world; edges and vertices come from the expansion.
    pub fn from_grid(grid: GridShorthand) -> Self {
        let (vertices, edges) = grid.expand();
        InstanceParts {
            vertices,
            edges,
            obstacles: grid.obstacles.clone(),
            charging: grid.charging.clone(),
            objective: vec![Objective::Makespan],
            grid: Some(grid),
            ..Default::default()
        }
    }
}

impl Instance {
    pub fn new(parts: InstanceParts) -> Result<Self, ModelError> {
        Self::with_options(parts, LoadOptions::default())
    }

    pub fn with_options(parts: InstanceParts, opts: LoadOptions) -> Result<Self, ModelError> {
        let InstanceParts {
            vertices,
            edges,
            obstacles,
            charging,
            endpoints,
            mut agents,
            max_battery,
            tau,
            objective,
            grid,
        } = parts;
        let invalid = |msg: String| Err(ModelError::Invalid(msg));

        if vertices.is_empty() {
            return invalid("instance has no vertices".into());
        }
        if vertices.contains(&0) {
            return invalid("vertex ids must be positive".into());
        }
        let mut normalized = BTreeMap::new();
        for (&(u, v), &mode) in &edges {
            if u == v {
                return invalid(format!("self-loop edge at vertex {u}"));
            }
            for w in [u, v] {
                if !vertices.contains(&w) {
                    return invalid(format!("edge ({u},{v}) uses unknown vertex {w}"));
                }
            }
            let key = (u.min(v), u.max(v));
            if let Some(prev) = normalized.insert(key, mode) {
                if prev != mode {
                    return invalid(format!("edge ({u},{v}) listed with two modes"));
                }
            }
        }
        for (name, set) in [("obstacle", &obstacles), ("charging", &charging)] {
            if let Some(v) = set.iter().find(|v| !vertices.contains(v)) {
                return invalid(format!("{name} cell {v} is not a vertex"));
            }
        }
        if let Some(v) = obstacles.intersection(&charging).next() {
            return invalid(format!("vertex {v} is both an obstacle and a charging cell"));
        }
        if let Some(eps) = &endpoints {
            if let Some(v) = eps.iter().find(|v| !vertices.contains(v)) {
                return invalid(format!("endpoint {v} is not a vertex"));
            }
        }
        if max_battery == 0 {
            return invalid("max_battery must be positive".into());
        }
        if tau == 0 {
            return invalid("tau must be positive".into());
        }
        if objective.is_empty() {
            return invalid("objective must list at least one term".into());
        }
        let distinct: BTreeSet<_> = objective.iter().collect();
        if distinct.len() != objective.len() {
            return invalid("objective lists a term twice".into());
        }
        if agents.is_empty() {
            return invalid("instance has no agents".into());
        }
        agents.sort_by_key(|a| a.id);
        for pair in agents.windows(2) {
            if pair[0].id == pair[1].id {
                return invalid(format!("agent id {} is used twice", pair[0].id));
            }
        }
        for a in &agents {
            if a.id == 0 {
                return invalid("agent ids must be positive".into());
            }
            let named = [("init", a.init), ("goal", a.goal)]
                .into_iter()
                .chain(a.waypoints.iter().map(|&w| ("waypoint", w)));
            for (what, v) in named {
                if !vertices.contains(&v) {
                    return invalid(format!("agent {} {what} {v} is not a vertex", a.id));
                }
                if obstacles.contains(&v) {
                    return invalid(format!("agent {} {what} {v} is on an obstacle", a.id));
                }
            }
            if a.init_battery == 0 || a.init_battery > max_battery {
                return invalid(format!(
                    "agent {} init_battery {} outside 1..={max_battery}",
                    a.id, a.init_battery
                ));
            }
            if opts.strict_endpoints {
                if let Some(eps) = &endpoints {
                    for (what, v) in [("init", a.init), ("goal", a.goal)] {
                        if !eps.contains(&v) {
                            return invalid(format!(
                                "agent {} {what} {v} is not an endpoint",
                                a.id
                            ));
                        }
                    }
                }
            }
        }

        let mut adjacency: BTreeMap<VertexId, Vec<(VertexId, EdgeMode)>> =
            vertices.iter().map(|&v| (v, Vec::new())).collect();
        for (&(u, v), &mode) in &normalized {
            adjacency.get_mut(&u).unwrap().push((v, mode));
            adjacency.get_mut(&v).unwrap().push((u, mode));
        }
        for list in adjacency.values_mut() {
            list.sort();
        }

        Ok(Instance {
            vertices,
            edges: normalized,
            obstacles,
            charging,
            endpoints,
            agents,
            max_battery,
            tau,
            objective,
            grid,
            adjacency,
        })
    }

    pub fn vertices(&self) -> &BTreeSet<VertexId> {
        &self.vertices
    }

    /// Edges keyed by `(min, max)` endpoint.
    pub fn edges(&self) -> &BTreeMap<(VertexId, VertexId), EdgeMode> {
        &self.edges
    }

    pub fn edge_mode(&self, u: VertexId, v: VertexId) -> Option<EdgeMode> {
        self.edges.get(&(u.min(v), u.max(v))).copied()
    }

    /// Neighbours of `v` in ascending id order.
    pub fn neighbors(&self, v: VertexId) -> &[(VertexId, EdgeMode)] {
        self.adjacency.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn obstacles(&self) -> &BTreeSet<VertexId> {
        &self.obstacles
    }

    pub fn charging(&self) -> &BTreeSet<VertexId> {
        &self.charging
    }

    pub fn endpoints(&self) -> Option<&BTreeSet<VertexId>> {
        self.endpoints.as_ref()
    }

    pub fn is_obstacle(&self, v: VertexId) -> bool {
        self.obstacles.contains(&v)
    }

    pub fn is_charging(&self, v: VertexId) -> bool {
        self.charging.contains(&v)
    }

    /// Agents sorted by id.
    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentSpec> {
        self.agents
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|i| &self.agents[i])
    }

    pub fn max_battery(&self) -> u32 {
        self.max_battery
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn objective(&self) -> &[Objective] {
        &self.objective
    }

    pub fn grid(&self) -> Option<&GridShorthand> {
        self.grid.as_ref()
    }

    /// Returns the parts this instance was built from, for editing.
    pub fn to_parts(&self) -> InstanceParts {
        InstanceParts {
            vertices: self.vertices.clone(),
            edges: self.edges.clone(),
            obstacles: self.obstacles.clone(),
            charging: self.charging.clone(),
            endpoints: self.endpoints.clone(),
            agents: self.agents.clone(),
            max_battery: self.max_battery,
            tau: self.tau,
            objective: self.objective.clone(),
            grid: self.grid.clone(),
        }
    }

    pub fn with_tau(&self, tau: u32) -> Result<Self, ModelError> {
        Instance::new(InstanceParts {
            tau,
            ..self.to_parts()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Step {
    pub loc: Location,
    pub battery: u32,
}

impl Step {
    pub fn new(loc: impl Into<Location>, battery: u32) -> Self {
        Step {
            loc: loc.into(),
            battery,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AgentPlan {
    pub steps: Vec<Step>,
}

impl AgentPlan {
    /// Index of the last step (`L_a`).
    pub fn length(&self) -> u32 {
        self.steps.len().saturating_sub(1) as u32
    }

    pub fn loc(&self, t: u32) -> Option<Location> {
        self.steps.get(t as usize).map(|s| s.loc)
    }

    pub fn battery(&self, t: u32) -> Option<u32> {
        self.steps.get(t as usize).map(|s| s.battery)
    }

    pub fn locations(&self) -> Vec<Location> {
        self.steps.iter().map(|s| s.loc).collect()
    }

    pub fn visits(&self, v: VertexId) -> bool {
        self.steps.iter().any(|s| s.loc == Location::Vertex(v))
    }
}

/// A joint plan, one timed step sequence per agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Plan {
    pub agents: BTreeMap<AgentId, AgentPlan>,
}

impl Plan {
    pub fn agent(&self, id: AgentId) -> Option<&AgentPlan> {
        self.agents.get(&id)
    }

    pub fn makespan(&self) -> u32 {
        self.agents.values().map(AgentPlan::length).max().unwrap_or(0)
    }

    pub fn total_plan_length(&self) -> u32 {
        self.agents.values().map(AgentPlan::length).sum()
    }

    /// Time steps `t > 0` at which an agent holds the top battery level.
    pub fn full_battery_count(&self, id: AgentId, max_battery: u32) -> u32 {
        self.agents.get(&id).map_or(0, |p| {
            p.steps
                .iter()
                .skip(1)
                .filter(|s| s.battery == max_battery)
                .count() as u32
        })
    }

    pub fn total_charge_count(&self, max_battery: u32) -> u32 {
        self.agents
            .keys()
            .map(|&a| self.full_battery_count(a, max_battery))
            .sum()
    }

    pub fn objective_value(&self, term: Objective, max_battery: u32) -> u32 {
        match term {
            Objective::Makespan => self.makespan(),
            Objective::TotalPlanLength => self.total_plan_length(),
            Objective::TotalChargeCount => self.total_charge_count(max_battery),
        }
    }

    /// Builds a plan from location sequences, draining one battery unit per
    /// step and never recharging. Handy for fixtures.
    pub fn from_locations<I>(inst: &Instance, seqs: I) -> Self
    where
        I: IntoIterator<Item = (AgentId, Vec<Location>)>,
    {
        let agents = seqs
            .into_iter()
            .map(|(id, locs)| {
                let start = inst.agent(id).map_or(inst.max_battery(), |a| a.init_battery);
                let steps = locs
                    .into_iter()
                    .enumerate()
                    .map(|(t, loc)| Step {
                        loc,
                        battery: start.saturating_sub(t as u32),
                    })
                    .collect();
                (id, AgentPlan { steps })
            })
            .collect();
        Plan { agents }
    }
}

/// Shorthand for a vertex-only location sequence.
pub fn locs(vs: &[VertexId]) -> Vec<Location> {
    vs.iter().copied().map(Location::Vertex).collect()
}

// ---------------------------------------------------------------------------
// JSON documents

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    rows: u32,
    cols: u32,
    #[serde(default)]
    slow: Vec<VertexId>,
    #[serde(default)]
    obstacles: Vec<VertexId>,
    #[serde(default)]
    charging: Vec<VertexId>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    u: VertexId,
    v: VertexId,
    mode: EdgeMode,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentDoc {
    id: AgentId,
    init: VertexId,
    goal: VertexId,
    #[serde(default)]
    waypoints: Vec<VertexId>,
    init_battery: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vertices: Option<Vec<VertexId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<EdgeDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obstacles: Option<Vec<VertexId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    charging: Option<Vec<VertexId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    endpoints: Option<Vec<VertexId>>,
    max_battery: u32,
    tau: u32,
    #[serde(default = "default_objective")]
    objective: Vec<Objective>,
    agents: Vec<AgentDoc>,
}

fn default_objective() -> Vec<Objective> {
    vec![Objective::Makespan]
}

fn parse_err(e: serde_json::Error) -> ModelError {
    ModelError::Parse(e.to_string())
}

pub fn load_instance(doc: &str) -> Result<Instance, ModelError> {
    load_instance_with(doc, LoadOptions::default())
}

pub fn load_instance_with(doc: &str, opts: LoadOptions) -> Result<Instance, ModelError> {
    let value: serde_json::Value = serde_json::from_str(doc).map_err(parse_err)?;
    instance_from_value(value, opts)
}

pub fn instance_from_value(
    value: serde_json::Value,
    opts: LoadOptions,
) -> Result<Instance, ModelError> {
    let doc: InstanceDoc = serde_json::from_value(value).map_err(parse_err)?;
    let mut parts = match (doc.grid, doc.vertices) {
        (Some(g), None) => {
            if doc.edges.is_some() || doc.obstacles.is_some() || doc.charging.is_some() {
                return Err(ModelError::Parse(
                    "grid documents carry obstacles and charging inside \"grid\" and no edges"
                        .into(),
                ));
            }
            if g.rows == 0 || g.cols == 0 {
                return Err(ModelError::Invalid("grid dimensions must be positive".into()));
            }
            let cells = g.rows * g.cols;
            for (name, list) in [("slow", &g.slow), ("obstacle", &g.obstacles), ("charging", &g.charging)] {
                if let Some(v) = list.iter().find(|&&v| v == 0 || v > cells) {
                    return Err(ModelError::Invalid(format!("{name} cell {v} is outside the grid")));
                }
            }
            InstanceParts::from_grid(GridShorthand {
                rows: g.rows,
                cols: g.cols,
                slow: g.slow.into_iter().collect(),
                obstacles: g.obstacles.into_iter().collect(),
                charging: g.charging.into_iter().collect(),
            })
        }
        (None, Some(vs)) => {
            let mut edges = BTreeMap::new();
            for e in doc.edges.unwrap_or_default() {
                let key = (e.u.min(e.v), e.u.max(e.v));
                if e.u == e.v {
                    return Err(ModelError::Invalid(format!("self-loop edge at vertex {}", e.u)));
                }
                if edges.insert(key, e.mode).is_some() {
                    return Err(ModelError::Invalid(format!("edge ({},{}) listed twice", e.u, e.v)));
                }
            }
            InstanceParts {
                vertices: vs.into_iter().collect(),
                edges,
                obstacles: doc.obstacles.unwrap_or_default().into_iter().collect(),
                charging: doc.charging.unwrap_or_default().into_iter().collect(),
                ..Default::default()
            }
        }
        (Some(_), Some(_)) => {
            return Err(ModelError::Parse("give either \"grid\" or \"vertices\", not both".into()))
        }
        (None, None) => {
            return Err(ModelError::Parse("missing \"grid\" or \"vertices\"".into()))
        }
    };
    parts.endpoints = doc.endpoints.map(|e| e.into_iter().collect());
    parts.max_battery = doc.max_battery;
    parts.tau = doc.tau;
    parts.objective = doc.objective;
    parts.agents = doc
        .agents
        .into_iter()
        .map(|a| AgentSpec {
            id: a.id,
            init: a.init,
            goal: a.goal,
            waypoints: a.waypoints.into_iter().collect(),
            init_battery: a.init_battery,
        })
        .collect();
    Instance::with_options(parts, opts)
}

pub fn instance_to_value(inst: &Instance) -> serde_json::Value {
    let mut doc = InstanceDoc {
        grid: None,
        vertices: None,
        edges: None,
        obstacles: None,
        charging: None,
        endpoints: inst.endpoints.as_ref().map(|e| e.iter().copied().collect()),
        max_battery: inst.max_battery,
        tau: inst.tau,
        objective: inst.objective.clone(),
        agents: inst
            .agents
            .iter()
            .map(|a| AgentDoc {
                id: a.id,
                init: a.init,
                goal: a.goal,
                waypoints: a.waypoints.iter().copied().collect(),
                init_battery: a.init_battery,
            })
            .collect(),
    };
    match &inst.grid {
        Some(g) => {
            doc.grid = Some(GridDoc {
                rows: g.rows,
                cols: g.cols,
                slow: g.slow.iter().copied().collect(),
                obstacles: g.obstacles.iter().copied().collect(),
                charging: g.charging.iter().copied().collect(),
            })
        }
        None => {
            doc.vertices = Some(inst.vertices.iter().copied().collect());
            doc.edges = Some(
                inst.edges
                    .iter()
                    .map(|(&(u, v), &mode)| EdgeDoc { u, v, mode })
                    .collect(),
            );
            doc.obstacles = Some(inst.obstacles.iter().copied().collect());
            doc.charging = Some(inst.charging.iter().copied().collect());
        }
    }
    serde_json::to_value(doc).expect("instance documents always serialize")
}

pub fn save_instance(inst: &Instance) -> String {
    serde_json::to_string_pretty(&instance_to_value(inst)).expect("serializable")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepDoc {
    t: u32,
    loc: Location,
    battery: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentPlanDoc {
    id: AgentId,
    steps: Vec<StepDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDoc {
    agents: Vec<AgentPlanDoc>,
}

pub fn load_plan(doc: &str, inst: &Instance) -> Result<Plan, ModelError> {
    let value: serde_json::Value = serde_json::from_str(doc).map_err(parse_err)?;
    plan_from_value(value, inst)
}

pub fn plan_from_value(value: serde_json::Value, inst: &Instance) -> Result<Plan, ModelError> {
    let doc: PlanDoc = serde_json::from_value(value).map_err(parse_err)?;
    let mut agents = BTreeMap::new();
    for a in doc.agents {
        let steps = a
            .steps
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if s.t as usize != i {
                    Err(ModelError::Structure(format!(
                        "agent {}: step {i} is labelled t={}, steps must be contiguous from 0",
                        a.id, s.t
                    )))
                } else {
                    Ok(Step {
                        loc: s.loc,
                        battery: s.battery,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        if agents.insert(a.id, AgentPlan { steps }).is_some() {
            return Err(ModelError::Structure(format!("agent {} listed twice", a.id)));
        }
    }
    let plan = Plan { agents };
    check_plan_structure(&plan, inst)?;
    Ok(plan)
}

/// Structural checks only: coverage of agents, endpoints, horizon, ranges.
pub fn check_plan_structure(plan: &Plan, inst: &Instance) -> Result<(), ModelError> {
    let err = |msg: String| Err(ModelError::Structure(msg));
    for id in plan.agents.keys() {
        if inst.agent(*id).is_none() {
            return err(format!("plan mentions unknown agent {id}"));
        }
    }
    for spec in inst.agents() {
        let Some(p) = plan.agents.get(&spec.id) else {
            return err(format!("agent {} has no plan", spec.id));
        };
        let (Some(first), Some(last)) = (p.steps.first(), p.steps.last()) else {
            return err(format!("agent {} has an empty step list", spec.id));
        };
        if first.loc != Location::Vertex(spec.init) {
            return err(format!(
                "agent {} starts at {} instead of its init {}",
                spec.id, first.loc, spec.init
            ));
        }
        if last.loc.is_transit() {
            return err(format!("agent {} ends in transit", spec.id));
        }
        if last.loc != Location::Vertex(spec.goal) {
            return err(format!(
                "agent {} ends at {} instead of its goal {}",
                spec.id, last.loc, spec.goal
            ));
        }
        if p.length() > inst.tau() {
            return err(format!(
                "agent {} has plan length {} beyond tau {}",
                spec.id,
                p.length(),
                inst.tau()
            ));
        }
        for (t, s) in p.steps.iter().enumerate() {
            if let Location::Vertex(v) = s.loc {
                if !inst.vertices().contains(&v) {
                    return err(format!("agent {} at t={t} on unknown vertex {v}", spec.id));
                }
            }
            if s.battery > inst.max_battery() {
                return err(format!(
                    "agent {} at t={t} has battery {} above {}",
                    spec.id,
                    s.battery,
                    inst.max_battery()
                ));
            }
        }
    }
    Ok(())
}

pub fn plan_to_value(plan: &Plan) -> serde_json::Value {
    let doc = PlanDoc {
        agents: plan
            .agents
            .iter()
            .map(|(&id, p)| AgentPlanDoc {
                id,
                steps: p
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(t, s)| StepDoc {
                        t: t as u32,
                        loc: s.loc,
                        battery: s.battery,
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_value(doc).expect("plan documents always serialize")
}

pub fn save_plan(plan: &Plan) -> String {
    serde_json::to_string_pretty(&plan_to_value(plan)).expect("serializable")
}

/// Serde adapter for embedding plans in other documents.
pub mod plan_serde {
    use super::*;

    pub fn serialize<S: Serializer>(plan: &Plan, s: S) -> Result<S::Ok, S::Error> {
        plan_to_value(plan).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Plan, D::Error> {
        let doc = PlanDoc::deserialize(d)?;
        Ok(Plan {
            agents: doc
                .agents
                .into_iter()
                .map(|a| {
                    let steps = a
                        .steps
                        .into_iter()
                        .map(|s| Step {
                            loc: s.loc,
                            battery: s.battery,
                        })
                        .collect();
                    (a.id, AgentPlan { steps })
                })
                .collect(),
        })
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(plan: &Option<Plan>, s: S) -> Result<S::Ok, S::Error> {
            plan.as_ref().map(plan_to_value).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Plan>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(with = "super")] Plan);
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }
}

/// Serde adapter for embedding instances in other documents.
pub mod instance_serde {
    use super::*;

    pub fn serialize<S: Serializer>(inst: &Instance, s: S) -> Result<S::Ok, S::Error> {
        instance_to_value(inst).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Instance, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        instance_from_value(value, LoadOptions::default()).map_err(de::Error::custom)
    }
}
