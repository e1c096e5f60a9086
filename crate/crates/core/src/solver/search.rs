use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::time::Instant;

use crate::model::{AgentPlan, Instance, Location, Plan, Step};
use crate::semantics::{ConstraintFamily, FamilySet};

use super::{
    objective_priorities, HardConstraint, SoftConstraint, Solution, SolveConfig, SolveError,
};

const SLOTS: usize = 10;
type Cost = [i64; SLOTS];
const ZERO: Cost = [0; SLOTS];
const INF: u32 = u32::MAX / 4;

fn add(a: &Cost, b: &Cost) -> Cost {
    let mut out = *a;
    for (o, x) in out.iter_mut().zip(b) {
        *o += x;
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Pos {
    At(u16),
    Transit(u16, u16),
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
struct AState {
    pos: Pos,
    battery: u16,
    visited: u32,
    aux: Vec<u16>,
    done: bool,
}

impl AState {
    fn gone() -> Self {
        AState {
            pos: Pos::At(0),
            battery: 0,
            visited: 0,
            aux: Vec::new(),
            done: true,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
struct Key {
    t: u16,
    agents: Box<[AState]>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Mv {
    Gone,
    Stop,
    Wait(u16),
    Move(u16, u16),
    SlowStart(u16, u16),
    SlowFinish(u16, u16),
}

impl Mv {
    fn continues(self) -> bool {
        !matches!(self, Mv::Gone | Mv::Stop)
    }

    fn arrives(self) -> Option<u16> {
        match self {
            Mv::Wait(v) | Mv::Move(_, v) | Mv::SlowFinish(_, v) => Some(v),
            _ => None,
        }
    }
}

/// Number of collision-family atoms between two simultaneous moves.
fn clash(a: Mv, b: Mv) -> i64 {
    if let (Some(x), Some(y)) = (a.arrives(), b.arrives()) {
        if x == y {
            return 1;
        }
    }
    match (a, b) {
        (Mv::Move(x1, y1), Mv::Move(x2, y2)) if x1 != y1 && x1 == y2 && y1 == x2 => 1,
        (Mv::SlowStart(x1, y1), Mv::SlowStart(x2, y2)) if x1 == y2 && y1 == x2 => 1,
        (Mv::SlowStart(x1, y1), Mv::SlowFinish(x2, y2))
        | (Mv::SlowFinish(x2, y2), Mv::SlowStart(x1, y1))
            if x1 == y2 && y1 == x2 =>
        {
            1
        }
        _ => 0,
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Bound {
    goal_forced: i64,
    wp_forced: i64,
    lb: u32,
}

struct Opt {
    next: AState,
    delta: Cost,
    mv: Mv,
    bound: Bound,
}

#[derive(Debug)]
enum Rule {
    NoWait { x: u16, s: Option<u32> },
    WaitRun { x: u16, s: u32, n: u32, slot: usize },
    WaitCount { x: u16, s: u32, n: u32, slot: usize },
    NoCharge { x: Option<u16>, s: Option<u32> },
    ChargeCount { m: u32, slot: usize },
    NoVisit { x: u16, s: Option<u32> },
    NoMove { x: u16, y: u16, s: Option<u32> },
}

struct AgentCtx {
    init: u16,
    goal: u16,
    init_battery: u16,
    wp_mask: Vec<u32>,
    all_wp: u32,
    dist_goal: Vec<u32>,
    dist_wp: Vec<Vec<u32>>,
    wp_goal: Vec<u32>,
    rules: Vec<Rule>,
    naux: usize,
    fixed: Option<Vec<Option<u16>>>,
    limit: u32,
    refs: Option<HashSet<(u16, u16)>>,
    dead: bool,
}

struct Layout {
    soft: [Option<(usize, i64)>; 5],
    makespan: Option<usize>,
    length: Option<usize>,
    charges: Option<usize>,
    dev: usize,
    tie_len: usize,
}

impl Layout {
    fn new(inst: &Instance, soft: &[SoftConstraint], cfg: &SolveConfig) -> Result<Self, SolveError> {
        let objective = objective_priorities(inst, cfg);
        if let (Some(s), Some(o)) = (
            soft.iter().map(|s| s.priority).min(),
            objective.iter().map(|o| o.1).max(),
        ) {
            if s <= o {
                return Err(SolveError::Priority {
                    soft: s,
                    objective: o,
                });
            }
        }
        let mut levels: Vec<i32> = soft
            .iter()
            .map(|s| s.priority)
            .chain(objective.iter().map(|o| o.1))
            .collect();
        levels.sort_unstable_by(|a, b| b.cmp(a));
        levels.dedup();
        if levels.len() + 2 > SLOTS {
            return Err(SolveError::Config("too many priority levels".into()));
        }
        let slot = |p: i32| levels.iter().position(|&l| l == p).expect("level listed");
        let mut layout = Layout {
            soft: [None; 5],
            makespan: None,
            length: None,
            charges: None,
            dev: levels.len(),
            tie_len: levels.len() + 1,
        };
        for s in soft {
            let entry = &mut layout.soft[s.family as usize];
            if entry.is_none() {
                *entry = Some((slot(s.priority), i64::from(s.weight)));
            }
        }
        for (term, p) in objective {
            let target = match term {
                crate::model::Objective::Makespan => &mut layout.makespan,
                crate::model::Objective::TotalPlanLength => &mut layout.length,
                crate::model::Objective::TotalChargeCount => &mut layout.charges,
            };
            *target = Some(slot(p));
        }
        Ok(layout)
    }

    fn soft(&self, f: ConstraintFamily) -> Option<(usize, i64)> {
        self.soft[f as usize]
    }
}

pub(super) struct Ctx<'a> {
    inst: &'a Instance,
    vid: Vec<u32>,
    adj: Vec<Vec<(u16, bool)>>,
    obstacle: Vec<bool>,
    charging: Vec<bool>,
    dist_charger: Vec<u32>,
    b: u16,
    agents: Vec<AgentCtx>,
    layout: Layout,
    hard: FamilySet,
    /// Every softened family outranks every objective term.
    soft_ranks_first: bool,
}

fn dijkstra(adj: &[Vec<(u16, bool)>], blocked: &[bool], sources: &[u16]) -> Vec<u32> {
    let mut dist = vec![INF; adj.len()];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s as usize] = 0;
        heap.push(Reverse((0u32, s)));
    }
    while let Some(Reverse((d, v))) = heap.pop() {
        if d > dist[v as usize] {
            continue;
        }
        for &(u, slow) in &adj[v as usize] {
            if blocked[u as usize] {
                continue;
            }
            let nd = d + if slow { 2 } else { 1 };
            if nd < dist[u as usize] {
                dist[u as usize] = nd;
                heap.push(Reverse((nd, u)));
            }
        }
    }
    dist
}

impl<'a> Ctx<'a> {
    pub(super) fn new(
        inst: &'a Instance,
        hard: &[HardConstraint],
        soft: &[SoftConstraint],
        cfg: &SolveConfig,
    ) -> Result<Self, SolveError> {
        let vid: Vec<u32> = inst.vertices().iter().copied().collect();
        let index: HashMap<u32, u16> = vid.iter().enumerate().map(|(i, &v)| (v, i as u16)).collect();
        let idx = |v: u32| index.get(&v).copied().ok_or(SolveError::UnknownVertex(v));
        let adj: Vec<Vec<(u16, bool)>> = vid
            .iter()
            .map(|&v| {
                inst.neighbors(v)
                    .iter()
                    .map(|&(u, mode)| (index[&u], mode == crate::model::EdgeMode::Slow))
                    .collect()
            })
            .collect();
        let obstacle: Vec<bool> = vid.iter().map(|&v| inst.is_obstacle(v)).collect();
        let charging: Vec<bool> = vid.iter().map(|&v| inst.is_charging(v)).collect();
        let softened: FamilySet = soft.iter().map(|s| s.family).collect();
        let hard_families = FamilySet::ALL.difference(softened);
        let blocked = if hard_families.contains(ConstraintFamily::Obstacle) {
            obstacle.clone()
        } else {
            vec![false; vid.len()]
        };
        let chargers: Vec<u16> = (0..vid.len() as u16).filter(|&i| charging[i as usize]).collect();
        let dist_charger = dijkstra(&adj, &blocked, &chargers);
        let layout = Layout::new(inst, soft, cfg)?;
        let top_objective = super::objective_priorities(inst, cfg).iter().map(|&(_, p)| p).max();
        let soft_ranks_first = soft.iter().all(|s| top_objective.is_none_or(|p| s.priority > p));
        let b = inst.max_battery() as u16;

        for c in hard {
            if inst.agent(c.agent()).is_none() {
                return Err(SolveError::UnknownAgent(c.agent()));
            }
            for v in c.vertices() {
                idx(v)?;
            }
        }

        let mut agents = Vec::new();
        for spec in inst.agents() {
            if spec.waypoints.len() > 32 {
                return Err(SolveError::TooManyWaypoints(spec.id));
            }
            let init = idx(spec.init)?;
            let goal = idx(spec.goal)?;
            let wps: Vec<u16> = spec.waypoints.iter().map(|&w| idx(w)).collect::<Result<_, _>>()?;
            let mut wp_mask = vec![0u32; vid.len()];
            for (k, &w) in wps.iter().enumerate() {
                wp_mask[w as usize] |= 1 << k;
            }
            let dist_goal = dijkstra(&adj, &blocked, &[goal]);
            let dist_wp: Vec<Vec<u32>> = wps.iter().map(|&w| dijkstra(&adj, &blocked, &[w])).collect();
            let wp_goal = wps.iter().map(|&w| dist_goal[w as usize]).collect();
            let refs = cfg.reference.as_ref().map(|plan| {
                let mut set = HashSet::new();
                if let Some(p) = plan.agent(spec.id) {
                    let seq = p.locations();
                    for t in 0..seq.len() {
                        let Some(x) = seq[t].vertex().and_then(|v| index.get(&v)) else {
                            continue;
                        };
                        let next = match seq.get(t + 1) {
                            Some(Location::InTransit) => seq.get(t + 2),
                            other => other,
                        };
                        if let Some(y) = next.and_then(|l| l.vertex()).and_then(|v| index.get(&v)) {
                            if x != y {
                                set.insert((*x, *y));
                            }
                        }
                    }
                }
                set
            });
            let mut ag = AgentCtx {
                init,
                goal,
                init_battery: spec.init_battery as u16,
                all_wp: if wps.len() == 32 { u32::MAX } else { (1u32 << wps.len()) - 1 },
                wp_mask,
                dist_goal,
                dist_wp,
                wp_goal,
                rules: Vec::new(),
                naux: 0,
                fixed: None,
                limit: inst.tau(),
                refs,
                dead: false,
            };
            for c in hard.iter().filter(|c| c.agent() == spec.id) {
                compile_rule(&mut ag, c, &idx);
            }
            agents.push(ag);
        }
        Ok(Ctx {
            inst,
            vid,
            adj,
            obstacle,
            charging,
            dist_charger,
            b,
            agents,
            layout,
            hard: hard_families,
            soft_ranks_first,
        })
    }

    fn bound(&self, ai: usize, t: u32, st: &AState) -> Option<Bound> {
        if st.done {
            return Some(Bound::default());
        }
        let ag = &self.agents[ai];
        if t > ag.limit {
            return None;
        }
        if let Some(fixed) = &ag.fixed {
            return Some(Bound {
                lb: fixed.len() as u32 - 1 - t,
                ..Bound::default()
            });
        }
        let (v, extra) = match st.pos {
            Pos::At(v) => (v as usize, 0),
            Pos::Transit(_, y) => (y as usize, 1),
        };
        let rem = ag.limit - t;
        let goal_hard = self.hard.contains(ConstraintFamily::Goal);
        let wp_hard = self.hard.contains(ConstraintFamily::Waypoint);
        let mut out = Bound::default();
        let pending = (0..ag.dist_wp.len()).filter(|&k| st.visited & (1 << k) == 0);
        // Steps needed to end at the goal after every hard waypoint.
        let mut finish = extra + ag.dist_goal[v];
        for k in pending.clone() {
            let dw = extra + ag.dist_wp[k][v];
            if wp_hard {
                if dw > rem {
                    return None;
                }
                finish = finish.max(dw.saturating_add(ag.wp_goal[k]));
            } else if (if goal_hard { dw.saturating_add(ag.wp_goal[k]) } else { dw }) > rem {
                out.wp_forced += 1;
            }
        }
        let reach_goal = finish <= rem;
        if !reach_goal && goal_hard {
            return None;
        }
        // Off-goal plans run to the horizon, so `rem` bounds them too.
        let energy = finish.min(rem);
        if reach_goal {
            out.lb = finish;
            if !wp_hard && self.soft_ranks_first {
                // Skipping a reachable soft waypoint costs more than any
                // detour, so its detour can count towards the bound.
                for k in pending {
                    let need = (extra + ag.dist_wp[k][v]).saturating_add(ag.wp_goal[k]);
                    if need <= rem {
                        out.lb = out.lb.max(need);
                    }
                }
            }
        } else {
            out.goal_forced = 1;
            out.lb = rem;
        }
        if self.hard.contains(ConstraintFamily::Battery) && energy > 0 {
            let level = match st.pos {
                Pos::At(_) => u32::from(st.battery),
                Pos::Transit(..) => {
                    if st.battery == 0 {
                        return None;
                    }
                    u32::from(st.battery) - 1
                }
            };
            let energy = energy - extra;
            if energy > level && (level == 0 || self.dist_charger[v] > level - 1) {
                return None;
            }
        }
        Some(out)
    }

    fn can_stop(&self, ai: usize, t: u32, st: &AState, v: u16) -> bool {
        let ag = &self.agents[ai];
        // Only agents at their goal leave early; others stay until the horizon.
        if v != ag.goal && (self.hard.contains(ConstraintFamily::Goal) || t != ag.limit) {
            return false;
        }
        if self.hard.contains(ConstraintFamily::Waypoint) && st.visited != ag.all_wp {
            return false;
        }
        match &ag.fixed {
            Some(f) => t as usize + 1 == f.len(),
            None => true,
        }
    }

    fn rules_ok(&self, ag: &AgentCtx, t: u32, from: Pos, to: Pos, charge: bool, aux: &mut [u16]) -> bool {
        let wait_at = |x: u16| from == Pos::At(x) && to == Pos::At(x);
        let when = |s: Option<u32>| s.is_none_or(|s| s == t);
        for rule in &ag.rules {
            match *rule {
                Rule::NoWait { x, s } => {
                    if when(s) && wait_at(x) {
                        return false;
                    }
                }
                Rule::WaitRun { x, s, n, slot } => {
                    let t1 = t + 1;
                    if t1 == s {
                        aux[slot] = u16::from(to == Pos::At(x));
                    } else if t1 > s && t1 <= s + n {
                        if to != Pos::At(x) {
                            aux[slot] = 0;
                        }
                        if t1 == s + n && aux[slot] == 1 {
                            return false;
                        }
                    }
                }
                Rule::WaitCount { x, s, n, slot } => {
                    if t >= s && t < s + n && wait_at(x) {
                        aux[slot] += 1;
                        if u32::from(aux[slot]) >= n {
                            return false;
                        }
                    }
                }
                Rule::NoCharge { x, s } => {
                    if charge && x.is_none_or(|x| from == Pos::At(x)) && when(s) {
                        return false;
                    }
                }
                Rule::ChargeCount { m, slot } => {
                    if charge {
                        aux[slot] += 1;
                        if u32::from(aux[slot]) >= m {
                            return false;
                        }
                    }
                }
                Rule::NoVisit { x, s } => {
                    if to == Pos::At(x) && s.is_none_or(|s| s == t + 1) {
                        return false;
                    }
                }
                Rule::NoMove { x, y, s } => {
                    if when(s) && from == Pos::At(x) && (to == Pos::At(y) || to == Pos::Transit(x, y)) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn agent_options(&self, ai: usize, t: u32, st: &AState, out: &mut Vec<Opt>) {
        out.clear();
        if st.done {
            out.push(Opt {
                next: AState::gone(),
                delta: ZERO,
                mv: Mv::Gone,
                bound: Bound::default(),
            });
            return;
        }
        let ag = &self.agents[ai];
        let lay = &self.layout;
        if let Pos::At(v) = st.pos {
            if self.can_stop(ai, t, st, v) {
                let mut delta = ZERO;
                if let Some((slot, w)) = lay.soft(ConstraintFamily::Goal) {
                    if v != ag.goal {
                        delta[slot] += w;
                    }
                }
                if let Some((slot, w)) = lay.soft(ConstraintFamily::Waypoint) {
                    delta[slot] += w * i64::from((ag.all_wp & !st.visited).count_ones());
                }
                out.push(Opt {
                    next: AState::gone(),
                    delta,
                    mv: Mv::Stop,
                    bound: Bound::default(),
                });
            }
        }
        if t + 1 > ag.limit {
            return;
        }
        let empty = st.battery == 0;
        if empty && self.hard.contains(ConstraintFamily::Battery) {
            return;
        }
        let obstacle_hard = self.hard.contains(ConstraintFamily::Obstacle);
        let mut moves: Vec<(Mv, Pos)> = Vec::new();
        match st.pos {
            Pos::At(v) => {
                moves.push((Mv::Wait(v), Pos::At(v)));
                for &(u, slow) in &self.adj[v as usize] {
                    if obstacle_hard && self.obstacle[u as usize] {
                        continue;
                    }
                    if !slow {
                        moves.push((Mv::Move(v, u), Pos::At(u)));
                    } else if t + 2 <= ag.limit {
                        moves.push((Mv::SlowStart(v, u), Pos::Transit(v, u)));
                    }
                }
            }
            Pos::Transit(x, y) => moves.push((Mv::SlowFinish(x, y), Pos::At(y))),
        }
        let at_charger = matches!(st.pos, Pos::At(v) if self.charging[v as usize]);
        let dec = st.battery.saturating_sub(1);
        for (mv, np) in moves {
            if let Some(fixed) = &ag.fixed {
                let want = fixed[t as usize + 1];
                let ok = match np {
                    Pos::At(u) => want == Some(u),
                    Pos::Transit(..) => want.is_none(),
                };
                if !ok {
                    continue;
                }
            }
            for charge in [false, true] {
                if charge && !at_charger {
                    continue;
                }
                let nb = if charge { self.b } else { dec };
                let mut aux = st.aux.clone();
                if !self.rules_ok(ag, t, st.pos, np, charge, &mut aux) {
                    continue;
                }
                let visited = match np {
                    Pos::At(u) => st.visited | ag.wp_mask[u as usize],
                    Pos::Transit(..) => st.visited,
                };
                let next = AState {
                    pos: np,
                    battery: nb,
                    visited,
                    aux,
                    done: false,
                };
                let Some(bound) = self.bound(ai, t + 1, &next) else {
                    continue;
                };
                let mut delta = ZERO;
                if let Some(s) = lay.length {
                    delta[s] += 1;
                }
                delta[lay.tie_len] += 1;
                if charge {
                    if let Some(s) = lay.charges {
                        delta[s] += 1;
                    }
                }
                if let Pos::At(u) = np {
                    if self.obstacle[u as usize] {
                        if let Some((s, w)) = lay.soft(ConstraintFamily::Obstacle) {
                            delta[s] += w;
                        }
                    }
                }
                if empty {
                    if let Some((s, w)) = lay.soft(ConstraintFamily::Battery) {
                        delta[s] += w;
                    }
                }
                if let (Some(refs), Mv::Move(x, y) | Mv::SlowStart(x, y)) = (&ag.refs, mv) {
                    if !refs.contains(&(x, y)) {
                        delta[lay.dev] += 1;
                    }
                }
                out.push(Opt {
                    next,
                    delta,
                    mv,
                    bound,
                });
            }
        }
    }

    fn heuristic(&self, bounds: impl Iterator<Item = Bound>) -> Cost {
        let lay = &self.layout;
        let mut h = ZERO;
        let (mut max, mut sum) = (0i64, 0i64);
        for b in bounds {
            if let Some((s, w)) = lay.soft(ConstraintFamily::Goal) {
                h[s] += w * b.goal_forced;
            }
            if let Some((s, w)) = lay.soft(ConstraintFamily::Waypoint) {
                h[s] += w * b.wp_forced;
            }
            max = max.max(i64::from(b.lb));
            sum += i64::from(b.lb);
        }
        if let Some(s) = lay.makespan {
            h[s] += max;
        }
        if let Some(s) = lay.length {
            h[s] += sum;
        }
        h[lay.tie_len] += sum;
        h
    }

    fn root(&self) -> Option<(Key, Cost, Cost)> {
        let mut states = Vec::new();
        let mut bounds = Vec::new();
        for (ai, ag) in self.agents.iter().enumerate() {
            if ag.dead {
                return None;
            }
            let mut aux = vec![0u16; ag.naux];
            for rule in &ag.rules {
                match *rule {
                    Rule::NoVisit { x, s } if x == ag.init && s.is_none_or(|s| s == 0) => return None,
                    Rule::WaitRun { x, s: 0, slot, .. } => aux[slot] = u16::from(x == ag.init),
                    _ => {}
                }
            }
            if let Some(f) = &ag.fixed {
                if f[0] != Some(ag.init) {
                    return None;
                }
            }
            let st = AState {
                pos: Pos::At(ag.init),
                battery: ag.init_battery,
                visited: ag.wp_mask[ag.init as usize],
                aux,
                done: false,
            };
            bounds.push(self.bound(ai, 0, &st)?);
            states.push(st);
        }
        let mut g = ZERO;
        let mut clashes = 0;
        for i in 0..self.agents.len() {
            for j in 0..i {
                if self.agents[i].init == self.agents[j].init {
                    clashes += 1;
                }
            }
        }
        if clashes > 0 {
            let (s, w) = self.layout.soft(ConstraintFamily::Collision)?;
            g[s] += w * clashes;
        }
        let h = self.heuristic(bounds.into_iter());
        Some((
            Key {
                t: 0,
                agents: states.into_boxed_slice(),
            },
            g,
            h,
        ))
    }

    /// Successors of `key` as `(next key or None for termination, g, f)`.
    fn expand(&self, key: &Key, g: &Cost, out: &mut Vec<(Option<Key>, Cost, Cost)>) {
        out.clear();
        let t = u32::from(key.t);
        let mut opts: Vec<Vec<Opt>> = Vec::with_capacity(key.agents.len());
        for (ai, st) in key.agents.iter().enumerate() {
            let mut v = Vec::new();
            self.agent_options(ai, t, st, &mut v);
            if v.is_empty() {
                return;
            }
            opts.push(v);
        }
        let collision = self.layout.soft(ConstraintFamily::Collision);
        let mut chosen: Vec<usize> = Vec::with_capacity(opts.len());
        self.combine(&opts, &mut chosen, ZERO, collision, key.t, g, out);
    }

    #[allow(clippy::too_many_arguments)]
    fn combine(
        &self,
        opts: &[Vec<Opt>],
        chosen: &mut Vec<usize>,
        delta: Cost,
        collision: Option<(usize, i64)>,
        t: u16,
        g: &Cost,
        out: &mut Vec<(Option<Key>, Cost, Cost)>,
    ) {
        let i = chosen.len();
        if i == opts.len() {
            let picked = || chosen.iter().enumerate().map(|(a, &k)| &opts[a][k]);
            let mut total = add(g, &delta);
            if !picked().any(|o| o.mv.continues()) {
                out.push((None, total, total));
                return;
            }
            if let Some(s) = self.layout.makespan {
                total[s] += 1;
            }
            let h = self.heuristic(picked().map(|o| o.bound));
            let agents: Box<[AState]> = picked().map(|o| o.next.clone()).collect();
            out.push((Some(Key { t: t + 1, agents }), total, add(&total, &h)));
            return;
        }
        for (k, o) in opts[i].iter().enumerate() {
            let mut hits = 0;
            if o.mv.continues() {
                for (j, &kj) in chosen.iter().enumerate() {
                    hits += clash(opts[j][kj].mv, o.mv);
                }
            }
            let mut d = add(&delta, &o.delta);
            if hits > 0 {
                match collision {
                    Some((s, w)) => d[s] += w * hits,
                    None => continue,
                }
            }
            chosen.push(k);
            self.combine(opts, chosen, d, collision, t, g, out);
            chosen.pop();
        }
    }

    fn plan_of(&self, path: &[&Key]) -> Plan {
        let mut plan = Plan::default();
        for (ai, spec) in self.inst.agents().iter().enumerate() {
            let steps = path
                .iter()
                .map(|k| &k.agents[ai])
                .take_while(|s| !s.done)
                .map(|s| Step {
                    loc: match s.pos {
                        Pos::At(v) => Location::Vertex(self.vid[v as usize]),
                        Pos::Transit(..) => Location::InTransit,
                    },
                    battery: u32::from(s.battery),
                })
                .collect();
            plan.agents.insert(spec.id, AgentPlan { steps });
        }
        plan
    }
}

fn compile_rule(ag: &mut AgentCtx, c: &HardConstraint, idx: &dyn Fn(u32) -> Result<u16, SolveError>) {
    use HardConstraint as H;
    let v = |x: &u32| idx(*x).expect("vertices checked");
    let mut slot = || {
        ag.naux += 1;
        ag.naux - 1
    };
    let rule = match c {
        H::ForbidWait { x, .. } => Rule::NoWait { x: v(x), s: None },
        H::ForbidWaitAt { x, s, .. } => Rule::NoWait { x: v(x), s: Some(*s) },
        H::ForbidWaitRun { x, s, n: 0, .. } => Rule::NoVisit { x: v(x), s: Some(*s) },
        H::ForbidWaitRun { x, s, n, .. } => Rule::WaitRun {
            x: v(x),
            s: *s,
            n: *n,
            slot: slot(),
        },
        H::CapWaitCount { n: 0, .. } | H::CapChargeCount { m: 0, .. } | H::CapPlanLength { l: 0, .. } => {
            ag.dead = true;
            return;
        }
        H::CapWaitCount { x, s, n, .. } => Rule::WaitCount {
            x: v(x),
            s: *s,
            n: *n,
            slot: slot(),
        },
        H::ForbidChargeAt { x, .. } => Rule::NoCharge { x: Some(v(x)), s: None },
        H::ForbidChargeTime { s, .. } => Rule::NoCharge { x: None, s: Some(*s) },
        H::ForbidChargeAtTime { x, s, .. } => Rule::NoCharge {
            x: Some(v(x)),
            s: Some(*s),
        },
        H::CapChargeCount { m, .. } => Rule::ChargeCount { m: *m, slot: slot() },
        H::CapPlanLength { l, .. } => {
            ag.limit = ag.limit.min(l - 1);
            return;
        }
        H::ForbidVisit { x, .. } => Rule::NoVisit { x: v(x), s: None },
        H::ForbidVisitAt { x, s, .. } => Rule::NoVisit { x: v(x), s: Some(*s) },
        H::ForbidMove { x, y, .. } => Rule::NoMove {
            x: v(x),
            y: v(y),
            s: None,
        },
        H::ForbidMoveAt { x, y, s, .. } => Rule::NoMove {
            x: v(x),
            y: v(y),
            s: Some(*s),
        },
        H::FixTraversal { locations, .. } => {
            let seq: Vec<Option<u16>> = locations.iter().map(|l| l.vertex().map(|x| v(&x))).collect();
            if seq.is_empty() || seq.len() as u32 - 1 > ag.limit || ag.fixed.as_ref().is_some_and(|f| *f != seq) {
                ag.dead = true;
            } else {
                ag.limit = ag.limit.min(seq.len() as u32 - 1);
                ag.fixed = Some(seq);
            }
            return;
        }
    };
    ag.rules.push(rule);
}

pub(super) struct Raw {
    pub best: Option<Solution>,
    pub complete: bool,
    pub nodes: u64,
    pub models: u64,
}

struct Budget {
    deadline: Option<Instant>,
    node_limit: Option<u64>,
    nodes: u64,
    exhausted: bool,
}

impl Budget {
    fn tick(&mut self) -> bool {
        self.nodes += 1;
        if self.node_limit.is_some_and(|l| self.nodes > l) {
            self.exhausted = true;
        }
        if self.nodes.is_multiple_of(256) && self.deadline.is_some_and(|d| Instant::now() >= d) {
            self.exhausted = true;
        }
        !self.exhausted
    }
}

type Emit<'e> = dyn FnMut(Plan, &mut u64) -> Solution + 'e;

struct Incumbent {
    cost: Cost,
    solution: Solution,
}

/// Expansions spent on depth-first probing before switching to best-first
/// search in anytime mode.
const PROBE_NODES: u64 = 100_000;

/// Runs the search. In anytime mode a `seed` context (the same problem
/// with extra hard constraints) is solved first to obtain an incumbent.
pub(super) fn run(
    ctx: &Ctx,
    seed: Option<&Ctx>,
    deadline: Option<Instant>,
    node_limit: Option<u64>,
    emit: &mut Emit,
) -> Raw {
    let mut budget = Budget {
        deadline,
        node_limit,
        nodes: 0,
        exhausted: false,
    };
    let mut models = 0;
    let Some((root, g0, f0)) = ctx.root() else {
        return Raw {
            best: None,
            complete: true,
            nodes: 0,
            models: 0,
        };
    };
    let mut best: Option<Incumbent> = None;
    if let Some(seed) = seed.filter(|_| deadline.is_some()) {
        if let Some((sroot, sg, sf)) = seed.root() {
            astar(seed, sroot, sg, sf, &mut budget, &mut best, &mut models, emit);
        }
    }
    if deadline.is_some() {
        let mut probe = Probe {
            ctx,
            tt: HashMap::new(),
            path: vec![root.clone()],
            budget: &mut budget,
            cap: PROBE_NODES,
            aborted: false,
            best: &mut best,
            models: &mut models,
            emit,
        };
        probe.dfs(&g0);
        let aborted = probe.aborted;
        if !aborted {
            return Raw {
                best: best.map(|b| b.solution),
                complete: true,
                nodes: budget.nodes,
                models,
            };
        }
        if budget.exhausted {
            return Raw {
                best: best.map(|b| b.solution),
                complete: false,
                nodes: budget.nodes,
                models,
            };
        }
    }
    let complete = astar(ctx, root, g0, f0, &mut budget, &mut best, &mut models, emit);
    Raw {
        best: best.map(|b| b.solution),
        complete,
        nodes: budget.nodes,
        models,
    }
}

struct Probe<'c, 'a, 'e> {
    ctx: &'c Ctx<'a>,
    tt: HashMap<Key, Cost>,
    path: Vec<Key>,
    budget: &'c mut Budget,
    cap: u64,
    aborted: bool,
    best: &'c mut Option<Incumbent>,
    models: &'c mut u64,
    emit: &'c mut Emit<'e>,
}

impl Probe<'_, '_, '_> {
    fn dfs(&mut self, g: &Cost) {
        if !self.budget.tick() || self.budget.nodes > self.cap {
            self.aborted = true;
            return;
        }
        let mut succ = Vec::new();
        self.ctx.expand(self.path.last().expect("nonempty path"), g, &mut succ);
        succ.sort_by_key(|s| s.2);
        for (key, g2, f2) in succ {
            if self.best.as_ref().is_some_and(|b| f2 >= b.cost) {
                break;
            }
            match key {
                None => {
                    let refs: Vec<&Key> = self.path.iter().collect();
                    let plan = self.ctx.plan_of(&refs);
                    let solution = (self.emit)(plan, self.models);
                    *self.best = Some(Incumbent { cost: g2, solution });
                }
                Some(key) => {
                    if self.tt.get(&key).is_some_and(|old| *old <= g2) {
                        continue;
                    }
                    self.tt.insert(key.clone(), g2);
                    self.path.push(key);
                    self.dfs(&g2);
                    self.path.pop();
                    if self.aborted {
                        return;
                    }
                }
            }
        }
    }
}

struct Node {
    key: Option<Key>,
    parent: u32,
    g: Cost,
}

#[allow(clippy::too_many_arguments)]
fn astar(
    ctx: &Ctx,
    root: Key,
    g0: Cost,
    f0: Cost,
    budget: &mut Budget,
    best: &mut Option<Incumbent>,
    models: &mut u64,
    emit: &mut Emit,
) -> bool {
    let mut nodes = vec![Node {
        key: Some(root.clone()),
        parent: u32::MAX,
        g: g0,
    }];
    let mut index: HashMap<Key, u32> = HashMap::new();
    index.insert(root, 0);
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push((Reverse(f0), 0u16, Reverse(seq), 0u32));
    let mut succ = Vec::new();
    while let Some((Reverse(f), _, _, id)) = heap.pop() {
        if best.as_ref().is_some_and(|b| f >= b.cost) {
            return true;
        }
        let node = &nodes[id as usize];
        let Some(key) = &node.key else {
            let mut path = Vec::new();
            let mut cur = node.parent;
            while cur != u32::MAX {
                let n = &nodes[cur as usize];
                path.push(n.key.as_ref().expect("inner node"));
                cur = n.parent;
            }
            path.reverse();
            let plan = ctx.plan_of(&path);
            let cost = node.g;
            let solution = emit(plan, models);
            *best = Some(Incumbent { cost, solution });
            return true;
        };
        if index.get(key) != Some(&id) {
            continue;
        }
        if !budget.tick() {
            return false;
        }
        let g = node.g;
        let key = key.clone();
        ctx.expand(&key, &g, &mut succ);
        for (next, g2, f2) in succ.drain(..) {
            if best.as_ref().is_some_and(|b| f2 >= b.cost) {
                continue;
            }
            let depth = next.as_ref().map_or(u16::MAX, |k| k.t);
            if let Some(k) = &next {
                if let Some(&old) = index.get(k) {
                    if nodes[old as usize].g <= g2 {
                        continue;
                    }
                }
            }
            let nid = nodes.len() as u32;
            if let Some(k) = &next {
                index.insert(k.clone(), nid);
            }
            nodes.push(Node {
                key: next,
                parent: id,
                g: g2,
            });
            seq += 1;
            heap.push((Reverse(f2), depth, Reverse(seq), nid));
        }
    }
    true
}
