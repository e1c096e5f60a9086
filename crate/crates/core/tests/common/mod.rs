//! Brute-force reference solver and an independent plan checker.
//!
//! Everything here is written from the semantics directly and shares no
//! search code with the library; only the data types are reused.
#![allow(dead_code)]

pub mod props;
pub mod querysem;
pub mod scenarios;

use std::collections::{BTreeMap, HashMap};

use mmapf_core::model::{AgentId, AgentPlan, AgentSpec, EdgeMode, Instance, Location, Objective, Plan, Step};
use mmapf_core::semantics::ConstraintFamily;
use mmapf_core::solver::{objective_priorities, CostVector, HardConstraint, SoftConstraint, SolveConfig};

use Location::{InTransit, Vertex};

pub struct Problem<'a> {
    pub inst: &'a Instance,
    pub hard: &'a [HardConstraint],
    pub soft: &'a [SoftConstraint],
    pub cfg: &'a SolveConfig,
}

/// Cost levels in descending priority order.
struct Levels {
    prios: Vec<i32>,
}

impl Levels {
    fn new(p: &Problem) -> Levels {
        let mut prios: Vec<i32> = p.soft.iter().map(|s| s.priority).collect();
        prios.extend(objective_priorities(p.inst, p.cfg).into_iter().map(|(_, pr)| pr));
        prios.sort_unstable_by(|a, b| b.cmp(a));
        prios.dedup();
        Levels { prios }
    }

    fn slot(&self, prio: i32) -> usize {
        self.prios.iter().position(|&p| p == prio).unwrap()
    }

    fn zero(&self) -> Vec<i64> {
        vec![0; self.prios.len()]
    }

    fn to_cost(&self, v: &[i64]) -> CostVector {
        CostVector(self.prios.iter().copied().zip(v.iter().copied()).collect())
    }
}

fn add(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn soft_weight(p: &Problem, fam: ConstraintFamily) -> Option<(i32, i64)> {
    p.soft
        .iter()
        .find(|s| s.family == fam)
        .map(|s| (s.priority, i64::from(s.weight)))
}

fn edge(inst: &Instance, u: u32, v: u32) -> Option<EdgeMode> {
    inst.edges().get(&(u.min(v), u.max(v))).copied()
}

/// Per-agent cost that does not depend on other agents, or `None` when a
/// hard family rules the plan out.
fn own_cost(p: &Problem, lv: &Levels, spec: &AgentSpec, steps: &[Step]) -> Option<Vec<i64>> {
    let inst = p.inst;
    let last = steps.len() - 1;
    let mut counts: BTreeMap<ConstraintFamily, i64> = BTreeMap::new();
    if steps[last].loc != Vertex(spec.goal) {
        *counts.entry(ConstraintFamily::Goal).or_default() += 1;
    }
    for &w in &spec.waypoints {
        if !steps.iter().any(|s| s.loc == Vertex(w)) {
            *counts.entry(ConstraintFamily::Waypoint).or_default() += 1;
        }
    }
    for s in steps {
        if let Vertex(x) = s.loc {
            if inst.obstacles().contains(&x) {
                *counts.entry(ConstraintFamily::Obstacle).or_default() += 1;
            }
        }
    }
    for s in &steps[..last] {
        if s.battery == 0 {
            *counts.entry(ConstraintFamily::Battery).or_default() += 1;
        }
    }
    let mut v = lv.zero();
    for (fam, n) in counts {
        match soft_weight(p, fam) {
            Some((prio, w)) => v[lv.slot(prio)] += w * n,
            None => return None,
        }
    }
    let charges = steps[1..].iter().filter(|s| s.battery == inst.max_battery()).count() as i64;
    for (term, prio) in objective_priorities(inst, p.cfg) {
        match term {
            Objective::TotalPlanLength => v[lv.slot(prio)] += last as i64,
            Objective::TotalChargeCount => v[lv.slot(prio)] += charges,
            Objective::Makespan => {}
        }
    }
    Some(v)
}

/// Collision atoms between two agents' location sequences.
pub fn pair_collisions(inst: &Instance, p1: &[Location], p2: &[Location]) -> usize {
    let slow_from = |p: &[Location], t: usize| -> Option<(u32, u32)> {
        match (p.get(t)?, p.get(t + 1)?, p.get(t + 2)?) {
            (&Vertex(x), InTransit, &Vertex(y)) => Some((x, y)),
            _ => None,
        }
    };
    let both = p1.len().min(p2.len());
    let mut n = 0;
    for t in 0..both {
        if p1[t] == p2[t] && p1[t] != InTransit {
            n += 1;
        }
        if t + 1 < both {
            if let (Vertex(a), Vertex(b), Vertex(c), Vertex(d)) = (p1[t], p1[t + 1], p2[t], p2[t + 1]) {
                if a != b && a == d && b == c && edge(inst, a, b) == Some(EdgeMode::Normal) {
                    n += 1;
                }
            }
        }
        if let (Some((x, y)), Some((u, v))) = (slow_from(p1, t), slow_from(p2, t)) {
            if x == v && y == u {
                n += 1;
            }
        }
    }
    for t in 1..p1.len().max(p2.len()) {
        if let (Some((x, y)), Some((u, v))) = (slow_from(p1, t), slow_from(p2, t - 1)) {
            if x == v && y == u {
                n += 1;
            }
        }
        if let (Some((x, y)), Some((u, v))) = (slow_from(p2, t), slow_from(p1, t - 1)) {
            if x == v && y == u {
                n += 1;
            }
        }
    }
    n
}

struct Cand {
    steps: Vec<Step>,
    locs: Vec<Location>,
    own: Vec<i64>,
}

fn horizon(p: &Problem, id: AgentId) -> u32 {
    let mut h = p.inst.tau();
    for c in p.hard {
        match c {
            HardConstraint::CapPlanLength { agent, l } if *agent == id => h = h.min(l.saturating_sub(1)),
            HardConstraint::FixTraversal { agent, locations } if *agent == id => {
                h = h.min(locations.len() as u32 - 1)
            }
            _ => {}
        }
    }
    h
}

/// Every admissible single-agent plan, reduced to the cheapest battery
/// schedule per location sequence.
fn candidates(p: &Problem, lv: &Levels, spec: &AgentSpec) -> Vec<Cand> {
    let inst = p.inst;
    let limit = horizon(p, spec.id);
    let mut best: HashMap<Vec<Location>, (Vec<i64>, Vec<Step>)> = HashMap::new();
    let mut stack = vec![vec![Step::new(spec.init, spec.init_battery)]];
    while let Some(steps) = stack.pop() {
        let t = (steps.len() - 1) as u32;
        let cur = *steps.last().unwrap();
        if let Vertex(v) = cur.loc {
            if v == spec.goal || t == limit {
                let mut single = Plan::default();
                single.agents.insert(spec.id, AgentPlan { steps: steps.clone() });
                let hard_ok = p
                    .hard
                    .iter()
                    .filter(|c| c.agent() == spec.id)
                    .all(|c| c.holds(inst, &single));
                if hard_ok {
                    if let Some(own) = own_cost(p, lv, spec, &steps) {
                        let locs: Vec<Location> = steps.iter().map(|s| s.loc).collect();
                        match best.get(&locs) {
                            Some((o, _)) if *o <= own => {}
                            _ => {
                                best.insert(locs, (own, steps.clone()));
                            }
                        }
                    }
                }
            }
        }
        if t >= limit {
            continue;
        }
        let Vertex(v) = cur.loc else { unreachable!("crossings are pushed whole") };
        let mut levels = vec![cur.battery.saturating_sub(1)];
        if inst.charging().contains(&v) {
            levels.push(inst.max_battery());
        }
        for &b in &levels {
            let mut s = steps.clone();
            s.push(Step::new(v, b));
            stack.push(s);
            for &u in inst.vertices() {
                match edge(inst, v, u) {
                    Some(EdgeMode::Normal) => {
                        let mut s = steps.clone();
                        s.push(Step::new(u, b));
                        stack.push(s);
                    }
                    Some(EdgeMode::Slow) if t + 2 <= limit => {
                        let mut s = steps.clone();
                        s.push(Step::new(InTransit, b));
                        s.push(Step::new(u, b.saturating_sub(1)));
                        stack.push(s);
                    }
                    _ => {}
                }
            }
        }
    }
    best.into_iter()
        .map(|(locs, (own, steps))| Cand { steps, locs, own })
        .collect()
}

/// Minimum cost over all joint plans, with one optimal witness.
pub fn brute_force(p: &Problem) -> Option<(CostVector, Plan)> {
    let lv = Levels::new(p);
    let specs = p.inst.agents();
    let mut pools: Vec<Vec<Cand>> = specs.iter().map(|s| candidates(p, &lv, s)).collect();
    for pool in &mut pools {
        pool.sort_by(|a, b| a.own.cmp(&b.own));
    }
    let mk = objective_priorities(p.inst, p.cfg)
        .into_iter()
        .find(|(t, _)| *t == Objective::Makespan)
        .map(|(_, pr)| lv.slot(pr));
    let coll = soft_weight(p, ConstraintFamily::Collision).map(|(pr, w)| (lv.slot(pr), w));
    // Cheapest own cost of agents i.. taken independently.
    let mut rest = vec![lv.zero(); pools.len() + 1];
    for i in (0..pools.len()).rev() {
        let head = pools[i].first()?.own.clone();
        rest[i] = add(&head, &rest[i + 1]);
    }
    let mut search = Search {
        inst: p.inst,
        pools: &pools,
        rest: &rest,
        mk,
        coll,
        chosen: Vec::new(),
        best: None,
    };
    search.go(&lv.zero(), 0);
    let (cost, picks) = search.best?;
    let mut plan = Plan::default();
    for (i, (spec, &k)) in specs.iter().zip(&picks).enumerate() {
        plan.agents.insert(spec.id, AgentPlan { steps: pools[i][k].steps.clone() });
    }
    Some((lv.to_cost(&cost), plan))
}

struct Search<'a> {
    inst: &'a Instance,
    pools: &'a [Vec<Cand>],
    rest: &'a [Vec<i64>],
    mk: Option<usize>,
    coll: Option<(usize, i64)>,
    chosen: Vec<usize>,
    best: Option<(Vec<i64>, Vec<usize>)>,
}

impl Search<'_> {
    fn makespan(&self, extra: Option<&Cand>) -> i64 {
        let picked = self.chosen.iter().enumerate().map(|(i, &k)| &self.pools[i][k]);
        picked.chain(extra).map(|c| c.locs.len() as i64 - 1).max().unwrap_or(0)
    }

    fn worse_or_equal(&self, v: &[i64]) -> bool {
        self.best.as_ref().is_some_and(|(b, _)| v >= b.as_slice())
    }

    fn go(&mut self, acc: &[i64], i: usize) {
        if i == self.pools.len() {
            let mut total = acc.to_vec();
            if let Some(slot) = self.mk {
                total[slot] += self.makespan(None);
            }
            if !self.worse_or_equal(&total) {
                self.best = Some((total, self.chosen.clone()));
            }
            return;
        }
        for k in 0..self.pools[i].len() {
            let cand = &self.pools[i][k];
            let mut next = add(acc, &cand.own);
            let mut lb = add(&next, &self.rest[i + 1]);
            if let Some(slot) = self.mk {
                lb[slot] += self.makespan(Some(cand));
            }
            if self.worse_or_equal(&lb) {
                continue;
            }
            let mut hits = 0;
            for (j, &kj) in self.chosen.iter().enumerate() {
                hits += pair_collisions(self.inst, &self.pools[j][kj].locs, &cand.locs);
            }
            if hits > 0 {
                let Some((slot, w)) = self.coll else { continue };
                next[slot] += w * hits as i64;
                lb[slot] += w * hits as i64;
                if self.worse_or_equal(&lb) {
                    continue;
                }
            }
            self.chosen.push(k);
            self.go(&next, i + 1);
            self.chosen.pop();
        }
    }
}

/// Independent legality check: traversal shape and battery recurrence.
pub fn legal(inst: &Instance, plan: &Plan) -> Result<(), String> {
    for spec in inst.agents() {
        let p = plan.agent(spec.id).ok_or(format!("agent {} missing", spec.id))?;
        let s = &p.steps;
        if s.first() != Some(&Step::new(spec.init, spec.init_battery)) {
            return Err(format!("agent {}: bad start", spec.id));
        }
        if s.last().unwrap().loc == InTransit {
            return Err(format!("agent {}: ends in transit", spec.id));
        }
        for t in 1..s.len() {
            let (a, b) = (s[t - 1], s[t]);
            let refill = matches!(a.loc, Vertex(v) if inst.charging().contains(&v)) && b.battery == inst.max_battery();
            if b.battery != a.battery.saturating_sub(1) && !refill {
                return Err(format!("agent {}: battery jump at {t}", spec.id));
            }
            let ok = match (a.loc, b.loc) {
                (Vertex(x), Vertex(y)) => {
                    (x == y && inst.vertices().contains(&x)) || edge(inst, x, y) == Some(EdgeMode::Normal)
                }
                (Vertex(x), InTransit) => {
                    matches!(s.get(t + 1).map(|n| n.loc), Some(Vertex(y)) if edge(inst, x, y) == Some(EdgeMode::Slow))
                }
                (InTransit, Vertex(y)) => {
                    matches!(s[t - 2].loc, Vertex(x) if edge(inst, x, y) == Some(EdgeMode::Slow))
                }
                (InTransit, InTransit) => false,
            };
            if !ok {
                return Err(format!("agent {}: illegal step at {t}", spec.id));
            }
        }
    }
    Ok(())
}

/// Cost of a joint plan recomputed from scratch; `None` when it breaks a
/// hard family or hard constraint.
pub fn cost_of(p: &Problem, plan: &Plan) -> Option<CostVector> {
    let lv = Levels::new(p);
    let mut total = lv.zero();
    let specs = p.inst.agents();
    for spec in specs {
        let ap = plan.agent(spec.id)?;
        total = add(&total, &own_cost(p, &lv, spec, &ap.steps)?);
    }
    if !p.hard.iter().all(|c| c.holds(p.inst, plan)) {
        return None;
    }
    let mut hits = 0;
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            hits += pair_collisions(p.inst, &plan.agents[&a.id].locations(), &plan.agents[&b.id].locations());
        }
    }
    if hits > 0 {
        let (pr, w) = soft_weight(p, ConstraintFamily::Collision)?;
        total[lv.slot(pr)] += w * hits as i64;
    }
    for (term, pr) in objective_priorities(p.inst, p.cfg) {
        if term == Objective::Makespan {
            total[lv.slot(pr)] += plan.makespan() as i64;
        }
    }
    Some(lv.to_cost(&total))
}

/// One member of the generated small-instance family.
pub struct Case {
    pub label: String,
    pub inst: Instance,
    pub soft: Vec<SoftConstraint>,
    pub hard: Vec<HardConstraint>,
}

/// Deterministic family of tiny instances: grids up to 3x3, at most two
/// agents, horizon up to 6, battery up to 4, at most one waypoint each.
pub fn small_family(seed: u64, count: usize) -> Vec<Case> {
    use mmapf_core::model::{GridShorthand, InstanceParts};
    use rand::rngs::StdRng;
    use rand::seq::{IndexedRandom, SliceRandom};
    use rand::{Rng, SeedableRng};

    let mut rng = StdRng::seed_from_u64(seed);
    let objectives: [&[Objective]; 5] = [
        &[Objective::Makespan],
        &[Objective::Makespan, Objective::TotalPlanLength],
        &[Objective::TotalPlanLength],
        &[Objective::Makespan, Objective::TotalChargeCount],
        &[Objective::TotalChargeCount, Objective::Makespan],
    ];
    let mut out = Vec::new();
    while out.len() < count {
        let rows = rng.random_range(1..=3u32);
        let cols = rng.random_range(2..=3u32);
        let cells: Vec<u32> = (1..=rows * cols).collect();
        let pick = |rng: &mut StdRng, k: usize| -> Vec<u32> {
            let mut c = cells.clone();
            c.shuffle(rng);
            c.truncate(k);
            c
        };
        let n_obs = rng.random_range(0..=2usize.min(cells.len() - 2));
        let obstacles = pick(&mut rng, n_obs);
        let free: Vec<u32> = cells.iter().copied().filter(|c| !obstacles.contains(c)).collect();
        let n_agents = rng.random_range(1..=2usize).min(free.len());
        let n_chargers = rng.random_range(0..=2);
        let charging = pick(&mut rng, n_chargers);
        let grid = GridShorthand {
            rows,
            cols,
            slow: cells.iter().copied().filter(|_| rng.random_bool(0.15)).collect(),
            obstacles: obstacles.iter().copied().collect(),
            charging: charging.into_iter().collect(),
        };
        let b = rng.random_range(1..=4u32);
        let mut inits = free.clone();
        inits.shuffle(&mut rng);
        let mut goals = free.clone();
        goals.shuffle(&mut rng);
        let agents = (0..n_agents)
            .map(|i| AgentSpec {
                id: i as u32 + 1,
                init: inits[i],
                goal: goals[i],
                waypoints: if rng.random_bool(0.5) {
                    free.choose(&mut rng).copied().into_iter().collect()
                } else {
                    Default::default()
                },
                init_battery: rng.random_range(1..=b),
            })
            .collect();
        let mut parts = InstanceParts::from_grid(grid);
        parts.agents = agents;
        parts.max_battery = b;
        parts.tau = rng.random_range(2..=6);
        parts.objective = objectives.choose(&mut rng).unwrap().to_vec();
        let Ok(inst) = Instance::new(parts) else { continue };

        let soft = ConstraintFamily::ALL
            .into_iter()
            .filter(|_| rng.random_bool(0.35))
            .map(SoftConstraint::new)
            .collect();
        let mut hard = Vec::new();
        if rng.random_bool(0.3) {
            let agent = rng.random_range(1..=n_agents as u32);
            let x = *free.choose(&mut rng).unwrap();
            hard.push(match rng.random_range(0..5) {
                0 => HardConstraint::ForbidWait { agent, x },
                1 => HardConstraint::ForbidVisit { agent, x },
                2 => HardConstraint::CapPlanLength { agent, l: rng.random_range(1..=inst.tau()) },
                3 => HardConstraint::CapChargeCount { agent, m: rng.random_range(1..=2) },
                _ => HardConstraint::ForbidVisitAt { agent, x, s: rng.random_range(0..inst.tau()) },
            });
        }
        out.push(Case {
            label: format!("case{}", out.len()),
            inst,
            soft,
            hard,
        });
    }
    out
}

/// Solver status and optimal cost against brute force, plus a check of the
/// returned witness.
pub fn check_against_oracle(case: &Case) -> Result<(), String> {
    check_with(case, &SolveConfig::exact())
}

/// Same check under an arbitrary search configuration; the run must
/// complete for the comparison to mean anything.
pub fn check_with(case: &Case, cfg: &SolveConfig) -> Result<(), String> {
    use mmapf_core::solver::{solve, Outcome};
    let p = Problem {
        inst: &case.inst,
        hard: &case.hard,
        soft: &case.soft,
        cfg,
    };
    let expect = brute_force(&p);
    let got = solve(&case.inst, &case.hard, &case.soft, cfg).map_err(|e| e.to_string())?;
    match (&got.outcome, expect) {
        (Outcome::Infeasible, None) => Ok(()),
        (Outcome::Optimal(sol), Some((cost, _))) => {
            if sol.cost.cmp(&cost).is_ne() {
                return Err(format!("{}: solver cost {} but brute force {}", case.label, sol.cost, cost));
            }
            legal(&case.inst, &sol.plan).map_err(|e| format!("{}: {e}", case.label))?;
            match cost_of(&p, &sol.plan) {
                Some(c) if c.cmp(&cost).is_eq() => Ok(()),
                other => Err(format!("{}: witness recomputes to {other:?}", case.label)),
            }
        }
        (o, e) => Err(format!(
            "{}: solver says {} but brute force {}",
            case.label,
            o.status(),
            e.map_or("infeasible".to_string(), |(c, _)| c.to_string())
        )),
    }
}

/// Softening every family never loses a hard solution: the relaxed
/// optimum has zero violation cost exactly when the strict program is
/// feasible, and then both agree on the objective levels.
pub fn check_hard_soft(case: &Case) -> Result<(), String> {
    use mmapf_core::semantics::FamilySet;
    use mmapf_core::solver::{solve, Outcome, DEFAULT_SOFT_PRIORITY};
    let cfg = SolveConfig::exact();
    let strict = solve(&case.inst, &case.hard, &[], &cfg).map_err(|e| e.to_string())?;
    let all = SoftConstraint::all(FamilySet::ALL);
    let relaxed = solve(&case.inst, &case.hard, &all, &cfg).map_err(|e| e.to_string())?;
    let label = &case.label;
    match (&strict.outcome, &relaxed.outcome) {
        (Outcome::Optimal(s), Outcome::Optimal(r)) => {
            let mut r_cost = r.cost.clone();
            if r_cost.level(DEFAULT_SOFT_PRIORITY) != 0 {
                return Err(format!("{label}: strict feasible but relaxed pays {}", r.cost));
            }
            r_cost.0.remove(&DEFAULT_SOFT_PRIORITY);
            if r_cost.cmp(&s.cost).is_ne() {
                return Err(format!("{label}: strict {} vs relaxed {}", s.cost, r.cost));
            }
            Ok(())
        }
        (Outcome::Infeasible, Outcome::Optimal(r)) if r.cost.level(DEFAULT_SOFT_PRIORITY) > 0 => Ok(()),
        (Outcome::Infeasible, Outcome::Infeasible) if !case.hard.is_empty() => Ok(()),
        (s, r) => Err(format!("{label}: strict {} relaxed {}", s.status(), r.status())),
    }
}
