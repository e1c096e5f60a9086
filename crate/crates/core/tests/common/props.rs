//! Validator properties, each checked on one random fixture per seed.

use mmapf_core::model::{AgentPlan, EdgeMode, Location, Plan, Step};
use mmapf_core::semantics::{
    check_battery, check_locations, enumerate_violations, validate, ConstraintFamily, FamilySet, ViolationAtom,
};
use rand::Rng;

use super::gen;
use super::pair_collisions;

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn battery_recurrence(seed: u64) -> Check {
    let mut rng = gen::rng(seed);
    let inst = gen::instance(&mut rng);
    let plan = gen::plan(&inst, &mut rng);
    let b = inst.max_battery();
    for spec in inst.agents() {
        let steps = &plan.agents[&spec.id].steps;
        ensure(check_battery(&inst, spec, steps).ok, || format!("seed {seed}: legal walk rejected"))?;
        for t in 1..steps.len() {
            let prev = steps[t - 1];
            let drained = prev.battery.saturating_sub(1);
            let refill = matches!(prev.loc, Location::Vertex(v) if inst.is_charging(v));
            let lvl = steps[t].battery;
            ensure(lvl == drained || (refill && lvl == b), || format!("seed {seed}: walk broke recurrence"))?;
        }
        if steps.len() < 2 {
            continue;
        }
        let t = rng.random_range(1..steps.len());
        let prev = steps[t - 1];
        let allowed = |l: u32| {
            l == prev.battery.saturating_sub(1)
                || (l == b && matches!(prev.loc, Location::Vertex(v) if inst.is_charging(v)))
        };
        let Some(bad) = (0..=b + 1).find(|&l| !allowed(l) && l != steps[t].battery) else { continue };
        let mut broken = steps.clone();
        broken[t].battery = bad;
        let v = check_battery(&inst, spec, &broken);
        ensure(v.first_bad == Some(t as u32), || format!("seed {seed}: mutated level at {t} gave {v:?}"))?;
    }
    Ok(())
}

pub fn slow_edge_shape(seed: u64) -> Check {
    let mut rng = gen::rng(seed);
    let inst = gen::instance(&mut rng);
    let plan = gen::plan(&inst, &mut rng);
    for spec in inst.agents() {
        let seq = plan.agents[&spec.id].locations();
        ensure(check_locations(&inst, spec, &seq).ok, || format!("seed {seed}: legal walk rejected"))?;
        for t in 0..seq.len() {
            if seq[t] != Location::InTransit {
                continue;
            }
            // Skipping the middle step is a teleport over a slow edge.
            let mut jump = seq.clone();
            jump.remove(t);
            let v = check_locations(&inst, spec, &jump);
            ensure(v.first_bad == Some(t as u32), || format!("seed {seed}: jump at {t} gave {v:?}"))?;
            // Ending mid-crossing is illegal.
            let v = check_locations(&inst, spec, &seq[..=t]);
            ensure(v.first_bad == Some(t as u32), || format!("seed {seed}: dangling transit gave {v:?}"))?;
        }
        for t in 0..seq.len().saturating_sub(1) {
            if let (Location::Vertex(x), Location::Vertex(y)) = (seq[t], seq[t + 1]) {
                if x != y && inst.edge_mode(x, y) == Some(EdgeMode::Normal) {
                    let mut slowed = seq.clone();
                    slowed.insert(t + 1, Location::InTransit);
                    let v = check_locations(&inst, spec, &slowed);
                    ensure(v.first_bad == Some(t as u32 + 1), || {
                        format!("seed {seed}: transit on a normal edge gave {v:?}")
                    })?;
                }
            }
        }
    }
    Ok(())
}

pub fn vanish_at_goal(seed: u64) -> Check {
    let mut rng = gen::rng(seed);
    let inst = gen::instance(&mut rng);
    let plan = gen::plan(&inst, &mut rng);
    let coll = FamilySet::EMPTY.with(ConstraintFamily::Collision);
    let atoms = enumerate_violations(&inst, &plan, coll);
    let ids: Vec<u32> = plan.agents.keys().copied().collect();
    let mut expected = 0;
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            expected += pair_collisions(&inst, &plan.agents[a].locations(), &plan.agents[b].locations());
        }
    }
    ensure(atoms.len() == expected, || format!("seed {seed}: {} atoms, naive count {expected}", atoms.len()))?;
    for atom in &atoms {
        if let ViolationAtom::Collision { a1, a2, t, .. } = *atom {
            let active = plan.agents[&a1].length().min(plan.agents[&a2].length());
            ensure(t <= active, || format!("seed {seed}: collision after an agent finished: {atom:?}"))?;
        }
    }
    // A second agent parked on the first one's final cell after it is done
    // meets nobody there.
    if let Some(spec) = inst.agents().first() {
        let first = &plan.agents[&spec.id];
        let Location::Vertex(end) = first.steps.last().unwrap().loc else { unreachable!() };
        let l = first.length();
        let mut ghost = Plan::default();
        ghost.agents.insert(spec.id, first.clone());
        let mut steps: Vec<Step> = vec![Step::new(99_999, 0); l as usize + 1];
        steps.extend((0..3).map(|_| Step::new(end, 0)));
        ghost.agents.insert(u32::MAX, AgentPlan { steps });
        let hits = enumerate_violations(&inst, &ghost, coll);
        ensure(hits.is_empty(), || format!("seed {seed}: finished agent still occupies its goal: {hits:?}"))?;
    }
    Ok(())
}

pub fn enumeration_determinism(seed: u64) -> Check {
    let mut rng = gen::rng(seed);
    let inst = gen::instance(&mut rng);
    let plan = gen::plan(&inst, &mut rng);
    let once = enumerate_violations(&inst, &plan, FamilySet::ALL);
    let mut rebuilt = Plan::default();
    for (id, p) in plan.agents.iter().rev() {
        rebuilt.agents.insert(*id, p.clone());
    }
    let twice = enumerate_violations(&inst, &rebuilt, FamilySet::ALL);
    ensure(once == twice, || format!("seed {seed}: enumeration not deterministic"))?;
    ensure(once.windows(2).all(|w| w[0] <= w[1]), || format!("seed {seed}: atoms not sorted"))?;
    let report = validate(&inst, &plan);
    ensure(report.violations == once, || format!("seed {seed}: validate disagrees with enumeration"))?;
    ensure(report.solution == once.is_empty(), || format!("seed {seed}: solution flag wrong"))
}

pub fn enumeration_monotone(seed: u64) -> Check {
    let mut rng = gen::rng(seed);
    let inst = gen::instance(&mut rng);
    let plan = gen::plan(&inst, &mut rng);
    let small: FamilySet = ConstraintFamily::ALL.into_iter().filter(|_| rng.random_bool(0.5)).collect();
    let big = small.union(ConstraintFamily::ALL.into_iter().filter(|_| rng.random_bool(0.5)).collect());
    let a = enumerate_violations(&inst, &plan, small);
    let b = enumerate_violations(&inst, &plan, big);
    let restricted: Vec<ViolationAtom> = b.iter().copied().filter(|x| small.contains(x.family())).collect();
    ensure(a == restricted, || format!("seed {seed}: {a:?} vs restricted {restricted:?}"))?;
    ensure(a.iter().all(|x| small.contains(x.family())), || format!("seed {seed}: atom outside requested families"))
}

pub type Property = (&'static str, fn(u64) -> Check);

pub const ALL: [Property; 5] = [
    ("battery recurrence", battery_recurrence),
    ("slow-edge two-step shape", slow_edge_shape),
    ("vanish-at-goal occupancy", vanish_at_goal),
    ("enumeration determinism", enumeration_determinism),
    ("enumeration monotonicity", enumeration_monotone),
];
