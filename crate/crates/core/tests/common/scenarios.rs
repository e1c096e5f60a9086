//! End-to-end checks of the worked examples. Each returns a short detail
//! line on success.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use mmapf_core::bench::{bench_queries, expected_calls, run_one, QueryRun};
use mmapf_core::explain::{ExplanationKind, Session, SessionConfig};
use mmapf_core::model::{load_instance, load_plan, Instance, Location, Plan};
use mmapf_core::queries::{Query, QueryKind};
use mmapf_core::semantics::{ConstraintFamily, FamilySet, ViolationAtom};
use mmapf_core::solver::{improvement_stream, solve, HardConstraint, SoftConstraint, SolveConfig};

use super::{brute_force, Problem};

pub const SCENARIO1: &str = include_str!("../../fixtures/scenario1.json");
pub const PLAN1: &str = include_str!("../../fixtures/scenario1_plan1.json");
pub const SCENARIO6: &str = include_str!("../../fixtures/scenario6.json");
pub const M1: &str = include_str!("../../fixtures/m1.json");
pub const M1_3X5: &str = include_str!("../../fixtures/m1_3x5.json");
pub const M2: &str = include_str!("../../fixtures/m2.json");

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn load(doc: &str) -> Result<Instance, String> {
    load_instance(doc).map_err(|e| e.to_string())
}

fn optimal_plan(inst: &Instance) -> Result<Plan, String> {
    solve(inst, &[], &[], &SolveConfig::exact())
        .map_err(|e| e.to_string())?
        .outcome
        .into_solution()
        .map(|s| s.plan)
        .ok_or_else(|| "no solution".to_string())
}

/// Minimum level-7 cost by exhaustive enumeration.
fn brute_violations(inst: &Instance, hard: &[HardConstraint], families: FamilySet) -> Result<i64, String> {
    let soft = SoftConstraint::all(families);
    let cfg = SolveConfig::exact();
    let p = Problem { inst, hard, soft: &soft, cfg: &cfg };
    brute_force(&p)
        .map(|(c, _)| c.level(7))
        .ok_or_else(|| "brute force found no plan".to_string())
}

fn scenario1_session() -> Result<Session, String> {
    let inst = load(SCENARIO1)?;
    let plan = load_plan(PLAN1, &inst).map_err(|e| e.to_string())?;
    Session::start(inst, Some(plan), SessionConfig::default())
        .map(|(s, _)| s)
        .map_err(|e| e.to_string())
}

pub fn scenario1() -> Outcome {
    let start = Instant::now();
    let inst = load(SCENARIO1)?;
    let best = optimal_plan(&inst)?;
    ensure(best.makespan() == 4, || format!("optimal makespan {}", best.makespan()))?;
    let mut sess = scenario1_session()?;
    let e = sess.answer(&Query::QW1 { agent: 2, x: 8 }).map_err(|e| e.to_string())?;
    ensure(e.kind == ExplanationKind::Alternative, || format!("got {:?}: {}", e.kind, e.text))?;
    let alt = e.alternative_plan.as_ref().ok_or("no plan")?;
    ensure(alt.makespan() == 4, || format!("alternative makespan {}", alt.makespan()))?;
    let seq = alt.agent(2).ok_or("agent 2 missing")?.locations();
    let waits = seq.windows(2).any(|w| w[0] == Location::Vertex(8) && w[1] == Location::Vertex(8));
    ensure(!waits, || "agent 2 still waits at 8".into())?;
    ensure(e.text.starts_with("Actually, Robot 2 does not have to wait at Cell 8"), || e.text.clone())?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok(format!("makespan 4, alternative found in {took:.0?}"))
}

pub fn scenario2() -> Outcome {
    let start = Instant::now();
    let mut sess = scenario1_session()?;
    sess.answer(&Query::QW1 { agent: 2, x: 8 }).map_err(|e| e.to_string())?;
    let q = Query::QW1 { agent: 1, x: 11 };
    let e = sess.answer(&q).map_err(|e| e.to_string())?;
    ensure(e.kind == ExplanationKind::Counterfactual, || format!("got {:?}: {}", e.kind, e.text))?;
    ensure(e.stats.calls == 3, || format!("{} solver calls", e.stats.calls))?;
    let expect = vec![
        ViolationAtom::Collision { a1: 1, a2: 2, t: 1, x: 7 },
        ViolationAtom::Collision { a1: 1, a2: 2, t: 2, x: 6 },
    ];
    ensure(e.violations_current.as_ref() == Some(&expect), || {
        format!("current-plan violations {:?}", e.violations_current)
    })?;
    let any = e.violations_any.clone().unwrap_or_default();
    ensure(any.iter().any(|a| matches!(a, ViolationAtom::Collision { x: 7, .. })), || {
        format!("no collision at 7 in {any:?}")
    })?;
    let hard = [
        HardConstraint::ForbidWait { agent: 2, x: 8 },
        HardConstraint::ForbidWait { agent: 1, x: 11 },
    ];
    let min = brute_violations(&sess.instance, &hard, QueryKind::QW1.relevant())?;
    ensure(any.len() as i64 == min, || format!("relaxed cost {} but brute force {min}", any.len()))?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("Π_c atoms exact, Π_w cost {min} = brute force, {took:.0?}"))
}

pub fn scenario6() -> Outcome {
    let start = Instant::now();
    let inst = load(SCENARIO6)?;
    let (mut sess, _) = Session::start(inst.clone(), None, SessionConfig::default()).map_err(|e| e.to_string())?;
    ensure(sess.current_plan.is_none(), || "scenario 6 should be unsolvable".into())?;
    let e = sess.answer(&Query::QU).map_err(|e| e.to_string())?;
    let w1 = e.violations_current.clone().ok_or("Π_w1 found no plan")?;
    let w2 = e.violations_any.clone().ok_or("Π_w2 found no plan")?;
    ensure(!w1.is_empty() && w1.iter().all(|a| a.family() == ConstraintFamily::Collision), || {
        format!("Π_w1 atoms {w1:?}")
    })?;
    let min1 = brute_violations(&inst, &[], QueryKind::QU.relevant().without(ConstraintFamily::Obstacle))?;
    ensure(w1.len() as i64 == min1, || format!("Π_w1 cost {} but brute force {min1}", w1.len()))?;
    ensure(w2.iter().all(|a| a.family() == ConstraintFamily::Obstacle), || format!("Π_w2 atoms {w2:?}"))?;
    let min2 = brute_violations(&inst, &[], FamilySet::EMPTY.with(ConstraintFamily::Obstacle))?;
    ensure(w2.len() as i64 == min2, || format!("Π_w2 cost {} but brute force {min2}", w2.len()))?;
    let sugg = e.suggestion.as_ref().ok_or("no removal suggestion")?;
    ensure(!sugg.remove_obstacles.is_empty(), || "empty suggestion".into())?;
    ensure(e.text.contains("this suggests removing"), || e.text.clone())?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("Π_w1 {w1:?}, Π_w2 {w2:?} (cost {min2} = brute force), {took:.0?}"))
}

/// QC4 on the agent's own charge count; returns the explanation's atom
/// lists after checking their families.
fn qc4_structure(inst: &Instance) -> Result<(Vec<ViolationAtom>, Vec<ViolationAtom>, u32), String> {
    let (mut sess, _) = Session::start(inst.clone(), None, SessionConfig::default()).map_err(|e| e.to_string())?;
    let plan = sess.current_plan.clone().ok_or("no plan")?;
    let m = plan.full_battery_count(2, inst.max_battery());
    ensure(m >= 1, || "robot 2 never charges".into())?;
    let e = sess.answer(&Query::QC4 { agent: 2, m }).map_err(|e| e.to_string())?;
    ensure(e.kind == ExplanationKind::Counterfactual, || format!("got {:?}: {}", e.kind, e.text))?;
    let cur = e.violations_current.clone().unwrap_or_default();
    let any = e.violations_any.clone().unwrap_or_default();
    ensure(cur.iter().any(|a| matches!(a, ViolationAtom::MinBattery { agent: 2, .. })), || {
        format!("Π_c atoms {cur:?}")
    })?;
    ensure(
        !any.is_empty() && any.iter().all(|a| matches!(a.family(), ConstraintFamily::Waypoint | ConstraintFamily::Goal)),
        || format!("Π_w atoms {any:?}"),
    )?;
    Ok((cur, any, m))
}

pub fn scenario4_structure() -> Outcome {
    let start = Instant::now();
    let m1 = load(M1)?;
    let (cur, any, m) = qc4_structure(&m1)?;

    // Minimal costs on the truncated layout, where enumeration is feasible.
    let small = load(M1_3X5)?;
    let (s_cur, s_any, s_m) = qc4_structure(&small)?;
    let plan = optimal_plan(&small)?;
    let cap = HardConstraint::CapChargeCount { agent: 2, m: s_m };
    let mut fixed = vec![cap.clone()];
    fixed.extend(plan.agents.iter().map(|(&agent, p)| HardConstraint::FixTraversal {
        agent,
        locations: p.locations(),
    }));
    let relevant = QueryKind::QC4.relevant();
    let min_c = brute_violations(&small, &fixed, relevant)?;
    let min_w = brute_violations(&small, &[cap], relevant)?;
    ensure(s_cur.len() as i64 == min_c, || format!("3x5 Π_c cost {} but brute force {min_c}", s_cur.len()))?;
    ensure(s_any.len() as i64 == min_w, || format!("3x5 Π_w cost {} but brute force {min_w}", s_any.len()))?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!(
        "M1 QC4(2,{m}): Π_c {cur:?}, Π_w {any:?}; 3x5 costs {min_c}/{min_w} = brute force; {took:.1?}"
    ))
}

/// Runs every benchable query of the plan, spread over a few threads.
pub fn bench_all(inst: &Instance, plan: &Plan, kinds: &[QueryKind]) -> Result<Vec<QueryRun>, String> {
    let queries = bench_queries(inst, plan, kinds).map_err(|e| e.to_string())?;
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).min(8);
    let chunks: Vec<Vec<Query>> = (0..threads)
        .map(|i| queries.iter().skip(i).step_by(threads).cloned().collect())
        .collect();
    let cfg = SessionConfig::default();
    std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                s.spawn(|| {
                    chunk
                        .iter()
                        .map(|q| run_one(inst, plan, q, &cfg).map_err(|e| format!("{q}: {e}")))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        let mut out = Vec::new();
        for h in handles {
            out.extend(h.join().map_err(|_| "bench thread panicked".to_string())??);
        }
        Ok(out)
    })
}

pub fn call_counts_m1() -> Outcome {
    let inst = load(M1)?;
    let plan = optimal_plan(&inst)?;
    let runs = bench_all(&inst, &plan, &QueryKind::ALL)?;
    for r in &runs {
        let want = expected_calls(r.query.kind(), r.outcome);
        ensure(r.calls == want, || format!("{} took {} calls, expected {want}", r.query, r.calls))?;
    }
    let mut per_kind: BTreeMap<QueryKind, (usize, u64)> = BTreeMap::new();
    for r in &runs {
        let e = per_kind.entry(r.query.kind()).or_default();
        e.0 += 1;
        e.1 += u64::from(r.calls);
    }
    for k in [QueryKind::QW1, QueryKind::QW2, QueryKind::QW3, QueryKind::QW4] {
        ensure(!per_kind.contains_key(&k), || format!("{k} row is not empty"))?;
    }
    let seen: Vec<(ExplanationKind, bool)> = runs
        .iter()
        .map(|r| (r.outcome, r.query.kind().class() == mmapf_core::queries::QueryClass::Plan))
        .collect();
    ensure(seen.contains(&(ExplanationKind::Alternative, true)), || "no SAT query".into())?;
    ensure(seen.contains(&(ExplanationKind::Counterfactual, false)), || "no UNSAT charge query".into())?;
    ensure(seen.contains(&(ExplanationKind::Counterfactual, true)), || "no UNSAT plan query".into())?;
    let summary: Vec<String> = per_kind.iter().map(|(k, (n, c))| format!("{k} {n}/{c}")).collect();
    Ok(format!("{} queries; instances/calls {}", runs.len(), summary.join(", ")))
}

pub fn anytime_m2() -> Outcome {
    let inst = load(M2)?;
    let exact = solve(&inst, &[], &[], &SolveConfig::exact())
        .map_err(|e| e.to_string())?
        .outcome
        .into_solution()
        .ok_or("no exact solution")?;
    let mut stream = improvement_stream(inst, Vec::new(), Vec::new(), SolveConfig::anytime(Duration::from_secs(10)));
    let costs: Vec<_> = stream.by_ref().map(|inc| inc.solution.cost).collect();
    let res = stream.finish().map_err(|e| e.to_string())?;
    ensure(!costs.is_empty(), || "no incumbents".into())?;
    ensure(costs.windows(2).all(|w| w[1] < w[0]), || format!("not strictly improving: {costs:?}"))?;
    let last = costs.last().unwrap();
    ensure(*last >= exact.cost, || format!("anytime {last} beats exact {}", exact.cost))?;
    if res.outcome.status() == "optimal" {
        ensure(*last == exact.cost, || format!("completed at {last}, exact {}", exact.cost))?;
    }
    Ok(format!(
        "{} incumbents, final {} ({}), exact {}",
        costs.len(),
        last,
        res.outcome.status(),
        exact.cost
    ))
}
