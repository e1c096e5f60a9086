//! Every enumerated query must be violated by the plan it came from, and
//! every kind must be satisfiable by some hand-built plan.

use std::collections::BTreeMap;

use mmapf_core::model::{load_instance, load_plan, locs, Instance, Location, Plan};
use mmapf_core::queries::{compile, enumerate_queries, Query, QueryKind};
use mmapf_core::solver::{solve, SolveConfig};

const SCENARIO1: &str = include_str!("../../fixtures/scenario1.json");
const PLAN1: &str = include_str!("../../fixtures/scenario1_plan1.json");
const PLAN2: &str = include_str!("../../fixtures/scenario1_plan2.json");
const M1: &str = include_str!("../../fixtures/m1.json");

fn holds(inst: &Instance, q: &Query, plan: &Plan) -> Result<bool, String> {
    let c = compile(q, inst).map_err(|e| format!("{q}: {e}"))?;
    let hard = c.hard.ok_or(format!("{q}: no hard constraint"))?;
    Ok(hard.holds(inst, plan))
}

fn with_agent(plan: &Plan, inst: &Instance, agent: u32, seq: Vec<Location>) -> Plan {
    let mut seqs: BTreeMap<u32, Vec<Location>> = plan.agents.iter().map(|(&a, p)| (a, p.locations())).collect();
    seqs.insert(agent, seq);
    Plan::from_locations(inst, seqs)
}

/// Number of enumerated queries checked per kind.
pub fn check() -> Result<BTreeMap<QueryKind, usize>, String> {
    let s1 = load_instance(SCENARIO1).map_err(|e| e.to_string())?;
    let plan1 = load_plan(PLAN1, &s1).map_err(|e| e.to_string())?;
    let plan2 = load_plan(PLAN2, &s1).map_err(|e| e.to_string())?;
    let m1 = load_instance(M1).map_err(|e| e.to_string())?;
    let m1_plan = solve(&m1, &[], &[], &SolveConfig::exact())
        .map_err(|e| e.to_string())?
        .outcome
        .into_solution()
        .ok_or("m1 has no solution")?
        .plan;

    let mut counts = BTreeMap::new();
    let kinds: Vec<QueryKind> = QueryKind::ALL.into_iter().filter(|&k| k != QueryKind::QU).collect();
    for (inst, plan) in [(&s1, &plan1), (&s1, &plan2), (&m1, &m1_plan)] {
        for q in enumerate_queries(inst, plan, &kinds).map_err(|e| e.to_string())? {
            if holds(inst, &q, plan)? {
                return Err(format!("{q} holds on the plan it was enumerated from"));
            }
            *counts.entry(q.kind()).or_insert(0) += 1;
        }
    }
    if let Some(k) = kinds.iter().find(|k| !counts.contains_key(k)) {
        return Err(format!("no {k} query was enumerated"));
    }

    // Hand-built plans that avoid the phenomenon.
    let no_charges = Plan::from_locations(&m1, m1_plan.agents.iter().map(|(&a, p)| (a, p.locations())));
    let detour = with_agent(
        &m1_plan,
        &m1,
        1,
        locs(&[1, 2, 3])
            .into_iter()
            .chain([Location::InTransit])
            .chain(locs(&[4, 5, 15, 25, 24, 25, 26, 27, 17, 7]))
            .chain([Location::InTransit])
            .chain(locs(&[8, 9, 10, 20, 30]))
            .collect(),
    );
    let short = with_agent(&m1_plan, &m1, 1, locs(&[1, 2, 3]));
    let satisfied: Vec<(&Instance, Query, &Plan)> = vec![
        (&s1, Query::QW1 { agent: 2, x: 8 }, &plan2),
        (&s1, Query::QW2 { agent: 2, x: 8, s: 0 }, &plan2),
        (&s1, Query::QW3 { agent: 2, x: 8, s: 0, n: 1 }, &plan2),
        (&s1, Query::QW4 { agent: 2, x: 8, s: 0, n: 1 }, &plan2),
        (&m1, Query::QC1 { agent: 2, x: 27 }, &no_charges),
        (&m1, Query::QC2 { agent: 2, s: 4 }, &no_charges),
        (&m1, Query::QC3 { agent: 2, x: 27, s: 4 }, &no_charges),
        (&m1, Query::QC4 { agent: 2, m: 2 }, &no_charges),
        (&m1, Query::QP1 { agent: 1, l: 17 }, &short),
        (&m1, Query::QP2 { agent: 1, x: 14 }, &detour),
        (&m1, Query::QP3 { agent: 1, x: 14, s: 5 }, &detour),
        (&m1, Query::QP4 { agent: 1, x: 4, y: 14 }, &detour),
        (&m1, Query::QP5 { agent: 1, x: 4, y: 14, s: 4 }, &detour),
    ];
    for (inst, q, plan) in satisfied {
        if !holds(inst, &q, plan)? {
            return Err(format!("{q} fails on its hand-built plan"));
        }
    }
    Ok(counts)
}
