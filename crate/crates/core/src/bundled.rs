//! Fixture instances shipped with the library.

use crate::model::{load_instance, load_plan, Instance, ModelError, Plan};

#[derive(Debug, Clone, Copy)]
pub struct Example {
    pub name: &'static str,
    pub description: &'static str,
    pub instance: &'static str,
    pub plan: Option<&'static str>,
}

impl Example {
    pub fn load(&self) -> Result<(Instance, Option<Plan>), ModelError> {
        let inst = load_instance(self.instance)?;
        let plan = self.plan.map(|p| load_plan(p, &inst)).transpose()?;
        Ok((inst, plan))
    }
}

const SCENARIO1: &str = include_str!("../fixtures/scenario1.json");
const SCENARIO1_PLAN1: &str = include_str!("../fixtures/scenario1_plan1.json");
const SCENARIO1_PLAN2: &str = include_str!("../fixtures/scenario1_plan2.json");
const SCENARIO3: &str = include_str!("../fixtures/scenario3.json");
const SCENARIO6: &str = include_str!("../fixtures/scenario6.json");
const M1: &str = include_str!("../fixtures/m1.json");
const M2: &str = include_str!("../fixtures/m2.json");
const M3: &str = include_str!("../fixtures/m3.json");

pub const EXAMPLES: &[Example] = &[
    Example {
        name: "scenario1",
        description: "3x4 grid, two robots sharing waypoint 7; robot 2 waits at cell 8",
        instance: SCENARIO1,
        plan: Some(SCENARIO1_PLAN1),
    },
    Example {
        name: "scenario2",
        description: "scenario1 after the wait at cell 8 was removed; robot 1 now waits at cell 11",
        instance: SCENARIO1,
        plan: Some(SCENARIO1_PLAN2),
    },
    Example {
        name: "scenario3",
        description: "12x12 warehouse, four robots crossing to opposite corners",
        instance: SCENARIO3,
        plan: None,
    },
    Example {
        name: "scenario4",
        description: "m1 with robot 2 starting on a partial battery",
        instance: M1,
        plan: None,
    },
    Example {
        name: "scenario5",
        description: "m1, asking about the move from cell 4 to cell 14",
        instance: M1,
        plan: None,
    },
    Example {
        name: "scenario6",
        description: "3x3 grid with two obstacles; the robots cannot swap",
        instance: SCENARIO6,
        plan: None,
    },
    Example {
        name: "m1",
        description: "3x10 grid with slow crossings, chargers and two robots",
        instance: M1,
        plan: None,
    },
    Example {
        name: "m2",
        description: "m1 with two more robots swapping the free corners",
        instance: M2,
        plan: None,
    },
    Example {
        name: "m3",
        description: "m1 replicated three times to the right",
        instance: M3,
        plan: None,
    },
];

pub fn find(name: &str) -> Option<&'static Example> {
    EXAMPLES.iter().find(|e| e.name == name)
}
