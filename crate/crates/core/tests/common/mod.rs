#![allow(dead_code)]

use std::sync::Arc;

use costenv_core::domain::{EnvConfig, TaskName, TaskSpec, ToolLibrary};
use costenv_core::engine::Session;
use costenv_core::querygen::{build_queries, PreferenceSpace, Query, Split};
use costenv_core::toolgen::enumerate_tools;
use costenv_core::Cost;

pub fn enums() -> [Vec<String>; 4] {
    [0, 1, 2, 3].map(|d| vec![format!("v{d}")])
}

/// Library with one explicit price per tool, in enumeration order.
pub fn priced(n: u32, prices: &[i64]) -> ToolLibrary {
    let mut lib = enumerate_tools(TaskSpec::new(TaskName::Location, n).unwrap(), &enums());
    for (t, p) in lib.tools.iter_mut().zip(prices.iter().cycle()) {
        t.cost = Cost::from_cents(*p);
    }
    lib.costed = true;
    lib
}

pub fn queries(task: TaskName, seed: u64) -> (Arc<PreferenceSpace>, Vec<Query>) {
    let space = Arc::new(PreferenceSpace::builtin(task));
    let qs = build_queries(seed, &space, Split::Test);
    (space, qs)
}

pub fn session(task: TaskName, index: usize, config: EnvConfig) -> Session {
    let (space, mut qs) = queries(task, config.seed);
    Session::new(config, space, qs.swap_remove(index)).unwrap()
}
