//! Planners over the tool graph: exact shortest path, the utility-greedy
//! baseline, a brute-force path enumerator, and followers that replay them
//! inside a live session.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cost::Cost;
use crate::domain::{DataKind, TaskSpec, ToolLibrary, ToolSpec};
use crate::engine::{EngineError, Session, SessionStatus};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("goal is unreachable from the current state")]
    Unreachable,
    #[error("greedy policy stalled without reaching the goal")]
    Stalled,
}

/// A tool sequence and its total cost.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub tools: Vec<String>,
    pub cost: Cost,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

pub fn input_mask(task: &TaskSpec, tool: &ToolSpec) -> u64 {
    tool.inputs.iter().fold(0, |m, k| m | task.kind_mask(*k))
}

pub fn output_mask(task: &TaskSpec, tool: &ToolSpec) -> u64 {
    task.kind_mask(tool.output)
}

#[derive(Clone, Copy)]
struct Edge {
    input: u64,
    output: u64,
    cost: Cost,
}

/// Visible tools in lexicographic name order, so index order equals name order.
fn usable_sorted(library: &ToolLibrary) -> Vec<&ToolSpec> {
    let mut tools: Vec<&ToolSpec> = library.visible().collect();
    tools.sort_by(|a, b| a.name.cmp(&b.name));
    tools
}

#[derive(PartialEq, Eq)]
struct Label {
    cost: Cost,
    path: Vec<u16>,
    mask: u64,
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .cmp(&other.cost)
            .then(self.path.len().cmp(&other.path.len()))
            .then_with(|| self.path.cmp(&other.path))
            .then(self.mask.cmp(&other.mask))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost tool sequence from `start` to any state holding the final
/// result. Ties go to fewer calls, then to the lexicographically smallest
/// sequence of tool names.
pub fn shortest_path_gt(library: &ToolLibrary, start: u64) -> Result<Plan, OracleError> {
    let task = library.task;
    let goal = task.goal_mask();
    let tools = usable_sorted(library);
    let edges: Vec<Edge> = tools
        .iter()
        .map(|t| Edge {
            input: input_mask(&task, t),
            output: output_mask(&task, t),
            cost: t.cost,
        })
        .collect();
    let mut settled: HashSet<u64> = HashSet::new();
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Label {
        cost: Cost::ZERO,
        path: Vec::new(),
        mask: start,
    }));
    while let Some(Reverse(label)) = heap.pop() {
        if !settled.insert(label.mask) {
            continue;
        }
        if label.mask & goal != 0 {
            return Ok(Plan {
                tools: label
                    .path
                    .iter()
                    .map(|&i| tools[i as usize].name.clone())
                    .collect(),
                cost: label.cost,
            });
        }
        for (idx, e) in edges.iter().enumerate() {
            if e.input & !label.mask != 0 || e.output & !label.mask == 0 {
                continue;
            }
            let next = label.mask | e.output;
            if settled.contains(&next) {
                continue;
            }
            let mut path = label.path.clone();
            path.push(idx as u16);
            heap.push(Reverse(Label {
                cost: label.cost + e.cost,
                path,
                mask: next,
            }));
        }
    }
    Err(OracleError::Unreachable)
}

/// True if some goal state is reachable from `start` with the visible tools.
pub fn goal_reachable(library: &ToolLibrary, start: u64) -> bool {
    let graph = StateGraph::build(library, start);
    let goal = library.task.goal_mask();
    graph.vertices.iter().any(|v| v & goal != 0)
}

/// Lower utility wins: `c(a)/comp(a) < c(b)/comp(b)`, compared exactly.
fn utility_cmp(a: &ToolSpec, b: &ToolSpec) -> Ordering {
    let lhs = a.cost.cents() as i128 * b.components() as i128;
    let rhs = b.cost.cents() as i128 * a.components() as i128;
    lhs.cmp(&rhs).then_with(|| a.name.cmp(&b.name))
}

/// One greedy decision.
///
/// Candidates are visible tools whose inputs are owned and whose output is
/// new. When `prev_output` is set, only tools consuming it are considered;
/// if none qualify the restriction is dropped.
pub fn greedy_step(
    library: &ToolLibrary,
    mask: u64,
    prev_output: Option<DataKind>,
) -> Option<&ToolSpec> {
    let task = library.task;
    let applicable: Vec<&ToolSpec> = library
        .visible()
        .filter(|t| input_mask(&task, t) & !mask == 0 && output_mask(&task, t) & !mask != 0)
        .collect();
    let chained: Vec<&ToolSpec> = match prev_output {
        Some(k) => applicable
            .iter()
            .copied()
            .filter(|t| t.inputs.contains(&k))
            .collect(),
        None => Vec::new(),
    };
    let pool = if chained.is_empty() {
        applicable
    } else {
        chained
    };
    pool.into_iter().min_by(|a, b| utility_cmp(a, b))
}

/// Greedy rollout on a fixed graph from `start` (first step unrestricted).
pub fn greedy_trajectory(library: &ToolLibrary, start: u64) -> Result<Plan, OracleError> {
    let task = library.task;
    let goal = task.goal_mask();
    let mut mask = start;
    let mut prev = None;
    let mut plan = Plan::default();
    while mask & goal == 0 {
        let tool = greedy_step(library, mask, prev).ok_or(OracleError::Stalled)?;
        mask |= output_mask(&task, tool);
        prev = Some(tool.output);
        plan.cost += tool.cost;
        plan.tools.push(tool.name.clone());
    }
    Ok(plan)
}

/// All ordered decompositions of `[1, n]` into contiguous spans, without the
/// single full span, listed as in a hand-written enumeration: more segments
/// first, then shorter longest segment, then longer leading segments first.
pub fn enumerate_paths(n: u32) -> Vec<Vec<(u32, u32)>> {
    fn compositions(rest: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        for first in 1..=rest {
            cur.push(first);
            compositions(rest - first, cur, out);
            cur.pop();
        }
    }
    let mut comps = Vec::new();
    compositions(n, &mut Vec::new(), &mut comps);
    comps.retain(|c| c.len() > 1 || n == 1);
    comps.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(a.iter().max().cmp(&b.iter().max()))
            .then_with(|| b.cmp(a))
    });
    comps
        .into_iter()
        .map(|lengths| {
            let mut start = 1;
            lengths
                .into_iter()
                .map(|len| {
                    let span = (start, start + len - 1);
                    start += len;
                    span
                })
                .collect()
        })
        .collect()
}

/// Exhaustive minimum over [`enumerate_paths`] using the visible tools,
/// with the same tie-break as [`shortest_path_gt`].
pub fn brute_force_min(library: &ToolLibrary) -> Result<Plan, OracleError> {
    let n = library.task.sequence_length();
    enumerate_paths(n)
        .into_iter()
        .filter_map(|spans| {
            let tools: Option<Vec<&ToolSpec>> = spans
                .iter()
                .map(|&s| library.by_span(s).filter(|t| library.is_visible(&t.name)))
                .collect();
            let tools = tools?;
            Some(Plan {
                cost: tools.iter().map(|t| t.cost).sum(),
                tools: tools.iter().map(|t| t.name.clone()).collect(),
            })
        })
        .min_by(|a, b| {
            a.cost
                .cmp(&b.cost)
                .then(a.len().cmp(&b.len()))
                .then_with(|| a.tools.cmp(&b.tools))
        })
        .ok_or(OracleError::Unreachable)
}

/// Each tool after the first consumes the previous tool's output.
pub fn satisfies_chain(library: &ToolLibrary, tools: &[String]) -> bool {
    let spans: Option<Vec<(u32, u32)>> = tools
        .iter()
        .map(|n| library.get(n).map(|t| t.span))
        .collect();
    match spans {
        Some(spans) => spans.windows(2).all(|w| w[1].0 == w[0].1 + 1),
        None => false,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: u64,
    pub to: u64,
    pub tool: String,
    pub cost: Cost,
}

/// Explicit state graph reachable from a start state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateGraph {
    pub vertices: BTreeSet<u64>,
    pub edges: Vec<GraphEdge>,
}

impl StateGraph {
    pub fn build(library: &ToolLibrary, start: u64) -> Self {
        let task = library.task;
        let tools = usable_sorted(library);
        let mut graph = StateGraph::default();
        let mut queue = VecDeque::from([start]);
        graph.vertices.insert(start);
        while let Some(s) = queue.pop_front() {
            for t in &tools {
                let (inp, out) = (input_mask(&task, t), output_mask(&task, t));
                if inp & !s != 0 || out & !s == 0 {
                    continue;
                }
                let next = s | out;
                graph.edges.push(GraphEdge {
                    from: s,
                    to: next,
                    tool: t.name.clone(),
                    cost: t.cost,
                });
                if graph.vertices.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        graph
    }

    pub fn goal_vertices(&self, task: &TaskSpec) -> impl Iterator<Item = u64> + '_ {
        let goal = task.goal_mask();
        self.vertices.iter().copied().filter(move |v| v & goal != 0)
    }
}

/// Which planner a follower consults at every step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowerKind {
    Optimal,
    Greedy,
}

/// Planner-driven policy that plays a session with exact arguments.
#[derive(Clone, Debug)]
pub struct Follower {
    kind: FollowerKind,
    prev_output: Option<DataKind>,
    seen_version: u64,
}

/// Next move chosen by a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Call {
        name: String,
        arguments: std::collections::BTreeMap<String, serde_json::Value>,
    },
    Answer {
        token: String,
    },
}

impl Follower {
    pub fn new(kind: FollowerKind) -> Self {
        Follower {
            kind,
            prev_output: None,
            seen_version: 0,
        }
    }

    pub fn next_action(&mut self, session: &Session) -> Result<Action, OracleError> {
        if let Some(token) = session.current_final_token() {
            return Ok(Action::Answer { token });
        }
        let library = session.library();
        let mask = session.state_mask();
        // Any change to the graph or the epoch restarts the greedy chain.
        if session.graph_version() != self.seen_version {
            self.seen_version = session.graph_version();
            self.prev_output = None;
        }
        let tool = match self.kind {
            FollowerKind::Optimal => {
                let plan = shortest_path_gt(library, mask)?;
                library.get(&plan.tools[0]).expect("planned tool exists")
            }
            FollowerKind::Greedy => {
                greedy_step(library, mask, self.prev_output).ok_or(OracleError::Stalled)?
            }
        };
        Ok(Action::Call {
            name: tool.name.clone(),
            arguments: session.canonical_arguments(tool),
        })
    }

    /// Call after the session processed an action from this follower.
    pub fn observe(&mut self, session: &Session) {
        if let Some(last) = session.trajectory().records.last() {
            if let Some(produced) = &last.produced {
                self.prev_output = Some(produced.kind);
            }
        }
        if session.graph_version() != self.seen_version {
            self.seen_version = session.graph_version();
            self.prev_output = None;
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FollowError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Plays `session` to completion with a planner follower. For the optimal
/// follower the successful calls form the segmented ground truth: one
/// shortest path per inter-block interval, concatenated.
pub fn run_follower(session: &mut Session, kind: FollowerKind) -> Result<(), FollowError> {
    let mut follower = Follower::new(kind);
    follower.seen_version = session.graph_version();
    while session.status() == SessionStatus::Running {
        match follower.next_action(session)? {
            Action::Call { name, arguments } => {
                session.invoke(&name, &arguments)?;
                follower.observe(session);
            }
            Action::Answer { token } => {
                session.submit_answer(&token)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TaskName;
    use crate::toolgen::enumerate_tools;

    fn enums() -> [Vec<String>; 4] {
        [0, 1, 2, 3].map(|d| vec![format!("v{d}")])
    }

    /// Library with costs given per span.
    pub(crate) fn priced(n: u32, price: impl Fn((u32, u32)) -> i64) -> ToolLibrary {
        let mut lib = enumerate_tools(TaskSpec::new(TaskName::Location, n).unwrap(), &enums());
        for t in lib.tools.iter_mut() {
            t.cost = Cost::from_cents(price(t.span));
        }
        lib.costed = true;
        lib
    }

    fn worked_example() -> ToolLibrary {
        priced(4, |s| match s {
            (1, 1) | (2, 2) | (3, 3) | (4, 4) => 1000,
            (1, 2) => 1500,
            (2, 3) => 200,
            (3, 4) => 2500,
            (1, 3) => 2700,
            (2, 4) => 2800,
            _ => 4000,
        })
    }

    fn spans(lib: &ToolLibrary, plan: &Plan) -> Vec<(u32, u32)> {
        plan.tools
            .iter()
            .map(|n| lib.get(n).unwrap().span)
            .collect()
    }

    #[test]
    fn worked_example_gt_and_greedy() {
        let lib = worked_example();
        let s0 = lib.task.initial_mask();
        let gt = shortest_path_gt(&lib, s0).unwrap();
        assert_eq!(spans(&lib, &gt), [(1, 1), (2, 3), (4, 4)]);
        assert_eq!(gt.cost, Cost::from_cents(2200));
        assert_eq!(brute_force_min(&lib).unwrap(), gt);

        let greedy = greedy_trajectory(&lib, s0).unwrap();
        assert_eq!(spans(&lib, &greedy), [(1, 2), (3, 3), (4, 4)]);
        assert_eq!(greedy.cost, Cost::from_cents(3500));
    }

    #[test]
    fn equal_costs_resolve_to_two_calls() {
        // Composites cost exactly their component sum: all paths tie on cost.
        let lib = priced(4, |(i, j)| 1000 * (j - i + 1) as i64);
        let gt = shortest_path_gt(&lib, lib.task.initial_mask()).unwrap();
        assert_eq!(gt.len(), 2);
        assert_eq!(gt.cost, Cost::from_cents(4000));
        assert_eq!(brute_force_min(&lib).unwrap(), gt);
    }

    #[test]
    fn ban_of_first_gt_tool_is_avoided() {
        let mut lib = worked_example();
        let s0 = lib.task.initial_mask();
        let first = shortest_path_gt(&lib, s0).unwrap().tools[0].clone();
        lib.banned.insert(first.clone());
        let replanned = shortest_path_gt(&lib, s0).unwrap();
        assert!(!replanned.tools.contains(&first));
    }

    #[test]
    fn hitting_set_makes_goal_unreachable() {
        let mut lib = worked_example();
        for j in 1..4 {
            let name = lib.by_span((1, j)).unwrap().name.clone();
            lib.banned.insert(name);
        }
        let s0 = lib.task.initial_mask();
        assert_eq!(shortest_path_gt(&lib, s0), Err(OracleError::Unreachable));
        assert!(!goal_reachable(&lib, s0));
    }

    #[test]
    fn enumerate_paths_matches_listing() {
        let lengths: Vec<Vec<u32>> = enumerate_paths(4)
            .iter()
            .map(|p| p.iter().map(|(i, j)| j - i + 1).collect())
            .collect();
        assert_eq!(
            lengths,
            vec![
                vec![1, 1, 1, 1],
                vec![2, 1, 1],
                vec![1, 2, 1],
                vec![1, 1, 2],
                vec![2, 2],
                vec![3, 1],
                vec![1, 3],
            ]
        );
        assert_eq!(enumerate_paths(5).len(), 15);
        assert_eq!(enumerate_paths(2), vec![vec![(1, 1), (2, 2)]]);
        for n in 2..=10 {
            assert_eq!(enumerate_paths(n).len(), (1usize << (n - 1)) - 1);
        }
    }

    #[test]
    fn single_choice_greedy_equals_gt() {
        let mut lib = priced(5, |(i, j)| 1000 + 7 * (i * 10 + j) as i64);
        let composites: Vec<String> = lib.composite().map(|t| t.name.clone()).collect();
        lib.removed.extend(composites);
        let s0 = lib.task.initial_mask();
        assert_eq!(
            greedy_trajectory(&lib, s0).unwrap(),
            shortest_path_gt(&lib, s0).unwrap()
        );
    }

    #[test]
    fn uniform_utilities_tie_break_lexicographically() {
        let lib = priced(5, |(i, j)| 1000 * (j - i + 1) as i64);
        let s0 = lib.task.initial_mask();
        let a = greedy_trajectory(&lib, s0).unwrap();
        let b = greedy_trajectory(&lib, s0).unwrap();
        assert_eq!(a, b);
        let first = greedy_step(&lib, s0, None).unwrap();
        let min_name = lib
            .visible()
            .filter(|t| t.span.0 == 1)
            .map(|t| t.name.clone())
            .min()
            .unwrap();
        assert_eq!(first.name, min_name);
    }

    #[test]
    fn state_graph_is_acyclic_and_grows() {
        let lib = worked_example();
        let g = StateGraph::build(&lib, lib.task.initial_mask());
        for e in &g.edges {
            assert!(e.to & e.from == e.from && e.to != e.from);
        }
        assert!(g.goal_vertices(&lib.task).count() > 0);
    }

    #[test]
    fn gt_from_midway_state() {
        let lib = worked_example();
        let task = lib.task;
        let mask = task.initial_mask() | task.kind_mask(task.step_output(1));
        let plan = shortest_path_gt(&lib, mask).unwrap();
        assert_eq!(spans(&lib, &plan), [(2, 3), (4, 4)]);
    }
}
