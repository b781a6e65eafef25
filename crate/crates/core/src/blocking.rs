//! Dynamic blocking events: scheduling, seeding and application.

use serde::{Deserialize, Serialize};

use crate::domain::{BlockType, EnvConfig, ToolKind, ToolLibrary};
use crate::engine::{EngineError, Session};
use crate::oracle::{goal_reachable, shortest_path_gt};
use crate::querygen::{enumerate_combinations, Query};
use crate::rng::SeededRng;
use crate::toolgen::assign_costs;

/// Range of replacement global seeds drawn by cost-change events.
pub const COST_SEED_RANGE: std::ops::Range<u64> = 1_000_000..10_000_000;

const BAN_REASONS: [&str; 6] = [
    "scheduled maintenance",
    "an upstream provider outage",
    "rate limiting",
    "an expired service credential",
    "a regional network incident",
    "a data synchronization backlog",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlockError {
    #[error("no event left to schedule: B = {count}, index = {index}")]
    Exhausted { count: u32, index: u32 },
    #[error("length range [2, {0}] is empty")]
    EmptyRemovalRange(u32),
    #[error("cannot place {n} disjoint length intervals inside [2, {l_max}]")]
    RemovalInfeasible { n: u32, l_max: u32 },
    #[error("no alternative query is available for a preference change")]
    NoAlternativeQuery,
}

/// `t_{i+1} = t_i + max(1, floor(L_i / (B - i)))`.
pub fn next_trigger(path_len: u32, t: u32, count: u32, index: u32) -> Result<u32, BlockError> {
    if count <= index {
        return Err(BlockError::Exhausted { count, index });
    }
    Ok(t + (path_len / (count - index)).max(1))
}

/// Replacement global seed for a cost change.
pub fn cost_change_seed(event_seed: u64) -> u64 {
    let span = COST_SEED_RANGE.end - COST_SEED_RANGE.start;
    COST_SEED_RANGE.start + SeededRng::new(event_seed).below(span)
}

pub fn ban_message(tool: &str, event_seed: u64) -> String {
    let mut rng = SeededRng::new(event_seed);
    let reason = BAN_REASONS[rng.below(BAN_REASONS.len() as u64) as usize];
    let code = rng.below(10_000);
    format!("Tool {tool} is temporarily unavailable due to {reason} (code E{code:04}).")
}

/// Disjoint length intervals used by remove-tools events.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalSample {
    pub intervals: Vec<(u32, u32)>,
    /// Minimum `r - l` the sampler aimed for.
    pub required_width: u32,
    /// Minimum `r - l` actually enforced (lower when relaxed).
    pub used_width: u32,
}

impl RemovalSample {
    pub fn relaxed(&self) -> bool {
        self.used_width < self.required_width
    }
}

fn interval_sets(
    start: u32,
    l_max: u32,
    n: u32,
    width: u32,
    cur: &mut Vec<(u32, u32)>,
    out: &mut Vec<Vec<(u32, u32)>>,
) {
    if n == 0 {
        out.push(cur.clone());
        return;
    }
    for l in start..=l_max {
        for r in (l + width)..=l_max {
            cur.push((l, r));
            interval_sets(r + 1, l_max, n - 1, width, cur, out);
            cur.pop();
        }
    }
}

/// Picks `n` disjoint intervals inside `[2, l_max]` with `r - l >= l_max / 2`,
/// lowering the width bound to the largest feasible value when needed.
pub fn sample_removal_intervals(
    base_seed: u64,
    n: u32,
    l_max: u32,
) -> Result<RemovalSample, BlockError> {
    if l_max < 2 {
        return Err(BlockError::EmptyRemovalRange(l_max));
    }
    let required = l_max.div_ceil(2);
    for width in (0..=required).rev() {
        let mut sets = Vec::new();
        interval_sets(2, l_max, n, width, &mut Vec::new(), &mut sets);
        if !sets.is_empty() {
            let pick = SeededRng::new(base_seed).below(sets.len() as u64) as usize;
            return Ok(RemovalSample {
                intervals: sets.swap_remove(pick),
                required_width: required,
                used_width: width,
            });
        }
    }
    Err(BlockError::RemovalInfeasible { n, l_max })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockPayload {
    BanTool {
        tool: String,
        message: String,
    },
    PreferenceChange {
        previous_query_id: String,
        query_id: String,
        message: String,
    },
    CostChange {
        new_global_seed: u64,
    },
    RemoveTools {
        length: u32,
        removed: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEvent {
    /// 1-based event index.
    pub index: u32,
    pub block_type: BlockType,
    /// 1-based call number the event was scheduled against.
    pub trigger_turn: u32,
    /// Calls consumed when the event took effect.
    pub fired_after: u32,
    pub seed: u64,
    pub payload: BlockPayload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub block_type: BlockType,
    pub count: u32,
    pub base_seed: u64,
    pub seed_interval: u64,
    /// Call number of the next event, if one is pending.
    pub next_trigger: Option<u32>,
    pub fired: Vec<BlockEvent>,
    pub removal: Option<RemovalSample>,
}

impl BlockPlan {
    pub fn new(config: &EnvConfig, base_seed: u64) -> Result<Self, BlockError> {
        let removal = if config.block_type == BlockType::RemoveTools && config.block_count > 0 {
            Some(sample_removal_intervals(
                base_seed,
                config.block_count,
                config.sequence_length - 1,
            )?)
        } else {
            None
        };
        Ok(BlockPlan {
            block_type: config.block_type,
            count: if config.block_type == BlockType::None {
                0
            } else {
                config.block_count
            },
            base_seed,
            seed_interval: config.seed_interval,
            next_trigger: None,
            fired: Vec::new(),
            removal,
        })
    }

    /// `S_{q,i} = S_q + i * Δ_s` for the 1-based event index `i`.
    pub fn event_seed(&self, index: u32) -> u64 {
        self.base_seed
            .wrapping_add(index as u64 * self.seed_interval)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (1..=self.count).map(|i| self.event_seed(i)).collect()
    }

    pub fn remaining(&self) -> u32 {
        self.count - self.fired.len() as u32
    }

    /// A ban is armed from its trigger call onward until it fires.
    pub fn ban_pending(&self, turns_consumed: u32) -> bool {
        self.block_type == BlockType::BanTool
            && self.next_trigger.is_some_and(|t| turns_consumed + 1 >= t)
    }
}

/// Goal reachable from `state` using the visible, unbanned tools.
pub fn check_solvability(library: &ToolLibrary, state: u64) -> bool {
    goal_reachable(library, state)
}

/// Schedules the next event after `fired_after` consumed calls.
/// `floor` is the earliest call number allowed.
pub(crate) fn schedule_next(
    session: &mut Session,
    fired_after: u32,
    floor: u32,
) -> Result<(), EngineError> {
    let plan = &session.plan;
    let index = plan.fired.len() as u32;
    if index >= plan.count {
        session.plan.next_trigger = None;
        return Ok(());
    }
    let path = shortest_path_gt(&session.library, session.state_mask())
        .map_err(|_| EngineError::Invariant("goal unreachable after a blocking event".into()))?;
    let t = next_trigger(path.len() as u32, fired_after, plan.count, index)?;
    session.plan.next_trigger = Some(t.max(floor));
    Ok(())
}

/// Applies every non-ban event whose trigger call is the next call.
pub(crate) fn fire_due(session: &mut Session) -> Result<(), EngineError> {
    loop {
        let due = match session.plan.next_trigger {
            Some(t) if session.turn + 1 >= t => t,
            _ => return Ok(()),
        };
        if !session.is_running()
            || session.goal_reached
            || session.plan.block_type == BlockType::BanTool
        {
            return Ok(());
        }
        let index = session.plan.fired.len() as u32 + 1;
        let seed = session.plan.event_seed(index);
        let payload = match session.plan.block_type {
            BlockType::PreferenceChange => apply_preference_change(session, seed)?,
            BlockType::CostChange => apply_cost_change(session, seed)?,
            BlockType::RemoveTools => apply_remove_tools(session, index),
            BlockType::BanTool | BlockType::None => unreachable!("handled above"),
        };
        let event = BlockEvent {
            index,
            block_type: session.plan.block_type,
            trigger_turn: due,
            fired_after: session.turn,
            seed,
            payload,
        };
        session.plan.fired.push(event);
        let turn = session.turn;
        schedule_next(session, turn, due + 1)?;
    }
}

/// Bans `tool` in response to the call that hit an armed ban trigger.
pub fn apply_ban(session: &mut Session, tool: &str) -> BlockEvent {
    let index = session.plan.fired.len() as u32 + 1;
    let seed = session.plan.event_seed(index);
    let message = ban_message(tool, seed);
    session.library.banned.insert(tool.to_string());
    session.graph_version += 1;
    session.messages.push(message.clone());
    BlockEvent {
        index,
        block_type: BlockType::BanTool,
        trigger_turn: session.plan.next_trigger.unwrap_or(session.turn + 1),
        fired_after: session.turn + 1,
        seed,
        payload: BlockPayload::BanTool {
            tool: tool.to_string(),
            message,
        },
    }
}

/// Picks a different query of the same task and split.
pub fn choose_replacement(session: &Session, seed: u64) -> Result<Query, BlockError> {
    let current = &session.query;
    let combos = enumerate_combinations(&session.space, current.split);
    let here = combos.iter().position(|c| *c == current.combination);
    let pool = combos.len() - usize::from(here.is_some());
    if pool == 0 {
        return Err(BlockError::NoAlternativeQuery);
    }
    let mut pick = SeededRng::new(seed).below(pool as u64) as usize;
    if here.is_some_and(|h| pick >= h) {
        pick += 1;
    }
    Ok(Query::new(
        session.config.seed,
        current.task,
        current.split,
        pick,
        combos[pick].clone(),
    ))
}

pub fn apply_preference_change(
    session: &mut Session,
    seed: u64,
) -> Result<BlockPayload, EngineError> {
    let replacement = choose_replacement(session, seed)?;
    let previous = std::mem::replace(&mut session.query, replacement);
    session.epoch += 1;
    session.covered = 0;
    session.goal_reached = false;
    session.trajectory.reached_goal = false;
    session.graph_version += 1;
    let message = format!(
        "The user has updated their request. New request: {}",
        session.query.text
    );
    session.messages.push(message.clone());
    Ok(BlockPayload::PreferenceChange {
        previous_query_id: previous.query_id,
        query_id: session.query.query_id.clone(),
        message,
    })
}

pub fn apply_cost_change(session: &mut Session, seed: u64) -> Result<BlockPayload, EngineError> {
    let new_seed = cost_change_seed(seed);
    let query_id = session.query.query_id.clone();
    assign_costs(&mut session.library, &session.config, new_seed, &query_id)?;
    session.cost_seed = new_seed;
    session.graph_version += 1;
    Ok(BlockPayload::CostChange {
        new_global_seed: new_seed,
    })
}

/// Hides every visible composite whose length equals the event's interval start.
pub fn apply_remove_tools(session: &mut Session, index: u32) -> BlockPayload {
    let length = session
        .plan
        .removal
        .as_ref()
        .and_then(|r| r.intervals.get(index as usize - 1))
        .map(|iv| iv.0)
        .expect("removal plan covers every event");
    let removed: Vec<String> = session
        .library
        .tools
        .iter()
        .filter(|t| t.kind == ToolKind::Composite && t.components() == length)
        .filter(|t| session.library.is_visible(&t.name))
        .map(|t| t.name.clone())
        .collect();
    session.library.removed.extend(removed.iter().cloned());
    session.graph_version += 1;
    BlockPayload::RemoveTools { length, removed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigger_formula() {
        assert_eq!(next_trigger(4, 0, 2, 0), Ok(2));
        assert_eq!(next_trigger(5, 0, 3, 0), Ok(1));
        assert_eq!(next_trigger(1, 3, 2, 1), Ok(4));
        assert!(next_trigger(3, 0, 2, 2).is_err());
    }

    #[test]
    fn removal_single_interval() {
        let s = sample_removal_intervals(9, 1, 4).unwrap();
        assert_eq!(s.intervals, [(2, 4)]);
        assert!(!s.relaxed());
    }

    #[test]
    fn removal_two_intervals_relax_to_zero_width() {
        for seed in 0..50 {
            let s = sample_removal_intervals(seed, 2, 4).unwrap();
            assert_eq!(s.used_width, 0);
            assert!(s.relaxed());
            let [(l1, r1), (l2, r2)] = [s.intervals[0], s.intervals[1]];
            assert!(2 <= l1 && l1 <= r1 && r1 < l2 && l2 <= r2 && r2 <= 4);
        }
        let seen: std::collections::BTreeSet<_> = (0..200)
            .map(|s| sample_removal_intervals(s, 2, 4).unwrap().intervals)
            .collect();
        assert!(seen.contains(&vec![(2, 2), (3, 3)]));
    }

    #[test]
    fn removal_is_deterministic_and_bounded() {
        assert_eq!(
            sample_removal_intervals(77, 2, 7),
            sample_removal_intervals(77, 2, 7)
        );
        assert!(matches!(
            sample_removal_intervals(1, 3, 3),
            Err(BlockError::RemovalInfeasible { .. })
        ));
        assert!(matches!(
            sample_removal_intervals(1, 1, 1),
            Err(BlockError::EmptyRemovalRange(1))
        ));
    }

    #[test]
    fn wide_range_keeps_width_rule() {
        let s = sample_removal_intervals(3, 1, 9).unwrap();
        let (l, r) = s.intervals[0];
        assert!(r - l >= 5 && !s.relaxed());
    }

    #[test]
    fn cost_seed_in_range() {
        for s in 0..1000 {
            assert!(COST_SEED_RANGE.contains(&cost_change_seed(s)));
        }
        assert_eq!(cost_change_seed(5), cost_change_seed(5));
    }

    #[test]
    fn ban_message_is_seeded() {
        let m = ban_message("Search_Location_Candidates", 142);
        assert!(m.starts_with("Tool Search_Location_Candidates is temporarily unavailable due to "));
        assert_eq!(m, ban_message("Search_Location_Candidates", 142));
    }

    #[test]
    fn event_seeds_step_by_interval() {
        let config = EnvConfig {
            block_type: BlockType::CostChange,
            block_count: 3,
            ..EnvConfig::default()
        };
        let plan = BlockPlan::new(&config, 1000).unwrap();
        assert_eq!(plan.seeds(), [1100, 1200, 1300]);
    }
}
