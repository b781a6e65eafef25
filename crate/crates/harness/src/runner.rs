//! Episode loop and the parallel batch runner.

use std::sync::Arc;

use costenv_core::blocking::BlockEvent;
use costenv_core::domain::{EnvConfig, Trajectory};
use costenv_core::engine::{EngineError, Session, SessionStatus};
use costenv_core::metrics::{score_episode, EpisodeMetrics, EpisodeOutcome};
use costenv_core::oracle::Plan;
use costenv_core::querygen::{PreferenceSpace, Query};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentSpec};
use crate::error::HarnessError;
use crate::instances::{segmented_gt, InstanceRecord, InstanceSet};
use crate::prompt::render_system_prompt;
use crate::wire::{SessionEnd, SessionInit, ToolResult, WireMessage};

/// One agent action and the harness reply to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: WireMessage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<WireMessage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub query: Query,
    pub init: WireMessage,
    pub steps: Vec<Step>,
    pub end: WireMessage,
    pub block_events: Vec<BlockEvent>,
    pub final_query_id: String,
    pub gt_answer: String,
    pub trajectory: Trajectory,
    pub static_gt: Plan,
    /// Static ground truth, or the segmented one when blocks are configured.
    pub reference_gt: Plan,
    pub greedy: Plan,
    pub blocks_expected: u32,
    pub blocks_fired: u32,
    /// Set when the episode was aborted (protocol violation or agent failure).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub metrics: EpisodeMetrics,
}

impl EpisodeRecord {
    /// Scoring input; aborted episodes count as not having reached the goal.
    pub fn outcome(&self) -> EpisodeOutcome {
        outcome(
            &self.episode_id,
            &self.trajectory,
            &self.reference_gt,
            &self.gt_answer,
            (self.blocks_expected, self.blocks_fired),
            self.error.is_some(),
        )
    }

    /// Agent messages in order, suitable for a scripted replay.
    pub fn actions(&self) -> Vec<WireMessage> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }
}

pub fn init_message(session: &mut Session) -> WireMessage {
    let obs = session.observation();
    WireMessage::SessionInit(SessionInit {
        episode_id: session.original_query().query_id.clone(),
        system_prompt: render_system_prompt(session.library()),
        query: obs.query,
        tools: obs.tools,
        cost_table: obs.cost_table,
        owned: obs.owned,
        max_turns: obs.max_turns,
        messages: obs.messages,
    })
}

/// Plays one episode. Agent failures abort the episode but are not errors;
/// engine invariant failures are.
pub fn run_episode(
    config: &EnvConfig,
    space: Arc<PreferenceSpace>,
    instance: &InstanceRecord,
    agent_spec: &AgentSpec,
) -> Result<EpisodeRecord, HarnessError> {
    let query = instance.query.clone();
    let mut session = Session::new(config.clone(), space.clone(), query.clone())?;
    let init = init_message(&mut session);
    let mut steps = Vec::new();
    let error = match agent_spec.build(&session) {
        Err(e) => Some(e.to_string()),
        Ok(mut agent) => {
            let error = play(&mut session, agent.as_mut(), &init, &mut steps)?;
            agent.notify(&end_message(&session, &error));
            error
        }
    };

    let end = end_message(&session, &error);
    let reference_gt = match &instance.blocked_gt {
        Some(plan) => plan.clone(),
        None if config.blocks_enabled() => segmented_gt(config, space, &query)?,
        None => instance.static_gt.clone(),
    };
    let blocks_expected = session.block_plan().count;
    let blocks_fired = session.block_plan().fired.len() as u32;
    let metrics = score_episode(&outcome(
        &query.query_id,
        session.trajectory(),
        &reference_gt,
        &session.query().gt_answer,
        (blocks_expected, blocks_fired),
        error.is_some(),
    ));
    Ok(EpisodeRecord {
        episode_id: query.query_id.clone(),
        init,
        steps,
        end,
        block_events: session.block_plan().fired.clone(),
        final_query_id: session.query().query_id.clone(),
        gt_answer: session.query().gt_answer.clone(),
        trajectory: session.trajectory().clone(),
        static_gt: instance.static_gt.clone(),
        reference_gt,
        greedy: instance.greedy.clone(),
        blocks_expected,
        blocks_fired,
        error,
        query,
        metrics,
    })
}

fn outcome(
    id: &str,
    trajectory: &Trajectory,
    gt: &Plan,
    gt_answer: &str,
    (blocks_expected, blocks_fired): (u32, u32),
    aborted: bool,
) -> EpisodeOutcome {
    let mut trajectory = trajectory.clone();
    if aborted {
        trajectory.reached_goal = false;
    }
    EpisodeOutcome {
        query_id: id.to_string(),
        trajectory,
        gt: gt.clone(),
        gt_answer: gt_answer.to_string(),
        blocks_expected,
        blocks_fired,
    }
}

fn end_message(session: &Session, error: &Option<String>) -> WireMessage {
    WireMessage::SessionEnd(SessionEnd {
        status: if error.is_some() {
            SessionStatus::Exhausted
        } else {
            session.status()
        },
        reached_goal: session.goal_reached(),
        intent_hit: session.intent_hit(),
        turns: session.turn(),
        total_cost: session.trajectory().total_cost,
        error: error.clone(),
    })
}

/// Runs the message loop from `init` until the episode ends; returns the
/// abort reason, if any.
pub fn play(
    session: &mut Session,
    agent: &mut dyn Agent,
    init: &WireMessage,
    steps: &mut Vec<Step>,
) -> Result<Option<String>, HarnessError> {
    let mut incoming = init.clone();
    let mut seen_version = session.graph_version();
    loop {
        let action = match agent.respond(session, &incoming) {
            Ok(a) => a,
            Err(e) => return Ok(Some(e.to_string())),
        };
        match &action {
            WireMessage::ToolCall {
                name,
                arguments,
                extra_calls,
            } => {
                let record = match session.invoke(name, arguments) {
                    Ok(r) => r,
                    Err(EngineError::TurnLimit) => {
                        steps.push(Step {
                            action,
                            result: None,
                        });
                        return Ok(None);
                    }
                    Err(e) => return Err(e.into()),
                };
                let obs = session.observation();
                let tools = (session.graph_version() != seen_version).then_some(obs.tools);
                seen_version = session.graph_version();
                let result = WireMessage::ToolResult(ToolResult {
                    turn: record.turn,
                    name: record.tool_name.clone(),
                    validity: record.validity,
                    redundancy: record.redundancy,
                    produced: record.produced.as_ref().map(|p| p.token.clone()),
                    charged_cost: record.charged_cost,
                    detail: record.detail.clone(),
                    discarded_calls: extra_calls.len() as u32,
                    status: obs.status,
                    owned: obs.owned,
                    cost_table: obs.cost_table,
                    tools,
                    messages: obs.messages,
                });
                steps.push(Step {
                    action,
                    result: Some(result.clone()),
                });
                if !session.is_running() {
                    agent.notify(&result);
                    return Ok(None);
                }
                incoming = result;
            }
            WireMessage::FinalAnswer { token } => {
                session.submit_answer(token)?;
                steps.push(Step {
                    action,
                    result: None,
                });
                return Ok(None);
            }
            other => {
                let reason = format!(
                    "agent sent `{}`; expected tool_call or final_answer",
                    other.kind()
                );
                steps.push(Step {
                    action,
                    result: None,
                });
                return Ok(Some(format!("protocol violation: {reason}")));
            }
        }
    }
}

/// Runs every instance on a pool of `threads` workers. Output order follows
/// the instance order regardless of scheduling.
pub fn run_batch(
    set: &InstanceSet,
    agent: &AgentSpec,
    threads: usize,
) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let config = &set.manifest.config;
    pool.install(|| {
        set.instances
            .par_iter()
            .map(|inst| run_episode(config, set.spaces[&inst.query.task].clone(), inst, agent))
            .collect()
    })
}
