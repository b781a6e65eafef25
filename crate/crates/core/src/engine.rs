//! Session lifecycle: call validation, state transitions, goal detection and
//! observations.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::blocking::{self, BlockError, BlockPlan};
use crate::cost::Cost;
use crate::domain::{
    format_token, parse_token, DataKind, DataTypeInstance, DomainError, EnvConfig, ParamKind,
    Redundancy, ToolCallRecord, ToolLibrary, ToolSpec, Trajectory, Validity,
};
use crate::domain::{Dimension, TaskSpec};
use crate::oracle::shortest_path_gt;
use crate::querygen::{distractor_answer_id, gt_answer_id, Combination, PreferenceSpace, Query};
use crate::toolgen::{assign_costs, derive_seed, enumerate_tools, CostError, ToolSchema};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("session is no longer running")]
    NotRunning,
    #[error("turn limit reached; only a final answer is accepted")]
    TurnLimit,
    #[error(transparent)]
    Config(#[from] DomainError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Answered,
    Exhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub name: String,
    pub cost: Cost,
}

/// What the agent sees before choosing its next move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub turn: u32,
    pub max_turns: u32,
    pub status: SessionStatus,
    pub query: String,
    pub tools: Vec<ToolSchema>,
    pub cost_table: Vec<CostEntry>,
    pub owned: Vec<DataTypeInstance>,
    pub messages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerOutcome {
    pub intent_hit: bool,
    pub reached_goal: bool,
}

/// A single episode against one task instance.
#[derive(Clone, Debug)]
pub struct Session {
    pub(crate) config: EnvConfig,
    pub(crate) space: Arc<PreferenceSpace>,
    pub(crate) original_query: Query,
    pub(crate) query: Query,
    pub(crate) library: ToolLibrary,
    pub(crate) owned: Vec<DataTypeInstance>,
    pub(crate) lineage: HashMap<String, Combination>,
    pub(crate) next_ids: BTreeMap<DataKind, u32>,
    pub(crate) turn: u32,
    pub(crate) epoch: u32,
    pub(crate) trajectory: Trajectory,
    pub(crate) plan: BlockPlan,
    pub(crate) messages: Vec<String>,
    pub(crate) status: SessionStatus,
    pub(crate) graph_version: u64,
    /// Steps covered by successful calls in the current epoch, bit `s` for step `s`.
    pub(crate) covered: u64,
    pub(crate) goal_reached: bool,
    pub(crate) intent_hit: Option<bool>,
    pub(crate) cost_seed: u64,
}

/// Uncosted library for a task with the enum values of a query's split.
pub fn build_library(task: TaskSpec, space: &PreferenceSpace, query: &Query) -> ToolLibrary {
    enumerate_tools(task, &space.values(query.split))
}

/// The costed library a session starts from.
pub fn instance_library(
    config: &EnvConfig,
    space: &PreferenceSpace,
    query: &Query,
) -> Result<ToolLibrary, EngineError> {
    let task = TaskSpec::new(query.task, config.sequence_length)?;
    let mut library = build_library(task, space, query);
    assign_costs(&mut library, config, config.seed, &query.query_id)?;
    Ok(library)
}

fn span_mask((i, j): (u32, u32)) -> u64 {
    (i..=j).fold(0, |m, s| m | (1u64 << s))
}

impl Session {
    /// Starts a session with the seeded library of `query`.
    pub fn new(
        config: EnvConfig,
        space: Arc<PreferenceSpace>,
        query: Query,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let library = instance_library(&config, &space, &query)?;
        Self::with_library(config, space, query, library)
    }

    /// Starts a session on an explicitly provided (costed) library.
    pub fn with_library(
        config: EnvConfig,
        space: Arc<PreferenceSpace>,
        query: Query,
        library: ToolLibrary,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if library.task.sequence_length() != config.sequence_length
            || library.task.task() != query.task
        {
            return Err(EngineError::Config(DomainError::InvalidConfig(
                "library does not match the configured task".into(),
            )));
        }
        let task = library.task;
        let owned = task
            .initial_kinds()
            .into_iter()
            .map(|kind| DataTypeInstance {
                kind,
                token: format_token(&kind.token_prefix(task.task()), 0),
                epoch: 0,
            })
            .collect();
        let base_seed = derive_seed(config.seed, &query.query_id, "blocking");
        let plan = BlockPlan::new(&config, base_seed)?;
        let mut session = Session {
            cost_seed: config.seed,
            config,
            space,
            original_query: query.clone(),
            query,
            library,
            owned,
            lineage: HashMap::new(),
            next_ids: BTreeMap::new(),
            turn: 0,
            epoch: 0,
            trajectory: Trajectory::default(),
            plan,
            messages: Vec::new(),
            status: SessionStatus::Running,
            graph_version: 0,
            covered: 0,
            goal_reached: false,
            intent_hit: None,
        };
        if session.plan.count > 0 {
            blocking::schedule_next(&mut session, 0, 1)?;
            blocking::fire_due(&mut session)?;
        }
        Ok(session)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn library(&self) -> &ToolLibrary {
        &self.library
    }

    pub fn task(&self) -> TaskSpec {
        self.library.task
    }

    /// Query currently binding (replaced by preference changes).
    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn original_query(&self) -> &Query {
        &self.original_query
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn block_plan(&self) -> &BlockPlan {
        &self.plan
    }

    pub fn owned(&self) -> &[DataTypeInstance] {
        &self.owned
    }

    pub fn turn(&self) -> u32 {
        self.turn
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn is_running(&self) -> bool {
        self.status == SessionStatus::Running
    }

    pub fn goal_reached(&self) -> bool {
        self.goal_reached
    }

    pub fn intent_hit(&self) -> Option<bool> {
        self.intent_hit
    }

    /// Global seed behind the current cost table.
    pub fn cost_seed(&self) -> u64 {
        self.cost_seed
    }

    /// Bumped whenever the tool table or the epoch changes.
    pub fn graph_version(&self) -> u64 {
        self.graph_version
    }

    fn is_current(&self, inst: &DataTypeInstance) -> bool {
        inst.kind.is_session_constant() || inst.epoch == self.epoch
    }

    /// Planner state: kinds with an instance usable at the current epoch.
    pub fn state_mask(&self) -> u64 {
        let task = self.library.task;
        self.owned
            .iter()
            .filter(|i| self.is_current(i))
            .fold(0, |m, i| m | task.kind_mask(i.kind))
    }

    fn latest_current(&self, kind: DataKind) -> Option<&DataTypeInstance> {
        self.owned
            .iter()
            .rev()
            .find(|i| i.kind == kind && self.is_current(i))
    }

    /// Token of the final result minted in the current epoch, if any.
    pub fn current_final_token(&self) -> Option<String> {
        if !self.goal_reached {
            return None;
        }
        self.latest_current(DataKind::FinalResult)
            .map(|i| i.token.clone())
    }

    /// Visible tools whose inputs are all available at the current epoch.
    pub fn feasible_tools(&self) -> Vec<String> {
        let mask = self.state_mask();
        let task = self.library.task;
        self.library
            .visible()
            .filter(|t| crate::oracle::input_mask(&task, t) & !mask == 0)
            .map(|t| t.name.clone())
            .collect()
    }

    /// Exact arguments for `tool` given the binding query and newest instances.
    pub fn canonical_arguments(&self, tool: &ToolSpec) -> BTreeMap<String, Value> {
        let task = self.library.task.task();
        tool.parameters
            .iter()
            .map(|p| {
                let value = match &p.kind {
                    ParamKind::Enum { dimension, .. } => {
                        self.query.combination.get(*dimension).to_string()
                    }
                    ParamKind::Token { kind } => self
                        .latest_current(*kind)
                        .map(|i| i.token.clone())
                        .unwrap_or_else(|| format_token(&kind.token_prefix(task), 0)),
                };
                (p.name.clone(), Value::String(value))
            })
            .collect()
    }

    /// Structural argument check; returns the reason on failure.
    fn check_arguments(
        &self,
        tool: &ToolSpec,
        args: &BTreeMap<String, Value>,
    ) -> Result<(), String> {
        let task = self.library.task.task();
        if let Some(extra) = args
            .keys()
            .find(|k| !tool.parameters.iter().any(|p| &p.name == *k))
        {
            return Err(format!("unexpected parameter `{extra}`"));
        }
        for p in &tool.parameters {
            let value = match args.get(&p.name) {
                None => return Err(format!("missing parameter `{}`", p.name)),
                Some(Value::String(s)) => s.trim(),
                Some(_) => return Err(format!("parameter `{}` must be a string", p.name)),
            };
            match &p.kind {
                ParamKind::Enum { values, .. } => {
                    if !values.iter().any(|v| v == value) {
                        return Err(format!("`{value}` is not an allowed value of `{}`", p.name));
                    }
                }
                ParamKind::Token { kind } => {
                    let prefix = kind.token_prefix(task);
                    match parse_token(value) {
                        Some((pfx, _)) if pfx == prefix => {}
                        _ => return Err(format!("`{value}` is not a {prefix} identifier")),
                    }
                    if kind.is_session_constant() && value != format_token(&prefix, 0) {
                        return Err(format!(
                            "`{}` must be exactly {}",
                            p.name,
                            format_token(&prefix, 0)
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Validity of a call, ignoring blocking.
    fn classify(&self, name: &str, args: &BTreeMap<String, Value>) -> (Validity, Option<String>) {
        let Some(tool) = self.library.get(name) else {
            return (Validity::WrongName, Some(format!("unknown tool `{name}`")));
        };
        if self.library.hidden.contains(name) || self.library.removed.contains(name) {
            return (
                Validity::WrongName,
                Some(format!("tool `{name}` is not available")),
            );
        }
        if self.library.banned.contains(name) {
            return (
                Validity::BannedFailure,
                Some(format!("tool `{name}` has been disabled")),
            );
        }
        if let Err(reason) = self.check_arguments(tool, args) {
            return (Validity::WrongParams, Some(reason));
        }
        let mask = self.state_mask();
        let task = self.library.task;
        if let Some(missing) = tool.inputs.iter().find(|k| task.kind_mask(**k) & mask == 0) {
            return (
                Validity::Inaccessible,
                Some(format!("no {} is available yet", missing.name(task.task()))),
            );
        }
        for p in &tool.parameters {
            if let ParamKind::Token { kind } = p.kind {
                if kind.is_session_constant() {
                    continue;
                }
                let token = args[&p.name].as_str().unwrap_or_default().trim();
                let owned = self
                    .owned
                    .iter()
                    .any(|i| i.kind == kind && i.epoch == self.epoch && i.token == token);
                if !owned {
                    return (
                        Validity::WrongParams,
                        Some(format!(
                            "`{token}` does not refer to a current {}",
                            kind.name(task.task())
                        )),
                    );
                }
            }
        }
        (Validity::Ok, None)
    }

    fn mint(&mut self, tool: &ToolSpec, args: &BTreeMap<String, Value>) -> DataTypeInstance {
        let task = self.library.task.task();
        let lineage = if tool.span.0 == 1 {
            Combination(Dimension::ALL.map(|d| {
                args[&d.param_name(task)]
                    .as_str()
                    .unwrap_or_default()
                    .trim()
                    .to_string()
            }))
        } else {
            let prev = self.library.task.step_output(tool.span.0 - 1);
            let token = args[&prev.name(task)].as_str().unwrap_or_default().trim();
            self.lineage
                .get(token)
                .cloned()
                .expect("validated tokens have a lineage")
        };
        let kind = tool.output;
        let id = if kind == DataKind::FinalResult {
            if lineage == self.query.combination {
                gt_answer_id(self.config.seed, &self.query.query_id)
            } else {
                distractor_answer_id(self.config.seed, &self.query.query_id, &lineage)
            }
        } else {
            let next = self.next_ids.entry(kind).or_insert(0);
            *next += 1;
            *next
        };
        let instance = DataTypeInstance {
            kind,
            token: format_token(&kind.token_prefix(task), id),
            epoch: self.epoch,
        };
        if kind != DataKind::FinalResult {
            self.lineage.insert(instance.token.clone(), lineage);
        }
        if !self.owned.contains(&instance) {
            self.owned.push(instance.clone());
        }
        instance
    }

    /// Processes one tool call. Every call consumes a turn.
    pub fn invoke(
        &mut self,
        name: &str,
        args: &BTreeMap<String, Value>,
    ) -> Result<ToolCallRecord, EngineError> {
        if !self.is_running() {
            return Err(EngineError::NotRunning);
        }
        if self.turn >= self.config.max_turns {
            self.status = SessionStatus::Exhausted;
            return Err(EngineError::TurnLimit);
        }
        let (mut validity, mut detail) = self.classify(name, args);
        let mut ban_trigger = None;
        if validity == Validity::Ok && !self.goal_reached && self.plan.ban_pending(self.turn) {
            ban_trigger = self.plan.next_trigger;
            let event = blocking::apply_ban(self, name);
            if let blocking::BlockPayload::BanTool { message, .. } = &event.payload {
                detail = Some(message.clone());
            }
            self.plan.fired.push(event);
            validity = Validity::BannedFailure;
        }
        let mut record = ToolCallRecord {
            turn: self.turn + 1,
            tool_name: name.to_string(),
            arguments: args.clone(),
            validity,
            charged_cost: Cost::ZERO,
            produced: None,
            redundancy: Redundancy::None,
            epoch: self.epoch,
            detail,
        };
        if validity == Validity::Ok {
            let tool = self
                .library
                .get(name)
                .cloned()
                .expect("validated tool exists");
            record.redundancy = if self.goal_reached {
                Redundancy::Extra
            } else if self.covered & span_mask(tool.span) != 0 {
                Redundancy::Repeated
            } else {
                Redundancy::None
            };
            record.charged_cost = tool.cost;
            record.produced = Some(self.mint(&tool, args));
            self.covered |= span_mask(tool.span);
            self.trajectory.total_cost += tool.cost;
            if tool.output == DataKind::FinalResult {
                self.goal_reached = true;
                self.trajectory.reached_goal = true;
            }
        }
        self.turn += 1;
        self.trajectory.records.push(record.clone());
        if let Some(trigger) = ban_trigger {
            blocking::schedule_next(self, self.turn, trigger + 1)?;
        }
        if self.turn >= self.config.max_turns && !self.goal_reached {
            self.status = SessionStatus::Exhausted;
        }
        blocking::fire_due(self)?;
        Ok(record)
    }

    /// Ends the episode with `token` as the final answer.
    pub fn submit_answer(&mut self, token: &str) -> Result<AnswerOutcome, EngineError> {
        if !self.is_running() {
            return Err(EngineError::NotRunning);
        }
        let token = token.trim();
        let hit = token == self.query.gt_answer;
        self.trajectory.final_answer = Some(token.to_string());
        self.intent_hit = Some(hit);
        self.status = SessionStatus::Answered;
        Ok(AnswerOutcome {
            intent_hit: hit,
            reached_goal: self.goal_reached,
        })
    }

    /// Observation without draining queued messages.
    pub fn peek_observation(&self) -> Observation {
        Observation {
            turn: self.turn,
            max_turns: self.config.max_turns,
            status: self.status,
            query: self.query.text.clone(),
            tools: crate::toolgen::visible_schemas(&self.library),
            cost_table: self
                .library
                .visible()
                .map(|t| CostEntry {
                    name: t.name.clone(),
                    cost: t.cost,
                })
                .collect(),
            owned: self.owned.clone(),
            messages: self.messages.clone(),
        }
    }

    /// Current view for the agent; explicit block messages are delivered once.
    pub fn observation(&mut self) -> Observation {
        let obs = self.peek_observation();
        self.messages.clear();
        obs
    }

    /// Cost-optimal plan from the current state on the current graph.
    pub fn optimal_plan(&self) -> Result<crate::oracle::Plan, crate::oracle::OracleError> {
        shortest_path_gt(&self.library, self.state_mask())
    }
}
