//! Shared vocabulary: tasks, datatypes, tools, configuration and trajectories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::Cost;

/// Largest supported task sequence length.
///
/// Bounded by the number of refinement dimensions that have descriptions
/// and by the 64-bit state masks used by the planners.
pub const MAX_SEQUENCE_LENGTH: u32 = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("sequence length {0} is too short; at least 4 steps are needed for a filtering stage")]
    SequenceTooShort(u32),
    #[error("sequence length {0} exceeds the supported maximum of {MAX_SEQUENCE_LENGTH}")]
    SequenceTooLong(u32),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskName {
    Location,
    Transportation,
    Accommodation,
    Attraction,
    Dining,
    Shopping,
}

impl TaskName {
    pub const ALL: [TaskName; 6] = [
        TaskName::Location,
        TaskName::Transportation,
        TaskName::Accommodation,
        TaskName::Attraction,
        TaskName::Dining,
        TaskName::Shopping,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::Location => "Location",
            TaskName::Transportation => "Transportation",
            TaskName::Accommodation => "Accommodation",
            TaskName::Attraction => "Attraction",
            TaskName::Dining => "Dining",
            TaskName::Shopping => "Shopping",
        }
    }

    pub fn slug(self) -> String {
        self.as_str().to_ascii_lowercase()
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DomainError::UnknownTask(s.to_string()))
    }
}

/// A task together with its sequence length `N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    task: TaskName,
    sequence_length: u32,
}

impl TaskSpec {
    pub fn new(task: TaskName, sequence_length: u32) -> Result<Self, DomainError> {
        if sequence_length < 4 {
            return Err(DomainError::SequenceTooShort(sequence_length));
        }
        if sequence_length > MAX_SEQUENCE_LENGTH {
            return Err(DomainError::SequenceTooLong(sequence_length));
        }
        Ok(TaskSpec {
            task,
            sequence_length,
        })
    }

    pub fn task(&self) -> TaskName {
        self.task
    }

    pub fn sequence_length(&self) -> u32 {
        self.sequence_length
    }

    pub fn refinement_steps(&self) -> u32 {
        self.sequence_length - 3
    }

    /// Every task except Location consumes a location preference fixed at
    /// session start.
    pub fn needs_location_preference(&self) -> bool {
        self.task != TaskName::Location
    }

    /// Datatype produced by step `step` (1-based).
    pub fn step_output(&self, step: u32) -> DataKind {
        debug_assert!((1..=self.sequence_length).contains(&step));
        match step {
            1 => DataKind::Preference,
            2 => DataKind::CandidateRaw,
            s if s == self.sequence_length => DataKind::FinalResult,
            s => DataKind::CandidateLevel(s - 2),
        }
    }

    /// Session constants present in the initial state.
    pub fn initial_kinds(&self) -> Vec<DataKind> {
        let mut kinds = vec![DataKind::TimeInfo];
        if self.needs_location_preference() {
            kinds.push(DataKind::LocationPreference);
        }
        kinds.push(DataKind::UserPreferenceFacts);
        kinds
    }

    /// Bit index of a datatype inside planner state masks.
    pub fn kind_bit(&self, kind: DataKind) -> u32 {
        match kind {
            DataKind::TimeInfo => 0,
            DataKind::UserPreferenceFacts => 1,
            DataKind::LocationPreference => 2,
            DataKind::Preference => 3,
            DataKind::CandidateRaw => 4,
            DataKind::CandidateLevel(k) => 4 + k,
            DataKind::FinalResult => 2 + self.sequence_length,
        }
    }

    pub fn kind_mask(&self, kind: DataKind) -> u64 {
        1u64 << self.kind_bit(kind)
    }

    pub fn initial_mask(&self) -> u64 {
        self.initial_kinds()
            .into_iter()
            .fold(0, |m, k| m | self.kind_mask(k))
    }

    pub fn goal_mask(&self) -> u64 {
        self.kind_mask(DataKind::FinalResult)
    }
}

/// The ordered datatype chain produced by the task's atomic steps.
pub fn build_datatype_chain(
    task: TaskName,
    sequence_length: u32,
) -> Result<Vec<DataKind>, DomainError> {
    let spec = TaskSpec::new(task, sequence_length)?;
    Ok((1..=spec.sequence_length)
        .map(|s| spec.step_output(s))
        .collect())
}

/// Kinds of datatype that can be owned during a session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DataKind {
    TimeInfo,
    UserPreferenceFacts,
    /// Location preference given as a session constant (non-Location tasks).
    LocationPreference,
    Preference,
    CandidateRaw,
    /// Output of refinement step `k` (1-based).
    CandidateLevel(u32),
    FinalResult,
}

impl DataKind {
    pub fn name(self, task: TaskName) -> String {
        match self {
            DataKind::TimeInfo => "TimeInfo".into(),
            DataKind::UserPreferenceFacts => "UserPreferenceFacts".into(),
            DataKind::LocationPreference => "LocationPreference".into(),
            DataKind::Preference => format!("{task}Preference"),
            DataKind::CandidateRaw => format!("{task}Candidate_Raw"),
            DataKind::CandidateLevel(k) => format!("{task}Candidate_L{k}"),
            DataKind::FinalResult => format!("Travel{task}"),
        }
    }

    /// Prefix used inside instance tokens. Final results are reported as
    /// candidate identifiers, e.g. `<LocationCandidate01234>`.
    pub fn token_prefix(self, task: TaskName) -> String {
        match self {
            DataKind::FinalResult => format!("{task}Candidate"),
            other => other.name(task),
        }
    }

    /// Kinds derived from the user preference; invalidated by preference changes.
    pub fn is_preference_derived(self) -> bool {
        matches!(
            self,
            DataKind::Preference
                | DataKind::CandidateRaw
                | DataKind::CandidateLevel(_)
                | DataKind::FinalResult
        )
    }

    pub fn is_session_constant(self) -> bool {
        !self.is_preference_derived()
    }
}

pub fn format_token(prefix: &str, id: u32) -> String {
    format!("<{prefix}{id:05}>")
}

/// Splits `<PrefixNNNNN>` into prefix and numeric id.
pub fn parse_token(token: &str) -> Option<(&str, u32)> {
    let inner = token.trim().strip_prefix('<')?.strip_suffix('>')?;
    if inner.len() < 6 {
        return None;
    }
    let (prefix, digits) = inner.split_at(inner.len() - 5);
    if prefix.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((prefix, digits.parse().ok()?))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataTypeInstance {
    pub kind: DataKind,
    pub token: String,
    pub epoch: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Atomic,
    Composite,
}

/// The four preference dimensions every task exposes on its first step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Category,
    Tier,
    Style,
    FeaturePackage,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Category,
        Dimension::Tier,
        Dimension::Style,
        Dimension::FeaturePackage,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Category => "Category",
            Dimension::Tier => "Tier",
            Dimension::Style => "Style",
            Dimension::FeaturePackage => "FeaturePackage",
        }
    }

    pub fn param_name(self, task: TaskName) -> String {
        format!("{task}{}", self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ParamKind {
    /// An instance token of the given datatype.
    Token { kind: DataKind },
    /// One of a fixed list of preference values.
    Enum {
        dimension: Dimension,
        values: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub description: String,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub kind: ToolKind,
    /// Inclusive 1-based step interval covered by the tool.
    pub span: (u32, u32),
    pub component_names: Vec<String>,
    pub inputs: Vec<DataKind>,
    pub output: DataKind,
    pub parameters: Vec<ParamSpec>,
    pub cost: Cost,
    pub description: String,
}

impl ToolSpec {
    /// Number of atomic steps the tool performs.
    pub fn components(&self) -> u32 {
        self.span.1 - self.span.0 + 1
    }
}

/// All tools of one task instance plus their availability sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolLibrary {
    pub task: TaskSpec,
    pub tools: Vec<ToolSpec>,
    /// Never shown to agents (the single full-span tool).
    pub hidden: BTreeSet<String>,
    pub removed: BTreeSet<String>,
    pub banned: BTreeSet<String>,
    pub costed: bool,
}

impl ToolLibrary {
    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn by_span(&self, span: (u32, u32)) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.span == span)
    }

    pub fn atomic(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.iter().filter(|t| t.kind == ToolKind::Atomic)
    }

    pub fn composite(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.iter().filter(|t| t.kind == ToolKind::Composite)
    }

    pub fn is_visible(&self, name: &str) -> bool {
        !self.hidden.contains(name) && !self.removed.contains(name) && !self.banned.contains(name)
    }

    /// Tools an agent may currently see and plan with.
    pub fn visible(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.iter().filter(|t| self.is_visible(&t.name))
    }

    pub fn cost_of(&self, name: &str) -> Option<Cost> {
        self.get(name).map(|t| t.cost)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockType {
    #[default]
    None,
    BanTool,
    PreferenceChange,
    CostChange,
    RemoveTools,
}

impl BlockType {
    pub const ALL_ACTIVE: [BlockType; 4] = [
        BlockType::BanTool,
        BlockType::PreferenceChange,
        BlockType::CostChange,
        BlockType::RemoveTools,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockType::None => "none",
            BlockType::BanTool => "ban_tool",
            BlockType::PreferenceChange => "preference_change",
            BlockType::CostChange => "cost_change",
            BlockType::RemoveTools => "remove_tools",
        }
    }

    /// Explicit blocks notify the agent; implicit ones only change the tool table.
    pub fn is_explicit(self) -> bool {
        matches!(self, BlockType::BanTool | BlockType::PreferenceChange)
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockType {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().replace('-', "_").to_ascii_lowercase();
        [BlockType::None]
            .into_iter()
            .chain(BlockType::ALL_ACTIVE)
            .find(|b| b.as_str() == wanted)
            .ok_or_else(|| DomainError::InvalidConfig(format!("unknown block type `{s}`")))
    }
}

/// Environment hyperparameters. Defaults follow the reference setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub seed: u64,
    pub sequence_length: u32,
    pub c_min: Cost,
    pub c_max: Cost,
    pub noise_std: f64,
    pub max_turns: u32,
    pub block_type: BlockType,
    pub block_count: u32,
    pub seed_interval: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            seed: 42,
            sequence_length: 5,
            c_min: Cost::from_cents(1500),
            c_max: Cost::from_cents(2500),
            noise_std: 0.1,
            max_turns: 20,
            block_type: BlockType::None,
            block_count: 0,
            seed_interval: 100,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        let invalid = |msg: String| Err(DomainError::InvalidConfig(msg));
        if self.sequence_length < 4 {
            return Err(DomainError::SequenceTooShort(self.sequence_length));
        }
        if self.sequence_length > MAX_SEQUENCE_LENGTH {
            return Err(DomainError::SequenceTooLong(self.sequence_length));
        }
        if self.c_min > self.c_max {
            return invalid(format!("c_min {} exceeds c_max {}", self.c_min, self.c_max));
        }
        if self.c_min < Cost::FLOOR {
            return invalid(format!("c_min {} is below the 1.00 cost floor", self.c_min));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return invalid(format!(
                "noise_std must be a non-negative real, got {}",
                self.noise_std
            ));
        }
        if self.max_turns < self.sequence_length {
            return invalid(format!(
                "max_turns {} is smaller than the sequence length {}",
                self.max_turns, self.sequence_length
            ));
        }
        match self.block_type {
            BlockType::None if self.block_count > 0 => {
                return invalid("block_count > 0 requires a block type".into());
            }
            BlockType::BanTool if self.block_count > self.sequence_length - 2 => {
                return invalid(format!(
                    "at most {} ban events keep the task solvable at sequence length {}",
                    self.sequence_length - 2,
                    self.sequence_length
                ));
            }
            BlockType::RemoveTools if self.block_count > self.sequence_length - 2 => {
                return invalid(format!(
                    "at most {} removal events fit into the composite lengths 2..={}",
                    self.sequence_length - 2,
                    self.sequence_length - 1
                ));
            }
            _ => {}
        }
        if self.seed_interval == 0 {
            return invalid("seed_interval must be positive".into());
        }
        Ok(())
    }

    pub fn blocks_enabled(&self) -> bool {
        self.block_type != BlockType::None && self.block_count > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Ok,
    WrongName,
    WrongParams,
    Inaccessible,
    BannedFailure,
}

impl Validity {
    /// Invalid tool use attributable to the agent (counts toward ITUR).
    pub fn is_invalid_use(self) -> bool {
        matches!(
            self,
            Validity::WrongName | Validity::WrongParams | Validity::Inaccessible
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redundancy {
    #[default]
    None,
    Repeated,
    Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub turn: u32,
    pub tool_name: String,
    pub arguments: BTreeMap<String, serde_json::Value>,
    pub validity: Validity,
    pub charged_cost: Cost,
    pub produced: Option<DataTypeInstance>,
    pub redundancy: Redundancy,
    pub epoch: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<ToolCallRecord>,
    pub reached_goal: bool,
    pub final_answer: Option<String>,
    pub total_cost: Cost,
}

impl Trajectory {
    pub fn ok_records(&self) -> impl Iterator<Item = &ToolCallRecord> {
        self.records.iter().filter(|r| r.validity == Validity::Ok)
    }

    /// Tool names of successful calls, in order.
    pub fn ok_names(&self) -> Vec<String> {
        self.ok_records().map(|r| r.tool_name.clone()).collect()
    }

    pub fn recomputed_cost(&self) -> Cost {
        self.ok_records().map(|r| r.charged_cost).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn location_chain_n4() {
        let chain = build_datatype_chain(TaskName::Location, 4).unwrap();
        let names: Vec<String> = chain.iter().map(|k| k.name(TaskName::Location)).collect();
        assert_eq!(
            names,
            [
                "LocationPreference",
                "LocationCandidate_Raw",
                "LocationCandidate_L1",
                "TravelLocation"
            ]
        );
    }

    #[test]
    fn location_chain_n5_has_two_refinements() {
        let chain = build_datatype_chain(TaskName::Location, 5).unwrap();
        assert_eq!(chain.len(), 5);
        assert_eq!(chain[2], DataKind::CandidateLevel(1));
        assert_eq!(chain[3], DataKind::CandidateLevel(2));
    }

    #[test]
    fn chain_rejects_n3() {
        for task in TaskName::ALL {
            assert_eq!(
                build_datatype_chain(task, 3),
                Err(DomainError::SequenceTooShort(3))
            );
        }
    }

    #[test]
    fn chain_plus_initial_has_n_plus_one_node_kinds() {
        for n in 4..=10 {
            let spec = TaskSpec::new(TaskName::Dining, n).unwrap();
            // Initial node plus one node per step.
            assert_eq!(
                1 + build_datatype_chain(spec.task(), n).unwrap().len() as u32,
                n + 1
            );
            assert_eq!(spec.refinement_steps() + 3, n);
        }
    }

    #[test]
    fn kind_bits_are_distinct() {
        let spec = TaskSpec::new(TaskName::Shopping, 8).unwrap();
        let mut bits: Vec<u32> = spec
            .initial_kinds()
            .iter()
            .map(|k| spec.kind_bit(*k))
            .collect();
        bits.extend((1..=8).map(|s| spec.kind_bit(spec.step_output(s))));
        let unique: BTreeSet<u32> = bits.iter().copied().collect();
        assert_eq!(unique.len(), bits.len());
    }

    #[test]
    fn token_format_and_parse() {
        assert_eq!(format_token("TimeInfo", 0), "<TimeInfo00000>");
        assert_eq!(
            parse_token("<LocationCandidate01234>"),
            Some(("LocationCandidate", 1234))
        );
        assert_eq!(parse_token("<TimeInfo00000>"), Some(("TimeInfo", 0)));
        assert_eq!(parse_token("TimeInfo00000"), None);
        assert_eq!(parse_token("<00000>"), None);
        assert_eq!(parse_token("<TimeInfo0000x>"), None);
    }

    #[test]
    fn default_config_matches_reference_setting() {
        let c = EnvConfig::default();
        assert_eq!(c.seed, 42);
        assert_eq!(c.c_min, Cost::from_cents(1500));
        assert_eq!(c.c_max, Cost::from_cents(2500));
        assert_eq!(c.noise_std, 0.1);
        assert_eq!(c.max_turns, 20);
        assert_eq!(c.sequence_length, 5);
        assert_eq!(c.seed_interval, 100);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation_errors() {
        let mut c = EnvConfig {
            c_min: Cost::from_cents(3000),
            ..EnvConfig::default()
        };
        assert!(c.validate().is_err());
        c = EnvConfig {
            block_type: BlockType::BanTool,
            block_count: 4,
            ..EnvConfig::default()
        };
        assert!(c.validate().is_err());
        c.block_count = 3;
        c.validate().unwrap();
        c = EnvConfig {
            max_turns: 3,
            ..EnvConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn block_type_parse() {
        assert_eq!("ban-tool".parse::<BlockType>().unwrap(), BlockType::BanTool);
        assert_eq!(
            "cost_change".parse::<BlockType>().unwrap(),
            BlockType::CostChange
        );
        assert!("flood".parse::<BlockType>().is_err());
    }
}
