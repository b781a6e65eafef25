//! Preference combinations, query rendering and ground-truth answers.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{format_token, DataKind, Dimension, DomainError, TaskName};
use crate::toolgen::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Test,
    Train,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Test => "test",
            Split::Train => "train",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "test" => Ok(Split::Test),
            "train" => Ok(Split::Train),
            _ => Err(DomainError::InvalidConfig(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PreferenceError {
    #[error("preference file for {task}: {source}")]
    Parse {
        task: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{task} {dimension}: {reason}")]
    Invalid {
        task: TaskName,
        dimension: &'static str,
        reason: String,
    },
    #[error("file describes {found}, expected {expected}")]
    WrongTask { expected: TaskName, found: TaskName },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionValues {
    pub test: Vec<String>,
    pub train: Vec<String>,
}

impl DimensionValues {
    pub fn split(&self, split: Split) -> &[String] {
        match split {
            Split::Test => &self.test,
            Split::Train => &self.train,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Test => &mut self.test,
            Split::Train => &mut self.train,
        }
    }
}

/// Candidate values of the four preference dimensions of one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceSpace {
    pub task: TaskName,
    #[serde(rename = "Category")]
    pub category: DimensionValues,
    #[serde(rename = "Tier")]
    pub tier: DimensionValues,
    #[serde(rename = "Style")]
    pub style: DimensionValues,
    #[serde(rename = "FeaturePackage")]
    pub feature_package: DimensionValues,
}

fn builtin_json(task: TaskName) -> &'static str {
    match task {
        TaskName::Location => include_str!("../data/preferences/location.json"),
        TaskName::Transportation => include_str!("../data/preferences/transportation.json"),
        TaskName::Accommodation => include_str!("../data/preferences/accommodation.json"),
        TaskName::Attraction => include_str!("../data/preferences/attraction.json"),
        TaskName::Dining => include_str!("../data/preferences/dining.json"),
        TaskName::Shopping => include_str!("../data/preferences/shopping.json"),
    }
}

fn humanize(value: &str) -> String {
    value.replace('_', " ")
}

impl PreferenceSpace {
    /// The preference space shipped with the crate.
    pub fn builtin(task: TaskName) -> Self {
        Self::from_json_str(task, builtin_json(task)).expect("bundled preference data is valid")
    }

    pub fn from_json_str(task: TaskName, text: &str) -> Result<Self, PreferenceError> {
        let space: PreferenceSpace =
            serde_json::from_str(text).map_err(|source| PreferenceError::Parse {
                task: task.to_string(),
                source,
            })?;
        if space.task != task {
            return Err(PreferenceError::WrongTask {
                expected: task,
                found: space.task,
            });
        }
        space.validate()?;
        Ok(space)
    }

    /// Loads `<dir>/<task>.json` (lowercase task name).
    pub fn load_dir(dir: &Path, task: TaskName) -> Result<Self, PreferenceError> {
        let path = dir.join(format!("{}.json", task.slug()));
        let text = std::fs::read_to_string(&path).map_err(|source| PreferenceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(task, &text)
    }

    pub fn dimension(&self, d: Dimension) -> &DimensionValues {
        match d {
            Dimension::Category => &self.category,
            Dimension::Tier => &self.tier,
            Dimension::Style => &self.style,
            Dimension::FeaturePackage => &self.feature_package,
        }
    }

    fn dimension_mut(&mut self, d: Dimension) -> &mut DimensionValues {
        match d {
            Dimension::Category => &mut self.category,
            Dimension::Tier => &mut self.tier,
            Dimension::Style => &mut self.style,
            Dimension::FeaturePackage => &mut self.feature_package,
        }
    }

    pub fn validate(&self) -> Result<(), PreferenceError> {
        for d in Dimension::ALL {
            let invalid = |reason: String| PreferenceError::Invalid {
                task: self.task,
                dimension: d.as_str(),
                reason,
            };
            let values = self.dimension(d);
            for split in [Split::Test, Split::Train] {
                if values.split(split).is_empty() {
                    return Err(invalid(format!("no {split} values")));
                }
            }
            let all: Vec<&String> = values.test.iter().chain(&values.train).collect();
            if let Some(bad) = all.iter().find(|v| {
                v.is_empty() || !v.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
            }) {
                return Err(invalid(format!(
                    "value `{bad}` must be a non-empty [A-Za-z0-9_] word"
                )));
            }
            let unique: BTreeSet<&String> = all.iter().copied().collect();
            if unique.len() != all.len() {
                return Err(invalid("values repeat or overlap between splits".into()));
            }
            let rendered: BTreeSet<String> = all.iter().map(|v| humanize(v)).collect();
            if rendered.len() != all.len() {
                return Err(invalid("two values render to the same text".into()));
            }
        }
        Ok(())
    }

    /// Values of each dimension in a split, indexed by [`Dimension::index`].
    pub fn values(&self, split: Split) -> [Vec<String>; 4] {
        Dimension::ALL.map(|d| self.dimension(d).split(split).to_vec())
    }

    /// Narrows one dimension of one split to `keep` (order preserved from the space).
    pub fn restrict(
        &mut self,
        split: Split,
        dimension: Dimension,
        keep: &[String],
    ) -> Result<(), PreferenceError> {
        let task = self.task;
        let values = self.dimension_mut(dimension).split_mut(split);
        if let Some(missing) = keep.iter().find(|k| !values.contains(k)) {
            return Err(PreferenceError::Invalid {
                task,
                dimension: dimension.as_str(),
                reason: format!("`{missing}` is not a {split} value"),
            });
        }
        values.retain(|v| keep.contains(v));
        if values.is_empty() {
            return Err(PreferenceError::Invalid {
                task,
                dimension: dimension.as_str(),
                reason: "restriction leaves no values".into(),
            });
        }
        Ok(())
    }
}

/// One value per preference dimension.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Combination(pub [String; 4]);

impl Combination {
    pub fn get(&self, d: Dimension) -> &str {
        &self.0[d.index()]
    }

    /// Stable textual key, e.g. `city/major_metropolis/...`.
    pub fn key(&self) -> String {
        self.0.join("/")
    }
}

pub fn query_id(task: TaskName, split: Split, index: usize) -> String {
    format!("{}_{}_{index:04}", task.slug(), split)
}

/// Cartesian product of a split's values, lexicographic in dimension order.
pub fn enumerate_combinations(space: &PreferenceSpace, split: Split) -> Vec<Combination> {
    let values = space.values(split);
    let mut out = Vec::with_capacity(values.iter().map(Vec::len).product());
    for a in &values[0] {
        for b in &values[1] {
            for c in &values[2] {
                for d in &values[3] {
                    out.push(Combination([a.clone(), b.clone(), c.clone(), d.clone()]));
                }
            }
        }
    }
    out
}

fn clauses(task: TaskName, c: &Combination) -> [String; 4] {
    let [cat, tier, style, feat] = [0, 1, 2, 3].map(|i| humanize(&c.0[i]));
    match task {
        TaskName::Location => [
            format!("I would like my next destination to be a {cat} kind of place."),
            format!("In terms of size and setting, think {tier}."),
            format!("The overall atmosphere I am after is {style}."),
            format!("A highlight for me would be {feat}."),
        ],
        TaskName::Transportation => [
            format!("For getting there I want to go by {cat}."),
            format!("Please book me at the {tier} level."),
            format!("What matters most on the journey is {style}."),
            format!("The service should include {feat}."),
        ],
        TaskName::Accommodation => [
            format!("I need a place to stay, preferably a {cat}."),
            format!("It should be in the {tier} range."),
            format!("The vibe I am looking for is {style}."),
            format!("It has to offer {feat}."),
        ],
        TaskName::Attraction => [
            format!("I want to spend a day at a {cat}."),
            format!("Ideally it is {tier}."),
            format!("The visit should feel {style}."),
            format!("It would be great if it had {feat}."),
        ],
        TaskName::Dining => [
            format!("For dinner I have {cat} in mind."),
            format!("Price-wise, {tier} suits me."),
            format!("Food-wise I am in the mood for {style}."),
            format!("The place should have {feat}."),
        ],
        TaskName::Shopping => [
            format!("I plan to go shopping at a {cat}."),
            format!("The price level should be {tier}."),
            format!("I am mostly into {style}."),
            format!("A must-have is {feat}."),
        ],
    }
}

/// Deterministic natural-language query: one sentence per dimension.
pub fn render_query(task: TaskName, combination: &Combination) -> String {
    clauses(task, combination).join(" ")
}

/// Unique correct final answer of a datapoint.
pub fn derive_gt_answer(global_seed: u64, query_id: &str, task: TaskName) -> String {
    format_token(
        &DataKind::FinalResult.token_prefix(task),
        gt_answer_id(global_seed, query_id),
    )
}

pub fn gt_answer_id(global_seed: u64, query_id: &str) -> u32 {
    (derive_seed(global_seed, query_id, "gt_answer") % 100_000) as u32
}

/// Id of the final candidate reached from a preference lineage that does
/// not match the query. Never equal to the correct answer's id.
pub fn distractor_answer_id(global_seed: u64, query_id: &str, lineage: &Combination) -> u32 {
    let gt = gt_answer_id(global_seed, query_id);
    let id = (derive_seed(
        global_seed,
        query_id,
        &format!("candidate:{}", lineage.key()),
    ) % 100_000) as u32;
    if id == gt {
        (id + 1) % 100_000
    } else {
        id
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub task: TaskName,
    pub split: Split,
    pub combination: Combination,
    pub text: String,
    pub gt_answer: String,
}

impl Query {
    pub fn new(
        global_seed: u64,
        task: TaskName,
        split: Split,
        index: usize,
        combination: Combination,
    ) -> Self {
        let query_id = query_id(task, split, index);
        Query {
            text: render_query(task, &combination),
            gt_answer: derive_gt_answer(global_seed, &query_id, task),
            query_id,
            task,
            split,
            combination,
        }
    }
}

/// All queries of a split, in enumeration order.
pub fn build_queries(global_seed: u64, space: &PreferenceSpace, split: Split) -> Vec<Query> {
    enumerate_combinations(space, split)
        .into_iter()
        .enumerate()
        .map(|(i, c)| Query::new(global_seed, space.task, split, i, c))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidatorError {
    #[error("validator timed out")]
    Timeout,
    #[error("validator transport failure: {0}")]
    Transport(String),
    #[error("unrecognized validator response `{0}`")]
    BadResponse(String),
}

/// Decides whether a preference combination is internally consistent.
pub trait CombinationValidator {
    fn validate(
        &self,
        task: TaskName,
        combination: &Combination,
    ) -> Result<Verdict, ValidatorError>;
}

/// Keeps every combination.
#[derive(Clone, Copy, Debug, Default)]
pub struct AcceptAll;

impl CombinationValidator for AcceptAll {
    fn validate(&self, _: TaskName, _: &Combination) -> Result<Verdict, ValidatorError> {
        Ok(Verdict::Keep)
    }
}

/// Maps a `conflict` / `no conflict` judgement to a verdict.
pub fn parse_conflict_response(text: &str) -> Result<Verdict, ValidatorError> {
    let cleaned = text.trim().trim_matches('*').trim().to_ascii_lowercase();
    match cleaned.as_str() {
        "no conflict" => Ok(Verdict::Keep),
        "conflict" => Ok(Verdict::Drop),
        _ => Err(ValidatorError::BadResponse(text.to_string())),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub kept: Vec<Query>,
    pub dropped: Vec<String>,
    /// Query ids the validator could not decide, with the error text.
    pub undecided: Vec<(String, String)>,
}

pub fn filter_queries(
    task: TaskName,
    queries: Vec<Query>,
    validator: &dyn CombinationValidator,
) -> ValidationOutcome {
    let mut out = ValidationOutcome::default();
    for q in queries {
        match validator.validate(task, &q.combination) {
            Ok(Verdict::Keep) => out.kept.push(q),
            Ok(Verdict::Drop) => out.dropped.push(q.query_id),
            Err(e) => out.undecided.push((q.query_id, e.to_string())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transportation_split_sizes() {
        let space = PreferenceSpace::builtin(TaskName::Transportation);
        assert_eq!(enumerate_combinations(&space, Split::Test).len(), 256);
        assert_eq!(enumerate_combinations(&space, Split::Train).len(), 1296);
        assert_eq!(
            space.values(Split::Test)[0],
            ["flight", "train", "bus", "car_rental"]
        );
    }

    #[test]
    fn all_tasks_have_1552_combinations() {
        let total: usize = TaskName::ALL
            .iter()
            .map(|&t| {
                let s = PreferenceSpace::builtin(t);
                enumerate_combinations(&s, Split::Test).len()
                    + enumerate_combinations(&s, Split::Train).len()
            })
            .sum();
        assert_eq!(total, 6 * 1552);
    }

    #[test]
    fn restriction_shrinks_product_and_keeps_order() {
        let mut space = PreferenceSpace::builtin(TaskName::Transportation);
        let full = enumerate_combinations(&space, Split::Test);
        space
            .restrict(
                Split::Test,
                Dimension::Tier,
                &["standard_class".to_string()],
            )
            .unwrap();
        let restricted = enumerate_combinations(&space, Split::Test);
        assert_eq!(restricted.len(), 64);
        let filtered: Vec<_> = full
            .into_iter()
            .filter(|c| c.get(Dimension::Tier) == "standard_class")
            .collect();
        assert_eq!(restricted, filtered);
        assert!(space
            .restrict(Split::Test, Dimension::Tier, &["ferry".to_string()])
            .is_err());
    }

    #[test]
    fn query_ids_are_stable() {
        let space = PreferenceSpace::builtin(TaskName::Location);
        let qs = build_queries(42, &space, Split::Test);
        assert_eq!(qs[0].query_id, "location_test_0000");
        assert_eq!(qs[255].query_id, "location_test_0255");
    }

    #[test]
    fn example_location_query_names_all_four_values() {
        let c = Combination(
            [
                "city",
                "major_metropolis",
                "historical_and_traditional",
                "architectural_marvel",
            ]
            .map(String::from),
        );
        let text = render_query(TaskName::Location, &c);
        for needle in [
            "city",
            "major metropolis",
            "historical and traditional",
            "architectural marvel",
        ] {
            assert!(text.contains(needle), "{text}");
        }
        assert_eq!(text, render_query(TaskName::Location, &c));
    }

    #[test]
    fn one_dimension_change_alters_one_clause() {
        let a = Combination(
            [
                "flight",
                "luxury_class",
                "speed_priority",
                "special_luggage_allowance",
            ]
            .map(String::from),
        );
        let mut b = a.clone();
        b.0[2] = "scenic_route".into();
        let ca = clauses(TaskName::Transportation, &a);
        let cb = clauses(TaskName::Transportation, &b);
        let differing: Vec<usize> = (0..4).filter(|&i| ca[i] != cb[i]).collect();
        assert_eq!(differing, [2]);
    }

    #[test]
    fn rendering_is_injective() {
        for task in TaskName::ALL {
            let space = PreferenceSpace::builtin(task);
            for split in [Split::Test, Split::Train] {
                let texts: BTreeSet<String> = enumerate_combinations(&space, split)
                    .iter()
                    .map(|c| render_query(task, c))
                    .collect();
                assert_eq!(texts.len(), enumerate_combinations(&space, split).len());
            }
        }
    }

    #[test]
    fn gt_answer_format_and_determinism() {
        let a = derive_gt_answer(42, "location_test_0007", TaskName::Location);
        assert!(a.starts_with("<LocationCandidate") && a.ends_with('>'));
        assert_eq!(a.len(), "<LocationCandidate00000>".len());
        assert_eq!(
            a,
            derive_gt_answer(42, "location_test_0007", TaskName::Location)
        );
        assert_ne!(
            a,
            derive_gt_answer(42, "location_test_0008", TaskName::Location)
        );
    }

    #[test]
    fn distractor_never_equals_gt() {
        let space = PreferenceSpace::builtin(TaskName::Dining);
        for (i, c) in enumerate_combinations(&space, Split::Test)
            .iter()
            .enumerate()
            .take(50)
        {
            let q = query_id(TaskName::Dining, Split::Test, i);
            assert_ne!(distractor_answer_id(42, &q, c), gt_answer_id(42, &q));
        }
    }

    struct Scripted(fn(&Combination) -> Result<Verdict, ValidatorError>);

    impl CombinationValidator for Scripted {
        fn validate(&self, _: TaskName, c: &Combination) -> Result<Verdict, ValidatorError> {
            (self.0)(c)
        }
    }

    #[test]
    fn validator_outcomes() {
        let space = PreferenceSpace::builtin(TaskName::Location);
        let qs = build_queries(42, &space, Split::Test);
        let all = filter_queries(TaskName::Location, qs.clone(), &AcceptAll);
        assert_eq!(all.kept.len(), 256);

        let v = Scripted(|c| match c.get(Dimension::Tier) {
            "secluded_nature" if c.get(Dimension::Category) == "city" => Ok(Verdict::Drop),
            "small_town" => Err(ValidatorError::Timeout),
            _ => Ok(Verdict::Keep),
        });
        let out = filter_queries(TaskName::Location, qs, &v);
        assert_eq!(out.dropped.len(), 16);
        assert_eq!(out.undecided.len(), 64);
        assert_eq!(out.kept.len(), 256 - 16 - 64);
        assert!(out.undecided[0].1.contains("timed out"));
    }

    #[test]
    fn conflict_response_parsing() {
        assert_eq!(
            parse_conflict_response("**conflict**").unwrap(),
            Verdict::Drop
        );
        assert_eq!(
            parse_conflict_response(" No Conflict ").unwrap(),
            Verdict::Keep
        );
        assert!(parse_conflict_response("maybe").is_err());
    }

    #[test]
    fn rejects_overlapping_splits() {
        let mut space = PreferenceSpace::builtin(TaskName::Shopping);
        space.style.train[0] = space.style.test[0].clone();
        assert!(space.validate().is_err());
        let text = serde_json::to_string(&PreferenceSpace::builtin(TaskName::Shopping)).unwrap();
        assert!(matches!(
            PreferenceSpace::from_json_str(TaskName::Dining, &text),
            Err(PreferenceError::WrongTask { .. })
        ));
    }
}
