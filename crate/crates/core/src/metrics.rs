//! Trajectory scoring: edit distances, cost gaps, call taxonomies and
//! batch aggregation with the usual exclusion rules.

use serde::{Deserialize, Serialize};

use crate::cost::Cost;
use crate::domain::{Redundancy, Trajectory, Validity};
use crate::oracle::Plan;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("normalized edit distance is undefined for two empty sequences")]
    BothEmpty,
    #[error("cannot aggregate an empty batch")]
    EmptyBatch,
}

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the longer length.
pub fn ned<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64, MetricsError> {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return Err(MetricsError::BothEmpty);
    }
    Ok(edit_distance(a, b) as f64 / longest as f64)
}

/// Agent cost minus reference cost. The clean variant leaves out calls
/// flagged as repeated or extra.
pub fn cost_gap(agent: &Trajectory, gt_cost: Cost, clean: bool) -> Cost {
    let spent: Cost = agent
        .ok_records()
        .filter(|r| !clean || r.redundancy == Redundancy::None)
        .map(|r| r.charged_cost)
        .sum();
    spent - gt_cost
}

/// Per-category call counts. Wrong names are folded into `wrong_params`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTally {
    pub total: u32,
    pub invalid: u32,
    pub repeated: u32,
    pub extra: u32,
    pub wrong_params: u32,
    pub inaccessible: u32,
    pub banned_failures: u32,
}

impl CallTally {
    pub fn add(&mut self, other: &CallTally) {
        self.total += other.total;
        self.invalid += other.invalid;
        self.repeated += other.repeated;
        self.extra += other.extra;
        self.wrong_params += other.wrong_params;
        self.inaccessible += other.inaccessible;
        self.banned_failures += other.banned_failures;
    }
}

pub fn classify_calls(trajectory: &Trajectory) -> CallTally {
    let mut t = CallTally::default();
    for r in &trajectory.records {
        t.total += 1;
        if r.validity.is_invalid_use() {
            t.invalid += 1;
        }
        match r.validity {
            Validity::WrongName | Validity::WrongParams => t.wrong_params += 1,
            Validity::Inaccessible => t.inaccessible += 1,
            Validity::BannedFailure => t.banned_failures += 1,
            Validity::Ok => match r.redundancy {
                Redundancy::Repeated => t.repeated += 1,
                Redundancy::Extra => t.extra += 1,
                Redundancy::None => {}
            },
        }
    }
    t
}

/// Everything needed to score one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub query_id: String,
    pub trajectory: Trajectory,
    /// Reference trajectory (static or segmented ground truth).
    pub gt: Plan,
    /// The correct answer for the request binding at the end of the episode.
    pub gt_answer: String,
    pub blocks_expected: u32,
    pub blocks_fired: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub query_id: String,
    pub reached_goal: bool,
    /// False when a blocked episode saw fewer events than configured.
    pub eligible: bool,
    pub cost_gap: Option<Cost>,
    pub cost_gap_clean: Option<Cost>,
    pub edit_distance: Option<usize>,
    pub ned: Option<f64>,
    pub exact_match: Option<bool>,
    pub intent_hit: Option<bool>,
    pub calls: CallTally,
}

pub fn score_episode(o: &EpisodeOutcome) -> EpisodeMetrics {
    let reached = o.trajectory.reached_goal;
    let agent = o.trajectory.ok_names();
    let (ed, n) = if reached {
        let ed = edit_distance(&agent, &o.gt.tools);
        (Some(ed), ned(&agent, &o.gt.tools).ok())
    } else {
        (None, None)
    };
    EpisodeMetrics {
        query_id: o.query_id.clone(),
        reached_goal: reached,
        eligible: o.blocks_fired >= o.blocks_expected,
        cost_gap: reached.then(|| cost_gap(&o.trajectory, o.gt.cost, false)),
        cost_gap_clean: reached.then(|| cost_gap(&o.trajectory, o.gt.cost, true)),
        edit_distance: ed,
        ned: n,
        exact_match: ed.map(|d| d == 0),
        intent_hit: reached
            .then(|| o.trajectory.final_answer.as_deref() == Some(o.gt_answer.as_str())),
        calls: classify_calls(&o.trajectory),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denominators {
    pub episodes: usize,
    /// Episodes surviving the block-count filter.
    pub eligible: usize,
    /// Eligible episodes that reached the goal (cost, path and intent metrics).
    pub goal_reaching: usize,
    /// All calls of eligible episodes (invalid-use ratio).
    pub calls: u32,
}

/// Batch-level scores. Percentages are in `[0, 100]`; `None` means the
/// denominator was zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cost_gap: Option<f64>,
    pub cost_gap_clean: Option<f64>,
    pub aed: Option<f64>,
    pub aned_pct: Option<f64>,
    pub emr_pct: Option<f64>,
    pub uihr_pct: Option<f64>,
    pub itur_pct: Option<f64>,
    pub denominators: Denominators,
    pub calls: CallTally,
    pub episodes: Vec<EpisodeMetrics>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(outcomes: &[EpisodeOutcome]) -> Result<MetricsReport, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let episodes: Vec<EpisodeMetrics> = outcomes.iter().map(score_episode).collect();
    let eligible: Vec<&EpisodeMetrics> = episodes.iter().filter(|e| e.eligible).collect();
    let reached: Vec<&EpisodeMetrics> = eligible
        .iter()
        .copied()
        .filter(|e| e.reached_goal)
        .collect();
    let mut calls = CallTally::default();
    for e in &eligible {
        calls.add(&e.calls);
    }
    let pct = |v: Option<f64>| v.map(|x| 100.0 * x);
    Ok(MetricsReport {
        cost_gap: mean(reached.iter().filter_map(|e| e.cost_gap).map(Cost::as_f64)),
        cost_gap_clean: mean(
            reached
                .iter()
                .filter_map(|e| e.cost_gap_clean)
                .map(Cost::as_f64),
        ),
        aed: mean(
            reached
                .iter()
                .filter_map(|e| e.edit_distance)
                .map(|d| d as f64),
        ),
        aned_pct: pct(mean(reached.iter().filter_map(|e| e.ned))),
        emr_pct: pct(mean(
            reached
                .iter()
                .filter_map(|e| e.exact_match)
                .map(|m| f64::from(u8::from(m))),
        )),
        uihr_pct: pct(mean(
            reached
                .iter()
                .filter_map(|e| e.intent_hit)
                .map(|m| f64::from(u8::from(m))),
        )),
        itur_pct: (calls.total > 0).then(|| 100.0 * calls.invalid as f64 / calls.total as f64),
        denominators: Denominators {
            episodes: episodes.len(),
            eligible: eligible.len(),
            goal_reaching: reached.len(),
            calls: calls.total,
        },
        calls,
        episodes,
    })
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.decimals$}"))
}

impl MetricsReport {
    pub fn table_header() -> String {
        format!(
            "{:<20} {:>16} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "run", "Cost Gap (clean)", "AED", "ANED %", "EMR %", "UIHR %", "ITUR %"
        )
    }

    pub fn table_row(&self, label: &str) -> String {
        let gap = format!(
            "{} ({})",
            fmt_opt(self.cost_gap, 3),
            fmt_opt(self.cost_gap_clean, 3)
        );
        format!(
            "{:<20} {:>16} {:>8} {:>8} {:>8} {:>8} {:>8}",
            label,
            gap,
            fmt_opt(self.aed, 3),
            fmt_opt(self.aned_pct, 2),
            fmt_opt(self.emr_pct, 2),
            fmt_opt(self.uihr_pct, 2),
            fmt_opt(self.itur_pct, 2)
        )
    }
}
