//! Transcript files, replay verification and metric reports.

use std::path::Path;

use costenv_core::domain::EnvConfig;
use costenv_core::metrics::{aggregate, EpisodeMetrics, MetricsReport};
use serde::{Deserialize, Serialize};

use crate::agents::{AgentSpec, ScriptBook};
use crate::error::HarnessError;
use crate::instances::{build_instance, load_spaces, InstanceSet, Relaxation, Selection};
use crate::runner::{run_episode, EpisodeRecord};
use std::sync::Arc;

pub const TRANSCRIPT_FORMAT: &str = "costenv-transcript/1";
pub const REPORT_FORMAT: &str = "costenv-report/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub generator_version: String,
    pub agent: String,
    pub config: EnvConfig,
    pub selection: Selection,
    pub episodes: usize,
    pub relaxations: Vec<Relaxation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub manifest: RunManifest,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TranscriptLine {
    Manifest(Box<RunManifest>),
    Episode(Box<EpisodeRecord>),
}

fn format_error(path: &Path, message: String) -> HarnessError {
    HarnessError::Format {
        path: path.display().to_string(),
        message,
    }
}

impl Transcript {
    pub fn new(set: &InstanceSet, agent: &AgentSpec, episodes: Vec<EpisodeRecord>) -> Self {
        Transcript {
            manifest: RunManifest {
                format: TRANSCRIPT_FORMAT.into(),
                generator_version: env!("CARGO_PKG_VERSION").into(),
                agent: agent.label(),
                config: set.manifest.config.clone(),
                selection: set.manifest.selection.clone(),
                episodes: episodes.len(),
                relaxations: set.manifest.relaxations.clone(),
            },
            episodes,
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out =
            serde_json::to_string(&TranscriptLine::Manifest(Box::new(self.manifest.clone())))
                .expect("serializable");
        out.push('\n');
        for e in &self.episodes {
            out += &serde_json::to_string(&TranscriptLine::Episode(Box::new(e.clone())))
                .expect("serializable");
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut manifest = None;
        let mut episodes = Vec::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            match serde_json::from_str(line)
                .map_err(|e| format_error(path, format!("line {}: {e}", n + 1)))?
            {
                TranscriptLine::Manifest(m) => manifest = Some(*m),
                TranscriptLine::Episode(e) => episodes.push(*e),
            }
        }
        let manifest =
            manifest.ok_or_else(|| format_error(path, "missing manifest line".into()))?;
        if manifest.format != TRANSCRIPT_FORMAT {
            return Err(format_error(
                path,
                format!("unsupported format `{}`", manifest.format),
            ));
        }
        Ok(Transcript { manifest, episodes })
    }

    /// Scripts that reproduce every episode's actions.
    pub fn script_book(&self) -> ScriptBook {
        ScriptBook {
            scripts: self
                .episodes
                .iter()
                .map(|e| (e.episode_id.clone(), e.actions()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episodes: usize,
    pub mismatched: Vec<String>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Error text depends on the transport; only its presence must match.
fn normalized(mut record: EpisodeRecord) -> EpisodeRecord {
    record.error = record.error.map(|_| String::new());
    if let crate::wire::WireMessage::SessionEnd(end) = &mut record.end {
        end.error = end.error.as_ref().map(|_| String::new());
    }
    record
}

/// Re-runs every episode's recorded actions on fresh engines and compares the
/// results with the transcript.
pub fn replay(transcript: &Transcript) -> Result<ReplayReport, HarnessError> {
    let config = &transcript.manifest.config;
    let spaces = load_spaces(&transcript.manifest.selection)?;
    let book = Arc::new(transcript.script_book());
    let agent = AgentSpec::Scripted(book);
    let mut report = ReplayReport::default();
    for recorded in &transcript.episodes {
        let space = spaces
            .get(&recorded.query.task)
            .ok_or_else(|| {
                HarnessError::Config(format!("task {} not in the selection", recorded.query.task))
            })?
            .clone();
        let instance = build_instance(config, &space, &recorded.query)?;
        let fresh = run_episode(config, space, &instance, &agent)?;
        report.episodes += 1;
        if normalized(fresh) != normalized(recorded.clone()) {
            report.mismatched.push(recorded.episode_id.clone());
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub format: String,
    pub agent: String,
    pub config: EnvConfig,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine {
    Summary(Box<ReportSummary>),
    Episode(EpisodeMetrics),
}

pub fn evaluate(transcript: &Transcript) -> Result<ReportSummary, HarnessError> {
    if let Some(e) = transcript
        .episodes
        .iter()
        .find(|e| e.reference_gt.tools.is_empty())
    {
        return Err(HarnessError::Config(format!(
            "episode {} has no ground truth attached",
            e.episode_id
        )));
    }
    let outcomes: Vec<_> = transcript
        .episodes
        .iter()
        .map(EpisodeRecord::outcome)
        .collect();
    let metrics = aggregate(&outcomes).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(ReportSummary {
        format: REPORT_FORMAT.into(),
        agent: transcript.manifest.agent.clone(),
        config: transcript.manifest.config.clone(),
        metrics,
    })
}

impl ReportSummary {
    /// Summary line followed by one line per episode.
    pub fn to_jsonl(&self) -> String {
        let mut summary = self.clone();
        let episodes = std::mem::take(&mut summary.metrics.episodes);
        let mut out =
            serde_json::to_string(&ReportLine::Summary(Box::new(summary))).expect("serializable");
        out.push('\n');
        for e in episodes {
            out += &serde_json::to_string(&ReportLine::Episode(e)).expect("serializable");
            out.push('\n');
        }
        out
    }

    pub fn table(&self) -> String {
        format!(
            "{}\n{}\n",
            MetricsReport::table_header(),
            self.metrics.table_row(&self.agent)
        )
    }
}
