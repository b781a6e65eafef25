//! Instance selection and the persisted instance set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use costenv_core::blocking::{BlockPlan, RemovalSample};
use costenv_core::domain::{EnvConfig, TaskName};
use costenv_core::engine::{instance_library, CostEntry, Session};
use costenv_core::oracle::{greedy_trajectory, run_follower, shortest_path_gt, FollowerKind, Plan};
use costenv_core::querygen::{
    build_queries, filter_queries, AcceptAll, PreferenceSpace, Query, Split,
};
use costenv_core::toolgen::derive_seed;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const INSTANCE_FORMAT: &str = "costenv-instances/1";

/// Which queries to build and where preference values come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub tasks: Vec<TaskName>,
    pub split: Split,
    /// Cap on the total number of instances (tasks are interleaved first).
    pub limit: Option<usize>,
    /// Preference files; `None` uses the built-in values.
    pub preferences_dir: Option<PathBuf>,
}

impl Default for Selection {
    fn default() -> Self {
        Selection {
            tasks: TaskName::ALL.to_vec(),
            split: Split::Test,
            limit: None,
            preferences_dir: None,
        }
    }
}

pub type Spaces = BTreeMap<TaskName, Arc<PreferenceSpace>>;

pub fn load_spaces(selection: &Selection) -> Result<Spaces, HarnessError> {
    selection
        .tasks
        .iter()
        .map(|&task| {
            let space = match &selection.preferences_dir {
                Some(dir) => PreferenceSpace::load_dir(dir, task)
                    .map_err(|e| HarnessError::Config(e.to_string()))?,
                None => PreferenceSpace::builtin(task),
            };
            space
                .validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            Ok((task, Arc::new(space)))
        })
        .collect()
}

/// Queries of every selected task, interleaved task by task.
pub fn select_queries(seed: u64, selection: &Selection, spaces: &Spaces) -> Vec<Query> {
    let per_task: Vec<Vec<Query>> = selection
        .tasks
        .iter()
        .map(|&t| {
            filter_queries(
                t,
                build_queries(seed, &spaces[&t], selection.split),
                &AcceptAll,
            )
            .kept
        })
        .collect();
    let longest = per_task.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for i in 0..longest {
        for qs in &per_task {
            if let Some(q) = qs.get(i) {
                out.push(q.clone());
            }
        }
    }
    if let Some(limit) = selection.limit {
        out.truncate(limit);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relaxation {
    pub query_id: String,
    pub required_width: u32,
    pub used_width: u32,
    pub intervals: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub format: String,
    pub generator_version: String,
    pub config: EnvConfig,
    pub selection: Selection,
    pub validator: String,
    pub count: usize,
    pub relaxations: Vec<Relaxation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub query: Query,
    /// Every tool's cost, hidden ones included.
    pub costs: Vec<CostEntry>,
    pub visible_tools: usize,
    pub block_plan: BlockPlan,
    pub static_gt: Plan,
    pub greedy: Plan,
    /// Segmented ground truth from an optimal follower under the block plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocked_gt: Option<Plan>,
}

pub struct InstanceSet {
    pub manifest: InstanceManifest,
    pub spaces: Spaces,
    pub instances: Vec<InstanceRecord>,
}

/// Plan made of the successful calls of a finished session.
pub fn executed_plan(session: &Session) -> Plan {
    let ok: Vec<_> = session.trajectory().ok_records().collect();
    Plan {
        tools: ok.iter().map(|r| r.tool_name.clone()).collect(),
        cost: ok.iter().map(|r| r.charged_cost).sum(),
    }
}

/// Segmented ground truth: the optimal follower's run on a fresh session.
pub fn segmented_gt(
    config: &EnvConfig,
    space: Arc<PreferenceSpace>,
    query: &Query,
) -> Result<Plan, HarnessError> {
    let mut session = Session::new(config.clone(), space, query.clone())?;
    run_follower(&mut session, FollowerKind::Optimal)
        .map_err(|e| HarnessError::Invariant(e.to_string()))?;
    Ok(executed_plan(&session))
}

pub fn build_instance(
    config: &EnvConfig,
    space: &Arc<PreferenceSpace>,
    query: &Query,
) -> Result<InstanceRecord, HarnessError> {
    let library = instance_library(config, space, query)?;
    let s0 = library.task.initial_mask();
    let static_gt =
        shortest_path_gt(&library, s0).map_err(|e| HarnessError::Invariant(e.to_string()))?;
    let greedy =
        greedy_trajectory(&library, s0).map_err(|e| HarnessError::Invariant(e.to_string()))?;
    let block_plan = BlockPlan::new(
        config,
        derive_seed(config.seed, &query.query_id, "blocking"),
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    let blocked_gt = if config.blocks_enabled() {
        Some(segmented_gt(config, space.clone(), query)?)
    } else {
        None
    };
    Ok(InstanceRecord {
        costs: library
            .tools
            .iter()
            .map(|t| CostEntry {
                name: t.name.clone(),
                cost: t.cost,
            })
            .collect(),
        visible_tools: library.visible().count(),
        query: query.clone(),
        block_plan,
        static_gt,
        greedy,
        blocked_gt,
    })
}

fn relaxation(query_id: &str, sample: &Option<RemovalSample>) -> Option<Relaxation> {
    sample.as_ref().filter(|s| s.relaxed()).map(|s| Relaxation {
        query_id: query_id.to_string(),
        required_width: s.required_width,
        used_width: s.used_width,
        intervals: s.intervals.clone(),
    })
}

pub fn generate(config: &EnvConfig, selection: &Selection) -> Result<InstanceSet, HarnessError> {
    config
        .validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let spaces = load_spaces(selection)?;
    let queries = select_queries(config.seed, selection, &spaces);
    let instances = queries
        .iter()
        .map(|q| build_instance(config, &spaces[&q.task], q))
        .collect::<Result<Vec<_>, _>>()?;
    let relaxations = instances
        .iter()
        .filter_map(|i| relaxation(&i.query.query_id, &i.block_plan.removal))
        .collect();
    Ok(InstanceSet {
        manifest: InstanceManifest {
            format: INSTANCE_FORMAT.into(),
            generator_version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            selection: selection.clone(),
            validator: "accept_all".into(),
            count: instances.len(),
            relaxations,
        },
        spaces,
        instances,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum InstanceLine {
    Manifest(Box<InstanceManifest>),
    Instance(Box<InstanceRecord>),
}

impl InstanceSet {
    pub fn to_jsonl(&self) -> String {
        let mut out =
            serde_json::to_string(&InstanceLine::Manifest(Box::new(self.manifest.clone())))
                .expect("serializable")
                + "\n";
        for inst in &self.instances {
            out += &serde_json::to_string(&InstanceLine::Instance(Box::new(inst.clone())))
                .expect("serializable");
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| HarnessError::io(path, e))
    }

    /// Loads a set and checks that the stored costs still match what this
    /// build would generate.
    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let format_err = |message: String| HarnessError::Format {
            path: path.display().to_string(),
            message,
        };
        let mut manifest = None;
        let mut instances = Vec::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            match serde_json::from_str(line)
                .map_err(|e| format_err(format!("line {}: {e}", n + 1)))?
            {
                InstanceLine::Manifest(m) => manifest = Some(*m),
                InstanceLine::Instance(i) => instances.push(*i),
            }
        }
        let manifest = manifest.ok_or_else(|| format_err("missing manifest line".into()))?;
        if manifest.format != INSTANCE_FORMAT {
            return Err(format_err(format!(
                "unsupported format `{}`",
                manifest.format
            )));
        }
        let spaces = load_spaces(&manifest.selection)?;
        for inst in &instances {
            let space = spaces.get(&inst.query.task).ok_or_else(|| {
                format_err(format!("task {} not in the selection", inst.query.task))
            })?;
            let library = instance_library(&manifest.config, space, &inst.query)?;
            let same = library.tools.len() == inst.costs.len()
                && library
                    .tools
                    .iter()
                    .zip(&inst.costs)
                    .all(|(t, c)| t.name == c.name && t.cost == c.cost);
            if !same {
                return Err(HarnessError::Invariant(format!(
                    "instance {} no longer matches its stored costs",
                    inst.query.query_id
                )));
            }
        }
        Ok(InstanceSet {
            manifest,
            spaces,
            instances,
        })
    }
}
