//! Tool library synthesis and deterministic cost assignment.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::Cost;
use crate::domain::{
    DataKind, Dimension, EnvConfig, ParamKind, ParamSpec, TaskName, TaskSpec, ToolKind,
    ToolLibrary, ToolSpec,
};
use crate::rng::SeededRng;

/// Filtering criteria applied by the refinement steps, in order.
pub const REFINEMENT_DIMENSIONS: [&str; 9] = [
    "availability and seasonal suitability",
    "location",
    "price",
    "ratings and reviews",
    "accessibility",
    "schedule compatibility",
    "safety",
    "amenities",
    "sustainability",
];

/// Seed for a named random draw: the first eight bytes (big endian) of
/// SHA-256 over `"{global_seed}|{query_id}|{name}"`.
pub fn derive_seed(global_seed: u64, query_id: &str, name: &str) -> u64 {
    debug_assert!(!query_id.contains('|') && !name.contains('|'));
    let digest = Sha256::digest(format!("{global_seed}|{query_id}|{name}").as_bytes());
    let mut prefix = [0u8; 8];
    prefix.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(prefix)
}

/// Name of the tool covering steps `i..=j`.
pub fn tool_name(task: &TaskSpec, (i, j): (u32, u32)) -> String {
    let t = task.task();
    let n = task.sequence_length();
    if i == j {
        return match i {
            1 => format!("Decide_{t}_Preference"),
            2 => format!("Search_{t}_Candidates"),
            s if s == n => format!("Select_Final_{t}"),
            s => format!("{t}_Refinement_Step{}", s - 2),
        };
    }
    let k = j - i + 1;
    match (i, j) {
        (1, 2) => format!("{t}_Preference_and_Search"),
        (1, j) if j == n => format!("{t}_Complete_{n}Steps_Pipeline"),
        (1, j) => format!("{t}_Full_Planning_to_Step{}", j - 2),
        (2, j) if j == n => format!("{t}_Finish_from_Search_{k}Steps"),
        (2, j) => format!("{t}_Search_Planning_to_Step{}", j - 2),
        (i, j) if j == n => format!("{t}_Finish_from_Step{}_{k}Steps", i - 2),
        (3, j) => format!("{t}_Refine_to_Step{}", j - 2),
        (i, j) => format!("{t}_Refine_from_Step{}_to_Step{}", i - 2, j - 2),
    }
}

fn dimension_phrase(d: Dimension) -> &'static str {
    match d {
        Dimension::Category => "category",
        Dimension::Tier => "tier",
        Dimension::Style => "style",
        Dimension::FeaturePackage => "feature package",
    }
}

fn token_param(task: TaskName, kind: DataKind) -> ParamSpec {
    let name = kind.name(task);
    let description = match kind {
        DataKind::TimeInfo => {
            "Identifier of the trip time information given in the request.".to_string()
        }
        DataKind::LocationPreference => {
            "Identifier of the location preference fixed for this trip.".to_string()
        }
        _ => format!("Identifier of a {name} instance returned by an earlier tool."),
    };
    ParamSpec {
        name,
        description,
        kind: ParamKind::Token { kind },
    }
}

fn enum_param(task: TaskName, dimension: Dimension, values: &[String]) -> ParamSpec {
    ParamSpec {
        name: dimension.param_name(task),
        description: format!(
            "Requested {} {} for the {} choice. Allowed values: {}.",
            task.as_str().to_ascii_lowercase(),
            dimension_phrase(dimension),
            task.as_str().to_ascii_lowercase(),
            values.join(", ")
        ),
        kind: ParamKind::Enum {
            dimension,
            values: values.to_vec(),
        },
    }
}

/// Input kinds and parameters of the tool covering `(i, j)`.
fn signature(
    task: &TaskSpec,
    (i, j): (u32, u32),
    enum_values: &[Vec<String>; 4],
) -> (Vec<DataKind>, Vec<ParamSpec>) {
    let t = task.task();
    let mut inputs = Vec::new();
    let mut params = Vec::new();
    if i == 1 {
        if task.needs_location_preference() {
            inputs.push(DataKind::LocationPreference);
            params.push(token_param(t, DataKind::LocationPreference));
        }
        inputs.push(DataKind::UserPreferenceFacts);
        for d in Dimension::ALL {
            params.push(enum_param(t, d, &enum_values[d.index()]));
        }
    } else {
        let prev = task.step_output(i - 1);
        inputs.push(prev);
        params.push(token_param(t, prev));
    }
    // The candidate search is anchored to the trip dates.
    if i <= 2 && j >= 2 {
        inputs.push(DataKind::TimeInfo);
        params.push(token_param(t, DataKind::TimeInfo));
    }
    (inputs, params)
}

fn atomic_purpose(task: &TaskSpec, step: u32) -> String {
    let t = task.task().as_str().to_ascii_lowercase();
    let n = task.sequence_length();
    match step {
        1 => format!(
            "Turns the user's {t} requirements into a preference label by fixing a category, tier, style and feature package."
        ),
        2 => format!("Looks up {t} candidates that satisfy a preference label for the given travel dates."),
        s if s == n => format!("Chooses the single best {t} among the refined candidates and returns its candidate identifier."),
        s => format!(
            "Narrows the {t} candidate list. Filtered by {}.",
            REFINEMENT_DIMENSIONS[(s - 3) as usize]
        ),
    }
}

/// Renders the agent-facing description for `tool` with its current cost.
pub fn render_description(task: &TaskSpec, tool: &ToolSpec, costed: bool) -> String {
    let cost = if costed {
        format!("{} units", tool.cost)
    } else {
        "an unassigned number of units".to_string()
    };
    let output = tool.output.name(task.task());
    match tool.kind {
        ToolKind::Atomic => format!(
            "{} This atomic tool has a cost of {cost}. The output type of this tool is {output}.",
            atomic_purpose(task, tool.span.0)
        ),
        ToolKind::Composite => format!(
            "Runs {} in sequence. This composite tool has a cost of {cost}. The output type of this tool is {output}.",
            tool.component_names.join(", ")
        ),
    }
}

/// Builds the uncosted library: one tool per contiguous span of `[1, N]`.
///
/// `enum_values` lists the admissible values of each preference dimension
/// (indexed by [`Dimension::index`]).
pub fn enumerate_tools(task: TaskSpec, enum_values: &[Vec<String>; 4]) -> ToolLibrary {
    let n = task.sequence_length();
    let mut tools = Vec::with_capacity((n * (n + 1) / 2) as usize);
    for i in 1..=n {
        for j in i..=n {
            let (inputs, parameters) = signature(&task, (i, j), enum_values);
            let kind = if i == j {
                ToolKind::Atomic
            } else {
                ToolKind::Composite
            };
            let component_names = if i == j {
                Vec::new()
            } else {
                (i..=j).map(|s| tool_name(&task, (s, s))).collect()
            };
            let mut tool = ToolSpec {
                name: tool_name(&task, (i, j)),
                kind,
                span: (i, j),
                component_names,
                inputs,
                output: task.step_output(j),
                parameters,
                cost: Cost::ZERO,
                description: String::new(),
            };
            tool.description = render_description(&task, &tool, false);
            tools.push(tool);
        }
    }
    // Atomic tools first, then composites by span; gives stable listings.
    tools.sort_by_key(|t| (t.kind == ToolKind::Composite, t.span));
    let hidden = BTreeSet::from([tool_name(&task, (1, n))]);
    ToolLibrary {
        task,
        tools,
        hidden,
        removed: BTreeSet::new(),
        banned: BTreeSet::new(),
        costed: false,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("c_min {0} exceeds c_max {1}")]
    InvertedRange(Cost, Cost),
    #[error("noise standard deviation must be finite and non-negative")]
    BadNoise,
}

/// Uniform atomic cost for `name`, rounded to cents.
pub fn atomic_cost(seed: u64, c_min: Cost, c_max: Cost) -> Cost {
    let mut rng = SeededRng::new(seed);
    let raw = rng.uniform_range(c_min.as_f64(), c_max.as_f64());
    // Rounding can land one cent above c_max when the draw is just below it.
    Cost::from_f64_rounded(raw).max(c_min).min(c_max)
}

/// Noise term of a `k`-component composite, standard deviation `sigma * sqrt(k)`.
pub fn composite_noise(seed: u64, sigma: f64, k: u32) -> f64 {
    let mut rng = SeededRng::new(seed);
    rng.normal(0.0, sigma * (k as f64).sqrt())
}

/// `max(1.00, round(sum + noise, 2))`.
pub fn composite_cost(component_sum: Cost, noise: f64) -> Cost {
    let cents = (component_sum.cents() as f64 + noise * 100.0).round() as i64;
    Cost::from_cents(cents).max(Cost::FLOOR)
}

/// Assigns (or reassigns) every tool cost from `global_seed` and `query_id`
/// and refreshes descriptions.
pub fn assign_costs(
    library: &mut ToolLibrary,
    config: &EnvConfig,
    global_seed: u64,
    query_id: &str,
) -> Result<(), CostError> {
    if config.c_min > config.c_max {
        return Err(CostError::InvertedRange(config.c_min, config.c_max));
    }
    if !(config.noise_std.is_finite() && config.noise_std >= 0.0) {
        return Err(CostError::BadNoise);
    }
    let n = library.task.sequence_length() as usize;
    let mut atomic = vec![Cost::ZERO; n + 1];
    for tool in library
        .tools
        .iter_mut()
        .filter(|t| t.kind == ToolKind::Atomic)
    {
        let seed = derive_seed(global_seed, query_id, &tool.name);
        tool.cost = atomic_cost(seed, config.c_min, config.c_max);
        atomic[tool.span.0 as usize] = tool.cost;
    }
    for tool in library
        .tools
        .iter_mut()
        .filter(|t| t.kind == ToolKind::Composite)
    {
        let (i, j) = tool.span;
        let sum: Cost = atomic[i as usize..=j as usize].iter().sum();
        let seed = derive_seed(global_seed, query_id, &tool.name);
        let noise = composite_noise(seed, config.noise_std, tool.components());
        tool.cost = composite_cost(sum, noise);
    }
    let task = library.task;
    for tool in library.tools.iter_mut() {
        tool.description = render_description(&task, tool, true);
    }
    library.costed = true;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertySchema {
    #[serde(rename = "type")]
    pub ty: String,
    pub description: String,
    #[serde(rename = "enum", default, skip_serializing_if = "Option::is_none")]
    pub enum_values: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParametersSchema {
    #[serde(rename = "type")]
    pub ty: String,
    pub properties: IndexMap<String, PropertySchema>,
    pub required: Vec<String>,
}

/// Agent-facing tool declaration (name, description, parameters, required).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: ParametersSchema,
}

impl ToolSchema {
    pub fn from_tool(tool: &ToolSpec) -> Self {
        let properties = tool
            .parameters
            .iter()
            .map(|p| {
                let enum_values = match &p.kind {
                    ParamKind::Enum { values, .. } => Some(values.clone()),
                    ParamKind::Token { .. } => None,
                };
                (
                    p.name.clone(),
                    PropertySchema {
                        ty: "string".into(),
                        description: p.description.clone(),
                        enum_values,
                    },
                )
            })
            .collect();
        ToolSchema {
            name: tool.name.clone(),
            description: tool.description.clone(),
            parameters: ParametersSchema {
                ty: "object".into(),
                properties,
                required: tool.parameters.iter().map(|p| p.name.clone()).collect(),
            },
        }
    }
}

/// Schemas of every currently visible tool, in library order.
pub fn visible_schemas(library: &ToolLibrary) -> Vec<ToolSchema> {
    library.visible().map(ToolSchema::from_tool).collect()
}
