//! System prompt rendering and answer-tag parsing.

use costenv_core::domain::{DataKind, Dimension, TaskSpec, ToolLibrary};
use costenv_core::oracle::enumerate_paths;
use costenv_core::toolgen::{tool_name, REFINEMENT_DIMENSIONS};

fn letter(step: u32) -> char {
    (b'A' + (step - 1) as u8) as char
}

fn span_label((i, j): (u32, u32)) -> String {
    (i..=j).map(letter).collect()
}

/// Every decomposition of the chain written with letter labels, one per line.
pub fn path_listing(n: u32) -> String {
    enumerate_paths(n)
        .iter()
        .enumerate()
        .map(|(k, path)| {
            let labels: Vec<String> = path.iter().map(|s| span_label(*s)).collect();
            let total: Vec<String> = labels.iter().map(|l| format!("Cost_{l}")).collect();
            format!(
                "{}. {}  (total {})",
                k + 1,
                labels.join(" -> "),
                total.join(" + ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Prompt given to agents at session start.
pub fn render_system_prompt(library: &ToolLibrary) -> String {
    let spec: TaskSpec = library.task;
    let task = spec.task();
    let n = spec.sequence_length();
    let final_kind = DataKind::FinalResult;
    let prefix = final_kind.token_prefix(task);
    let dims = &REFINEMENT_DIMENSIONS[..spec.refinement_steps() as usize];
    let atomic: Vec<String> = (1..=n).map(|s| tool_name(&spec, (s, s))).collect();
    let mut given: Vec<String> = Dimension::ALL.iter().map(|d| d.param_name(task)).collect();
    given.extend(spec.initial_kinds().iter().map(|k| k.name(task)));
    let example_token = format!("<{}00000>", DataKind::TimeInfo.token_prefix(task));
    let letters: Vec<String> = (1..=n).map(|s| letter(s).to_string()).collect();

    format!(
        "You are a planning assistant responsible for the {task} part of a trip.

<Task description>
Your goal is a {goal} result, identified by a token of the form <{prefix}ID>. Reach it while keeping the summed cost of your tool calls as low as possible. The work moves from preference selection to candidate search, then refinement, then final selection. Refinement filters the {task} candidates along {k} dimension(s) in this fixed order: {dims}. Running refinement steps in another order fails.
</Task description>

<Tool description>
- Each tool states its cost in its description.
- Parameter names give a tool's input types. The description gives its output type.
- Take {given} from the request or from the values you are given. Any other value must come from an earlier tool result.
- An atomic tool performs one step. A composite tool runs a contiguous block of atomic steps as a single call. Its cost is its own and may be above or below the sum of its parts.
- The atomic sequence for this task is: {atomic}. Replacing parts of it with composite tools can lower the total.
</Tool description>

<Workflow>
1. Before acting, write out every equivalent tool path with its summed cost and pick the cheapest. On a tie pick the path with fewer calls.
2. Call the next tool of the chosen path directly, without echoing the call as text.
3. After each result, check whether costs or available tools changed or the request was updated, and replan from your current position when they did.
</Workflow>

<Rules>
- You are scored on total cost once the goal is reached.
- Send at most one tool call per message. Additional calls in the same message are ignored.
- Copy identifiers exactly as given. For example the TimeInfo parameter must be {example_token}.
- Once you hold the goal identifier, stop calling tools and reply with <answer> <{prefix}ID> </answer>. These tags end the conversation, so use them only for the final answer.
</Rules>

<Paths>
Letters {first}..{last} stand for the atomic steps in order. A label with several letters is the composite tool covering those steps. The possible paths are:
{paths}
</Paths>",
        goal = final_kind.name(task),
        k = dims.len(),
        dims = dims.join("; "),
        given = given.join(", "),
        atomic = atomic.join(", "),
        first = letters[0],
        last = letters[letters.len() - 1],
        paths = path_listing(n),
    )
}

/// Token inside `<answer> ... </answer>`. Only whitespace may surround the
/// token within the tags.
pub fn extract_answer(text: &str) -> Option<String> {
    let start = text.find("<answer>")? + "<answer>".len();
    let end = start + text[start..].find("</answer>")?;
    let inner = text[start..end].trim();
    let ok = inner.starts_with('<')
        && inner.ends_with('>')
        && inner.len() > 2
        && !inner[1..inner.len() - 1].contains(['<', '>'])
        && !inner.contains(char::is_whitespace);
    ok.then(|| inner.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use costenv_core::domain::TaskName;
    use costenv_core::toolgen::enumerate_tools;

    #[test]
    fn listing_for_four_steps() {
        let text = path_listing(4);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].starts_with("1. A -> B -> C -> D"));
        assert!(lines[6].starts_with("7. A -> BCD"));
        assert!(!text.contains("ABCD"));
    }

    #[test]
    fn prompt_mentions_task_specifics() {
        let spec = TaskSpec::new(TaskName::Location, 4).unwrap();
        let lib = enumerate_tools(spec, &[0, 1, 2, 3].map(|d| vec![format!("v{d}")]));
        let p = render_system_prompt(&lib);
        assert!(p.contains("Decide_Location_Preference, Search_Location_Candidates, Location_Refinement_Step1, Select_Final_Location"));
        assert!(p.contains("<TimeInfo00000>"));
        assert!(p.contains("<answer>"));
        assert!(p.contains("availability and seasonal suitability"));
        assert_eq!(p.matches(" -> ").count(), 12);
    }

    #[test]
    fn answer_tags() {
        assert_eq!(
            extract_answer("done <answer> <LocationCandidate00042> </answer>").as_deref(),
            Some("<LocationCandidate00042>")
        );
        assert_eq!(
            extract_answer("<answer><X1></answer>").as_deref(),
            Some("<X1>")
        );
        assert_eq!(extract_answer("<answer> <X1> extra </answer>"), None);
        assert_eq!(extract_answer("<answer> X1 </answer>"), None);
        assert_eq!(extract_answer("no tags"), None);
    }
}
