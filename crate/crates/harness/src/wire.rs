//! Line-delimited JSON protocol between the harness and an agent.
//!
//! The harness opens with `session_init`. The agent then replies with
//! either `tool_call` or `final_answer`; every `tool_call` is answered by
//! exactly one `tool_result`. The harness closes with `session_end`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use costenv_core::domain::{DataTypeInstance, Redundancy, Validity};
use costenv_core::engine::{CostEntry, SessionStatus};
use costenv_core::toolgen::ToolSchema;
use costenv_core::Cost;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported wire version {0} (expected {WIRE_VERSION})")]
    Version(u32),
    #[error("unexpected `{got}` message; expected {expected}")]
    Unexpected { got: String, expected: &'static str },
    #[error("peer closed the stream")]
    Closed,
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallRequest {
    pub name: String,
    #[serde(default)]
    pub arguments: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInit {
    pub episode_id: String,
    pub system_prompt: String,
    pub query: String,
    pub tools: Vec<ToolSchema>,
    pub cost_table: Vec<CostEntry>,
    pub owned: Vec<DataTypeInstance>,
    pub max_turns: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub messages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub turn: u32,
    pub name: String,
    pub validity: Validity,
    pub redundancy: Redundancy,
    pub produced: Option<String>,
    pub charged_cost: Cost,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Extra calls in the same message that were ignored.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub discarded_calls: u32,
    pub status: SessionStatus,
    pub owned: Vec<DataTypeInstance>,
    pub cost_table: Vec<CostEntry>,
    /// Full schemas, present only when tools or costs changed since the
    /// previous message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<ToolSchema>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub messages: Vec<String>,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEnd {
    pub status: SessionStatus,
    pub reached_goal: bool,
    pub intent_hit: Option<bool>,
    pub turns: u32,
    pub total_cost: Cost,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    SessionInit(SessionInit),
    /// Only the first call counts; `extra_calls` are discarded.
    ToolCall {
        name: String,
        #[serde(default)]
        arguments: BTreeMap<String, Value>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        extra_calls: Vec<CallRequest>,
    },
    ToolResult(ToolResult),
    FinalAnswer {
        token: String,
    },
    SessionEnd(SessionEnd),
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::SessionInit(_) => "session_init",
            WireMessage::ToolCall { .. } => "tool_call",
            WireMessage::ToolResult(_) => "tool_result",
            WireMessage::FinalAnswer { .. } => "final_answer",
            WireMessage::SessionEnd(_) => "session_end",
        }
    }

    pub fn call(name: impl Into<String>, arguments: BTreeMap<String, Value>) -> Self {
        WireMessage::ToolCall {
            name: name.into(),
            arguments,
            extra_calls: Vec::new(),
        }
    }

    pub fn is_agent_message(&self) -> bool {
        matches!(
            self,
            WireMessage::ToolCall { .. } | WireMessage::FinalAnswer { .. }
        )
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    v: u32,
    #[serde(flatten)]
    message: WireMessage,
}

/// One JSON object, no trailing newline.
pub fn encode(message: &WireMessage) -> String {
    serde_json::to_string(&Envelope {
        v: WIRE_VERSION,
        message: message.clone(),
    })
    .expect("wire messages always serialize")
}

pub fn decode(line: &str) -> Result<WireMessage, WireError> {
    let raw: Value = serde_json::from_str(line)?;
    let version = raw.get("v").and_then(Value::as_u64).unwrap_or(0) as u32;
    if version != WIRE_VERSION {
        return Err(WireError::Version(version));
    }
    let envelope: Envelope = serde_json::from_value(raw)?;
    Ok(envelope.message)
}

/// Framed message stream over any reader/writer pair.
pub struct LineChannel<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead, W: Write> LineChannel<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        LineChannel { reader, writer }
    }

    pub fn send(&mut self, message: &WireMessage) -> Result<(), WireError> {
        writeln!(self.writer, "{}", encode(message))?;
        self.writer.flush()?;
        Ok(())
    }

    /// Next non-blank line, decoded.
    pub fn recv(&mut self) -> Result<WireMessage, WireError> {
        let mut line = String::new();
        loop {
            line.clear();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(WireError::Closed);
            }
            if !line.trim().is_empty() {
                return decode(line.trim_end());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_carries_version_and_tag() {
        let msg = WireMessage::FinalAnswer {
            token: "<TravelLocation00042>".into(),
        };
        let line = encode(&msg);
        assert_eq!(
            line,
            r#"{"v":1,"type":"final_answer","token":"<TravelLocation00042>"}"#
        );
        assert_eq!(decode(&line).unwrap(), msg);
    }

    #[test]
    fn tool_call_defaults() {
        let msg = decode(r#"{"v":1,"type":"tool_call","name":"X"}"#).unwrap();
        assert_eq!(msg, WireMessage::call("X", BTreeMap::new()));
        let batch = decode(
            r#"{"v":1,"type":"tool_call","name":"X","arguments":{"a":"1"},"extra_calls":[{"name":"Y"}]}"#,
        )
        .unwrap();
        let WireMessage::ToolCall { extra_calls, .. } = batch else {
            panic!()
        };
        assert_eq!(extra_calls.len(), 1);
    }

    #[test]
    fn rejects_bad_version_and_garbage() {
        assert!(matches!(
            decode(r#"{"v":2,"type":"final_answer","token":"x"}"#),
            Err(WireError::Version(2))
        ));
        assert!(matches!(
            decode(r#"{"type":"final_answer","token":"x"}"#),
            Err(WireError::Version(0))
        ));
        assert!(matches!(decode("not json"), Err(WireError::Malformed(_))));
        assert!(matches!(
            decode(r#"{"v":1,"type":"dance"}"#),
            Err(WireError::Malformed(_))
        ));
    }

    #[test]
    fn channel_skips_blank_lines() {
        let input = format!(
            "\n{}\n",
            encode(&WireMessage::FinalAnswer { token: "t".into() })
        );
        let mut out = Vec::new();
        let mut ch = LineChannel::new(input.as_bytes(), &mut out);
        assert_eq!(ch.recv().unwrap().kind(), "final_answer");
        assert!(matches!(ch.recv(), Err(WireError::Closed)));
        ch.send(&WireMessage::FinalAnswer { token: "u".into() })
            .unwrap();
        assert!(String::from_utf8(out).unwrap().ends_with("}\n"));
    }
}
