//! Built-in policies and adapters for agents that speak the wire protocol.

use std::collections::{HashMap, VecDeque};
use std::io::{BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use costenv_core::engine::Session;
use costenv_core::oracle::{Action, Follower, FollowerKind};
use costenv_core::rng::SeededRng;
use costenv_core::toolgen::derive_seed;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::wire::{LineChannel, WireError, WireMessage};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("planner failed: {0}")]
    Planner(String),
}

/// Something that answers harness messages with agent messages.
///
/// Built-in policies may read the session directly; external agents only
/// see the wire messages.
pub trait Agent: Send {
    /// Reply to `session_init` or `tool_result`.
    fn respond(
        &mut self,
        session: &Session,
        incoming: &WireMessage,
    ) -> Result<WireMessage, AgentError>;

    /// Receives messages that need no reply: the result of the last call
    /// and `session_end`.
    fn notify(&mut self, _message: &WireMessage) {}
}

fn action_message(action: Action) -> WireMessage {
    match action {
        Action::Call { name, arguments } => WireMessage::call(name, arguments),
        Action::Answer { token } => WireMessage::FinalAnswer { token },
    }
}

/// Plays the optimal plan (replanning after every change) or the greedy rule.
pub struct PlannerAgent {
    follower: Follower,
}

impl PlannerAgent {
    pub fn new(kind: FollowerKind) -> Self {
        PlannerAgent {
            follower: Follower::new(kind),
        }
    }
}

impl Agent for PlannerAgent {
    fn respond(
        &mut self,
        session: &Session,
        incoming: &WireMessage,
    ) -> Result<WireMessage, AgentError> {
        if matches!(incoming, WireMessage::ToolResult(_)) {
            self.follower.observe(session);
        }
        self.follower
            .next_action(session)
            .map(action_message)
            .map_err(|e| AgentError::Planner(e.to_string()))
    }
}

/// Uniformly random feasible calls with correct arguments; answers as soon as
/// it holds a final result.
pub struct RandomAgent {
    rng: SeededRng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent {
            rng: SeededRng::new(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn respond(
        &mut self,
        session: &Session,
        _incoming: &WireMessage,
    ) -> Result<WireMessage, AgentError> {
        if let Some(token) = session.current_final_token() {
            return Ok(WireMessage::FinalAnswer { token });
        }
        let feasible = session.feasible_tools();
        if feasible.is_empty() {
            return Err(AgentError::Planner("no feasible tool".into()));
        }
        let name = &feasible[self.rng.below(feasible.len() as u64) as usize];
        let tool = session.library().get(name).expect("feasible tools exist");
        Ok(WireMessage::call(
            name.clone(),
            session.canonical_arguments(tool),
        ))
    }
}

/// Never makes progress: calls a tool that does not exist until the turn
/// budget runs out.
pub struct StallAgent;

pub const STALL_TOOL: &str = "Wait_For_Input";

impl Agent for StallAgent {
    fn respond(
        &mut self,
        _session: &Session,
        _incoming: &WireMessage,
    ) -> Result<WireMessage, AgentError> {
        Ok(WireMessage::call(STALL_TOOL, Default::default()))
    }
}

/// Replays a fixed list of agent messages.
pub struct ScriptedAgent {
    actions: VecDeque<WireMessage>,
}

impl ScriptedAgent {
    pub fn new(actions: impl IntoIterator<Item = WireMessage>) -> Self {
        ScriptedAgent {
            actions: actions.into_iter().collect(),
        }
    }
}

impl Agent for ScriptedAgent {
    fn respond(
        &mut self,
        _session: &Session,
        _incoming: &WireMessage,
    ) -> Result<WireMessage, AgentError> {
        self.actions
            .pop_front()
            .ok_or_else(|| AgentError::Protocol("script exhausted before the episode ended".into()))
    }
}

/// Forwards messages over a line channel and relays the replies.
pub struct RemoteAgent<R, W> {
    channel: Option<LineChannel<R, W>>,
    child: Option<Child>,
}

impl<R: std::io::BufRead + Send, W: Write + Send> RemoteAgent<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        RemoteAgent {
            channel: Some(LineChannel::new(reader, writer)),
            child: None,
        }
    }

    fn channel(&mut self) -> &mut LineChannel<R, W> {
        self.channel.as_mut().expect("channel is open until drop")
    }
}

impl<R: std::io::BufRead + Send, W: Write + Send> Agent for RemoteAgent<R, W> {
    fn respond(
        &mut self,
        _session: &Session,
        incoming: &WireMessage,
    ) -> Result<WireMessage, AgentError> {
        self.channel().send(incoming)?;
        let reply = self.channel().recv()?;
        if !reply.is_agent_message() {
            return Err(AgentError::Protocol(format!(
                "agent sent `{}`; expected tool_call or final_answer",
                reply.kind()
            )));
        }
        Ok(reply)
    }

    fn notify(&mut self, message: &WireMessage) {
        // The peer may already be gone; the episode is over either way.
        let _ = self.channel().send(message);
    }
}

/// How long a subprocess agent may take to exit after its stdin closes.
const EXIT_GRACE: Duration = Duration::from_secs(2);

impl<R, W> Drop for RemoteAgent<R, W> {
    fn drop(&mut self) {
        // Closing stdin tells the agent the session is over.
        self.channel.take();
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + EXIT_GRACE;
            while Instant::now() < deadline {
                if !matches!(child.try_wait(), Ok(None)) {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn(
    program: &str,
    args: &[String],
) -> Result<RemoteAgent<BufReader<ChildStdout>, ChildStdin>, AgentError> {
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(WireError::Io)?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let mut agent = RemoteAgent::new(BufReader::new(stdout), stdin);
    agent.child = Some(child);
    Ok(agent)
}

fn connect(addr: &str) -> Result<RemoteAgent<BufReader<TcpStream>, TcpStream>, AgentError> {
    let stream = TcpStream::connect(addr).map_err(WireError::Io)?;
    let reader = BufReader::new(stream.try_clone().map_err(WireError::Io)?);
    Ok(RemoteAgent::new(reader, stream))
}

/// Scripts keyed by episode id, one JSON object per line:
/// `{"episode_id": "...", "actions": [<agent messages>]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptBook {
    pub scripts: HashMap<String, Vec<WireMessage>>,
}

#[derive(Serialize, Deserialize)]
struct ScriptLine {
    episode_id: String,
    actions: Vec<WireMessage>,
}

impl ScriptBook {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut scripts = HashMap::new();
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let entry: ScriptLine = serde_json::from_str(line)
                .map_err(|e| HarnessError::Config(format!("script line {}: {e}", n + 1)))?;
            scripts.insert(entry.episode_id, entry.actions);
        }
        Ok(ScriptBook { scripts })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut ids: Vec<&String> = self.scripts.keys().collect();
        ids.sort();
        ids.into_iter()
            .map(|id| {
                let line = ScriptLine {
                    episode_id: id.clone(),
                    actions: self.scripts[id].clone(),
                };
                serde_json::to_string(&line).expect("scripts serialize") + "\n"
            })
            .collect()
    }
}

/// Which agent plays each episode.
#[derive(Clone, Debug)]
pub enum AgentSpec {
    GtReplay,
    Greedy,
    Random,
    Stall,
    Scripted(Arc<ScriptBook>),
    Exec { program: String, args: Vec<String> },
    Connect(String),
}

impl AgentSpec {
    pub fn label(&self) -> String {
        match self {
            AgentSpec::GtReplay => "gt-replay".into(),
            AgentSpec::Greedy => "greedy".into(),
            AgentSpec::Random => "random".into(),
            AgentSpec::Stall => "stall".into(),
            AgentSpec::Scripted(_) => "scripted".into(),
            AgentSpec::Exec { program, .. } => format!("exec:{program}"),
            AgentSpec::Connect(addr) => format!("connect:{addr}"),
        }
    }

    /// A fresh agent for one episode.
    pub fn build(&self, session: &Session) -> Result<Box<dyn Agent>, AgentError> {
        let episode = &session.original_query().query_id;
        Ok(match self {
            AgentSpec::GtReplay => Box::new(PlannerAgent::new(FollowerKind::Optimal)),
            AgentSpec::Greedy => Box::new(PlannerAgent::new(FollowerKind::Greedy)),
            AgentSpec::Random => Box::new(RandomAgent::new(derive_seed(
                session.config().seed,
                episode,
                "random_agent",
            ))),
            AgentSpec::Stall => Box::new(StallAgent),
            AgentSpec::Scripted(book) => Box::new(ScriptedAgent::new(
                book.scripts.get(episode).cloned().unwrap_or_default(),
            )),
            AgentSpec::Exec { program, args } => Box::new(spawn(program, args)?),
            AgentSpec::Connect(addr) => Box::new(connect(addr)?),
        })
    }
}

/// Built-in names accepted on the command line.
impl FromStr for AgentSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gt-replay" => Ok(AgentSpec::GtReplay),
            "greedy" => Ok(AgentSpec::Greedy),
            "random" => Ok(AgentSpec::Random),
            "stall" => Ok(AgentSpec::Stall),
            other => Err(HarnessError::Config(format!(
                "unknown agent `{other}` (expected gt-replay, greedy, random or stall)"
            ))),
        }
    }
}

/// Resolves `--script` to a script book.
pub fn scripted(path: &Path) -> Result<AgentSpec, HarnessError> {
    Ok(AgentSpec::Scripted(Arc::new(ScriptBook::load(path)?)))
}
