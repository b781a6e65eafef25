use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use costenv_core::domain::{BlockType, EnvConfig, TaskName};
use costenv_core::querygen::Split;
use costenv_core::Cost;
use costenv_harness::agents::{scripted, AgentSpec};
use costenv_harness::instances::{generate, InstanceSet, Selection};
use costenv_harness::runner::run_batch;
use costenv_harness::transcript::{evaluate, replay, Transcript};
use costenv_harness::HarnessError;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "costenv",
    version,
    about = "Cost-aware tool planning environment"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct EnvArgs {
    /// Global seed S.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Task sequence length N.
    #[arg(long, default_value_t = 5)]
    sequence_length: u32,
    #[arg(long, default_value = "15.00")]
    c_min: Cost,
    #[arg(long, default_value = "25.00")]
    c_max: Cost,
    /// Composite cost noise σ.
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    #[arg(long, default_value_t = 20)]
    max_turns: u32,
    /// none, ban-tool, preference-change, cost-change or remove-tools.
    #[arg(long, default_value = "none")]
    block_type: BlockType,
    #[arg(long, default_value_t = 0)]
    block_count: u32,
    /// Seed spacing between events of one episode.
    #[arg(long, default_value_t = 100)]
    seed_interval: u64,
    /// Restrict to these tasks (repeatable).
    #[arg(long = "task")]
    tasks: Vec<TaskName>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Maximum number of instances.
    #[arg(long)]
    limit: Option<usize>,
    /// Directory with per-task preference files.
    #[arg(long)]
    preferences_dir: Option<PathBuf>,
}

impl EnvArgs {
    fn config(&self) -> EnvConfig {
        EnvConfig {
            seed: self.seed,
            sequence_length: self.sequence_length,
            c_min: self.c_min,
            c_max: self.c_max,
            noise_std: self.noise_std,
            max_turns: self.max_turns,
            block_type: self.block_type,
            block_count: self.block_count,
            seed_interval: self.seed_interval,
        }
    }

    fn selection(&self) -> Selection {
        Selection {
            tasks: if self.tasks.is_empty() {
                TaskName::ALL.to_vec()
            } else {
                self.tasks.clone()
            },
            split: self.split,
            limit: self.limit,
            preferences_dir: self.preferences_dir.clone(),
        }
    }
}

#[derive(Args)]
struct AgentArgs {
    /// Built-in agent: gt-replay, greedy, random or stall.
    #[arg(long, default_value = "gt-replay", conflicts_with_all = ["script", "exec", "connect"])]
    agent: String,
    /// JSONL file of scripted actions keyed by episode id.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Program speaking the wire protocol on stdin/stdout (one process per episode).
    #[arg(long)]
    exec: Option<String>,
    #[arg(long = "exec-arg", requires = "exec", allow_hyphen_values = true)]
    exec_args: Vec<String>,
    /// host:port of an agent speaking the wire protocol over TCP.
    #[arg(long)]
    connect: Option<String>,
}

impl AgentArgs {
    fn spec(&self) -> Result<AgentSpec, HarnessError> {
        if let Some(path) = &self.script {
            return scripted(path);
        }
        if let Some(program) = &self.exec {
            return Ok(AgentSpec::Exec {
                program: program.clone(),
                args: self.exec_args.clone(),
            });
        }
        if let Some(addr) = &self.connect {
            return Ok(AgentSpec::Connect(addr.clone()));
        }
        self.agent.parse()
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Build an instance set and write it as JSONL.
    Generate {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Play every instance with an agent and write a transcript.
    Run {
        /// Instance file from `generate`; without it instances are built from the flags.
        #[arg(long)]
        instances: Option<PathBuf>,
        #[command(flatten)]
        env: EnvArgs,
        #[command(flatten)]
        agent: AgentArgs,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a transcript.
    Eval {
        #[arg(long)]
        transcript: PathBuf,
        /// Report file (JSONL); the summary table always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print ground-truth and greedy plans.
    Oracle {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        query_id: Option<String>,
    },
    /// Re-execute a transcript and check that every result is reproduced.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Cmd::Generate { env, out } => {
            let set = generate(&env.config(), &env.selection())?;
            set.write(&out)?;
            eprintln!(
                "wrote {} instances to {}",
                set.instances.len(),
                out.display()
            );
        }
        Cmd::Run {
            instances,
            env,
            agent,
            threads,
            out,
        } => {
            let set = match instances {
                Some(path) => InstanceSet::read(&path)?,
                None => generate(&env.config(), &env.selection())?,
            };
            let spec = agent.spec()?;
            let episodes = run_batch(&set, &spec, threads)?;
            let aborted = episodes.iter().filter(|e| e.error.is_some()).count();
            let transcript = Transcript::new(&set, &spec, episodes);
            transcript.write(&out)?;
            eprintln!(
                "wrote {} episodes to {} ({aborted} aborted)",
                transcript.episodes.len(),
                out.display()
            );
            if aborted > 0 {
                return Err(HarnessError::Protocol(format!(
                    "{aborted} episode(s) aborted by the agent"
                )));
            }
        }
        Cmd::Eval { transcript, out } => {
            let report = evaluate(&Transcript::read(&transcript)?)?;
            if let Some(path) = out {
                std::fs::write(&path, report.to_jsonl()).map_err(|e| HarnessError::io(&path, e))?;
            }
            print!("{}", report.table());
        }
        Cmd::Oracle { env, query_id } => {
            let mut selection = env.selection();
            if query_id.is_some() {
                selection.limit = None;
            }
            let set = generate(&env.config(), &selection)?;
            let mut found = false;
            for inst in &set.instances {
                if query_id.as_ref().is_some_and(|q| *q != inst.query.query_id) {
                    continue;
                }
                found = true;
                let line = json!({
                    "query_id": inst.query.query_id,
                    "query": inst.query.text,
                    "gt": inst.static_gt,
                    "greedy": inst.greedy,
                    "blocked_gt": inst.blocked_gt,
                });
                println!("{line}");
            }
            if !found {
                return Err(HarnessError::Config("no matching query".into()));
            }
        }
        Cmd::Replay { transcript } => {
            let report = replay(&Transcript::read(&transcript)?)?;
            println!("{}", serde_json::to_string(&report).expect("serializable"));
            if !report.is_clean() {
                return Err(HarnessError::Invariant(format!(
                    "{} of {} episodes did not replay identically",
                    report.mismatched.len(),
                    report.episodes
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
