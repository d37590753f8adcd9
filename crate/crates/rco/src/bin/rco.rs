//! Stage-wise command-line front end.
//!
//! Every flag mirrors a configuration key 1:1; precedence is
//! flags > config file > defaults. Endpoint credentials come only from
//! environment variables (RCO_ACTOR_URL/RCO_ACTOR_TOKEN and the critic and
//! judge equivalents, plus RCO_HTTP_TIMEOUT_SECS).
//!
//! Exit codes: 0 success, 2 configuration error, 3 endpoint error,
//! 4 data-validation error, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rco::config::{canonical_listing, config_hash, resolve_config, PipelineConfig};
use rco::stages::{run_stage, StageCommand, StageError, StageInputs, TrainOptions};

#[derive(Parser)]
#[command(
    name = "rco",
    about = "Critique-refinement data pipeline and reward engine",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigFlags {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, short = 'N')]
    n_critiques: Option<u32>,
    #[arg(long, short = 'M')]
    m_refinements: Option<u32>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<u32>,
    #[arg(long)]
    min_valid_judgments: Option<u32>,
    #[arg(long)]
    critic_style: Option<String>,
    #[arg(long)]
    retry_attempts: Option<u32>,
    #[arg(long)]
    retry_base_ms: Option<u64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    actor_backend: Option<String>,
    #[arg(long)]
    critic_backend: Option<String>,
    #[arg(long)]
    judge_backend: Option<String>,
    #[arg(long)]
    actor_model: Option<String>,
    #[arg(long)]
    critic_model: Option<String>,
    #[arg(long)]
    judge_model: Option<String>,
    #[arg(long)]
    actor_mock_behavior: Option<String>,
    #[arg(long)]
    critic_mock_behavior: Option<String>,
    #[arg(long)]
    judge_mock_behavior: Option<String>,
}

impl ConfigFlags {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(value) = value {
                out.push((key.to_string(), value));
            }
        };
        push("n_critiques", self.n_critiques.map(|v| v.to_string()));
        push("m_refinements", self.m_refinements.map(|v| v.to_string()));
        push("beta", self.beta.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("parallelism", self.parallelism.map(|v| v.to_string()));
        push(
            "min_valid_judgments",
            self.min_valid_judgments.map(|v| v.to_string()),
        );
        push("critic_style", self.critic_style.clone());
        push("retry_attempts", self.retry_attempts.map(|v| v.to_string()));
        push("retry_base_ms", self.retry_base_ms.map(|v| v.to_string()));
        push("max_tokens", self.max_tokens.map(|v| v.to_string()));
        push("actor_backend", self.actor_backend.clone());
        push("critic_backend", self.critic_backend.clone());
        push("judge_backend", self.judge_backend.clone());
        push("actor_model", self.actor_model.clone());
        push("critic_model", self.critic_model.clone());
        push("judge_model", self.judge_model.clone());
        push("actor_mock_behavior", self.actor_mock_behavior.clone());
        push("critic_mock_behavior", self.critic_mock_behavior.clone());
        push("judge_mock_behavior", self.judge_mock_behavior.clone());
        out
    }
}

#[derive(Args, Default)]
struct IoFlags {
    /// Output directory for this stage.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    critiques: Option<PathBuf>,
    #[arg(long)]
    refinements: Option<PathBuf>,
    #[arg(long)]
    judgments: Option<PathBuf>,
    #[arg(long)]
    rewards: Option<PathBuf>,
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Critique-refine rounds for `iterate`.
    #[arg(long, default_value_t = 3)]
    turns: u32,
    /// External command for code-accuracy checks: `<cmd> <suite_id>` with
    /// the code on stdin, exit 0 meaning pass.
    #[arg(long)]
    code_exec: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 200_000)]
    max_steps: u32,
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    /// Re-run even if inputs and configuration are unchanged.
    #[arg(long)]
    force: bool,
}

impl IoFlags {
    fn stage_inputs(&self) -> StageInputs {
        StageInputs {
            records: self.records.clone(),
            responses: self.responses.clone(),
            critiques: self.critiques.clone(),
            refinements: self.refinements.clone(),
            judgments: self.judgments.clone(),
            rewards: self.rewards.clone(),
            fixture: self.fixture.clone(),
            turns: self.turns,
            code_exec: self.code_exec.clone(),
            train: TrainOptions {
                learning_rate: self.learning_rate,
                max_steps: self.max_steps,
                tolerance: self.tolerance,
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate one initial response per prompt record.
    CollectResponses(StageArgs),
    /// Sample N critiques of every initial response.
    Critique(StageArgs),
    /// Sample M refinements under every critique.
    Refine(StageArgs),
    /// Generate the critique-free self-refinement baseline.
    SelfRefine(StageArgs),
    /// Judge refinements against initial responses in both orders.
    Judge(StageArgs),
    /// Compute critique utilities and regression targets.
    Reward(StageArgs),
    /// Double-judge critique pairs into preference pairs.
    DpcoPairs(StageArgs),
    /// Fit toy policies and report convergence against the closed form.
    TrainToy(StageArgs),
    /// Greedy-refine, judge, rate, and report evaluation metrics.
    Eval(StageArgs),
    /// Run the turn-by-turn critique-refine loop.
    Iterate(StageArgs),
    /// Print the resolved configuration and its hash.
    ExplainConfig {
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Write the built-in 20-prompt sample dataset.
    WriteFixture {
        /// Destination record file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    config: ConfigFlags,
    #[command(flatten)]
    io: IoFlags,
}

fn resolve(flags: &ConfigFlags) -> Result<PipelineConfig, StageError> {
    resolve_config(flags.config.as_deref(), &flags.overrides())
        .map_err(|e| StageError::Config(e.to_string()))
}

fn execute(command: StageCommand, args: &StageArgs) -> Result<(), StageError> {
    let config = resolve(&args.config)?;
    let summary = run_stage(
        command,
        &config,
        &args.io.stage_inputs(),
        &args.io.out,
        args.io.force,
    )?;
    if summary.skipped {
        println!(
            "{}: skipped ({})",
            summary.stage,
            summary.notes.first().map(String::as_str).unwrap_or("no-op")
        );
        return Ok(());
    }
    for (name, count) in &summary.written {
        println!("{}: wrote {name} ({count} record(s))", summary.stage);
    }
    for note in &summary.notes {
        eprintln!("{}: note: {note}", summary.stage);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::CollectResponses(args) => execute(StageCommand::CollectResponses, args),
        Command::Critique(args) => execute(StageCommand::Critique, args),
        Command::Refine(args) => execute(StageCommand::Refine, args),
        Command::SelfRefine(args) => execute(StageCommand::SelfRefine, args),
        Command::Judge(args) => execute(StageCommand::Judge, args),
        Command::Reward(args) => execute(StageCommand::Reward, args),
        Command::DpcoPairs(args) => execute(StageCommand::DpcoPairs, args),
        Command::TrainToy(args) => execute(StageCommand::TrainToy, args),
        Command::Eval(args) => execute(StageCommand::Eval, args),
        Command::Iterate(args) => execute(StageCommand::Iterate, args),
        Command::ExplainConfig { config } => resolve(config).map(|resolved| {
            print!("{}", canonical_listing(&resolved));
            println!("config_hash = {}", config_hash(&resolved));
        }),
        Command::WriteFixture { out } => {
            rco::records::write_records(&rco::fixtures::desk_prompts(), out)
                .map_err(|e| StageError::Io(e.to_string()))
                .map(|()| println!("wrote {} (20 record(s))", out.display()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
