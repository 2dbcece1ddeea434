//! `blockwork` command line.
//!
//! Exit codes: 0 success, 1 verification or domain failure, 2 usage or
//! configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use blockwork_core::agents::{
    Architect, ArchitectAgent, Builder, BuilderAgent, OracleArchitect, OracleBuilder,
};
use blockwork_core::eval::{self, BlockStats, EvalInstance, TABLE_HEADER};
use blockwork_core::gateway::{ChatModel, ModelSpec, ScriptedModel};
use blockwork_core::session::{
    replay, run_session, turns_to_target, AgentKind, EventPayload, SessionConfig, SessionOutcome, Transcript,
};
use blockwork_core::transcript;
use blockwork_core::world::{parse_blocks, serialize_blocks, WorldState};
use blockwork_server::{Registry, TargetLibrary};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod config;

use config::{FileConfig, ModelOverrides};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "blockwork", version, about = "Collaborative block-building agents")]
pub struct Cli {
    /// TOML file with `[server]` and `[models.<name>]` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a builder on an instruction dataset.
    Eval(EvalArgs),
    /// Run one architect/builder session.
    Selfplay(SelfplayArgs),
    /// Serve the session platform.
    Serve(ServeArgs),
    /// Print and verify a transcript.
    Replay(ReplayArgs),
    /// Write a seeded synthetic instruction dataset.
    GenDataset(GenDatasetArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Seat {
    Oracle,
    Llm,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "llm")]
    pub builder: Seat,
    /// Endpoint-table entry for the builder.
    #[arg(long)]
    pub model: Option<String>,
    /// Directory of recorded replies, one `<instance id>.txt` per instance.
    #[arg(long, conflicts_with = "model")]
    pub fixtures: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ModelOverrides,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub parallelism: u32,
    /// Row label in the accuracy table.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct SelfplayArgs {
    /// Block-list JSON file.
    #[arg(long, conflicts_with = "target_name")]
    pub target: Option<PathBuf>,
    /// Name from the bundled target library.
    #[arg(long)]
    pub target_name: Option<String>,
    #[arg(long, value_enum, default_value = "oracle")]
    pub architect: Seat,
    #[arg(long, value_enum, default_value = "oracle")]
    pub builder: Seat,
    #[arg(long)]
    pub architect_model: Option<String>,
    #[arg(long)]
    pub builder_model: Option<String>,
    /// Numbered reply files for an llm architect.
    #[arg(long, conflicts_with = "architect_model")]
    pub architect_fixtures: Option<PathBuf>,
    /// Numbered reply files for an llm builder.
    #[arg(long, conflicts_with = "builder_model")]
    pub builder_fixtures: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ModelOverrides,
    #[arg(long)]
    pub seed_world: Option<PathBuf>,
    #[arg(long)]
    pub max_turns: Option<u32>,
    #[arg(long)]
    pub confidence_gate: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub pace_ms: Option<u64>,
    #[arg(long)]
    pub retain_finished: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if matches!(e, CliError::Usage(_)) {
                let _ = writeln!(err, "run `blockwork --help` for usage");
            }
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let config = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Eval(args) => cmd_eval(&config, args, out),
        Command::Selfplay(args) => cmd_selfplay(&config, args, out),
        Command::Serve(args) => cmd_serve(config, args, out),
        Command::Replay(args) => cmd_replay(args, out),
        Command::GenDataset(args) => cmd_gen_dataset(args, out),
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} is not a directory", path.display())))
    }
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

type BuilderFactory = Box<dyn Fn(&EvalInstance) -> Result<Box<dyn Builder>, String> + Sync>;

fn fixture_builder_factory(dir: PathBuf) -> BuilderFactory {
    Box::new(move |instance: &EvalInstance| {
        let path = dir.join(format!("{}.txt", instance.id));
        let reply = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let model: Arc<dyn ChatModel> = Arc::new(ScriptedModel::new([reply]));
        Ok(Box::new(BuilderAgent::new(model)) as Box<dyn Builder>)
    })
}

fn model_builder_factory(spec: ModelSpec) -> BuilderFactory {
    Box::new(move |_: &EvalInstance| {
        let model = spec.build().map_err(|e| e.to_string())?;
        Ok(Box::new(BuilderAgent::new(model)) as Box<dyn Builder>)
    })
}

pub fn cmd_eval(config: &FileConfig, args: &EvalArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    require_file(&args.dataset, "dataset")?;
    let dataset = eval::load_dataset(&args.dataset).map_err(|e| CliError::Usage(e.to_string()))?;
    let (factory, default_label): (BuilderFactory, String) = match (&args.fixtures, args.builder, &args.model) {
        (Some(dir), _, _) => {
            require_dir(dir, "fixture directory")?;
            (fixture_builder_factory(dir.clone()), "fixtures".into())
        }
        (None, Seat::Oracle, _) => (
            Box::new(|_: &EvalInstance| Ok(Box::new(OracleBuilder) as Box<dyn Builder>)),
            "oracle".into(),
        ),
        (None, Seat::Llm, Some(name)) => (model_builder_factory(config.model(name, &args.overrides)?), name.clone()),
        (None, Seat::Llm, None) => {
            return Err(CliError::Usage("eval needs --model, --fixtures or --builder oracle".into()))
        }
    };
    create_out(&args.out)?;
    let report = eval::run_eval(&dataset, factory, args.parallelism as usize).map_err(failure)?;

    fs::write(args.out.join("report.json"), report.to_json()).map_err(failure)?;
    let csv = fs::File::create(args.out.join("per_instance.csv")).map_err(failure)?;
    report.write_csv(csv).map_err(failure)?;

    let label = args.label.clone().unwrap_or(default_label);
    writeln!(out, "{TABLE_HEADER}").map_err(failure)?;
    writeln!(out, "{}", report.table_row(&label)).map_err(failure)?;
    writeln!(
        out,
        "n={} correct={} block_f1={} disregard_rate={}",
        report.n,
        report.correct,
        fmt_ratio(report.block_f1),
        fmt_ratio(report.disregard_rate)
    )
    .map_err(failure)?;
    Ok(0)
}

/// Rounds to three places and prints the shortest form (`1.0`, `0.667`).
pub fn fmt_ratio(value: f64) -> String {
    format!("{:?}", (value * 1000.0).round() / 1000.0)
}

fn load_world(path: &Path, what: &str) -> Result<WorldState, CliError> {
    require_file(path, what)?;
    let text = fs::read_to_string(path).map_err(failure)?;
    parse_blocks(text.trim()).map_err(|e| CliError::Usage(format!("{what} {}: {e}", path.display())))
}

fn seat_model(
    config: &FileConfig,
    name: &Option<String>,
    fixtures: &Option<PathBuf>,
    overrides: &ModelOverrides,
    role: &str,
) -> Result<Arc<dyn ChatModel>, CliError> {
    let spec = match (name, fixtures) {
        (_, Some(dir)) => {
            require_dir(dir, "fixture directory")?;
            ModelSpec::Fixture { dir: dir.clone() }
        }
        (Some(name), None) => config.model(name, overrides)?,
        (None, None) => {
            return Err(CliError::Usage(format!(
                "an llm {role} needs --{role}-model or --{role}-fixtures"
            )))
        }
    };
    spec.build().map_err(|e| CliError::Usage(e.to_string()))
}

pub fn cmd_selfplay(config: &FileConfig, args: &SelfplayArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let target = match (&args.target, &args.target_name) {
        (Some(path), _) => load_world(path, "target")?,
        (None, Some(name)) => TargetLibrary::bundled()
            .get(name)
            .map_err(|e| CliError::Usage(e.to_string()))?
            .clone(),
        (None, None) => return Err(CliError::Usage("selfplay needs --target or --target-name".into())),
    };
    let architect_seat = if args.architect_fixtures.is_some() { Seat::Llm } else { args.architect };
    let builder_seat = if args.builder_fixtures.is_some() { Seat::Llm } else { args.builder };
    let kind = |seat| match seat {
        Seat::Oracle => AgentKind::Oracle,
        Seat::Llm => AgentKind::Llm,
    };

    let mut session = SessionConfig::new(target.clone(), kind(architect_seat), kind(builder_seat));
    if let Some(path) = &args.seed_world {
        session.seed_world = load_world(path, "seed world")?;
    }
    if let Some(n) = args.max_turns {
        session.max_turns = n;
    }
    if let Some(g) = args.confidence_gate {
        session.confidence_gate = g;
    }
    session.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut architect: Box<dyn Architect> = match architect_seat {
        Seat::Oracle => Box::new(OracleArchitect::new(target.clone())),
        Seat::Llm => {
            let model = seat_model(config, &args.architect_model, &args.architect_fixtures, &args.overrides, "architect")?;
            Box::new(ArchitectAgent::new(model, target.clone()))
        }
    };
    let mut builder: Box<dyn Builder> = match builder_seat {
        Seat::Oracle => Box::new(OracleBuilder),
        Seat::Llm => {
            let model = seat_model(config, &args.builder_model, &args.builder_fixtures, &args.overrides, "builder")?;
            Box::new(BuilderAgent::new(model))
        }
    };

    create_out(&args.out)?;
    let t = run_session(&session, &mut *architect, &mut *builder).map_err(|e| CliError::Usage(e.to_string()))?;
    let path = args.out.join("transcript.jsonl");
    transcript::save(&t, &path).map_err(failure)?;

    let w = |out: &mut dyn Write, line: String| writeln!(out, "{line}").map_err(failure);
    for (turn, distance) in t.distance_trace() {
        w(out, format!("turn {turn}: distance={distance}"))?;
    }
    let f1 = fmt_ratio(BlockStats::of_world(&t.final_world, &target).f1());
    let turns = t.distance_trace().last().map(|&(turn, _)| turn).unwrap_or(0);
    let outcome = t.outcome();
    match (turns_to_target(&t), outcome) {
        (Some(n), _) => w(out, format!("turns={n}, f1={f1}"))?,
        (None, SessionOutcome::Aborted) => w(out, format!("session aborted (turns={turns}, f1={f1})"))?,
        (None, _) => w(out, format!("goal not reached (turns={turns}, f1={f1})"))?,
    }
    w(out, format!("transcript: {}", path.display()))?;
    if outcome == SessionOutcome::Aborted {
        let reason = t
            .events
            .iter()
            .rev()
            .find_map(|e| match &e.payload {
                EventPayload::Error { message } => Some(message.clone()),
                _ => None,
            })
            .unwrap_or_default();
        return Err(CliError::Failure(format!("session aborted: {reason}")));
    }
    Ok(0)
}

fn cmd_serve(mut config: FileConfig, args: &ServeArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let server = &mut config.server;
    if let Some(v) = &args.host {
        server.host = v.clone();
    }
    if let Some(v) = args.port {
        server.port = v;
    }
    if let Some(v) = &args.targets {
        require_dir(v, "target library")?;
        server.target_library = Some(v.clone());
    }
    if let Some(v) = &args.store {
        server.store_dir = Some(v.clone());
    }
    if let Some(v) = args.pace_ms {
        server.pace_ms = v;
    }
    if let Some(v) = args.retain_finished {
        server.retain_finished = v;
    }
    let addr = server.addr().map_err(|e| CliError::Usage(e.to_string()))?;
    let registry = Registry::new(server, config.models.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(out, "listening on http://{addr}").map_err(failure)?;
    out.flush().map_err(failure)?;
    blockwork_server::run(registry, &config.server).map_err(failure)?;
    Ok(0)
}

/// Human-readable dialogue, one line per event.
pub fn render_transcript(t: &Transcript) -> Vec<String> {
    let mut lines = vec![format!("seed world: {}", serialize_blocks(&t.config.seed_world))];
    for e in &t.events {
        let actor = serde_json::to_value(e.actor).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let body = match &e.payload {
            EventPayload::Utterance { text } => format!("says: {text}"),
            EventPayload::Question { text } => format!("asks: {text}"),
            EventPayload::Actions { raw, applied, .. } => {
                let held = if *applied { "" } else { " (held back by confidence gate)" };
                format!("acts: {}{held}", raw.trim())
            }
            EventPayload::Disregard { reason, .. } => format!("reply disregarded: {reason}"),
            EventPayload::WorldDiff { added, removed, .. } => format!(
                "world: +{} -{}",
                serde_json::to_string(added).unwrap_or_default(),
                serde_json::to_string(removed).unwrap_or_default()
            ),
            EventPayload::GoalReached { turns } => format!("goal reached after {turns} turns"),
            EventPayload::Error { message } => format!("error: {message}"),
        };
        lines.push(format!("[{}] {actor} {body}", e.turn));
    }
    lines
}

pub fn cmd_replay(args: &ReplayArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    require_file(&args.path, "transcript")?;
    let t = transcript::load(&args.path).map_err(|e| CliError::Failure(format!("corrupt transcript: {e}")))?;
    for line in render_transcript(&t) {
        writeln!(out, "{line}").map_err(failure)?;
    }
    let world = replay(&t).map_err(failure)?;
    writeln!(out, "verified: final world {}", serialize_blocks(&world)).map_err(failure)?;
    Ok(0)
}

pub fn cmd_gen_dataset(args: &GenDatasetArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out(parent)?;
    }
    let dataset = eval::synthetic_dataset(args.seed, args.count);
    let file = fs::File::create(&args.out).map_err(|e| CliError::Usage(format!("{}: {e}", args.out.display())))?;
    eval::write_dataset(&dataset, std::io::BufWriter::new(file)).map_err(failure)?;
    writeln!(out, "wrote {} instances to {}", dataset.len(), args.out.display()).map_err(failure)?;
    Ok(0)
}
