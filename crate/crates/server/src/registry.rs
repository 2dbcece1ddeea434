//! Session bookkeeping: creation, seats, the ordered event log, status.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use blockwork_core::agents::{
    Architect, ArchitectAgent, Builder, BuilderAgent, HumanArchitect, HumanBuilder, OracleArchitect, OracleBuilder,
    Speaker,
};
use blockwork_core::gateway::ModelSpec;
use blockwork_core::mailbox::{Mailbox, PostError};
use blockwork_core::session::{
    run_session_with, AgentKind, Clock, DialogueEvent, SessionConfig, SessionOutcome, SystemClock, Transcript,
    DEFAULT_MAX_TURNS,
};
use blockwork_core::transcript;
use blockwork_core::world::WorldState;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::targets::TargetLibrary;
use crate::{ServerConfig, ServerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Waiting,
    Running,
    Finished,
    Aborted,
}

impl SessionStatus {
    fn rank(self) -> u8 {
        match self {
            SessionStatus::Waiting => 0,
            SessionStatus::Running => 1,
            SessionStatus::Finished | SessionStatus::Aborted => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Waiting => "waiting",
            SessionStatus::Running => "running",
            SessionStatus::Finished => "finished",
            SessionStatus::Aborted => "aborted",
        }
    }

    pub fn is_terminal(self) -> bool {
        self.rank() == 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub kind: AgentKind,
    /// Endpoint-table entry, for `llm` seats only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl AgentSpec {
    pub fn oracle() -> Self {
        AgentSpec { kind: AgentKind::Oracle, model: None }
    }

    pub fn human() -> Self {
        AgentSpec { kind: AgentKind::Human, model: None }
    }

    pub fn llm(model: impl Into<String>) -> Self {
        AgentSpec { kind: AgentKind::Llm, model: Some(model.into()) }
    }
}

/// Body of `POST /sessions`. Exactly one of `target` and `target_name`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<WorldState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_name: Option<String>,
    pub architect: AgentSpec,
    pub builder: AgentSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_turns: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_gate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_world: Option<WorldState>,
}

impl CreateSession {
    pub fn named(target_name: &str, architect: AgentSpec, builder: AgentSpec) -> Self {
        CreateSession {
            target: None,
            target_name: Some(target_name.to_string()),
            architect,
            builder,
            max_turns: None,
            confidence_gate: None,
            seed_world: None,
        }
    }
}

/// Body of `POST /sessions/{id}/messages`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PostMessage {
    pub role: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub status: SessionStatus,
    pub created_at_ms: u64,
    pub architect: AgentSpec,
    pub builder: AgentSpec,
    pub config: SessionConfig,
    pub events: usize,
    pub awaiting: Option<Speaker>,
}

/// A dialogue event tagged with its session, as sent on the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEvent {
    pub session_id: String,
    #[serde(flatten)]
    pub event: DialogueEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    /// Last event included, `None` for the seed world.
    pub index: Option<u64>,
    /// Last world_diff event included.
    pub diff_index: Option<u64>,
    pub world: WorldState,
}

struct Seats {
    architect: Box<dyn Architect>,
    builder: Box<dyn Builder>,
}

struct Log {
    events: Vec<DialogueEvent>,
    /// World and latest diff index after each event.
    snapshots: Vec<(WorldState, Option<u64>)>,
    status: SessionStatus,
}

pub struct Session {
    id: String,
    config: SessionConfig,
    architect: AgentSpec,
    builder: AgentSpec,
    created_at_ms: u64,
    mailbox: Arc<Mailbox>,
    log: RwLock<Log>,
    version: watch::Sender<u64>,
    seats: Mutex<Option<Seats>>,
}

impl Session {
    fn new(id: String, config: SessionConfig, architect: AgentSpec, builder: AgentSpec, created_at_ms: u64) -> Self {
        Session {
            id,
            config,
            architect,
            builder,
            created_at_ms,
            mailbox: Arc::new(Mailbox::new()),
            log: RwLock::new(Log {
                events: Vec::new(),
                snapshots: Vec::new(),
                status: SessionStatus::Waiting,
            }),
            version: watch::channel(0).0,
            seats: Mutex::new(None),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn status(&self) -> SessionStatus {
        self.log.read().expect("log lock").status
    }

    pub fn len(&self) -> usize {
        self.log.read().expect("log lock").events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn summary(&self) -> SessionSummary {
        let log = self.log.read().expect("log lock");
        SessionSummary {
            id: self.id.clone(),
            status: log.status,
            created_at_ms: self.created_at_ms,
            architect: self.architect.clone(),
            builder: self.builder.clone(),
            config: self.config.clone(),
            events: log.events.len(),
            awaiting: self.mailbox.awaiting(),
        }
    }

    /// Events with index at least `from`, and the status at the same instant.
    pub fn events_from(&self, from: usize) -> (Vec<DialogueEvent>, SessionStatus) {
        let log = self.log.read().expect("log lock");
        let batch = log.events.get(from..).map(<[_]>::to_vec).unwrap_or_default();
        (batch, log.status)
    }

    pub fn events(&self) -> Vec<DialogueEvent> {
        self.events_from(0).0
    }

    /// Changes whenever an event is committed or the status moves.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.version.subscribe()
    }

    /// World after event `at`, or the latest world when `at` is `None`.
    pub fn world(&self, at: Option<u64>) -> Result<WorldSnapshot, ServerError> {
        let log = self.log.read().expect("log lock");
        let index = match at {
            Some(i) if (i as usize) < log.events.len() => Some(i),
            Some(i) => {
                return Err(ServerError::BadRequest(format!(
                    "index {i} is past the last event ({} committed)",
                    log.events.len()
                )))
            }
            None => log.events.len().checked_sub(1).map(|i| i as u64),
        };
        Ok(match index {
            None => WorldSnapshot {
                index: None,
                diff_index: None,
                world: self.config.seed_world.clone(),
            },
            Some(i) => {
                let (world, diff_index) = log.snapshots[i as usize].clone();
                WorldSnapshot {
                    index: Some(i),
                    diff_index,
                    world,
                }
            }
        })
    }

    pub fn awaiting(&self) -> Option<Speaker> {
        self.mailbox.awaiting()
    }

    fn seat_kind(&self, role: Speaker) -> AgentKind {
        match role {
            Speaker::Architect => self.config.architect_kind,
            Speaker::Builder => self.config.builder_kind,
        }
    }

    pub fn post(&self, role: Speaker, text: &str) -> Result<(), ServerError> {
        if self.status().is_terminal() {
            return Err(ServerError::SessionFinished);
        }
        if self.seat_kind(role) != AgentKind::Human {
            return Err(ServerError::NotYourTurn(role));
        }
        self.mailbox.post(role, text).map_err(|e| match e {
            PostError::NotYourTurn(who) => ServerError::NotYourTurn(who),
            PostError::Closed => ServerError::SessionFinished,
            PostError::Empty => ServerError::BadRequest("message is empty".into()),
        })
    }

    fn commit(&self, event: DialogueEvent) {
        {
            let mut log = self.log.write().expect("log lock");
            let (mut world, mut diff_index) = log
                .snapshots
                .last()
                .cloned()
                .unwrap_or_else(|| (self.config.seed_world.clone(), None));
            if let Some(diff) = event.payload.as_diff() {
                match world.apply_diff(&diff) {
                    Ok(next) => world = next,
                    Err(err) => tracing::error!(session = %self.id, %err, "diff does not apply to the live world"),
                }
                diff_index = Some(event.index);
            }
            log.events.push(event);
            log.snapshots.push((world, diff_index));
        }
        self.version.send_modify(|v| *v += 1);
    }

    fn advance(&self, to: SessionStatus) -> bool {
        let moved = {
            let mut log = self.log.write().expect("log lock");
            let forward = to.rank() > log.status.rank();
            if forward {
                log.status = to;
            }
            forward
        };
        if moved {
            self.version.send_modify(|v| *v += 1);
        }
        moved
    }

    pub fn transcript(&self) -> Transcript {
        let log = self.log.read().expect("log lock");
        Transcript {
            config: self.config.clone(),
            events: log.events.clone(),
            final_world: log
                .snapshots
                .last()
                .map(|(w, _)| w.clone())
                .unwrap_or_else(|| self.config.seed_world.clone()),
        }
    }

    fn from_transcript(id: String, t: Transcript) -> Session {
        let architect = AgentSpec { kind: t.config.architect_kind, model: None };
        let builder = AgentSpec { kind: t.config.builder_kind, model: None };
        let created = t.events.first().map(|e| e.timestamp_ms).unwrap_or(0);
        let status = match t.outcome() {
            SessionOutcome::Aborted => SessionStatus::Aborted,
            _ => SessionStatus::Finished,
        };
        let session = Session::new(id, t.config, architect, builder, created);
        for event in t.events {
            session.commit(event);
        }
        session.mailbox.close();
        session.advance(status);
        session
    }
}

#[derive(Debug, Clone)]
struct Options {
    pace: Duration,
    human_timeout: Duration,
    retain_finished: usize,
    store_dir: Option<PathBuf>,
}

pub struct Registry {
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    library: TargetLibrary,
    models: BTreeMap<String, ModelSpec>,
    options: Options,
}

impl Registry {
    pub fn new(config: &ServerConfig, models: BTreeMap<String, ModelSpec>) -> Result<Self, ServerError> {
        let mut library = TargetLibrary::bundled();
        if let Some(dir) = &config.target_library {
            library.extend_from_dir(dir)?;
        }
        if let Some(dir) = &config.store_dir {
            std::fs::create_dir_all(dir).map_err(|e| ServerError::Io(format!("{}: {e}", dir.display())))?;
        }
        Ok(Registry {
            sessions: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            library,
            models,
            options: Options {
                pace: Duration::from_millis(config.pace_ms),
                human_timeout: Duration::from_secs(config.human_timeout_secs),
                retain_finished: config.retain_finished,
                store_dir: config.store_dir.clone(),
            },
        })
    }

    pub fn targets(&self) -> &TargetLibrary {
        &self.library
    }

    fn model(&self, spec: &AgentSpec) -> Result<Arc<dyn blockwork_core::gateway::ChatModel>, ServerError> {
        let name = spec
            .model
            .as_deref()
            .ok_or_else(|| ServerError::InvalidConfig("llm seats need a model name".into()))?;
        let entry = self
            .models
            .get(name)
            .ok_or_else(|| ServerError::UnknownModel(name.to_string()))?;
        entry
            .build()
            .map_err(|e| ServerError::InvalidConfig(format!("model {name}: {e}")))
    }

    fn check_spec(spec: &AgentSpec) -> Result<(), ServerError> {
        if spec.kind != AgentKind::Llm && spec.model.is_some() {
            return Err(ServerError::InvalidConfig("a model applies only to llm seats".into()));
        }
        Ok(())
    }

    fn seats(&self, session: &Session, target: &WorldState) -> Result<Seats, ServerError> {
        let timeout = self.options.human_timeout;
        let architect: Box<dyn Architect> = match session.architect.kind {
            AgentKind::Oracle => Box::new(OracleArchitect::new(target.clone())),
            AgentKind::Human => Box::new(HumanArchitect::new(session.mailbox.clone(), timeout)),
            AgentKind::Llm => Box::new(ArchitectAgent::new(self.model(&session.architect)?, target.clone())),
        };
        let builder: Box<dyn Builder> = match session.builder.kind {
            AgentKind::Oracle => Box::new(OracleBuilder),
            AgentKind::Human => Box::new(HumanBuilder::new(session.mailbox.clone(), timeout)),
            AgentKind::Llm => Box::new(BuilderAgent::new(self.model(&session.builder)?)),
        };
        Ok(Seats { architect, builder })
    }

    /// Registers a session. Sessions without human seats start at once;
    /// the others wait for a client to [`attach`](Self::attach).
    pub fn create(&self, request: CreateSession) -> Result<Arc<Session>, ServerError> {
        let target = match (&request.target, &request.target_name) {
            (Some(target), None) => target.clone(),
            (None, Some(name)) => self.library.get(name)?.clone(),
            _ => {
                return Err(ServerError::InvalidConfig(
                    "give exactly one of target and target_name".into(),
                ))
            }
        };
        Self::check_spec(&request.architect)?;
        Self::check_spec(&request.builder)?;
        let mut config = SessionConfig::new(target.clone(), request.architect.kind, request.builder.kind);
        config.max_turns = request.max_turns.unwrap_or(DEFAULT_MAX_TURNS);
        config.confidence_gate = request.confidence_gate.unwrap_or(0.0);
        config.seed_world = request.seed_world.unwrap_or_default();
        config
            .validate()
            .map_err(|e| ServerError::InvalidConfig(e.to_string()))?;

        let id = format!("s{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = Arc::new(Session::new(
            id.clone(),
            config,
            request.architect,
            request.builder,
            SystemClock.now_ms(),
        ));
        let seats = self.seats(&session, &target)?;
        *session.seats.lock().expect("seat lock") = Some(seats);

        self.evict_finished();
        self.sessions
            .write()
            .expect("registry lock")
            .insert(id, session.clone());
        if !session.config.has_human() {
            self.start(&session);
        }
        Ok(session)
    }

    /// A client has connected; waiting sessions start running.
    pub fn attach(&self, session: &Arc<Session>) {
        if session.status() == SessionStatus::Waiting {
            self.start(session);
        }
    }

    fn start(&self, session: &Arc<Session>) {
        let Some(mut seats) = session.seats.lock().expect("seat lock").take() else {
            return;
        };
        session.advance(SessionStatus::Running);
        let session = session.clone();
        let options = self.options.clone();
        let spawned = thread::Builder::new()
            .name(format!("session-{}", session.id))
            .spawn(move || {
                let config = session.config.clone();
                let run = catch_unwind(AssertUnwindSafe(|| {
                    let mut sink = |event: &DialogueEvent| {
                        session.commit(event.clone());
                        if !options.pace.is_zero() {
                            thread::sleep(options.pace);
                        }
                    };
                    run_session_with(
                        &config,
                        &mut *seats.architect,
                        &mut *seats.builder,
                        &SystemClock,
                        &mut sink,
                    )
                }));
                let status = match run {
                    Ok(Ok(t)) if t.outcome() != SessionOutcome::Aborted => SessionStatus::Finished,
                    Ok(Ok(_)) => SessionStatus::Aborted,
                    Ok(Err(err)) => {
                        tracing::warn!(session = %session.id, %err, "session refused to start");
                        SessionStatus::Aborted
                    }
                    Err(_) => {
                        tracing::error!(session = %session.id, "session thread panicked");
                        SessionStatus::Aborted
                    }
                };
                session.mailbox.close();
                if let Some(dir) = &options.store_dir {
                    let path = dir.join(format!("{}.jsonl", session.id));
                    if let Err(err) = transcript::save(&session.transcript(), &path) {
                        tracing::error!(session = %session.id, %err, "could not store transcript");
                    }
                }
                session.advance(status);
            });
        if let Err(err) = spawned {
            tracing::error!(%err, "could not spawn session thread");
        }
    }

    fn evict_finished(&self) {
        let mut sessions = self.sessions.write().expect("registry lock");
        let finished: Vec<String> = sessions
            .values()
            .filter(|s| s.status().is_terminal())
            .map(|s| s.id.clone())
            .collect();
        let excess = finished.len().saturating_sub(self.options.retain_finished);
        for id in finished.into_iter().take(excess) {
            sessions.remove(&id);
        }
    }

    /// Looks up a live session, falling back to the transcript store.
    pub fn get(&self, id: &str) -> Result<Arc<Session>, ServerError> {
        if let Some(session) = self.sessions.read().expect("registry lock").get(id) {
            return Ok(session.clone());
        }
        let unknown = || ServerError::UnknownSession(id.to_string());
        let dir = self.options.store_dir.as_ref().ok_or_else(unknown)?;
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(unknown());
        }
        let path = dir.join(format!("{id}.jsonl"));
        if !path.is_file() {
            return Err(unknown());
        }
        let t = transcript::load(&path).map_err(|e| ServerError::Io(e.to_string()))?;
        Ok(Arc::new(Session::from_transcript(id.to_string(), t)))
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        self.sessions
            .read()
            .expect("registry lock")
            .values()
            .map(|s| s.summary())
            .collect()
    }

    pub fn post(&self, id: &str, role: Speaker, text: &str) -> Result<(), ServerError> {
        self.get(id)?.post(role, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use blockwork_core::session::replay_prefix;

    fn registry() -> Registry {
        Registry::new(&ServerConfig::default(), BTreeMap::new()).unwrap()
    }

    fn wait_terminal(session: &Session) -> SessionStatus {
        let mut rx = session.subscribe();
        loop {
            let status = session.status();
            if status.is_terminal() {
                return status;
            }
            let _ = tokio::runtime::Builder::new_current_thread()
                .build()
                .unwrap()
                .block_on(rx.changed());
        }
    }

    #[test]
    fn oracle_session_runs_to_completion() {
        let registry = registry();
        let session = registry
            .create(CreateSession::named("green-column", AgentSpec::oracle(), AgentSpec::oracle()))
            .unwrap();
        assert_eq!(wait_terminal(&session), SessionStatus::Finished);
        let t = session.transcript();
        assert_eq!(t.final_world, *registry.targets().get("green-column").unwrap());
        for i in 0..t.events.len() {
            let snap = session.world(Some(i as u64)).unwrap();
            assert_eq!(snap.world, replay_prefix(&t, i + 1).unwrap());
        }
    }

    #[test]
    fn unknown_target_and_model() {
        let registry = registry();
        let err = registry
            .create(CreateSession::named("nope", AgentSpec::oracle(), AgentSpec::oracle()))
            .err();
        assert_eq!(err, Some(ServerError::UnknownTarget("nope".into())));
        let err = registry
            .create(CreateSession::named("arch", AgentSpec::oracle(), AgentSpec::llm("missing")))
            .err();
        assert_eq!(err, Some(ServerError::UnknownModel("missing".into())));
    }

    #[test]
    fn human_session_waits_until_attached() {
        let registry = registry();
        let session = registry
            .create(CreateSession::named("lifted-red", AgentSpec::human(), AgentSpec::oracle()))
            .unwrap();
        assert_eq!(session.status(), SessionStatus::Waiting);
        assert_eq!(
            session.post(Speaker::Architect, "place a red block at -1 1 0"),
            Err(ServerError::NotYourTurn(Speaker::Architect))
        );
        registry.attach(&session);
        while session.awaiting() != Some(Speaker::Architect) {
            thread::yield_now();
        }
        assert_eq!(
            session.post(Speaker::Builder, "hi"),
            Err(ServerError::NotYourTurn(Speaker::Builder))
        );
        session.post(Speaker::Architect, "place a red block at -1 1 0").unwrap();
        assert_eq!(wait_terminal(&session), SessionStatus::Finished);
        assert_eq!(
            session.post(Speaker::Architect, "more"),
            Err(ServerError::SessionFinished)
        );
    }

    #[test]
    fn status_only_moves_forward() {
        let session = Session::new("x".into(), SessionConfig::new(WorldState::new(), AgentKind::Oracle, AgentKind::Oracle), AgentSpec::oracle(), AgentSpec::oracle(), 0);
        assert!(session.advance(SessionStatus::Running));
        assert!(!session.advance(SessionStatus::Waiting));
        assert!(session.advance(SessionStatus::Finished));
        assert!(!session.advance(SessionStatus::Aborted));
        assert_eq!(session.status(), SessionStatus::Finished);
    }

    #[test]
    fn finished_sessions_are_served_from_the_store() {
        let dir = tempfile::tempdir().unwrap();
        let config = ServerConfig {
            store_dir: Some(dir.path().to_path_buf()),
            retain_finished: 0,
            ..ServerConfig::default()
        };
        let registry = Registry::new(&config, BTreeMap::new()).unwrap();
        let first = registry
            .create(CreateSession::named("red-yellow-stack", AgentSpec::oracle(), AgentSpec::oracle()))
            .unwrap();
        wait_terminal(&first);
        let events = first.events();
        registry
            .create(CreateSession::named("arch", AgentSpec::oracle(), AgentSpec::oracle()))
            .unwrap();
        assert!(registry.list().iter().all(|s| s.id != first.id()));
        let restored = registry.get(first.id()).unwrap();
        assert_eq!(restored.status(), SessionStatus::Finished);
        assert_eq!(restored.events(), events);
        assert!(matches!(registry.get("../etc"), Err(ServerError::UnknownSession(_))));
    }
}
