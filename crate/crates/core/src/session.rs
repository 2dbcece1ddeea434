//! Architect ↔ builder loop.
//!
//! Each architect turn is: architect speaks, builder replies, valid actions
//! are applied (subject to the confidence gate), the goal is checked. A
//! builder question becomes the architect's next input. Everything that
//! happens is recorded as a [`DialogueEvent`], and the world changes only
//! through `world_diff` events, so a transcript can be replayed exactly.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentReply, Architect, Builder, Speaker};
use crate::protocol::{apply_response, ActionWarning, DisregardReason, ParseOutcome, Removal};
use crate::world::{Block, WorldDiff, WorldState};

pub const DEFAULT_MAX_TURNS: u32 = 30;

/// What the builder "says" to open a session, before the architect's first turn.
pub const OPENING_UTTERANCE: &str = "hello architect";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Llm,
    Oracle,
    Human,
}

fn default_max_turns() -> u32 {
    DEFAULT_MAX_TURNS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub target: WorldState,
    pub builder_kind: AgentKind,
    pub architect_kind: AgentKind,
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    /// Actions apply only when the builder's confidence is at least this.
    #[serde(default)]
    pub confidence_gate: f64,
    #[serde(default)]
    pub seed_world: WorldState,
}

impl SessionConfig {
    pub fn new(target: WorldState, architect_kind: AgentKind, builder_kind: AgentKind) -> Self {
        SessionConfig {
            target,
            builder_kind,
            architect_kind,
            max_turns: DEFAULT_MAX_TURNS,
            confidence_gate: 0.0,
            seed_world: WorldState::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.max_turns == 0 {
            return Err(SessionError::InvalidConfig("max_turns must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_gate) {
            return Err(SessionError::InvalidConfig(
                "confidence_gate must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn has_human(&self) -> bool {
        self.builder_kind == AgentKind::Human || self.architect_kind == AgentKind::Human
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Architect,
    Builder,
    System,
}

impl From<Speaker> for Actor {
    fn from(speaker: Speaker) -> Self {
        match speaker {
            Speaker::Architect => Actor::Architect,
            Speaker::Builder => Actor::Builder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    Utterance {
        text: String,
    },
    Question {
        text: String,
    },
    Actions {
        raw: String,
        add: Vec<Block>,
        remove: Vec<Removal>,
        confidence: f64,
        /// False when the confidence gate held the actions back.
        applied: bool,
    },
    Disregard {
        raw: String,
        reason: DisregardReason,
    },
    WorldDiff {
        added: Vec<Block>,
        removed: Vec<Block>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        warnings: Vec<ActionWarning>,
    },
    GoalReached {
        turns: u32,
    },
    Error {
        message: String,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::Utterance { .. } => "utterance",
            EventPayload::Question { .. } => "question",
            EventPayload::Actions { .. } => "actions",
            EventPayload::Disregard { .. } => "disregard",
            EventPayload::WorldDiff { .. } => "world_diff",
            EventPayload::GoalReached { .. } => "goal_reached",
            EventPayload::Error { .. } => "error",
        }
    }

    pub fn as_diff(&self) -> Option<WorldDiff> {
        match self {
            EventPayload::WorldDiff { added, removed, .. } => Some(WorldDiff {
                added: added.iter().copied().collect(),
                removed: removed.iter().copied().collect(),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueEvent {
    pub index: u64,
    pub timestamp_ms: u64,
    /// Architect turn the event belongs to, starting at 1.
    pub turn: u32,
    pub actor: Actor,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOutcome {
    GoalReached,
    TurnBudgetExhausted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub config: SessionConfig,
    pub events: Vec<DialogueEvent>,
    pub final_world: WorldState,
}

impl Transcript {
    pub fn outcome(&self) -> SessionOutcome {
        let mut outcome = SessionOutcome::TurnBudgetExhausted;
        for event in &self.events {
            match event.payload {
                EventPayload::GoalReached { .. } => return SessionOutcome::GoalReached,
                EventPayload::Error { .. } => outcome = SessionOutcome::Aborted,
                _ => {}
            }
        }
        outcome
    }

    /// Builder replies that carried parseable protocol text.
    pub fn valid_builder_turns(&self) -> usize {
        self.count(|p| matches!(p, EventPayload::Actions { .. }))
    }

    pub fn disregarded_builder_turns(&self) -> usize {
        self.count(|p| matches!(p, EventPayload::Disregard { .. }))
    }

    /// Disregarded replies over all builder replies; `None` before any reply.
    pub fn disregard_rate(&self) -> Option<f64> {
        let disregarded = self.disregarded_builder_turns();
        let total = disregarded + self.valid_builder_turns();
        (total > 0).then(|| disregarded as f64 / total as f64)
    }

    /// Distance to the target after each completed builder turn, in turn order.
    pub fn distance_trace(&self) -> Vec<(u32, usize)> {
        let mut world = self.config.seed_world.clone();
        let mut trace: Vec<(u32, usize)> = Vec::new();
        for event in &self.events {
            if let Some(diff) = event.payload.as_diff() {
                if let Ok(next) = world.apply_diff(&diff) {
                    world = next;
                }
            }
            let builder_done = matches!(
                event.payload,
                EventPayload::Actions { .. } | EventPayload::Disregard { .. }
            );
            if builder_done || event.payload.as_diff().is_some() {
                let distance = world.distance(&self.config.target);
                match trace.last_mut() {
                    Some((turn, d)) if *turn == event.turn => *d = distance,
                    _ => trace.push((event.turn, distance)),
                }
            }
        }
        trace
    }

    fn count(&self, pred: impl Fn(&EventPayload) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.payload)).count()
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Wall-clock milliseconds since the Unix epoch.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Counts up by one per reading, for reproducible transcripts.
#[derive(Debug, Default)]
pub struct LogicalClock(AtomicU64);

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst)
    }
}

/// Receives every event as soon as it is recorded.
pub trait EventSink {
    fn emit(&mut self, event: &DialogueEvent);
}

/// Discards events.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _event: &DialogueEvent) {}
}

impl<F: FnMut(&DialogueEvent)> EventSink for F {
    fn emit(&mut self, event: &DialogueEvent) {
        self(event)
    }
}

struct Recorder<'a> {
    events: Vec<DialogueEvent>,
    clock: &'a dyn Clock,
    sink: &'a mut dyn EventSink,
}

impl Recorder<'_> {
    fn record(&mut self, turn: u32, actor: Actor, payload: EventPayload) {
        let event = DialogueEvent {
            index: self.events.len() as u64,
            timestamp_ms: self.clock.now_ms(),
            turn,
            actor,
            payload,
        };
        self.sink.emit(&event);
        self.events.push(event);
    }
}

/// Runs a session with a logical clock and no live observer.
pub fn run_session(
    config: &SessionConfig,
    architect: &mut dyn Architect,
    builder: &mut dyn Builder,
) -> Result<Transcript, SessionError> {
    run_session_with(config, architect, builder, &LogicalClock::default(), &mut NullSink)
}

pub fn run_session_with(
    config: &SessionConfig,
    architect: &mut dyn Architect,
    builder: &mut dyn Builder,
    clock: &dyn Clock,
    sink: &mut dyn EventSink,
) -> Result<Transcript, SessionError> {
    config.validate()?;
    let mut rec = Recorder {
        events: Vec::new(),
        clock,
        sink,
    };
    let mut world = config.seed_world.clone();
    let mut builder_utterance = OPENING_UTTERANCE.to_string();

    for turn in 1..=config.max_turns {
        let instruction = match architect.instruct(&builder_utterance, &world) {
            Ok(reply) => reply.raw().to_string(),
            Err(err) => {
                rec.record(turn, Actor::Architect, EventPayload::Error { message: err.to_string() });
                break;
            }
        };
        rec.record(turn, Actor::Architect, EventPayload::Utterance { text: instruction.clone() });

        let reply = match builder.respond(&instruction, &world) {
            Ok(reply) => reply,
            Err(err) => {
                rec.record(turn, Actor::Builder, EventPayload::Error { message: err.to_string() });
                break;
            }
        };
        builder_utterance.clear();

        let AgentReply::BuilderActions { raw, outcome } = reply else {
            rec.record(
                turn,
                Actor::Builder,
                EventPayload::Error { message: "builder produced a non-builder reply".into() },
            );
            break;
        };
        match outcome {
            ParseOutcome::Disregarded(reason) => {
                rec.record(turn, Actor::Builder, EventPayload::Disregard { raw, reason });
            }
            ParseOutcome::Ok(resp) => {
                let applied = resp.confidence >= config.confidence_gate;
                rec.record(
                    turn,
                    Actor::Builder,
                    EventPayload::Actions {
                        raw,
                        add: resp.add.clone(),
                        remove: resp.remove.clone(),
                        confidence: resp.confidence,
                        applied,
                    },
                );
                if applied {
                    let (next, diff, warnings) = apply_response(&resp, &world);
                    for warning in &warnings {
                        tracing::info!(?warning, turn, "builder action warning");
                    }
                    world = next;
                    rec.record(
                        turn,
                        Actor::System,
                        EventPayload::WorldDiff {
                            added: diff.added.into_iter().collect(),
                            removed: diff.removed.into_iter().collect(),
                            warnings,
                        },
                    );
                }
                if let Some(question) = resp.question {
                    rec.record(turn, Actor::Builder, EventPayload::Question { text: question.clone() });
                    builder_utterance = question;
                }
            }
        }

        if world == config.target {
            rec.record(turn, Actor::System, EventPayload::GoalReached { turns: turn });
            break;
        }
    }

    Ok(Transcript {
        config: config.clone(),
        events: rec.events,
        final_world: world,
    })
}

/// Architect turns needed to reach the target, if it was reached.
pub fn turns_to_target(transcript: &Transcript) -> Option<u32> {
    transcript.events.iter().find_map(|e| match e.payload {
        EventPayload::GoalReached { turns } => Some(turns),
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("corrupt transcript: {0}")]
    CorruptTranscript(String),
}

fn corrupt(msg: impl Into<String>) -> ReplayError {
    ReplayError::CorruptTranscript(msg.into())
}

/// Rebuilds the final world from the seed and the recorded diffs.
///
/// Every recorded diff must match the diff its preceding actions event
/// produces on the replayed world, must apply strictly, and the result must
/// equal the recorded final world.
pub fn replay(transcript: &Transcript) -> Result<WorldState, ReplayError> {
    let world = replay_prefix(transcript, transcript.events.len())?;
    if world != transcript.final_world {
        return Err(corrupt("replayed world differs from the recorded final world"));
    }
    Ok(world)
}

/// World after the first `len` events.
pub fn replay_prefix(transcript: &Transcript, len: usize) -> Result<WorldState, ReplayError> {
    let mut world = transcript.config.seed_world.clone();
    let mut pending_actions: Option<(&[Block], &[Removal], f64)> = None;
    for (i, event) in transcript.events.iter().enumerate().take(len) {
        if event.index != i as u64 {
            return Err(corrupt(format!("event {i} carries index {}", event.index)));
        }
        match &event.payload {
            EventPayload::Actions { add, remove, confidence, applied, .. } => {
                if pending_actions.is_some() {
                    return Err(corrupt(format!("event {i}: applied actions without a diff")));
                }
                if *applied {
                    pending_actions = Some((add, remove, *confidence));
                }
            }
            EventPayload::WorldDiff { .. } => {
                let Some((add, remove, confidence)) = pending_actions.take() else {
                    return Err(corrupt(format!("event {i}: world_diff without applied actions")));
                };
                let recorded = event.payload.as_diff().expect("world_diff payload");
                let resp = crate::protocol::BuilderResponse::new(add.to_vec(), remove.to_vec(), confidence, None);
                let expected = crate::protocol::to_diff(&resp, &world);
                if recorded != expected {
                    return Err(corrupt(format!("event {i}: diff does not match its actions")));
                }
                world = world
                    .apply_diff(&recorded)
                    .map_err(|e| corrupt(format!("event {i}: {e}")))?;
            }
            _ => {
                if pending_actions.is_some() {
                    return Err(corrupt(format!("event {i}: applied actions without a diff")));
                }
            }
        }
    }
    if pending_actions.is_some() && len == transcript.events.len() {
        return Err(corrupt("transcript ends with applied actions but no diff"));
    }
    Ok(world)
}
