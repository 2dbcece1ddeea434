//! Builder and architect agents.
//!
//! [`BuilderAgent`] and [`ArchitectAgent`] wrap a chat model and keep one
//! conversation each. The oracle agents speak a tiny fixed grammar and are
//! used as deterministic partners and correctness references:
//!
//! ```text
//! place a <color> block at <x> <y> <z>
//! remove the block at <x> <y> <z>
//! ```

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatModel, Conversation, ConversationError, GatewayError, Role};
use crate::mailbox::Mailbox;
use crate::prompts::{render_architect_system, render_architect_turn, render_builder_system};
use crate::protocol::{extract_json, parse_response, render_response, BuilderResponse, DisregardReason, ParseOutcome, Removal};
use crate::world::{Block, Coord, WorldDiff, WorldState};

/// Fixed utterance the oracle architect gives once the target is reached.
pub const ORACLE_DONE: &str = "done";

/// Question the oracle builder asks when an instruction is outside its grammar.
pub const ORACLE_CONFUSED: &str = "I could not follow that instruction, could you rephrase it?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Architect,
    Builder,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Architect => "architect",
            Speaker::Builder => "builder",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("instruction outside the oracle grammar: `{0}`")]
    UnparsableInstruction(String),
    #[error("no {0} input within {1:?}")]
    HumanTimeout(Speaker, Duration),
    #[error("session input closed")]
    InputClosed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentReply {
    /// A builder turn: either parsed actions or a disregard reason.
    BuilderActions { raw: String, outcome: ParseOutcome },
    /// A free-form architect utterance.
    ArchitectInstruction { raw: String },
}

impl AgentReply {
    pub fn raw(&self) -> &str {
        match self {
            AgentReply::BuilderActions { raw, .. } | AgentReply::ArchitectInstruction { raw } => raw,
        }
    }

    pub fn actions(&self) -> Option<&BuilderResponse> {
        match self {
            AgentReply::BuilderActions { outcome, .. } => outcome.response(),
            AgentReply::ArchitectInstruction { .. } => None,
        }
    }

    pub fn disregarded(&self) -> Option<DisregardReason> {
        match self {
            AgentReply::BuilderActions { outcome, .. } => outcome.disregarded(),
            AgentReply::ArchitectInstruction { .. } => None,
        }
    }

    /// Architect text, or the builder's clarification question.
    pub fn utterance(&self) -> Option<&str> {
        match self {
            AgentReply::ArchitectInstruction { raw } => Some(raw),
            AgentReply::BuilderActions { outcome, .. } => {
                outcome.response().and_then(|r| r.question.as_deref())
            }
        }
    }
}

/// A participant in the builder seat.
pub trait Builder: Send {
    /// Preloads prior dialogue before the first scored instruction.
    fn prime(&mut self, _context: &[(Speaker, String)]) -> Result<(), AgentError> {
        Ok(())
    }

    fn respond(&mut self, instruction: &str, world: &WorldState) -> Result<AgentReply, AgentError>;
}

/// A participant in the architect seat.
pub trait Architect: Send {
    fn instruct(&mut self, builder_utterance: &str, world: &WorldState) -> Result<AgentReply, AgentError>;
}

impl<B: Builder + ?Sized> Builder for Box<B> {
    fn prime(&mut self, context: &[(Speaker, String)]) -> Result<(), AgentError> {
        (**self).prime(context)
    }

    fn respond(&mut self, instruction: &str, world: &WorldState) -> Result<AgentReply, AgentError> {
        (**self).respond(instruction, world)
    }
}

impl<A: Architect + ?Sized> Architect for Box<A> {
    fn instruct(&mut self, builder_utterance: &str, world: &WorldState) -> Result<AgentReply, AgentError> {
        (**self).instruct(builder_utterance, world)
    }
}

/// Appends a user message, asks the model, and appends its reply. On a
/// model failure the user message is rolled back.
fn exchange(model: &dyn ChatModel, conv: &mut Conversation, user: String) -> Result<String, AgentError> {
    conv.push_user(user)?;
    match model.complete(conv) {
        Ok(reply) => {
            conv.push_assistant(reply.clone())?;
            Ok(reply)
        }
        Err(err) => {
            conv.pop();
            Err(err.into())
        }
    }
}

pub struct BuilderAgent {
    model: Arc<dyn ChatModel>,
    conv: Conversation,
    /// Trailing architect context folded into the next instruction.
    pending_context: Option<String>,
}

impl BuilderAgent {
    pub fn new(model: Arc<dyn ChatModel>) -> Self {
        BuilderAgent {
            model,
            conv: Conversation::new(render_builder_system()),
            pending_context: None,
        }
    }

    pub fn conversation(&self) -> &Conversation {
        &self.conv
    }

    /// Loads earlier dialogue as alternating user/assistant messages.
    /// Consecutive turns by one speaker are joined with newlines; architect
    /// text left at the end is prepended to the next instruction.
    pub fn prime_context(&mut self, context: &[(Speaker, String)]) -> Result<(), AgentError> {
        let mut groups: Vec<(Role, String)> = Vec::new();
        if let Some(pending) = self.pending_context.take() {
            groups.push((Role::User, pending));
        }
        for (speaker, text) in context {
            let role = match speaker {
                Speaker::Architect => Role::User,
                Speaker::Builder => Role::Assistant,
            };
            match groups.last_mut() {
                Some((last, joined)) if *last == role => {
                    joined.push('\n');
                    joined.push_str(text);
                }
                _ => groups.push((role, text.clone())),
            }
        }
        if matches!(groups.last(), Some((Role::User, _))) {
            self.pending_context = groups.pop().map(|(_, text)| text);
        }
        for (role, text) in groups {
            if role == Role::Assistant && self.conv.expected_role() == Role::User {
                self.conv.push_user(String::new())?;
            }
            match role {
                Role::User => self.conv.push_user(text)?,
                _ => self.conv.push_assistant(text)?,
            }
        }
        Ok(())
    }

    pub fn builder_step(&mut self, instruction: &str) -> Result<AgentReply, AgentError> {
        if instruction.trim().is_empty() {
            return Err(AgentError::EmptyInstruction);
        }
        let message = match &self.pending_context {
            Some(context) => format!("{context}\n{instruction}"),
            None => instruction.to_string(),
        };
        let raw = exchange(self.model.as_ref(), &mut self.conv, message)?;
        self.pending_context = None;
        let outcome = parse_response(&raw);
        if let Some(reason) = outcome.disregarded() {
            tracing::debug!(%reason, "builder reply disregarded");
        }
        Ok(AgentReply::BuilderActions { raw, outcome })
    }
}

impl Builder for BuilderAgent {
    fn prime(&mut self, context: &[(Speaker, String)]) -> Result<(), AgentError> {
        self.prime_context(context)
    }

    fn respond(&mut self, instruction: &str, _world: &WorldState) -> Result<AgentReply, AgentError> {
        self.builder_step(instruction)
    }
}

pub struct ArchitectAgent {
    model: Arc<dyn ChatModel>,
    conv: Conversation,
    target: WorldState,
}

impl ArchitectAgent {
    pub fn new(model: Arc<dyn ChatModel>, target: WorldState) -> Self {
        ArchitectAgent {
            model,
            conv: Conversation::new(render_architect_system(&target)),
            target,
        }
    }

    pub fn conversation(&self) -> &Conversation {
        &self.conv
    }

    pub fn target(&self) -> &WorldState {
        &self.target
    }

    pub fn architect_step(&mut self, builder_utterance: &str, world: &WorldState) -> Result<AgentReply, AgentError> {
        let message = render_architect_turn(builder_utterance, world);
        let raw = exchange(self.model.as_ref(), &mut self.conv, message)?;
        Ok(AgentReply::ArchitectInstruction { raw })
    }
}

impl Architect for ArchitectAgent {
    fn instruct(&mut self, builder_utterance: &str, world: &WorldState) -> Result<AgentReply, AgentError> {
        self.architect_step(builder_utterance, world)
    }
}

fn parse_coord(tokens: &[&str], instruction: &str) -> Result<Coord, AgentError> {
    let bad = || AgentError::UnparsableInstruction(instruction.to_string());
    let [x, y, z] = tokens else {
        return Err(bad());
    };
    let n = |s: &str| s.parse::<i64>().map_err(|_| bad());
    Coord::new(n(x)?, n(y)?, n(z)?).map_err(|_| bad())
}

/// Translates one grammar instruction into the exact single action.
pub fn oracle_builder(instruction: &str, world: &WorldState) -> Result<BuilderResponse, AgentError> {
    let lowered = instruction.trim().to_ascii_lowercase();
    let tokens: Vec<&str> = lowered.split_whitespace().collect();
    match tokens.as_slice() {
        ["place", "a", color, "block", "at", rest @ ..] => {
            let color = color
                .parse()
                .map_err(|_| AgentError::UnparsableInstruction(instruction.to_string()))?;
            let pos = parse_coord(rest, instruction)?;
            Ok(BuilderResponse::new(vec![Block::new(pos, color)], vec![], 1.0, None))
        }
        ["remove", "the", "block", "at", rest @ ..] => {
            let pos = parse_coord(rest, instruction)?;
            let removal = Removal::new(pos, world.get(pos));
            Ok(BuilderResponse::new(vec![], vec![removal], 1.0, None))
        }
        _ => Err(AgentError::UnparsableInstruction(instruction.to_string())),
    }
}

pub fn place_instruction(block: Block) -> String {
    format!(
        "place a {} block at {} {} {}",
        block.color,
        block.pos.x(),
        block.pos.y(),
        block.pos.z()
    )
}

pub fn remove_instruction(pos: Coord) -> String {
    format!("remove the block at {} {} {}", pos.x(), pos.y(), pos.z())
}

/// Next grammar instruction towards `target`: the lowest missing or
/// miscolored block first, then removals of surplus blocks from the top
/// down. Returns [`ORACLE_DONE`] when the worlds match.
pub fn oracle_architect(target: &WorldState, world: &WorldState) -> String {
    let diff = WorldDiff::between(world, target);
    if let Some(block) = diff.added.iter().next() {
        return place_instruction(*block);
    }
    // Anything left in `removed` sits on a cell the target leaves empty.
    match diff.removed.iter().next_back() {
        Some(block) => remove_instruction(block.pos),
        None => ORACLE_DONE.to_string(),
    }
}

/// Grammar-only builder with no model behind it.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleBuilder;

impl Builder for OracleBuilder {
    fn respond(&mut self, instruction: &str, world: &WorldState) -> Result<AgentReply, AgentError> {
        let resp = oracle_builder(instruction, world).unwrap_or_else(|_| {
            BuilderResponse::new(vec![], vec![], 0.0, Some(ORACLE_CONFUSED.to_string()))
        });
        Ok(AgentReply::BuilderActions {
            raw: render_response(&resp),
            outcome: ParseOutcome::Ok(resp),
        })
    }
}

#[derive(Debug, Clone)]
pub struct OracleArchitect {
    target: WorldState,
}

impl OracleArchitect {
    pub fn new(target: WorldState) -> Self {
        OracleArchitect { target }
    }
}

impl Architect for OracleArchitect {
    fn instruct(&mut self, _builder_utterance: &str, world: &WorldState) -> Result<AgentReply, AgentError> {
        Ok(AgentReply::ArchitectInstruction {
            raw: oracle_architect(&self.target, world),
        })
    }
}

/// Architect seat filled by a person posting through a [`Mailbox`].
pub struct HumanArchitect {
    mailbox: Arc<Mailbox>,
    idle_timeout: Duration,
}

impl HumanArchitect {
    pub fn new(mailbox: Arc<Mailbox>, idle_timeout: Duration) -> Self {
        HumanArchitect { mailbox, idle_timeout }
    }
}

impl Architect for HumanArchitect {
    fn instruct(&mut self, _builder_utterance: &str, _world: &WorldState) -> Result<AgentReply, AgentError> {
        let raw = self.mailbox.wait_for(Speaker::Architect, self.idle_timeout)?;
        Ok(AgentReply::ArchitectInstruction { raw })
    }
}

/// Builder seat filled by a person. Posted protocol JSON is parsed like
/// model output; plain text is passed to the architect as a question.
pub struct HumanBuilder {
    mailbox: Arc<Mailbox>,
    idle_timeout: Duration,
}

impl HumanBuilder {
    pub fn new(mailbox: Arc<Mailbox>, idle_timeout: Duration) -> Self {
        HumanBuilder { mailbox, idle_timeout }
    }
}

impl Builder for HumanBuilder {
    fn respond(&mut self, _instruction: &str, _world: &WorldState) -> Result<AgentReply, AgentError> {
        let raw = self.mailbox.wait_for(Speaker::Builder, self.idle_timeout)?;
        let outcome = if extract_json(&raw).is_some() {
            parse_response(&raw)
        } else {
            ParseOutcome::Ok(BuilderResponse::new(vec![], vec![], 1.0, Some(raw.clone())))
        };
        Ok(AgentReply::BuilderActions { raw, outcome })
    }
}
