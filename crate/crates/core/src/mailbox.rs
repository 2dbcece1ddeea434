//! Turn-gated inbox for human participants.
//!
//! The session loop calls [`Mailbox::wait_for`] when a human seat is due to
//! speak; posts from anyone else, or at any other time, are refused.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::agents::{AgentError, Speaker};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PostError {
    #[error("it is not the {0}'s turn")]
    NotYourTurn(Speaker),
    #[error("session input is closed")]
    Closed,
    #[error("message is empty")]
    Empty,
}

#[derive(Debug, Default)]
struct State {
    awaiting: Option<Speaker>,
    pending: Option<String>,
    closed: bool,
}

#[derive(Debug, Default)]
pub struct Mailbox {
    state: Mutex<State>,
    ready: Condvar,
}

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// The seat currently being waited on, if any.
    pub fn awaiting(&self) -> Option<Speaker> {
        let state = self.state.lock().expect("mailbox lock");
        state.awaiting.filter(|_| state.pending.is_none())
    }

    pub fn post(&self, from: Speaker, text: &str) -> Result<(), PostError> {
        if text.trim().is_empty() {
            return Err(PostError::Empty);
        }
        let mut state = self.state.lock().expect("mailbox lock");
        if state.closed {
            return Err(PostError::Closed);
        }
        if state.awaiting != Some(from) || state.pending.is_some() {
            return Err(PostError::NotYourTurn(from));
        }
        state.pending = Some(text.to_string());
        self.ready.notify_all();
        Ok(())
    }

    /// Blocks until `seat` posts or `timeout` elapses without input.
    pub fn wait_for(&self, seat: Speaker, timeout: Duration) -> Result<String, AgentError> {
        let deadline = Instant::now() + timeout;
        let mut state = self.state.lock().expect("mailbox lock");
        if state.closed {
            return Err(AgentError::InputClosed);
        }
        state.awaiting = Some(seat);
        state.pending = None;
        loop {
            if let Some(text) = state.pending.take() {
                state.awaiting = None;
                return Ok(text);
            }
            if state.closed {
                state.awaiting = None;
                return Err(AgentError::InputClosed);
            }
            let now = Instant::now();
            if now >= deadline {
                state.awaiting = None;
                return Err(AgentError::HumanTimeout(seat, timeout));
            }
            state = self
                .ready
                .wait_timeout(state, deadline - now)
                .expect("mailbox lock")
                .0;
        }
    }

    /// Refuses further posts and wakes any waiting seat.
    pub fn close(&self) {
        let mut state = self.state.lock().expect("mailbox lock");
        state.closed = true;
        state.awaiting = None;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().expect("mailbox lock").closed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::thread;

    fn wait_until_awaiting(mailbox: &Mailbox, seat: Speaker) {
        while mailbox.awaiting() != Some(seat) {
            thread::yield_now();
        }
    }

    #[test]
    fn post_only_when_awaited() {
        let mailbox = Arc::new(Mailbox::new());
        assert_eq!(
            mailbox.post(Speaker::Architect, "hi"),
            Err(PostError::NotYourTurn(Speaker::Architect))
        );
        let waiter = {
            let mailbox = mailbox.clone();
            thread::spawn(move || mailbox.wait_for(Speaker::Architect, Duration::from_secs(5)))
        };
        wait_until_awaiting(&mailbox, Speaker::Architect);
        assert_eq!(
            mailbox.post(Speaker::Builder, "me first"),
            Err(PostError::NotYourTurn(Speaker::Builder))
        );
        assert_eq!(mailbox.post(Speaker::Architect, "  "), Err(PostError::Empty));
        mailbox.post(Speaker::Architect, "Place a stone on the ground").unwrap();
        assert_eq!(
            mailbox.post(Speaker::Architect, "again"),
            Err(PostError::NotYourTurn(Speaker::Architect))
        );
        assert_eq!(waiter.join().unwrap().unwrap(), "Place a stone on the ground");
        assert_eq!(mailbox.awaiting(), None);
    }

    #[test]
    fn wait_times_out() {
        let mailbox = Mailbox::new();
        let err = mailbox
            .wait_for(Speaker::Builder, Duration::from_millis(20))
            .unwrap_err();
        assert!(matches!(err, AgentError::HumanTimeout(Speaker::Builder, _)));
    }

    #[test]
    fn close_wakes_waiter_and_refuses_posts() {
        let mailbox = Arc::new(Mailbox::new());
        let waiter = {
            let mailbox = mailbox.clone();
            thread::spawn(move || mailbox.wait_for(Speaker::Builder, Duration::from_secs(5)))
        };
        wait_until_awaiting(&mailbox, Speaker::Builder);
        mailbox.close();
        assert_eq!(waiter.join().unwrap(), Err(AgentError::InputClosed));
        assert_eq!(mailbox.post(Speaker::Builder, "late"), Err(PostError::Closed));
    }
}
