//! Drives one scripted session over a transport, recording every turn.
//!
//! Engines own the pass order; this module owns the bookkeeping: context
//! accumulation, turn recording, and error propagation that keeps the
//! partial transcript (failures must never lose session data).

use thiserror::Error;
use uuid::Uuid;

use crate::model::{ModelTarget, Protocol, Role, Transcript};
use crate::transport::{ChatMessage, ChatRequest, ChatTransport, TransportError};

/// A transport failure mid-session, carrying whatever was recorded so far.
/// The transcript is boxed to keep the error lean on the happy path.
#[derive(Debug, Error)]
#[error("session {} failed: {source}", partial.session_id)]
pub struct SessionError {
    pub partial: Box<Transcript>,
    #[source]
    pub source: TransportError,
}

/// An in-flight session. One `exchange` = one operator turn plus the model
/// reply, with all prior turns sent as context.
pub struct Session<'a> {
    transport: &'a dyn ChatTransport,
    transcript: Transcript,
}

impl<'a> Session<'a> {
    pub fn new(
        transport: &'a dyn ChatTransport,
        protocol: Protocol,
        model: ModelTarget,
        run_id: impl Into<String>,
    ) -> Self {
        let session_id = format!("{protocol}-{}", Uuid::new_v4());
        Session {
            transport,
            transcript: Transcript::new(session_id, run_id, protocol, model),
        }
    }

    /// Send `prompt` with accumulated context; record both sides.
    ///
    /// On failure the operator turn stays recorded, so the partial
    /// transcript shows what was asked.
    pub fn exchange(&mut self, prompt: &str) -> Result<String, TransportError> {
        self.transcript.push_turn(Role::Operator, prompt);
        let messages: Vec<ChatMessage> = self
            .transcript
            .turns
            .iter()
            .map(|t| ChatMessage::new(t.role, t.text.clone()))
            .collect();
        let request = ChatRequest::new(self.transcript.model.clone(), messages);
        let reply = self.transport.send(&request)?;
        self.transcript.push_turn(Role::Model, &reply);
        Ok(reply)
    }

    /// Run a whole prompt script, stopping at the first transport failure.
    pub fn run_script(&mut self, prompts: &[String]) -> Result<(), TransportError> {
        for prompt in prompts {
            self.exchange(prompt)?;
        }
        Ok(())
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    /// Tag the most recent turn (used for violation and warning flags).
    pub fn tag_last_turn(&mut self, tag: &str) {
        if let Some(turn) = self.transcript.turns.last_mut() {
            turn.tags.insert(tag.to_string());
        }
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    /// Wrap a transport failure together with the partial transcript.
    pub fn fail(self, source: TransportError) -> SessionError {
        SessionError {
            partial: Box::new(self.into_transcript()),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{MockRule, MockTransport};

    #[test]
    fn exchange_accumulates_context_and_records_turns() {
        let mock = MockTransport::from_rules(vec![
            MockRule::new("first", "reply-1"),
            MockRule::new("second", "reply-2"),
        ]);
        let mut session = Session::new(&mock, Protocol::Freeform, ModelTarget::new("m"), "r1");
        session.exchange("first question").unwrap();
        session.exchange("second question").unwrap();

        let t = session.into_transcript();
        assert_eq!(t.turns.len(), 4);
        assert_eq!(t.turns[0].role, Role::Operator);
        assert_eq!(t.turns[1].text, "reply-1");
        assert_eq!(t.turns[3].text, "reply-2");
        assert_eq!(t.run_id, "r1");
    }

    #[test]
    fn failure_keeps_partial_transcript() {
        let mock = MockTransport::from_rules(vec![MockRule::new("known", "ok")]);
        let mut session = Session::new(&mock, Protocol::Freeform, ModelTarget::new("m"), "r1");
        session.exchange("known prompt").unwrap();
        let err = session.exchange("unmatched").unwrap_err();
        assert!(matches!(err, TransportError::NoMockRule { .. }));

        let failed = session.fail(err);
        // Two turns from the good exchange plus the unanswered operator turn.
        assert_eq!(failed.partial.turns.len(), 3);
        assert_eq!(failed.partial.turns[2].role, Role::Operator);
    }
}
