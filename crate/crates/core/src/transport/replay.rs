//! Replay backend: serves the model turns of recorded transcripts, in order.

use std::sync::Mutex;

use crate::model::Transcript;

use super::{ChatRequest, ChatTransport, TransportError};

struct ReplayState {
    replies: Vec<String>,
    next: usize,
}

/// Serves recorded model turns in order; operator and system turns are
/// skipped. Sequential by construction: a concurrent `send` is reported as
/// [`TransportError::ConcurrentUse`] rather than silently reordering.
pub struct ReplayTransport {
    session_id: String,
    state: Mutex<ReplayState>,
}

impl ReplayTransport {
    /// Replay a single recorded session. Fails if it has no model turns.
    pub fn new(transcript: &Transcript) -> Result<Self, TransportError> {
        let replies: Vec<String> = transcript.model_turns().map(|t| t.text.clone()).collect();
        if replies.is_empty() {
            return Err(TransportError::NoModelTurns {
                session_id: transcript.session_id.clone(),
            });
        }
        Ok(ReplayTransport {
            session_id: transcript.session_id.clone(),
            state: Mutex::new(ReplayState { replies, next: 0 }),
        })
    }

    /// Replay a whole corpus: model turns of every session, concatenated in
    /// corpus order. Used when one engine invocation spans several recorded
    /// sessions (e.g. repeated CP4.3 runs).
    pub fn from_corpus(transcripts: &[Transcript]) -> Result<Self, TransportError> {
        let replies: Vec<String> = transcripts
            .iter()
            .flat_map(|t| t.model_turns().map(|turn| turn.text.clone()))
            .collect();
        if replies.is_empty() {
            return Err(TransportError::NoModelTurns {
                session_id: format!("corpus of {} sessions", transcripts.len()),
            });
        }
        let session_id = match transcripts {
            [only] => only.session_id.clone(),
            many => format!("corpus of {} sessions", many.len()),
        };
        Ok(ReplayTransport {
            session_id,
            state: Mutex::new(ReplayState { replies, next: 0 }),
        })
    }

    /// Replies not yet served.
    pub fn remaining(&self) -> usize {
        let state = self.state.lock().expect("replay state lock");
        state.replies.len() - state.next
    }
}

/// Build a replay transport over one recorded transcript.
pub fn make_replay(transcript: &Transcript) -> Result<ReplayTransport, TransportError> {
    ReplayTransport::new(transcript)
}

impl ChatTransport for ReplayTransport {
    fn send(&self, _request: &ChatRequest) -> Result<String, TransportError> {
        let mut state = self
            .state
            .try_lock()
            .map_err(|_| TransportError::ConcurrentUse {
                transport: "replay",
            })?;
        if state.next >= state.replies.len() {
            return Err(TransportError::ReplayExhausted {
                session_id: self.session_id.clone(),
            });
        }
        let reply = state.replies[state.next].clone();
        state.next += 1;
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelTarget, Protocol, Role, Transcript};
    use crate::transport::ChatMessage;

    fn request() -> ChatRequest {
        ChatRequest::new(
            ModelTarget::new("m"),
            vec![ChatMessage::new(Role::Operator, "next")],
        )
    }

    fn recorded() -> Transcript {
        let mut t = Transcript::new("rec-1", "r", Protocol::Vc, ModelTarget::new("m"));
        t.push_turn(Role::Operator, "q1");
        t.push_turn(Role::Model, "a");
        t.push_turn(Role::Operator, "q2");
        t.push_turn(Role::Model, "b");
        t
    }

    #[test]
    fn serves_model_turns_in_order_then_exhausts() {
        let replay = make_replay(&recorded()).unwrap();
        assert_eq!(replay.send(&request()).unwrap(), "a");
        assert_eq!(replay.send(&request()).unwrap(), "b");
        let err = replay.send(&request()).unwrap_err();
        match err {
            TransportError::ReplayExhausted { session_id } => assert_eq!(session_id, "rec-1"),
            other => panic!("expected exhaustion, got {other}"),
        }
    }

    #[test]
    fn rejects_transcript_without_model_turns() {
        let mut t = Transcript::new("rec-2", "r", Protocol::Freeform, ModelTarget::new("m"));
        t.push_turn(Role::Operator, "only operators here");
        assert!(matches!(
            make_replay(&t),
            Err(TransportError::NoModelTurns { .. })
        ));
    }

    #[test]
    fn corpus_replay_concatenates_sessions() {
        let mut second = recorded();
        second.session_id = "rec-2".into();
        second.turns[1].text = "c".into();
        second.turns[3].text = "d".into();
        let replay = ReplayTransport::from_corpus(&[recorded(), second]).unwrap();
        let got: Vec<String> = (0..4).map(|_| replay.send(&request()).unwrap()).collect();
        assert_eq!(got, ["a", "b", "c", "d"]);
        assert_eq!(replay.remaining(), 0);
    }

    #[test]
    fn concurrent_send_is_detected() {
        let replay = make_replay(&recorded()).unwrap();
        let _held = replay.state.lock().unwrap();
        assert!(matches!(
            replay.send(&request()),
            Err(TransportError::ConcurrentUse {
                transport: "replay"
            })
        ));
    }
}
