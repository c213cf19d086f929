//! Protocol harness for behavioral chat-session audits.
//!
//! Three protocol engines — Victor Calibration ([`vc`]), the FD-Lite
//! behavioral audit ([`fdlite`]), and the CP4.3 governance stress test
//! ([`cp43`]) — run against live, scripted, or replayed chat sessions
//! ([`transport`]), record everything as JSONL transcripts ([`corpus`]),
//! and aggregate outcomes into study reports ([`report`]).

pub mod corpus;
pub mod cp43;
pub mod fdlite;
pub mod model;
pub mod prompts;
pub mod report;
pub mod script;
pub mod session;
pub mod transport;
pub mod vc;

pub use corpus::{load_corpus, save_corpus, CorpusError};
pub use model::{
    Confidence, Delta, LanguageMode, ModelError, ModelTarget, Protocol, Role, Transcript, Turn,
};
pub use session::SessionError;
pub use transport::{ChatRequest, ChatTransport, TransportConfig, TransportError};
