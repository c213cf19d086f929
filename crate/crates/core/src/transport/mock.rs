//! Scripted mock backend for deterministic tests and dry runs.

use std::sync::Mutex;

use rand::prelude::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatTransport, TransportError};

/// One scripted rule: if the newest prompt contains `contains`, reply with
/// one of `replies` (chosen by the seeded RNG when there are several).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    #[serde(alias = "reply", deserialize_with = "one_or_many")]
    pub replies: Vec<String>,
}

impl MockRule {
    pub fn new(contains: impl Into<String>, reply: impl Into<String>) -> Self {
        MockRule {
            contains: contains.into(),
            replies: vec![reply.into()],
        }
    }
}

fn one_or_many<'de, D>(deserializer: D) -> Result<Vec<String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(deserializer)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// On-disk mock script: ordered rules plus an optional fallback reply.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_reply: Option<String>,
}

/// Deterministic scripted backend. Rules are evaluated in order against the
/// newest prompt text; the first match wins. Sequential by construction:
/// concurrent sends are reported, not interleaved.
pub struct MockTransport {
    script: MockScript,
    rng: Mutex<ChaCha8Rng>,
}

impl MockTransport {
    pub fn new(script: MockScript, seed: u64) -> Self {
        MockTransport {
            script,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn from_rules(rules: Vec<MockRule>) -> Self {
        MockTransport::new(
            MockScript {
                rules,
                default_reply: None,
            },
            0,
        )
    }

    #[cfg(test)]
    fn hold_lock(&self) -> std::sync::MutexGuard<'_, ChaCha8Rng> {
        self.rng.lock().unwrap()
    }
}

impl ChatTransport for MockTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        request.validate()?;
        let mut rng = self
            .rng
            .try_lock()
            .map_err(|_| TransportError::ConcurrentUse { transport: "mock" })?;

        let prompt = request.last_text();
        for rule in &self.script.rules {
            if prompt.contains(&rule.contains) {
                let reply = rule
                    .replies
                    .choose(&mut *rng)
                    .ok_or_else(|| TransportError::Config("mock rule has no replies".into()))?;
                return Ok(reply.clone());
            }
        }
        if let Some(default) = &self.script.default_reply {
            return Ok(default.clone());
        }
        let preview: String = prompt.chars().take(80).collect();
        Err(TransportError::NoMockRule { preview })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelTarget, Role};
    use crate::transport::ChatMessage;

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new(
            ModelTarget::new("m"),
            vec![ChatMessage::new(Role::Operator, text)],
        )
    }

    #[test]
    fn substring_rule_maps_to_canned_reply() {
        let mock = MockTransport::from_rules(vec![
            MockRule::new("PASS1", "0.35/0.35/0.35|EN"),
            MockRule::new("PASS3", "0.35/0.94/0.98|EN"),
        ]);
        assert_eq!(
            mock.send(&request("please run PASS1 now")).unwrap(),
            "0.35/0.35/0.35|EN"
        );
        assert_eq!(
            mock.send(&request("PASS3: integrate context")).unwrap(),
            "0.35/0.94/0.98|EN"
        );
    }

    #[test]
    fn unmatched_prompt_without_default_errors() {
        let mock = MockTransport::from_rules(vec![MockRule::new("alpha", "a")]);
        assert!(matches!(
            mock.send(&request("beta")),
            Err(TransportError::NoMockRule { .. })
        ));
    }

    #[test]
    fn default_reply_catches_unmatched_prompts() {
        let mock = MockTransport::new(
            MockScript {
                rules: vec![],
                default_reply: Some("fallback".into()),
            },
            0,
        );
        assert_eq!(mock.send(&request("anything")).unwrap(), "fallback");
    }

    #[test]
    fn multi_reply_rule_is_seed_deterministic() {
        let script = MockScript {
            rules: vec![MockRule {
                contains: "q".into(),
                replies: vec!["a".into(), "b".into(), "c".into()],
            }],
            default_reply: None,
        };
        let picks = |seed: u64| -> Vec<String> {
            let mock = MockTransport::new(script.clone(), seed);
            (0..6).map(|_| mock.send(&request("q")).unwrap()).collect()
        };
        assert_eq!(picks(7), picks(7));
    }

    #[test]
    fn concurrent_send_is_detected() {
        let mock = MockTransport::from_rules(vec![MockRule::new("q", "a")]);
        let _held = mock.hold_lock();
        assert!(matches!(
            mock.send(&request("q")),
            Err(TransportError::ConcurrentUse { transport: "mock" })
        ));
    }
}
