//! Domain types shared by every protocol engine: model targets, turns,
//! transcripts, and the exact two-decimal confidence scale.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation failures on domain types.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model name must be non-empty")]
    EmptyModelName,
    #[error("{field} must be finite and within [{min}, {max}], got {value}")]
    OutOfRange {
        field: &'static str,
        min: f64,
        max: f64,
        value: f64,
    },
    #[error("non-contiguous turn index: expected {expected}, got {got}")]
    NonContiguousTurnIndex { expected: usize, got: usize },
    #[error("session id must be non-empty")]
    EmptySessionId,
    #[error("confidence value {0} is not an exact two-decimal value in [0, 1]")]
    InvalidConfidence(f64),
}

/// A verbalized confidence proxy, stored as exact hundredths (0..=100).
///
/// The whole data domain is two-decimal, so values are scaled integers
/// rather than binary floats: equality and subtraction are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Confidence(u8);

impl Confidence {
    pub const ZERO: Confidence = Confidence(0);
    pub const ONE: Confidence = Confidence(100);

    /// Build from a hundredths count. `35` means `0.35`.
    pub fn from_hundredths(h: u8) -> Result<Self, ModelError> {
        if h > 100 {
            return Err(ModelError::InvalidConfidence(f64::from(h) / 100.0));
        }
        Ok(Confidence(h))
    }

    /// Build from a float that must already be an exact two-decimal value.
    pub fn from_f64(v: f64) -> Result<Self, ModelError> {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(ModelError::InvalidConfidence(v));
        }
        let scaled = v * 100.0;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-6 {
            return Err(ModelError::InvalidConfidence(v));
        }
        Ok(Confidence(rounded as u8))
    }

    pub fn hundredths(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 100.0
    }

    /// Exact signed difference `self - other`, in hundredths.
    pub fn delta(self, other: Confidence) -> Delta {
        Delta(i16::from(self.0) - i16::from(other.0))
    }
}

impl fmt::Display for Confidence {
    /// Canonical grammar form: `0.35`, `1.00`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl Serialize for Confidence {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Confidence {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Confidence::from_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Exact signed difference between two [`Confidence`] values, in hundredths.
///
/// Since both operands are two-decimal rationals the subtraction is exact;
/// no rounding step can change the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Delta(i16);

impl Delta {
    pub fn hundredths(self) -> i16 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 100.0
    }
}

impl fmt::Display for Delta {
    /// Signed two-decimal form: `+0.04`, `-0.04`, `0.00`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let abs = self.0.unsigned_abs();
        let sign = match self.0 {
            0 => "",
            n if n > 0 => "+",
            _ => "-",
        };
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Serialize for Delta {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Delta {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        let scaled = v * 100.0;
        let rounded = scaled.round();
        if !v.is_finite() || (scaled - rounded).abs() > 1e-6 || rounded.abs() > 200.0 {
            return Err(serde::de::Error::custom(format!(
                "delta {v} is not an exact two-decimal value in [-2, 2]"
            )));
        }
        Ok(Delta(rounded as i16))
    }
}

/// Language mode of a calibration session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LanguageMode {
    RU,
    EN,
    MIX,
}

impl fmt::Display for LanguageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LanguageMode::RU => "RU",
            LanguageMode::EN => "EN",
            LanguageMode::MIX => "MIX",
        };
        f.write_str(s)
    }
}

impl FromStr for LanguageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "RU" => Ok(LanguageMode::RU),
            "EN" => Ok(LanguageMode::EN),
            "MIX" => Ok(LanguageMode::MIX),
            other => Err(format!("unknown language mode: {other}")),
        }
    }
}

/// Who produced a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Operator,
    Model,
    System,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Operator => "operator",
            Role::Model => "model",
            Role::System => "system",
        };
        f.write_str(s)
    }
}

/// Which protocol a session ran under. Recorded in the session header so
/// analyzers can dispatch without heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Vc,
    VcAblationA,
    VcAblationB,
    Fdlite,
    Cp43,
    Probe,
    Freeform,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Protocol::Vc => "vc",
            Protocol::VcAblationA => "vc-ablation-a",
            Protocol::VcAblationB => "vc-ablation-b",
            Protocol::Fdlite => "fdlite",
            Protocol::Cp43 => "cp43",
            Protocol::Probe => "probe",
            Protocol::Freeform => "freeform",
        };
        f.write_str(s)
    }
}

fn default_temperature() -> f64 {
    1.0
}

fn default_top_p() -> f64 {
    1.0
}

/// A model under test. `endpoint_id` is an opaque reference into transport
/// configuration; the harness itself never interprets it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTarget {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_id: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_params: BTreeMap<String, String>,
}

impl ModelTarget {
    /// A target with the study defaults: temperature 1.0, top-p 1.0.
    pub fn new(name: impl Into<String>) -> Self {
        ModelTarget {
            name: name.into(),
            endpoint_id: None,
            temperature: 1.0,
            top_p: 1.0,
            extra_params: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.name.is_empty() {
            return Err(ModelError::EmptyModelName);
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(ModelError::OutOfRange {
                field: "temperature",
                min: 0.0,
                max: 2.0,
                value: self.temperature,
            });
        }
        if !self.top_p.is_finite() || !(0.0..=1.0).contains(&self.top_p) {
            return Err(ModelError::OutOfRange {
                field: "top_p",
                min: 0.0,
                max: 1.0,
                value: self.top_p,
            });
        }
        Ok(())
    }
}

/// One utterance in a session.
///
/// Role alternation is deliberately not required: multi-pass protocols may
/// send consecutive operator turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl Turn {
    pub fn new(index: usize, role: Role, text: impl Into<String>) -> Self {
        Turn {
            index,
            role,
            text: text.into(),
            timestamp: None,
            tags: BTreeSet::new(),
        }
    }
}

/// Ordered record of one session: the unit of replay and analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub run_id: String,
    pub protocol: Protocol,
    pub model: ModelTarget,
    pub turns: Vec<Turn>,
}

impl Transcript {
    pub fn new(
        session_id: impl Into<String>,
        run_id: impl Into<String>,
        protocol: Protocol,
        model: ModelTarget,
    ) -> Self {
        Transcript {
            session_id: session_id.into(),
            run_id: run_id.into(),
            protocol,
            model,
            turns: Vec::new(),
        }
    }

    /// Append a turn with the next contiguous index.
    pub fn push_turn(&mut self, role: Role, text: impl Into<String>) -> &mut Turn {
        let index = self.turns.len();
        self.turns.push(Turn::new(index, role, text));
        self.turns.last_mut().expect("turn just pushed")
    }

    /// Model turns in session order.
    pub fn model_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.role == Role::Model)
    }

    pub fn operator_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.role == Role::Operator)
    }

    /// Checks the per-transcript invariants: non-empty session id, valid
    /// model target, and turn indexes contiguous from 0.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.session_id.is_empty() {
            return Err(ModelError::EmptySessionId);
        }
        self.model.validate()?;
        for (expected, turn) in self.turns.iter().enumerate() {
            if turn.index != expected {
                return Err(ModelError::NonContiguousTurnIndex {
                    expected,
                    got: turn.index,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confidence_formats_two_decimals() {
        assert_eq!(Confidence::from_hundredths(35).unwrap().to_string(), "0.35");
        assert_eq!(Confidence::from_hundredths(5).unwrap().to_string(), "0.05");
        assert_eq!(Confidence::ONE.to_string(), "1.00");
        assert_eq!(Confidence::ZERO.to_string(), "0.00");
    }

    #[test]
    fn confidence_rejects_non_two_decimal_floats() {
        assert!(Confidence::from_f64(0.355).is_err());
        assert!(Confidence::from_f64(1.01).is_err());
        assert!(Confidence::from_f64(-0.01).is_err());
        assert!(Confidence::from_f64(f64::NAN).is_err());
        assert_eq!(Confidence::from_f64(0.35).unwrap().hundredths(), 35);
    }

    #[test]
    fn delta_display_is_signed() {
        let a = Confidence::from_hundredths(93).unwrap();
        let b = Confidence::from_hundredths(89).unwrap();
        assert_eq!(a.delta(b).to_string(), "+0.04");
        assert_eq!(b.delta(a).to_string(), "-0.04");
        assert_eq!(a.delta(a).to_string(), "0.00");
    }

    #[test]
    fn model_target_validation() {
        let mut target = ModelTarget::new("Claude Haiku 4.5");
        target.validate().unwrap();

        target.temperature = 2.5;
        assert!(target.validate().is_err());

        target.temperature = 1.0;
        target.top_p = f64::INFINITY;
        assert!(target.validate().is_err());

        assert!(ModelTarget::new("").validate().is_err());
    }

    #[test]
    fn transcript_detects_non_contiguous_indexes() {
        let mut t = Transcript::new("s1", "r1", Protocol::Vc, ModelTarget::new("m"));
        t.push_turn(Role::Operator, "a");
        t.push_turn(Role::Model, "b");
        t.validate().unwrap();

        t.turns[1].index = 2;
        let err = t.validate().unwrap_err();
        assert!(err.to_string().contains("non-contiguous turn index"));
    }
}
