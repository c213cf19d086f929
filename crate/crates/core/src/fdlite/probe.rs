//! Pressure–risk mismatch probe: annotation parsing and the detector.
//!
//! Tension and topic-risk are operator- or model-supplied annotations in
//! turn tags (`tension:8-9.5`, `risk:3.5`, …); the harness never estimates
//! risk itself. Range-valued annotations are preserved as min/max pairs and
//! compared at their midpoints.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Transcript, Turn};

use super::FdError;

/// A scalar or `min-max` range annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeValue {
    pub min: f64,
    pub max: f64,
}

impl RangeValue {
    pub fn scalar(v: f64) -> Self {
        RangeValue { min: v, max: v }
    }

    pub fn midpoint(&self) -> f64 {
        (self.min + self.max) / 2.0
    }

    /// Parse `"3.5"` or `"8-9.5"`. The separating `-` must sit between two
    /// numbers, so negative scalars are not mistaken for ranges.
    pub fn parse(text: &str) -> Result<Self, FdError> {
        let text = text.trim();
        let bad = || FdError::InvalidAnnotation {
            value: text.to_string(),
        };
        if text.is_empty() {
            return Err(bad());
        }
        let sep = text
            .char_indices()
            .skip(1)
            .find(|&(_, c)| c == '-')
            .map(|(i, _)| i);
        if let Some(sep) = sep {
            let min: f64 = text[..sep].trim().parse().map_err(|_| bad())?;
            let max: f64 = text[sep + 1..].trim().parse().map_err(|_| bad())?;
            if !min.is_finite() || !max.is_finite() || min > max {
                return Err(bad());
            }
            Ok(RangeValue { min, max })
        } else {
            let v: f64 = text.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            Ok(RangeValue::scalar(v))
        }
    }
}

impl fmt::Display for RangeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.min == self.max {
            write!(f, "{}", self.min)
        } else {
            write!(f, "{}-{}", self.min, self.max)
        }
    }
}

/// One annotated probe phase, read from a turn's tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeAnnotation {
    pub phase: String,
    pub trust: Option<RangeValue>,
    pub topic_risk: Option<RangeValue>,
    pub tension: Option<RangeValue>,
    pub markers: Option<String>,
    pub note: Option<String>,
}

impl ProbeAnnotation {
    fn from_turn(turn: &Turn) -> Result<Option<Self>, FdError> {
        let mut phase = None;
        let mut trust = None;
        let mut topic_risk = None;
        let mut tension = None;
        let mut markers = None;
        let mut note = None;

        for tag in &turn.tags {
            let Some((key, value)) = tag.split_once(':') else {
                continue;
            };
            match key {
                "phase" => phase = Some(value.to_string()),
                "trust" => trust = Some(RangeValue::parse(value)?),
                "risk" => topic_risk = Some(RangeValue::parse(value)?),
                "tension" => tension = Some(RangeValue::parse(value)?),
                "markers" => markers = Some(value.to_string()),
                "note" => note = Some(value.to_string()),
                _ => {}
            }
        }

        Ok(phase.map(|phase| ProbeAnnotation {
            phase,
            trust,
            topic_risk,
            tension,
            markers,
            note,
        }))
    }
}

/// All probe annotations in a transcript, in turn order. A turn contributes
/// a row iff it carries a `phase:` tag.
pub fn probe_annotations(
    transcript: &Transcript,
) -> Result<Vec<(usize, ProbeAnnotation)>, FdError> {
    let mut rows = Vec::new();
    for turn in &transcript.turns {
        if let Some(annotation) = ProbeAnnotation::from_turn(turn)? {
            rows.push((turn.index, annotation));
        }
    }
    Ok(rows)
}

/// Pressure–risk mismatch: self-reported tension exceeds estimated topic
/// risk by at least `threshold` (the boundary is inclusive). Tension lives
/// on a 0–10 scale, topic risk on 1–10.
pub fn detect_mismatch(tension: f64, topic_risk: f64, threshold: f64) -> Result<bool, FdError> {
    if !tension.is_finite() || !(0.0..=10.0).contains(&tension) {
        return Err(FdError::OutOfRange {
            name: "tension",
            min: 0.0,
            max: 10.0,
            value: tension,
        });
    }
    if !topic_risk.is_finite() || !(1.0..=10.0).contains(&topic_risk) {
        return Err(FdError::OutOfRange {
            name: "topic_risk",
            min: 1.0,
            max: 10.0,
            value: topic_risk,
        });
    }
    Ok(tension - topic_risk >= threshold)
}
