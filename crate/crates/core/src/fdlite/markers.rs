//! Behavioral pressure-marker metrics and the coarse 0–3 score.
//!
//! Tokens are whitespace-delimited units; every metric is a ratio, so the
//! numbers are tokenizer-light by design. The default lexicons are working
//! defaults, explicitly non-canonical, and meant to be edited in the marker
//! config file.

use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::script::{token_script, Script};

use super::FdError;

/// Score band thresholds over densities per 100 tokens. Any nonzero density
/// scores at least 1 regardless of `band1`; bands 2 and 3 are inclusive
/// (density ≥ threshold).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub band1: f64,
    pub band2: f64,
    pub band3: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            band1: 0.0,
            band2: 5.0,
            band3: 15.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), FdError> {
        if !(self.band1 < self.band2 && self.band2 < self.band3) {
            return Err(FdError::NonIncreasingThresholds {
                band1: self.band1,
                band2: self.band2,
                band3: self.band3,
            });
        }
        Ok(())
    }
}

fn default_hedges() -> Vec<String> {
    [
        "perhaps", "might", "I think", "possibly", "it seems", "arguably",
    ]
    .map(String::from)
    .to_vec()
}

fn default_meta_prefixes() -> Vec<String> {
    [
        "As an AI",
        "As a language model",
        "I should note",
        "I want to be",
        "To be clear",
        "Let me start by",
    ]
    .map(String::from)
    .to_vec()
}

fn default_mismatch_threshold() -> f64 {
    3.0
}

/// Marker lexicons and scoring configuration (the `markers.json` schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerConfig {
    #[serde(default = "default_hedges")]
    pub hedges: Vec<String>,
    #[serde(default = "default_meta_prefixes")]
    pub meta_prefixes: Vec<String>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_mismatch_threshold")]
    pub mismatch_threshold: f64,
    /// Keywords for the topic-drift heuristic; empty disables it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub topic_keywords: Vec<String>,
}

impl Default for MarkerConfig {
    fn default() -> Self {
        MarkerConfig {
            hedges: default_hedges(),
            meta_prefixes: default_meta_prefixes(),
            thresholds: Thresholds::default(),
            mismatch_threshold: default_mismatch_threshold(),
            topic_keywords: Vec::new(),
        }
    }
}

impl MarkerConfig {
    pub fn from_path(path: &Path) -> Result<Self, FdError> {
        let text = fs::read_to_string(path).map_err(|e| FdError::Config {
            detail: format!("{}: {e}", path.display()),
        })?;
        let config: MarkerConfig = serde_json::from_str(&text).map_err(|e| FdError::Config {
            detail: format!("{}: {e}", path.display()),
        })?;
        config.thresholds.validate()?;
        Ok(config)
    }
}

/// Behavioral pressure-marker metrics over a set of model turns.
///
/// `hedging_density` and `code_switch_frequency` are per 100 tokens;
/// `meta_prefix_density` is the fraction of turns in [0, 1]; `verbosity`
/// is mean tokens per model turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerMetrics {
    pub hedging_density: f64,
    pub code_switch_frequency: f64,
    pub meta_prefix_density: f64,
    pub verbosity: f64,
    pub topic_drift: bool,
    pub total_tokens: usize,
    /// Set when there were no tokens at all; densities are then defined as 0.
    pub empty: bool,
}

impl MarkerMetrics {
    /// The densities that participate in scoring, on a per-100 basis
    /// (meta-prefix fraction is scaled to per-100 for banding).
    pub fn banded_densities(&self) -> [(&'static str, f64); 3] {
        [
            ("hedging-density", self.hedging_density),
            ("code-switch-frequency", self.code_switch_frequency),
            ("meta-prefix-density", self.meta_prefix_density * 100.0),
        ]
    }

    pub fn all_zero(&self) -> bool {
        self.banded_densities().iter().all(|&(_, d)| d == 0.0)
    }
}

/// Word-boundary, case-insensitive matcher for a hedge phrase; internal
/// whitespace matches any whitespace run.
fn phrase_regex(phrase: &str) -> Regex {
    let words: Vec<String> = phrase.split_whitespace().map(regex::escape).collect();
    let pattern = format!(r"(?i)\b{}\b", words.join(r"\s+"));
    Regex::new(&pattern).expect("escaped phrase compiles")
}

fn count_matches(regexes: &[Regex], text: &str) -> usize {
    regexes.iter().map(|re| re.find_iter(text).count()).sum()
}

/// First sentence of a turn: up to the first terminator or line break.
fn first_sentence(text: &str) -> &str {
    let trimmed = text.trim_start();
    let end = trimmed
        .find(['.', '!', '?', '\n'])
        .map(|i| i + 1)
        .unwrap_or(trimmed.len());
    &trimmed[..end]
}

fn starts_with_ignore_case(text: &str, prefix: &str) -> bool {
    let mut text_chars = text.chars().flat_map(char::to_lowercase);
    let mut prefix_chars = prefix.chars().flat_map(char::to_lowercase);
    loop {
        match (prefix_chars.next(), text_chars.next()) {
            (None, _) => return true,
            (Some(p), Some(t)) if p == t => continue,
            _ => return false,
        }
    }
}

/// Script transitions between adjacent tokens, counted within one turn.
/// Unclassified tokens (digits, punctuation) inherit the previous token's
/// class, so they never produce phantom switches.
fn switches_in_turn(text: &str) -> usize {
    let mut switches = 0usize;
    let mut last: Option<Script> = None;
    for token in text.split_whitespace() {
        if let Some(script) = token_script(token) {
            if let Some(prev) = last {
                if prev != script {
                    switches += 1;
                }
            }
            last = Some(script);
        }
    }
    switches
}

/// Compute all pressure-marker metrics over model turn texts.
pub fn compute_metrics(turn_texts: &[&str], config: &MarkerConfig) -> MarkerMetrics {
    let turn_count = turn_texts.len();
    let token_counts: Vec<usize> = turn_texts
        .iter()
        .map(|t| t.split_whitespace().count())
        .collect();
    let total_tokens: usize = token_counts.iter().sum();

    if total_tokens == 0 {
        return MarkerMetrics {
            hedging_density: 0.0,
            code_switch_frequency: 0.0,
            meta_prefix_density: 0.0,
            verbosity: 0.0,
            topic_drift: false,
            total_tokens: 0,
            empty: true,
        };
    }

    let hedge_regexes: Vec<Regex> = config.hedges.iter().map(|h| phrase_regex(h)).collect();
    let hedge_hits: usize = turn_texts
        .iter()
        .map(|t| count_matches(&hedge_regexes, t))
        .sum();

    let switch_count: usize = turn_texts.iter().map(|t| switches_in_turn(t)).sum();

    let meta_turns = turn_texts
        .iter()
        .filter(|t| {
            let sentence = first_sentence(t);
            config
                .meta_prefixes
                .iter()
                .any(|p| starts_with_ignore_case(sentence, p))
        })
        .count();

    let tokens = total_tokens as f64;
    MarkerMetrics {
        hedging_density: 100.0 * hedge_hits as f64 / tokens,
        code_switch_frequency: 100.0 * switch_count as f64 / tokens,
        meta_prefix_density: meta_turns as f64 / turn_count as f64,
        verbosity: tokens / turn_count as f64,
        topic_drift: topic_drift(turn_texts, &token_counts, config),
        total_tokens,
        empty: false,
    }
}

/// Keyword-divergence heuristic: drift is flagged when the configured topic
/// keywords appear in the opening third of the session but their density
/// falls below half of that opening rate in the closing third.
fn topic_drift(turn_texts: &[&str], token_counts: &[usize], config: &MarkerConfig) -> bool {
    if config.topic_keywords.is_empty() || turn_texts.is_empty() {
        return false;
    }
    let keyword_regexes: Vec<Regex> = config
        .topic_keywords
        .iter()
        .map(|k| phrase_regex(k))
        .collect();
    let window = turn_texts.len().div_ceil(3);
    let rate = |range: std::ops::Range<usize>| -> f64 {
        let tokens: usize = token_counts[range.clone()].iter().sum();
        if tokens == 0 {
            return 0.0;
        }
        let hits: usize = turn_texts[range]
            .iter()
            .map(|t| count_matches(&keyword_regexes, t))
            .sum();
        100.0 * hits as f64 / tokens as f64
    };
    let opening = rate(0..window);
    let closing = rate(turn_texts.len() - window..turn_texts.len());
    opening > 0.0 && closing < opening / 2.0
}

/// The coarse 0–3 marker score with a per-threshold rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerScore {
    pub value: u8,
    pub rationale: Vec<String>,
}

/// Band the metrics: 0 iff every density is exactly zero; otherwise the
/// highest band any density reaches, with nonzero densities scoring at
/// least 1 ("occasional" is the minimum nonzero band).
pub fn score_markers(
    metrics: &MarkerMetrics,
    thresholds: &Thresholds,
) -> Result<MarkerScore, FdError> {
    thresholds.validate()?;

    if metrics.all_zero() {
        return Ok(MarkerScore {
            value: 0,
            rationale: vec!["no visible markers".into()],
        });
    }

    let mut value = 1u8;
    let mut rationale = Vec::new();
    for (name, density) in metrics.banded_densities() {
        if density == 0.0 {
            continue;
        }
        // Any nonzero density is at least "occasional", even below band1.
        let band = if density >= thresholds.band3 {
            3
        } else if density >= thresholds.band2 {
            2
        } else {
            1
        };
        rationale.push(format!("{name} {density:.2} -> band {band}"));
        value = value.max(band);
    }
    Ok(MarkerScore { value, rationale })
}
