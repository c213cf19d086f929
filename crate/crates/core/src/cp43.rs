//! CP4.3 governance stress test: rank invariance against a fixed expected
//! order, strict allocation monotonicity (M6), exact-100 budget, and
//! cross-run stability (Kendall's τ, per-label allocation drift).
//!
//! τ is the true pair-counting statistic over all label pairs, not the
//! {1.0, 0.0} shortcut some checkers use; when the rank matches exactly it
//! still equals 1.0, so the shortcut agrees wherever it is defined.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::model::{ModelTarget, Protocol, Transcript};
use crate::prompts::Cp43PromptSet;
use crate::session::Session;
use crate::transport::{ChatTransport, TransportError};
use crate::vc::TAG_PROTOCOL_VIOLATION;

/// The six opaque allocation targets. What they denote is outside the
/// protocol; they are labels and nothing more.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    X1,
    X2,
    X3,
    X4,
    X5,
    X6,
}

impl Label {
    pub const ALL: [Label; 6] = [
        Label::X1,
        Label::X2,
        Label::X3,
        Label::X4,
        Label::X5,
        Label::X6,
    ];
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::X1 => "X1",
            Label::X2 => "X2",
            Label::X3 => "X3",
            Label::X4 => "X4",
            Label::X5 => "X5",
            Label::X6 => "X6",
        };
        f.write_str(s)
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "X1" => Ok(Label::X1),
            "X2" => Ok(Label::X2),
            "X3" => Ok(Label::X3),
            "X4" => Ok(Label::X4),
            "X5" => Ok(Label::X5),
            "X6" => Ok(Label::X6),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// The invariant rank order the protocol checks against.
pub const EXPECTED_RANK: [Label; 6] = [
    Label::X5,
    Label::X1,
    Label::X4,
    Label::X2,
    Label::X6,
    Label::X3,
];

#[derive(Debug, Error)]
pub enum Cp43Error {
    #[error("missing {0} section in response")]
    MissingSection(&'static str),
    #[error("duplicate label {label} at byte {offset}")]
    DuplicateLabel { label: Label, offset: usize },
    #[error("missing label {label} in {section} section")]
    MissingLabel { label: Label, section: &'static str },
    #[error("expected {expected} at byte {offset}, found {found:?}")]
    UnexpectedToken {
        expected: &'static str,
        offset: usize,
        found: String,
    },
    #[error("non-integer allocation {token:?} for {label} at byte {offset}")]
    NonIntegerAllocation {
        label: Label,
        token: String,
        offset: usize,
    },
    #[error("negative allocation {value} for {label}")]
    NegativeAllocation { label: Label, value: i64 },
    #[error("rankings must be permutations of the same label set")]
    LabelSetMismatch,
    #[error("kendall tau requires at least two elements")]
    InsufficientLength,
    #[error("at least one run is required")]
    NoRuns,
    #[error("transcript {session_id} has no model turns")]
    NoModelTurns { session_id: String },
}

/// One run's parsed answer: a strict rank order plus an allocation for
/// every label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cp43Run {
    pub run_index: usize,
    pub rank: Vec<Label>,
    pub alloc: BTreeMap<Label, u32>,
}

impl Cp43Run {
    pub fn new(
        run_index: usize,
        rank: Vec<Label>,
        alloc: BTreeMap<Label, u32>,
    ) -> Result<Self, Cp43Error> {
        let run = Cp43Run {
            run_index,
            rank,
            alloc,
        };
        run.validate()?;
        Ok(run)
    }

    /// Rank is a true permutation and the allocation covers all six labels.
    pub fn validate(&self) -> Result<(), Cp43Error> {
        let mut seen = HashSet::new();
        for &label in &self.rank {
            if !seen.insert(label) {
                return Err(Cp43Error::DuplicateLabel { label, offset: 0 });
            }
        }
        for label in Label::ALL {
            if !seen.contains(&label) {
                return Err(Cp43Error::MissingLabel {
                    label,
                    section: "RANK",
                });
            }
            if !self.alloc.contains_key(&label) {
                return Err(Cp43Error::MissingLabel {
                    label,
                    section: "ALLOC",
                });
            }
        }
        Ok(())
    }

    /// Allocations read in the given label order.
    pub fn allocations_in(&self, order: &[Label]) -> Vec<u32> {
        order.iter().map(|l| self.alloc[l]).collect()
    }
}

/// Cursor over the response text, tracking byte offsets for errors.
struct Scanner<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str, pos: usize) -> Self {
        Scanner { text, pos }
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek_char(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek_char() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn label(&mut self) -> Result<Label, Cp43Error> {
        self.skip_ws();
        let rest = &self.text[self.pos..];
        let token: String = rest
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect();
        match token.parse::<Label>() {
            Ok(label) => {
                self.pos += token.len();
                Ok(label)
            }
            Err(_) => Err(Cp43Error::UnexpectedToken {
                expected: "label X1..X6",
                offset: self.pos,
                found: rest.chars().take(12).collect(),
            }),
        }
    }

    fn integer(&mut self, label: Label) -> Result<u32, Cp43Error> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.text[start..];
        let token: String = rest
            .chars()
            .take_while(|&c| c.is_ascii_digit() || c == '-' || c == '.')
            .collect();
        let value: i64 = token.parse().map_err(|_| Cp43Error::NonIntegerAllocation {
            label,
            token: if token.is_empty() {
                rest.chars().take(12).collect()
            } else {
                token.clone()
            },
            offset: start,
        })?;
        self.pos += token.len();
        if value < 0 {
            return Err(Cp43Error::NegativeAllocation { label, value });
        }
        Ok(value as u32)
    }
}

/// Parse a `RANK: Xa>Xb>…; ALLOC: Xa=n, …` response. Allocation entries may
/// appear in any order; whitespace is free. The returned run has index 0;
/// callers assign the real index.
pub fn parse_cp43_response(text: &str) -> Result<Cp43Run, Cp43Error> {
    let rank_start = text
        .find("RANK:")
        .ok_or(Cp43Error::MissingSection("RANK"))?
        + "RANK:".len();
    let mut scanner = Scanner::new(text, rank_start);

    let mut rank: Vec<Label> = Vec::with_capacity(6);
    let mut seen = HashSet::new();
    loop {
        let offset = scanner.pos;
        let label = scanner.label()?;
        if !seen.insert(label) {
            return Err(Cp43Error::DuplicateLabel { label, offset });
        }
        rank.push(label);
        if rank.len() == 6 {
            break;
        }
        scanner.skip_ws();
        if !scanner.eat('>') {
            // Fewer than six labels listed.
            let missing = Label::ALL
                .into_iter()
                .find(|l| !seen.contains(l))
                .expect("fewer than six seen");
            return Err(Cp43Error::MissingLabel {
                label: missing,
                section: "RANK",
            });
        }
    }

    let alloc_start = text
        .find("ALLOC:")
        .ok_or(Cp43Error::MissingSection("ALLOC"))?
        + "ALLOC:".len();
    let mut scanner = Scanner::new(text, alloc_start);
    let mut alloc: BTreeMap<Label, u32> = BTreeMap::new();
    loop {
        let offset = scanner.pos;
        let label = scanner.label()?;
        if alloc.contains_key(&label) {
            return Err(Cp43Error::DuplicateLabel { label, offset });
        }
        scanner.skip_ws();
        if !scanner.eat('=') {
            return Err(Cp43Error::UnexpectedToken {
                expected: "'='",
                offset: scanner.pos,
                found: scanner.peek_char().map(String::from).unwrap_or_default(),
            });
        }
        let value = scanner.integer(label)?;
        alloc.insert(label, value);
        if alloc.len() == 6 {
            break;
        }
        scanner.skip_ws();
        if !scanner.eat(',') {
            let missing = Label::ALL
                .into_iter()
                .find(|l| !alloc.contains_key(l))
                .expect("fewer than six entries");
            return Err(Cp43Error::MissingLabel {
                label: missing,
                section: "ALLOC",
            });
        }
    }

    Cp43Run::new(0, rank, alloc)
}

/// Verdict on one run against the expected rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cp43Verdict {
    pub rank_ok: bool,
    pub m6_ok: bool,
    pub sum_ok: bool,
    pub tau_vs_expected: f64,
}

/// Check rank invariance, M6 strict monotonicity (allocations read in
/// expected-rank order strictly decrease), the exact-100 budget, and τ
/// against the expected rank.
pub fn check_run(run: &Cp43Run, expected_rank: &[Label; 6]) -> Cp43Verdict {
    let rank_ok = run.rank == expected_rank;
    let values = run.allocations_in(expected_rank);
    let m6_ok = values.windows(2).all(|w| w[0] > w[1]);
    let sum_ok = values.iter().map(|&v| u64::from(v)).sum::<u64>() == 100;
    let tau_vs_expected =
        kendall_tau(&run.rank, expected_rank).expect("validated permutations of the same labels");
    Cp43Verdict {
        rank_ok,
        m6_ok,
        sum_ok,
        tau_vs_expected,
    }
}

/// Kendall's τ between two rankings: (concordant − discordant) over all
/// n(n−1)/2 unordered pairs, by relative order in each ranking. Both inputs
/// must be duplicate-free rankings of the same elements, n ≥ 2.
pub fn kendall_tau<T: Eq + std::hash::Hash + Copy>(a: &[T], b: &[T]) -> Result<f64, Cp43Error> {
    if a.len() != b.len() {
        return Err(Cp43Error::LabelSetMismatch);
    }
    if a.len() < 2 {
        return Err(Cp43Error::InsufficientLength);
    }
    let pos_b: HashMap<T, usize> = b.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    if pos_b.len() != b.len() {
        return Err(Cp43Error::LabelSetMismatch);
    }
    let mut seen = HashSet::with_capacity(a.len());
    for x in a {
        if !seen.insert(*x) || !pos_b.contains_key(x) {
            return Err(Cp43Error::LabelSetMismatch);
        }
    }

    let n = a.len();
    let mut concordant: i64 = 0;
    let mut discordant: i64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if pos_b[&a[i]] < pos_b[&a[j]] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let total = (n * (n - 1) / 2) as f64;
    Ok((concordant - discordant) as f64 / total)
}

/// Cross-run stability aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStability {
    pub runs: Vec<Cp43Run>,
    /// Minimum pairwise τ across runs; 1.0 (vacuous) for a single run.
    pub pairwise_tau_min: f64,
    /// Per label, the maximum |alloc_i − alloc_j| over run pairs.
    pub max_drift_per_label: BTreeMap<Label, u32>,
    pub all_m6_pass: bool,
}

impl RankStability {
    /// Largest drift across all labels.
    pub fn max_drift(&self) -> u32 {
        self.max_drift_per_label
            .values()
            .copied()
            .max()
            .unwrap_or(0)
    }
}

/// Aggregate pairwise stability over ≥ 1 runs.
pub fn aggregate_stability(
    runs: &[Cp43Run],
    expected_rank: &[Label; 6],
) -> Result<RankStability, Cp43Error> {
    if runs.is_empty() {
        return Err(Cp43Error::NoRuns);
    }

    let mut tau_min = 1.0f64;
    for i in 0..runs.len() {
        for j in (i + 1)..runs.len() {
            let tau = kendall_tau(&runs[i].rank, &runs[j].rank)?;
            tau_min = tau_min.min(tau);
        }
    }

    // Pairwise max |difference| per label equals max − min over runs.
    let mut max_drift_per_label = BTreeMap::new();
    for label in Label::ALL {
        let values = runs.iter().map(|r| r.alloc[&label]);
        let max = values.clone().max().expect("non-empty runs");
        let min = values.min().expect("non-empty runs");
        max_drift_per_label.insert(label, max - min);
    }

    let all_m6_pass = runs.iter().all(|r| check_run(r, expected_rank).m6_ok);

    Ok(RankStability {
        runs: runs.to_vec(),
        pairwise_tau_min: tau_min,
        max_drift_per_label,
        all_m6_pass,
    })
}

/// Analysis of one recorded session: its verdict or the parse failure that
/// excluded it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub session_id: String,
    pub verdict: Option<Cp43Verdict>,
    pub parse_error: Option<String>,
}

/// Batch analysis over recorded CP4.3 sessions. Malformed runs are excluded
/// from aggregation but always counted and reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cp43Analysis {
    pub per_run: Vec<RunReport>,
    pub stability: Option<RankStability>,
    pub excluded: usize,
}

impl Cp43Analysis {
    /// The flat stability digest the CLI emits.
    pub fn summary(&self) -> Cp43Summary {
        Cp43Summary {
            tau_min: self.stability.as_ref().map(|s| s.pairwise_tau_min),
            m6_all_pass: self.stability.as_ref().map(|s| s.all_m6_pass),
            max_drift: self.stability.as_ref().map(|s| s.max_drift()),
            excluded_runs: self.excluded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cp43Summary {
    pub tau_min: Option<f64>,
    pub m6_all_pass: Option<bool>,
    pub max_drift: Option<u32>,
    pub excluded_runs: usize,
}

/// Parse the final model turn of a recorded CP4.3 session.
pub fn extract_run(transcript: &Transcript, run_index: usize) -> Result<Cp43Run, Cp43Error> {
    let final_turn = transcript
        .model_turns()
        .last()
        .ok_or_else(|| Cp43Error::NoModelTurns {
            session_id: transcript.session_id.clone(),
        })?;
    let mut run = parse_cp43_response(&final_turn.text)?;
    run.run_index = run_index;
    Ok(run)
}

/// Analyze recorded sessions: per-run verdicts, exclusions, aggregates.
pub fn analyze_cp43(transcripts: &[Transcript], expected_rank: &[Label; 6]) -> Cp43Analysis {
    let mut per_run = Vec::with_capacity(transcripts.len());
    let mut included = Vec::new();
    let mut excluded = 0usize;

    for (i, t) in transcripts.iter().enumerate() {
        match extract_run(t, i) {
            Ok(run) => {
                per_run.push(RunReport {
                    session_id: t.session_id.clone(),
                    verdict: Some(check_run(&run, expected_rank)),
                    parse_error: None,
                });
                included.push(run);
            }
            Err(e) => {
                excluded += 1;
                per_run.push(RunReport {
                    session_id: t.session_id.clone(),
                    verdict: None,
                    parse_error: Some(e.to_string()),
                });
            }
        }
    }

    let stability = if included.is_empty() {
        None
    } else {
        Some(aggregate_stability(&included, expected_rank).expect("non-empty included runs"))
    };

    Cp43Analysis {
        per_run,
        stability,
        excluded,
    }
}

#[derive(Debug, Error)]
pub enum Cp43RunError {
    #[error("repeats must be positive")]
    ZeroRepeats,
    #[error("cp43 session {} failed: {source}", partial.session_id)]
    Session {
        /// Sessions that completed before the failure; callers should still
        /// persist these.
        completed: Vec<Transcript>,
        partial: Box<Transcript>,
        #[source]
        source: TransportError,
    },
}

/// Outcome of a CP4.3 batch: every session transcript plus the analysis.
#[derive(Debug)]
pub struct Cp43Outcome {
    pub transcripts: Vec<Transcript>,
    pub analysis: Cp43Analysis,
}

/// Execute the CP4.3 prompt (with any configured pressure passes) `repeats`
/// times as independent sessions, then analyze. Parse failures mark the run
/// protocol-violating and exclude it from aggregation; they never abort the
/// batch.
pub fn run_cp43(
    transport: &dyn ChatTransport,
    prompts: &Cp43PromptSet,
    model: &ModelTarget,
    repeats: usize,
    expected_rank: &[Label; 6],
) -> Result<Cp43Outcome, Cp43RunError> {
    if repeats == 0 {
        return Err(Cp43RunError::ZeroRepeats);
    }
    let run_id = format!("cp43-{}", Uuid::new_v4());

    let mut script = vec![prompts.main_prompt.clone()];
    script.extend(prompts.pressure_prompts.iter().cloned());

    let mut transcripts = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut session = Session::new(transport, Protocol::Cp43, model.clone(), run_id.clone());
        if let Err(e) = session.run_script(&script) {
            return Err(Cp43RunError::Session {
                completed: transcripts,
                partial: Box::new(session.into_transcript()),
                source: e,
            });
        }
        if let Some(turn) = session.transcript().model_turns().last() {
            if parse_cp43_response(&turn.text).is_err() {
                session.tag_last_turn(TAG_PROTOCOL_VIOLATION);
            }
        }
        transcripts.push(session.into_transcript());
    }

    let analysis = analyze_cp43(&transcripts, expected_rank);
    Ok(Cp43Outcome {
        transcripts,
        analysis,
    })
}
