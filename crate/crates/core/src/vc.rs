//! Victor Calibration engine: the three-pass elicitation, the constrained
//! output grammar, and the single-pass ablation variants.
//!
//! Values are exact two-decimal rationals ([`Confidence`]), so monotonicity
//! and deltas come from integer comparisons, never from float rounding.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Confidence, Delta, LanguageMode, ModelTarget, Protocol, Transcript};
use crate::prompts::VcPromptSet;
use crate::script::observed_language_mode;
use crate::session::{Session, SessionError};
use crate::transport::ChatTransport;

/// Tag set on a final turn whose text broke the constrained grammar.
pub const TAG_PROTOCOL_VIOLATION: &str = "protocol-violation";
/// Tag for trajectories containing the permissive `1.00` extension.
pub const TAG_UNIT_VALUE: &str = "warn:unit-value";
/// Tag for sessions whose declared language mode disagrees with the
/// scripts observed in the reply bodies. Reported, never resolved.
pub const TAG_MODE_DISCREPANCY: &str = "mode-discrepancy";

/// The constrained output grammar: three two-decimal values and a mode.
/// `1.00` is accepted as a permissive extension of the `0.xx` literal.
static TRIPLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(0\.[0-9]{2}|1\.00)/(0\.[0-9]{2}|1\.00)/(0\.[0-9]{2}|1\.00)\|(RU|EN|MIX)")
        .expect("grammar regex compiles")
});

/// Maximal decimal literals, used for the single-value ablation grammar.
static DECIMAL_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[0-9]+\.[0-9]+").expect("token regex compiles"));

#[derive(Debug, Error)]
pub enum VcParseError {
    #[error("no constrained output found in reply: {scanned:?}")]
    NoMatch { scanned: String },
    #[error("ambiguous output: {count} constrained matches, the protocol demands exactly one")]
    Ambiguous { count: usize },
}

/// A parsed (T0, T1, T2, mode) trajectory.
///
/// `monotone` is the conjunction of the strict pairwise comparisons
/// T0 < T1 < T2; ties count as violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VcTrajectory {
    pub t0: Confidence,
    pub t1: Confidence,
    pub t2: Confidence,
    pub mode: LanguageMode,
    pub monotone: bool,
}

impl VcTrajectory {
    pub fn new(t0: Confidence, t1: Confidence, t2: Confidence, mode: LanguageMode) -> Self {
        VcTrajectory {
            t0,
            t1,
            t2,
            mode,
            monotone: t0 < t1 && t1 < t2,
        }
    }

    /// True when any value uses the permissive `1.00` extension.
    pub fn has_unit_value(&self) -> bool {
        [self.t0, self.t1, self.t2].contains(&Confidence::ONE)
    }

    pub fn values(&self) -> [Confidence; 3] {
        [self.t0, self.t1, self.t2]
    }
}

impl fmt::Display for VcTrajectory {
    /// Canonical grammar form, e.g. `0.35/0.94/0.98|EN`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}|{}", self.t0, self.t1, self.t2, self.mode)
    }
}

/// Extract the one constrained triple from a reply; surrounding prose is
/// ignored. Zero matches and multiple matches are both errors.
pub fn parse_vc_output(text: &str) -> Result<VcTrajectory, VcParseError> {
    let mut captures = TRIPLE.captures_iter(text);
    let first = captures.next().ok_or_else(|| VcParseError::NoMatch {
        scanned: text.to_string(),
    })?;
    let extra = captures.count();
    if extra > 0 {
        return Err(VcParseError::Ambiguous { count: extra + 1 });
    }

    let value = |i: usize| {
        Confidence::from_f64(
            first[i]
                .parse::<f64>()
                .expect("grammar guarantees a decimal"),
        )
        .expect("grammar guarantees two decimals in range")
    };
    let mode: LanguageMode = first[4].parse().expect("grammar guarantees the mode");
    Ok(VcTrajectory::new(value(1), value(2), value(3), mode))
}

/// The matched substring for the one grammar occurrence in `text`, if any.
/// Useful for the format/parse round-trip law.
pub fn matched_triple(text: &str) -> Option<&str> {
    let mut it = TRIPLE.find_iter(text);
    let m = it.next()?;
    if it.next().is_some() {
        return None;
    }
    Some(m.as_str())
}

/// Parse the single T* value of an ablation reply: exactly one maximal
/// decimal literal of the form `0.xx` (or `1.00`) must appear.
pub fn parse_single_confidence(text: &str) -> Result<Confidence, VcParseError> {
    let mut found: Option<Confidence> = None;
    let mut count = 0usize;
    for m in DECIMAL_TOKEN.find_iter(text) {
        let token = m.as_str();
        let valid = matches!(token.as_bytes(), [b'0', b'.', a, b] if a.is_ascii_digit() && b.is_ascii_digit())
            || token == "1.00";
        if valid {
            count += 1;
            found = Some(
                Confidence::from_f64(token.parse::<f64>().expect("decimal literal"))
                    .expect("two-decimal literal in range"),
            );
        }
    }
    match count {
        0 => Err(VcParseError::NoMatch {
            scanned: text.to_string(),
        }),
        1 => Ok(found.expect("count == 1")),
        n => Err(VcParseError::Ambiguous { count: n }),
    }
}

/// How a VC session ended: a parsed trajectory, or a grammar violation
/// (itself a finding, not a crash).
#[derive(Debug, Clone, PartialEq)]
pub enum VcOutcome {
    Calibrated(VcTrajectory),
    Violation { detail: String },
}

impl VcOutcome {
    pub fn trajectory(&self) -> Option<&VcTrajectory> {
        match self {
            VcOutcome::Calibrated(t) => Some(t),
            VcOutcome::Violation { .. } => None,
        }
    }
}

#[derive(Debug)]
pub struct VcRun {
    pub transcript: Transcript,
    pub outcome: VcOutcome,
}

/// Run the three-pass protocol: framing + pass 1, then pass 2, then pass 3,
/// each with accumulated context. The final reply is parsed against the
/// constrained grammar.
pub fn run_vc(
    transport: &dyn ChatTransport,
    prompts: &VcPromptSet,
    model: &ModelTarget,
) -> Result<VcRun, SessionError> {
    let mut session = Session::new(transport, Protocol::Vc, model.clone(), new_run_id());

    let script = [
        prompts.opening_prompt(),
        prompts.pass2.clone(),
        prompts.pass3.clone(),
    ];
    for prompt in &script {
        if let Err(e) = session.exchange(prompt) {
            return Err(session.fail(e));
        }
    }

    let final_text = session
        .transcript()
        .model_turns()
        .last()
        .expect("three exchanges recorded")
        .text
        .clone();

    let outcome = match parse_vc_output(&final_text) {
        Ok(trajectory) => {
            if trajectory.has_unit_value() {
                session.tag_last_turn(TAG_UNIT_VALUE);
            }
            tag_mode_discrepancy(&mut session, &trajectory);
            VcOutcome::Calibrated(trajectory)
        }
        Err(e) => {
            session.tag_last_turn(TAG_PROTOCOL_VIOLATION);
            VcOutcome::Violation {
                detail: e.to_string(),
            }
        }
    };

    Ok(VcRun {
        transcript: session.into_transcript(),
        outcome,
    })
}

/// Compare the declared mode against the scripts observed in the model's
/// reply bodies (with the grammar line itself stripped, since `RU`/`EN`
/// suffixes are Latin either way). Disagreement is tagged, not resolved.
fn tag_mode_discrepancy(session: &mut Session<'_>, trajectory: &VcTrajectory) {
    let bodies: Vec<String> = session
        .transcript()
        .model_turns()
        .map(|t| match matched_triple(&t.text) {
            Some(m) => t.text.replace(m, ""),
            None => t.text.clone(),
        })
        .collect();
    if let Some(observed) = observed_language_mode(bodies.iter().map(|s| s.as_str())) {
        if observed != trajectory.mode {
            session.tag_last_turn(TAG_MODE_DISCREPANCY);
        }
    }
}

/// Single-pass ablation variants: A is one deep pass, B is one prompt
/// internally structured into three phases (compute-matched).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    A,
    B,
}

impl AblationVariant {
    pub fn protocol(self) -> Protocol {
        match self {
            AblationVariant::A => Protocol::VcAblationA,
            AblationVariant::B => Protocol::VcAblationB,
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationVariant::A => f.write_str("A"),
            AblationVariant::B => f.write_str("B"),
        }
    }
}

/// One ablation measurement. The optional deltas are filled when both
/// operands exist: `delta_vs_other_variant` is self − other, and
/// `delta_vs_multipass` is multipass T2 − self.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub variant: AblationVariant,
    pub t_star: Confidence,
    pub delta_vs_other_variant: Option<Delta>,
    pub delta_vs_multipass: Option<Delta>,
}

impl AblationResult {
    pub fn new(variant: AblationVariant, t_star: Confidence) -> Self {
        AblationResult {
            variant,
            t_star,
            delta_vs_other_variant: None,
            delta_vs_multipass: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AblationOutcome {
    Measured(AblationResult),
    Violation { detail: String },
}

impl AblationOutcome {
    pub fn result(&self) -> Option<&AblationResult> {
        match self {
            AblationOutcome::Measured(r) => Some(r),
            AblationOutcome::Violation { .. } => None,
        }
    }
}

#[derive(Debug)]
pub struct AblationRun {
    pub transcript: Transcript,
    pub outcome: AblationOutcome,
}

/// Run a single-pass ablation session and parse its one T* value.
pub fn run_ablation(
    transport: &dyn ChatTransport,
    prompts: &VcPromptSet,
    model: &ModelTarget,
    variant: AblationVariant,
) -> Result<AblationRun, SessionError> {
    let mut session = Session::new(transport, variant.protocol(), model.clone(), new_run_id());

    let body = match variant {
        AblationVariant::A => &prompts.single_pass_a,
        AblationVariant::B => &prompts.single_pass_b,
    };
    let prompt = match &prompts.framing {
        Some(framing) => format!("{framing}\n\n{body}"),
        None => body.clone(),
    };
    let reply = match session.exchange(&prompt) {
        Ok(reply) => reply,
        Err(e) => return Err(session.fail(e)),
    };

    let outcome = match parse_single_confidence(&reply) {
        Ok(t_star) => {
            if t_star == Confidence::ONE {
                session.tag_last_turn(TAG_UNIT_VALUE);
            }
            AblationOutcome::Measured(AblationResult::new(variant, t_star))
        }
        Err(e) => {
            session.tag_last_turn(TAG_PROTOCOL_VIOLATION);
            AblationOutcome::Violation {
                detail: e.to_string(),
            }
        }
    };

    Ok(AblationRun {
        transcript: session.into_transcript(),
        outcome,
    })
}

/// The two documented ablation comparisons. Both are exact hundredth
/// subtractions; "round half away from zero" can never fire on exact
/// two-decimal operands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationDeltas {
    pub b_minus_a: Delta,
    pub multipass_minus_b: Delta,
}

/// Deltas between variant A, variant B, and the multi-pass trajectory.
/// Callers must pass results in variant order (A then B).
pub fn ablation_deltas(
    a: &AblationResult,
    b: &AblationResult,
    multipass: &VcTrajectory,
) -> AblationDeltas {
    assert_eq!(
        a.variant,
        AblationVariant::A,
        "first argument must be variant A"
    );
    assert_eq!(
        b.variant,
        AblationVariant::B,
        "second argument must be variant B"
    );
    AblationDeltas {
        b_minus_a: b.t_star.delta(a.t_star),
        multipass_minus_b: multipass.t2.delta(b.t_star),
    }
}

fn new_run_id() -> String {
    format!("run-{}", uuid::Uuid::new_v4())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Role;
    use crate::transport::{MockRule, MockTransport};

    fn conf(h: u8) -> Confidence {
        Confidence::from_hundredths(h).unwrap()
    }

    #[test]
    fn parses_bare_triple() {
        let t = parse_vc_output("0.35/0.94/0.98|EN").unwrap();
        assert_eq!(t.values(), [conf(35), conf(94), conf(98)]);
        assert_eq!(t.mode, LanguageMode::EN);
        assert!(t.monotone);
    }

    #[test]
    fn reversed_triple_is_not_monotone() {
        let t = parse_vc_output("0.95/0.85/0.75|EN").unwrap();
        assert!(!t.monotone);
    }

    #[test]
    fn ties_violate_strict_monotonicity() {
        let t = parse_vc_output("0.85/0.85/0.95|RU").unwrap();
        assert!(!t.monotone);
    }

    #[test]
    fn two_values_do_not_match_grammar() {
        assert!(matches!(
            parse_vc_output("0.35/0.94|EN"),
            Err(VcParseError::NoMatch { .. })
        ));
    }

    #[test]
    fn prose_around_the_triple_is_ignored() {
        let t = parse_vc_output("Result: 0.75/0.85/0.95|MIX — done.").unwrap();
        assert_eq!(t.values(), [conf(75), conf(85), conf(95)]);
        assert_eq!(t.mode, LanguageMode::MIX);
        assert!(t.monotone);
    }

    #[test]
    fn multiple_triples_are_ambiguous() {
        let text = "0.35/0.94/0.98|EN then again 0.35/0.94/0.98|EN";
        assert!(matches!(
            parse_vc_output(text),
            Err(VcParseError::Ambiguous { count: 2 })
        ));
    }

    #[test]
    fn unit_values_accepted_and_flagged() {
        let t = parse_vc_output("0.90/0.95/1.00|EN").unwrap();
        assert!(t.has_unit_value());
        assert!(t.monotone);
        // Three digits after the point never match the two-decimal grammar.
        assert!(parse_vc_output("0.901/0.950/1.000|EN").is_err());
    }

    #[test]
    fn format_reproduces_matched_substring() {
        let text = "Answer: 0.05/0.50/1.00|MIX ok";
        let matched = matched_triple(text).unwrap();
        let parsed = parse_vc_output(text).unwrap();
        assert_eq!(parsed.to_string(), matched);
    }

    #[test]
    fn single_value_grammar() {
        assert_eq!(
            parse_single_confidence("T* came to 0.89 overall.").unwrap(),
            conf(89)
        );
        assert_eq!(parse_single_confidence("1.00").unwrap(), conf(100));
        // Maximal-token rule: 0.123 is one three-decimal token, not 0.12.
        assert!(matches!(
            parse_single_confidence("value 0.123"),
            Err(VcParseError::NoMatch { .. })
        ));
        assert!(matches!(
            parse_single_confidence("either 0.85 or 0.89"),
            Err(VcParseError::Ambiguous { count: 2 })
        ));
        assert!(parse_single_confidence("no numbers here").is_err());
        // Plain integers (phase labels etc.) are not decimal tokens.
        assert_eq!(
            parse_single_confidence("phase 1, phase 2, phase 3: 0.93").unwrap(),
            conf(93)
        );
    }

    fn vc_mock() -> MockTransport {
        MockTransport::from_rules(vec![
            MockRule::new("First pass", "Initial read: T0 sits near 0.35 for now."),
            MockRule::new("Second pass", "Deeper analysis raises it: T1 = 0.94."),
            MockRule::new("Third pass", "0.35/0.94/0.98|EN"),
        ])
    }

    #[test]
    fn run_vc_records_three_exchanges_and_parses_final() {
        let mock = vc_mock();
        let run = run_vc(&mock, &VcPromptSet::default(), &ModelTarget::new("m")).unwrap();
        assert_eq!(run.transcript.turns.len(), 6);
        assert_eq!(run.transcript.protocol, Protocol::Vc);
        let trajectory = run.outcome.trajectory().expect("calibrated");
        assert_eq!(trajectory.values(), [conf(35), conf(94), conf(98)]);
        assert!(trajectory.monotone);
    }

    #[test]
    fn garbage_final_reply_is_violation_not_crash() {
        let mock = MockTransport::from_rules(vec![
            MockRule::new("First pass", "fine"),
            MockRule::new("Second pass", "fine"),
            MockRule::new("Third pass", "I would rather not commit to numbers."),
        ]);
        let run = run_vc(&mock, &VcPromptSet::default(), &ModelTarget::new("m")).unwrap();
        assert!(matches!(run.outcome, VcOutcome::Violation { .. }));
        assert_eq!(run.transcript.turns.len(), 6, "transcript retained");
        assert!(run.transcript.turns[5]
            .tags
            .contains(TAG_PROTOCOL_VIOLATION));
    }

    #[test]
    fn transport_failure_carries_partial_transcript() {
        let mock = MockTransport::from_rules(vec![MockRule::new("First pass", "ok")]);
        let err = run_vc(&mock, &VcPromptSet::default(), &ModelTarget::new("m")).unwrap_err();
        // First exchange succeeded, second operator turn recorded unanswered.
        assert_eq!(err.partial.turns.len(), 3);
        assert_eq!(err.partial.turns[2].role, Role::Operator);
    }

    #[test]
    fn declared_mode_disagreeing_with_observed_scripts_is_tagged() {
        let mock = MockTransport::from_rules(vec![
            MockRule::new("First pass", "Сначала смотрю на материал."),
            MockRule::new("Second pass", "Дальше уверенность растёт."),
            MockRule::new("Third pass", "Готово: 0.35/0.94/0.98|EN"),
        ]);
        let run = run_vc(&mock, &VcPromptSet::default(), &ModelTarget::new("m")).unwrap();
        let final_turn = run.transcript.turns.last().unwrap();
        assert!(final_turn.tags.contains(TAG_MODE_DISCREPANCY));
    }

    #[test]
    fn ablation_run_parses_t_star() {
        let mock = MockTransport::from_rules(vec![MockRule::new(
            "Single deep pass",
            "After one deep pass I land at 0.89 overall.",
        )]);
        let run = run_ablation(
            &mock,
            &VcPromptSet::default(),
            &ModelTarget::new("m"),
            AblationVariant::A,
        )
        .unwrap();
        assert_eq!(run.transcript.protocol, Protocol::VcAblationA);
        let result = run.outcome.result().expect("measured");
        assert_eq!(result.t_star, conf(89));
    }

    #[test]
    fn ablation_without_numeric_token_is_violation() {
        let mock =
            MockTransport::from_rules(vec![MockRule::new("Single deep pass", "no commitment")]);
        let run = run_ablation(
            &mock,
            &VcPromptSet::default(),
            &ModelTarget::new("m"),
            AblationVariant::A,
        )
        .unwrap();
        assert!(matches!(run.outcome, AblationOutcome::Violation { .. }));
    }

    #[test]
    fn deltas_match_documented_subtractions() {
        let a = AblationResult::new(AblationVariant::A, conf(89));
        let b = AblationResult::new(AblationVariant::B, conf(93));
        let multipass = VcTrajectory::new(conf(75), conf(88), conf(95), LanguageMode::EN);

        let deltas = ablation_deltas(&a, &b, &multipass);
        assert_eq!(deltas.b_minus_a.to_string(), "+0.04");
        assert_eq!(deltas.multipass_minus_b.to_string(), "+0.02");
    }

    #[test]
    fn deltas_identity_and_antisymmetry() {
        let multipass = VcTrajectory::new(conf(75), conf(88), conf(95), LanguageMode::EN);

        let same_a = AblationResult::new(AblationVariant::A, conf(90));
        let same_b = AblationResult::new(AblationVariant::B, conf(90));
        let deltas = ablation_deltas(&same_a, &same_b, &multipass);
        assert_eq!(deltas.b_minus_a.to_string(), "0.00");

        let a = AblationResult::new(AblationVariant::A, conf(93));
        let b = AblationResult::new(AblationVariant::B, conf(89));
        let swapped = ablation_deltas(&a, &b, &multipass);
        assert_eq!(swapped.b_minus_a.to_string(), "-0.04");
        assert_eq!(swapped.b_minus_a.hundredths(), -4);
    }
}
