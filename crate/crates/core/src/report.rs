//! Study report assembly and rendering.
//!
//! `build_report` dispatches every transcript to its protocol analyzer and
//! reduces the outcomes into one deterministic structure; `emit` renders it
//! as canonical JSON, sectioned CSV (including plot-ready figure data), or
//! markdown tables. Every row carries the session ids it was derived from.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cp43::{analyze_cp43, Label, EXPECTED_RANK};
use crate::fdlite::{
    audit_transcript, detect_mismatch, probe_annotations, FdInvariants, MarkerConfig, RangeValue,
};
use crate::model::{Confidence, Delta, LanguageMode, Protocol, Transcript};
use crate::vc::{
    ablation_deltas, parse_single_confidence, parse_vc_output, AblationResult, AblationVariant,
    VcTrajectory,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("serializing report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Analyzer configuration shared by `build_report` callers.
#[derive(Debug, Clone, Default)]
pub struct ReportConfig {
    pub invariants: FdInvariants,
    pub markers: MarkerConfig,
    pub expected_rank: Option<[Label; 6]>,
}

impl ReportConfig {
    fn expected_rank(&self) -> [Label; 6] {
        self.expected_rank.unwrap_or(EXPECTED_RANK)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcRow {
    pub model: String,
    pub run_id: String,
    pub session_id: String,
    pub t0: Confidence,
    pub t1: Confidence,
    pub t2: Confidence,
    pub mode: LanguageMode,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub t_star_a: Option<Confidence>,
    pub t_star_b: Option<Confidence>,
    pub multipass_t2: Option<Confidence>,
    pub delta_b_minus_a: Option<Delta>,
    pub delta_multipass_minus_b: Option<Delta>,
    pub session_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdRow {
    pub model: String,
    pub run_id: String,
    pub session_id: String,
    pub anchor_exact: bool,
    pub trap_ack: bool,
    pub score: u8,
    pub score_trajectory: Option<Vec<u8>>,
}

impl FdRow {
    pub fn score_display(&self) -> String {
        match &self.score_trajectory {
            Some(t) => t
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("->"),
            None => self.score.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cp43Digest {
    pub runs_included: usize,
    pub excluded_runs: usize,
    pub tau_min: Option<f64>,
    pub m6_all_pass: Option<bool>,
    pub max_drift: Option<u32>,
    pub max_drift_per_label: BTreeMap<Label, u32>,
    pub session_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub session_id: String,
    pub turn_index: usize,
    pub phase: String,
    pub trust: Option<RangeValue>,
    pub topic_risk: Option<RangeValue>,
    pub tension: Option<RangeValue>,
    pub markers: Option<String>,
    pub note: Option<String>,
    /// Mismatch verdict at range midpoints; None when either input is
    /// missing or outside its protocol range.
    pub mismatch: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnanalyzedEntry {
    pub session_id: String,
    pub protocol: String,
    pub reason: String,
}

/// The aggregated study report. Field order is the canonical JSON order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyReport {
    pub vc_rows: Vec<VcRow>,
    pub ablation_rows: Vec<AblationRow>,
    pub fd_rows: Vec<FdRow>,
    pub cp43: Option<Cp43Digest>,
    pub probe_rows: Vec<ProbeRow>,
    pub unanalyzed: Vec<UnanalyzedEntry>,
}

impl StudyReport {
    /// Every session id referenced anywhere in the report.
    pub fn referenced_sessions(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        ids.extend(self.vc_rows.iter().map(|r| r.session_id.as_str()));
        for row in &self.ablation_rows {
            ids.extend(row.session_ids.iter().map(|s| s.as_str()));
        }
        ids.extend(self.fd_rows.iter().map(|r| r.session_id.as_str()));
        if let Some(cp) = &self.cp43 {
            ids.extend(cp.session_ids.iter().map(|s| s.as_str()));
        }
        ids.extend(self.probe_rows.iter().map(|r| r.session_id.as_str()));
        ids.extend(self.unanalyzed.iter().map(|r| r.session_id.as_str()));
        ids
    }
}

struct AblationObservation {
    session_id: String,
    t_star: Confidence,
}

/// Build the report for a corpus: dispatch by protocol, analyze, sort.
/// Unknown or malformed sessions land in `unanalyzed`; they are never
/// silently dropped and never abort the build.
pub fn build_report(corpus: &[Transcript], config: &ReportConfig) -> StudyReport {
    let mut report = StudyReport::default();
    let mut cp43_sessions: Vec<&Transcript> = Vec::new();
    // model name → per-variant observations, in corpus order.
    let mut ablations: BTreeMap<String, BTreeMap<&'static str, Vec<AblationObservation>>> =
        BTreeMap::new();

    fn skip(report: &mut StudyReport, t: &Transcript, reason: String) {
        report.unanalyzed.push(UnanalyzedEntry {
            session_id: t.session_id.clone(),
            protocol: t.protocol.to_string(),
            reason,
        });
    }

    for t in corpus {
        match t.protocol {
            Protocol::Vc => match final_model_text(t) {
                Some(text) => match parse_vc_output(text) {
                    Ok(trajectory) => report.vc_rows.push(vc_row(t, &trajectory)),
                    Err(e) => skip(&mut report, t, e.to_string()),
                },
                None => skip(&mut report, t, "no model turns".into()),
            },
            Protocol::VcAblationA | Protocol::VcAblationB => match final_model_text(t) {
                Some(text) => match parse_single_confidence(text) {
                    Ok(t_star) => {
                        let variant = if t.protocol == Protocol::VcAblationA {
                            "a"
                        } else {
                            "b"
                        };
                        ablations
                            .entry(t.model.name.clone())
                            .or_default()
                            .entry(variant)
                            .or_default()
                            .push(AblationObservation {
                                session_id: t.session_id.clone(),
                                t_star,
                            });
                    }
                    Err(e) => skip(&mut report, t, e.to_string()),
                },
                None => skip(&mut report, t, "no model turns".into()),
            },
            Protocol::Fdlite => match audit_transcript(t, &config.invariants, &config.markers) {
                Ok(audit) => report.fd_rows.push(FdRow {
                    model: t.model.name.clone(),
                    run_id: t.run_id.clone(),
                    session_id: t.session_id.clone(),
                    anchor_exact: audit.anchor_exact,
                    trap_ack: audit.trap_ack,
                    score: audit.score.value,
                    score_trajectory: audit
                        .per_turn_scores
                        .map(|scores| scores.iter().map(|s| s.value).collect()),
                }),
                Err(e) => skip(&mut report, t, e.to_string()),
            },
            Protocol::Cp43 => cp43_sessions.push(t),
            Protocol::Probe => match probe_annotations(t) {
                Ok(rows) => {
                    for (turn_index, a) in rows {
                        let mismatch = match (&a.tension, &a.topic_risk) {
                            (Some(tension), Some(risk)) => detect_mismatch(
                                tension.midpoint(),
                                risk.midpoint(),
                                config.markers.mismatch_threshold,
                            )
                            .ok(),
                            _ => None,
                        };
                        report.probe_rows.push(ProbeRow {
                            session_id: t.session_id.clone(),
                            turn_index,
                            phase: a.phase,
                            trust: a.trust,
                            topic_risk: a.topic_risk,
                            tension: a.tension,
                            markers: a.markers,
                            note: a.note,
                            mismatch,
                        });
                    }
                }
                Err(e) => skip(&mut report, t, e.to_string()),
            },
            Protocol::Freeform => skip(&mut report, t, "unsupported protocol".into()),
        }
    }

    if !cp43_sessions.is_empty() {
        // Session-id order, so the digest does not depend on corpus order.
        cp43_sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        let owned: Vec<Transcript> = cp43_sessions.iter().map(|&t| t.clone()).collect();
        let analysis = analyze_cp43(&owned, &config.expected_rank());
        let summary = analysis.summary();
        report.cp43 = Some(Cp43Digest {
            runs_included: analysis.per_run.len() - analysis.excluded,
            excluded_runs: analysis.excluded,
            tau_min: summary.tau_min,
            m6_all_pass: summary.m6_all_pass,
            max_drift: summary.max_drift,
            max_drift_per_label: analysis
                .stability
                .as_ref()
                .map(|s| s.max_drift_per_label.clone())
                .unwrap_or_default(),
            session_ids: owned.iter().map(|t| t.session_id.clone()).collect(),
        });
    }

    report.ablation_rows = ablation_rows(ablations, &report.vc_rows);

    report.vc_rows.sort_by(|a, b| {
        (&a.model, &a.run_id, &a.session_id).cmp(&(&b.model, &b.run_id, &b.session_id))
    });
    report.fd_rows.sort_by(|a, b| {
        (&a.model, &a.run_id, &a.session_id).cmp(&(&b.model, &b.run_id, &b.session_id))
    });
    report
        .probe_rows
        .sort_by(|a, b| (&a.session_id, a.turn_index).cmp(&(&b.session_id, b.turn_index)));
    report
        .unanalyzed
        .sort_by(|a, b| a.session_id.cmp(&b.session_id));

    report
}

fn final_model_text(t: &Transcript) -> Option<&str> {
    t.model_turns().last().map(|turn| turn.text.as_str())
}

fn vc_row(t: &Transcript, trajectory: &VcTrajectory) -> VcRow {
    VcRow {
        model: t.model.name.clone(),
        run_id: t.run_id.clone(),
        session_id: t.session_id.clone(),
        t0: trajectory.t0,
        t1: trajectory.t1,
        t2: trajectory.t2,
        mode: trajectory.mode,
        monotone: trajectory.monotone,
    }
}

/// One ablation row per model: the first A and first B observation (by
/// session id), the model's multi-pass T2 when a VC row exists, and the
/// two documented deltas when their operands are present.
fn ablation_rows(
    ablations: BTreeMap<String, BTreeMap<&'static str, Vec<AblationObservation>>>,
    vc_rows: &[VcRow],
) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for (model, mut by_variant) in ablations {
        let mut session_ids: Vec<String> = Vec::new();
        let mut first = |variant: &str| -> Option<Confidence> {
            let mut observations = by_variant.remove(variant)?;
            observations.sort_by(|a, b| a.session_id.cmp(&b.session_id));
            session_ids.extend(observations.iter().map(|o| o.session_id.clone()));
            Some(observations.first()?.t_star)
        };
        let t_star_a = first("a");
        let t_star_b = first("b");

        let multipass = vc_rows.iter().find(|r| r.model == model);
        if let Some(row) = multipass {
            session_ids.push(row.session_id.clone());
        }
        let multipass_t2 = multipass.map(|r| r.t2);

        let (delta_b_minus_a, delta_multipass_minus_b) = match (t_star_a, t_star_b) {
            (Some(a_value), Some(b_value)) => {
                let a = AblationResult::new(AblationVariant::A, a_value);
                let b = AblationResult::new(AblationVariant::B, b_value);
                match multipass {
                    Some(row) => {
                        let trajectory = VcTrajectory::new(row.t0, row.t1, row.t2, row.mode);
                        let deltas = ablation_deltas(&a, &b, &trajectory);
                        (Some(deltas.b_minus_a), Some(deltas.multipass_minus_b))
                    }
                    None => (Some(b_value.delta(a_value)), None),
                }
            }
            _ => (None, None),
        };

        rows.push(AblationRow {
            model,
            t_star_a,
            t_star_b,
            multipass_t2,
            delta_b_minus_a,
            delta_multipass_minus_b,
            session_ids,
        });
    }
    rows
}

/// Output format for `emit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Render the report. JSON is the canonical serialization; CSV emits one
/// section per table plus plot-ready figure data; markdown mirrors the
/// table layout of the underlying study.
pub fn emit(report: &StudyReport, format: ReportFormat) -> Result<Vec<u8>, ReportError> {
    match format {
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(report)?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Markdown => Ok(emit_markdown(report).into_bytes()),
    }
}

fn fmt_opt<T: std::fmt::Display>(value: &Option<T>) -> String {
    value.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

fn yes_no(v: bool) -> &'static str {
    if v {
        "Yes"
    } else {
        "No"
    }
}

fn emit_csv(report: &StudyReport) -> Result<Vec<u8>, ReportError> {
    let mut out: Vec<u8> = Vec::new();

    let mut vc = vec![str_row(&[
        "model",
        "run_id",
        "session_id",
        "t0",
        "t1",
        "t2",
        "mode",
        "monotone",
    ])];
    for r in &report.vc_rows {
        vc.push(vec![
            r.model.clone(),
            r.run_id.clone(),
            r.session_id.clone(),
            r.t0.to_string(),
            r.t1.to_string(),
            r.t2.to_string(),
            r.mode.to_string(),
            r.monotone.to_string(),
        ]);
    }
    csv_section(&mut out, "vc", vc)?;

    let mut ablation = vec![str_row(&[
        "model",
        "t_star_a",
        "t_star_b",
        "multipass_t2",
        "delta_b_minus_a",
        "delta_multipass_minus_b",
        "session_ids",
    ])];
    for r in &report.ablation_rows {
        ablation.push(vec![
            r.model.clone(),
            fmt_opt(&r.t_star_a),
            fmt_opt(&r.t_star_b),
            fmt_opt(&r.multipass_t2),
            fmt_opt(&r.delta_b_minus_a),
            fmt_opt(&r.delta_multipass_minus_b),
            r.session_ids.join(";"),
        ]);
    }
    csv_section(&mut out, "ablation", ablation)?;

    let mut fd = vec![str_row(&[
        "model",
        "run_id",
        "session_id",
        "anchor_exact",
        "trap_ack",
        "pressure_markers",
    ])];
    for r in &report.fd_rows {
        fd.push(vec![
            r.model.clone(),
            r.run_id.clone(),
            r.session_id.clone(),
            yes_no(r.anchor_exact).to_string(),
            yes_no(r.trap_ack).to_string(),
            r.score_display(),
        ]);
    }
    csv_section(&mut out, "fdlite", fd)?;

    let mut cp = vec![str_row(&[
        "runs_included",
        "excluded_runs",
        "tau_min",
        "m6_all_pass",
        "max_drift",
        "session_ids",
    ])];
    if let Some(digest) = &report.cp43 {
        cp.push(vec![
            digest.runs_included.to_string(),
            digest.excluded_runs.to_string(),
            digest
                .tau_min
                .map(|t| format!("{t:.4}"))
                .unwrap_or_default(),
            fmt_opt(&digest.m6_all_pass),
            fmt_opt(&digest.max_drift),
            digest.session_ids.join(";"),
        ]);
    }
    csv_section(&mut out, "cp43", cp)?;

    let mut probe = vec![str_row(&[
        "session_id",
        "turn_index",
        "phase",
        "trust",
        "topic_risk",
        "tension",
        "markers",
        "mismatch",
        "note",
    ])];
    for r in &report.probe_rows {
        probe.push(vec![
            r.session_id.clone(),
            r.turn_index.to_string(),
            r.phase.clone(),
            fmt_opt(&r.trust),
            fmt_opt(&r.topic_risk),
            fmt_opt(&r.tension),
            r.markers.clone().unwrap_or_default(),
            fmt_opt(&r.mismatch),
            r.note.clone().unwrap_or_default(),
        ]);
    }
    csv_section(&mut out, "probe", probe)?;

    // Plot-ready trajectory points: one row per (model, pass index, value).
    let mut figure = vec![str_row(&["model", "pass", "t"])];
    for r in &report.vc_rows {
        for (pass, value) in [(0, r.t0), (1, r.t1), (2, r.t2)] {
            figure.push(vec![r.model.clone(), pass.to_string(), value.to_string()]);
        }
    }
    csv_section(&mut out, "figure", figure)?;

    let mut unanalyzed = vec![str_row(&["session_id", "protocol", "reason"])];
    for r in &report.unanalyzed {
        unanalyzed.push(vec![
            r.session_id.clone(),
            r.protocol.clone(),
            r.reason.clone(),
        ]);
    }
    csv_section(&mut out, "unanalyzed", unanalyzed)?;

    Ok(out)
}

fn csv_section(out: &mut Vec<u8>, name: &str, rows: Vec<Vec<String>>) -> Result<(), ReportError> {
    out.extend_from_slice(format!("# {name}\n").as_bytes());
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.write_record(&row)?;
    }
    let bytes = writer.into_inner().expect("vec writer never fails");
    out.extend_from_slice(&bytes);
    out.push(b'\n');
    Ok(())
}

fn str_row(fields: &[&str]) -> Vec<String> {
    fields.iter().map(|s| s.to_string()).collect()
}

fn emit_markdown(report: &StudyReport) -> String {
    let mut out = String::from("# Study report\n");

    out.push_str("\n## VC trajectories\n\n");
    if report.vc_rows.is_empty() {
        out.push_str("(no rows)\n");
    } else {
        out.push_str("| Model | T0 | T1 | T2 | Mode | Monotone | Session |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for r in &report.vc_rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} |\n",
                escape_md(&r.model),
                r.t0,
                r.t1,
                r.t2,
                r.mode,
                yes_no(r.monotone),
                r.session_id
            ));
        }
    }

    out.push_str("\n## Single-pass ablation\n\n");
    if report.ablation_rows.is_empty() {
        out.push_str("(no rows)\n");
    } else {
        out.push_str(
            "| Model | T*(A) | T*(B) | Multi-pass T2 | Delta(B-A) | Delta(multi-B) | Sessions |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|\n");
        for r in &report.ablation_rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} |\n",
                escape_md(&r.model),
                fmt_opt(&r.t_star_a),
                fmt_opt(&r.t_star_b),
                fmt_opt(&r.multipass_t2),
                fmt_opt(&r.delta_b_minus_a),
                fmt_opt(&r.delta_multipass_minus_b),
                r.session_ids.join(", ")
            ));
        }
    }

    out.push_str("\n## CP4.3 stability\n\n");
    match &report.cp43 {
        None => out.push_str("(no runs)\n"),
        Some(d) => {
            out.push_str("| Metric | Value |\n|---|---|\n");
            out.push_str(&format!("| Runs included | {} |\n", d.runs_included));
            out.push_str(&format!("| Excluded runs | {} |\n", d.excluded_runs));
            out.push_str(&format!(
                "| Rank invariance (min pairwise tau) | {} |\n",
                d.tau_min.map(|t| format!("{t:.2}")).unwrap_or_default()
            ));
            out.push_str(&format!(
                "| M6 monotonicity | {} |\n",
                match d.m6_all_pass {
                    Some(true) => "pass",
                    Some(false) => "fail",
                    None => "",
                }
            ));
            out.push_str(&format!(
                "| Max allocation drift (any label) | {} |\n",
                fmt_opt(&d.max_drift)
            ));
        }
    }

    out.push_str("\n## FD-Lite audits\n\n");
    if report.fd_rows.is_empty() {
        out.push_str("(no rows)\n");
    } else {
        out.push_str("| Model | Anchor exact | Trap (ACK) | Pressure markers | Session |\n");
        out.push_str("|---|---|---|---|---|\n");
        for r in &report.fd_rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                escape_md(&r.model),
                yes_no(r.anchor_exact),
                yes_no(r.trap_ack),
                r.score_display(),
                r.session_id
            ));
        }
    }

    out.push_str("\n## Pressure-risk probe\n\n");
    if report.probe_rows.is_empty() {
        out.push_str("(no rows)\n");
    } else {
        out.push_str(
            "| Phase | Trust | Topic risk | Tension | Markers | Mismatch | Notes | Session |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        for r in &report.probe_rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                escape_md(&r.phase),
                fmt_opt(&r.trust),
                fmt_opt(&r.topic_risk),
                fmt_opt(&r.tension),
                escape_md(r.markers.as_deref().unwrap_or("")),
                r.mismatch
                    .map(|m| yes_no(m).to_string())
                    .unwrap_or_default(),
                escape_md(r.note.as_deref().unwrap_or("")),
                r.session_id
            ));
        }
    }

    out.push_str("\n## Unanalyzed sessions\n\n");
    if report.unanalyzed.is_empty() {
        out.push_str("(none)\n");
    } else {
        out.push_str("| Session | Protocol | Reason |\n|---|---|---|\n");
        for r in &report.unanalyzed {
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                r.session_id,
                r.protocol,
                escape_md(&r.reason)
            ));
        }
    }

    out
}

fn escape_md(text: &str) -> String {
    text.replace('|', "\\|").replace('\n', " ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdlite::ANCHOR_TEXT;
    use crate::model::{ModelTarget, Role};

    fn vc_transcript(id: &str, model: &str, line: &str) -> Transcript {
        let mut t = Transcript::new(id, "vc-r1", Protocol::Vc, ModelTarget::new(model));
        t.push_turn(Role::Operator, "pass 1");
        t.push_turn(Role::Model, "thinking");
        t.push_turn(Role::Operator, "pass 2");
        t.push_turn(Role::Model, "deeper");
        t.push_turn(Role::Operator, "pass 3");
        t.push_turn(Role::Model, line);
        t
    }

    fn fd_transcript(id: &str, model: &str) -> Transcript {
        let mut t = Transcript::new(id, "fd-r1", Protocol::Fdlite, ModelTarget::new(model));
        t.push_turn(Role::Operator, "anchor");
        t.push_turn(Role::Model, ANCHOR_TEXT);
        t.push_turn(Role::Operator, "trap");
        t.push_turn(Role::Model, "ACK");
        t
    }

    fn cp43_transcript(id: &str, reply: &str) -> Transcript {
        let mut t = Transcript::new(id, "cp43-r1", Protocol::Cp43, ModelTarget::new("m"));
        t.push_turn(Role::Operator, "rank");
        t.push_turn(Role::Model, reply);
        t
    }

    #[test]
    fn empty_corpus_gives_empty_sections() {
        let report = build_report(&[], &ReportConfig::default());
        assert!(report.vc_rows.is_empty());
        assert!(report.cp43.is_none());
        assert!(report.unanalyzed.is_empty());
        for format in [
            ReportFormat::Json,
            ReportFormat::Csv,
            ReportFormat::Markdown,
        ] {
            assert!(!emit(&report, format).unwrap().is_empty());
        }
    }

    #[test]
    fn freeform_sessions_are_listed_as_unanalyzed() {
        let mut t = Transcript::new("f1", "r", Protocol::Freeform, ModelTarget::new("m"));
        t.push_turn(Role::Operator, "chat");
        let report = build_report(std::slice::from_ref(&t), &ReportConfig::default());
        assert!(report.vc_rows.is_empty());
        assert_eq!(report.unanalyzed.len(), 1);
        assert_eq!(report.unanalyzed[0].session_id, "f1");
        assert_eq!(report.unanalyzed[0].protocol, "freeform");
    }

    #[test]
    fn violating_vc_session_is_unanalyzed_with_reason() {
        let t = vc_transcript("vc-bad", "M1", "no numbers today");
        let report = build_report(std::slice::from_ref(&t), &ReportConfig::default());
        assert!(report.vc_rows.is_empty());
        assert_eq!(report.unanalyzed.len(), 1);
        assert!(report.unanalyzed[0]
            .reason
            .contains("no constrained output"));
    }

    #[test]
    fn rows_sorted_by_model_then_run() {
        let corpus = vec![
            vc_transcript("s2", "Zebra", "0.10/0.20/0.30|EN"),
            vc_transcript("s1", "Alpha", "0.40/0.50/0.60|EN"),
        ];
        let report = build_report(&corpus, &ReportConfig::default());
        assert_eq!(report.vc_rows[0].model, "Alpha");
        assert_eq!(report.vc_rows[1].model, "Zebra");
    }

    #[test]
    fn corpus_order_does_not_change_the_report() {
        let mut corpus = vec![
            vc_transcript("vc-1", "M1", "0.10/0.20/0.30|EN"),
            fd_transcript("fd-1", "M1"),
            cp43_transcript(
                "cp-1",
                "RANK: X5>X1>X4>X2>X6>X3; ALLOC: X5=30,X1=25,X4=20,X2=13,X6=7,X3=5",
            ),
            cp43_transcript(
                "cp-2",
                "RANK: X5>X1>X4>X2>X6>X3; ALLOC: X5=30,X1=25,X4=19,X2=13,X6=8,X3=5",
            ),
        ];
        let config = ReportConfig::default();
        let forward = emit(&build_report(&corpus, &config), ReportFormat::Json).unwrap();
        corpus.reverse();
        let reversed = emit(&build_report(&corpus, &config), ReportFormat::Json).unwrap();
        assert_eq!(forward, reversed, "report must be corpus-order invariant");
    }

    #[test]
    fn json_emit_round_trips() {
        let corpus = vec![
            vc_transcript("vc-1", "M1", "0.35/0.94/0.98|EN"),
            fd_transcript("fd-1", "M1"),
            cp43_transcript(
                "cp-1",
                "RANK: X5>X1>X4>X2>X6>X3; ALLOC: X5=30,X1=25,X4=20,X2=13,X6=7,X3=5",
            ),
        ];
        let report = build_report(&corpus, &ReportConfig::default());
        let bytes = emit(&report, ReportFormat::Json).unwrap();
        let parsed: StudyReport = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn figure_csv_lists_pass_indexed_values() {
        let corpus = vec![vc_transcript(
            "vc-1",
            "Claude Haiku 4.5",
            "0.35/0.94/0.98|EN",
        )];
        let report = build_report(&corpus, &ReportConfig::default());
        let csv_bytes = emit(&report, ReportFormat::Csv).unwrap();
        let text = String::from_utf8(csv_bytes).unwrap();
        assert!(text.contains("# figure"), "{text}");
        assert!(text.contains("Claude Haiku 4.5,0,0.35"));
        assert!(text.contains("Claude Haiku 4.5,1,0.94"));
        assert!(text.contains("Claude Haiku 4.5,2,0.98"));
    }

    #[test]
    fn provenance_covers_every_row() {
        let corpus = vec![
            vc_transcript("vc-1", "M1", "0.35/0.94/0.98|EN"),
            fd_transcript("fd-1", "M1"),
            cp43_transcript(
                "cp-1",
                "RANK: X5>X1>X4>X2>X6>X3; ALLOC: X5=30,X1=25,X4=20,X2=13,X6=7,X3=5",
            ),
        ];
        let report = build_report(&corpus, &ReportConfig::default());
        let known: Vec<&str> = corpus.iter().map(|t| t.session_id.as_str()).collect();
        let referenced = report.referenced_sessions();
        assert!(!referenced.is_empty());
        for id in referenced {
            assert!(known.contains(&id), "unknown session {id}");
        }
    }

    #[test]
    fn ablation_rows_pair_variants_and_multipass_by_model() {
        let model = "Claude Opus 4.1 (UI session)";
        let mut a = Transcript::new("ab-a", "r", Protocol::VcAblationA, ModelTarget::new(model));
        a.push_turn(Role::Operator, "single deep");
        a.push_turn(Role::Model, "settling on 0.89 overall");
        let mut b = Transcript::new("ab-b", "r", Protocol::VcAblationB, ModelTarget::new(model));
        b.push_turn(Role::Operator, "structured single");
        b.push_turn(Role::Model, "after three phases: 0.93");
        let corpus = vec![a, b, vc_transcript("vc-opus", model, "0.75/0.88/0.95|EN")];

        let report = build_report(&corpus, &ReportConfig::default());
        assert_eq!(report.ablation_rows.len(), 1);
        let row = &report.ablation_rows[0];
        assert_eq!(row.t_star_a.unwrap().to_string(), "0.89");
        assert_eq!(row.t_star_b.unwrap().to_string(), "0.93");
        assert_eq!(row.multipass_t2.unwrap().to_string(), "0.95");
        assert_eq!(row.delta_b_minus_a.unwrap().to_string(), "+0.04");
        assert_eq!(row.delta_multipass_minus_b.unwrap().to_string(), "+0.02");
        assert!(row.session_ids.contains(&"ab-a".to_string()));
        assert!(row.session_ids.contains(&"vc-opus".to_string()));
    }

    #[test]
    fn markdown_renders_study_tables() {
        let corpus = vec![
            vc_transcript("vc-1", "Claude Haiku 4.5", "0.35/0.94/0.98|EN"),
            fd_transcript("fd-1", "Claude Haiku 4.5"),
        ];
        let report = build_report(&corpus, &ReportConfig::default());
        let md = String::from_utf8(emit(&report, ReportFormat::Markdown).unwrap()).unwrap();
        assert!(
            md.contains("| Claude Haiku 4.5 | 0.35 | 0.94 | 0.98 | EN | Yes | vc-1 |"),
            "{md}"
        );
        assert!(
            md.contains("| Claude Haiku 4.5 | Yes | Yes | 0 | fd-1 |"),
            "{md}"
        );
    }
}
