//! JSON Lines persistence for transcript corpora.
//!
//! A corpus file is a sequence of session blocks: one `"kind":"session"`
//! header object, then one `"kind":"turn"` object per turn. Sessions are
//! append-only streams, so a partially written file is salvageable up to
//! the last complete line. Loading is total: every line is either consumed
//! or produces an error carrying its position.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelTarget, Protocol, Role, Transcript, Turn};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("{path}:{line}: non-contiguous turn index: expected {expected}, got {got}")]
    NonContiguousTurnIndex {
        path: PathBuf,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: turn line before any session header")]
    TurnBeforeHeader { path: PathBuf, line: usize },
    #[error("duplicate session-id {id:?}")]
    DuplicateSessionId { id: String },
    #[error("invalid transcript {session_id:?}: {source}")]
    InvalidTranscript {
        session_id: String,
        #[source]
        source: ModelError,
    },
    #[error("no .jsonl files under {path}")]
    EmptyDirectory { path: PathBuf },
}

/// Wire form of one corpus line. The `kind` tag is always the first key.
#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LineOut<'a> {
    Session {
        session_id: &'a str,
        run_id: &'a str,
        protocol: Protocol,
        model: &'a ModelTarget,
    },
    Turn {
        index: usize,
        role: Role,
        text: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        timestamp: Option<DateTime<Utc>>,
        tags: &'a BTreeSet<String>,
    },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum LineIn {
    Session {
        session_id: String,
        run_id: String,
        protocol: Protocol,
        model: ModelTarget,
    },
    Turn {
        index: usize,
        role: Role,
        text: String,
        #[serde(default)]
        timestamp: Option<DateTime<Utc>>,
        #[serde(default)]
        tags: BTreeSet<String>,
    },
}

/// Load every transcript under `path`, which may be a single `.jsonl` file
/// or a directory tree of them (walked recursively, in sorted path order).
/// Session order is file order.
pub fn load_corpus(path: &Path) -> Result<Vec<Transcript>, CorpusError> {
    let files = corpus_files(path)?;
    let mut transcripts = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for file in files {
        let content = fs::read_to_string(&file).map_err(|source| CorpusError::Io {
            path: file.clone(),
            source,
        })?;
        parse_file(&file, &content, &mut seen_ids, &mut transcripts)?;
    }
    Ok(transcripts)
}

/// Save transcripts as one JSONL stream. All transcripts are validated
/// (including session-id uniqueness) before any byte is written.
pub fn save_corpus(transcripts: &[Transcript], path: &Path) -> Result<(), CorpusError> {
    let mut seen: HashSet<&str> = HashSet::new();
    for t in transcripts {
        t.validate()
            .map_err(|source| CorpusError::InvalidTranscript {
                session_id: t.session_id.clone(),
                source,
            })?;
        if !seen.insert(&t.session_id) {
            return Err(CorpusError::DuplicateSessionId {
                id: t.session_id.clone(),
            });
        }
    }

    let mut out = Vec::new();
    for t in transcripts {
        write_transcript(&mut out, t);
    }
    let mut file = fs::File::create(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(&out).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Render one transcript in the wire format, one JSON object per line.
pub fn transcript_to_jsonl(t: &Transcript) -> String {
    let mut out = Vec::new();
    write_transcript(&mut out, t);
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

fn write_transcript(out: &mut Vec<u8>, t: &Transcript) {
    let header = LineOut::Session {
        session_id: &t.session_id,
        run_id: &t.run_id,
        protocol: t.protocol,
        model: &t.model,
    };
    push_line(out, &header);
    for turn in &t.turns {
        let line = LineOut::Turn {
            index: turn.index,
            role: turn.role,
            text: &turn.text,
            timestamp: turn.timestamp,
            tags: &turn.tags,
        };
        push_line(out, &line);
    }
}

fn push_line(out: &mut Vec<u8>, line: &LineOut<'_>) {
    let json = serde_json::to_string(line).expect("wire structs always serialize");
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
}

fn corpus_files(path: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_jsonl(path, &mut files)?;
        files.sort();
        if files.is_empty() {
            return Err(CorpusError::EmptyDirectory {
                path: path.to_path_buf(),
            });
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn collect_jsonl(dir: &Path, files: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries.filter_map(Result::ok) {
        let path = entry.path();
        if path.is_dir() {
            collect_jsonl(&path, files)?;
        } else if path.extension().is_some_and(|ext| ext == "jsonl") {
            files.push(path);
        }
    }
    Ok(())
}

fn parse_file(
    path: &Path,
    content: &str,
    seen_ids: &mut HashSet<String>,
    transcripts: &mut Vec<Transcript>,
) -> Result<(), CorpusError> {
    let mut current: Option<Transcript> = None;

    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: LineIn = serde_json::from_str(raw).map_err(|e| CorpusError::MalformedLine {
            path: path.to_path_buf(),
            line: line_no,
            detail: e.to_string(),
        })?;

        match line {
            LineIn::Session {
                session_id,
                run_id,
                protocol,
                model,
            } => {
                if let Some(done) = current.take() {
                    transcripts.push(done);
                }
                if !seen_ids.insert(session_id.clone()) {
                    return Err(CorpusError::DuplicateSessionId { id: session_id });
                }
                let t = Transcript::new(session_id, run_id, protocol, model);
                t.validate()
                    .map_err(|source| CorpusError::InvalidTranscript {
                        session_id: t.session_id.clone(),
                        source,
                    })?;
                current = Some(t);
            }
            LineIn::Turn {
                index,
                role,
                text,
                timestamp,
                tags,
            } => {
                let t = current.as_mut().ok_or(CorpusError::TurnBeforeHeader {
                    path: path.to_path_buf(),
                    line: line_no,
                })?;
                let expected = t.turns.len();
                if index != expected {
                    return Err(CorpusError::NonContiguousTurnIndex {
                        path: path.to_path_buf(),
                        line: line_no,
                        expected,
                        got: index,
                    });
                }
                t.turns.push(Turn {
                    index,
                    role,
                    text,
                    timestamp,
                    tags,
                });
            }
        }
    }

    if let Some(done) = current.take() {
        transcripts.push(done);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelTarget;
    use tempfile::tempdir;

    fn sample() -> Transcript {
        let mut t = Transcript::new(
            "vc-001",
            "run-1",
            Protocol::Vc,
            ModelTarget::new("Claude Haiku 4.5"),
        );
        t.push_turn(Role::Operator, "Первый вопрос — initial judgment?");
        t.push_turn(Role::Model, "T0 выглядит как 0.35 пока.");
        t.push_turn(Role::Model, "0.35/0.94/0.98|EN");
        t
    }

    #[test]
    fn header_line_matches_wire_contract() {
        let t = Transcript::new("s", "r", Protocol::Vc, ModelTarget::new("m"));
        let jsonl = transcript_to_jsonl(&t);
        assert_eq!(
            jsonl,
            "{\"kind\":\"session\",\"session_id\":\"s\",\"run_id\":\"r\",\"protocol\":\"vc\",\"model\":{\"name\":\"m\",\"temperature\":1.0,\"top_p\":1.0}}\n"
        );
    }

    #[test]
    fn turn_line_matches_wire_contract() {
        let mut t = Transcript::new("s", "r", Protocol::Freeform, ModelTarget::new("m"));
        t.push_turn(Role::Operator, "hi");
        let jsonl = transcript_to_jsonl(&t);
        let turn_line = jsonl.lines().nth(1).unwrap();
        assert_eq!(
            turn_line,
            "{\"kind\":\"turn\",\"index\":0,\"role\":\"operator\",\"text\":\"hi\",\"tags\":[]}"
        );
    }

    #[test]
    fn minimal_file_loads_one_transcript() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&[sample()], &path).unwrap();

        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].turns.len(), 3);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        assert!(load_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn round_trip_preserves_cyrillic_text() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let original = vec![sample()];
        save_corpus(&original, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, original);
    }

    #[test]
    fn non_contiguous_index_is_positioned_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut t = sample();
        t.turns[1].index = 2;
        let mut out = Vec::new();
        write_transcript(&mut out, &t);
        fs::write(&path, out).unwrap();

        let err = load_corpus(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-contiguous turn index"), "{msg}");
        assert!(msg.contains(":3:"), "should name line 3: {msg}");
    }

    #[test]
    fn duplicate_session_id_rejected_on_save_and_load() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let a = sample();
        let err = save_corpus(&[a.clone(), a.clone()], &path).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateSessionId { .. }));
        assert!(!path.exists(), "nothing may be written on failure");

        let mut out = Vec::new();
        write_transcript(&mut out, &a);
        write_transcript(&mut out, &a);
        fs::write(&path, out).unwrap();
        let err = load_corpus(&path).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateSessionId { .. }));
    }

    #[test]
    fn turn_before_header_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("headless.jsonl");
        fs::write(
            &path,
            "{\"kind\":\"turn\",\"index\":0,\"role\":\"model\",\"text\":\"x\",\"tags\":[]}\n",
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err();
        assert!(matches!(err, CorpusError::TurnBeforeHeader { line: 1, .. }));
    }

    #[test]
    fn malformed_line_names_line_and_field() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mal.jsonl");
        let header = "{\"kind\":\"session\",\"session_id\":\"s\",\"run_id\":\"r\",\"protocol\":\"vc\",\"model\":{\"name\":\"m\",\"temperature\":1.0,\"top_p\":1.0}}";
        let bad_turn = "{\"kind\":\"turn\",\"index\":0,\"role\":\"model\",\"tags\":[]}";
        fs::write(&path, format!("{header}\n{bad_turn}\n")).unwrap();

        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("text"), "should name the missing field: {err}");
    }

    #[test]
    fn directory_loads_in_sorted_file_order() {
        let dir = tempdir().unwrap();
        let mut a = sample();
        a.session_id = "a-session".into();
        let mut b = sample();
        b.session_id = "b-session".into();
        save_corpus(&[b.clone()], &dir.path().join("02-b.jsonl")).unwrap();
        save_corpus(&[a.clone()], &dir.path().join("01-a.jsonl")).unwrap();

        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded[0].session_id, "a-session");
        assert_eq!(loaded[1].session_id, "b-session");
    }
}
