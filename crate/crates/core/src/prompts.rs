//! Prompt template sets for the three protocols.
//!
//! Templates ship as editable text assets under `prompts/`; the copies
//! embedded here are the same files, so code defaults and shipped assets
//! cannot drift. The default wording is a working paraphrase of the
//! protocol steps and is explicitly non-canonical: operators are expected
//! to edit the assets for their own studies.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::Transcript;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("reading prompt {name}: {source}")]
    Io {
        name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt template {0} is empty")]
    Empty(String),
    #[error("transcript {session_id} has {got} operator turns, {needed} needed to derive prompts")]
    NotEnoughOperatorTurns {
        session_id: String,
        needed: usize,
        got: usize,
    },
}

macro_rules! asset {
    ($path:literal) => {
        include_str!(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../prompts/",
            $path
        ))
    };
}

/// Prompts for Victor Calibration: three passes plus the two single-pass
/// ablation variants.
#[derive(Debug, Clone)]
pub struct VcPromptSet {
    /// Collaborative preamble prepended to the first operator turn.
    pub framing: Option<String>,
    pub pass1: String,
    pub pass2: String,
    pub pass3: String,
    pub single_pass_a: String,
    pub single_pass_b: String,
}

impl Default for VcPromptSet {
    fn default() -> Self {
        VcPromptSet {
            framing: Some(asset!("vc/framing.txt").trim_end().to_string()),
            pass1: asset!("vc/pass1.txt").trim_end().to_string(),
            pass2: asset!("vc/pass2.txt").trim_end().to_string(),
            pass3: asset!("vc/pass3.txt").trim_end().to_string(),
            single_pass_a: asset!("vc/single_pass_a.txt").trim_end().to_string(),
            single_pass_b: asset!("vc/single_pass_b.txt").trim_end().to_string(),
        }
    }
}

impl VcPromptSet {
    /// Load from `<dir>/vc/`. `framing.txt` is optional; the pass and
    /// single-pass templates are required.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let vc = dir.join("vc");
        let set = VcPromptSet {
            framing: read_optional(&vc.join("framing.txt"))?,
            pass1: read_required(&vc.join("pass1.txt"))?,
            pass2: read_required(&vc.join("pass2.txt"))?,
            pass3: read_required(&vc.join("pass3.txt"))?,
            single_pass_a: read_required(&vc.join("single_pass_a.txt"))?,
            single_pass_b: read_required(&vc.join("single_pass_b.txt"))?,
        };
        set.validate()?;
        Ok(set)
    }

    /// Derive the pass prompts from a recorded VC session so the engine can
    /// re-drive it over replay. Any framing is already folded into the first
    /// recorded operator turn.
    pub fn from_transcript(transcript: &Transcript) -> Result<Self, PromptError> {
        let ops: Vec<&str> = transcript
            .operator_turns()
            .map(|t| t.text.as_str())
            .collect();
        if ops.len() < 3 {
            return Err(PromptError::NotEnoughOperatorTurns {
                session_id: transcript.session_id.clone(),
                needed: 3,
                got: ops.len(),
            });
        }
        let defaults = VcPromptSet::default();
        Ok(VcPromptSet {
            framing: None,
            pass1: ops[0].to_string(),
            pass2: ops[1].to_string(),
            pass3: ops[2].to_string(),
            single_pass_a: defaults.single_pass_a,
            single_pass_b: defaults.single_pass_b,
        })
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        check_non_empty("vc framing", self.framing.as_deref().unwrap_or("non-empty"))?;
        check_non_empty("vc pass1", &self.pass1)?;
        check_non_empty("vc pass2", &self.pass2)?;
        check_non_empty("vc pass3", &self.pass3)?;
        check_non_empty("vc single_pass_a", &self.single_pass_a)?;
        check_non_empty("vc single_pass_b", &self.single_pass_b)?;
        Ok(())
    }

    /// First operator turn: framing (when present) plus pass 1.
    pub fn opening_prompt(&self) -> String {
        match &self.framing {
            Some(framing) => format!("{framing}\n\n{}", self.pass1),
            None => self.pass1.clone(),
        }
    }
}

/// Prompts for the FD-Lite audit: anchor elicitation, trap, and optional
/// free-form probe turns that extend the session.
#[derive(Debug, Clone)]
pub struct FdPromptSet {
    pub anchor_prompt: String,
    pub trap_prompt: String,
    pub probe_prompts: Vec<String>,
}

impl Default for FdPromptSet {
    fn default() -> Self {
        FdPromptSet {
            anchor_prompt: asset!("fdlite/anchor.txt").trim_end().to_string(),
            trap_prompt: asset!("fdlite/trap.txt").trim_end().to_string(),
            probe_prompts: vec![
                asset!("fdlite/probe-1.txt").trim_end().to_string(),
                asset!("fdlite/probe-2.txt").trim_end().to_string(),
                asset!("fdlite/probe-3.txt").trim_end().to_string(),
            ],
        }
    }
}

impl FdPromptSet {
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let fd = dir.join("fdlite");
        let set = FdPromptSet {
            anchor_prompt: read_required(&fd.join("anchor.txt"))?,
            trap_prompt: read_required(&fd.join("trap.txt"))?,
            probe_prompts: read_numbered(&fd, "probe-")?,
        };
        Ok(set)
    }

    /// Derive prompts from a recorded FD-Lite session: first operator turn
    /// is the anchor elicitation, second the trap, the rest are probes.
    pub fn from_transcript(transcript: &Transcript) -> Result<Self, PromptError> {
        let ops: Vec<&str> = transcript
            .operator_turns()
            .map(|t| t.text.as_str())
            .collect();
        if ops.len() < 2 {
            return Err(PromptError::NotEnoughOperatorTurns {
                session_id: transcript.session_id.clone(),
                needed: 2,
                got: ops.len(),
            });
        }
        Ok(FdPromptSet {
            anchor_prompt: ops[0].to_string(),
            trap_prompt: ops[1].to_string(),
            probe_prompts: ops[2..].iter().map(|s| s.to_string()).collect(),
        })
    }
}

/// Prompts for a CP4.3 run: the main rank/alloc elicitation plus optional
/// pressure passes. The final reply after all pressure passes is the run's
/// answer.
#[derive(Debug, Clone)]
pub struct Cp43PromptSet {
    pub main_prompt: String,
    pub pressure_prompts: Vec<String>,
}

impl Default for Cp43PromptSet {
    fn default() -> Self {
        Cp43PromptSet {
            main_prompt: asset!("cp43/main.txt").trim_end().to_string(),
            pressure_prompts: vec![asset!("cp43/pressure-1.txt").trim_end().to_string()],
        }
    }
}

impl Cp43PromptSet {
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let cp = dir.join("cp43");
        Ok(Cp43PromptSet {
            main_prompt: read_required(&cp.join("main.txt"))?,
            pressure_prompts: read_numbered(&cp, "pressure-")?,
        })
    }

    pub fn from_transcript(transcript: &Transcript) -> Result<Self, PromptError> {
        let ops: Vec<&str> = transcript
            .operator_turns()
            .map(|t| t.text.as_str())
            .collect();
        if ops.is_empty() {
            return Err(PromptError::NotEnoughOperatorTurns {
                session_id: transcript.session_id.clone(),
                needed: 1,
                got: 0,
            });
        }
        Ok(Cp43PromptSet {
            main_prompt: ops[0].to_string(),
            pressure_prompts: ops[1..].iter().map(|s| s.to_string()).collect(),
        })
    }
}

fn read_required(path: &Path) -> Result<String, PromptError> {
    let text = fs::read_to_string(path).map_err(|source| PromptError::Io {
        name: path.display().to_string(),
        source,
    })?;
    let text = text.trim_end().to_string();
    check_non_empty(&path.display().to_string(), &text)?;
    Ok(text)
}

fn read_optional(path: &Path) -> Result<Option<String>, PromptError> {
    if !path.exists() {
        return Ok(None);
    }
    read_required(path).map(Some)
}

/// Read `<prefix>*.txt` files in sorted name order.
fn read_numbered(dir: &Path, prefix: &str) -> Result<Vec<String>, PromptError> {
    let mut paths: Vec<_> = match fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|e| e == "txt")
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with(prefix))
            })
            .collect(),
        Err(_) => return Ok(Vec::new()),
    };
    paths.sort();
    paths.iter().map(|p| read_required(p)).collect()
}

fn check_non_empty(name: &str, text: &str) -> Result<(), PromptError> {
    if text.trim().is_empty() {
        return Err(PromptError::Empty(name.to_string()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelTarget, Protocol, Role};

    #[test]
    fn defaults_are_non_empty_and_match_assets() {
        let vc = VcPromptSet::default();
        vc.validate().unwrap();
        assert!(vc.opening_prompt().contains(&vc.pass1));

        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../prompts");
        let from_dir = VcPromptSet::from_dir(&dir).unwrap();
        assert_eq!(from_dir.pass3, vc.pass3);

        let fd = FdPromptSet::from_dir(&dir).unwrap();
        assert_eq!(fd.probe_prompts.len(), 3);
        assert_eq!(fd.anchor_prompt, FdPromptSet::default().anchor_prompt);

        let cp = Cp43PromptSet::from_dir(&dir).unwrap();
        assert_eq!(cp.pressure_prompts.len(), 1);
    }

    #[test]
    fn prompts_derive_from_recorded_sessions() {
        let mut t = Transcript::new("s", "r", Protocol::Fdlite, ModelTarget::new("m"));
        t.push_turn(Role::Operator, "anchor please");
        t.push_turn(Role::Model, "anchor text");
        t.push_turn(Role::Operator, "trap");
        t.push_turn(Role::Model, "ACK");
        t.push_turn(Role::Operator, "probe one");
        t.push_turn(Role::Model, "reply");

        let fd = FdPromptSet::from_transcript(&t).unwrap();
        assert_eq!(fd.anchor_prompt, "anchor please");
        assert_eq!(fd.trap_prompt, "trap");
        assert_eq!(fd.probe_prompts, vec!["probe one".to_string()]);

        t.turns.truncate(2);
        assert!(FdPromptSet::from_transcript(&t).is_err());
    }
}
