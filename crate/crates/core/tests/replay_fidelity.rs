//! Replay fidelity: driving a protocol engine over a replay transport must
//! re-derive byte-identical model texts to the recorded session.

use std::path::{Path, PathBuf};

use vc_harness_core::cp43::{run_cp43, EXPECTED_RANK};
use vc_harness_core::fdlite::{run_fdlite, FdInvariants, MarkerConfig};
use vc_harness_core::load_corpus;
use vc_harness_core::model::Transcript;
use vc_harness_core::prompts::{Cp43PromptSet, FdPromptSet, VcPromptSet};
use vc_harness_core::transport::{make_replay, ReplayTransport};
use vc_harness_core::vc::{run_vc, VcOutcome};

fn fixtures(name: &str) -> Vec<Transcript> {
    let dir: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    load_corpus(&dir).expect("fixtures load")
}

fn model_texts(t: &Transcript) -> Vec<&str> {
    t.model_turns().map(|turn| turn.text.as_str()).collect()
}

#[test]
fn vc_engine_over_replay_reproduces_model_texts() {
    for recorded in fixtures("vc") {
        let replay = make_replay(&recorded).unwrap();
        let prompts = VcPromptSet::from_transcript(&recorded).unwrap();
        let run = run_vc(&replay, &prompts, &recorded.model).unwrap();

        assert_eq!(
            model_texts(&run.transcript),
            model_texts(&recorded),
            "replayed {} must be byte-identical",
            recorded.session_id
        );
        match run.outcome {
            VcOutcome::Calibrated(trajectory) => assert!(trajectory.monotone),
            VcOutcome::Violation { detail } => {
                panic!("{} replay violated grammar: {detail}", recorded.session_id)
            }
        }
    }
}

#[test]
fn fd_engine_over_replay_reproduces_audit() {
    for recorded in fixtures("fdlite") {
        let replay = make_replay(&recorded).unwrap();
        let prompts = FdPromptSet::from_transcript(&recorded).unwrap();
        let run = run_fdlite(
            &replay,
            &prompts,
            &recorded.model,
            &FdInvariants::default(),
            &MarkerConfig::default(),
        )
        .unwrap();

        assert_eq!(model_texts(&run.transcript), model_texts(&recorded));
        assert!(run.audit.passed(), "{} invariants", recorded.session_id);

        if recorded.session_id == "fd-opus-1" {
            let trajectory: Vec<u8> = run
                .audit
                .per_turn_scores
                .as_ref()
                .expect("nine model turns give a trajectory")
                .iter()
                .map(|s| s.value)
                .collect();
            assert_eq!(trajectory, vec![2, 3, 3]);
        } else {
            assert_eq!(run.audit.score.value, 0);
        }
    }
}

#[test]
fn cp43_engine_over_corpus_replay_matches_recorded_runs() {
    let recorded = fixtures("cp43");
    assert_eq!(recorded.len(), 7);
    let replay = ReplayTransport::from_corpus(&recorded).unwrap();
    let prompts = Cp43PromptSet::from_transcript(&recorded[0]).unwrap();

    let outcome = run_cp43(&replay, &prompts, &recorded[0].model, 7, &EXPECTED_RANK).unwrap();
    assert_eq!(outcome.transcripts.len(), 7);
    for (replayed, original) in outcome.transcripts.iter().zip(&recorded) {
        assert_eq!(model_texts(replayed), model_texts(original));
    }

    assert_eq!(outcome.analysis.excluded, 0);
    let stability = outcome.analysis.stability.expect("seven valid runs");
    assert_eq!(stability.pairwise_tau_min, 1.0);
    assert!(stability.all_m6_pass);
    assert_eq!(stability.max_drift(), 1);
}
