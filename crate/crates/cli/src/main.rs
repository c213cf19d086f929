//! vc-harness: run, audit, and report the VC / FD-Lite / CP4.3 chat
//! protocols over live, scripted, or replayed sessions.
//!
//! Exit status contract: 0 on success, 1 when protocol violations were
//! detected (a finding, not a crash), 2 on configuration, transport, or
//! corpus errors. Transcripts are written before any analysis output so a
//! failing analysis never loses session data.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::HarnessConfig;
use vc_harness_core::cp43::{run_cp43, Cp43RunError, EXPECTED_RANK};
use vc_harness_core::fdlite::{audit_transcript, run_fdlite, FdInvariants, MarkerConfig};
use vc_harness_core::model::{Protocol, Transcript};
use vc_harness_core::prompts::{Cp43PromptSet, FdPromptSet, VcPromptSet};
use vc_harness_core::report::{build_report, emit, ReportConfig, ReportFormat};
use vc_harness_core::transport::{ChatTransport, MockScript, MockTransport, ReplayTransport};
use vc_harness_core::vc::{run_ablation, run_vc, AblationOutcome, AblationVariant, VcOutcome};
use vc_harness_core::{load_corpus, save_corpus};

#[derive(Parser)]
#[command(
    name = "vc-harness",
    version,
    about = "Protocol harness for behavioral chat-session audits"
)]
struct Cli {
    /// Harness config file (default: harness.json if present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportArg {
    Live,
    Mock,
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    A,
    B,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Markdown,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Model name; matched against configured models, else used as-is.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum, default_value = "mock")]
    transport: TransportArg,
    /// Recorded sessions to replay (file or directory), replay mode only.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Mock script JSON ({"rules":[{"contains":...,"reply":...}],...}).
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Prompt template directory (default: config prompt_dir).
    #[arg(long)]
    prompt_dir: Option<PathBuf>,
    /// Directory receiving one transcript JSONL per session.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Independent sessions to run concurrently (replay fan-out).
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the three-pass calibration protocol and parse the trajectory.
    RunVc(RunArgs),
    /// Run a single-pass ablation variant and parse its one value.
    RunAblation {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the anchor/trap audit session and compute marker metrics.
    RunFdlite(RunArgs),
    /// Run repeated rank/allocation sessions and aggregate stability.
    RunCp43 {
        /// Number of independent sessions (replay default: fixture count).
        #[arg(long)]
        repeats: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Audit recorded FD-Lite sessions in a transcript corpus.
    Audit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        marker_config: Option<PathBuf>,
    },
    /// Aggregate a corpus into the study report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
        /// Report file path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a corpus against the transcript format and its invariants.
    ValidateCorpus {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

/// 0 = clean, 1 = protocol violations detected, 2 = operational error.
enum Status {
    Clean,
    Violations,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::Violations) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<Status> {
    let config = HarnessConfig::load(cli.config.as_deref())?;
    let out_dir = |args: &RunArgs| {
        args.out
            .clone()
            .unwrap_or_else(|| config.output_dir.clone())
    };

    match cli.command {
        Command::RunVc(args) => cmd_run_vc(&config, &out_dir(&args), &args),
        Command::RunAblation { variant, run } => {
            cmd_run_ablation(&config, &out_dir(&run), &run, variant)
        }
        Command::RunFdlite(args) => cmd_run_fdlite(&config, &out_dir(&args), &args),
        Command::RunCp43 { repeats, run } => cmd_run_cp43(&config, &out_dir(&run), &run, repeats),
        Command::Audit {
            input,
            marker_config,
        } => cmd_audit(&config, &input, marker_config.as_deref()),
        Command::Report { input, format, out } => {
            cmd_report(&config, &input, format, out.as_deref())
        }
        Command::ValidateCorpus { input } => cmd_validate(&input),
    }
}

// ── shared plumbing ──────────────────────────────────────────────────────

fn write_transcript(out_dir: &Path, transcript: &Transcript) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;
    let path = out_dir.join(format!("{}.jsonl", transcript.session_id));
    save_corpus(std::slice::from_ref(transcript), &path)?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

fn load_replay_fixtures(args: &RunArgs, protocols: &[Protocol]) -> Result<Vec<Transcript>> {
    let path = args
        .fixtures
        .as_ref()
        .context("--fixtures is required with --transport replay")?;
    let corpus = load_corpus(path)?;
    let selected: Vec<Transcript> = corpus
        .into_iter()
        .filter(|t| protocols.contains(&t.protocol))
        .collect();
    if selected.is_empty() {
        bail!(
            "no sessions with protocol {:?} under {}",
            protocols.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
            path.display()
        );
    }
    Ok(selected)
}

fn build_scripted_transport(
    config: &HarnessConfig,
    args: &RunArgs,
) -> Result<Box<dyn ChatTransport>> {
    match args.transport {
        TransportArg::Live => Ok(Box::new(
            vc_harness_core::transport::live::LiveTransport::new(config.transport.clone())?,
        )),
        TransportArg::Mock => {
            let script = match &args.mock_script {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .with_context(|| format!("reading mock script {}", path.display()))?;
                    serde_json::from_str::<MockScript>(&text)
                        .with_context(|| format!("parsing mock script {}", path.display()))?
                }
                None => MockScript::default(),
            };
            Ok(Box::new(MockTransport::new(
                script,
                config.seed.unwrap_or(0),
            )))
        }
        TransportArg::Replay => bail!("replay transports are built per fixture"),
    }
}

fn prompt_dir<'a>(config: &'a HarnessConfig, args: &'a RunArgs) -> &'a Path {
    args.prompt_dir.as_deref().unwrap_or(&config.prompt_dir)
}

fn vc_prompts(config: &HarnessConfig, args: &RunArgs) -> Result<VcPromptSet> {
    let dir = prompt_dir(config, args);
    if dir.exists() {
        Ok(VcPromptSet::from_dir(dir)?)
    } else if args.prompt_dir.is_none() && dir == Path::new("prompts") {
        eprintln!(
            "prompt dir {} not found; using built-in templates",
            dir.display()
        );
        Ok(VcPromptSet::default())
    } else {
        bail!("prompt dir {} does not exist", dir.display());
    }
}

fn fd_prompts(config: &HarnessConfig, args: &RunArgs) -> Result<FdPromptSet> {
    let dir = prompt_dir(config, args);
    if dir.exists() {
        Ok(FdPromptSet::from_dir(dir)?)
    } else if args.prompt_dir.is_none() && dir == Path::new("prompts") {
        eprintln!(
            "prompt dir {} not found; using built-in templates",
            dir.display()
        );
        Ok(FdPromptSet::default())
    } else {
        bail!("prompt dir {} does not exist", dir.display());
    }
}

fn cp43_prompts(config: &HarnessConfig, args: &RunArgs) -> Result<Cp43PromptSet> {
    let dir = prompt_dir(config, args);
    if dir.exists() {
        Ok(Cp43PromptSet::from_dir(dir)?)
    } else if args.prompt_dir.is_none() && dir == Path::new("prompts") {
        eprintln!(
            "prompt dir {} not found; using built-in templates",
            dir.display()
        );
        Ok(Cp43PromptSet::default())
    } else {
        bail!("prompt dir {} does not exist", dir.display());
    }
}

fn marker_config_from(config: &HarnessConfig, flag: Option<&Path>) -> Result<MarkerConfig> {
    let path = flag.or(config.marker_config.as_deref());
    match path {
        Some(path) => Ok(MarkerConfig::from_path(path)?),
        None => Ok(MarkerConfig::default()),
    }
}

/// Run one job per fixture, at most `parallel` at a time, preserving
/// fixture order in the results.
fn fan_out<T: Send>(
    fixtures: &[Transcript],
    parallel: usize,
    job: impl Fn(&Transcript) -> T + Sync,
) -> Vec<T> {
    let width = parallel.max(1);
    let mut results: Vec<Option<T>> = Vec::new();
    results.resize_with(fixtures.len(), || None);

    for (chunk_index, chunk) in fixtures.chunks(width).enumerate() {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|fixture| scope.spawn(|| job(fixture)))
                .collect();
            for (offset, handle) in handles.into_iter().enumerate() {
                results[chunk_index * width + offset] =
                    Some(handle.join().expect("session job must not panic"));
            }
        });
    }
    results.into_iter().map(|r| r.expect("filled")).collect()
}

// ── run-vc ───────────────────────────────────────────────────────────────

fn cmd_run_vc(config: &HarnessConfig, out_dir: &Path, args: &RunArgs) -> Result<Status> {
    let mut violations = 0usize;

    if args.transport == TransportArg::Replay {
        let fixtures = load_replay_fixtures(args, &[Protocol::Vc])?;
        let runs = fan_out(&fixtures, args.parallel, |fixture| {
            let replay = ReplayTransport::new(fixture)?;
            let prompts = VcPromptSet::from_transcript(fixture)?;
            let model = config.resolve_model(args.model.as_deref(), Some(&fixture.model))?;
            Ok::<_, anyhow::Error>(run_vc(&replay, &prompts, &model)?)
        });
        for run in runs {
            let run = run?;
            write_transcript(out_dir, &run.transcript)?;
            violations += print_vc_outcome(&run.transcript, &run.outcome);
        }
    } else {
        let transport = build_scripted_transport(config, args)?;
        let prompts = vc_prompts(config, args)?;
        let model = config.resolve_model(args.model.as_deref(), None)?;
        match run_vc(transport.as_ref(), &prompts, &model) {
            Ok(run) => {
                write_transcript(out_dir, &run.transcript)?;
                violations += print_vc_outcome(&run.transcript, &run.outcome);
            }
            Err(e) => {
                write_transcript(out_dir, &e.partial)?;
                return Err(e.source.into());
            }
        }
    }

    Ok(if violations > 0 {
        Status::Violations
    } else {
        Status::Clean
    })
}

fn print_vc_outcome(transcript: &Transcript, outcome: &VcOutcome) -> usize {
    match outcome {
        VcOutcome::Calibrated(trajectory) => {
            println!(
                "{}",
                json!({
                    "session_id": transcript.session_id,
                    "model": transcript.model.name,
                    "trajectory": trajectory.to_string(),
                    "t0": trajectory.t0,
                    "t1": trajectory.t1,
                    "t2": trajectory.t2,
                    "mode": trajectory.mode,
                    "monotone": trajectory.monotone,
                })
            );
            0
        }
        VcOutcome::Violation { detail } => {
            println!(
                "{}",
                json!({
                    "session_id": transcript.session_id,
                    "model": transcript.model.name,
                    "violation": detail,
                })
            );
            1
        }
    }
}

// ── run-ablation ─────────────────────────────────────────────────────────

fn cmd_run_ablation(
    config: &HarnessConfig,
    out_dir: &Path,
    args: &RunArgs,
    variant: VariantArg,
) -> Result<Status> {
    let variant = match variant {
        VariantArg::A => AblationVariant::A,
        VariantArg::B => AblationVariant::B,
    };
    let mut violations = 0usize;

    if args.transport == TransportArg::Replay {
        let fixtures = load_replay_fixtures(args, &[variant.protocol()])?;
        for fixture in &fixtures {
            let replay = ReplayTransport::new(fixture)?;
            let prompts = ablation_prompts_from(fixture, variant)?;
            let model = config.resolve_model(args.model.as_deref(), Some(&fixture.model))?;
            let run = run_ablation(&replay, &prompts, &model, variant)
                .map_err(|e| anyhow::Error::from(e.source))?;
            write_transcript(out_dir, &run.transcript)?;
            violations += print_ablation_outcome(&run.transcript, variant, &run.outcome);
        }
    } else {
        let transport = build_scripted_transport(config, args)?;
        let prompts = vc_prompts(config, args)?;
        let model = config.resolve_model(args.model.as_deref(), None)?;
        match run_ablation(transport.as_ref(), &prompts, &model, variant) {
            Ok(run) => {
                write_transcript(out_dir, &run.transcript)?;
                violations += print_ablation_outcome(&run.transcript, variant, &run.outcome);
            }
            Err(e) => {
                write_transcript(out_dir, &e.partial)?;
                return Err(e.source.into());
            }
        }
    }

    Ok(if violations > 0 {
        Status::Violations
    } else {
        Status::Clean
    })
}

/// Replay prompt set for an ablation fixture: its recorded operator turn
/// becomes the single-pass template for the requested variant.
fn ablation_prompts_from(fixture: &Transcript, variant: AblationVariant) -> Result<VcPromptSet> {
    let first = fixture
        .operator_turns()
        .next()
        .with_context(|| format!("{} has no operator turns", fixture.session_id))?;
    let mut prompts = VcPromptSet {
        framing: None,
        ..VcPromptSet::default()
    };
    match variant {
        AblationVariant::A => prompts.single_pass_a = first.text.clone(),
        AblationVariant::B => prompts.single_pass_b = first.text.clone(),
    }
    Ok(prompts)
}

fn print_ablation_outcome(
    transcript: &Transcript,
    variant: AblationVariant,
    outcome: &AblationOutcome,
) -> usize {
    match outcome {
        AblationOutcome::Measured(result) => {
            println!(
                "{}",
                json!({
                    "session_id": transcript.session_id,
                    "model": transcript.model.name,
                    "variant": variant.to_string(),
                    "t_star": result.t_star,
                })
            );
            0
        }
        AblationOutcome::Violation { detail } => {
            println!(
                "{}",
                json!({
                    "session_id": transcript.session_id,
                    "model": transcript.model.name,
                    "variant": variant.to_string(),
                    "violation": detail,
                })
            );
            1
        }
    }
}

// ── run-fdlite ───────────────────────────────────────────────────────────

fn cmd_run_fdlite(config: &HarnessConfig, out_dir: &Path, args: &RunArgs) -> Result<Status> {
    let invariants = FdInvariants::default();
    let markers = marker_config_from(config, None)?;
    let mut failures = 0usize;

    if args.transport == TransportArg::Replay {
        let fixtures = load_replay_fixtures(args, &[Protocol::Fdlite])?;
        let runs = fan_out(&fixtures, args.parallel, |fixture| {
            let replay = ReplayTransport::new(fixture)?;
            let prompts = FdPromptSet::from_transcript(fixture)?;
            let model = config.resolve_model(args.model.as_deref(), Some(&fixture.model))?;
            Ok::<_, anyhow::Error>(run_fdlite(
                &replay,
                &prompts,
                &model,
                &invariants,
                &markers,
            )?)
        });
        for run in runs {
            let run = run?;
            write_transcript(out_dir, &run.transcript)?;
            failures += print_fd_audit(&run.transcript, &run.audit);
        }
    } else {
        let transport = build_scripted_transport(config, args)?;
        let prompts = fd_prompts(config, args)?;
        let model = config.resolve_model(args.model.as_deref(), None)?;
        match run_fdlite(transport.as_ref(), &prompts, &model, &invariants, &markers) {
            Ok(run) => {
                write_transcript(out_dir, &run.transcript)?;
                failures += print_fd_audit(&run.transcript, &run.audit);
            }
            Err(e) => {
                write_transcript(out_dir, &e.partial)?;
                return Err(e.source.into());
            }
        }
    }

    Ok(if failures > 0 {
        Status::Violations
    } else {
        Status::Clean
    })
}

fn print_fd_audit(transcript: &Transcript, audit: &vc_harness_core::fdlite::FdAudit) -> usize {
    println!(
        "{}",
        json!({
            "session_id": transcript.session_id,
            "model": transcript.model.name,
            "anchor_exact": audit.anchor_exact,
            "trap_ack": audit.trap_ack,
            "passed": audit.passed(),
            "pressure_markers": audit.score_display(),
        })
    );
    usize::from(!audit.passed())
}

// ── run-cp43 ─────────────────────────────────────────────────────────────

fn cmd_run_cp43(
    config: &HarnessConfig,
    out_dir: &Path,
    args: &RunArgs,
    repeats: Option<usize>,
) -> Result<Status> {
    let (transport, prompts, model, repeats): (Box<dyn ChatTransport>, _, _, _) =
        if args.transport == TransportArg::Replay {
            let fixtures = load_replay_fixtures(args, &[Protocol::Cp43])?;
            let repeats = repeats.unwrap_or(fixtures.len());
            let prompts = Cp43PromptSet::from_transcript(&fixtures[0])?;
            let model = config.resolve_model(args.model.as_deref(), Some(&fixtures[0].model))?;
            (
                Box::new(ReplayTransport::from_corpus(&fixtures)?),
                prompts,
                model,
                repeats,
            )
        } else {
            let transport = build_scripted_transport(config, args)?;
            let prompts = cp43_prompts(config, args)?;
            let model = config.resolve_model(args.model.as_deref(), None)?;
            (transport, prompts, model, repeats.unwrap_or(1))
        };

    let outcome = match run_cp43(
        transport.as_ref(),
        &prompts,
        &model,
        repeats,
        &EXPECTED_RANK,
    ) {
        Ok(outcome) => outcome,
        Err(Cp43RunError::Session {
            completed,
            partial,
            source,
        }) => {
            for t in &completed {
                write_transcript(out_dir, t)?;
            }
            write_transcript(out_dir, &partial)?;
            return Err(source.into());
        }
        Err(e @ Cp43RunError::ZeroRepeats) => return Err(e.into()),
    };

    // Durability first: all transcripts on disk before the summary.
    for t in &outcome.transcripts {
        write_transcript(out_dir, t)?;
    }
    for report in &outcome.analysis.per_run {
        eprintln!("{}", serde_json::to_string(report)?);
    }
    println!("{}", serde_json::to_string(&outcome.analysis.summary())?);

    Ok(if outcome.analysis.excluded > 0 {
        Status::Violations
    } else {
        Status::Clean
    })
}

// ── audit / report / validate ────────────────────────────────────────────

fn cmd_audit(config: &HarnessConfig, input: &Path, marker_flag: Option<&Path>) -> Result<Status> {
    let corpus = load_corpus(input)?;
    let invariants = FdInvariants::default();
    let markers = marker_config_from(config, marker_flag)?;

    let mut failures = 0usize;
    let mut audited = 0usize;
    for transcript in &corpus {
        if transcript.protocol != Protocol::Fdlite {
            continue;
        }
        audited += 1;
        let audit = audit_transcript(transcript, &invariants, &markers)?;
        failures += print_fd_audit(transcript, &audit);
    }
    eprintln!(
        "audited {audited} fdlite session(s) of {} total; {failures} failed",
        corpus.len()
    );

    Ok(if failures > 0 {
        Status::Violations
    } else {
        Status::Clean
    })
}

fn cmd_report(
    config: &HarnessConfig,
    input: &Path,
    format: FormatArg,
    report_out: Option<&Path>,
) -> Result<Status> {
    let corpus = load_corpus(input)?;
    let report_config = ReportConfig {
        invariants: FdInvariants::default(),
        markers: marker_config_from(config, None)?,
        expected_rank: None,
    };
    let report = build_report(&corpus, &report_config);
    let format = match format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Markdown => ReportFormat::Markdown,
    };
    let bytes = emit(&report, format)?;

    match report_out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, &bytes)
                .with_context(|| format!("writing report to {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes)?;
        }
    }
    Ok(Status::Clean)
}

fn cmd_validate(input: &Path) -> Result<Status> {
    let corpus = load_corpus(input)?;
    let turns: usize = corpus.iter().map(|t| t.turns.len()).sum();
    println!(
        "{}",
        json!({
            "sessions": corpus.len(),
            "turns": turns,
            "valid": true,
        })
    );
    Ok(Status::Clean)
}
