//! Subcommand implementations.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context};

use chatvis_core::bench::{
    self, BenchConfig, BenchRetrieval, BenchServices, GatewaySource, RunMatrix,
};
use chatvis_core::corpus::{self, ChunkConfig, Corpus};
use chatvis_core::embed::{GatewayEmbedder, HashedBowEmbedder, TextEmbedder, FALLBACK_TAG};
use chatvis_core::executor::{self, ExecConfig};
use chatvis_core::gateway::{Gateway, Transcript};
use chatvis_core::generator::RetrievalConfig;
use chatvis_core::metrics::{self, ImageBuffer};
use chatvis_core::orchestrator::{self, Mode, SessionConfig, SessionStatus};
use chatvis_core::templates::TemplateSet;
use chatvis_core::vecindex::VectorIndex;

use crate::config::{self, FileConfig, Overrides, Settings};
use crate::{usage, BackendArg, BenchArgs, Cli, CliError, ExtractErrorsArgs, GenArgs, IngestArgs, ScoreArgs};

type CmdResult = Result<(), CliError>;

fn load_settings(cli: &Cli, flags: Overrides) -> Result<Settings, CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    Ok(config::resolve(&file, &flags))
}

fn load_templates(dir: Option<&Path>) -> Result<TemplateSet, CliError> {
    match dir {
        Some(dir) => Ok(TemplateSet::from_dir(dir).map_err(anyhow::Error::from)?),
        None => Ok(TemplateSet::builtin()),
    }
}

/// Pick the query embedder matching an index's embedder tag.
fn embedder_for_tag(
    tag: &str,
    gateway: Option<&Arc<Gateway>>,
) -> Result<Box<dyn TextEmbedder>, CliError> {
    if tag == FALLBACK_TAG {
        return Ok(Box::new(HashedBowEmbedder::default()));
    }
    if let Some(dim) = tag.strip_prefix("fallback-v1-d").and_then(|d| d.parse::<usize>().ok()) {
        return Ok(Box::new(HashedBowEmbedder::with_dimension(dim)));
    }
    if let Some(rest) = tag.strip_prefix("remote:") {
        let model = rest.split(":d").next().unwrap_or(rest);
        let gateway = gateway.ok_or_else(|| {
            CliError::Failure(anyhow!(
                "index was built with remote embedder {tag:?}, which needs a remote backend"
            ))
        })?;
        return Ok(Box::new(GatewayEmbedder::new(Arc::clone(gateway), model)));
    }
    Err(CliError::Failure(anyhow!("unrecognized embedder tag {tag:?}")))
}

pub fn ingest(cli: &Cli, args: &IngestArgs) -> CmdResult {
    let settings = load_settings(cli, Overrides::default())?;
    let mut chunk_config = ChunkConfig {
        max_lines: args.max_lines,
        overlap_lines: args.overlap_lines,
        ..ChunkConfig::default()
    };
    if let Some(pattern) = &args.doc_heading {
        chunk_config.doc_heading = pattern.clone();
    }

    let build = corpus::chunk_docs(&args.docs, &chunk_config).map_err(anyhow::Error::from)?;
    for skip in &build.skipped {
        eprintln!("skipped {}: {}", skip.path.display(), skip.reason);
    }

    let corpus = build.corpus;
    let index = match args.embedder {
        crate::EmbedderArg::Fallback => {
            let embedder = HashedBowEmbedder::default();
            VectorIndex::build(
                corpus.chunks().iter().map(|c| (c.id.as_str(), c.text.as_str())),
                &embedder,
            )
            .map_err(anyhow::Error::from)?
        }
        crate::EmbedderArg::Remote => {
            let gateway = Arc::new(Gateway::remote(settings.remote.clone()));
            let embedder = GatewayEmbedder::new(gateway, &args.embed_model);
            VectorIndex::build(
                corpus.chunks().iter().map(|c| (c.id.as_str(), c.text.as_str())),
                &embedder,
            )
            .map_err(anyhow::Error::from)?
        }
    };

    if let Some(parent) = args.index.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
        }
    }
    let corpus_path = args
        .corpus
        .clone()
        .unwrap_or_else(|| args.index.parent().unwrap_or(Path::new(".")).join("corpus.jsonl"));
    corpus.save_jsonl(&corpus_path).map_err(anyhow::Error::from)?;
    index.save(&args.index).map_err(anyhow::Error::from)?;

    println!(
        "chunks={} dimension={} embedder={} fingerprint={} index={} corpus={}",
        corpus.len(),
        index.dimension(),
        index.embedder_tag(),
        corpus.source_fingerprint(),
        args.index.display(),
        corpus_path.display(),
    );
    Ok(())
}

fn build_gateway(
    backend: BackendArg,
    transcript: Option<&Path>,
    replay_match: crate::ReplayMatchArg,
    settings: &Settings,
) -> Result<Arc<Gateway>, CliError> {
    match backend {
        BackendArg::Remote => Ok(Arc::new(Gateway::remote(settings.remote.clone()))),
        BackendArg::Replay => {
            let path = transcript
                .ok_or_else(|| usage("--backend replay needs --transcript <file>"))?;
            let transcript = Transcript::load(path)
                .with_context(|| format!("loading transcript {}", path.display()))?;
            Ok(Arc::new(Gateway::replay(transcript, replay_match.into())))
        }
        BackendArg::Record => {
            let sink = transcript
                .ok_or_else(|| usage("--backend record needs --transcript <sink file>"))?;
            Ok(Arc::new(Gateway::record(settings.remote.clone(), sink.to_path_buf())))
        }
    }
}

fn load_retrieval(
    index_path: &Path,
    corpus_path: &Path,
    gateway: Option<&Arc<Gateway>>,
) -> Result<(VectorIndex, Corpus, Box<dyn TextEmbedder>), CliError> {
    let index = VectorIndex::load(index_path, None)
        .with_context(|| format!("loading index {}", index_path.display()))?;
    let corpus = Corpus::load_jsonl(corpus_path)
        .with_context(|| format!("loading corpus {}", corpus_path.display()))?;
    let embedder = embedder_for_tag(index.embedder_tag(), gateway)?;
    Ok((index, corpus, embedder))
}

pub fn gen(cli: &Cli, args: &GenArgs) -> CmdResult {
    let settings = load_settings(
        cli,
        Overrides {
            model: args.model.clone(),
            temperature: args.temperature,
            interpreter: args.interpreter.clone(),
            timeout: args.timeout,
            max_iterations: args.max_iterations,
            k: args.k,
            budget_chars: args.budget_chars,
        },
    )?;
    let mode: Mode = args.mode.into();
    if mode == Mode::Rag && (args.index.is_none() || args.corpus.is_none()) {
        return Err(usage("rag mode needs --index and --corpus (or use --mode fewshot)"));
    }

    let prompt = match (&args.prompt, &args.prompt_file) {
        (Some(p), _) => p.clone(),
        (None, Some(path)) => std::fs::read_to_string(path)
            .with_context(|| format!("reading prompt file {}", path.display()))?,
        (None, None) => unreachable!("clap group requires one"),
    };
    if prompt.trim().is_empty() {
        return Err(usage("the prompt is empty"));
    }

    let templates = load_templates(args.prompts_dir.as_deref())?;
    let gateway = build_gateway(args.backend, args.transcript.as_deref(), args.replay_match, &settings)?;

    let retrieval = if mode == Mode::Rag {
        let remote_capable = matches!(args.backend, BackendArg::Remote | BackendArg::Record);
        let (index, corpus, embedder) = load_retrieval(
            args.index.as_ref().unwrap(),
            args.corpus.as_ref().unwrap(),
            remote_capable.then_some(&gateway),
        )?;
        Some((index, corpus, embedder))
    } else {
        None
    };

    std::fs::create_dir_all(&args.out).map_err(anyhow::Error::from)?;
    let session_config = SessionConfig {
        mode,
        max_iterations: settings.max_iterations,
        exec: ExecConfig {
            interpreter_cmd: settings.interpreter_cmd.clone(),
            work_dir: args.out.clone(),
            timeout: settings.timeout,
            expected_artifact: args.expected_artifact.clone(),
        },
        retrieval: RetrievalConfig {
            k: settings.k,
            budget_chars: settings.budget_chars,
            kind_filter: args.kind_filter.map(Into::into),
        },
        profile: settings.profile.clone(),
    };
    let services = orchestrator::Services {
        gateway: &gateway,
        retrieval: retrieval.as_ref().map(|(index, corpus, embedder)| orchestrator::Retrieval {
            index,
            corpus,
            embedder: embedder.as_ref(),
        }),
        templates: &templates,
    };

    let session = orchestrator::run_session(prompt.trim_end(), &session_config, &services)
        .map_err(anyhow::Error::from)?;

    for (i, attempt) in session.attempts.iter().enumerate() {
        let path = args.out.join(format!("attempt_{}.py", i + 1));
        let _ = std::fs::write(path, &attempt.script.text);
    }
    session.save(&args.out).map_err(anyhow::Error::from)?;

    let artifacts: Vec<&str> = session
        .attempts
        .last()
        .map(|a| a.result.artifacts.iter().map(String::as_str).collect())
        .unwrap_or_default();
    println!(
        "status={:?} attempts={} artifacts={} session={}",
        session.status,
        session.attempts.len(),
        artifacts.join(","),
        args.out.join("session.json").display(),
    );

    match session.status {
        SessionStatus::Success => Ok(()),
        SessionStatus::Exhausted => Err(CliError::Failure(anyhow!(
            "no error-free script after {} attempts",
            session.attempts.len()
        ))),
        SessionStatus::GatewayFailure => Err(CliError::Failure(anyhow!(
            "gateway failure: {}",
            session.failure_reason.unwrap_or_default()
        ))),
    }
}

pub fn bench(cli: &Cli, args: &BenchArgs) -> CmdResult {
    let settings = load_settings(
        cli,
        Overrides {
            model: args.model.clone(),
            temperature: args.temperature,
            interpreter: args.interpreter.clone(),
            timeout: args.timeout,
            max_iterations: args.max_iterations,
            k: args.k,
            budget_chars: args.budget_chars,
        },
    )?;
    let modes: Vec<Mode> = args.modes.iter().map(|&m| m.into()).collect();
    let variants = args.variants.iter().map(|&v| v.into()).collect();

    if modes.contains(&Mode::Rag) && (args.index.is_none() || args.corpus.is_none()) {
        return Err(usage("running the rag mode needs --index and --corpus"));
    }

    let gateway_source = match args.backend {
        BackendArg::Remote => {
            GatewaySource::Shared(Arc::new(Gateway::remote(settings.remote.clone())))
        }
        BackendArg::Replay => {
            let dir = args
                .transcripts
                .as_ref()
                .ok_or_else(|| usage("--backend replay needs --transcripts <dir>"))?;
            GatewaySource::ReplayDir { dir: dir.clone(), mode: args.replay_match.into() }
        }
        BackendArg::Record => {
            return Err(usage("bench does not support --backend record; record with gen"));
        }
    };

    let retrieval = if modes.contains(&Mode::Rag) {
        let shared_remote = match &gateway_source {
            GatewaySource::Shared(g) => Some(g),
            GatewaySource::ReplayDir { .. } => None,
        };
        let (index, corpus, embedder) = load_retrieval(
            args.index.as_ref().unwrap(),
            args.corpus.as_ref().unwrap(),
            shared_remote,
        )?;
        Some(BenchRetrieval { index, corpus, embedder })
    } else {
        None
    };

    let load = bench::load_suite(&args.suite).map_err(anyhow::Error::from)?;
    for warning in &load.warnings {
        eprintln!("suite: {warning}");
    }
    let counts = load.category_counts();
    eprintln!(
        "suite: {} tasks (canonical={} regression={} science={})",
        load.tasks.len(),
        counts[0].1,
        counts[1].1,
        counts[2].1,
    );

    let services = BenchServices {
        gateway: gateway_source,
        retrieval,
        templates: load_templates(args.prompts_dir.as_deref())?,
    };
    let bench_config = BenchConfig {
        interpreter_cmd: settings.interpreter_cmd.clone(),
        timeout: settings.timeout,
        max_iterations: settings.max_iterations,
        retrieval: RetrievalConfig {
            k: settings.k,
            budget_chars: settings.budget_chars,
            kind_filter: args.kind_filter.map(Into::into),
        },
        profile: settings.profile.clone(),
        lpips_plugin: args.lpips_plugin.clone(),
        resize: args.resize,
        jobs: args.jobs,
        out_dir: args.out.clone(),
    };

    let report = bench::run_suite(&load.tasks, &RunMatrix { modes, variants }, &services, &bench_config)
        .map_err(anyhow::Error::from)?;
    for warning in &report.warnings {
        eprintln!("bench: {warning}");
    }
    bench::write_reports(&report, &args.out).map_err(anyhow::Error::from)?;

    for cell in &report.cells {
        println!(
            "cell mode={} variant={} pass_at_1={:.1} tasks={}",
            cell.mode,
            cell.variant,
            cell.aggregate.pass_at_1,
            cell.scores.len(),
        );
    }
    println!("reports={}", args.out.display());
    Ok(())
}

pub fn score(args: &ScoreArgs) -> CmdResult {
    let mut a = ImageBuffer::from_png(&args.image_a)
        .with_context(|| format!("reading {}", args.image_a.display()))?;
    let mut b = ImageBuffer::from_png(&args.image_b)
        .with_context(|| format!("reading {}", args.image_b.display()))?;
    if args.resize && (a.width, a.height) != (b.width, b.height) && a.channels == b.channels {
        let (w, h) = (a.width.min(b.width), a.height.min(b.height));
        if (a.width, a.height) != (w, h) {
            a = metrics::resize_nearest(&a, w, h);
        }
        if (b.width, b.height) != (w, h) {
            b = metrics::resize_nearest(&b, w, h);
        }
    }
    let psnr = metrics::psnr(&a, &b).map_err(anyhow::Error::from)?;
    let ssim = metrics::ssim(&a, &b).map_err(anyhow::Error::from)?;
    if psnr.is_infinite() {
        println!("psnr=inf");
    } else {
        println!("psnr={psnr:.6}");
    }
    println!("ssim={ssim:.6}");
    if let Some(template) = &args.lpips_plugin {
        let value = metrics::lpips(&args.image_a, &args.image_b, template)
            .map_err(anyhow::Error::from)?;
        println!("lpips={value}");
    }
    Ok(())
}

pub fn extract_errors(args: &ExtractErrorsArgs) -> CmdResult {
    let text = std::fs::read_to_string(&args.log)
        .with_context(|| format!("reading {}", args.log.display()))?;
    let records = executor::extract_tracebacks(&text);
    println!("{}", serde_json::to_string_pretty(&records).map_err(anyhow::Error::from)?);
    Ok(())
}
