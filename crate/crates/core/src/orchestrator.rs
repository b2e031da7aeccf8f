//! Drive one full generation session: decompose (RAG mode), retrieve,
//! generate, execute, and iterate correction until success or the iteration
//! cap.
//!
//! Correction requests are fresh requests carrying full state (the previous
//! script, the extracted error records verbatim, and (in RAG mode) context
//! re-retrieved for the failing symbols) rather than a growing chat
//! history, so the inference context stays bounded across iterations.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embed::TextEmbedder;
use crate::executor::{self, ExecConfig, ExecError, ExecutionResult, TracebackRecord};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, RequestProfile};
use crate::generator::{
    self, ContextBundle, GeneratedScript, GenerateError, RetrievalConfig,
};
use crate::planner::{self, DecompositionPlan, OperationStep, PlanError};
use crate::templates::TemplateSet;
use crate::vecindex::VectorIndex;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("rag mode requires an index and corpus")]
    RagRequiresRetrieval,
    #[error("correction request needs at least one error record")]
    NoErrors,
    #[error(transparent)]
    Retrieval(#[from] GenerateError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pipeline mode: retrieval-augmented, or the few-shot baseline that sees
/// only the user prompt and the correction loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rag,
    Fewshot,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Rag => write!(f, "rag"),
            Mode::Fewshot => write!(f, "fewshot"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    /// Last attempt executed cleanly and produced the expected artifact.
    Success,
    /// Every allowed attempt failed.
    Exhausted,
    /// The gateway gave up (after its retry policy) mid-session.
    GatewayFailure,
}

/// One generate→execute cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub script: GeneratedScript,
    pub result: ExecutionResult,
    /// Digest of the correction request built from this attempt's errors,
    /// when a further attempt was made.
    pub correction_request_digest: Option<String>,
}

/// Full record of one prompt→script run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSession {
    pub user_prompt: String,
    pub mode: Mode,
    pub plan: Option<DecompositionPlan>,
    pub attempts: Vec<Attempt>,
    pub status: SessionStatus,
    /// Gateway error detail when status is GatewayFailure.
    pub failure_reason: Option<String>,
    pub total_wall_secs: f64,
}

impl GenerationSession {
    /// Serialize to `session.json` inside a work dir.
    pub fn save(&self, work_dir: &Path) -> Result<(), std::io::Error> {
        let path = work_dir.join("session.json");
        let text = serde_json::to_string_pretty(self).expect("session serializes");
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub mode: Mode,
    /// Maximum generate→execute cycles per session.
    pub max_iterations: usize,
    pub exec: ExecConfig,
    pub retrieval: RetrievalConfig,
    pub profile: RequestProfile,
}

impl SessionConfig {
    pub fn new(mode: Mode, exec: ExecConfig) -> Self {
        Self {
            mode,
            max_iterations: 5,
            exec,
            retrieval: RetrievalConfig::default(),
            profile: RequestProfile::default(),
        }
    }
}

/// Retrieval backends, required in RAG mode only.
pub struct Retrieval<'a> {
    pub index: &'a VectorIndex,
    pub corpus: &'a Corpus,
    pub embedder: &'a dyn TextEmbedder,
}

/// Everything a session talks to.
pub struct Services<'a> {
    pub gateway: &'a Gateway,
    pub retrieval: Option<Retrieval<'a>>,
    pub templates: &'a TemplateSet,
}

/// Build the correction request: the full previous script, every error
/// record verbatim, the fenced-block instruction, and extra context chunks
/// when provided.
pub fn build_correction_request(
    previous: &GeneratedScript,
    errors: &[TracebackRecord],
    extra_context: Option<&ContextBundle>,
    templates: &TemplateSet,
    profile: &RequestProfile,
) -> Result<ChatRequest, SessionError> {
    if errors.is_empty() {
        return Err(SessionError::NoErrors);
    }
    let errors_text =
        errors.iter().map(TracebackRecord::as_text).collect::<Vec<_>>().join("\n\n");
    let context = extra_context.map(generator::render_context).unwrap_or_default();
    let user = templates.correct.render_user(&[
        ("script", previous.text.as_str()),
        ("errors", errors_text.as_str()),
        ("context", context.as_str()),
    ]);
    ChatRequest::new(
        profile,
        vec![
            ChatMessage::system(&templates.correct.system),
            ChatMessage::user(user.trim_end().to_string()),
        ],
    )
    .map_err(|e| match e {
        GatewayError::InvalidRequest(msg) => SessionError::Retrieval(GenerateError::Gateway(
            GatewayError::InvalidRequest(msg),
        )),
        other => SessionError::Retrieval(GenerateError::Gateway(other)),
    })
}

/// Queries for correction-time re-retrieval: the error class and message,
/// plus the failing source line when the record has one.
fn correction_steps(errors: &[TracebackRecord]) -> Vec<OperationStep> {
    let mut steps = Vec::new();
    for record in errors {
        let mut texts = vec![format!("{} {}", record.error_class, record.error_message)];
        // The line between the frames and the terminator is the failing call.
        if record.lines.len() >= 3 {
            let body = &record.lines[1..record.lines.len() - 1];
            if let Some(line) = body.iter().rev().map(|l| l.trim()).find(|l| !l.is_empty()) {
                texts.push(line.to_string());
            }
        }
        for text in texts {
            steps.push(OperationStep {
                index: steps.len() + 1,
                description: text,
                api_hint: None,
            });
        }
    }
    steps
}

/// Run a full session. Gateway failures become the session status; setup
/// failures (missing retrieval services, unusable work dir, index/corpus
/// mismatch) are errors.
pub fn run_session(
    user_prompt: &str,
    config: &SessionConfig,
    services: &Services<'_>,
) -> Result<GenerationSession, SessionError> {
    let started = std::time::Instant::now();
    let mut session = GenerationSession {
        user_prompt: user_prompt.to_string(),
        mode: config.mode,
        plan: None,
        attempts: Vec::new(),
        status: SessionStatus::GatewayFailure,
        failure_reason: None,
        total_wall_secs: 0.0,
    };

    let retrieval = match config.mode {
        Mode::Rag => {
            Some(services.retrieval.as_ref().ok_or(SessionError::RagRequiresRetrieval)?)
        }
        Mode::Fewshot => None,
    };

    // RAG mode: decompose the prompt and retrieve context per step.
    let bundle = if let Some(retrieval) = retrieval {
        let request =
            build_decomposition_request_checked(user_prompt, services.templates, &config.profile)?;
        let reply = match services.gateway.complete(&request) {
            Ok(r) => r,
            Err(e) => return Ok(finish_gateway_failure(session, e, started)),
        };
        let steps = match planner::parse_expansion(&reply.content) {
            Ok(steps) => {
                session.plan = Some(DecompositionPlan {
                    user_prompt: user_prompt.to_string(),
                    steps: steps.clone(),
                    raw_expansion: reply.content.clone(),
                });
                steps
            }
            // An empty expansion leaves nothing to retrieve for; generation
            // proceeds on the user prompt alone.
            Err(PlanError::NoOperations) => Vec::new(),
        };
        generator::retrieve_context(
            &steps,
            retrieval.index,
            retrieval.corpus,
            retrieval.embedder,
            &config.retrieval,
        )?
    } else {
        ContextBundle::empty()
    };

    let mut request = generator::build_generation_request(
        user_prompt,
        &bundle,
        services.templates,
        &config.profile,
    )
    .map_err(GenerateError::Gateway)
    .map_err(SessionError::Retrieval)?;

    let cap = config.max_iterations.max(1);
    for attempt_no in 1..=cap {
        let reply = match services.gateway.complete(&request) {
            Ok(r) => r,
            Err(e) => return Ok(finish_gateway_failure(session, e, started)),
        };
        let script = match generator::extract_script(&reply) {
            Ok(s) => s,
            Err(e) => return Ok(finish_gateway_failure(session, e, started)),
        };

        // A failed earlier attempt may have left a stale artifact behind;
        // remove it so "present in artifacts" means produced by this run.
        if let Some(name) = &config.exec.expected_artifact {
            let stale = config.exec.work_dir.join(name);
            if stale.exists() {
                let _ = std::fs::remove_file(&stale);
            }
        }

        let result = executor::run_script(&script, &config.exec)?;
        let artifact_ok = config
            .exec
            .expected_artifact
            .as_ref()
            .map(|name| result.artifacts.iter().any(|a| a == name))
            .unwrap_or(true);

        if result.success() && artifact_ok {
            session.attempts.push(Attempt {
                script,
                result,
                correction_request_digest: None,
            });
            session.status = SessionStatus::Success;
            session.total_wall_secs = started.elapsed().as_secs_f64();
            return Ok(session);
        }

        if attempt_no == cap {
            session.attempts.push(Attempt {
                script,
                result,
                correction_request_digest: None,
            });
            session.status = SessionStatus::Exhausted;
            session.total_wall_secs = started.elapsed().as_secs_f64();
            return Ok(session);
        }

        let mut errors = result.tracebacks.clone();
        if errors.is_empty() {
            // Clean run that nevertheless failed the artifact check.
            let name = config.exec.expected_artifact.as_deref().unwrap_or("output");
            errors.push(TracebackRecord {
                lines: vec![],
                error_class: "MissingArtifactError".into(),
                error_message: format!("the script must write the output file '{name}'"),
                locations: vec![],
            });
        }

        let extra_context = if let Some(retrieval) = retrieval {
            let steps = correction_steps(&errors);
            Some(generator::retrieve_context(
                &steps,
                retrieval.index,
                retrieval.corpus,
                retrieval.embedder,
                &config.retrieval,
            )?)
        } else {
            None
        };

        let correction = build_correction_request(
            &script,
            &errors,
            extra_context.as_ref(),
            services.templates,
            &config.profile,
        )?;
        session.attempts.push(Attempt {
            script,
            result,
            correction_request_digest: Some(correction.canonical_digest()),
        });
        request = correction;
    }

    unreachable!("loop returns on success, exhaustion, or gateway failure");
}

fn build_decomposition_request_checked(
    user_prompt: &str,
    templates: &TemplateSet,
    profile: &RequestProfile,
) -> Result<ChatRequest, SessionError> {
    planner::build_decomposition_request(user_prompt, templates, profile)
        .map_err(GenerateError::Gateway)
        .map_err(SessionError::Retrieval)
}

fn finish_gateway_failure(
    mut session: GenerationSession,
    error: impl std::fmt::Display,
    started: std::time::Instant,
) -> GenerationSession {
    session.status = SessionStatus::GatewayFailure;
    session.failure_reason = Some(error.to_string());
    session.total_wall_secs = started.elapsed().as_secs_f64();
    session
}
