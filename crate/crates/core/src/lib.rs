//! Pipeline for turning natural-language descriptions of scientific-visualization
//! tasks into executable scripts, with retrieval-augmented prompting and
//! traceback-driven self-correction.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`corpus`] - walk a documentation/snippet tree and chunk it into retrievable units
//! - [`embed`] - text embedding providers (deterministic offline fallback, remote)
//! - [`vecindex`] - exact cosine top-k search over embedded chunks, with persistence
//! - [`gateway`] - the single LLM boundary: chat completions over HTTP, plus
//!   deterministic transcript record/replay
//! - [`planner`] - decompose a user prompt into one-operation-per-line steps
//! - [`generator`] - retrieve context per step, assemble the generation prompt,
//!   extract the script from the reply
//! - [`executor`] - run a candidate script under the configured interpreter and
//!   parse tracebacks out of its output
//! - [`orchestrator`] - drive a full session: generate, execute, correct, repeat
//! - [`metrics`] - PSNR/SSIM natively, LPIPS via external plugin, pass@1 aggregation
//! - [`bench`] - load a task suite, run sessions across modes/variants, render reports
//!
//! The whole pipeline is testable offline: the gateway replays recorded
//! transcripts, the fallback embedder is a deterministic hashed bag-of-words,
//! and the interpreter command is configurable (any executable that accepts a
//! script path works, which is what the test fixtures use).

pub mod bench;
pub mod corpus;
pub mod embed;
pub mod executor;
pub mod gateway;
pub mod generator;
pub mod metrics;
pub mod orchestrator;
pub mod planner;
pub mod templates;
pub mod vecindex;
