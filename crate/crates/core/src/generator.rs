//! Context retrieval and generation-prompt assembly.
//!
//! For each operation step the planner produced, embed the description,
//! take the top-k chunks from the index, deduplicate across steps, and trim
//! to a character budget. The assembled request always carries the original
//! user prompt verbatim; retrieved chunks follow, labeled by symbol and kind.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ChunkKind, Corpus, DocChunk};
use crate::embed::{EmbedError, TextEmbedder};
use crate::gateway::{ChatMessage, ChatReply, ChatRequest, GatewayError, RequestProfile};
use crate::planner::OperationStep;
use crate::templates::TemplateSet;
use crate::vecindex::{IndexError, VectorIndex};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("hit {0} does not resolve to a corpus chunk (index/corpus mismatch)")]
    UnresolvedChunk(String),
    #[error("reply has no content")]
    EmptyReply,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Retrieval settings for one session.
#[derive(Debug, Clone)]
pub struct RetrievalConfig {
    /// Hits per operation step.
    pub k: usize,
    /// Upper bound on total retrieved characters per request.
    pub budget_chars: usize,
    /// Restrict retrieval to one chunk kind.
    pub kind_filter: Option<ChunkKind>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 5, budget_chars: 24_000, kind_filter: None }
    }
}

/// Chunks selected per step, deduplicated globally (first occurrence wins)
/// and trimmed to the character budget.
#[derive(Debug, Clone, Default)]
pub struct ContextBundle {
    pub selections: Vec<(OperationStep, Vec<DocChunk>)>,
    pub total_chars: usize,
}

impl ContextBundle {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn chunk_count(&self) -> usize {
        self.selections.iter().map(|(_, chunks)| chunks.len()).sum()
    }
}

/// Embed each step description, search the index, resolve hits against the
/// corpus, deduplicate, and drop lowest-scoring selections until the bundle
/// fits `budget_chars`.
pub fn retrieve_context(
    steps: &[OperationStep],
    index: &VectorIndex,
    corpus: &Corpus,
    embedder: &dyn TextEmbedder,
    config: &RetrievalConfig,
) -> Result<ContextBundle, GenerateError> {
    struct Candidate {
        step_pos: usize,
        score: f64,
        chunk: DocChunk,
    }

    let mut seen: std::collections::HashSet<String> = std::collections::HashSet::new();
    let mut candidates: Vec<Candidate> = Vec::new();

    for (step_pos, step) in steps.iter().enumerate() {
        let query = match embedder.embed(&step.description) {
            Ok(q) => q,
            // A description the embedder cannot use (e.g. punctuation-only
            // under the fallback) contributes no context.
            Err(EmbedError::EmptyText) => continue,
            Err(e) => return Err(e.into()),
        };
        // With a kind filter, rank everything and keep the top k of that
        // kind; the index is flat so the full scan is what search does
        // anyway.
        let fetch = if config.kind_filter.is_some() { index.len() } else { config.k };
        let hits = index.search(&query, fetch)?;
        let mut kept = 0usize;
        for hit in hits {
            if kept >= config.k {
                break;
            }
            let chunk = corpus
                .get(&hit.chunk_id)
                .ok_or_else(|| GenerateError::UnresolvedChunk(hit.chunk_id.clone()))?;
            if let Some(kind) = config.kind_filter {
                if chunk.kind != kind {
                    continue;
                }
            }
            kept += 1;
            if seen.insert(hit.chunk_id.clone()) {
                candidates.push(Candidate { step_pos, score: hit.score, chunk: chunk.clone() });
            }
        }
    }

    // Trim to budget: drop the lowest score first; ties drop the later step,
    // then the lexically larger id, so the result is deterministic.
    let mut total: usize = candidates.iter().map(|c| c.chunk.text.len()).sum();
    while total > config.budget_chars && !candidates.is_empty() {
        let mut worst = 0usize;
        for i in 1..candidates.len() {
            let (a, b) = (&candidates[i], &candidates[worst]);
            let a_key = (a.score, std::cmp::Reverse(a.step_pos), std::cmp::Reverse(&a.chunk.id));
            let b_key = (b.score, std::cmp::Reverse(b.step_pos), std::cmp::Reverse(&b.chunk.id));
            if a_key.partial_cmp(&b_key) == Some(std::cmp::Ordering::Less) {
                worst = i;
            }
        }
        total -= candidates[worst].chunk.text.len();
        candidates.remove(worst);
    }

    let mut bundle = ContextBundle { selections: Vec::new(), total_chars: total };
    for (step_pos, step) in steps.iter().enumerate() {
        let chunks: Vec<DocChunk> = candidates
            .iter()
            .filter(|c| c.step_pos == step_pos)
            .map(|c| c.chunk.clone())
            .collect();
        if !chunks.is_empty() {
            bundle.selections.push((step.clone(), chunks));
        }
    }
    Ok(bundle)
}

/// Render the retrieved chunks for inclusion in a prompt: each chunk under a
/// `### <symbol> (<kind>)` marker, in step order then score order.
pub fn render_context(bundle: &ContextBundle) -> String {
    if bundle.selections.is_empty() {
        return String::new();
    }
    let mut out = String::from("Reference material for the requested operations:\n");
    for (_, chunks) in &bundle.selections {
        for chunk in chunks {
            let label = chunk.symbol.as_deref().unwrap_or(&chunk.id);
            out.push_str(&format!("\n### {label} ({})\n{}\n", chunk.kind, chunk.text));
        }
    }
    out
}

/// Build the generation request. The system instruction demands exactly one
/// fenced code block; the user message is the original prompt verbatim
/// followed by the rendered context (empty in few-shot mode).
pub fn build_generation_request(
    user_prompt: &str,
    bundle: &ContextBundle,
    templates: &TemplateSet,
    profile: &RequestProfile,
) -> Result<ChatRequest, GatewayError> {
    let user = templates
        .generate
        .render_user(&[("user_prompt", user_prompt), ("context", &render_context(bundle))]);
    ChatRequest::new(
        profile,
        vec![
            ChatMessage::system(&templates.generate.system),
            ChatMessage::user(user.trim_end().to_string()),
        ],
    )
}

/// Where the script text came from in the reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptOrigin {
    FencedBlock,
    WholeReply,
}

/// A candidate script extracted from an LLM reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedScript {
    pub text: String,
    pub origin: ScriptOrigin,
    pub reply_digest: String,
}

/// Pull the script out of a reply: the first fenced code block, the longest
/// when there are several, or the whole reply when there are none.
pub fn extract_script(reply: &ChatReply) -> Result<GeneratedScript, GenerateError> {
    if reply.content.is_empty() {
        return Err(GenerateError::EmptyReply);
    }
    let blocks = fenced_blocks(&reply.content);
    // Longest block wins; the earliest wins ties (and trivially, a single
    // block is "the first").
    let mut best: Option<&String> = None;
    for block in blocks.iter().filter(|b| !b.is_empty()) {
        if best.is_none_or(|current| block.len() > current.len()) {
            best = Some(block);
        }
    }
    let best = best.cloned();
    Ok(match best {
        Some(text) => GeneratedScript {
            text,
            origin: ScriptOrigin::FencedBlock,
            reply_digest: reply.digest(),
        },
        None => GeneratedScript {
            text: reply.content.clone(),
            origin: ScriptOrigin::WholeReply,
            reply_digest: reply.digest(),
        },
    })
}

/// Triple-backtick blocks; the language tag after the opening fence is
/// ignored. An unclosed fence runs to end of input.
fn fenced_blocks(content: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in content.lines() {
        let trimmed = line.trim_start();
        match current.as_mut() {
            None => {
                if trimmed.starts_with("```") {
                    current = Some(Vec::new());
                }
            }
            Some(lines) => {
                if trimmed.trim_end() == "```" {
                    blocks.push(lines.join("\n"));
                    current = None;
                } else {
                    lines.push(line);
                }
            }
        }
    }
    if let Some(lines) = current {
        blocks.push(lines.join("\n"));
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashedBowEmbedder;
    use crate::gateway::Usage;
    use proptest::prelude::*;

    fn reply(content: &str) -> ChatReply {
        ChatReply { content: content.into(), usage: Usage::default(), provider_id: "t".into() }
    }

    fn chunk(id: &str, symbol: Option<&str>, text: &str) -> DocChunk {
        DocChunk {
            id: id.into(),
            kind: if symbol.is_some() { ChunkKind::ApiDoc } else { ChunkKind::CodeSnippet },
            symbol: symbol.map(str::to_string),
            source_path: "doc.md".into(),
            text: text.into(),
            line_span: None,
        }
    }

    fn step(i: usize, description: &str) -> OperationStep {
        OperationStep { index: i, description: description.into(), api_hint: None }
    }

    fn fixture() -> (VectorIndex, Corpus, HashedBowEmbedder) {
        let embedder = HashedBowEmbedder::default();
        let chunks = vec![
            chunk("c1", Some("Contour"), "Contour creates an isosurface from point data"),
            chunk("c2", Some("Slice"), "Slice cuts the dataset with a plane"),
            chunk("c3", None, "screenshot = SaveScreenshot('out.png', view)"),
        ];
        let corpus = Corpus::new(chunks).unwrap();
        let index = VectorIndex::build(
            corpus.chunks().iter().map(|c| (c.id.as_str(), c.text.as_str())),
            &embedder,
        )
        .unwrap();
        (index, corpus, embedder)
    }

    #[test]
    fn no_steps_means_empty_bundle() {
        let (index, corpus, embedder) = fixture();
        let bundle =
            retrieve_context(&[], &index, &corpus, &embedder, &RetrievalConfig::default()).unwrap();
        assert_eq!(bundle.chunk_count(), 0);
        assert_eq!(bundle.total_chars, 0);
    }

    #[test]
    fn identical_text_is_the_top_hit_with_unit_score() {
        let (index, corpus, embedder) = fixture();
        let steps = vec![step(1, "Contour creates an isosurface from point data")];
        let bundle =
            retrieve_context(&steps, &index, &corpus, &embedder, &RetrievalConfig::default())
                .unwrap();
        let (_, chunks) = &bundle.selections[0];
        assert_eq!(chunks[0].id, "c1");
        // Identical bag of words means identical normalized vectors.
        let emb = embedder.embed("Contour creates an isosurface from point data").unwrap();
        let hits = index.search(&emb, 1).unwrap();
        assert!((hits[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_chunk_attributed_to_earlier_step() {
        let (index, corpus, embedder) = fixture();
        let steps = vec![
            step(1, "Contour creates an isosurface from point data"),
            step(2, "Contour creates an isosurface from point data"),
        ];
        let config = RetrievalConfig { k: 1, ..Default::default() };
        let bundle = retrieve_context(&steps, &index, &corpus, &embedder, &config).unwrap();
        assert_eq!(bundle.selections.len(), 1);
        assert_eq!(bundle.selections[0].0.index, 1);
        assert_eq!(bundle.chunk_count(), 1);
    }

    #[test]
    fn budget_drops_lowest_scores_first() {
        let (index, corpus, embedder) = fixture();
        let steps = vec![step(1, "Contour isosurface point data")];
        let tight = RetrievalConfig { k: 3, budget_chars: 50, ..Default::default() };
        let bundle = retrieve_context(&steps, &index, &corpus, &embedder, &tight).unwrap();
        assert!(bundle.total_chars <= 50);
        // The best-matching chunk survives.
        assert!(bundle
            .selections
            .iter()
            .any(|(_, chunks)| chunks.iter().any(|c| c.id == "c1")));
    }

    #[test]
    fn unresolved_hit_is_an_error() {
        let (index, _, embedder) = fixture();
        let corpus = Corpus::new(vec![]).unwrap();
        let steps = vec![step(1, "Contour isosurface")];
        let err =
            retrieve_context(&steps, &index, &corpus, &embedder, &RetrievalConfig::default());
        assert!(matches!(err, Err(GenerateError::UnresolvedChunk(_))));
    }

    #[test]
    fn kind_filter_restricts_hits() {
        let (index, corpus, embedder) = fixture();
        let steps = vec![step(1, "SaveScreenshot out png view screenshot")];
        let config = RetrievalConfig {
            k: 3,
            kind_filter: Some(ChunkKind::ApiDoc),
            ..Default::default()
        };
        let bundle = retrieve_context(&steps, &index, &corpus, &embedder, &config).unwrap();
        for (_, chunks) in &bundle.selections {
            assert!(chunks.iter().all(|c| c.kind == ChunkKind::ApiDoc));
        }
    }

    #[test]
    fn generation_request_contains_prompt_and_labeled_chunks() {
        let (index, corpus, embedder) = fixture();
        let templates = TemplateSet::builtin();
        let steps = vec![step(1, "Contour creates an isosurface from point data")];
        let bundle =
            retrieve_context(&steps, &index, &corpus, &embedder, &RetrievalConfig::default())
                .unwrap();
        let prompt = "Contour the dataset at 0.5 and save a screenshot.";
        let request =
            build_generation_request(prompt, &bundle, &templates, &RequestProfile::default())
                .unwrap();
        let user = &request.messages[1].content;
        assert!(user.contains(prompt));
        assert!(user.contains("### Contour (api-doc)"));
    }

    #[test]
    fn empty_bundle_still_builds_a_valid_request() {
        let templates = TemplateSet::builtin();
        let request = build_generation_request(
            "Render a sphere.",
            &ContextBundle::empty(),
            &templates,
            &RequestProfile::default(),
        )
        .unwrap();
        assert!(request.messages[1].content.contains("Render a sphere."));
        assert!(request.messages[0].content.contains("one fenced code block"));
    }

    #[test]
    fn system_message_is_stable_across_calls() {
        let templates = TemplateSet::builtin();
        let make = |prompt: &str| {
            build_generation_request(
                prompt,
                &ContextBundle::empty(),
                &templates,
                &RequestProfile::default(),
            )
            .unwrap()
            .messages[0]
                .content
                .clone()
        };
        assert_eq!(make("a"), make("b"));
    }

    #[test]
    fn single_fenced_block_extracts_inner_text() {
        let r = reply("Here you go:\n```python\nfrom x import *\n```\nGood luck!");
        let script = extract_script(&r).unwrap();
        assert_eq!(script.text, "from x import *");
        assert_eq!(script.origin, ScriptOrigin::FencedBlock);
    }

    #[test]
    fn longest_of_multiple_blocks_wins() {
        let long_body = "y = 2\n".repeat(30);
        let r = reply(&format!("```\nx = 1\n```\ntext\n```python\n{long_body}```"));
        let script = extract_script(&r).unwrap();
        assert!(script.text.starts_with("y = 2"));
        assert!(script.text.len() > 100);
    }

    #[test]
    fn no_fences_falls_back_to_whole_reply() {
        let r = reply("print('hello')");
        let script = extract_script(&r).unwrap();
        assert_eq!(script.text, "print('hello')");
        assert_eq!(script.origin, ScriptOrigin::WholeReply);
    }

    #[test]
    fn empty_reply_is_an_error() {
        assert!(matches!(extract_script(&reply("")), Err(GenerateError::EmptyReply)));
    }

    #[test]
    fn unclosed_fence_runs_to_end() {
        let r = reply("```py\nx = 1\ny = 2");
        let script = extract_script(&r).unwrap();
        assert_eq!(script.text, "x = 1\ny = 2");
        assert_eq!(script.origin, ScriptOrigin::FencedBlock);
    }

    proptest! {
        /// Bundles never exceed the character budget.
        #[test]
        fn budget_is_always_respected(budget in 1usize..200, k in 1usize..4) {
            let (index, corpus, embedder) = fixture();
            let steps = vec![
                step(1, "Contour isosurface point data"),
                step(2, "Slice plane dataset"),
                step(3, "SaveScreenshot view"),
            ];
            let config = RetrievalConfig { k, budget_chars: budget, kind_filter: None };
            let bundle = retrieve_context(&steps, &index, &corpus, &embedder, &config).unwrap();
            prop_assert!(bundle.total_chars <= budget);
            let recount: usize = bundle
                .selections
                .iter()
                .flat_map(|(_, chunks)| chunks.iter())
                .map(|c| c.text.len())
                .sum();
            prop_assert_eq!(recount, bundle.total_chars);
        }

        /// Non-empty replies always extract non-empty script text.
        #[test]
        fn extraction_is_total(content in ".{1,300}") {
            let script = extract_script(&reply(&content)).unwrap();
            prop_assert!(!script.text.is_empty());
        }
    }
}
