//! Ingest visualization-tool documentation and code snippets from a source
//! tree and chunk them into retrievable units.
//!
//! Doc files are split at function-heading markers (one chunk per documented
//! function); snippet files are split into fixed-size line windows with
//! overlap. Chunking is a pure function of the file bytes and the config, so
//! identical trees always produce identical corpora.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus root not found: {0}")]
    RootNotFound(PathBuf),
    #[error("unreadable input: {0}")]
    UnreadableFile(PathBuf),
    #[error("invalid chunk config: {0}")]
    InvalidConfig(String),
    #[error("invalid chunk {id}: {reason}")]
    InvalidChunk { id: String, reason: String },
    #[error("malformed corpus line {0}: {1}")]
    MalformedLine(usize, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a chunk holds: a documented API entry or a runnable snippet window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChunkKind {
    #[serde(rename = "api-doc")]
    ApiDoc,
    #[serde(rename = "code-snippet")]
    CodeSnippet,
}

impl std::fmt::Display for ChunkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChunkKind::ApiDoc => write!(f, "api-doc"),
            ChunkKind::CodeSnippet => write!(f, "code-snippet"),
        }
    }
}

/// One retrievable unit of documentation or example code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ChunkWire", try_from = "ChunkWire")]
pub struct DocChunk {
    /// Unique within a corpus; derived from `source_path` and the line span.
    pub id: String,
    pub kind: ChunkKind,
    /// API function name, when the chunk documents one.
    pub symbol: Option<String>,
    /// Path relative to the ingested root, forward slashes.
    pub source_path: String,
    pub text: String,
    /// 1-based inclusive line span in the source file.
    pub line_span: Option<(u32, u32)>,
}

/// Serialized form: one JSON object per line with exactly these fields.
#[derive(Serialize, Deserialize)]
struct ChunkWire {
    id: String,
    kind: ChunkKind,
    symbol: Option<String>,
    source_path: String,
    text: String,
    line_start: Option<u32>,
    line_end: Option<u32>,
}

impl From<DocChunk> for ChunkWire {
    fn from(c: DocChunk) -> Self {
        ChunkWire {
            id: c.id,
            kind: c.kind,
            symbol: c.symbol,
            source_path: c.source_path,
            text: c.text,
            line_start: c.line_span.map(|(s, _)| s),
            line_end: c.line_span.map(|(_, e)| e),
        }
    }
}

impl TryFrom<ChunkWire> for DocChunk {
    type Error = String;

    fn try_from(w: ChunkWire) -> Result<Self, String> {
        let line_span = match (w.line_start, w.line_end) {
            (Some(s), Some(e)) => Some((s, e)),
            (None, None) => None,
            _ => return Err(format!("chunk {}: half-open line span", w.id)),
        };
        Ok(DocChunk {
            id: w.id,
            kind: w.kind,
            symbol: w.symbol,
            source_path: w.source_path,
            text: w.text,
            line_span,
        })
    }
}

impl DocChunk {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.text.is_empty() {
            return Err(CorpusError::InvalidChunk {
                id: self.id.clone(),
                reason: "empty text".into(),
            });
        }
        if let Some((start, end)) = self.line_span {
            if start == 0 || start > end {
                return Err(CorpusError::InvalidChunk {
                    id: self.id.clone(),
                    reason: format!("bad line span {start}-{end}"),
                });
            }
        }
        Ok(())
    }
}

/// An immutable, ordered collection of chunks.
#[derive(Debug, Clone)]
pub struct Corpus {
    chunks: Vec<DocChunk>,
    source_fingerprint: String,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Validates chunk invariants (unique ids, non-empty text, ordered spans)
    /// and computes the content fingerprint over the serialized chunks.
    pub fn new(chunks: Vec<DocChunk>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(chunks.len());
        let mut hasher = Sha256::new();
        for (i, chunk) in chunks.iter().enumerate() {
            chunk.validate()?;
            if by_id.insert(chunk.id.clone(), i).is_some() {
                return Err(CorpusError::InvalidChunk {
                    id: chunk.id.clone(),
                    reason: "duplicate id".into(),
                });
            }
            hasher.update(serde_json::to_string(chunk).expect("chunk serializes").as_bytes());
            hasher.update(b"\n");
        }
        let source_fingerprint = format!("{:x}", hasher.finalize());
        Ok(Self { chunks, source_fingerprint, by_id })
    }

    pub fn chunks(&self) -> &[DocChunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DocChunk> {
        self.by_id.get(id).map(|&i| &self.chunks[i])
    }

    /// Content hash of the serialized chunks; identical input trees yield an
    /// identical fingerprint, and a corpus loaded back from disk keeps it.
    pub fn source_fingerprint(&self) -> &str {
        &self.source_fingerprint
    }

    /// Write as JSON lines, one chunk per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = Vec::new();
        for chunk in &self.chunks {
            serde_json::to_writer(&mut out, chunk).expect("chunk serializes");
            out.push(b'\n');
        }
        let mut file = fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, CorpusError> {
        let file = fs::File::open(path)?;
        let mut chunks = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: DocChunk = serde_json::from_str(&line)
                .map_err(|e| CorpusError::MalformedLine(i + 1, e.to_string()))?;
            chunks.push(chunk);
        }
        Self::new(chunks)
    }
}

/// Chunking parameters. Doc files are recognized by extension and split at
/// lines matching `doc_heading` (first capture group = symbol); snippet files
/// are split into `max_lines` windows sharing `overlap_lines` lines.
#[derive(Debug, Clone)]
pub struct ChunkConfig {
    pub max_lines: usize,
    pub overlap_lines: usize,
    /// Regex marking the start of one documented function; group 1 captures
    /// the symbol. Doc formats vary, so this is configuration.
    pub doc_heading: String,
    pub doc_extensions: Vec<String>,
    pub snippet_extensions: Vec<String>,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            max_lines: 60,
            overlap_lines: 10,
            doc_heading: r"^##\s+([A-Za-z_][A-Za-z0-9_.]*)\s*$".into(),
            doc_extensions: vec!["md".into(), "rst".into(), "txt".into()],
            snippet_extensions: vec!["py".into()],
        }
    }
}

/// A file that was skipped during ingestion, with the reason.
#[derive(Debug, Clone)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

/// Result of [`chunk_docs`]: the corpus plus any non-fatal skips.
#[derive(Debug)]
pub struct CorpusBuild {
    pub corpus: Corpus,
    pub skipped: Vec<SkippedFile>,
}

/// Walk `root` and chunk every doc/snippet file into a corpus.
///
/// Unreadable files are skipped and reported in the build, unless every
/// candidate file fails, which is an error. Files are visited in sorted
/// order so reruns are byte-identical.
pub fn chunk_docs(root: &Path, config: &ChunkConfig) -> Result<CorpusBuild, CorpusError> {
    if config.max_lines == 0 {
        return Err(CorpusError::InvalidConfig("max_lines must be positive".into()));
    }
    if config.overlap_lines >= config.max_lines {
        return Err(CorpusError::InvalidConfig(format!(
            "overlap_lines ({}) must be smaller than max_lines ({})",
            config.overlap_lines, config.max_lines
        )));
    }
    let heading = Regex::new(&config.doc_heading)
        .map_err(|e| CorpusError::InvalidConfig(format!("doc_heading: {e}")))?;
    if !root.is_dir() {
        return Err(CorpusError::RootNotFound(root.to_path_buf()));
    }

    let mut chunks = Vec::new();
    let mut skipped = Vec::new();
    let mut candidates = 0usize;
    let mut readable = 0usize;

    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                skipped.push(SkippedFile {
                    path: e.path().map(Path::to_path_buf).unwrap_or_default(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let ext = entry
            .path()
            .extension()
            .map(|e| e.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        let kind = if config.doc_extensions.contains(&ext) {
            ChunkKind::ApiDoc
        } else if config.snippet_extensions.contains(&ext) {
            ChunkKind::CodeSnippet
        } else {
            continue;
        };
        candidates += 1;

        let bytes = match fs::read(entry.path()) {
            Ok(b) => b,
            Err(e) => {
                skipped.push(SkippedFile {
                    path: entry.path().to_path_buf(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        readable += 1;
        let text = String::from_utf8_lossy(&bytes);
        let rel = entry
            .path()
            .strip_prefix(root)
            .unwrap_or(entry.path())
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");

        let lines: Vec<&str> = text.lines().collect();
        if lines.is_empty() {
            skipped.push(SkippedFile {
                path: entry.path().to_path_buf(),
                reason: "empty file".into(),
            });
            continue;
        }
        match kind {
            ChunkKind::ApiDoc => chunk_doc_file(&rel, &lines, &heading, &mut chunks),
            ChunkKind::CodeSnippet => chunk_snippet_file(&rel, &lines, config, &mut chunks),
        }
    }

    if candidates > 0 && readable == 0 {
        return Err(CorpusError::UnreadableFile(skipped[0].path.clone()));
    }

    Ok(CorpusBuild { corpus: Corpus::new(chunks)?, skipped })
}

fn chunk_id(source_path: &str, span: (u32, u32)) -> String {
    format!("{source_path}:{}-{}", span.0, span.1)
}

/// One chunk per heading-delimited entry. A doc file without any heading
/// becomes a single symbol-less chunk so its content stays retrievable.
fn chunk_doc_file(rel: &str, lines: &[&str], heading: &Regex, out: &mut Vec<DocChunk>) {
    let mut entries: Vec<(usize, String)> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if let Some(caps) = heading.captures(line) {
            let symbol = caps.get(1).map(|m| m.as_str().to_string()).unwrap_or_default();
            entries.push((i, symbol));
        }
    }
    if entries.is_empty() {
        let span = (1, lines.len() as u32);
        out.push(DocChunk {
            id: chunk_id(rel, span),
            kind: ChunkKind::ApiDoc,
            symbol: None,
            source_path: rel.to_string(),
            text: lines.join("\n"),
            line_span: Some(span),
        });
        return;
    }
    for (n, (start, symbol)) in entries.iter().enumerate() {
        let end = entries.get(n + 1).map(|(next, _)| *next).unwrap_or(lines.len());
        let span = (*start as u32 + 1, end as u32);
        out.push(DocChunk {
            id: chunk_id(rel, span),
            kind: ChunkKind::ApiDoc,
            symbol: if symbol.is_empty() { None } else { Some(symbol.clone()) },
            source_path: rel.to_string(),
            text: lines[*start..end].join("\n"),
            line_span: Some(span),
        });
    }
}

/// Fixed-size line windows. Consecutive windows share `overlap_lines` lines;
/// a final window shorter than the overlap would be merged into its
/// predecessor, though the stepping below never produces one.
fn line_windows(total: usize, max_lines: usize, overlap: usize) -> Vec<(u32, u32)> {
    if total <= max_lines {
        return vec![(1, total as u32)];
    }
    let step = max_lines - overlap;
    let mut windows: Vec<(u32, u32)> = Vec::new();
    let mut start = 1usize;
    loop {
        let end = (start + max_lines - 1).min(total);
        windows.push((start as u32, end as u32));
        if end == total {
            break;
        }
        start += step;
    }
    if windows.len() >= 2 {
        let last = windows[windows.len() - 1];
        if ((last.1 - last.0 + 1) as usize) < overlap {
            let merged_end = last.1;
            windows.pop();
            windows.last_mut().unwrap().1 = merged_end;
        }
    }
    windows
}

fn chunk_snippet_file(rel: &str, lines: &[&str], config: &ChunkConfig, out: &mut Vec<DocChunk>) {
    for span in line_windows(lines.len(), config.max_lines, config.overlap_lines) {
        out.push(DocChunk {
            id: chunk_id(rel, span),
            kind: ChunkKind::CodeSnippet,
            symbol: None,
            source_path: rel.to_string(),
            text: lines[span.0 as usize - 1..span.1 as usize].join("\n"),
            line_span: Some(span),
        });
    }
}
