//! Prompt templates.
//!
//! Templates live in `prompts/` and are the tunable part of the pipeline;
//! the contracts enforced by tests (one operation per line, fenced-block
//! output, verbatim user prompt) must survive any rewording. Each file has a
//! `[system]` section and a `[user]` section; the user section may contain
//! `{{placeholder}}` markers.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {0}: missing [{1}] section")]
    MissingSection(String, &'static str),
    #[error("failed to read template {0}: {1}")]
    Unreadable(String, std::io::Error),
}

/// One prompt template: fixed system text plus a user-message template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub system: String,
    pub user: String,
}

impl Template {
    /// Split a template file into its `[system]` and `[user]` sections.
    pub fn parse(name: &str, text: &str) -> Result<Self, TemplateError> {
        let mut system = Vec::new();
        let mut user = Vec::new();
        let mut current: Option<&mut Vec<&str>> = None;
        let mut saw_system = false;
        let mut saw_user = false;
        for line in text.lines() {
            match line.trim() {
                "[system]" => {
                    saw_system = true;
                    current = Some(&mut system);
                }
                "[user]" => {
                    saw_user = true;
                    current = Some(&mut user);
                }
                _ => {
                    if let Some(section) = current.as_mut() {
                        section.push(line);
                    }
                }
            }
        }
        if !saw_system {
            return Err(TemplateError::MissingSection(name.into(), "system"));
        }
        if !saw_user {
            return Err(TemplateError::MissingSection(name.into(), "user"));
        }
        Ok(Self { system: system.join("\n").trim().to_string(), user: user.join("\n").trim().to_string() })
    }

    /// Replace `{{key}}` markers in the user section.
    pub fn render_user(&self, substitutions: &[(&str, &str)]) -> String {
        let mut out = self.user.clone();
        for (key, value) in substitutions {
            out = out.replace(&format!("{{{{{key}}}}}"), value);
        }
        out
    }
}

/// The three pipeline templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub decompose: Template,
    pub generate: Template,
    pub correct: Template,
}

impl TemplateSet {
    /// The templates shipped in the repository's `prompts/` directory,
    /// compiled in so the pipeline works from any working directory.
    pub fn builtin() -> Self {
        let parse = |name, text| Template::parse(name, text).expect("builtin template is valid");
        Self {
            decompose: parse("decompose.txt", include_str!("../../../prompts/decompose.txt")),
            generate: parse("generate.txt", include_str!("../../../prompts/generate.txt")),
            correct: parse("correct.txt", include_str!("../../../prompts/correct.txt")),
        }
    }

    /// Load `decompose.txt`, `generate.txt` and `correct.txt` from a
    /// directory, for tuning prompts without rebuilding.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str| -> Result<Template, TemplateError> {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| TemplateError::Unreadable(path.display().to_string(), e))?;
            Template::parse(name, &text)
        };
        Ok(Self {
            decompose: read("decompose.txt")?,
            generate: read("generate.txt")?,
            correct: read("correct.txt")?,
        })
    }
}
