//! Decompose a user prompt into an ordered list of one-operation-per-line
//! steps via the LLM, and parse the reply back into structured steps.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, GatewayError, RequestProfile};
use crate::templates::TemplateSet;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("the expansion contains no operations")]
    NoOperations,
}

/// One operation line of a decomposition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationStep {
    /// 1-based, consecutive.
    pub index: usize,
    /// Single line, no leading list markers.
    pub description: String,
    /// First UpperCamelCase token of the line, if any. Heuristic and
    /// advisory only; retrieval queries use the full description.
    pub api_hint: Option<String>,
}

/// A parsed decomposition together with the verbatim LLM reply it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionPlan {
    pub user_prompt: String,
    pub steps: Vec<OperationStep>,
    pub raw_expansion: String,
}

/// Build the decomposition request: the template's system instruction plus
/// the user prompt verbatim.
pub fn build_decomposition_request(
    user_prompt: &str,
    templates: &TemplateSet,
    profile: &RequestProfile,
) -> Result<ChatRequest, GatewayError> {
    let user = templates.decompose.render_user(&[("user_prompt", user_prompt)]);
    ChatRequest::new(
        profile,
        vec![ChatMessage::system(&templates.decompose.system), ChatMessage::user(user)],
    )
}

static LIST_MARKER: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^\s*(?:\d+\s*[.)]|[-*+•)])\s+").unwrap());

fn strip_markers(line: &str) -> &str {
    let mut rest = line.trim();
    while let Some(m) = LIST_MARKER.find(rest) {
        rest = rest[m.end()..].trim();
    }
    rest
}

fn upper_camel_hint(description: &str) -> Option<String> {
    static IDENT: Lazy<Regex> = Lazy::new(|| Regex::new(r"^[A-Z][A-Za-z0-9]*$").unwrap());
    description
        .split_whitespace()
        .map(|tok| tok.trim_matches(|c: char| !c.is_alphanumeric()))
        .find(|tok| IDENT.is_match(tok))
        .map(str::to_string)
}

/// Parse an expansion reply: split on newlines, strip leading enumeration
/// markers and surrounding whitespace, drop blank lines, number the rest.
pub fn parse_expansion(raw: &str) -> Result<Vec<OperationStep>, PlanError> {
    let steps: Vec<OperationStep> = raw
        .lines()
        .map(strip_markers)
        .filter(|line| !line.is_empty())
        .enumerate()
        .map(|(i, line)| OperationStep {
            index: i + 1,
            description: line.to_string(),
            api_hint: upper_camel_hint(line),
        })
        .collect();
    if steps.is_empty() {
        return Err(PlanError::NoOperations);
    }
    Ok(steps)
}

/// Inverse of [`parse_expansion`] modulo stripped markers: one description
/// per line.
pub fn render_steps(steps: &[OperationStep]) -> String {
    steps.iter().map(|s| s.description.as_str()).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn numbered_lines_parse_with_hints() {
        let steps = parse_expansion("1. OpenDataFile\n2. Contour").unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].index, 1);
        assert_eq!(steps[0].description, "OpenDataFile");
        assert_eq!(steps[0].api_hint.as_deref(), Some("OpenDataFile"));
        assert_eq!(steps[1].api_hint.as_deref(), Some("Contour"));
    }

    #[test]
    fn bullet_line_keeps_description_and_extracts_hint() {
        let steps = parse_expansion("- Show the tube filter").unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].description, "Show the tube filter");
        assert_eq!(steps[0].api_hint.as_deref(), Some("Show"));
    }

    #[test]
    fn blank_input_has_no_operations() {
        assert!(matches!(parse_expansion("\n\n"), Err(PlanError::NoOperations)));
        assert!(matches!(parse_expansion(""), Err(PlanError::NoOperations)));
    }

    #[test]
    fn lowercase_lines_have_no_hint() {
        let steps = parse_expansion("load the data file").unwrap();
        assert_eq!(steps[0].api_hint, None);
    }

    #[test]
    fn nested_markers_are_stripped_fully() {
        let steps = parse_expansion("1. - Contour the data").unwrap();
        assert_eq!(steps[0].description, "Contour the data");
    }

    #[test]
    fn decomposition_request_contains_prompt_verbatim() {
        let templates = TemplateSet::builtin();
        let prompt = "Read 'can.ex2' and save a screenshot with white background.";
        let request =
            build_decomposition_request(prompt, &templates, &RequestProfile::default()).unwrap();
        assert_eq!(request.messages[0].role, crate::gateway::Role::System);
        assert!(request.messages[1].content.contains(prompt));
    }

    #[test]
    fn decomposition_instruction_demands_line_mapping_and_variants() {
        let templates = TemplateSet::builtin();
        let request =
            build_decomposition_request("anything", &templates, &RequestProfile::default()).unwrap();
        let system = &request.messages[0].content;
        assert!(system.contains("one operation per line"));
        assert!(system.contains("No prose"));
        // Variant disambiguation: plain screenshot vs screenshot with an
        // explicit background color, Show per filter.
        assert!(system.contains("SaveScreenshot with a desired background color"));
        assert!(system.contains("Show for a Tube filter"));
    }

    fn step_line() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9 ]{0,40}"
            .prop_map(|s| s.trim().to_string())
            .prop_filter("non-empty, marker-free", |s| {
                !s.is_empty() && strip_markers(s) == s
            })
    }

    proptest! {
        /// parse(render(steps)) == steps.
        #[test]
        fn parse_render_round_trip(lines in proptest::collection::vec(step_line(), 1..8)) {
            let steps = parse_expansion(&lines.join("\n")).unwrap();
            let rendered = render_steps(&steps);
            let reparsed = parse_expansion(&rendered).unwrap();
            prop_assert_eq!(reparsed, steps);
        }

        /// Steps are single-line, non-blank, consecutively indexed, in input order.
        #[test]
        fn steps_are_clean_and_ordered(raw in "[a-zA-Z0-9 .)*\\n-]{0,200}") {
            match parse_expansion(&raw) {
                Err(PlanError::NoOperations) => {}
                Ok(steps) => {
                    for (i, step) in steps.iter().enumerate() {
                        prop_assert_eq!(step.index, i + 1);
                        prop_assert!(!step.description.trim().is_empty());
                        prop_assert!(!step.description.contains('\n'));
                        prop_assert_eq!(strip_markers(&step.description), step.description.as_str());
                    }
                }
            }
        }
    }
}
