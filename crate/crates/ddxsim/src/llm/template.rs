//! Prompt templates with exact `{placeholder}` substitution.
//!
//! Rendering is strict in both directions: a placeholder without a supplied
//! variable and a supplied variable without a declared placeholder are both
//! errors. Braces that do not delimit a `[a-z0-9_]+` identifier are treated
//! as literal text.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::LlmError;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub required_vars: BTreeSet<String>,
}

fn scan_placeholders(body: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = body[i + 1..].find(['}', '{', '\n']) {
                let candidate = &body[i + 1..i + 1 + end];
                if bytes[i + 1 + end] == b'}'
                    && !candidate.is_empty()
                    && candidate
                        .bytes()
                        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
                {
                    out.insert(candidate.to_string());
                    i += end + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

impl PromptTemplate {
    /// Build a template, deriving `required_vars` from the body.
    pub fn parse(name: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let required_vars = scan_placeholders(&body);
        PromptTemplate {
            name: name.into(),
            body,
            required_vars,
        }
    }

    /// Build a template with an explicit variable set, rejecting bodies that
    /// use undeclared placeholders.
    pub fn with_vars(
        name: impl Into<String>,
        body: impl Into<String>,
        required_vars: impl IntoIterator<Item = String>,
    ) -> Result<Self, LlmError> {
        let body = body.into();
        let declared: BTreeSet<String> = required_vars.into_iter().collect();
        for found in scan_placeholders(&body) {
            if !declared.contains(&found) {
                return Err(LlmError::UnknownPlaceholder(found));
            }
        }
        Ok(PromptTemplate {
            name: name.into(),
            body,
            required_vars: declared,
        })
    }

    /// Substitute every placeholder. Missing variables and variables that do
    /// not correspond to a placeholder are errors, never silently passed
    /// through.
    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<String, LlmError> {
        for var in self.required_vars.iter() {
            if !vars.contains_key(var) {
                return Err(LlmError::MissingVariable(var.clone()));
            }
        }
        for key in vars.keys() {
            if !self.required_vars.contains(key) {
                return Err(LlmError::UnknownPlaceholder(key.clone()));
            }
        }
        let mut out = self.body.clone();
        for (key, value) in vars {
            out = out.replace(&format!("{{{key}}}"), value);
        }
        Ok(out)
    }
}

/// Convenience constructor for render variable maps.
pub fn vars<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// The named prompt templates the pipeline uses. Built-in copies are
/// embedded in the binary; a directory of `<name>.txt` files can override
/// any of them.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub chat_single: PromptTemplate,
    pub chat_turnwise: PromptTemplate,
    pub checker: PromptTemplate,
    pub ddx: PromptTemplate,
    pub ddx_candidate_section: PromptTemplate,
    pub judge_binary: PromptTemplate,
    pub judge_similarity: PromptTemplate,
    pub profile_fill: PromptTemplate,
    pub negative_screen: PromptTemplate,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            chat_single: PromptTemplate::parse(
                "chat_single",
                include_str!("../../prompts/chat_single.txt"),
            ),
            chat_turnwise: PromptTemplate::parse(
                "chat_turnwise",
                include_str!("../../prompts/chat_turnwise.txt"),
            ),
            checker: PromptTemplate::parse("checker", include_str!("../../prompts/checker.txt")),
            ddx: PromptTemplate::parse("ddx", include_str!("../../prompts/ddx.txt")),
            ddx_candidate_section: PromptTemplate::parse(
                "ddx_candidate_section",
                include_str!("../../prompts/ddx_candidate_section.txt"),
            ),
            judge_binary: PromptTemplate::parse(
                "judge_binary",
                include_str!("../../prompts/judge_binary.txt"),
            ),
            judge_similarity: PromptTemplate::parse(
                "judge_similarity",
                include_str!("../../prompts/judge_similarity.txt"),
            ),
            profile_fill: PromptTemplate::parse(
                "profile_fill",
                include_str!("../../prompts/profile_fill.txt"),
            ),
            negative_screen: PromptTemplate::parse(
                "negative_screen",
                include_str!("../../prompts/negative_screen.txt"),
            ),
        }
    }

    /// Load overrides from `<dir>/<name>.txt`; names without a file keep the
    /// built-in template.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, LlmError> {
        let dir = dir.as_ref();
        let mut set = Self::builtin();
        for template in [
            &mut set.chat_single,
            &mut set.chat_turnwise,
            &mut set.checker,
            &mut set.ddx,
            &mut set.ddx_candidate_section,
            &mut set.judge_binary,
            &mut set.judge_similarity,
            &mut set.profile_fill,
            &mut set.negative_screen,
        ] {
            let path = dir.join(format!("{}.txt", template.name));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| LlmError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                *template = PromptTemplate::parse(template.name.clone(), body);
            }
        }
        Ok(set)
    }
}
