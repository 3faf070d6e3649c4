//! Agent prompt templates.
//!
//! Templates are plain text files with `{{slot}}` placeholders. The defaults
//! ship inside the crate; a configured directory can override any of them by
//! file name (`<name>.txt`). Lines starting with `#!` are template metadata
//! (version tags) and never reach the model.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;

const DEFAULTS: &[(&str, &str)] = &[
    ("profile_summary", include_str!("../prompts/profile_summary.txt")),
    ("segment", include_str!("../prompts/segment.txt")),
    ("select_datasets", include_str!("../prompts/select_datasets.txt")),
    ("planning", include_str!("../prompts/planning.txt")),
    ("manipulation", include_str!("../prompts/manipulation.txt")),
    ("validate_completeness", include_str!("../prompts/validate_completeness.txt")),
    ("validate_guideline", include_str!("../prompts/validate_guideline.txt")),
    ("classify_error", include_str!("../prompts/classify_error.txt")),
    ("summarize_errors", include_str!("../prompts/summarize_errors.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt template '{0}'")]
    UnknownTemplate(String),
    #[error("prompt template '{template}' has unfilled slots: {slots:?}")]
    UnfilledSlots { template: String, slots: Vec<String> },
    #[error("cannot read prompt template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone)]
pub struct Prompts {
    templates: BTreeMap<String, String>,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts { templates: DEFAULTS.iter().map(|(k, v)| (k.to_string(), strip_meta(v))).collect() }
    }
}

fn strip_meta(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with("#!")).collect::<Vec<_>>().join("\n")
}

fn slot_pattern() -> Regex {
    Regex::new(r"\{\{([a-z_]+)\}\}").expect("static regex")
}

impl Prompts {
    /// Built-in templates, overridden by any `<name>.txt` in `dir`.
    pub fn load(dir: Option<&Path>) -> Result<Prompts, PromptError> {
        let mut p = Prompts::default();
        if let Some(dir) = dir {
            for name in DEFAULTS.iter().map(|(n, _)| *n) {
                let path = dir.join(format!("{name}.txt"));
                if path.exists() {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| PromptError::Io { path: path.display().to_string(), message: e.to_string() })?;
                    p.templates.insert(name.to_string(), strip_meta(&text));
                }
            }
        }
        Ok(p)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn template(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(String::as_str)
    }

    /// Slot names used by a template, in order of first appearance.
    pub fn slots(&self, name: &str) -> Result<Vec<String>, PromptError> {
        let t = self.template(name).ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
        let mut out: Vec<String> = Vec::new();
        for c in slot_pattern().captures_iter(t) {
            if !out.iter().any(|s| s == &c[1]) {
                out.push(c[1].to_string());
            }
        }
        Ok(out)
    }

    /// Fills every slot. Values are inserted verbatim, so slot syntax inside a
    /// value is never expanded again.
    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let t = self.template(name).ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
        let missing: Vec<String> =
            self.slots(name)?.into_iter().filter(|s| !values.iter().any(|(k, _)| k == s)).collect();
        if !missing.is_empty() {
            return Err(PromptError::UnfilledSlots { template: name.to_string(), slots: missing });
        }
        Ok(slot_pattern()
            .replace_all(t, |c: &regex::Captures| {
                values.iter().find(|(k, _)| *k == &c[1]).map(|(_, v)| v.to_string()).unwrap_or_default()
            })
            .into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_default_renders_with_its_slots() {
        let p = Prompts::default();
        for name in p.names() {
            let slots = p.slots(name).unwrap();
            let values: Vec<(&str, &str)> = slots.iter().map(|s| (s.as_str(), "X")).collect();
            let text = p.render(name, &values).unwrap();
            assert!(!text.contains("{{"), "{name}");
            assert!(!text.contains("#!"), "{name}");
        }
    }

    #[test]
    fn unfilled_slot_is_an_error() {
        let p = Prompts::default();
        assert!(matches!(p.render("planning", &[]), Err(PromptError::UnfilledSlots { .. })));
        assert!(matches!(p.render("nope", &[]), Err(PromptError::UnknownTemplate(_))));
    }

    #[test]
    fn directory_overrides_by_name() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("segment.txt"), "#! version 9\nSplit {{text}} please").unwrap();
        let p = Prompts::load(Some(dir.path())).unwrap();
        assert_eq!(p.render("segment", &[("text", "{{x}}")]).unwrap(), "Split {{x}} please");
    }
}
