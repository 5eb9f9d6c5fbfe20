//! Prompt templates.
//!
//! Templates ship as versioned text files compiled into the binary. Leading
//! `#` comment lines are metadata and are stripped at load time. Placeholders
//! use `{{name}}`; instantiation is strict — a placeholder left unbound is an
//! error, never silently emitted.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("template {template}: unbound placeholder {{{{{placeholder}}}}}")]
pub struct UnboundPlaceholder {
    pub template: String,
    pub placeholder: String,
}

/// A named prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, raw: &str) -> Self {
        let body: String = raw
            .lines()
            .skip_while(|l| l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n");
        Self {
            name: name.into(),
            body: body.trim_start().to_string(),
        }
    }

    /// Placeholders referenced by the template body, in order of appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let bytes = self.body.as_bytes();
        let mut i = 0;
        while i + 1 < bytes.len() {
            if bytes[i] == b'{' && bytes[i + 1] == b'{' {
                if let Some(end) = self.body[i + 2..].find("}}") {
                    let name = &self.body[i + 2..i + 2 + end];
                    if is_placeholder_name(name) {
                        out.push(name);
                        i += 2 + end + 2;
                        continue;
                    }
                }
            }
            i += 1;
        }
        out
    }

    /// Deterministic substitution. Every placeholder the template references
    /// must be bound.
    pub fn instantiate(
        &self,
        bindings: &BTreeMap<&str, String>,
    ) -> Result<String, UnboundPlaceholder> {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) if is_placeholder_name(&after[..end]) => {
                    let name = &after[..end];
                    match bindings.get(name) {
                        Some(value) => out.push_str(value),
                        None => {
                            return Err(UnboundPlaceholder {
                                template: self.name.clone(),
                                placeholder: name.to_string(),
                            })
                        }
                    }
                    rest = &after[end + 2..];
                }
                _ => {
                    // Literal braces (JSON examples in prompt bodies).
                    out.push_str("{{");
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

/// The compiled-in template set.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub critic_propose: PromptTemplate,
    pub assessor_blend: PromptTemplate,
    pub assessor_feedback: PromptTemplate,
    pub assessor_revise: PromptTemplate,
    pub actor_feedback: PromptTemplate,
    pub debater: PromptTemplate,
    pub debate_final: PromptTemplate,
    pub decentralized: PromptTemplate,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            critic_propose: PromptTemplate::new(
                "critic_propose",
                include_str!("../../templates/critic_propose.txt"),
            ),
            assessor_blend: PromptTemplate::new(
                "assessor_blend",
                include_str!("../../templates/assessor_blend.txt"),
            ),
            assessor_feedback: PromptTemplate::new(
                "assessor_feedback",
                include_str!("../../templates/assessor_feedback.txt"),
            ),
            assessor_revise: PromptTemplate::new(
                "assessor_revise",
                include_str!("../../templates/assessor_revise.txt"),
            ),
            actor_feedback: PromptTemplate::new(
                "actor_feedback",
                include_str!("../../templates/actor_feedback.txt"),
            ),
            debater: PromptTemplate::new("debater", include_str!("../../templates/debater.txt")),
            debate_final: PromptTemplate::new(
                "debate_final",
                include_str!("../../templates/debate_final.txt"),
            ),
            decentralized: PromptTemplate::new(
                "decentralized",
                include_str!("../../templates/decentralized.txt"),
            ),
        }
    }
}

/// Preference clause injected into the proposer prompt for the critic that
/// probes for long-run information.
pub const EXPLORE_CLAUSE: &str = "Your preference: favor actions that test untried possibilities \
and improve long-run understanding of the task, even when the immediate payoff looks worse.";

/// Preference clause for the critic that sticks to the best known result.
pub const EXPLOIT_CLAUSE: &str = "Your preference: favor the best-performing known actions and \
secure immediate results; deviate from what already works only with strong reason.";
