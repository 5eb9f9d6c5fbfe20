//! The versioned response grammar.
//!
//! Model responses carry structured blocks as JSON, with action terms written
//! in a compact call syntax (`move(object_blue_1, corner(1,1))`, bare
//! integers for resource allocation). `parse_structured` scans a response for
//! the first block that conforms to the requested schema, so prose around or
//! fences enclosing the block are ignored. It never panics: every input
//! yields either a value or a [`GrammarError`].

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::core::{ActionTerm, AgentId, EnvKind};
use crate::env_grid::{CellPos, CornerPos, GridAction};
use crate::env_gs::GsAction;

/// Version recorded in transcripts; replay refuses transcripts written under
/// a different grammar.
pub const GRAMMAR_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("grammar error: {reason}")]
pub struct GrammarError {
    pub reason: String,
    pub span: Option<(usize, usize)>,
}

impl GrammarError {
    pub fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
            span: None,
        }
    }

    fn spanned(reason: impl Into<String>, span: (usize, usize)) -> Self {
        Self {
            reason: reason.into(),
            span: Some(span),
        }
    }
}

/// What shape a response is expected to contain.
#[derive(Debug, Clone)]
pub enum Schema {
    /// `{"agent_0": "<action>", ...}` covering exactly the listed agents.
    ActionMap { env: EnvKind, agents: Vec<AgentId> },
    /// `{"agent_0": {"action": "<action>", "rationale": "..."}, ...}`.
    SuggestionMap { env: EnvKind, agents: Vec<AgentId> },
    /// `{"verdict": "pass"|"fail", "issues": [...], "feedback": "..."}`.
    Verdict,
    /// `[{"agent": "agent_0", "reason": "..."}, ...]`.
    FeedbackList,
}

/// A successfully parsed block.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedValue {
    ActionMap(BTreeMap<AgentId, ActionTerm>),
    SuggestionMap(BTreeMap<AgentId, (ActionTerm, String)>),
    Verdict { pass: bool, issues: Vec<String> },
    FeedbackList(Vec<(AgentId, String)>),
}

/// Extract the first structured block conforming to `schema`.
pub fn parse_structured(text: &str, schema: &Schema) -> Result<ParsedValue, GrammarError> {
    let mut best_miss: Option<GrammarError> = None;
    for (start, candidate) in json_candidates(text) {
        match convert(&candidate, schema) {
            Ok(v) => return Ok(v),
            Err(reason) => {
                // Remember the most informative near-miss for the error.
                if best_miss.is_none() && !reason.is_empty() {
                    best_miss = Some(GrammarError::spanned(reason, (start, start)));
                }
            }
        }
    }
    Err(best_miss
        .unwrap_or_else(|| GrammarError::new("no structured block found in response")))
}

/// Balanced JSON values in the text, ordered by start position. Nested
/// objects appear after their enclosing object, so an embedded conforming
/// block is still found when the outer one does not conform.
fn json_candidates(text: &str) -> Vec<(usize, Value)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'{' && b != b'[' {
            continue;
        }
        let mut stream =
            serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if v.is_object() || v.is_array() {
                out.push((i, v));
            }
        }
    }
    out
}

/// Schema conformance plus conversion. The error string is a near-miss
/// explanation; an empty string means "not even the right basic shape".
fn convert(value: &Value, schema: &Schema) -> Result<ParsedValue, String> {
    match schema {
        Schema::ActionMap { env, agents } => {
            let obj = value.as_object().ok_or("")?;
            let mut map = BTreeMap::new();
            for (key, entry) in obj {
                let Some(agent) = AgentId::parse_label(key) else {
                    return Err(format!("unexpected key `{key}` in action map"));
                };
                let term = action_from_value(*env, entry)
                    .map_err(|e| format!("{key}: {e}"))?;
                map.insert(agent, term);
            }
            check_coverage(&map, agents)?;
            Ok(ParsedValue::ActionMap(map))
        }
        Schema::SuggestionMap { env, agents } => {
            let obj = value.as_object().ok_or("")?;
            let mut map = BTreeMap::new();
            for (key, entry) in obj {
                let Some(agent) = AgentId::parse_label(key) else {
                    return Err(format!("unexpected key `{key}` in suggestion map"));
                };
                let inner = entry
                    .as_object()
                    .ok_or_else(|| format!("{key}: suggestion must be an object"))?;
                let action_value = inner
                    .get("action")
                    .ok_or_else(|| format!("{key}: missing `action`"))?;
                let term = action_from_value(*env, action_value)
                    .map_err(|e| format!("{key}: {e}"))?;
                let rationale = inner
                    .get("rationale")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string();
                map.insert(agent, (term, rationale));
            }
            check_coverage_keys(map.keys(), agents)?;
            Ok(ParsedValue::SuggestionMap(map))
        }
        Schema::Verdict => {
            let obj = value.as_object().ok_or("")?;
            let verdict = obj
                .get("verdict")
                .and_then(Value::as_str)
                .ok_or("missing `verdict` field")?;
            let pass = match verdict {
                "pass" => true,
                "fail" => false,
                other => return Err(format!("verdict must be pass or fail, got `{other}`")),
            };
            let mut issues: Vec<String> = obj
                .get("issues")
                .and_then(Value::as_array)
                .map(|a| {
                    a.iter()
                        .filter_map(Value::as_str)
                        .map(str::to_string)
                        .collect()
                })
                .unwrap_or_default();
            if let Some(fb) = obj.get("feedback").and_then(Value::as_str) {
                if !pass && !fb.is_empty() {
                    issues.push(fb.to_string());
                }
            }
            Ok(ParsedValue::Verdict { pass, issues })
        }
        Schema::FeedbackList => {
            let arr = value.as_array().ok_or("")?;
            let mut out = Vec::new();
            for entry in arr {
                let obj = entry.as_object().ok_or("feedback entry must be an object")?;
                let agent_str = obj
                    .get("agent")
                    .and_then(Value::as_str)
                    .ok_or("feedback entry missing `agent`")?;
                let agent = AgentId::parse_label(agent_str)
                    .ok_or_else(|| format!("bad agent label `{agent_str}`"))?;
                let reason = obj
                    .get("reason")
                    .and_then(Value::as_str)
                    .ok_or("feedback entry missing `reason`")?;
                out.push((agent, reason.to_string()));
            }
            Ok(ParsedValue::FeedbackList(out))
        }
    }
}

fn check_coverage(map: &BTreeMap<AgentId, ActionTerm>, agents: &[AgentId]) -> Result<(), String> {
    check_coverage_keys(map.keys(), agents)
}

fn check_coverage_keys<'a>(
    keys: impl Iterator<Item = &'a AgentId>,
    agents: &[AgentId],
) -> Result<(), String> {
    let present: Vec<AgentId> = keys.copied().collect();
    for required in agents {
        if !present.contains(required) {
            return Err(format!("missing {required}"));
        }
    }
    for key in &present {
        if !agents.contains(key) {
            return Err(format!("unexpected {key}"));
        }
    }
    Ok(())
}

/// An action written either as a JSON string in the action grammar or, for
/// resource allocation, as a bare JSON integer.
fn action_from_value(env: EnvKind, value: &Value) -> Result<ActionTerm, String> {
    match value {
        Value::String(s) => parse_action_term(env, s),
        Value::Number(n) if env == EnvKind::Gs => {
            let v = n
                .as_i64()
                .ok_or_else(|| format!("action must be an integer, got {n}"))?;
            Ok(ActionTerm::Gs(GsAction { value: v }))
        }
        other => Err(format!("action must be a string, got {other}")),
    }
}

/// Parse one action term in the grammar of the given environment.
pub fn parse_action_term(env: EnvKind, raw: &str) -> Result<ActionTerm, String> {
    let s = raw.trim();
    match env {
        EnvKind::Gs => s
            .parse::<i64>()
            .map(|value| ActionTerm::Gs(GsAction { value }))
            .map_err(|_| format!("expected a bare integer, got `{s}`")),
        EnvKind::GridEasy | EnvKind::GridHard => {
            parse_grid_action(env, s).map(ActionTerm::Grid)
        }
    }
}

fn parse_grid_action(env: EnvKind, s: &str) -> Result<GridAction, String> {
    if s == "noop" {
        return Ok(GridAction::NoOp);
    }
    let (head, args) = split_call(s)?;
    match (env, head) {
        (EnvKind::GridEasy, "move") => {
            let (object, dest) = two_args(&args, s)?;
            let (kind, coords) = split_call(&dest)?;
            if kind != "cell" {
                return Err(format!("easy-mode move destination must be cell(r,c), got `{dest}`"));
            }
            let (row, col) = parse_coords(&coords)?;
            Ok(GridAction::MoveToCell {
                object,
                dest: CellPos { row, col },
            })
        }
        (EnvKind::GridEasy, "place") => {
            let (object, target) = two_args(&args, s)?;
            check_ident(&target)?;
            Ok(GridAction::PlaceInTarget { object, target })
        }
        (EnvKind::GridHard, "move") => {
            let (object, dest) = two_args(&args, s)?;
            let (kind, inner) = split_call(&dest)?;
            match kind {
                "corner" => {
                    let (row, col) = parse_coords(&inner)?;
                    Ok(GridAction::MoveToCorner {
                        object,
                        dest: CornerPos { row, col },
                    })
                }
                "target" => {
                    let target = inner.trim().to_string();
                    check_ident(&target)?;
                    Ok(GridAction::MoveToTarget { object, target })
                }
                other => Err(format!(
                    "hard-mode move destination must be corner(r,c) or target(id), got `{other}`"
                )),
            }
        }
        (_, other) => Err(format!("unknown action `{other}`")),
    }
}

/// Split `head(arg-text)` into the head identifier and the raw argument text.
fn split_call(s: &str) -> Result<(&str, String), String> {
    let s = s.trim();
    let open = s.find('(').ok_or_else(|| format!("expected a call form, got `{s}`"))?;
    if !s.ends_with(')') {
        return Err(format!("unbalanced parentheses in `{s}`"));
    }
    let head = s[..open].trim();
    check_ident(head)?;
    Ok((head, s[open + 1..s.len() - 1].to_string()))
}

/// Split two comma-separated arguments at the top nesting level.
fn two_args(args: &str, whole: &str) -> Result<(String, String), String> {
    let mut depth = 0usize;
    for (i, c) in args.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                let first = args[..i].trim().to_string();
                check_ident(&first)?;
                return Ok((first, args[i + 1..].trim().to_string()));
            }
            _ => {}
        }
    }
    Err(format!("expected two arguments in `{whole}`"))
}

fn parse_coords(s: &str) -> Result<(usize, usize), String> {
    let mut parts = s.split(',');
    let row = parts
        .next()
        .and_then(|p| p.trim().parse().ok())
        .ok_or_else(|| format!("bad coordinates `{s}`"))?;
    let col = parts
        .next()
        .and_then(|p| p.trim().parse().ok())
        .ok_or_else(|| format!("bad coordinates `{s}`"))?;
    if parts.next().is_some() {
        return Err(format!("bad coordinates `{s}`"));
    }
    Ok((row, col))
}

fn check_ident(s: &str) -> Result<(), String> {
    if !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        Ok(())
    } else {
        Err(format!("bad identifier `{s}`"))
    }
}

/// Canonical JSON for an action map; `parse_structured` on the output yields
/// the input back.
pub fn render_action_map(map: &BTreeMap<AgentId, ActionTerm>) -> String {
    let mut obj = serde_json::Map::new();
    for (agent, term) in map {
        obj.insert(agent.to_string(), Value::String(term.to_string()));
    }
    Value::Object(obj).to_string()
}

/// Canonical JSON for a suggestion map.
pub fn render_suggestion_map(map: &BTreeMap<AgentId, (ActionTerm, String)>) -> String {
    let mut obj = serde_json::Map::new();
    for (agent, (term, rationale)) in map {
        let mut inner = serde_json::Map::new();
        inner.insert("action".into(), Value::String(term.to_string()));
        inner.insert("rationale".into(), Value::String(rationale.clone()));
        obj.insert(agent.to_string(), Value::Object(inner));
    }
    Value::Object(obj).to_string()
}
