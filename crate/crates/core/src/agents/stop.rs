//! Detection of infeasibility declarations in assistant text.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Identifier reported when the line-anchored `STOP:` form fires.
pub const PRIMARY_PATTERN_ID: &str = "stop_prefix";

fn primary() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^STOP:[ \t]*(\S[^\r\n]*?)[ \t]*\r?$").expect("valid regex"))
}

/// A named equivalent-phrasing pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PatternDef", into = "PatternDef")]
pub struct StopPattern {
    id: String,
    regex: Regex,
}

#[derive(Serialize, Deserialize)]
struct PatternDef {
    id: String,
    pattern: String,
}

impl TryFrom<PatternDef> for StopPattern {
    type Error = regex::Error;

    fn try_from(d: PatternDef) -> Result<Self, Self::Error> {
        StopPattern::new(d.id, &d.pattern)
    }
}

impl From<StopPattern> for PatternDef {
    fn from(p: StopPattern) -> Self {
        PatternDef {
            id: p.id,
            pattern: p.regex.as_str().to_string(),
        }
    }
}

impl PartialEq for StopPattern {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.regex.as_str() == other.regex.as_str()
    }
}

impl StopPattern {
    pub fn new(id: impl Into<String>, pattern: &str) -> Result<Self, regex::Error> {
        Ok(Self {
            id: id.into(),
            regex: Regex::new(pattern)?,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pattern(&self) -> &str {
        self.regex.as_str()
    }
}

/// Equivalent phrasings accepted alongside `STOP:`. Order matters: the first
/// match names the signal.
pub fn default_stop_patterns() -> Vec<StopPattern> {
    const DEFAULTS: &[(&str, &str)] = &[
        ("bare_stop", r"(?m)^STOP:[ \t]*\r?$"),
        (
            "required_tool_unavailable",
            r"(?i)\brequired (tool|function|api|capability)s? (is|are) (not available|unavailable|missing)",
        ),
        (
            "cannot_complete_with_tools",
            r"(?i)\b(cannot|can't|can ?not) be (completed|done|accomplished|performed|fulfilled) (with|using) the (available|provided|given|current) tools",
        ),
        (
            "no_tool_to",
            r"(?i)\b(i|we) (don't|do not|don’t) have (a|any|the) (tool|function|api)s? (to|for|that)",
        ),
        (
            "no_tool_available",
            r"(?i)\bthere (is|are) no (available |suitable |appropriate )?(tool|function|api)s? (available )?(to|for|that can)\b",
        ),
        (
            "task_not_feasible",
            r"(?i)\b(this|the) (task|request) is (not feasible|infeasible)",
        ),
    ];
    DEFAULTS
        .iter()
        .map(|(id, p)| StopPattern::new(*id, p).expect("default stop pattern compiles"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopSignal {
    pub reason: String,
    pub matched_pattern: String,
}

/// Returns a signal when the text declares the task infeasible. The
/// line-anchored, case-sensitive `STOP:` prefix takes precedence and its
/// trailing text becomes the reason; otherwise the first matching
/// equivalent pattern fires and the reason is the line it matched on.
pub fn detect_stop(message: &str, patterns: &[StopPattern]) -> Option<StopSignal> {
    if let Some(c) = primary().captures(message) {
        return Some(StopSignal {
            reason: c[1].to_string(),
            matched_pattern: PRIMARY_PATTERN_ID.to_string(),
        });
    }
    patterns.iter().find_map(|p| {
        let m = p.regex.find(message)?;
        let start = message[..m.start()].rfind('\n').map_or(0, |i| i + 1);
        let end = message[m.end()..].find('\n').map_or(message.len(), |i| m.end() + i);
        let line = message[start..end].trim();
        let reason = line.strip_prefix("STOP:").unwrap_or(line).trim();
        Some(StopSignal {
            reason: reason.to_string(),
            matched_pattern: p.id.clone(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn detect(msg: &str) -> Option<StopSignal> {
        detect_stop(msg, &default_stop_patterns())
    }

    #[test]
    fn prompt_format() {
        let s = detect("STOP: payment API unavailable").unwrap();
        assert_eq!(s.reason, "payment API unavailable");
        assert_eq!(s.matched_pattern, PRIMARY_PATTERN_ID);
    }

    #[test]
    fn terse_refusal_phrasing() {
        let s = detect("I don't have a tool to generate UUIDv4").unwrap();
        assert_eq!(s.matched_pattern, "no_tool_to");
        assert_eq!(s.reason, "I don't have a tool to generate UUIDv4");
    }

    #[test]
    fn ordinary_answer() {
        assert_eq!(detect("The weather in Paris is sunny."), None);
    }

    #[test]
    fn primary_wins_ties() {
        let s = detect("The required tool is not available.\nSTOP: no refund tool").unwrap();
        assert_eq!(s.matched_pattern, PRIMARY_PATTERN_ID);
        assert_eq!(s.reason, "no refund tool");
    }

    #[test]
    fn primary_is_case_sensitive_and_anchored() {
        assert_eq!(detect("stop: lowercase is not the sign"), None);
        assert_eq!(detect("Please do not STOP: keep going"), None);
    }

    #[test]
    fn bare_stop_has_empty_reason() {
        let s = detect("STOP:").unwrap();
        assert_eq!(s.matched_pattern, "bare_stop");
        assert!(s.reason.is_empty());
    }

    #[test]
    fn patterns_serialize_by_source() {
        let pats = default_stop_patterns();
        let json = serde_json::to_string(&pats).unwrap();
        let back: Vec<StopPattern> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pats);
    }
}
