//! Grammar for multi-persona completions.
//!
//! A completion is a sequence of utterances, each terminated by `%%%`.
//! Every utterance opens with a speaker header `@{Name}(opinion): ` and may
//! carry inline annotations:
//!
//! | sigil | meaning          |
//! |-------|------------------|
//! | `%{}` | criterion        |
//! | `&{}` | option           |
//! | `@{}` | agent mention    |
//! | `+{}` | unknown, kept as literal text |
//!
//! Parsing is tolerant: malformed annotations degrade to literal text with a
//! warning, and only a missing header (or an empty body) rejects an utterance.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Utterance terminator.
pub const TERMINATOR: &str = "%%%";

/// Role tag used by every persona header the prompts produce.
pub const OPINION_ROLE: &str = "opinion";

/// Advisory per-utterance word limit.
pub const WORD_LIMIT: usize = 160;

const RESERVED_SPEAKER: &str = "user";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Criterion,
    Option,
    AgentMention,
}

impl SpanKind {
    pub fn sigil(self) -> char {
        match self {
            SpanKind::Criterion => '%',
            SpanKind::Option => '&',
            SpanKind::AgentMention => '@',
        }
    }

    pub fn from_sigil(c: char) -> Option<Self> {
        match c {
            '%' => Some(SpanKind::Criterion),
            '&' => Some(SpanKind::Option),
            '@' => Some(SpanKind::AgentMention),
            _ => None,
        }
    }
}

/// One persona's raw utterance, terminator stripped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceBlock {
    pub raw_text: String,
    pub ordinal: usize,
}

/// An annotated span. `start`/`end` are character (not byte) offsets into
/// the owning utterance's `plain_text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSpan {
    pub kind: SpanKind,
    pub display_text: String,
    pub canonical_key: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedUtterance {
    pub speaker_name: String,
    pub role_tag: String,
    pub plain_text: String,
    pub spans: Vec<AnnotationSpan>,
}

impl ParsedUtterance {
    /// Spans of one kind, in text order.
    pub fn spans_of(&self, kind: SpanKind) -> impl Iterator<Item = &AnnotationSpan> {
        self.spans.iter().filter(move |s| s.kind == kind)
    }

    /// Distinct canonical keys of one kind, first-occurrence order.
    pub fn keys_of(&self, kind: SpanKind) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for span in self.spans_of(kind) {
            if !out.contains(&span.canonical_key.as_str()) {
                out.push(&span.canonical_key);
            }
        }
        out
    }

    pub fn word_count(&self) -> usize {
        self.plain_text.split_whitespace().count()
    }

    /// The plain-text slice covered by `span`.
    pub fn span_text(&self, span: &AnnotationSpan) -> String {
        self.plain_text
            .chars()
            .skip(span.start)
            .take(span.end.saturating_sub(span.start))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    MissingHeader,
    UnbalancedBraces,
    UnknownSigil,
    MissingTerminator,
    EmptyUtterance,
    OverWordLimit,
    ReservedSpeaker,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::MissingHeader => "missing_header",
            DiagnosticCode::UnbalancedBraces => "unbalanced_braces",
            DiagnosticCode::UnknownSigil => "unknown_sigil",
            DiagnosticCode::MissingTerminator => "missing_terminator",
            DiagnosticCode::EmptyUtterance => "empty_utterance",
            DiagnosticCode::OverWordLimit => "over_word_limit",
            DiagnosticCode::ReservedSpeaker => "reserved_speaker",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    pub ordinal: usize,
    pub detail: String,
}

impl ParseDiagnostic {
    fn warning(code: DiagnosticCode, ordinal: usize, detail: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            code,
            ordinal,
            detail: detail.into(),
        }
    }

    fn error(code: DiagnosticCode, ordinal: usize, detail: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            code,
            ordinal,
            detail: detail.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(
            f,
            "{sev}[{}] utterance {}: {}",
            self.code.as_str(),
            self.ordinal,
            self.detail
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("keyword is empty after trimming")]
    EmptyKeyword,
    #[error("span {index} overlaps or precedes the previous span")]
    OverlappingSpans { index: usize },
    #[error("span {index} is out of bounds or does not match the plain text")]
    InvalidSpan { index: usize },
}

/// Canonical identity of a keyword: trimmed, whitespace collapsed, lowercased.
pub fn normalize_keyword(display_text: &str) -> Result<String, AnnotationError> {
    let lowered = display_text.to_lowercase();
    let key = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    if key.is_empty() {
        Err(AnnotationError::EmptyKeyword)
    } else {
        Ok(key)
    }
}

/// Splits a completion into utterance blocks at each `%%%`.
///
/// Runs of more than three `%` keep the surplus with the preceding text, so
/// `100%%%%` yields the body `100%`. When a run is directly followed by `{`
/// and is at least four long, its last `%` opens the next criterion.
pub fn split_utterances(completion: &str) -> (Vec<UtteranceBlock>, Vec<ParseDiagnostic>) {
    let mut blocks = Vec::new();
    let mut diagnostics = Vec::new();
    let bytes = completion.as_bytes();
    let mut segment_start = 0;
    let mut i = 0;

    let push = |text: &str, blocks: &mut Vec<UtteranceBlock>| -> Option<usize> {
        let trimmed = trim_block(text);
        if trimmed.is_empty() {
            return None;
        }
        let ordinal = blocks.len();
        blocks.push(UtteranceBlock {
            raw_text: trimmed.to_string(),
            ordinal,
        });
        Some(ordinal)
    };

    while i < bytes.len() {
        if bytes[i] != b'%' {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < bytes.len() && bytes[i] == b'%' {
            i += 1;
        }
        let mut run_len = i - run_start;
        let mut run_end = i;
        if run_len >= 4 && bytes.get(i) == Some(&b'{') {
            run_len -= 1;
            run_end -= 1;
        }
        let terminators = run_len / 3;
        if terminators == 0 {
            continue;
        }
        // surplus '%' stay attached to the body
        let body_end = run_start + run_len % 3;
        push(&completion[segment_start..body_end], &mut blocks);
        segment_start = run_end;
        i = run_end;
    }

    if segment_start < completion.len() {
        if let Some(ordinal) = push(&completion[segment_start..], &mut blocks) {
            diagnostics.push(ParseDiagnostic::warning(
                DiagnosticCode::MissingTerminator,
                ordinal,
                "trailing text without a terminator",
            ));
        }
    }
    (blocks, diagnostics)
}

/// Strips surrounding whitespace and literal `\n` escapes, which models
/// sometimes copy from the separator shown in the format instructions.
fn trim_block(mut text: &str) -> &str {
    loop {
        let before = text.len();
        text = text.trim();
        text = text.trim_start_matches("\\n").trim_end_matches("\\n");
        if text.len() == before {
            return text;
        }
    }
}

/// Successful parse: the utterance plus any non-fatal warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub utterance: ParsedUtterance,
    pub warnings: Vec<ParseDiagnostic>,
}

/// Parses one block. An `Err` is always an error-severity diagnostic.
pub fn parse_utterance(block: &UtteranceBlock) -> Result<Parsed, ParseDiagnostic> {
    let ordinal = block.ordinal;
    let (speaker_name, role_tag, body) = parse_header(&block.raw_text).ok_or_else(|| {
        ParseDiagnostic::error(
            DiagnosticCode::MissingHeader,
            ordinal,
            "utterance does not start with an @{Name}(role): header",
        )
    })?;

    if speaker_name.trim().eq_ignore_ascii_case(RESERVED_SPEAKER) {
        return Err(ParseDiagnostic::error(
            DiagnosticCode::ReservedSpeaker,
            ordinal,
            format!("speaker name {speaker_name:?} is reserved"),
        ));
    }
    if body.trim().is_empty() {
        return Err(ParseDiagnostic::error(
            DiagnosticCode::EmptyUtterance,
            ordinal,
            format!("{speaker_name} has an empty message"),
        ));
    }

    let mut warnings = Vec::new();
    let (plain_text, spans) = parse_body(body, ordinal, &mut warnings);
    let utterance = ParsedUtterance {
        speaker_name: speaker_name.to_string(),
        role_tag: role_tag.to_string(),
        plain_text,
        spans,
    };
    let words = utterance.word_count();
    if words > WORD_LIMIT {
        warnings.push(ParseDiagnostic::warning(
            DiagnosticCode::OverWordLimit,
            ordinal,
            format!("{words} words exceeds the {WORD_LIMIT}-word limit"),
        ));
    }
    Ok(Parsed {
        utterance,
        warnings,
    })
}

/// `@{Name}(role):` followed by at most one separating space.
fn parse_header(raw: &str) -> Option<(&str, &str, &str)> {
    let rest = raw.strip_prefix("@{")?;
    let close = rest.find(['}', '{'])?;
    if rest.as_bytes()[close] != b'}' {
        return None;
    }
    let name = &rest[..close];
    if name.trim().is_empty() {
        return None;
    }
    let rest = rest[close + 1..].strip_prefix('(')?;
    let role_end = rest.find(')')?;
    let role = &rest[..role_end];
    if role.trim().is_empty() {
        return None;
    }
    let rest = rest[role_end + 1..].strip_prefix(':')?;
    Some((name, role, rest.strip_prefix(' ').unwrap_or(rest)))
}

fn parse_body(
    body: &str,
    ordinal: usize,
    warnings: &mut Vec<ParseDiagnostic>,
) -> (String, Vec<AnnotationSpan>) {
    let chars: Vec<char> = body.chars().collect();
    let mut plain = String::with_capacity(body.len());
    let mut plain_len = 0usize;
    let mut spans = Vec::new();
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i];
        let is_sigil = matches!(c, '%' | '&' | '@' | '+');
        if !is_sigil || chars.get(i + 1) != Some(&'{') {
            plain.push(c);
            plain_len += 1;
            i += 1;
            continue;
        }

        let inner_start = i + 2;
        let close = chars[inner_start..]
            .iter()
            .position(|&ch| ch == '}' || ch == '{')
            .map(|p| p + inner_start)
            .filter(|&p| chars[p] == '}');
        let inner: Option<String> = close.map(|p| chars[inner_start..p].iter().collect());
        let key = inner.as_deref().and_then(|s| normalize_keyword(s).ok());

        match (close, inner, key) {
            (Some(p), Some(inner), Some(key)) => match SpanKind::from_sigil(c) {
                Some(kind) => {
                    let start = plain_len;
                    plain.push_str(&inner);
                    plain_len += p - inner_start;
                    spans.push(AnnotationSpan {
                        kind,
                        display_text: inner,
                        canonical_key: key,
                        start,
                        end: plain_len,
                    });
                    i = p + 1;
                }
                None => {
                    warnings.push(ParseDiagnostic::warning(
                        DiagnosticCode::UnknownSigil,
                        ordinal,
                        format!("'{c}{{{inner}}}' kept as text"),
                    ));
                    for &ch in &chars[i..=p] {
                        plain.push(ch);
                    }
                    plain_len += p + 1 - i;
                    i = p + 1;
                }
            },
            (close, _, _) => {
                let detail = if close.is_some() {
                    format!("empty annotation after '{c}' kept as text")
                } else {
                    format!("'{c}{{' has no matching '}}'; kept as text")
                };
                warnings.push(ParseDiagnostic::warning(
                    DiagnosticCode::UnbalancedBraces,
                    ordinal,
                    detail,
                ));
                plain.push(c);
                plain_len += 1;
                i += 1;
            }
        }
    }
    (plain, spans)
}

/// Every block of a completion, parsed, with all diagnostics in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedCompletion {
    pub utterances: Vec<ParsedUtterance>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl ParsedCompletion {
    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(ParseDiagnostic::is_error)
    }
}

pub fn parse_completion(completion: &str) -> ParsedCompletion {
    let (blocks, mut diagnostics) = split_utterances(completion);
    let mut utterances = Vec::with_capacity(blocks.len());
    for block in &blocks {
        match parse_utterance(block) {
            Ok(parsed) => {
                utterances.push(parsed.utterance);
                diagnostics.extend(parsed.warnings);
            }
            Err(diag) => diagnostics.push(diag),
        }
    }
    diagnostics.sort_by_key(|d| d.ordinal);
    ParsedCompletion {
        utterances,
        diagnostics,
    }
}

/// Inverse of [`parse_utterance`]: header, re-inserted annotations, terminator.
pub fn render_utterance(u: &ParsedUtterance) -> Result<String, AnnotationError> {
    let chars: Vec<char> = u.plain_text.chars().collect();
    let mut out = format!("@{{{}}}({}): ", u.speaker_name, u.role_tag);
    let mut cursor = 0usize;
    for (index, span) in u.spans.iter().enumerate() {
        if span.start < cursor || span.start >= span.end {
            return Err(AnnotationError::OverlappingSpans { index });
        }
        if span.end > chars.len()
            || chars[span.start..span.end].iter().collect::<String>() != span.display_text
        {
            return Err(AnnotationError::InvalidSpan { index });
        }
        out.extend(&chars[cursor..span.start]);
        out.push(span.kind.sigil());
        out.push('{');
        out.push_str(&span.display_text);
        out.push('}');
        cursor = span.end;
    }
    out.extend(&chars[cursor..]);
    out.push_str(TERMINATOR);
    Ok(out)
}
