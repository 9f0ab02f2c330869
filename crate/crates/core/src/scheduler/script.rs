//! Parsing of submission scripts: directive lines plus one payload command.

use std::fs;
use std::path::Path;

use super::{SchedulerError, SchedulerKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedScript {
    pub kind: SchedulerKind,
    /// Directive bodies with the marker removed, in file order.
    pub directives: Vec<String>,
    /// The payload command joined into one logical line.
    pub payload: String,
}

/// Matches a directive marker at line start; the marker must be followed by
/// whitespace or end the line.
fn strip_marker<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    let rest = line.strip_prefix(marker)?;
    if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        Some(rest.trim())
    } else {
        None
    }
}

fn directive(line: &str) -> Option<(SchedulerKind, String)> {
    SchedulerKind::ALL.iter().find_map(|&kind| {
        kind.input_markers()
            .iter()
            .find_map(|m| strip_marker(line, m))
            .map(|body| (kind, body.to_string()))
    })
}

pub fn parse_script_str(text: &str) -> Result<ParsedScript, SchedulerError> {
    let mut kind: Option<SchedulerKind> = None;
    let mut directives = Vec::new();
    let mut payloads: Vec<String> = Vec::new();
    let mut pending: Option<String> = None;

    for raw in text.lines() {
        if let Some(mut acc) = pending.take() {
            let (body, more) = continuation(raw);
            if !acc.is_empty() && !body.is_empty() {
                acc.push(' ');
            }
            acc.push_str(body);
            if more {
                pending = Some(acc);
            } else {
                payloads.push(acc);
            }
            continue;
        }
        if let Some((k, body)) = directive(raw) {
            match kind {
                Some(seen) if seen != k => {
                    return Err(SchedulerError::MixedSchedulers(seen, k));
                }
                _ => kind = Some(k),
            }
            directives.push(body);
            continue;
        }
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (body, more) = continuation(raw);
        if more {
            pending = Some(body.to_string());
        } else {
            payloads.push(body.to_string());
        }
    }
    if let Some(acc) = pending {
        payloads.push(acc);
    }

    let kind = kind.ok_or(SchedulerError::NoDirectives)?;
    match payloads.len() {
        0 => Err(SchedulerError::NoPayload),
        1 => Ok(ParsedScript {
            kind,
            directives,
            payload: payloads.pop().expect("one payload"),
        }),
        n => Err(SchedulerError::MultiplePayloads(n)),
    }
}

/// Splits a physical line into its text and whether it continues.
fn continuation(line: &str) -> (&str, bool) {
    let t = line.trim();
    match t.strip_suffix('\\') {
        Some(body) => (body.trim(), true),
        None => (t, false),
    }
}

pub fn parse_script(path: &Path) -> Result<ParsedScript, SchedulerError> {
    let text = fs::read_to_string(path).map_err(|source| SchedulerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_script_str(&text)
}
