//! Tolerant JSON extraction from free-form model replies.

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct SchemaError {
    pub message: String,
    /// The reply text that failed to yield a conforming object.
    pub raw: String,
}

impl SchemaError {
    pub fn new(message: impl Into<String>, raw: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            raw: raw.into(),
        }
    }
}

/// End (exclusive) of the balanced object starting at `start`, if it closes.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_str = false;
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// First balanced `{...}` span that parses as a JSON object.
fn first_object(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(off) = bytes[from..].iter().position(|&b| b == b'{') {
        let start = from + off;
        match balanced_end(bytes, start) {
            Some(end) => {
                if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&text[start..end]) {
                    return Some(v);
                }
                // a balanced but invalid span is skipped whole
                from = end;
            }
            None => from = start + 1,
        }
    }
    None
}

/// Drops markdown fence lines and commas that directly precede `}` or `]`.
fn repair(text: &str) -> String {
    let unfenced: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n");
    let chars: Vec<char> = unfenced.chars().collect();
    let mut out = String::with_capacity(unfenced.len());
    let mut in_str = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_str = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Returns the first JSON object embedded in `raw`, trying once more after
/// stripping code fences and trailing commas.
pub fn extract_json(raw: &str) -> Result<Value, SchemaError> {
    if let Some(v) = first_object(raw) {
        return Ok(v);
    }
    first_object(&repair(raw)).ok_or_else(|| SchemaError::new("no JSON object found in reply", raw))
}

/// Like [`extract_json`] for arbitrary bytes; invalid UTF-8 is replaced first.
pub fn extract_json_bytes(raw: &[u8]) -> Result<Value, SchemaError> {
    extract_json(&String::from_utf8_lossy(raw))
}
